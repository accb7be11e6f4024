//! The online agent loop: improve the feature map while waiting, observe,
//! re-estimate, plan with the exploration bonus, act.
//!
//! Per step the agent runs a fixed budget of map-improvement proposals on the
//! history so far, appends the new observation (with the action/reward that
//! completed the previous cycle), extends the estimated MDP by the absorbing
//! exploration state, solves it by value iteration warm-started from the
//! previous solution, and returns the greedy action for the current state.

use std::collections::BTreeMap;

use log::debug;
use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::alphabet::{Alphabet, RewardAlphabet};
use crate::coding::CostLedger;
use crate::error::{Error, Result};
use crate::env::Environment;
use crate::feature::{ContextTreeMap, StateId};
use crate::history::History;
use crate::planner::{value_iteration_from, ValueSolution};
use crate::search::{improve_step, SearchCriterion};

/// Discount schedule per step; `n` is the number of observations seen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaSchedule {
    /// γ = 1 - 1/(n+1) counting from n = 0 before the first observation;
    /// equivalently 1 - 1/len(history) once planning starts.
    Harmonic,
    /// A constant discount in [0, 1).
    Fixed(f64),
}

impl GammaSchedule {
    pub fn gamma(&self, num_observations: usize) -> f64 {
        match self {
            GammaSchedule::Harmonic => 1.0 - 1.0 / num_observations.max(1) as f64,
            GammaSchedule::Fixed(g) => *g,
        }
    }
}

impl std::str::FromStr for GammaSchedule {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "default" {
            return Ok(GammaSchedule::Harmonic);
        }
        if let Some(rest) = s.strip_prefix("fixed:") {
            let g: f64 = rest.parse().map_err(|_| format!("bad discount {rest:?}"))?;
            if !(0.0..1.0).contains(&g) {
                return Err(format!("discount {g} outside [0, 1)"));
            }
            return Ok(GammaSchedule::Fixed(g));
        }
        Err(format!("unknown gamma schedule {s:?} (use default|fixed:<g>)"))
    }
}

/// Agent configuration.
#[derive(Debug, Clone)]
pub struct AgentConfig {
    /// Map-improvement proposals per step (the "while waiting" budget).
    pub improve_iters_per_step: usize,
    pub gamma_schedule: GammaSchedule,
    /// Coefficient of the exploration bonus
    /// `R_max_e = coeff · (1-γ)⁻¹ · |S×A| · max R`; 0 disables the bonus
    /// (phantom transitions stay, their reward is 0).
    pub rmax_poly_coeff: f64,
    pub seed: u64,
    pub criterion: SearchCriterion,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            improve_iters_per_step: 10,
            gamma_schedule: GammaSchedule::Harmonic,
            rmax_poly_coeff: 1.0,
            seed: 0,
            criterion: SearchCriterion::Cost,
        }
    }
}

impl AgentConfig {
    fn validate(&self) -> Result<()> {
        if !self.rmax_poly_coeff.is_finite() || self.rmax_poly_coeff < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "rmax_poly_coeff {} must be a finite non-negative number",
                self.rmax_poly_coeff
            )));
        }
        if let GammaSchedule::Fixed(g) = self.gamma_schedule {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::InvalidConfig(format!("fixed discount {g} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Per-step planning caps. The tolerance scales with the value magnitude so
/// harmonic-discount runs (values grow with n) stay affordable; results are
/// used greedily, so an unconverged sweep cap degrades gracefully.
const PLAN_TOL: f64 = 1e-6;
const PLAN_MAX_ITER: usize = 10_000;

/// The online agent: owns the history, the current feature map (with its
/// incremental cost state) and the warm-start values.
pub struct Agent {
    config: AgentConfig,
    actions: Alphabet,
    rewards: RewardAlphabet,
    history: History,
    ledger: CostLedger,
    rng: StdRng,
    pending_action: Option<usize>,
    prev_values: BTreeMap<StateId, f64>,
    last_gamma: f64,
    last_rmax: f64,
    last_states: usize,
    last_solution: Option<ValueSolution>,
}

impl Agent {
    pub fn new(
        observations: &Alphabet,
        actions: &Alphabet,
        rewards: &RewardAlphabet,
        config: AgentConfig,
    ) -> Result<Self> {
        config.validate()?;
        let phi = ContextTreeMap::root(observations.size());
        Ok(Agent {
            actions: actions.clone(),
            rewards: rewards.clone(),
            history: History::for_alphabets(observations, actions, rewards),
            ledger: CostLedger::empty(phi, actions.size(), rewards.size()),
            rng: StdRng::seed_from_u64(config.seed),
            config,
            pending_action: None,
            prev_values: BTreeMap::new(),
            last_gamma: 0.0,
            last_rmax: 0.0,
            last_states: 0,
            last_solution: None,
        })
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn phi(&self) -> &ContextTreeMap {
        self.ledger.phi()
    }

    pub fn cost_bits(&self) -> f64 {
        self.ledger.cost().total()
    }

    /// Discount used by the most recent planning step.
    pub fn gamma(&self) -> f64 {
        self.last_gamma
    }

    /// Exploration bonus used by the most recent planning step.
    pub fn rmax_e(&self) -> f64 {
        self.last_rmax
    }

    /// Realized states at the most recent planning step (without the
    /// exploration state).
    pub fn state_count(&self) -> usize {
        self.last_states
    }

    pub fn last_solution(&self) -> Option<&ValueSolution> {
        self.last_solution.as_ref()
    }

    /// Feeds the next observation (with the reward that completed the
    /// previous cycle) and returns the next action.
    ///
    /// `reward_prev` must be `None` exactly on the first call.
    pub fn step(&mut self, obs: usize, reward_prev: Option<usize>) -> Result<usize> {
        // Improve Φ against the history so far, before the new observation.
        if !self.history.is_empty() {
            for _ in 0..self.config.improve_iters_per_step {
                improve_step(&mut self.ledger, self.config.criterion, &mut self.rng)?;
            }
        }

        match (self.pending_action, reward_prev) {
            (None, None) => {
                self.history.push_first(obs)?;
                self.ledger.push_step(0, 0, obs);
            }
            (Some(a), Some(r)) => {
                self.history.push(a, r, obs)?;
                self.ledger.push_step(a, r, obs);
            }
            (None, Some(_)) => {
                return Err(Error::InvalidConfig("reward before any action".into()));
            }
            (Some(_), None) => {
                return Err(Error::InvalidConfig("missing reward for the previous action".into()));
            }
        }

        let current = self
            .ledger
            .current_state()
            .cloned()
            .ok_or_else(|| Error::Internal("no current state after push".into()))?;

        let n = self.history.len();
        let gamma = self.config.gamma_schedule.gamma(n);
        let tensor = self.ledger.tensor();
        let mut num_states = tensor.num_realized_states();
        if tensor.index_of(&current).map_or(true, |i| !tensor.realized_states().contains(&i)) {
            num_states += 1;
        }
        let rmax_e = self.config.rmax_poly_coeff
            * (1.0 / (1.0 - gamma))
            * (num_states * self.actions.size()) as f64
            * self.rewards.max_value();
        let mdp = tensor.extend_for_exploration(
            rmax_e,
            gamma,
            &self.rewards,
            std::slice::from_ref(&current),
        );

        let v0: Vec<f64> = mdp
            .states()
            .iter()
            .map(|s| self.prev_values.get(s).copied().unwrap_or(0.0))
            .collect();
        let tol = PLAN_TOL * (rmax_e.abs() / (1.0 - gamma)).max(1.0);
        let solution = value_iteration_from(&mdp, v0, tol, PLAN_MAX_ITER)?;
        self.prev_values = mdp
            .states()
            .iter()
            .zip(solution.values())
            .map(|(s, &v)| (s.clone(), v))
            .collect();

        let action = solution.greedy_action(&current)?;
        debug!(
            "n={n} state={current} gamma={gamma:.4} rmax={rmax_e:.2} |S|={num_states} -> action {action}"
        );
        self.last_gamma = gamma;
        self.last_rmax = rmax_e;
        self.last_states = num_states;
        self.last_solution = Some(solution);
        self.pending_action = Some(action);
        Ok(action)
    }
}

/// One completed interaction cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepRecord {
    /// 1-based step index.
    pub t: usize,
    /// Observation the agent acted from.
    pub o: usize,
    pub a: usize,
    /// Reward delivered after the action (with the next observation).
    pub r: usize,
}

/// Per-step metrics snapshot, aligned with the step of the same index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub n: usize,
    pub avg_reward_window: f64,
    pub states: usize,
    pub cost_bits: f64,
    pub gamma: f64,
    pub rmax_e: f64,
}

/// A full episode: steps, metrics, and the final map.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub observations: Alphabet,
    pub actions: Alphabet,
    pub rewards: RewardAlphabet,
    pub steps: Vec<StepRecord>,
    pub metrics: Vec<MetricsRow>,
    pub final_phi: ContextTreeMap,
    pub final_state_count: usize,
}

/// Trailing window length for the metrics' running reward average.
const REWARD_WINDOW: usize = 100;

impl EpisodeRecord {
    /// Mean reward value over 1-based steps `from..=to` (clamped to range).
    pub fn average_reward(&self, from: usize, to: usize) -> f64 {
        let lo = from.max(1);
        let hi = to.min(self.steps.len());
        if hi < lo {
            return 0.0;
        }
        let sum: f64 =
            self.steps[lo - 1..hi].iter().map(|s| self.rewards.value(s.r)).sum();
        sum / (hi - lo + 1) as f64
    }

    /// Trace CSV: header plus one complete `t,o,a,r` row per step.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("t,o,a,r\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s.t,
                self.observations.label(s.o),
                self.actions.label(s.a),
                self.rewards.label(s.r)
            ));
        }
        out
    }

    /// Metrics CSV with the layout `n,avg_reward_window,states,cost_bits,gamma,Rmax_e`.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("n,avg_reward_window,states,cost_bits,gamma,Rmax_e\n");
        for m in &self.metrics {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.n, m.avg_reward_window, m.states, m.cost_bits, m.gamma, m.rmax_e
            ));
        }
        out
    }
}

/// Runs the observe → improve → plan → act → reward cycle for `steps`
/// actions against a freshly reset environment.
pub fn run_episode(
    env: &mut dyn Environment,
    steps: usize,
    config: &AgentConfig,
) -> Result<EpisodeRecord> {
    if steps == 0 {
        return Err(Error::InvalidConfig("steps must be at least 1".into()));
    }
    let mut agent = Agent::new(env.observations(), env.actions(), env.rewards(), config.clone())?;
    let mut records = Vec::with_capacity(steps);
    let mut metrics = Vec::with_capacity(steps);
    let mut window: Vec<f64> = Vec::with_capacity(REWARD_WINDOW);

    let mut o_cur = env.reset();
    let mut action = agent.step(o_cur, None)?;
    for t in 1..=steps {
        let (o_next, r) = env.step(action)?;
        records.push(StepRecord { t, o: o_cur, a: action, r });
        if window.len() == REWARD_WINDOW {
            window.remove(0);
        }
        window.push(env.rewards().value(r));
        metrics.push(MetricsRow {
            n: t,
            avg_reward_window: window.iter().sum::<f64>() / window.len() as f64,
            states: agent.state_count(),
            cost_bits: agent.cost_bits(),
            gamma: agent.gamma(),
            rmax_e: agent.rmax_e(),
        });
        if t < steps {
            o_cur = o_next;
            action = agent.step(o_next, Some(r))?;
        }
    }
    Ok(EpisodeRecord {
        observations: env.observations().clone(),
        actions: env.actions().clone(),
        rewards: env.rewards().clone(),
        steps: records,
        metrics,
        final_state_count: agent.state_count(),
        final_phi: agent.phi().clone(),
    })
}
