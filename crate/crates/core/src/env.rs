//! Pluggable finite environments.
//!
//! The interaction contract mirrors the agent cycle: `reset` emits the first
//! observation; `step(a)` applies an action and returns the next observation
//! together with the reward delivered alongside it. Environments own a
//! seeded generator, so the output sequence is a deterministic function of
//! the seed and the action sequence.

use std::collections::BTreeMap;
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::alphabet::{Alphabet, RewardAlphabet};
use crate::error::{Error, Result};

/// A finite environment the agent loop can drive.
pub trait Environment {
    fn observations(&self) -> &Alphabet;
    fn actions(&self) -> &Alphabet;
    fn rewards(&self) -> &RewardAlphabet;

    /// Re-initializes the internal state and emits the first observation.
    fn reset(&mut self) -> usize;

    /// Applies an action; returns `(observation, reward)` — the next
    /// observation and the reward index delivered with it.
    fn step(&mut self, action: usize) -> Result<(usize, usize)>;
}

/// Coin-flip environment: binary observations drawn fair, quaternary reward
/// equal to twice the previous observation plus the new one, single action.
#[derive(Debug, Clone)]
pub struct TinyExampleEnv {
    observations: Alphabet,
    actions: Alphabet,
    rewards: RewardAlphabet,
    seed: u64,
    rng: StdRng,
    prev: usize,
}

impl TinyExampleEnv {
    pub fn new(seed: u64) -> Self {
        TinyExampleEnv {
            observations: Alphabet::binary(),
            actions: Alphabet::new(["0"]).expect("static labels"),
            rewards: RewardAlphabet::from_numeric_labels(["0", "1", "2", "3"])
                .expect("static labels"),
            seed,
            rng: StdRng::seed_from_u64(seed),
            prev: 0,
        }
    }

    fn draw(&mut self) -> (usize, usize) {
        let o: usize = usize::from(self.rng.gen_bool(0.5));
        let r = 2 * self.prev + o;
        debug_assert!(r < 4);
        self.prev = o;
        (o, r)
    }
}

impl Environment for TinyExampleEnv {
    fn observations(&self) -> &Alphabet {
        &self.observations
    }

    fn actions(&self) -> &Alphabet {
        &self.actions
    }

    fn rewards(&self) -> &RewardAlphabet {
        &self.rewards
    }

    fn reset(&mut self) -> usize {
        self.rng = StdRng::seed_from_u64(self.seed);
        // The observation before time 1 is fixed to 0; the reward drawn with
        // the first observation has no preceding action and is discarded.
        self.prev = 0;
        let (o, _r) = self.draw();
        o
    }

    fn step(&mut self, action: usize) -> Result<(usize, usize)> {
        if action != 0 {
            return Err(Error::InvalidAction(action));
        }
        Ok(self.draw())
    }
}

/// Hidden-state tabular environment loaded from a file or built in code:
/// per (state, action) a next-state distribution, a state → observation map,
/// and a deterministic reward per (state, action, next state).
#[derive(Debug, Clone)]
pub struct TabularEnv {
    observations: Alphabet,
    actions: Alphabet,
    rewards: RewardAlphabet,
    state_labels: Vec<String>,
    /// Cumulative distribution per (state, action).
    trans: Vec<Vec<(f64, usize)>>,
    obs_map: Vec<usize>,
    /// Reward index per (state, action, next state).
    reward_map: BTreeMap<(usize, usize, usize), usize>,
    seed: u64,
    rng: StdRng,
    cur: usize,
}

impl TabularEnv {
    /// Builds and validates an environment from raw tables. `transitions`
    /// holds `(state, action, next_state, prob)`; `obs` maps each state to an
    /// observation label; `rewards` gives `(state, action, next_state)` a
    /// numeric reward label.
    pub fn from_tables(
        states: Vec<String>,
        transitions: Vec<(usize, usize, usize, f64)>,
        action_labels: Vec<String>,
        obs: Vec<String>,
        rewards: Vec<(usize, usize, usize, String)>,
        seed: u64,
    ) -> Result<Self> {
        let n = states.len();
        if n == 0 {
            return Err(Error::InvalidEnvironment("no states".into()));
        }
        if obs.len() != n {
            return Err(Error::InvalidEnvironment("observation map is not total".into()));
        }
        let actions = Alphabet::new(action_labels)?;
        let mut obs_labels: Vec<String> = obs.clone();
        obs_labels.sort();
        obs_labels.dedup();
        let observations = Alphabet::new(obs_labels)?;
        let obs_map: Vec<usize> =
            obs.iter().map(|l| observations.index_of(l).expect("collected above")).collect();

        let mut reward_labels: Vec<String> = rewards.iter().map(|r| r.3.clone()).collect();
        reward_labels.sort_by(|a, b| {
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(y)) => x.partial_cmp(&y).unwrap().then_with(|| a.cmp(b)),
                _ => a.cmp(b),
            }
        });
        reward_labels.dedup();
        if reward_labels.is_empty() {
            return Err(Error::InvalidEnvironment("no rewards declared".into()));
        }
        let reward_alpha = RewardAlphabet::from_numeric_labels(reward_labels)?;

        let mut matrix = vec![vec![0.0f64; n]; n * actions.size()];
        for &(s, a, d, p) in &transitions {
            if s >= n || d >= n || a >= actions.size() {
                return Err(Error::InvalidEnvironment(format!(
                    "transition ({s},{a},{d}) out of range"
                )));
            }
            if !(0.0..=1.0 + 1e-9).contains(&p) {
                return Err(Error::InvalidEnvironment(format!("probability {p} out of range")));
            }
            matrix[s * actions.size() + a][d] += p;
        }
        let mut reward_map = BTreeMap::new();
        for (s, a, d, label) in &rewards {
            let idx = reward_alpha
                .index_of(label)
                .ok_or_else(|| Error::InvalidEnvironment(format!("unknown reward {label:?}")))?;
            reward_map.insert((*s, *a, *d), idx);
        }

        let mut trans = Vec::with_capacity(n * actions.size());
        for s in 0..n {
            for a in 0..actions.size() {
                let row = &matrix[s * actions.size() + a];
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidEnvironment(format!(
                        "row for state {:?}, action {} sums to {total}",
                        states[s],
                        actions.label(a)
                    )));
                }
                let mut cum = 0.0;
                let mut cdf = Vec::new();
                for (d, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        cum += p;
                        cdf.push((cum, d));
                        if !reward_map.contains_key(&(s, a, d)) {
                            return Err(Error::InvalidEnvironment(format!(
                                "no reward for reachable transition ({:?}, {}, {:?})",
                                states[s],
                                actions.label(a),
                                states[d]
                            )));
                        }
                    }
                }
                cdf.last_mut().expect("row sums to 1").0 = 1.0;
                trans.push(cdf);
            }
        }

        Ok(TabularEnv {
            observations,
            actions,
            rewards: reward_alpha,
            state_labels: states,
            trans,
            obs_map,
            reward_map,
            seed,
            rng: StdRng::seed_from_u64(seed),
            cur: 0,
        })
    }

    /// Parses the sectioned plain-text format:
    ///
    /// ```text
    /// [states]      one hidden state label per line, first = start state
    /// [transitions] s,a,s',prob
    /// [obs]         s,o
    /// [rewards]     s,a,s',r
    /// ```
    pub fn from_str(text: &str, seed: u64) -> Result<Self> {
        #[derive(PartialEq, Clone, Copy)]
        enum Section {
            None,
            States,
            Transitions,
            Obs,
            Rewards,
        }
        let mut section = Section::None;
        let mut states: Vec<String> = Vec::new();
        let mut action_labels: Vec<String> = Vec::new();
        let mut raw_trans: Vec<(usize, String, String, String, f64)> = Vec::new();
        let mut raw_obs: Vec<(usize, String, String)> = Vec::new();
        let mut raw_rewards: Vec<(usize, String, String, String, String)> = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[states]" => section = Section::States,
                "[transitions]" => section = Section::Transitions,
                "[obs]" => section = Section::Obs,
                "[rewards]" => section = Section::Rewards,
                _ => {
                    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
                    match section {
                        Section::None => {
                            return Err(Error::parse(lineno, "content before any section header"))
                        }
                        Section::States => states.push(line.to_string()),
                        Section::Transitions => {
                            if fields.len() != 4 {
                                return Err(Error::parse(lineno, "expected s,a,s',prob"));
                            }
                            let p: f64 = fields[3].parse().map_err(|_| {
                                Error::parse(lineno, format!("bad probability {:?}", fields[3]))
                            })?;
                            if !action_labels.iter().any(|a| a == fields[1]) {
                                action_labels.push(fields[1].to_string());
                            }
                            raw_trans.push((
                                lineno,
                                fields[0].to_string(),
                                fields[1].to_string(),
                                fields[2].to_string(),
                                p,
                            ));
                        }
                        Section::Obs => {
                            if fields.len() != 2 {
                                return Err(Error::parse(lineno, "expected s,o"));
                            }
                            raw_obs.push((lineno, fields[0].to_string(), fields[1].to_string()));
                        }
                        Section::Rewards => {
                            if fields.len() != 4 {
                                return Err(Error::parse(lineno, "expected s,a,s',r"));
                            }
                            raw_rewards.push((
                                lineno,
                                fields[0].to_string(),
                                fields[1].to_string(),
                                fields[2].to_string(),
                                fields[3].to_string(),
                            ));
                        }
                    }
                }
            }
        }

        if states.is_empty() {
            return Err(Error::InvalidEnvironment("no [states] section".into()));
        }
        action_labels.sort();
        let state_idx = |lineno: usize, label: &str| -> Result<usize> {
            states
                .iter()
                .position(|s| s == label)
                .ok_or_else(|| Error::parse(lineno, format!("unknown state {label:?}")))
        };
        let action_idx = |label: &str| -> usize {
            action_labels.iter().position(|a| a == label).expect("collected above")
        };

        let mut transitions = Vec::new();
        for (lineno, s, a, d, p) in &raw_trans {
            transitions.push((state_idx(*lineno, s)?, action_idx(a), state_idx(*lineno, d)?, *p));
        }
        let mut obs = vec![None; states.len()];
        for (lineno, s, o) in &raw_obs {
            obs[state_idx(*lineno, s)?] = Some(o.clone());
        }
        let obs: Vec<String> = obs
            .into_iter()
            .enumerate()
            .map(|(i, o)| {
                o.ok_or_else(|| {
                    Error::InvalidEnvironment(format!("state {:?} has no observation", states[i]))
                })
            })
            .collect::<Result<_>>()?;
        let mut rewards = Vec::new();
        for (lineno, s, a, d, r) in &raw_rewards {
            rewards.push((state_idx(*lineno, s)?, action_idx(a), state_idx(*lineno, d)?, r.clone()));
        }
        TabularEnv::from_tables(states, transitions, action_labels, obs, rewards, seed)
    }

    pub fn from_file(path: &Path, seed: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        TabularEnv::from_str(&text, seed)
    }

    pub fn state_labels(&self) -> &[String] {
        &self.state_labels
    }

    /// Two-arm bandit: one observable situation, hidden win/lose outcome
    /// states, `P(win | arm i) = p[i]`, reward 1 on win and 0 on lose.
    pub fn bandit_two_arm(p0: f64, p1: f64, seed: u64) -> Self {
        let states = vec!["lose".to_string(), "win".to_string()];
        let mut transitions = Vec::new();
        for s in 0..2 {
            for (a, p) in [(0usize, p0), (1, p1)] {
                transitions.push((s, a, 1, p));
                transitions.push((s, a, 0, 1.0 - p));
            }
        }
        let mut rewards = Vec::new();
        for s in 0..2 {
            for a in 0..2 {
                rewards.push((s, a, 1, "1".to_string()));
                rewards.push((s, a, 0, "0".to_string()));
            }
        }
        TabularEnv::from_tables(
            states,
            transitions,
            vec!["0".to_string(), "1".to_string()],
            vec!["x".to_string(), "x".to_string()],
            rewards,
            seed,
        )
        .expect("static fixture")
    }

    /// Chain of `len` states with the only reward on entering the far end:
    /// action 1 moves forward (the end wraps to the start), action 0 moves
    /// back. Observations identify the state.
    pub fn chain(len: usize, seed: u64) -> Self {
        assert!(len >= 2);
        let states: Vec<String> = (1..=len).map(|i| i.to_string()).collect();
        let mut transitions = Vec::new();
        let mut rewards = Vec::new();
        for s in 0..len {
            let fwd = if s + 1 < len { s + 1 } else { 0 };
            let back = s.saturating_sub(1);
            transitions.push((s, 1, fwd, 1.0));
            transitions.push((s, 0, back, 1.0));
            rewards.push((s, 1, fwd, if fwd == len - 1 { "1" } else { "0" }.to_string()));
            rewards.push((s, 0, back, "0".to_string()));
        }
        TabularEnv::from_tables(
            states.clone(),
            transitions,
            vec!["0".to_string(), "1".to_string()],
            states,
            rewards,
            seed,
        )
        .expect("static fixture")
    }
}

impl Environment for TabularEnv {
    fn observations(&self) -> &Alphabet {
        &self.observations
    }

    fn actions(&self) -> &Alphabet {
        &self.actions
    }

    fn rewards(&self) -> &RewardAlphabet {
        &self.rewards
    }

    fn reset(&mut self) -> usize {
        self.rng = StdRng::seed_from_u64(self.seed);
        self.cur = 0;
        self.obs_map[self.cur]
    }

    fn step(&mut self, action: usize) -> Result<(usize, usize)> {
        if action >= self.actions.size() {
            return Err(Error::InvalidAction(action));
        }
        let cdf = &self.trans[self.cur * self.actions.size() + action];
        let u: f64 = self.rng.gen();
        let mut next = cdf.last().expect("validated non-empty").1;
        for &(cum, d) in cdf {
            if u < cum {
                next = d;
                break;
            }
        }
        let r = self.reward_map[&(self.cur, action, next)];
        self.cur = next;
        Ok((self.obs_map[next], r))
    }
}
