//! Stochastic feature-map optimization over context trees.
//!
//! One improvement step draws a uniform member of the suffix set and two
//! uniform numbers p, q: p > 1/2 proposes a split, otherwise the merge at the
//! drawn member's parent when all siblings are present. The proposal is
//! accepted iff the cost drop exceeds log₂ q, i.e. a Δ-bit worsening survives
//! with probability 2^Δ. There is no cooling schedule; the driver tracks the
//! best map seen instead.

use log::debug;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::coding::CostLedger;
use crate::error::Result;
use crate::feature::{ContextTreeMap, TreeMove};
use crate::history::History;
use crate::icost::PenaltyMode;

/// Objective minimized by the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchCriterion {
    Cost,
    ICost,
}

impl std::str::FromStr for SearchCriterion {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cost" => Ok(SearchCriterion::Cost),
            "icost" => Ok(SearchCriterion::ICost),
            other => Err(format!("unknown criterion {other:?} (use cost|icost)")),
        }
    }
}

/// Batch search configuration.
#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub iterations: usize,
    pub criterion: SearchCriterion,
    pub seed: u64,
    /// Keep every k-th log row (the incumbent trace keeps all accepts).
    pub log_every: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { iterations: 1000, criterion: SearchCriterion::Cost, seed: 0, log_every: 1 }
    }
}

/// One row of the per-iteration search log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchStep {
    pub iter: usize,
    pub cost: f64,
    pub accepted: bool,
}

/// Outcome of an annealing run: the best map seen, the final chain state,
/// and the log.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub incumbent: ContextTreeMap,
    pub incumbent_cost: f64,
    pub final_map: ContextTreeMap,
    pub final_cost: f64,
    pub log: Vec<SearchStep>,
}

/// The Metropolis test with binary-log exponent: a proposal improving by
/// `delta_bits` (negative = worse) is accepted iff `delta_bits > log₂ q` for
/// uniform q in (0, 1].
pub fn metropolis_accept<R: Rng + ?Sized>(delta_bits: f64, rng: &mut R) -> bool {
    let q: f64 = 1.0 - rng.gen::<f64>();
    delta_bits > q.log2()
}

/// True when two state sequences induce the same partition of time steps,
/// i.e. they are equal up to a relabeling bijection.
pub fn equivalent_partitions(a: &[crate::feature::StateId], b: &[crate::feature::StateId]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd: std::collections::HashMap<&crate::feature::StateId, &crate::feature::StateId> =
        std::collections::HashMap::new();
    let mut bwd: std::collections::HashMap<&crate::feature::StateId, &crate::feature::StateId> =
        std::collections::HashMap::new();
    for (x, y) in a.iter().zip(b) {
        if *fwd.entry(x).or_insert(y) != y || *bwd.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

fn objective(ledger: &CostLedger, criterion: SearchCriterion) -> Result<f64> {
    match criterion {
        SearchCriterion::Cost => Ok(ledger.cost().total()),
        SearchCriterion::ICost => Ok(ledger.icost(PenaltyMode::Observed)?.total()),
    }
}

/// One ΦImprove step on a live ledger. Returns (objective after the step,
/// accepted flag). Draw order per step: member index, p, q.
pub fn improve_step(
    ledger: &mut CostLedger,
    criterion: SearchCriterion,
    rng: &mut StdRng,
) -> Result<(f64, bool)> {
    let mv = ledger.phi().propose(rng);
    let q: f64 = 1.0 - rng.gen::<f64>();
    let before = objective(ledger, criterion)?;
    if matches!(mv, TreeMove::Stay) {
        // Cost difference is zero; the "accepted" set is the unchanged one.
        return Ok((before, 0.0 > q.log2()));
    }
    ledger.apply_move(&mv)?;
    let after = objective(ledger, criterion)?;
    let accepted = (before - after) > q.log2();
    if accepted {
        Ok((after, true))
    } else {
        ledger.revert_move(&mv);
        Ok((before, false))
    }
}

/// One ΦImprove step as a pure map-to-map operation.
pub fn phi_improve(
    phi: &ContextTreeMap,
    h: &History,
    criterion: SearchCriterion,
    rng: &mut StdRng,
) -> Result<ContextTreeMap> {
    let mut ledger = CostLedger::new(phi.clone(), h);
    improve_step(&mut ledger, criterion, rng)?;
    Ok(ledger.phi().clone())
}

/// Runs `cfg.iterations` improvement steps from `phi0`, tracking the
/// lowest-objective map seen. Deterministic for a fixed seed and inputs.
pub fn anneal(phi0: &ContextTreeMap, h: &History, cfg: &SearchConfig) -> Result<SearchOutcome> {
    let mut ledger = CostLedger::new(phi0.clone(), h);
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut incumbent = ledger.phi().clone();
    let mut incumbent_cost = objective(&ledger, cfg.criterion)?;
    let mut log = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let (cost, accepted) = improve_step(&mut ledger, cfg.criterion, &mut rng)?;
        if cost < incumbent_cost {
            incumbent_cost = cost;
            incumbent = ledger.phi().clone();
        }
        log.push(SearchStep { iter, cost, accepted });
        if iter % 200 == 0 {
            debug!("anneal iter {iter}: cost {cost:.3}, |S| = {}", ledger.phi().len());
        }
    }
    let final_cost = objective(&ledger, cfg.criterion)?;
    Ok(SearchOutcome {
        incumbent,
        incumbent_cost,
        final_map: ledger.phi().clone(),
        final_cost,
        log,
    })
}
