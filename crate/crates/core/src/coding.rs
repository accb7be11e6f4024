//! Code lengths and the Cost selection criterion.
//!
//! `code_length` is the optimal i.i.d. code for a count vector:
//! `n·H(n/n₊) + (m'-1)/2·log₂ n₊` bits, where `m'` counts the non-empty
//! categories so that transitions that never occur cost nothing. The Cost of
//! a feature map is the state code (one i.i.d. block per realized (s, a))
//! plus the reward code (one block per destination state). No bitstream is
//! ever emitted; costs are real-valued bit counts used purely for selection.

use std::collections::BTreeMap;

use crate::counts::CountTensor;
use crate::error::{Error, Result};
use crate::feature::{ContextTreeMap, FeatureMap, StateId, TreeMove};
use crate::history::History;
use crate::icost::{parameter_count, ICostResult, PenaltyMode, UFamily};

/// Cost of a feature map, split into its two code components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub state_bits: f64,
    pub reward_bits: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.state_bits + self.reward_bits
    }
}

/// Optimal i.i.d. code length in bits for a vector of category counts.
///
/// Zero when the vector is empty or all mass sits in one category.
pub fn code_length_counts<I>(counts: I) -> f64
where
    I: IntoIterator<Item = u64>,
{
    let mut total = 0u64;
    let mut nonzero = 0usize;
    let mut sum_c_log_c = 0.0f64;
    for c in counts {
        if c == 0 {
            continue;
        }
        total += c;
        nonzero += 1;
        sum_c_log_c += c as f64 * (c as f64).log2();
    }
    if total == 0 {
        return 0.0;
    }
    let log_n = (total as f64).log2();
    let entropy_bits = total as f64 * log_n - sum_c_log_c;
    entropy_bits + 0.5 * (nonzero as f64 - 1.0) * log_n
}

/// Slice-friendly wrapper over [`code_length_counts`].
pub fn code_length(counts: &[u64]) -> f64 {
    code_length_counts(counts.iter().copied())
}

/// State code: sum over realized (s, a) of the code length of that row's
/// destination count vector.
pub fn state_code(counts: &CountTensor) -> f64 {
    counts
        .rows()
        .map(|(_, dests)| code_length_counts(dests.values().copied()))
        .sum()
}

/// Reward code: sum over destination states of the code length of the reward
/// counts aggregated over sources and actions.
pub fn reward_code(counts: &CountTensor) -> f64 {
    counts
        .reward_vectors()
        .map(|(_, rs)| code_length_counts(rs.values().copied()))
        .sum()
}

/// Cost of `phi` on `h`: recomputes the states on growing prefixes,
/// accumulates counts, and sums the two codes.
pub fn cost(phi: &FeatureMap, h: &History) -> CostBreakdown {
    let tensor = CountTensor::from_history(phi, h);
    CostBreakdown { state_bits: state_code(&tensor), reward_bits: reward_code(&tensor) }
}

/// Minimal-cost candidate; ties broken by fewer realized states, then input
/// order.
pub fn best_phi<'a>(candidates: &'a [FeatureMap], h: &History) -> Result<&'a FeatureMap> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut best: Option<(&FeatureMap, f64, usize)> = None;
    for phi in candidates {
        let tensor = CountTensor::from_history(phi, h);
        let total = state_code(&tensor) + reward_code(&tensor);
        let states = tensor.num_realized_states();
        let better = match best {
            None => true,
            Some((_, bt, bs)) => total < bt || (total == bt && states < bs),
        };
        if better {
            best = Some((phi, total, states));
        }
    }
    Ok(best.expect("candidates non-empty").0)
}

/// Incremental cost evaluator for a context-tree map over a fixed (but
/// extendable) history.
///
/// Keeps the realized state sequence, per-state occurrence sets, the count
/// tensor and per-block code lengths. A split or merge re-partitions only the
/// affected contexts' occurrences, so proposal evaluation costs
/// O(occurrences · depth) instead of O(n). Correctness is pinned to equality
/// with full recomputation in tests.
#[derive(Debug, Clone)]
pub struct CostLedger {
    phi: ContextTreeMap,
    obs: Vec<usize>,
    actions: Vec<usize>,
    rewards: Vec<usize>,
    /// Tensor state index of s_t, per 0-based time.
    seq: Vec<usize>,
    /// Occurrence times per tensor state index.
    occ: Vec<std::collections::BTreeSet<usize>>,
    tensor: CountTensor,
    /// Code length per realized (s, a) row.
    state_blocks: BTreeMap<(usize, usize), f64>,
    /// Code length per realized destination.
    reward_blocks: BTreeMap<usize, f64>,
}

impl CostLedger {
    pub fn new(phi: ContextTreeMap, h: &History) -> Self {
        let mut ledger = CostLedger {
            phi,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            seq: Vec::new(),
            occ: Vec::new(),
            tensor: CountTensor::new(h.action_size(), h.reward_size()),
            state_blocks: BTreeMap::new(),
            reward_blocks: BTreeMap::new(),
        };
        for t in 0..h.len() {
            let (a, r) = if t == 0 {
                (0, 0)
            } else {
                (h.actions()[t - 1], h.rewards()[t - 1])
            };
            ledger.push_step(a, r, h.observations()[t]);
        }
        ledger
    }

    /// Empty ledger awaiting its first observation.
    pub fn empty(phi: ContextTreeMap, num_actions: usize, num_rewards: usize) -> Self {
        CostLedger {
            phi,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            seq: Vec::new(),
            occ: Vec::new(),
            tensor: CountTensor::new(num_actions, num_rewards),
            state_blocks: BTreeMap::new(),
            reward_blocks: BTreeMap::new(),
        }
    }

    pub fn phi(&self) -> &ContextTreeMap {
        &self.phi
    }

    pub fn tensor(&self) -> &CountTensor {
        &self.tensor
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Current state `Φ(h_n)`, if any observation has been seen.
    pub fn current_state(&self) -> Option<&StateId> {
        self.seq.last().map(|&i| self.tensor.state_id(i))
    }

    pub fn state_sequence(&self) -> impl Iterator<Item = &StateId> {
        self.seq.iter().map(|&i| self.tensor.state_id(i))
    }

    pub fn cost(&self) -> CostBreakdown {
        CostBreakdown {
            state_bits: self.state_blocks.values().sum(),
            reward_bits: self.reward_blocks.values().sum(),
        }
    }

    /// ICost of the current map on the current history.
    pub fn icost(&self, mode: PenaltyMode) -> Result<ICostResult> {
        if self.tensor.total() == 0 {
            let m_params = parameter_count(&self.tensor, mode);
            return Ok(ICostResult {
                neg_log_likelihood: 0.0,
                parameter_penalty: 0.0,
                m_params,
            });
        }
        let (family, dense) = UFamily::from_tensor(&self.tensor)?;
        let s0 = dense[self.seq[0]]
            .ok_or_else(|| Error::Internal("initial state not realized".into()))?;
        let nll = family.neg_log2_likelihood(s0, &self.actions[1..], &self.rewards[1..])?;
        let m_params = parameter_count(&self.tensor, mode);
        let penalty = 0.5 * m_params as f64 * (self.obs.len() as f64).log2();
        Ok(ICostResult { neg_log_likelihood: nll, parameter_penalty: penalty, m_params })
    }

    /// Appends one cycle. For the very first observation the action/reward
    /// arguments are ignored (there is no prior step).
    pub fn push_step(&mut self, a: usize, r: usize, o: usize) {
        self.obs.push(o);
        self.actions.push(a);
        self.rewards.push(r);
        let t = self.obs.len() - 1;
        let state = self.phi.apply_to_obs(&self.obs);
        let idx = self.tensor.intern(&state);
        if idx == self.occ.len() {
            self.occ.push(Default::default());
        }
        self.seq.push(idx);
        self.occ[idx].insert(t);
        if t > 0 {
            self.tensor.record_idx(self.seq[t - 1], a, idx, r);
            self.refresh_row(self.seq[t - 1], a);
            self.refresh_dest(idx);
        }
    }

    fn refresh_row(&mut self, s: usize, a: usize) {
        match self.tensor.row(s, a) {
            Some(dests) => {
                let cl = code_length_counts(dests.values().copied());
                self.state_blocks.insert((s, a), cl);
            }
            None => {
                self.state_blocks.remove(&(s, a));
            }
        }
    }

    fn refresh_dest(&mut self, d: usize) {
        match self.tensor.reward_vector(d) {
            Some(rs) => {
                let cl = code_length_counts(rs.values().copied());
                self.reward_blocks.insert(d, cl);
            }
            None => {
                self.reward_blocks.remove(&d);
            }
        }
    }

    /// Applies a split or merge, relabelling only the affected occurrences.
    pub fn apply_move(&mut self, mv: &TreeMove) -> Result<()> {
        let (next_phi, touched) = match mv {
            TreeMove::Split(ctx) => {
                let next = self.phi.split(ctx)?;
                (next, vec![ctx.clone()])
            }
            TreeMove::Merge(parent) => {
                let next = self.phi.merge(parent)?;
                (next, self.phi.children_of(parent))
            }
            TreeMove::Stay => return Ok(()),
        };

        let mut times: Vec<usize> = Vec::new();
        for ctx in &touched {
            if let Some(idx) = self.tensor.index_of(&StateId::from_obs(ctx)) {
                if idx < self.occ.len() {
                    times.extend(self.occ[idx].iter().copied());
                }
            }
        }
        times.sort_unstable();
        times.dedup();
        self.phi = next_phi;

        // New labels under the updated map.
        let mut relabels: Vec<(usize, usize)> = Vec::new();
        for &t in &times {
            let state = self.phi.apply_to_obs(&self.obs[..=t]);
            let idx = self.tensor.intern(&state);
            if idx == self.occ.len() {
                self.occ.push(Default::default());
            }
            if idx != self.seq[t] {
                relabels.push((t, idx));
            }
        }

        // Transitions whose endpoints change.
        let n = self.seq.len();
        let mut trans: Vec<usize> = Vec::new();
        for &(t, _) in &relabels {
            if t >= 1 {
                trans.push(t);
            }
            if t + 1 < n {
                trans.push(t + 1);
            }
        }
        trans.sort_unstable();
        trans.dedup();

        let mut dirty_rows: Vec<(usize, usize)> = Vec::new();
        let mut dirty_dests: Vec<usize> = Vec::new();
        for &j in &trans {
            let (s, a, d, r) = (self.seq[j - 1], self.actions[j], self.seq[j], self.rewards[j]);
            self.tensor.unrecord_idx(s, a, d, r);
            dirty_rows.push((s, a));
            dirty_dests.push(d);
        }
        for &(t, idx) in &relabels {
            self.occ[self.seq[t]].remove(&t);
            self.occ[idx].insert(t);
            self.seq[t] = idx;
        }
        for &j in &trans {
            let (s, a, d, r) = (self.seq[j - 1], self.actions[j], self.seq[j], self.rewards[j]);
            self.tensor.record_idx(s, a, d, r);
            dirty_rows.push((s, a));
            dirty_dests.push(d);
        }
        dirty_rows.sort_unstable();
        dirty_rows.dedup();
        dirty_dests.sort_unstable();
        dirty_dests.dedup();
        for (s, a) in dirty_rows {
            self.refresh_row(s, a);
        }
        for d in dirty_dests {
            self.refresh_dest(d);
        }
        Ok(())
    }

    /// Undoes a previously applied move.
    pub fn revert_move(&mut self, mv: &TreeMove) {
        self.apply_move(&mv.inverse()).expect("inverse of an applied move is legal");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::{Alphabet, RewardAlphabet};
    use crate::feature::ContextTreeMap;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn tiny_history(seed: u64, n: usize) -> History {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut h = History::new(2, 1, 4);
        let mut prev = rng.gen_range(0..2usize);
        h.push_first(prev).unwrap();
        for _ in 1..n {
            let o = rng.gen_range(0..2usize);
            h.push(0, 2 * prev + o, o).unwrap();
            prev = o;
        }
        h
    }

    #[test]
    fn code_length_base_cases() {
        assert_eq!(code_length(&[0, 0]), 0.0);
        assert_eq!(code_length(&[4, 0]), 0.0);
        assert_abs_diff_eq!(code_length(&[2, 2]), 5.0, epsilon = 1e-12);
        // 4*H(3/4, 1/4) + 0.5*log2(4)
        let h = 0.75f64 * (4.0f64 / 3.0).log2() + 0.25 * 4.0f64.log2();
        assert_abs_diff_eq!(code_length(&[3, 1]), 4.0 * h + 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(code_length(&[3, 1]), 4.24511249, epsilon = 1e-6);
    }

    #[test]
    fn code_length_matches_entropy_oracle_on_random_vectors() {
        // Independent route: probabilities first, then n*H + penalty.
        fn oracle(counts: &[u64]) -> f64 {
            let n: u64 = counts.iter().sum();
            if n == 0 {
                return 0.0;
            }
            let nf = n as f64;
            let h: f64 = counts
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / nf;
                    -p * p.log2()
                })
                .sum();
            let m1 = counts.iter().filter(|&&c| c > 0).count();
            nf * h + 0.5 * (m1 as f64 - 1.0) * nf.log2()
        }
        let mut rng = StdRng::seed_from_u64(123);
        for _ in 0..1000 {
            let cats = rng.gen_range(1..=8);
            let counts: Vec<u64> = (0..cats).map(|_| rng.gen_range(0..=10_000u64)).collect();
            assert_abs_diff_eq!(code_length(&counts), oracle(&counts), epsilon = 1e-9);
        }
    }

    #[test]
    fn code_length_is_permutation_invariant() {
        let counts = [7u64, 0, 3, 12, 1];
        let mut shuffled = counts;
        shuffled.reverse();
        assert_eq!(code_length(&counts), code_length(&shuffled));
    }

    #[test]
    fn state_code_composes_row_code_lengths() {
        // Two states A, B, one action: A->A 2, A->B 2, B->A 4.
        let mut t = CountTensor::new(1, 1);
        let a = StateId::from_obs(&[0]);
        let b = StateId::from_obs(&[1]);
        for _ in 0..2 {
            t.record(&a, 0, &a, 0);
            t.record(&a, 0, &b, 0);
        }
        for _ in 0..4 {
            t.record(&b, 0, &a, 0);
        }
        assert_abs_diff_eq!(state_code(&t), code_length(&[2, 2]) + code_length(&[4, 0]), epsilon = 1e-12);
        assert_abs_diff_eq!(state_code(&t), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn state_code_of_self_loops_is_zero() {
        let mut t = CountTensor::new(1, 1);
        let s = StateId::empty();
        for _ in 0..8 {
            t.record(&s, 0, &s, 0);
        }
        assert_eq!(state_code(&t), 0.0);
        assert_eq!(state_code(&CountTensor::new(1, 1)), 0.0);
    }

    #[test]
    fn reward_code_cases() {
        // Deterministic rewards per destination cost nothing.
        let mut t = CountTensor::new(1, 4);
        let a = StateId::from_obs(&[0]);
        let b = StateId::from_obs(&[1]);
        for _ in 0..5 {
            t.record(&a, 0, &b, 3);
            t.record(&b, 0, &a, 1);
        }
        assert_eq!(reward_code(&t), 0.0);

        // One state with rewards 0 and 1 twice each: code_length((2,2)).
        let mut t = CountTensor::new(1, 2);
        let s = StateId::empty();
        for r in [0, 1, 0, 1] {
            t.record(&s, 0, &s, r);
        }
        assert_abs_diff_eq!(reward_code(&t), 5.0, epsilon = 1e-12);
        assert_eq!(reward_code(&CountTensor::new(1, 2)), 0.0);
    }

    #[test]
    fn cost_of_phi0_is_reward_code_only() {
        let h = tiny_history(4, 512);
        let c = cost(&FeatureMap::k_order(0), &h);
        assert_eq!(c.state_bits, 0.0);
        let t = CountTensor::from_history(&FeatureMap::k_order(0), &h);
        let rewards: Vec<u64> = (0..4)
            .map(|r| {
                let d = t.index_of(&StateId::empty()).unwrap();
                t.cell_count(d, 0, d, r)
            })
            .collect();
        assert_abs_diff_eq!(c.reward_bits, code_length(&rewards), epsilon = 1e-9);
    }

    #[test]
    fn cost_on_single_observation_is_zero() {
        let mut h = History::new(2, 1, 4);
        h.push_first(0).unwrap();
        for phi in [FeatureMap::k_order(0), FeatureMap::k_order(3)] {
            let c = cost(&phi, &h);
            assert_eq!(c.total(), 0.0);
        }
    }

    #[test]
    fn tiny_phi2_cost_matches_the_asymptotic_form() {
        let n = 4096usize;
        let h = tiny_history(11, n);
        let c = cost(&FeatureMap::k_order(2), &h);
        let oracle = n as f64 + 6.0 * (n as f64 / 4.0).log2();
        let rel = (c.total() - oracle).abs() / oracle;
        assert!(rel < 0.02, "total {} vs oracle {oracle}", c.total());
    }

    #[test]
    fn best_phi_picks_phi2_on_the_tiny_example() {
        let h = tiny_history(8, 4096);
        let candidates = vec![FeatureMap::k_order(0), FeatureMap::k_order(1), FeatureMap::k_order(2)];
        let best = best_phi(&candidates, &h).unwrap();
        assert_eq!(best, &FeatureMap::k_order(2));
    }

    #[test]
    fn best_phi_tie_break_prefers_the_first() {
        let h = tiny_history(8, 128);
        // Identical maps produce identical state sequences; first wins.
        let candidates = vec![FeatureMap::k_order(1), FeatureMap::k_order(1)];
        let best = best_phi(&candidates, &h).unwrap();
        assert!(std::ptr::eq(best, &candidates[0]));
        assert!(best_phi(&[], &h).is_err());
        let single = vec![FeatureMap::k_order(3)];
        assert_eq!(best_phi(&single, &h).unwrap(), &single[0]);
    }

    #[test]
    fn cost_is_invariant_under_state_relabeling() {
        let mut rng = StdRng::seed_from_u64(21);
        let seq: Vec<usize> = (0..400).map(|_| rng.gen_range(0..3)).collect();
        let acts: Vec<usize> = (0..399).map(|_| rng.gen_range(0..2)).collect();
        let rews: Vec<usize> = (0..399).map(|_| rng.gen_range(0..2)).collect();
        let build = |names: &[StateId]| {
            let mut t = CountTensor::new(2, 2);
            for j in 1..seq.len() {
                t.record(&names[seq[j - 1]], acts[j - 1], &names[seq[j]], rews[j - 1]);
            }
            state_code(&t) + reward_code(&t)
        };
        let plain: Vec<StateId> = (0..3).map(|i| StateId::from_obs(&[i])).collect();
        let renamed: Vec<StateId> =
            [[5usize, 9], [7, 7], [0, 1]].iter().map(|w| StateId::from_obs(w)).collect();
        assert_abs_diff_eq!(build(&plain), build(&renamed), epsilon = 1e-9);
    }

    #[test]
    fn one_more_transition_moves_cost_boundedly() {
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..50 {
            let n = rng.gen_range(2..300);
            let h = tiny_history(rng.gen(), n);
            let phi = FeatureMap::k_order(rng.gen_range(0..3));
            let before = cost(&phi, &h).total();
            let o = rng.gen_range(0..2);
            let prev = *h.observations().last().unwrap();
            let h2 = h.append(0, 2 * prev + o, o).unwrap();
            let after = cost(&phi, &h2).total();
            let t = CountTensor::from_history(&phi, &h2);
            let bound = ((n as f64) + 1.0).log2()
                * (1.0 + (t.num_realized_states() * h.action_size()) as f64);
            assert!(
                (after - before).abs() <= bound,
                "delta {} exceeds bound {bound}",
                after - before
            );
        }
    }

    #[test]
    fn ledger_cost_equals_full_recomputation_under_random_moves() {
        let mut rng = StdRng::seed_from_u64(77);
        let h = tiny_history(5, 600);
        let mut ledger = CostLedger::new(ContextTreeMap::root(2), &h);
        for step in 0..200 {
            let mv = ledger.phi().propose(&mut rng);
            if matches!(&mv, TreeMove::Split(_)) && ledger.phi().max_context_len() >= 8 {
                continue;
            }
            ledger.apply_move(&mv).unwrap();
            if step % 10 == 0 {
                let direct = cost(&FeatureMap::context_tree(ledger.phi().clone()), &h);
                let incr = ledger.cost();
                assert_abs_diff_eq!(incr.state_bits, direct.state_bits, epsilon = 1e-6);
                assert_abs_diff_eq!(incr.reward_bits, direct.reward_bits, epsilon = 1e-6);
                ledger.tensor().check_consistency().unwrap();
            }
        }
    }

    #[test]
    fn ledger_revert_restores_the_exact_cost() {
        let h = tiny_history(6, 500);
        let mut ledger = CostLedger::new(ContextTreeMap::root(2), &h);
        ledger.apply_move(&TreeMove::Split(vec![])).unwrap();
        let before = ledger.cost();
        let mv = TreeMove::Split(vec![1]);
        ledger.apply_move(&mv).unwrap();
        ledger.revert_move(&mv);
        let after = ledger.cost();
        assert_abs_diff_eq!(before.total(), after.total(), epsilon = 1e-9);
    }

    #[test]
    fn ledger_extends_incrementally() {
        let h = tiny_history(9, 300);
        let mut ledger = CostLedger::empty(ContextTreeMap::root(2), 1, 4);
        for t in 0..h.len() {
            let (a, r) = if t == 0 { (0, 0) } else { (h.actions()[t - 1], h.rewards()[t - 1]) };
            ledger.push_step(a, r, h.observations()[t]);
        }
        let direct = cost(&FeatureMap::context_tree(ledger.phi().clone()), &h);
        assert_abs_diff_eq!(ledger.cost().total(), direct.total(), epsilon = 1e-9);
        assert_eq!(ledger.len(), h.len());
    }

    #[test]
    fn suffix_render_labels() {
        let obs = Alphabet::binary();
        let _rewards = RewardAlphabet::from_numeric_labels(["0"]).unwrap();
        let map = ContextTreeMap::root(2).split(&[]).unwrap();
        assert_eq!(map.render(&obs), "0\n1\n");
    }
}
