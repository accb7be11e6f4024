//! Improved Bayesian cost: states marginalized out of the reward likelihood.
//!
//! The reward sequence probability given actions is an n-fold product of the
//! matrices `U^{ar'} = T̂ ⊙ R̂` evaluated left to right in O(m²n), with the
//! propagated vector renormalized every step so the log-likelihood stays
//! finite far past the underflow point of the raw product. The criterion adds
//! a `½·M·log₂ n` penalty for the independent parameters of Û.

use std::collections::BTreeMap;

use crate::counts::CountTensor;
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::history::History;

/// How many independent parameters the penalty charges for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyMode {
    /// `m(m-1)·|A|·(|R|-1)` regardless of which cells were observed.
    Full,
    /// Realized (s, a, s', r') cells minus one normalization constraint per
    /// realized (s, a) row. The default.
    Observed,
}

/// Result of the improved cost evaluation, in bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ICostResult {
    pub neg_log_likelihood: f64,
    pub parameter_penalty: f64,
    pub m_params: usize,
}

impl ICostResult {
    pub fn total(&self) -> f64 {
        self.neg_log_likelihood + self.parameter_penalty
    }
}

/// The family of matrices `U^{ar'}` over a dense state space `0..m`.
#[derive(Debug, Clone)]
pub struct UFamily {
    m: usize,
    num_actions: usize,
    num_rewards: usize,
    /// Row-major m×m matrix per (action, reward).
    mats: Vec<Vec<f64>>,
}

impl UFamily {
    /// Builds the family from explicit matrices, one per (action, reward)
    /// pair in row-major `a * num_rewards + r` order.
    pub fn from_parts(
        m: usize,
        num_actions: usize,
        num_rewards: usize,
        mats: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if mats.len() != num_actions * num_rewards {
            return Err(Error::DimensionMismatch(format!(
                "{} matrices for {num_actions} actions x {num_rewards} rewards",
                mats.len()
            )));
        }
        if let Some(bad) = mats.iter().position(|mat| mat.len() != m * m) {
            return Err(Error::DimensionMismatch(format!(
                "matrix {bad} has {} entries, want {}",
                mats[bad].len(),
                m * m
            )));
        }
        for mat in &mats {
            if mat.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::DimensionMismatch("U entries must lie in [0, 1]".into()));
            }
        }
        Ok(UFamily { m, num_actions, num_rewards, mats })
    }

    /// Estimates `Û(s,s',a,r') = n(s,a,s',r') / n(s,a,+,+)` from counts over
    /// the realized states. Returns the family plus the map from tensor state
    /// indices to the dense `0..m` indices used by the matrices.
    pub fn from_tensor(tensor: &CountTensor) -> Result<(Self, Vec<Option<usize>>)> {
        let realized = tensor.realized_states();
        let m = realized.len();
        let mut dense: Vec<Option<usize>> = vec![None; realized.iter().copied().max().map_or(0, |x| x + 1)];
        for (d, &t) in realized.iter().enumerate() {
            dense[t] = Some(d);
        }
        let (num_actions, num_rewards) = (tensor.num_actions(), tensor.num_rewards());
        let mut mats = vec![vec![0.0; m * m]; num_actions * num_rewards];
        for (&(s, a, s2, r), &c) in tensor.cells() {
            let row_total = tensor.row_total(s, a);
            let (ds, dd) = (dense[s].expect("counted state"), dense[s2].expect("counted state"));
            mats[a * num_rewards + r][ds * m + dd] = c as f64 / row_total as f64;
        }
        Ok((UFamily { m, num_actions, num_rewards, mats }, dense))
    }

    pub fn num_states(&self) -> usize {
        self.m
    }

    pub fn matrix(&self, action: usize, reward: usize) -> &[f64] {
        &self.mats[action * self.num_rewards + reward]
    }

    fn check_sequences(&self, actions: &[usize], rewards: &[usize], s0: usize) -> Result<()> {
        if actions.len() != rewards.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} actions vs {} rewards",
                actions.len(),
                rewards.len()
            )));
        }
        if s0 >= self.m {
            return Err(Error::DimensionMismatch(format!("start state {s0} out of {}", self.m)));
        }
        if actions.iter().any(|&a| a >= self.num_actions) || rewards.iter().any(|&r| r >= self.num_rewards)
        {
            return Err(Error::DimensionMismatch("action or reward index out of range".into()));
        }
        Ok(())
    }

    /// `P(r_{1:n} | a_{1:n})` from start state `s0` by left-to-right
    /// vector-matrix products. Underflows to 0 for long sequences; use
    /// [`UFamily::neg_log2_likelihood`] there.
    pub fn reward_likelihood(&self, s0: usize, actions: &[usize], rewards: &[usize]) -> Result<f64> {
        self.check_sequences(actions, rewards, s0)?;
        let mut v = vec![0.0f64; self.m];
        v[s0] = 1.0;
        let mut next = vec![0.0f64; self.m];
        for (&a, &r) in actions.iter().zip(rewards) {
            let mat = self.matrix(a, r);
            for x in next.iter_mut() {
                *x = 0.0;
            }
            for (s, &vs) in v.iter().enumerate() {
                if vs == 0.0 {
                    continue;
                }
                let row = &mat[s * self.m..(s + 1) * self.m];
                for (d, &u) in row.iter().enumerate() {
                    next[d] += vs * u;
                }
            }
            std::mem::swap(&mut v, &mut next);
        }
        Ok(v.iter().sum())
    }

    /// `-log₂ P(r_{1:n} | a_{1:n})` with per-step renormalization; finite for
    /// any sequence the estimate assigns positive probability.
    pub fn neg_log2_likelihood(&self, s0: usize, actions: &[usize], rewards: &[usize]) -> Result<f64> {
        self.check_sequences(actions, rewards, s0)?;
        let mut v = vec![0.0f64; self.m];
        v[s0] = 1.0;
        let mut next = vec![0.0f64; self.m];
        let mut log2_scale = 0.0f64;
        for (step, (&a, &r)) in actions.iter().zip(rewards).enumerate() {
            let mat = self.matrix(a, r);
            for x in next.iter_mut() {
                *x = 0.0;
            }
            for (s, &vs) in v.iter().enumerate() {
                if vs == 0.0 {
                    continue;
                }
                let row = &mat[s * self.m..(s + 1) * self.m];
                for (d, &u) in row.iter().enumerate() {
                    next[d] += vs * u;
                }
            }
            let mass: f64 = next.iter().sum();
            if mass <= 0.0 {
                return Err(Error::Internal(format!(
                    "reward sequence has zero probability at step {step}"
                )));
            }
            log2_scale += mass.log2();
            for x in next.iter_mut() {
                *x /= mass;
            }
            std::mem::swap(&mut v, &mut next);
        }
        Ok(-log2_scale)
    }
}

/// Number of independent parameters charged by the ICost penalty.
pub fn parameter_count(tensor: &CountTensor, mode: PenaltyMode) -> usize {
    match mode {
        PenaltyMode::Full => {
            let m = tensor.num_realized_states();
            m * m.saturating_sub(1) * tensor.num_actions() * tensor.num_rewards().saturating_sub(1)
        }
        PenaltyMode::Observed => tensor.num_cells().saturating_sub(tensor.num_rows()),
    }
}

/// The improved cost of `phi` on `h`: negative log reward likelihood under
/// the frequency estimate Û, plus `½·M·log₂ n`. The start state is the first
/// realized state.
pub fn icost(phi: &FeatureMap, h: &History, mode: PenaltyMode) -> Result<ICostResult> {
    let tensor = CountTensor::from_history(phi, h);
    if tensor.total() == 0 {
        return Ok(ICostResult {
            neg_log_likelihood: 0.0,
            parameter_penalty: 0.0,
            m_params: parameter_count(&tensor, mode),
        });
    }
    let states = phi.states_along(h);
    let (family, dense) = UFamily::from_tensor(&tensor)?;
    let s0_tensor = tensor
        .index_of(&states[0])
        .ok_or_else(|| Error::Internal("first state not interned".into()))?;
    let s0 = dense[s0_tensor].ok_or_else(|| Error::Internal("first state not realized".into()))?;
    // Only steps whose destination observation exists count as transitions.
    let steps = h.len() - 1;
    let nll = family.neg_log2_likelihood(s0, &h.actions()[..steps], &h.rewards()[..steps])?;
    let m_params = parameter_count(&tensor, mode);
    let penalty = 0.5 * m_params as f64 * (h.len() as f64).log2();
    Ok(ICostResult { neg_log_likelihood: nll, parameter_penalty: penalty, m_params })
}

/// Brute-force marginalization over all state sequences; exponential in the
/// sequence length, for cross-checking only.
pub fn brute_force_reward_likelihood(
    family: &UFamily,
    s0: usize,
    actions: &[usize],
    rewards: &[usize],
) -> f64 {
    let m = family.num_states();
    let n = actions.len();
    if n == 0 {
        return 1.0;
    }
    let mut total = 0.0;
    let mut path = vec![0usize; n];
    loop {
        let mut p = 1.0;
        let mut prev = s0;
        for (t, &s) in path.iter().enumerate() {
            p *= family.matrix(actions[t], rewards[t])[prev * m + s];
            prev = s;
        }
        total += p;
        // odometer over state paths
        let mut i = 0;
        loop {
            if i == n {
                return total;
            }
            path[i] += 1;
            if path[i] < m {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Groups cells per (s, a) to expose the realized structure; debugging aid
/// for penalty audits.
pub fn realized_cells_by_row(tensor: &CountTensor) -> BTreeMap<(usize, usize), usize> {
    let mut rows: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&(s, a, _, _), _) in tensor.cells() {
        *rows.entry((s, a)).or_insert(0) += 1;
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::StateId;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn single_state_family(p1: f64) -> UFamily {
        // One state, one action, two rewards with P(r=1) = p1.
        UFamily::from_parts(1, 1, 2, vec![vec![1.0 - p1], vec![p1]]).unwrap()
    }

    #[test]
    fn single_state_reduces_to_iid_product() {
        let fam = single_state_family(0.7);
        let p = fam.reward_likelihood(0, &[0, 0, 0], &[1, 1, 0]).unwrap();
        assert_abs_diff_eq!(p, 0.7 * 0.7 * 0.3, epsilon = 1e-12);
    }

    #[test]
    fn deterministic_chain_gives_zero_or_one() {
        // Two states flipping deterministically; reward = destination index.
        let mut mats = vec![vec![0.0; 4]; 2];
        mats[0][1 * 2 + 0] = 1.0; // reward 0 on arriving at state 0
        mats[1][0 * 2 + 1] = 1.0; // reward 1 on arriving at state 1
        let fam = UFamily::from_parts(2, 1, 2, mats).unwrap();
        let consistent = fam.reward_likelihood(0, &[0, 0, 0], &[1, 0, 1]).unwrap();
        assert_abs_diff_eq!(consistent, 1.0, epsilon = 1e-12);
        let inconsistent = fam.reward_likelihood(0, &[0, 0], &[1, 1]).unwrap();
        assert_eq!(inconsistent, 0.0);
    }

    fn random_family(rng: &mut StdRng, m: usize, num_actions: usize, num_rewards: usize) -> UFamily {
        // Random sub-stochastic family: each (s, a) row distributes mass over
        // (s', r').
        let mut mats = vec![vec![0.0; m * m]; num_actions * num_rewards];
        for s in 0..m {
            for a in 0..num_actions {
                let mut weights = Vec::new();
                for _ in 0..m * num_rewards {
                    weights.push(rng.gen::<f64>());
                }
                let total: f64 = weights.iter().sum();
                let mut i = 0;
                for d in 0..m {
                    for r in 0..num_rewards {
                        mats[a * num_rewards + r][s * m + d] = weights[i] / total;
                        i += 1;
                    }
                }
            }
        }
        UFamily::from_parts(m, num_actions, num_rewards, mats).unwrap()
    }

    #[test]
    fn matches_brute_force_marginalization() {
        let mut rng = StdRng::seed_from_u64(42);
        let fam = random_family(&mut rng, 2, 1, 2);
        let actions = vec![0; 6];
        let rewards: Vec<usize> = (0..6).map(|_| rng.gen_range(0..2)).collect();
        let fast = fam.reward_likelihood(0, &actions, &rewards).unwrap();
        let slow = brute_force_reward_likelihood(&fam, 0, &actions, &rewards);
        assert!((fast - slow).abs() / slow <= 1e-12);
    }

    #[test]
    fn log_form_agrees_with_direct_product() {
        let mut rng = StdRng::seed_from_u64(43);
        let fam = random_family(&mut rng, 3, 2, 2);
        let n = 40;
        let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let rewards: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let p = fam.reward_likelihood(0, &actions, &rewards).unwrap();
        let bits = fam.neg_log2_likelihood(0, &actions, &rewards).unwrap();
        assert_abs_diff_eq!(bits, -p.log2(), epsilon = 1e-9);
    }

    #[test]
    fn likelihood_is_monotone_in_length() {
        let mut rng = StdRng::seed_from_u64(44);
        let fam = random_family(&mut rng, 3, 1, 3);
        let n = 30;
        let actions = vec![0; n];
        let rewards: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let mut prev = 1.0f64;
        for t in 1..=n {
            let p = fam.reward_likelihood(0, &actions[..t], &rewards[..t]).unwrap();
            assert!(p <= prev + 1e-15, "p grew at length {t}");
            assert!((0.0..=1.0).contains(&p));
            prev = p;
        }
    }

    #[test]
    fn stable_for_very_long_sequences() {
        let mut rng = StdRng::seed_from_u64(45);
        let m = 16;
        let fam = random_family(&mut rng, m, 1, 2);
        let n = 100_000;
        let actions = vec![0usize; n];
        let rewards: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let bits = fam.neg_log2_likelihood(0, &actions, &rewards).unwrap();
        assert!(bits.is_finite());
        assert!(bits > 0.0);
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let fam = single_state_family(0.5);
        assert!(fam.reward_likelihood(0, &[0, 0], &[0]).is_err());
        assert!(fam.reward_likelihood(1, &[0], &[0]).is_err());
        assert!(fam.reward_likelihood(0, &[1], &[0]).is_err());
        assert!(UFamily::from_parts(2, 1, 1, vec![vec![0.0; 3]]).is_err());
        assert!(UFamily::from_parts(1, 1, 1, vec![vec![1.5]]).is_err());
    }

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
    fn one_state_nll_is_the_empirical_entropy() {
        let h = tiny_history(3, 2000);
        let res = icost(&FeatureMap::k_order(0), &h, PenaltyMode::Observed).unwrap();
        let mut counts = [0u64; 4];
        for &r in h.rewards() {
            counts[r] += 1;
        }
        let n: u64 = counts.iter().sum();
        let entropy_bits: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n as f64;
                -(c as f64) * p.log2()
            })
            .sum();
        assert_abs_diff_eq!(res.neg_log_likelihood, entropy_bits, epsilon = 1e-9);
    }

    #[test]
    fn phi2_beats_phi0_on_the_tiny_example() {
        let h = tiny_history(10, 4096);
        let i2 = icost(&FeatureMap::k_order(2), &h, PenaltyMode::Observed).unwrap();
        let i0 = icost(&FeatureMap::k_order(0), &h, PenaltyMode::Observed).unwrap();
        assert!(i2.total() < i0.total(), "{} vs {}", i2.total(), i0.total());
    }

    #[test]
    fn single_observation_is_penalty_only() {
        let mut h = History::new(2, 1, 4);
        h.push_first(1).unwrap();
        let res = icost(&FeatureMap::k_order(1), &h, PenaltyMode::Observed).unwrap();
        assert_eq!(res.neg_log_likelihood, 0.0);
        assert_eq!(res.parameter_penalty, 0.0);
        assert_eq!(res.total(), 0.0);
    }

    #[test]
    fn full_parameter_count_follows_the_formula() {
        // m=4 realized states, 1 action, 4 rewards -> 4*3*1*3 = 36.
        let mut t = CountTensor::new(1, 4);
        let ids: Vec<StateId> = (0..4).map(|i| StateId::from_obs(&[i])).collect();
        for i in 0..4 {
            t.record(&ids[i], 0, &ids[(i + 1) % 4], 0);
        }
        assert_eq!(parameter_count(&t, PenaltyMode::Full), 36);
        let single = CountTensor::new(1, 4);
        assert_eq!(parameter_count(&single, PenaltyMode::Full), 0);
    }

    #[test]
    fn observed_parameter_count_on_tiny_phi2() {
        let h = tiny_history(12, 4096);
        let t = CountTensor::from_history(&FeatureMap::k_order(2), &h);
        // 8 realized (s,a,s',r') cells minus 4 realized rows — early-history
        // provisional states add their own cells, so count only the depth-2
        // rows here by rebuilding from the stationary part.
        let mut stationary = CountTensor::new(1, 4);
        let states = FeatureMap::k_order(2).states_along(&h);
        for j in 3..states.len() {
            stationary.record(&states[j - 1], 0, &states[j], h.rewards()[j - 1]);
        }
        assert_eq!(stationary.num_cells(), 8);
        assert_eq!(stationary.num_rows(), 4);
        assert_eq!(parameter_count(&stationary, PenaltyMode::Observed), 4);
        // The full history adds at most a few boundary cells.
        let m_full = parameter_count(&t, PenaltyMode::Observed);
        assert!((4..=8).contains(&m_full), "observed M = {m_full}");
    }
}
