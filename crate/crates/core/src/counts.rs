//! Transition/reward counts for a fixed feature map, and the estimated MDP.
//!
//! The tensor holds sparse counts `n(s, a, s', r')` over interned states with
//! all marginals cached. For a history with `n` observations it counts the
//! `n-1` realized transitions: the step into time `t` contributes
//! `(s_{t-1}, a_{t-1}, s_t, r_{t-1})`, the reward being the one delivered
//! together with `o_t`. Deterministic iteration everywhere (BTree maps keyed
//! by dense indices), so downstream sums and dumps are bit-stable.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::alphabet::RewardAlphabet;
use crate::error::{Error, Result};
use crate::feature::{FeatureMap, StateId};
use crate::history::History;

/// Sparse count tensor with cached marginals.
#[derive(Debug, Clone, Default)]
pub struct CountTensor {
    states: Vec<StateId>,
    state_index: HashMap<StateId, usize>,
    num_actions: usize,
    num_rewards: usize,
    /// Full cells n(s, a, s', r').
    cells: BTreeMap<(usize, usize, usize, usize), u64>,
    /// Per (s, a): destination counts n(s, a, s', +).
    trans: BTreeMap<(usize, usize), BTreeMap<usize, u64>>,
    /// Row totals n(s, a, +, +).
    row_totals: BTreeMap<(usize, usize), u64>,
    /// Per destination s': reward counts n(+, s', +, r').
    dest_rewards: BTreeMap<usize, BTreeMap<usize, u64>>,
    /// Cell-appearance count per state; a state is realized while > 0.
    state_refs: Vec<u64>,
    total: u64,
}

impl CountTensor {
    pub fn new(num_actions: usize, num_rewards: usize) -> Self {
        CountTensor {
            num_actions,
            num_rewards,
            ..CountTensor::default()
        }
    }

    /// Accumulates the counts induced by `phi` on `h`: states are computed on
    /// growing prefixes, transitions counted for t = 2..=n.
    pub fn from_history(phi: &FeatureMap, h: &History) -> Self {
        let mut tensor = CountTensor::new(h.action_size(), h.reward_size());
        let states = phi.states_along(h);
        let ids: Vec<usize> = states.iter().map(|s| tensor.intern(s)).collect();
        for t in 1..states.len() {
            tensor.record_idx(ids[t - 1], h.actions()[t - 1], ids[t], h.rewards()[t - 1]);
        }
        tensor
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_rewards(&self) -> usize {
        self.num_rewards
    }

    /// Total counted transitions, `n(+,+,+,+)`.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Interns a state, returning its dense index.
    pub fn intern(&mut self, s: &StateId) -> usize {
        if let Some(&i) = self.state_index.get(s) {
            return i;
        }
        let i = self.states.len();
        self.states.push(s.clone());
        self.state_refs.push(0);
        self.state_index.insert(s.clone(), i);
        i
    }

    pub fn state_id(&self, idx: usize) -> &StateId {
        &self.states[idx]
    }

    pub fn index_of(&self, s: &StateId) -> Option<usize> {
        self.state_index.get(s).copied()
    }

    /// Indices of realized states (those appearing in at least one count).
    pub fn realized_states(&self) -> Vec<usize> {
        (0..self.states.len()).filter(|&i| self.state_refs[i] > 0).collect()
    }

    pub fn num_realized_states(&self) -> usize {
        self.state_refs.iter().filter(|&&r| r > 0).count()
    }

    /// Records one transition by state id.
    pub fn record(&mut self, s: &StateId, a: usize, s2: &StateId, r: usize) {
        let si = self.intern(s);
        let di = self.intern(s2);
        self.record_idx(si, a, di, r);
    }

    pub(crate) fn record_idx(&mut self, s: usize, a: usize, s2: usize, r: usize) {
        debug_assert!(a < self.num_actions && r < self.num_rewards);
        *self.cells.entry((s, a, s2, r)).or_insert(0) += 1;
        *self.trans.entry((s, a)).or_default().entry(s2).or_insert(0) += 1;
        *self.row_totals.entry((s, a)).or_insert(0) += 1;
        *self.dest_rewards.entry(s2).or_default().entry(r).or_insert(0) += 1;
        self.state_refs[s] += 1;
        self.state_refs[s2] += 1;
        self.total += 1;
    }

    /// Removes one previously recorded transition. Zeroed entries are pruned
    /// so that non-empty-category counts stay exact.
    pub(crate) fn unrecord_idx(&mut self, s: usize, a: usize, s2: usize, r: usize) {
        fn dec<K: Ord + Copy>(map: &mut BTreeMap<K, u64>, key: K) {
            let v = map.get_mut(&key).expect("unrecord of a missing count");
            *v -= 1;
            if *v == 0 {
                map.remove(&key);
            }
        }
        dec(&mut self.cells, (s, a, s2, r));
        let row = self.trans.get_mut(&(s, a)).expect("unrecord of a missing row");
        dec(row, s2);
        if row.is_empty() {
            self.trans.remove(&(s, a));
        }
        dec(&mut self.row_totals, (s, a));
        let dest = self.dest_rewards.get_mut(&s2).expect("unrecord of a missing destination");
        dec(dest, r);
        if dest.is_empty() {
            self.dest_rewards.remove(&s2);
        }
        self.state_refs[s] -= 1;
        self.state_refs[s2] -= 1;
        self.total -= 1;
    }

    pub fn cell_count(&self, s: usize, a: usize, s2: usize, r: usize) -> u64 {
        self.cells.get(&(s, a, s2, r)).copied().unwrap_or(0)
    }

    pub fn trans_count(&self, s: usize, a: usize, s2: usize) -> u64 {
        self.trans.get(&(s, a)).and_then(|row| row.get(&s2)).copied().unwrap_or(0)
    }

    pub fn row_total(&self, s: usize, a: usize) -> u64 {
        self.row_totals.get(&(s, a)).copied().unwrap_or(0)
    }

    /// Iterates realized (s, a) rows with their destination count vectors.
    pub fn rows(&self) -> impl Iterator<Item = ((usize, usize), &BTreeMap<usize, u64>)> {
        self.trans.iter().map(|(&k, v)| (k, v))
    }

    pub fn row(&self, s: usize, a: usize) -> Option<&BTreeMap<usize, u64>> {
        self.trans.get(&(s, a))
    }

    /// Iterates realized destinations with their reward count vectors.
    pub fn reward_vectors(&self) -> impl Iterator<Item = (usize, &BTreeMap<usize, u64>)> {
        self.dest_rewards.iter().map(|(&k, v)| (k, v))
    }

    pub fn reward_vector(&self, dest: usize) -> Option<&BTreeMap<usize, u64>> {
        self.dest_rewards.get(&dest)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&(usize, usize, usize, usize), &u64)> {
        self.cells.iter()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_rows(&self) -> usize {
        self.row_totals.len()
    }

    /// Estimated transition probabilities `n(s,a,s',+)/n(s,a,+,+)` as a dense
    /// row over realized states; all-zero for unvisited (s, a).
    pub fn transition_row(&self, s: usize, a: usize) -> Vec<f64> {
        let m = self.states.len();
        let mut row = vec![0.0; m];
        if let Some(dests) = self.trans.get(&(s, a)) {
            let total = self.row_total(s, a) as f64;
            for (&d, &c) in dests {
                row[d] = c as f64 / total;
            }
        }
        row
    }

    /// Estimated expected reward per realized (s, a, s'); `None` for cells
    /// that never occurred.
    pub fn expected_reward(&self, s: usize, a: usize, s2: usize, rewards: &RewardAlphabet) -> Option<f64> {
        let total = self.trans_count(s, a, s2);
        if total == 0 {
            return None;
        }
        let mut sum = 0.0;
        for r in 0..self.num_rewards {
            let c = self.cell_count(s, a, s2, r);
            if c > 0 {
                sum += c as f64 / total as f64 * rewards.value(r);
            }
        }
        Some(sum)
    }

    /// The estimated MDP without exploration extension; unvisited (s, a) rows
    /// are empty (all-zero).
    pub fn to_mdp(&self, gamma: f64, rewards: &RewardAlphabet) -> MdpEstimate {
        self.build_mdp(gamma, rewards, None, &[])
    }

    /// The exploration-extended MDP: state set gains the absorbing state `e`;
    /// every (s, a) row gets one phantom transition to `e` with reward
    /// `rmax_e`, and `e` loops onto itself with the same reward. `extra`
    /// registers states (such as the current one) that have no transitions
    /// yet; their rows become pure phantom rows.
    pub fn extend_for_exploration(
        &self,
        rmax_e: f64,
        gamma: f64,
        rewards: &RewardAlphabet,
        extra: &[StateId],
    ) -> MdpEstimate {
        self.build_mdp(gamma, rewards, Some(rmax_e), extra)
    }

    fn build_mdp(
        &self,
        gamma: f64,
        rewards: &RewardAlphabet,
        rmax_e: Option<f64>,
        extra: &[StateId],
    ) -> MdpEstimate {
        let mut states: Vec<StateId> =
            self.realized_states().iter().map(|&i| self.states[i].clone()).collect();
        for s in extra {
            if !states.contains(s) {
                states.push(s.clone());
            }
        }
        let mut index: HashMap<StateId, usize> = HashMap::with_capacity(states.len() + 1);
        for (i, s) in states.iter().enumerate() {
            index.insert(s.clone(), i);
        }
        let explore_idx = if rmax_e.is_some() {
            states.push(StateId::Exploration);
            Some(states.len() - 1)
        } else {
            None
        };

        let m = states.len();
        let mut rows: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); m * self.num_actions];
        let real_count = if explore_idx.is_some() { m - 1 } else { m };
        for (si, state) in states.iter().enumerate().take(real_count) {
            let ti = self.index_of(state);
            for a in 0..self.num_actions {
                let mut row = Vec::new();
                let observed = ti.map(|t| self.row_total(t, a)).unwrap_or(0);
                let denom = observed + u64::from(rmax_e.is_some());
                if denom == 0 {
                    continue;
                }
                if let (Some(t), true) = (ti, observed > 0) {
                    if let Some(dests) = self.trans.get(&(t, a)) {
                        for (&d, &c) in dests {
                            let dest_state = &self.states[d];
                            let di = index[dest_state];
                            let r = self.expected_reward(t, a, d, rewards).unwrap_or(0.0);
                            row.push((di, c as f64 / denom as f64, r));
                        }
                    }
                }
                if let (Some(e), Some(bonus)) = (explore_idx, rmax_e) {
                    row.push((e, 1.0 / denom as f64, bonus));
                }
                rows[si * self.num_actions + a] = row;
            }
        }
        if let (Some(e), Some(bonus)) = (explore_idx, rmax_e) {
            for a in 0..self.num_actions {
                rows[e * self.num_actions + a] = vec![(e, 1.0, bonus)];
            }
        }
        MdpEstimate { states, num_actions: self.num_actions, gamma, rows }
    }

    /// Debug dump `s,a,s',r,count`, states rendered through `f`.
    pub fn dump_csv(&self, f: impl Fn(&StateId) -> String) -> String {
        let mut out = String::from("s,a,s',r,count\n");
        for (&(s, a, s2, r), &c) in &self.cells {
            let _ = writeln!(out, "{},{},{},{},{}", f(&self.states[s]), a, f(&self.states[s2]), r, c);
        }
        out
    }

    /// Recomputes every marginal from the raw cells and compares; test aid.
    pub fn check_consistency(&self) -> Result<()> {
        let mut trans: BTreeMap<(usize, usize), BTreeMap<usize, u64>> = BTreeMap::new();
        let mut row_totals: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        let mut dest_rewards: BTreeMap<usize, BTreeMap<usize, u64>> = BTreeMap::new();
        let mut refs = vec![0u64; self.states.len()];
        let mut total = 0u64;
        for (&(s, a, s2, r), &c) in &self.cells {
            if c == 0 {
                return Err(Error::Internal("zero cell retained".into()));
            }
            *trans.entry((s, a)).or_default().entry(s2).or_insert(0) += c;
            *row_totals.entry((s, a)).or_insert(0) += c;
            *dest_rewards.entry(s2).or_default().entry(r).or_insert(0) += c;
            refs[s] += c;
            refs[s2] += c;
            total += c;
        }
        if trans != self.trans
            || row_totals != self.row_totals
            || dest_rewards != self.dest_rewards
            || refs != self.state_refs
            || total != self.total
        {
            return Err(Error::Internal("marginals disagree with cells".into()));
        }
        Ok(())
    }
}

/// The estimated (optionally exploration-extended) MDP: per (state, action)
/// a sparse list of `(destination, probability, expected reward)`.
#[derive(Debug, Clone)]
pub struct MdpEstimate {
    states: Vec<StateId>,
    num_actions: usize,
    gamma: f64,
    rows: Vec<Vec<(usize, f64, f64)>>,
}

impl MdpEstimate {
    /// Direct constructor for hand-built MDPs (tests, oracles).
    pub fn from_parts(
        states: Vec<StateId>,
        num_actions: usize,
        gamma: f64,
        rows: Vec<Vec<(usize, f64, f64)>>,
    ) -> Result<Self> {
        if rows.len() != states.len() * num_actions {
            return Err(Error::DimensionMismatch(format!(
                "{} rows for {} states x {} actions",
                rows.len(),
                states.len(),
                num_actions
            )));
        }
        Ok(MdpEstimate { states, num_actions, gamma, rows })
    }

    pub fn states(&self) -> &[StateId] {
        &self.states
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn index_of(&self, s: &StateId) -> Option<usize> {
        self.states.iter().position(|x| x == s)
    }

    pub fn row(&self, s: usize, a: usize) -> &[(usize, f64, f64)] {
        &self.rows[s * self.num_actions + a]
    }

    /// Sum of a row's probabilities; 1 for proper rows, 0 for unvisited ones.
    pub fn row_mass(&self, s: usize, a: usize) -> f64 {
        self.row(s, a).iter().map(|&(_, p, _)| p).sum()
    }

    /// Debug dump of transition rows as CSV `s,a,s',prob,reward`.
    pub fn dump_csv(&self) -> String {
        let mut out = String::from("s,a,s',prob,reward\n");
        for s in 0..self.states.len() {
            for a in 0..self.num_actions {
                for &(d, p, r) in self.row(s, a) {
                    let _ = writeln!(out, "{},{},{},{},{}", self.states[s], a, self.states[d], p, r);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::{Alphabet, RewardAlphabet};
    use crate::feature::ContextTreeMap;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn tiny_rewards() -> RewardAlphabet {
        RewardAlphabet::from_numeric_labels(["0", "1", "2", "3"]).unwrap()
    }

    fn history_from_obs(obs: &[usize]) -> History {
        // Tiny-example reward law: the reward delivered with o_t is
        // 2*o_{t-1} + o_t, stored on step t-1.
        let mut h = History::new(2, 1, 4);
        h.push_first(obs[0]).unwrap();
        for t in 1..obs.len() {
            h.push(0, 2 * obs[t - 1] + obs[t], obs[t]).unwrap();
        }
        h
    }

    #[test]
    fn accumulate_counts_the_hand_traced_transitions() {
        // Observations 0,1,1,0 with Phi_1: states 0,1,1,0.
        let h = history_from_obs(&[0, 1, 1, 0]);
        let phi = FeatureMap::k_order(1);
        let t = CountTensor::from_history(&phi, &h);
        assert_eq!(t.total(), 3);
        let s0 = t.index_of(&StateId::from_obs(&[0])).unwrap();
        let s1 = t.index_of(&StateId::from_obs(&[1])).unwrap();
        // (0 -> 1) with r = 1, (1 -> 1) with r = 3, (1 -> 0) with r = 2.
        assert_eq!(t.cell_count(s0, 0, s1, 1), 1);
        assert_eq!(t.cell_count(s1, 0, s1, 3), 1);
        assert_eq!(t.cell_count(s1, 0, s0, 2), 1);
        t.check_consistency().unwrap();
    }

    #[test]
    fn single_observation_yields_an_empty_tensor() {
        let h = history_from_obs(&[1]);
        let t = CountTensor::from_history(&FeatureMap::k_order(1), &h);
        assert_eq!(t.total(), 0);
        assert_eq!(t.num_realized_states(), 0);
    }

    #[test]
    fn transition_counts_equal_history_steps() {
        let mut rng = StdRng::seed_from_u64(5);
        let obs: Vec<usize> = (0..300).map(|_| rng.gen_range(0..2)).collect();
        let h = history_from_obs(&obs);
        let t = CountTensor::from_history(&FeatureMap::k_order(2), &h);
        assert_eq!(t.total() as usize, h.len() - 1);
    }

    #[test]
    fn marginals_stay_consistent_under_random_churn() {
        let mut rng = StdRng::seed_from_u64(17);
        let mut t = CountTensor::new(2, 3);
        let states: Vec<StateId> =
            (0..4).map(|i| StateId::from_obs(&[i])).collect();
        let ids: Vec<usize> = states.iter().map(|s| t.intern(s)).collect();
        let mut live: Vec<(usize, usize, usize, usize)> = Vec::new();
        for _ in 0..100_000 {
            if live.is_empty() || rng.gen_bool(0.6) {
                let key = (
                    ids[rng.gen_range(0..4)],
                    rng.gen_range(0..2),
                    ids[rng.gen_range(0..4)],
                    rng.gen_range(0..3),
                );
                t.record_idx(key.0, key.1, key.2, key.3);
                live.push(key);
            } else {
                let key = live.swap_remove(rng.gen_range(0..live.len()));
                t.unrecord_idx(key.0, key.1, key.2, key.3);
            }
        }
        t.check_consistency().unwrap();
        assert_eq!(t.total() as usize, live.len());
    }

    #[test]
    fn transition_row_normalizes_frequencies() {
        let mut t = CountTensor::new(1, 4);
        let s = StateId::from_obs(&[0]);
        let a_st = StateId::from_obs(&[1]);
        let b_st = StateId::from_obs(&[0, 1]);
        for _ in 0..3 {
            t.record(&s, 0, &a_st, 0);
        }
        t.record(&s, 0, &b_st, 0);
        let si = t.index_of(&s).unwrap();
        let row = t.transition_row(si, 0);
        assert_eq!(row[t.index_of(&a_st).unwrap()], 0.75);
        assert_eq!(row[t.index_of(&b_st).unwrap()], 0.25);
        // Unvisited row is all zero.
        assert!(t.transition_row(t.index_of(&a_st).unwrap(), 0).iter().all(|&p| p == 0.0));
    }

    #[test]
    fn expected_reward_averages_the_observed_values() {
        let rewards = tiny_rewards();
        let mut t = CountTensor::new(1, 4);
        let s = StateId::empty();
        let d = StateId::from_obs(&[1]);
        t.record(&s, 0, &d, 1);
        t.record(&s, 0, &d, 3);
        let (si, di) = (t.index_of(&s).unwrap(), t.index_of(&d).unwrap());
        assert_eq!(t.expected_reward(si, 0, di, &rewards), Some(2.0));
        assert_eq!(t.expected_reward(di, 0, si, &rewards), None);
    }

    #[test]
    fn tiny_phi2_cell_reward_is_deterministic() {
        let mut rng = StdRng::seed_from_u64(2);
        let obs: Vec<usize> = (0..2000).map(|_| rng.gen_range(0..2)).collect();
        let h = history_from_obs(&obs);
        let t = CountTensor::from_history(&FeatureMap::k_order(2), &h);
        let s01 = t.index_of(&StateId::from_obs(&[0, 1])).unwrap();
        let s11 = t.index_of(&StateId::from_obs(&[1, 1])).unwrap();
        assert_eq!(t.expected_reward(s01, 0, s11, &tiny_rewards()), Some(3.0));
    }

    #[test]
    fn exploration_extension_builds_proper_rows() {
        let rewards = tiny_rewards();
        let mut t = CountTensor::new(2, 4);
        let s = StateId::from_obs(&[0]);
        let d = StateId::from_obs(&[1]);
        for _ in 0..9 {
            t.record(&s, 0, &d, 1);
        }
        let mdp = t.extend_for_exploration(30.0, 0.9, &rewards, &[]);
        let si = mdp.index_of(&s).unwrap();
        let e = mdp.index_of(&StateId::Exploration).unwrap();

        // (s, 0) has 9 real transitions: phantom mass 1/10.
        let row = mdp.row(si, 0);
        let to_e = row.iter().find(|&&(dst, _, _)| dst == e).unwrap();
        assert!((to_e.1 - 0.1).abs() < 1e-12);
        assert_eq!(to_e.2, 30.0);

        // Unvisited (s, 1): point mass on e.
        let row = mdp.row(si, 1);
        assert_eq!(row.len(), 1);
        assert_eq!(row[0], (e, 1.0, 30.0));

        // e is absorbing with the bonus reward under every action.
        for a in 0..2 {
            assert_eq!(mdp.row(e, a), &[(e, 1.0, 30.0)]);
            assert!((mdp.row_mass(e, a) - 1.0).abs() < 1e-12);
        }
        // Every row is a proper distribution.
        for s in 0..mdp.num_states() {
            for a in 0..2 {
                assert!((mdp.row_mass(s, a) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn extension_registers_extra_states() {
        let rewards = tiny_rewards();
        let t = CountTensor::new(1, 4);
        let current = StateId::from_obs(&[1]);
        let mdp = t.extend_for_exploration(5.0, 0.5, &rewards, std::slice::from_ref(&current));
        let si = mdp.index_of(&current).unwrap();
        let e = mdp.index_of(&StateId::Exploration).unwrap();
        assert_eq!(mdp.row(si, 0), &[(e, 1.0, 5.0)]);
    }

    #[test]
    fn estimates_converge_on_a_seeded_ergodic_mdp() {
        // 3 hidden states, 2 actions; rewards indexed by destination parity.
        let true_t = [
            [[0.7, 0.2, 0.1], [0.1, 0.6, 0.3]],
            [[0.3, 0.3, 0.4], [0.5, 0.25, 0.25]],
            [[0.2, 0.5, 0.3], [0.4, 0.1, 0.5]],
        ];
        let mut rng = StdRng::seed_from_u64(99);
        let mut t = CountTensor::new(2, 2);
        let states: Vec<StateId> = (0..3).map(|i| StateId::from_obs(&[i])).collect();
        let ids: Vec<usize> = states.iter().map(|s| t.intern(s)).collect();
        let mut cur = 0usize;
        for _ in 0..100_000 {
            let a = rng.gen_range(0..2);
            let u: f64 = rng.gen();
            let probs = &true_t[cur][a];
            let next = if u < probs[0] {
                0
            } else if u < probs[0] + probs[1] {
                1
            } else {
                2
            };
            t.record_idx(ids[cur], a, ids[next], next % 2);
            cur = next;
        }
        for s in 0..3 {
            for a in 0..2 {
                let row = t.transition_row(ids[s], a);
                for d in 0..3 {
                    assert!(
                        (row[ids[d]] - true_t[s][a][d]).abs() <= 0.02,
                        "T({s},{a},{d}) = {} vs {}",
                        row[ids[d]],
                        true_t[s][a][d]
                    );
                }
            }
        }
    }

    #[test]
    fn provisional_states_flow_through_context_tree_counts() {
        let map = ContextTreeMap::from_suffixes(2, vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![1, 1]]).unwrap();
        let phi = FeatureMap::context_tree(map);
        let h = history_from_obs(&[1, 0, 1]);
        let t = CountTensor::from_history(&phi, &h);
        // t=1 state is the provisional "1".
        assert!(t.index_of(&StateId::from_obs(&[1])).is_some());
        assert_eq!(t.total(), 2);
    }
}
