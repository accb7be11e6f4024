//! Discounted value iteration on the estimated MDP.
//!
//! Synchronous (Jacobi) sweeps for reproducibility: every sweep computes all
//! Q values from the previous V, so results do not depend on state order.

use crate::counts::MdpEstimate;
use crate::error::{Error, Result};
use crate::feature::StateId;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Fixed point of the Bellman optimality operator, with convergence
/// diagnostics.
#[derive(Debug, Clone)]
pub struct ValueSolution {
    states: Vec<StateId>,
    num_actions: usize,
    v: Vec<f64>,
    q: Vec<f64>,
    pub gamma: f64,
    pub iterations: usize,
    /// Final sup-norm change; exceeds the tolerance only when the iteration
    /// cap was hit.
    pub residual: f64,
    pub converged: bool,
}

impl ValueSolution {
    pub fn states(&self) -> &[StateId] {
        &self.states
    }

    pub fn value_by_index(&self, s: usize) -> f64 {
        self.v[s]
    }

    pub fn q_by_index(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.num_actions + a]
    }

    pub fn value(&self, s: &StateId) -> Option<f64> {
        self.states.iter().position(|x| x == s).map(|i| self.v[i])
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    /// The Q-maximizing action in `s`; ties break to the lowest index.
    pub fn greedy_action(&self, s: &StateId) -> Result<usize> {
        let idx = self
            .states
            .iter()
            .position(|x| x == s)
            .ok_or_else(|| Error::UnknownState(s.to_string()))?;
        Ok(self.greedy_action_by_index(idx))
    }

    pub fn greedy_action_by_index(&self, s: usize) -> usize {
        let row = &self.q[s * self.num_actions..(s + 1) * self.num_actions];
        let mut best = 0usize;
        for (a, &q) in row.iter().enumerate().skip(1) {
            if q > row[best] {
                best = a;
            }
        }
        best
    }

    /// Debug dump `s,V,Q_0,...`.
    pub fn dump_csv(&self) -> String {
        let mut out = String::from("s,V");
        for a in 0..self.num_actions {
            out.push_str(&format!(",Q_{a}"));
        }
        out.push('\n');
        for (i, s) in self.states.iter().enumerate() {
            out.push_str(&format!("{s},{}", self.v[i]));
            for a in 0..self.num_actions {
                out.push_str(&format!(",{}", self.q_by_index(i, a)));
            }
            out.push('\n');
        }
        out
    }
}

fn validate(mdp: &MdpEstimate) -> Result<()> {
    let gamma = mdp.gamma();
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidGamma(gamma));
    }
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let mass = mdp.row_mass(s, a);
            if (mass - 1.0).abs() > 1e-9 {
                return Err(Error::NonStochasticRow {
                    state: mdp.states()[s].to_string(),
                    action: a,
                    sum: mass,
                });
            }
        }
    }
    Ok(())
}

/// Solves the Bellman optimality equations by synchronous fixed-point
/// iteration from `v0`, stopping when the sup-norm change drops to `tol` or
/// after `max_iter` sweeps (the result is then flagged unconverged).
pub fn value_iteration_from(
    mdp: &MdpEstimate,
    v0: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<ValueSolution> {
    validate(mdp)?;
    let (m, na, gamma) = (mdp.num_states(), mdp.num_actions(), mdp.gamma());
    if v0.len() != m {
        return Err(Error::DimensionMismatch(format!("warm start has {} values for {m} states", v0.len())));
    }
    let mut v = v0;
    let mut q = vec![0.0f64; m * na];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        residual = 0.0;
        for s in 0..m {
            for a in 0..na {
                let mut sum = 0.0;
                for &(d, p, r) in mdp.row(s, a) {
                    sum += p * (r + gamma * v[d]);
                }
                q[s * na + a] = sum;
            }
        }
        for s in 0..m {
            let row = &q[s * na..(s + 1) * na];
            let new_v = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let change = (new_v - v[s]).abs();
            if change > residual {
                residual = change;
            }
            v[s] = new_v;
        }
        if residual <= tol {
            break;
        }
    }
    Ok(ValueSolution {
        states: mdp.states().to_vec(),
        num_actions: na,
        v,
        q,
        gamma,
        iterations,
        converged: residual <= tol,
        residual,
    })
}

/// [`value_iteration_from`] starting at V ≡ 0.
pub fn value_iteration(mdp: &MdpEstimate, tol: f64, max_iter: usize) -> Result<ValueSolution> {
    value_iteration_from(mdp, vec![0.0; mdp.num_states()], tol, max_iter)
}
