//! Feature reinforcement learning toolkit.
//!
//! Candidate feature maps from observation-action-reward histories to MDP
//! states are scored by a minimum-description-length cost; low-cost maps are
//! found by stochastic split/merge search over context trees; the induced
//! MDP is estimated from counts, extended by an absorbing high-reward
//! exploration state, and solved by value iteration; an online agent runs
//! the whole loop against pluggable finite environments.

pub mod agent;
pub mod alphabet;
pub mod coding;
pub mod counts;
pub mod env;
pub mod error;
pub mod feature;
pub mod history;
pub mod icost;
pub mod planner;
pub mod search;

pub use agent::{run_episode, Agent, AgentConfig, EpisodeRecord, GammaSchedule};
pub use alphabet::{Alphabet, RewardAlphabet};
pub use coding::{best_phi, code_length, cost, reward_code, state_code, CostBreakdown, CostLedger};
pub use counts::{CountTensor, MdpEstimate};
pub use env::{Environment, TabularEnv, TinyExampleEnv};
pub use error::{Error, Result};
pub use feature::{ContextTreeMap, FeatureMap, KOrderMap, StateId, TreeMove};
pub use history::{parse_trace, parse_trace_str, History, TraceData};
pub use icost::{icost, parameter_count, ICostResult, PenaltyMode, UFamily};
pub use planner::{value_iteration, value_iteration_from, ValueSolution};
pub use search::{anneal, metropolis_accept, phi_improve, SearchConfig, SearchCriterion, SearchOutcome};
