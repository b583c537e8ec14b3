//! Slot-level simulation of an 802.11 DCF primary sharing its channel with a
//! cognitive secondary that learns, from a single constraint-feedback bit,
//! when to stay silent and which backoff counter to use.
//!
//! * [`primary`]: the primary's DCF state machine.
//! * [`agent`] and [`secondary`]: the Q-learning secondary and its slot mechanics.
//! * [`sim`]: the slotted clock, decode arbitration and traces.
//! * [`metrics`]: throughputs, drop ratios and the feedback bit.
//! * [`baselines`]: stationary policies and the grid-search oracle.
//! * [`experiment`]: sweeps and CSV artifacts.

mod access;
pub mod agent;
pub mod baselines;
pub mod config;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod primary;
pub mod rng;
pub mod secondary;
pub mod sim;

pub use agent::{ActionCompletion, ActionId, AgentController, Decision, QLearner, RewardVector};
pub use baselines::{grid_search, uniform_policy, GridResult, PolicyVector, StationaryExecutor};
pub use config::{ConstraintMode, FeedbackCadence, LearnerParams, SimConfig, StepIndex};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ActionTally, ExperimentSpec, PolicyKind};
pub use metrics::{failure_ratio, feedback_bit, theta_p_max, throughput, MetricsAccumulator};
pub use primary::{PrimaryPhase, PrimaryState};
pub use sim::{run_simulation, simulate, SimOptions, SimulationTrace, SlotOutcome};
