//! PAC reinforcement learning on discounted tabular MDPs.
//!
//! Two multi-stage optimistic Q-learners, two baselines, a schedule builder,
//! benchmark environments, and a harness that counts epsilon-suboptimal steps
//! exactly against the true MDP.

pub mod agents;
pub mod env;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod schedule;

pub use agents::{Agent, AgentKind, AgentSpec, AnyAgent, UpdateEvent, UpdateKind};
pub use env::{EnvInstance, EnvSpec};
pub use error::{Error, Result};
pub use harness::{run, run_with, RunConfig, RunResult};
pub use mdp::{Policy, QFunction, TabularMdp, ValueFunction};
pub use schedule::{ScheduleParams, StageSchedule, Variant};
