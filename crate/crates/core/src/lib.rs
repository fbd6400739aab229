//! Goal-conditioned reinforcement learning built around a planning
//! quasi-metric (PQM) and task-specific aimers.
//!
//! The crate is organized as a small stack of modules:
//!
//! - [`nn`]: dense ReLU MLPs with exact reverse-mode gradients, Adam, and
//!   polyak-averaged target copies. Every learned object here is one of
//!   these.
//! - [`envs`]: the bit-flip and point-mass environments, goal/task types,
//!   the goal-set distance and validity penalties, and exact step-count
//!   oracles used for evaluation.
//! - [`replay`]: episode-structured replay with hindsight ("future")
//!   relabeling, producing batches for both the PQM and the DQN baseline.
//! - [`pqm`]: the quasi-metric critic, its Bellman-style update, and the
//!   discrete/continuous actors.
//! - [`aimer`]: the model mapping (state, goal) to a target state, trained
//!   through the frozen critic with distance and validity penalties.
//! - [`dqn`]: the goal-conditioned DQN+HER baseline.
//! - [`harness`]: training loop, evaluation protocols, transfer,
//!   checkpointing, metrics CSV emission.
//!
//! All numeric kernels are generic over the scalar type via [`Scalar`]
//! (`f32` or `f64`). The harness and its file formats pin [`Real`] = `f64`;
//! the aliases below fix that choice in one place.

pub mod aimer;
pub mod dqn;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod num;
pub mod pqm;
pub mod replay;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use num::Scalar;

/// Scalar type used by the harness, checkpoints, and the CLI.
pub type Real = f64;

/// Concrete aliases at the default precision.
pub type Mlp = nn::Mlp<Real>;
pub type Gradient = nn::Gradient<Real>;
pub type AdamState = nn::AdamState<Real>;
pub type State = envs::State<Real>;
pub type Goal = envs::Goal<Real>;
pub type Task = envs::Task<Real>;
pub type Action = envs::Action<Real>;
pub type EnvInstance = envs::EnvInstance<Real>;
pub type Episode = replay::Episode<Real>;
pub type ReplayBuffer = replay::ReplayBuffer<Real>;
pub type Critic = pqm::Critic<Real>;
pub type Actor = pqm::Actor<Real>;
pub type Aimer = aimer::Aimer<Real>;
pub type QNetwork = dqn::QNetwork<Real>;
