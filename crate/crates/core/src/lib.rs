//! Actor-learner distillation for distributed reinforcement learning.
//!
//! A large sequence model (the learner) is trained with an actor-critic
//! objective while a small recurrent model (the actor) is the only model that
//! ever acts, and is continually distilled from the learner over replayed
//! trajectories.

pub mod distill;
pub mod envs;
pub mod harness;
pub mod models;
pub mod pipeline;
pub mod rl;
pub mod tensor;
pub mod trajectory;
