//! Decentralized cooperative multi-agent reinforcement learning with
//! pre-trained belief states.
//!
//! Training runs in two stages. First, a conditional variational autoencoder
//! per agent learns `p(s | h_i)` from a small, state-labelled dataset of random
//! roll-outs ([`belief`], [`data`]). Second, every agent trains a state-state
//! value function, a transition model and a belief-conditioned Q-function from
//! its own local experience only ([`i2q`]). Two recurrent baselines live in
//! [`baselines`]; [`harness`] ties everything together into seeded experiments.
//!
//! Stage-two learners only ever see agent-local data. A sampled transition has
//! no state field:
//!
//! ```compile_fail
//! fn peek(t: &belief_marl::data::LocalTransition<'_>) {
//!     let _ = t.state;
//! }
//! ```
//!
//! and an agent's view of the replay buffer cannot be redirected to another
//! agent's trajectories:
//!
//! ```compile_fail
//! fn peek(view: &belief_marl::data::AgentView<'_>) {
//!     let _ = view.buffer;
//! }
//! ```

pub mod baselines;
pub mod belief;
pub mod checkpoint;
pub mod dec_pomdp;
pub mod envs;
pub mod data;
pub mod error;
pub mod harness;
pub mod i2q;
pub mod learner;
pub mod nn;
pub mod seeding;

pub use error::{Error, Result};
