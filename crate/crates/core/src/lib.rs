//! Set-valued fan-out retrieval trained from rewards.
//!
//! The crate is organised as the three stages of the method plus the
//! supporting pieces they share:
//!
//! * [`numerics`] and [`store`]: dense linear algebra, an exact
//!   nearest-neighbour embedding store and synthetic Gaussian-mixture worlds.
//! * [`rewards`], [`policy`] and [`grpo`]: set-level rewards, a categorical
//!   fan-out policy and the group-relative soft-PPO trainer.
//! * [`synth`]: harvesting trained-policy rollouts into coherent target
//!   tensors.
//! * [`diffusion`]: a variance-exploding denoiser with EDM preconditioning,
//!   classifier-free guidance and a probability-flow sampler.
//! * [`evalbench`]: coverage/diversity metrics, arm comparison and the
//!   latency harness.

pub mod diffusion;
pub mod error;
pub mod evalbench;
pub(crate) mod format;
pub mod grpo;
pub mod numerics;
pub mod policy;
pub mod rewards;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
