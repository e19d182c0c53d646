//! Offline reinforcement learning for notification send decisions.

pub mod error;
pub mod mdp;
pub mod numerics;
pub mod ope;
pub mod pipeline;
pub mod reward;
pub mod sim;
pub mod trainer;

pub use error::{Error, Result};
