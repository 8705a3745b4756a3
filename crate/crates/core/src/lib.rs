//! Self-supervised semantic communication over multipath OFDM channels: configuration,
//! data handling, channel simulation, networks, training stages, digital baselines and
//! the experiment harness.

pub mod augment;
pub mod channel;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod digital;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod link;
pub mod losses;
pub mod nn;
pub mod pretrain;
pub mod seed;

pub use error::{Error, Result};
