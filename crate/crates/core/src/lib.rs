//! Policy-gradient learning with variance-reduced experience replay.
//!
//! Past transitions are reused when their importance-weighted gradient
//! variance stays within a constant factor of the on-policy variance, and the
//! selected batches are pooled under a mixture likelihood ratio. The guide in
//! `book/` walks through the pieces; start with [`agent::train`] or the
//! `vrer` binary.
//!
//! | module | contents |
//! |---|---|
//! | [`nn`] | dense networks with reverse-mode gradients, SGD and Adam |
//! | [`policy`] | actor-critic models with softmax or clamped-Gaussian heads |
//! | [`env`] | CartPole, Acrobot and fed-batch fermentation |
//! | [`replay`] | transition store with an incremental likelihood cache |
//! | [`estimator`] | likelihood ratios, trace variances and the reuse rule |
//! | [`agent`] | Actor-Critic and PPO training loops |
//! | [`harness`] | macro-replications, curves and comparisons |

pub mod agent;
pub mod env;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod nn;
pub mod policy;
pub mod replay;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/likelihood-ratios.md")]
    mod likelihood_ratios {}
    #[doc = include_str!("../../../book/src/selection.md")]
    mod selection {}
    #[doc = include_str!("../../../book/src/replay-store.md")]
    mod replay_store {}
    #[doc = include_str!("../../../book/src/policies.md")]
    mod policies {}
    #[doc = include_str!("../../../book/src/environments.md")]
    mod environments {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
}
