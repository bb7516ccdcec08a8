//! Membership-inference auditing for federated classifiers trained with and
//! without differential privacy.
//!
//! The crate covers the whole audit loop: a synthetic federated scenario
//! ([`data`]), target training with plain SGD or DP-SGD ([`target`]), privacy
//! accounting ([`accountant`]), a FedAvg utility simulation ([`fl`]), seven
//! base membership estimators ([`estimators`]), the stacking attack with
//! per-client adaptation ([`stacking`]), three comparison attacks
//! ([`baselines`]), metrics ([`eval`]) and an end-to-end runner
//! ([`pipeline`]).

pub mod accountant;
pub mod baselines;
pub mod data;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod fl;
pub mod pipeline;
pub mod stacking;
pub mod target;
pub mod util;

pub use error::{Error, Result};
