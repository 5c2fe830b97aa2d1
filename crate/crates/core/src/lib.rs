//! Shuffle-model differentially private federated learning.
//!
//! A round runs users' updates through [`encoding`], [`selection`] and
//! [`randomizers`], seals them with [`seal`], mixes them in [`shuffler`] and
//! recovers the mean in [`analyzer`]. [`accountant`] prices the result.

pub mod accountant;
pub mod analyzer;
pub mod encoding;
pub mod error;
pub mod randomizers;
pub mod seal;
pub mod selection;
pub mod shuffler;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    GlobalModel, LocalUpdate, NormalizedVector, PrivacyParams, Protocol, ProtocolConfig,
    RandomizerKind,
};
