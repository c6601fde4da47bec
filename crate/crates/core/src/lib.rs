//! Simulation laboratory for Bell-CHSH experiments and the statistics around
//! them: exact singlet predictions, local, stochastic and contextual
//! hidden-variable models, spreadsheet CHSH arithmetic, quadruple
//! reshuffling, coincidence-window post-selection, Bertrand chord protocols
//! and purity / fine-structure tests for outcome time series.
//!
//! All randomness flows through [`rng::Substreams`], so every result is a
//! pure function of its seed and configuration regardless of thread count.

pub mod bertrand;
pub mod chsh;
pub mod coincidence;
pub mod completeness;
pub mod error;
pub mod experiment;
pub mod io;
pub mod models;
pub mod quantum;
pub mod reshuffle;
pub mod rng;
pub mod stats;

pub use chsh::{ChshReport, Design, SettingContext, SettingPair};
pub use error::{Error, Result};
pub use models::{Family, ModelSpec};
