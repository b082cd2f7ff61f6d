//! Oblivious kernel features.
//!
//! Non-sensitive features `x` are mapped into the RKHS of a kernel and
//! decorrelated from sensitive features `s` by subtracting a plug-in estimate
//! of the conditional mean embedding given the partition cell of `s`, then
//! adding back the global mean embedding. All computations reduce to kernel
//! evaluations, so the resulting oblivious Gram matrix drops into any kernel
//! method in place of `K`.

pub mod cond_mean;
pub mod dependence;
pub mod error;
pub mod experiment;
pub mod io;
pub mod kernel;
pub mod manifold;
pub mod models;
pub mod oblivious;
pub mod partition;
pub mod synthetic;

pub use cond_mean::CondMeanEstimator;
pub use error::{Error, Result};
pub use kernel::{gram, self_gram, KernelSpec, Matrix};
pub use models::{DualModel, Mode, Predictor};
pub use oblivious::{ObliviousGram, ObliviousTransformer, TrainingTerms};
pub use partition::Partition;
