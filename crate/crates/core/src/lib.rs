//! Simulation and estimation core for fitting-based low-frequency Ramsey
//! magnetometry with a single N-V center.
//!
//! The pipeline is: a [`field::FieldModel`] is sampled by a
//! [`protocol::SequencePlan`] of fixed-delay Ramsey windows, mapped to
//! readout by an [`nvmodel::SignalModel`], perturbed with shot noise by
//! [`simulate::run_qscope`], and fitted back with [`fit::fit_trace`], whose
//! standard errors feed the [`sensitivity`] machinery.
//!
//! The crate is `no_std` with `alloc`. Parallelism is injected through
//! [`montecarlo::Executor`].

#![no_std]
// `!(x > 0.0)` deliberately rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod calibration;
pub mod error;
pub mod field;
pub mod fit;
pub mod lm;
pub mod montecarlo;
pub mod nvmodel;
pub mod protocol;
pub mod quadrature;
pub mod sensitivity;
pub mod simulate;
pub mod spectral;

pub use error::{Error, Result};
pub use field::{FieldModel, Tone};
pub use fit::{FitResult, FitTemplate};
pub use nvmodel::{DualTransitionModel, NvParams, ReadoutAxis, SignalModel};
pub use protocol::SequencePlan;
pub use simulate::{NoiseKind, ShotNoise, Trace, TracePoint};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
