//! Multi-target delay, Doppler, angle and gain estimation for bistatic OFDM
//! sensing through a beyond-diagonal reconfigurable intelligent surface.
//!
//! The pipeline has two stages. The received pilots are right-filtered by the
//! RIS schedule and reduced to a rank-K Kronecker-sum approximation
//! ([`ksa`]). Two third-order tensors built from that approximation are then
//! fitted in parallel by PARAFAC and nested-PARAFAC alternating least squares
//! ([`ntfe`]), and [`extraction`] turns the factors into physical parameters.
//! [`crlb`] provides the Cramér-Rao reference and [`harness`] runs Monte Carlo
//! experiments.

pub mod crlb;
pub mod error;
pub mod extraction;
pub mod harness;
pub mod ksa;
pub mod linalg;
pub mod ntfe;
pub mod scenario;
pub mod tensor;

pub use crlb::{CrlbReport, FimMatrix, ParamVector};
pub use error::{Error, Result};
pub use extraction::{EstimateReport, TargetEstimate};
pub use faer::c64;
pub use harness::{Estimator, ExperimentConfig, MetricReport};
pub use ksa::{FilteredSignal, KsaFactors};
pub use linalg::CMat;
pub use ntfe::{AlsOptions, AngularFactors, DelayDopplerFactors, InitMethod};
pub use scenario::{ArrayGeometry, RisMode, ScenarioConfig, Scene, TargetParams};
pub use tensor::{Mode, ParafacFactors3, Tensor3};
