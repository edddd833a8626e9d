//! Full Bayesian Significance Test (FBST) for conditional independence of
//! discrete variables.
//!
//! The hypothesis `Y ⊥ Z | X` is split into one independence hypothesis per
//! observed value of `X`. Each slice gets a Dirichlet posterior over its
//! `r×c` contingency table, a constrained maximum under the independence
//! factorization, and a Monte Carlo truth function (the CDF of the posterior
//! log-density). Elementary e-values are read off each truth function; the
//! composite e-value comes from convolving the truth functions in log space
//! and condensing back to a fixed bin budget after every step.
//!
//! Module map:
//!
//! - [`tables`]: CSV ingestion, CPT models, synthetic sampling, slicing into
//!   contingency tables.
//! - [`posterior`]: Dirichlet posterior, log-density, sampling, constrained MAP.
//! - [`truthfn`]: truth-function estimation and elementary e-values.
//! - [`convolution`]: log-space convolution, horizontal and vertical
//!   condensation, the log-normal reference.
//! - [`fbst`]: the end-to-end test and its report.

pub mod convolution;
pub mod error;
pub mod fbst;
pub mod posterior;
mod streams;
pub mod tables;
pub mod truthfn;

pub use convolution::{
    composite_evalue, composite_evalue_relative, composite_truth_function, condense_horizontal,
    condense_vertical, convolve, lognormal_reference, RawConvolution,
};
pub use error::{Error, Result};
pub use fbst::{ci_test, ci_test_from_tables, CiTestSpec, EvalueReport, ModeSelection};
pub use posterior::{
    constrained_map, Alpha, ConstrainedMap, DirichletPosterior, MapStatus, SimplexPoint,
};
pub use tables::{
    contingency_slices, ingest_csv, sample_dataset, ContingencyTable, CptModel, Dataset,
};
pub use truthfn::{
    elementary_evalue, estimate_truth_function, AxisMode, Bin, Evalue, TruthFunction,
};

/// Version string embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
