//! Generation metrics for sets of avatars.
//!
//! Avatars are compared through renders under a fixed [`ProbeSet`], either
//! by negated PSNR or by the perceptual proxy distance. [`sets`] turns the
//! resulting distance matrices into MMD, COV, and 1-NNA.

pub mod error;
pub mod probe;
pub mod report;
pub mod sets;

pub use error::{MetricsError, Result};
pub use probe::{avatar_distance, psnr, ProbeConfig, ProbeRenders, ProbeSet, PSNR_CAP_DB};
pub use report::{evaluate, evaluate_records, load_records, MetricReport};
pub use sets::{cov, mmd, one_nna, DistanceMatrix, Metric};
