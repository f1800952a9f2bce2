//! Co-worker networks of surgical service providers and their relation to
//! postoperative complication counts.
//!
//! The crate follows one batch flow: parse and filter case records
//! ([`records`]), slice them into yearly segments, build each segment's
//! provider co-worker graph ([`netbuild`]), compute node centralities and
//! team averages ([`metrics`]), count complications from diagnosis codes
//! ([`outcomes`]), then estimate rank correlations and count regressions
//! ([`stats`]). [`pipeline`] wires the stages together and writes reports.

pub mod metrics;
pub mod netbuild;
pub mod outcomes;
pub mod pipeline;
pub mod records;
pub mod stats;
