//! End-to-end studies: membership audits, neural-code detection,
//! attribution by classification and by single-instance scoring, and
//! attribution verification with kernel two-sample tests.
//!
//! Each pipeline is a deterministic function of its records, configuration
//! and seed. Scoring steps only see unlabeled feature views; labels are
//! attached afterwards for evaluation.

mod attribution;
pub mod config;
mod detection;
mod membership;
mod robustness;
mod verification;

pub use attribution::{
    run_attribution_classification, run_likelihood_attribution, run_oneclass_attribution,
    CalibratedOutcome, ClassificationConfig, OneClassConfig, SingleInstanceConfig,
};
pub use detection::{run_detection, DetectionConfig};
pub use membership::{membership_scores, run_membership_audit, AuditConfig};
pub use robustness::{run_sampling_shift, SamplingShiftConfig};
pub use verification::{
    run_attribution_verification, PowerSweep, VerificationJob, VerificationOutcome,
    POWER_SWEEP_SIZES,
};
