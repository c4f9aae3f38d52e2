//! Conformal claim filtering with distribution-free factuality guarantees.
//!
//! A response is decomposed into scored claims. Filtering keeps the claims
//! whose score exceeds a threshold calibrated on annotated data, so that
//! with probability at least `1 - alpha` the kept claims carry a cumulative
//! loss of at most `lambda`.
//!
//! Everything that touches scores is generic over [`Scalar`] (`f32` or
//! `f64`); the aliases below fix the common `f64` and `f32` instantiations.

pub mod calibration;
pub mod error;
pub mod harness;
pub mod io;
pub mod loss;
pub mod record;
pub mod scalar;
pub mod seeding;
pub mod sim;

pub use calibration::{
    apply, calibrate, conformity_score, filter_claims, merge_claims, quantile_rank, CalibrationArtifact,
    ConformityValue, FilteredResponse, ScoredResponse, ABSTAIN_MARKER,
};
pub use error::{Error, ErrorKind, Result};
pub use harness::{
    calibration_size_study, evaluate_claim_metrics, random_filter_baseline, run_split_experiment, sweep,
    EvaluationReport, Execution, Method, SplitPlan,
};
pub use loss::{claim_loss, response_loss, ClaimAnnotation, ClaimLoss, ErrorType, LossSpec, LossTolerance};
pub use record::{ClaimRecord, ResponseRecord};
pub use scalar::Scalar;
pub use sim::{brute_force_conformity, generate, verify_theorem, GeneratorConfig, TheoremCheck, TheoremCheckResult};

pub type ClaimRecord64 = ClaimRecord<f64>;
pub type ResponseRecord64 = ResponseRecord<f64>;
pub type FilteredResponse64 = FilteredResponse<f64>;
pub type CalibrationArtifact64 = CalibrationArtifact<f64>;
pub type ConformityValue64 = ConformityValue<f64>;

pub type ClaimRecord32 = ClaimRecord<f32>;
pub type ResponseRecord32 = ResponseRecord<f32>;
pub type FilteredResponse32 = FilteredResponse<f32>;
pub type CalibrationArtifact32 = CalibrationArtifact<f32>;
pub type ConformityValue32 = ConformityValue<f32>;
