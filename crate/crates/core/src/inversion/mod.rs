//! Monotonicity relations, localized potentials, inclusion detection and
//! monotonicity-based reconstruction.

mod detection;
mod locpot;
mod monotonicity;
mod reconstruction;

pub use detection::{
    ball_dictionary, closed_set_dictionary, detect_definite, detect_indefinite, test_definite_ball,
    test_indefinite, Candidate, CandidateResult, DPolicy, DefiniteDirection, DetectionConfig,
    DetectionMode, DetectionResult, TestOutcome, MAX_DICTIONARY,
};
pub use locpot::{
    localized_potential, localized_potential_with, masked_energy, simultaneous_localized_potential,
    LocPotResult,
};
pub use monotonicity::{
    converse_check, linearized_converse_check, monotonicity_gap, testing_operator, ConverseReport,
    LinearizedReport, MonotonicityGap, PointwiseOrder,
};
pub use reconstruction::{reconstruct_monotone, CellEstimate, Reconstruction, MAX_SWEEPS};
