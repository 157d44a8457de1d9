//! Sub-trajectory retrieval engine.
//!
//! Given a handful of target demonstrations and a large prior dataset of
//! embedded robot trajectories, this crate segments the targets into atomic
//! chunks at low-velocity transition states, matches every chunk against
//! every prior trajectory with subsequence dynamic time warping over an
//! embedding cost metric, selects the cheapest K matches uniformly across
//! chunks, and exports the retrieved slices (plus the targets) as a new
//! dataset ready for downstream training.
//!
//! The crate also ships exhaustive brute-force DTW oracles, a planted-skill
//! synthetic benchmark with the non-learned retrieval baselines, and a
//! wall-clock scaling benchmark for the retrieval step.

pub mod bench;
pub mod dataset;
pub mod dtw;
pub mod matrix;
pub mod retrieval;
pub mod segmentation;
pub mod synth;

pub use dataset::{
    average_views, load_dataset, validate_dataset, write_dataset, Dataset, Role, SubTrajectoryRef,
    Trajectory, ValidationReport,
};
pub use dtw::{
    brute_force_dtw, brute_force_sdtw, cost_matrix, dtw, sdtw, CostMatrix, DistanceMetric,
    SdtwHit, WarpPath,
};
pub use matrix::Matrix;
pub use retrieval::{
    export_retrieval, match_all, retrieval_report, retrieve, select_top_k, Match, MatchTable,
    RetrievalConfig, RetrievalResult, DEFAULT_K,
};
pub use segmentation::{
    calibrate_epsilon, compute_speeds, merge_short_chunks, segment_dataset, segment_trajectory,
    Segmentation, SegmentationConfig, DEFAULT_MIN_LEN,
};
pub use synth::{
    baseline_full_trajectory, baseline_state_retrieval, evaluate, generate_synthetic, EvalMetrics,
    GroundTruth, SynthConfig,
};
