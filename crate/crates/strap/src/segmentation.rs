//! Velocity-based splitting of demonstrations into atomic sub-trajectories.
//!
//! A timestep is a transition when the end-effector speed is strictly below
//! a threshold on both sides. Each maximal run of consecutive transitions is
//! collapsed to its midpoint, the trajectory is cut there, and chunks below
//! the minimum length are merged into their shorter neighbor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, SubTrajectoryRef, Trajectory};
use crate::matrix::Matrix;

/// Minimum chunk length applied after cutting.
pub const DEFAULT_MIN_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    /// Speed threshold in meters per timestep. Speeds strictly below mark
    /// transition states.
    pub epsilon: f64,
    /// Chunks shorter than this are merged into a neighbor.
    pub min_len: usize,
}

impl SegmentationConfig {
    pub fn new(epsilon: f64) -> Self {
        SegmentationConfig {
            epsilon,
            min_len: DEFAULT_MIN_LEN,
        }
    }
}

/// A trajectory partitioned into contiguous chunks covering `[0, H)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub trajectory_id: String,
    pub chunks: Vec<SubTrajectoryRef>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("trajectory {id} has H={len}, need at least 2 timesteps")]
    TooShort { id: String, len: usize },
    #[error("proprio has {found} columns, need at least 3 for XYZ position")]
    TooFewProprioColumns { found: usize },
    #[error("invalid segmentation config: {0}")]
    InvalidConfig(String),
}

/// Per-step end-effector speeds: `speed[t]` is the Euclidean norm of
/// `position[t+1] - position[t]` over the first 3 proprio columns, for
/// `t` in `[0, H-1)`.
pub fn compute_speeds(proprio: &Matrix) -> Result<Vec<f64>, SegmentError> {
    if proprio.rows() < 2 {
        return Err(SegmentError::TooShort {
            id: String::new(),
            len: proprio.rows(),
        });
    }
    if proprio.cols() < 3 {
        return Err(SegmentError::TooFewProprioColumns {
            found: proprio.cols(),
        });
    }
    let mut speeds = Vec::with_capacity(proprio.rows() - 1);
    for t in 0..proprio.rows() - 1 {
        let a = proprio.row(t);
        let b = proprio.row(t + 1);
        let mut acc = 0.0f64;
        for d in 0..3 {
            let diff = f64::from(b[d]) - f64::from(a[d]);
            acc += diff * diff;
        }
        speeds.push(acc.sqrt());
    }
    Ok(speeds)
}

/// Cut positions derived from the speed profile: interior timestep `t` is a
/// transition iff `speed[t-1] < epsilon` and `speed[t] < epsilon`; each
/// maximal run of transitions collapses to the floor of its mean index.
pub fn transition_cuts(speeds: &[f64], epsilon: f64) -> Vec<usize> {
    let h = speeds.len() + 1;
    let mut cuts = Vec::new();
    let mut run_start: Option<usize> = None;
    let mut prev: Option<usize> = None;
    for t in 1..h.saturating_sub(1) {
        let is_transition = speeds[t - 1] < epsilon && speeds[t] < epsilon;
        if is_transition {
            if run_start.is_none() {
                run_start = Some(t);
            }
            prev = Some(t);
        } else if let (Some(s), Some(e)) = (run_start.take(), prev.take()) {
            cuts.push((s + e) / 2);
        }
    }
    if let (Some(s), Some(e)) = (run_start, prev) {
        cuts.push((s + e) / 2);
    }
    cuts
}

/// The set of transition timesteps themselves (before run collapsing).
/// Grows monotonically with `epsilon`.
pub fn transition_states(speeds: &[f64], epsilon: f64) -> Vec<usize> {
    let h = speeds.len() + 1;
    (1..h.saturating_sub(1))
        .filter(|&t| speeds[t - 1] < epsilon && speeds[t] < epsilon)
        .collect()
}

/// Repeatedly merges the shortest chunk below `min_len` into its shorter
/// neighbor (ties to the right) until every chunk reaches `min_len` or a
/// single chunk remains. Contiguity and coverage of `[0, H)` are preserved.
pub fn merge_short_chunks(
    mut chunks: Vec<SubTrajectoryRef>,
    min_len: usize,
) -> Vec<SubTrajectoryRef> {
    loop {
        if chunks.len() <= 1 {
            return chunks;
        }
        let victim = chunks
            .iter()
            .enumerate()
            .filter(|(_, c)| c.len() < min_len)
            .min_by_key(|(i, c)| (c.len(), *i));
        let Some((i, _)) = victim else {
            return chunks;
        };
        let merge_right = if i == 0 {
            true
        } else if i + 1 == chunks.len() {
            false
        } else {
            // Shorter neighbor wins; equal lengths go right.
            chunks[i + 1].len() <= chunks[i - 1].len()
        };
        if merge_right {
            chunks[i].end = chunks[i + 1].end;
            chunks.remove(i + 1);
        } else {
            chunks[i - 1].end = chunks[i].end;
            chunks.remove(i);
        }
    }
}

/// Splits a trajectory at collapsed low-speed runs and merges short chunks.
pub fn segment_trajectory(
    traj: &Trajectory,
    cfg: &SegmentationConfig,
) -> Result<Segmentation, SegmentError> {
    if cfg.min_len < 1 {
        return Err(SegmentError::InvalidConfig("min_len must be >= 1".into()));
    }
    if cfg.epsilon.is_nan() || cfg.epsilon < 0.0 {
        return Err(SegmentError::InvalidConfig(
            "epsilon must be >= 0".into(),
        ));
    }
    let h = traj.len();
    if h < 2 {
        return Err(SegmentError::TooShort {
            id: traj.id.clone(),
            len: h,
        });
    }
    let speeds = compute_speeds(&traj.proprio).map_err(|e| match e {
        SegmentError::TooShort { len, .. } => SegmentError::TooShort {
            id: traj.id.clone(),
            len,
        },
        other => other,
    })?;
    let cuts = transition_cuts(&speeds, cfg.epsilon);

    let mut chunks = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for cut in cuts {
        chunks.push(SubTrajectoryRef::new(traj.id.clone(), start, cut));
        start = cut;
    }
    chunks.push(SubTrajectoryRef::new(traj.id.clone(), start, h));

    Ok(Segmentation {
        trajectory_id: traj.id.clone(),
        chunks: merge_short_chunks(chunks, cfg.min_len),
    })
}

/// Segments every trajectory of a dataset, in manifest order.
pub fn segment_dataset(
    d: &Dataset,
    cfg: &SegmentationConfig,
) -> Result<Vec<Segmentation>, SegmentError> {
    d.trajectories
        .iter()
        .map(|t| segment_trajectory(t, cfg))
        .collect()
}

/// Calibration recipe for the speed threshold: the 10th percentile of all
/// observed speeds across the dataset.
pub fn calibrate_epsilon(d: &Dataset) -> Result<f64, SegmentError> {
    let mut speeds = Vec::new();
    for t in &d.trajectories {
        speeds.extend(compute_speeds(&t.proprio)?);
    }
    if speeds.is_empty() {
        return Err(SegmentError::TooShort {
            id: d.name.clone(),
            len: 0,
        });
    }
    speeds.sort_by(f64::total_cmp);
    let idx = ((speeds.len() - 1) as f64 * 0.10).floor() as usize;
    Ok(speeds[idx])
}
