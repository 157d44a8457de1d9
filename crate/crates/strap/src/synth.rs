//! Planted-skill synthetic datasets with known ground truth, the non-learned
//! retrieval baselines, and retrieval-quality scoring.
//!
//! Each skill is a fixed piecewise-linear anchor curve in embedding space
//! paired with a constant-speed 3-D position path. A trajectory concatenates
//! its task's skills; every instance is resampled with per-step speed jitter
//! and additive Gaussian noise on the embeddings. Positions are noise-free
//! and pause at skill boundaries so the velocity heuristic can find them.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Role, SubTrajectoryRef, Trajectory};
use crate::dtw::DistanceMetric;
use crate::matrix::Matrix;
use crate::retrieval::{
    match_queries, select_top_k, QueryCount, RetrievalError, RetrievalResult, RetrievedMatch,
    RunConfig,
};

/// Steps held still between consecutive skills; gives the segmentation
/// heuristic a zero-velocity run to cut at. Two held steps put the collapsed
/// cut right after the skill's final sample, so a chunk never ends in more
/// than one repeated row and noise-free self-matches stay unique.
const PAUSE_LEN: usize = 2;
/// Anchor points per skill curve.
const ANCHORS: usize = 4;
/// Nominal end-effector displacement per timestep, in meters.
const BODY_SPEED: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_skills: usize,
    /// Inclusive range of nominal skill lengths in timesteps.
    pub skill_len_range: (usize, usize),
    /// Number of prior tasks. One extra task is always generated and split
    /// out as the target.
    pub tasks: usize,
    pub skills_per_task: usize,
    pub trajectories_per_task: usize,
    pub embedding_dim: usize,
    /// Per-step speed variation in [0, 1): each phase step is scaled by a
    /// factor drawn from [1-jitter, 1+jitter].
    pub warp_jitter: f64,
    /// Standard deviation of the Gaussian noise added to embeddings.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_skills: 8,
            skill_len_range: (30, 60),
            tasks: 12,
            skills_per_task: 2,
            trajectories_per_task: 5,
            embedding_dim: 16,
            warp_jitter: 0.2,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

/// Per-timestep skill labels and per-task skill compositions. Serialized as
/// `{labels: {traj_id: [skill_id, ...]}, tasks: {task_id: [skill_id, ...]}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub labels: BTreeMap<String, Vec<usize>>,
    pub tasks: BTreeMap<String, Vec<usize>>,
}

impl GroundTruth {
    /// Distinct skills appearing anywhere in a trajectory.
    pub fn skills_of_trajectory(&self, id: &str) -> BTreeSet<usize> {
        self.labels
            .get(id)
            .map(|l| l.iter().copied().collect())
            .unwrap_or_default()
    }

    /// Attributes a trajectory to a task by matching its de-duplicated label
    /// sequence against the task compositions (smallest task id on ties).
    /// Unmatched trajectories count as their own pseudo-task.
    pub fn task_of_trajectory(&self, id: &str) -> String {
        let Some(labels) = self.labels.get(id) else {
            return format!("unknown:{id}");
        };
        let mut composition: Vec<usize> = Vec::new();
        for l in labels {
            if composition.last() != Some(l) {
                composition.push(*l);
            }
        }
        self.tasks
            .iter()
            .find(|(_, skills)| **skills == composition)
            .map(|(task, _)| task.clone())
            .unwrap_or_else(|| format!("unknown:{id}"))
    }
}

/// Retrieval quality against planted ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Fraction of retrieved timesteps whose ground-truth skill equals the
    /// query chunk's majority skill.
    pub precision_at_k: f64,
    /// Number of distinct prior tasks retrieved from.
    pub task_sparsity: usize,
    /// Fraction of retrieved timesteps from prior tasks sharing at least one
    /// skill with the target.
    pub relevant_share: f64,
    /// Retrieved-timestep share per attributed prior task.
    pub per_task_share: BTreeMap<String, f64>,
    /// Set when the result contained no matches; precision reports 0 then.
    pub empty: bool,
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    ConfigInvalid(String),
    #[error("unknown trajectory id {0:?} in ground truth lookup")]
    UnknownId(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// A skill: an embedding anchor curve plus a 3-D position anchor path with
/// near-constant speed.
struct Skill {
    nominal_len: usize,
    embedding_anchors: Vec<Vec<f64>>,
    position_anchors: Vec<[f64; 3]>,
}

impl Skill {
    fn embedding_at(&self, u: f64, out: &mut [f64]) {
        sample_piecewise(&self.embedding_anchors, u, out);
    }

    fn position_at(&self, u: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        let anchors: Vec<Vec<f64>> = self.position_anchors.iter().map(|p| p.to_vec()).collect();
        sample_piecewise(&anchors, u, &mut out);
        out
    }
}

/// Accumulator for one demonstration's rows.
struct DemoRows {
    embedding_dim: usize,
    emb_rows: Vec<f32>,
    pos_rows: Vec<[f64; 3]>,
    row_labels: Vec<usize>,
    emb_buf: Vec<f64>,
}

impl DemoRows {
    fn new(embedding_dim: usize) -> Self {
        DemoRows {
            embedding_dim,
            emb_rows: Vec::new(),
            pos_rows: Vec::new(),
            row_labels: Vec::new(),
            emb_buf: vec![0.0; embedding_dim],
        }
    }

    /// Samples the skill at phase `u`: noisy embedding row, exact position
    /// row translated so the skill starts at `origin`.
    #[allow(clippy::too_many_arguments)]
    fn emit(
        &mut self,
        skill: &Skill,
        skill_id: usize,
        u: f64,
        origin: &[f64; 3],
        sigma: f64,
        noise: &Normal<f64>,
        rng: &mut ChaCha20Rng,
    ) {
        debug_assert_eq!(self.emb_buf.len(), self.embedding_dim);
        skill.embedding_at(u, &mut self.emb_buf);
        for v in &self.emb_buf {
            let n = noise.sample(rng) * sigma;
            self.emb_rows.push((v + n) as f32);
        }
        let p = skill.position_at(u);
        let start = skill.position_at(0.0);
        self.pos_rows.push([
            p[0] - start[0] + origin[0],
            p[1] - start[1] + origin[1],
            p[2] - start[2] + origin[2],
        ]);
        self.row_labels.push(skill_id);
    }
}

/// Linear interpolation along a polyline of anchors, parameterized on
/// u in [0, 1].
fn sample_piecewise(anchors: &[Vec<f64>], u: f64, out: &mut [f64]) {
    let segments = anchors.len() - 1;
    let scaled = u.clamp(0.0, 1.0) * segments as f64;
    let seg = (scaled.floor() as usize).min(segments - 1);
    let frac = scaled - seg as f64;
    for (d, o) in out.iter_mut().enumerate() {
        *o = anchors[seg][d] * (1.0 - frac) + anchors[seg + 1][d] * frac;
    }
}

fn validate_config(cfg: &SynthConfig) -> Result<(), SynthError> {
    let err = |msg: &str| Err(SynthError::ConfigInvalid(msg.to_string()));
    if cfg.n_skills < 1 {
        return err("n_skills must be >= 1");
    }
    if cfg.skill_len_range.0 < 2 || cfg.skill_len_range.0 > cfg.skill_len_range.1 {
        return err("skill_len_range must satisfy 2 <= min <= max");
    }
    if cfg.tasks < 1 {
        return err("tasks must be >= 1");
    }
    if cfg.skills_per_task < 1 || cfg.skills_per_task > cfg.n_skills {
        return err("skills_per_task must be in [1, n_skills]");
    }
    if cfg.trajectories_per_task < 1 {
        return err("trajectories_per_task must be >= 1");
    }
    if cfg.embedding_dim < 1 {
        return err("embedding_dim must be >= 1");
    }
    if !(0.0..1.0).contains(&cfg.warp_jitter) {
        return err("warp_jitter must be in [0, 1)");
    }
    if !(cfg.noise_sigma.is_finite() && cfg.noise_sigma >= 0.0) {
        return err("noise_sigma must be finite and >= 0");
    }
    Ok(())
}

/// Deals `skills_per_task` distinct skills to each task, always drawing from
/// the least-used skills so coverage stays balanced across the pool.
fn compose_tasks(cfg: &SynthConfig, rng: &mut ChaCha20Rng) -> Vec<Vec<usize>> {
    let mut usage = vec![0usize; cfg.n_skills];
    let mut compositions = Vec::with_capacity(cfg.tasks + 1);
    for _ in 0..cfg.tasks + 1 {
        let mut picked: Vec<usize> = Vec::with_capacity(cfg.skills_per_task);
        for _ in 0..cfg.skills_per_task {
            let min_use = (0..cfg.n_skills)
                .filter(|s| !picked.contains(s))
                .map(|s| usage[s])
                .min()
                .expect("skills_per_task <= n_skills");
            let pool: Vec<usize> = (0..cfg.n_skills)
                .filter(|s| !picked.contains(s) && usage[*s] == min_use)
                .collect();
            let s = pool[rng.gen_range(0..pool.len())];
            usage[s] += 1;
            picked.push(s);
        }
        compositions.push(picked);
    }
    compositions
}

/// Generates a prior dataset of `tasks * trajectories_per_task`
/// demonstrations plus one extra task split out as the target, with
/// per-timestep skill labels. Fully reproducible from the seed.
pub fn generate_synthetic(
    cfg: &SynthConfig,
) -> Result<(Dataset, Dataset, GroundTruth), SynthError> {
    validate_config(cfg)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let e = cfg.embedding_dim;

    let skills: Vec<Skill> = (0..cfg.n_skills)
        .map(|_| {
            let nominal_len = rng.gen_range(cfg.skill_len_range.0..=cfg.skill_len_range.1);
            let embedding_anchors = (0..ANCHORS)
                .map(|_| (0..e).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            // Anchor spacing chosen so the sampled path moves BODY_SPEED per
            // timestep at the nominal length.
            let hop = BODY_SPEED * (nominal_len - 1) as f64 / (ANCHORS - 1) as f64;
            let mut position_anchors = vec![[
                rng.gen_range(0.0..0.5),
                rng.gen_range(0.0..0.5),
                rng.gen_range(0.0..0.5),
            ]];
            for _ in 1..ANCHORS {
                let prev = *position_anchors.last().unwrap();
                let dir = random_unit(&mut rng);
                position_anchors.push([
                    prev[0] + dir[0] * hop,
                    prev[1] + dir[1] * hop,
                    prev[2] + dir[2] * hop,
                ]);
            }
            Skill {
                nominal_len,
                embedding_anchors,
                position_anchors,
            }
        })
        .collect();

    let compositions = compose_tasks(cfg, &mut rng);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let mut labels: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut tasks: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut prior_trajectories = Vec::new();
    let mut target_trajectories = Vec::new();

    for (task_idx, composition) in compositions.iter().enumerate() {
        let task_id = format!("task{task_idx:02}");
        tasks.insert(task_id.clone(), composition.clone());
        let language = composition
            .iter()
            .map(|s| format!("skill {s}"))
            .collect::<Vec<_>>()
            .join(", then ");
        let language = format!("perform {language}");

        for demo in 0..cfg.trajectories_per_task {
            let id = format!("task{task_idx:02}_demo{demo:02}");
            let mut rows = DemoRows::new(e);
            let mut origin = [0.0f64; 3];

            for (si, &skill_id) in composition.iter().enumerate() {
                let skill = &skills[skill_id];
                let base_step = 1.0 / (skill.nominal_len - 1) as f64;

                // Stop half a step short of the endpoint so the final
                // emit(1.0) never lands on a duplicate of the last in-loop
                // sample.
                let mut u = 0.0;
                while u < 1.0 - 0.5 * base_step {
                    rows.emit(skill, skill_id, u, &origin, cfg.noise_sigma, &noise, &mut rng);
                    let jitter = rng.gen_range(-1.0..1.0) * cfg.warp_jitter;
                    u += base_step * (1.0 + jitter);
                }
                rows.emit(skill, skill_id, 1.0, &origin, cfg.noise_sigma, &noise, &mut rng);

                // Hold still between skills so a transition run appears; the
                // held rows repeat the skill's end position exactly. They sit
                // at the junction, and the collapsed cut lands right before
                // them, so they carry the upcoming skill's label.
                if si + 1 < composition.len() {
                    for _ in 0..PAUSE_LEN {
                        rows.emit(
                            skill,
                            composition[si + 1],
                            1.0,
                            &origin,
                            cfg.noise_sigma,
                            &noise,
                            &mut rng,
                        );
                    }
                }

                // The next skill's path starts where this one ended.
                let end = skill.position_at(1.0);
                let start = skill.position_at(0.0);
                for d in 0..3 {
                    origin[d] += end[d] - start[d];
                }
            }

            let DemoRows {
                emb_rows,
                pos_rows,
                row_labels,
                ..
            } = rows;
            let h = row_labels.len();
            let proprio_data: Vec<f32> = pos_rows
                .iter()
                .flat_map(|p| p.iter().map(|v| *v as f32).collect::<Vec<f32>>())
                .collect();
            let proprio = Matrix::from_vec(h, 3, proprio_data).expect("proprio shape");
            // Actions carry the position deltas; the engine never reads them.
            let mut action_data: Vec<f32> = Vec::with_capacity(h * 3);
            for t in 0..h {
                let next = pos_rows[(t + 1).min(h - 1)];
                let cur = pos_rows[t];
                action_data.extend([
                    (next[0] - cur[0]) as f32,
                    (next[1] - cur[1]) as f32,
                    (next[2] - cur[2]) as f32,
                ]);
            }
            let traj = Trajectory {
                id: id.clone(),
                embeddings: Matrix::from_vec(h, e, emb_rows).expect("embedding shape"),
                proprio,
                actions: Matrix::from_vec(h, 3, action_data).expect("action shape"),
                language: language.clone(),
                frequency_hz: 15.0,
            };
            labels.insert(id, row_labels);
            if task_idx < cfg.tasks {
                prior_trajectories.push(traj);
            } else {
                target_trajectories.push(traj);
            }
        }
    }

    let prior = Dataset {
        name: "synth_prior".to_string(),
        embedding_dim: e,
        role: Role::Prior,
        trajectories: prior_trajectories,
    };
    let target = Dataset {
        name: "synth_target".to_string(),
        embedding_dim: e,
        role: Role::Target,
        trajectories: target_trajectories,
    };
    Ok((prior, target, GroundTruth { labels, tasks }))
}

fn random_unit(rng: &mut ChaCha20Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-3 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

/// Single-state retrieval baseline: every prior timestep is scored by its
/// best cosine distance to any target timestep; the k cheapest prior
/// timesteps are materialized as slices `[t - pad_h, t + pad_h)` clamped to
/// the trajectory bounds.
pub fn baseline_state_retrieval(
    targets: &Dataset,
    prior: &Dataset,
    k: usize,
    pad_h: usize,
) -> Result<RetrievalResult, SynthError> {
    if pad_h < 1 {
        return Err(SynthError::ConfigInvalid("pad_h must be >= 1".into()));
    }
    if targets.embedding_dim != prior.embedding_dim {
        return Err(SynthError::Retrieval(RetrievalError::DimMismatch {
            target: targets.embedding_dim,
            prior: prior.embedding_dim,
        }));
    }

    // (cost, prior traj index, prior timestep, best target query)
    let mut scored: Vec<(f64, usize, usize, SubTrajectoryRef)> = Vec::new();
    for (pi, pt) in prior.trajectories.iter().enumerate() {
        for j in 0..pt.len() {
            let mut best: Option<(f64, SubTrajectoryRef)> = None;
            for tt in &targets.trajectories {
                for i in 0..tt.len() {
                    let c = crate::dtw::one_minus_cosine(tt.embeddings.row(i), pt.embeddings.row(j))
                        .map_err(RetrievalError::from)?;
                    if best.as_ref().is_none_or(|(b, _)| c < *b) {
                        best = Some((c, SubTrajectoryRef::new(tt.id.clone(), i, i + 1)));
                    }
                }
            }
            let (cost, query) = best.expect("targets non-empty");
            scored.push((cost, pi, j, query));
        }
    }
    scored.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| prior.trajectories[a.1].id.cmp(&prior.trajectories[b.1].id))
            .then_with(|| a.2.cmp(&b.2))
    });

    let mut matches = Vec::new();
    let mut counts: BTreeMap<SubTrajectoryRef, usize> = BTreeMap::new();
    for (cost, pi, j, query) in scored.into_iter().take(k) {
        let pt = &prior.trajectories[pi];
        let start = j.saturating_sub(pad_h);
        let end = (j + pad_h).min(pt.len());
        *counts.entry(query.clone()).or_insert(0) += 1;
        matches.push(RetrievedMatch {
            query,
            prior: SubTrajectoryRef::new(pt.id.clone(), start, end),
            cost,
            language: pt.language.clone(),
        });
    }
    let exhausted = matches.len() < k;
    Ok(RetrievalResult {
        config: RunConfig {
            method: "state_cosine".to_string(),
            k,
            metric: DistanceMetric::OneMinusCosine,
            epsilon: None,
            min_len: None,
            pad_h: Some(pad_h),
            dedupe: false,
        },
        matches,
        per_query_counts: counts
            .into_iter()
            .map(|(query, count)| QueryCount { query, count })
            .collect(),
        exhausted,
    })
}

/// Full-trajectory retrieval baseline: the pipeline with segmentation
/// replaced by one chunk per target trajectory spanning `[0, H)`.
pub fn baseline_full_trajectory(
    targets: &Dataset,
    prior: &Dataset,
    k: usize,
    metric: DistanceMetric,
) -> Result<RetrievalResult, SynthError> {
    if targets.trajectories.is_empty() {
        return Err(SynthError::Retrieval(RetrievalError::EmptyTarget));
    }
    let queries: Vec<SubTrajectoryRef> = targets
        .trajectories
        .iter()
        .map(|t| SubTrajectoryRef::new(t.id.clone(), 0, t.len()))
        .collect();
    let table = match_queries(&queries, targets, prior, metric)?;
    let mut result = select_top_k(&table, k, false);
    result.config.method = "full_trajectory".to_string();
    Ok(result)
}

/// Scores a retrieval result against planted ground truth: timestep-level
/// precision against each query's majority skill, plus task-sparsity and
/// relevant-mass summaries.
pub fn evaluate(result: &RetrievalResult, gt: &GroundTruth) -> Result<EvalMetrics, SynthError> {
    if result.matches.is_empty() {
        return Ok(EvalMetrics {
            precision_at_k: 0.0,
            task_sparsity: 0,
            relevant_share: 0.0,
            per_task_share: BTreeMap::new(),
            empty: true,
        });
    }

    let lookup = |id: &str| -> Result<&Vec<usize>, SynthError> {
        gt.labels
            .get(id)
            .ok_or_else(|| SynthError::UnknownId(id.to_string()))
    };

    let mut target_skills: BTreeSet<usize> = BTreeSet::new();
    for m in &result.matches {
        target_skills.extend(lookup(&m.query.trajectory_id)?.iter().copied());
    }

    let mut correct = 0usize;
    let mut total = 0usize;
    let mut relevant = 0usize;
    let mut per_task_steps: BTreeMap<String, usize> = BTreeMap::new();

    for m in &result.matches {
        let query_labels = lookup(&m.query.trajectory_id)?;
        if m.query.end > query_labels.len() {
            return Err(SynthError::UnknownId(format!(
                "{} has {} labels, query needs {}",
                m.query.trajectory_id,
                query_labels.len(),
                m.query.end
            )));
        }
        // Majority skill of the query chunk; ties go to the smallest id.
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for l in &query_labels[m.query.start..m.query.end] {
            *votes.entry(*l).or_insert(0) += 1;
        }
        let majority = votes
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(skill, _)| *skill)
            .expect("non-empty chunk");

        let prior_labels = lookup(&m.prior.trajectory_id)?;
        if m.prior.end > prior_labels.len() {
            return Err(SynthError::UnknownId(format!(
                "{} has {} labels, match needs {}",
                m.prior.trajectory_id,
                prior_labels.len(),
                m.prior.end
            )));
        }
        let span = &prior_labels[m.prior.start..m.prior.end];
        correct += span.iter().filter(|l| **l == majority).count();
        total += span.len();

        let prior_skills = gt.skills_of_trajectory(&m.prior.trajectory_id);
        if prior_skills.iter().any(|s| target_skills.contains(s)) {
            relevant += span.len();
        }
        *per_task_steps
            .entry(gt.task_of_trajectory(&m.prior.trajectory_id))
            .or_insert(0) += span.len();
    }

    Ok(EvalMetrics {
        precision_at_k: correct as f64 / total as f64,
        task_sparsity: per_task_steps.len(),
        relevant_share: relevant as f64 / total as f64,
        per_task_share: per_task_steps
            .into_iter()
            .map(|(t, s)| (t, s as f64 / total as f64))
            .collect(),
        empty: false,
    })
}
