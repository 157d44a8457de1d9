//! Retrieval pipeline: match every segmented target chunk against every
//! prior trajectory with subsequence DTW, select the cheapest K matches
//! uniformly across chunks, export the retrieved slices as a dataset, and
//! summarize what was retrieved.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    write_dataset, Dataset, Role, SubTrajectoryRef, Trajectory, WriteError,
};
use crate::dtw::{cost_matrix, sdtw, DistanceMetric, DtwError, WarpPath};
use crate::segmentation::{segment_dataset, SegmentError, SegmentationConfig};
use crate::synth::GroundTruth;

/// Number of matches retrieved when nothing else is configured.
pub const DEFAULT_K: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k: usize,
    pub metric: DistanceMetric,
    pub segmentation: SegmentationConfig,
    /// When set, identical (trajectory, start, end) matches collapse to one.
    /// Off by default: duplicates up-weight shared chunks.
    pub dedupe: bool,
}

impl RetrievalConfig {
    pub fn new(segmentation: SegmentationConfig) -> Self {
        RetrievalConfig {
            k: DEFAULT_K,
            metric: DistanceMetric::L2,
            segmentation,
            dedupe: false,
        }
    }
}

/// Configuration echo attached to every result, also covering the baseline
/// retrieval methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: String,
    pub k: usize,
    pub metric: DistanceMetric,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pad_h: Option<usize>,
    pub dedupe: bool,
}

/// Best subsequence-DTW alignment of one query chunk inside one prior
/// trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    /// Prior trajectory the slice comes from.
    pub trajectory_id: String,
    pub start: usize,
    pub end: usize,
    pub cost: f64,
    pub path: WarpPath,
    pub query: SubTrajectoryRef,
}

/// Per-query candidate lists: one best match per prior trajectory, sorted
/// ascending by cost (ties: trajectory id, then start). Query order is the
/// target manifest order, then chunk start.
#[derive(Debug, Clone)]
pub struct MatchTable {
    metric: DistanceMetric,
    queries: Vec<SubTrajectoryRef>,
    candidates: Vec<Vec<Match>>,
    languages: BTreeMap<String, String>,
}

impl MatchTable {
    /// Builds a table from externally computed candidates; lists are
    /// re-sorted into the canonical (cost, trajectory id, start) order.
    /// `queries` and `candidates` must have equal length.
    pub fn from_parts(
        metric: DistanceMetric,
        queries: Vec<SubTrajectoryRef>,
        mut candidates: Vec<Vec<Match>>,
        languages: BTreeMap<String, String>,
    ) -> Self {
        assert_eq!(queries.len(), candidates.len());
        for list in &mut candidates {
            list.sort_by(|a, b| {
                a.cost
                    .total_cmp(&b.cost)
                    .then_with(|| a.trajectory_id.cmp(&b.trajectory_id))
                    .then_with(|| a.start.cmp(&b.start))
            });
        }
        MatchTable {
            metric,
            queries,
            candidates,
            languages,
        }
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn queries(&self) -> &[SubTrajectoryRef] {
        &self.queries
    }

    pub fn candidates(&self, query_index: usize) -> &[Match] {
        &self.candidates[query_index]
    }

    pub fn language_of(&self, trajectory_id: &str) -> Option<&str> {
        self.languages.get(trajectory_id).map(String::as_str)
    }

    /// Total number of candidates across all queries.
    pub fn supply(&self) -> usize {
        self.candidates.iter().map(Vec::len).sum()
    }
}

/// One selected match in the portable result format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedMatch {
    pub query: SubTrajectoryRef,
    pub prior: SubTrajectoryRef,
    pub cost: f64,
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCount {
    pub query: SubTrajectoryRef,
    pub count: usize,
}

/// Ranked top-K selection with per-query provenance; serializes to the
/// exchange JSON consumed by `export` and `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub config: RunConfig,
    pub matches: Vec<RetrievedMatch>,
    pub per_query_counts: Vec<QueryCount>,
    /// True when the candidate supply ran out before K matches.
    pub exhausted: bool,
}

impl RetrievalResult {
    pub fn total_retrieved_timesteps(&self) -> usize {
        self.matches.iter().map(|m| m.prior.len()).sum()
    }
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("DIM_MISMATCH: target embedding_dim {target} != prior embedding_dim {prior}")]
    DimMismatch { target: usize, prior: usize },
    #[error("EMPTY_TARGET: target dataset has no trajectories")]
    EmptyTarget,
    #[error("EMPTY_PRIOR: prior dataset has no trajectories")]
    EmptyPrior,
    #[error("query {0:?} does not resolve inside the target dataset")]
    StaleQuery(SubTrajectoryRef),
    #[error("invalid retrieval config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Segmentation(#[from] SegmentError),
    #[error(transparent)]
    Dtw(#[from] DtwError),
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("stale result: {0}")]
    StaleResult(String),
    #[error(transparent)]
    Write(#[from] WriteError),
}

/// Matches an explicit list of query chunks against every prior trajectory.
/// The chunk embeddings are borrowed views into the stored target matrices;
/// nothing is recomputed or copied.
pub fn match_queries(
    queries: &[SubTrajectoryRef],
    targets: &Dataset,
    prior: &Dataset,
    metric: DistanceMetric,
) -> Result<MatchTable, RetrievalError> {
    if targets.embedding_dim != prior.embedding_dim {
        return Err(RetrievalError::DimMismatch {
            target: targets.embedding_dim,
            prior: prior.embedding_dim,
        });
    }
    if prior.trajectories.is_empty() {
        return Err(RetrievalError::EmptyPrior);
    }

    let resolved: Vec<(&Trajectory, &SubTrajectoryRef)> = queries
        .iter()
        .map(|q| {
            let t = targets
                .trajectory(&q.trajectory_id)
                .filter(|t| q.start < q.end && q.end <= t.len())
                .ok_or_else(|| RetrievalError::StaleQuery(q.clone()))?;
            Ok((t, q))
        })
        .collect::<Result<_, RetrievalError>>()?;

    let n_prior = prior.trajectories.len();
    let pairs: Vec<(usize, usize)> = (0..queries.len())
        .flat_map(|qi| (0..n_prior).map(move |pi| (qi, pi)))
        .collect();

    // Each (query, prior) pair is an independent dynamic program; the
    // indexed collect keeps the output order fixed regardless of worker
    // count.
    let matches: Vec<Match> = pairs
        .par_iter()
        .map(|&(qi, pi)| {
            let (traj, q) = resolved[qi];
            let reference = &prior.trajectories[pi];
            let c = cost_matrix(
                traj.embeddings.view_rows(q.start, q.end),
                reference.embeddings.view(),
                metric,
            )?;
            let hit = sdtw(&c);
            Ok(Match {
                trajectory_id: reference.id.clone(),
                start: hit.start,
                end: hit.end,
                cost: hit.cost,
                path: hit.path,
                query: q.clone(),
            })
        })
        .collect::<Result<_, DtwError>>()?;

    let mut candidates: Vec<Vec<Match>> = matches
        .chunks(n_prior)
        .map(<[Match]>::to_vec)
        .collect();
    for list in &mut candidates {
        list.sort_by(|a, b| {
            a.cost
                .total_cmp(&b.cost)
                .then_with(|| a.trajectory_id.cmp(&b.trajectory_id))
                .then_with(|| a.start.cmp(&b.start))
        });
    }

    let languages = prior
        .trajectories
        .iter()
        .map(|t| (t.id.clone(), t.language.clone()))
        .collect();

    Ok(MatchTable {
        metric,
        queries: queries.to_vec(),
        candidates,
        languages,
    })
}

/// Segments every target demonstration and matches each chunk against every
/// prior trajectory: exactly one candidate per (chunk, prior trajectory).
pub fn match_all(
    targets: &Dataset,
    prior: &Dataset,
    cfg: &RetrievalConfig,
) -> Result<MatchTable, RetrievalError> {
    if targets.trajectories.is_empty() {
        return Err(RetrievalError::EmptyTarget);
    }
    let segmentations = segment_dataset(targets, &cfg.segmentation)?;
    let queries: Vec<SubTrajectoryRef> = segmentations
        .into_iter()
        .flat_map(|s| s.chunks)
        .collect();
    match_queries(&queries, targets, prior, cfg.metric)
}

fn advance_cursor(
    table: &MatchTable,
    cursors: &mut [usize],
    seen: &HashSet<(String, usize, usize)>,
    dedupe: bool,
    qi: usize,
) -> Option<usize> {
    let cands = table.candidates(qi);
    while cursors[qi] < cands.len() {
        let c = &cands[cursors[qi]];
        if dedupe && seen.contains(&(c.trajectory_id.clone(), c.start, c.end)) {
            cursors[qi] += 1;
        } else {
            return Some(cursors[qi]);
        }
    }
    None
}

/// Round-robin selection over queries in their fixed order: each round takes
/// every non-exhausted query's next-cheapest candidate until `k` matches are
/// taken or supply runs out. A final partial round serves queries in
/// ascending order of their next candidate's cost.
pub fn select_top_k(table: &MatchTable, k: usize, dedupe: bool) -> RetrievalResult {
    let nq = table.queries().len();
    let mut cursors = vec![0usize; nq];
    let mut counts = vec![0usize; nq];
    let mut seen: HashSet<(String, usize, usize)> = HashSet::new();
    let mut matches: Vec<RetrievedMatch> = Vec::new();

    let take = |qi: usize,
                    ci: usize,
                    cursors: &mut [usize],
                    counts: &mut [usize],
                    seen: &mut HashSet<(String, usize, usize)>,
                    matches: &mut Vec<RetrievedMatch>| {
        let m = &table.candidates(qi)[ci];
        seen.insert((m.trajectory_id.clone(), m.start, m.end));
        matches.push(RetrievedMatch {
            query: m.query.clone(),
            prior: SubTrajectoryRef::new(m.trajectory_id.clone(), m.start, m.end),
            cost: m.cost,
            language: table
                .language_of(&m.trajectory_id)
                .unwrap_or_default()
                .to_string(),
        });
        cursors[qi] = ci + 1;
        counts[qi] += 1;
    };

    loop {
        if matches.len() >= k {
            break;
        }
        let roundable: Vec<usize> = (0..nq)
            .filter(|&qi| advance_cursor(table, &mut cursors, &seen, dedupe, qi).is_some())
            .collect();
        if roundable.is_empty() {
            break;
        }
        if matches.len() + roundable.len() <= k {
            for qi in roundable {
                if let Some(ci) = advance_cursor(table, &mut cursors, &seen, dedupe, qi) {
                    take(qi, ci, &mut cursors, &mut counts, &mut seen, &mut matches);
                }
            }
        } else {
            // Final round: cheapest next candidates first, query order on ties.
            let mut order: Vec<(f64, usize)> = roundable
                .into_iter()
                .filter_map(|qi| {
                    advance_cursor(table, &mut cursors, &seen, dedupe, qi)
                        .map(|ci| (table.candidates(qi)[ci].cost, qi))
                })
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            for (_, qi) in order {
                if matches.len() >= k {
                    break;
                }
                if let Some(ci) = advance_cursor(table, &mut cursors, &seen, dedupe, qi) {
                    take(qi, ci, &mut cursors, &mut counts, &mut seen, &mut matches);
                }
            }
            break;
        }
    }

    let exhausted = matches.len() < k;
    RetrievalResult {
        config: RunConfig {
            method: "sdtw_top_k".to_string(),
            k,
            metric: table.metric(),
            epsilon: None,
            min_len: None,
            pad_h: None,
            dedupe,
        },
        matches,
        per_query_counts: table
            .queries()
            .iter()
            .zip(&counts)
            .map(|(q, c)| QueryCount {
                query: q.clone(),
                count: *c,
            })
            .collect(),
        exhausted,
    }
}

/// The full pipeline: segment, match, select.
pub fn retrieve(
    targets: &Dataset,
    prior: &Dataset,
    cfg: &RetrievalConfig,
) -> Result<RetrievalResult, RetrievalError> {
    if cfg.k < 1 {
        return Err(RetrievalError::ConfigInvalid("k must be >= 1".into()));
    }
    let table = match_all(targets, prior, cfg)?;
    let mut result = select_top_k(&table, cfg.k, cfg.dedupe);
    result.config = RunConfig {
        method: "strap".to_string(),
        k: cfg.k,
        metric: cfg.metric,
        epsilon: Some(cfg.segmentation.epsilon),
        min_len: Some(cfg.segmentation.min_len),
        pad_h: None,
        dedupe: cfg.dedupe,
    };
    Ok(result)
}

/// Materializes every selected match as a new trajectory (rows copied
/// verbatim from the prior) and appends a whole copy of every target
/// trajectory, then writes the result as a dataset directory. Duplicate
/// selections become distinct entries, distinguished by a `#<dup_index>`
/// suffix.
pub fn export_retrieval(
    result: &RetrievalResult,
    targets: &Dataset,
    prior: &Dataset,
    out_path: impl AsRef<Path>,
) -> Result<Dataset, ExportError> {
    let mut dup_counter: HashMap<(String, usize, usize), usize> = HashMap::new();
    let mut trajectories = Vec::with_capacity(result.matches.len() + targets.trajectories.len());

    for m in &result.matches {
        if targets.trajectory(&m.query.trajectory_id).is_none() {
            return Err(ExportError::StaleResult(format!(
                "query trajectory {:?} not in target dataset",
                m.query.trajectory_id
            )));
        }
        let source = prior.trajectory(&m.prior.trajectory_id).ok_or_else(|| {
            ExportError::StaleResult(format!(
                "prior trajectory {:?} not in prior dataset",
                m.prior.trajectory_id
            ))
        })?;
        let (start, end) = (m.prior.start, m.prior.end);
        if start >= end || end > source.len() {
            return Err(ExportError::StaleResult(format!(
                "slice [{start}, {end}) out of range for {:?} (H={})",
                source.id,
                source.len()
            )));
        }
        let key = (source.id.clone(), start, end);
        let dup_index = *dup_counter
            .entry(key)
            .and_modify(|c| *c += 1)
            .or_insert(0);
        trajectories.push(Trajectory {
            id: format!("{}#{start}-{end}#{dup_index}", source.id),
            embeddings: source.embeddings.copy_rows(start, end),
            proprio: source.proprio.copy_rows(start, end),
            actions: source.actions.copy_rows(start, end),
            language: source.language.clone(),
            frequency_hz: source.frequency_hz,
        });
    }
    trajectories.extend(targets.trajectories.iter().cloned());

    let dataset = Dataset {
        name: format!("{}_retrieval", targets.name),
        embedding_dim: targets.embedding_dim,
        role: Role::Retrieval,
        trajectories,
    };
    write_dataset(&dataset, out_path)?;
    Ok(dataset)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskShare {
    pub language: String,
    pub timesteps: usize,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchHistograms {
    pub starts: Vec<usize>,
    pub ends: Vec<usize>,
    pub lengths: Vec<usize>,
}

/// Ground-truth-aware summary, available on synthetic datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSummary {
    /// Skills present in the query trajectories.
    pub target_skills: Vec<usize>,
    /// Retrieved timesteps coming from prior tasks that share at least one
    /// skill with the target.
    pub relevant_timesteps: usize,
    pub relevant_share: f64,
    /// Number of distinct prior tasks retrieved from.
    pub distinct_prior_tasks: usize,
}

/// Where the retrieved mass went: per-instruction shares (top five plus an
/// "others" bucket) and raw start/end/length histogram data for external
/// plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDistributionReport {
    pub total_matches: usize,
    pub total_timesteps: usize,
    pub top_tasks: Vec<TaskShare>,
    pub others: TaskShare,
    pub histograms: MatchHistograms,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthSummary>,
}

/// Summarizes a retrieval result. When ground truth is supplied (synthetic
/// datasets), the report additionally scores how much of the retrieved mass
/// landed on tasks sharing a skill with the target.
pub fn retrieval_report(
    result: &RetrievalResult,
    prior: &Dataset,
    ground_truth: Option<&GroundTruth>,
) -> TaskDistributionReport {
    let mut per_language: BTreeMap<String, usize> = BTreeMap::new();
    let mut starts = Vec::with_capacity(result.matches.len());
    let mut ends = Vec::with_capacity(result.matches.len());
    let mut lengths = Vec::with_capacity(result.matches.len());
    let mut total_timesteps = 0usize;

    for m in &result.matches {
        let language = prior
            .trajectory(&m.prior.trajectory_id)
            .map(|t| t.language.clone())
            .unwrap_or_else(|| m.language.clone());
        let steps = m.prior.len();
        *per_language.entry(language).or_insert(0) += steps;
        total_timesteps += steps;
        starts.push(m.prior.start);
        ends.push(m.prior.end);
        lengths.push(steps);
    }

    let share = |steps: usize| {
        if total_timesteps == 0 {
            0.0
        } else {
            steps as f64 / total_timesteps as f64
        }
    };

    let mut ranked: Vec<(String, usize)> = per_language.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let top_tasks: Vec<TaskShare> = ranked
        .iter()
        .take(5)
        .map(|(language, steps)| TaskShare {
            language: language.clone(),
            timesteps: *steps,
            share: share(*steps),
        })
        .collect();
    let other_steps: usize = ranked.iter().skip(5).map(|(_, s)| *s).sum();
    let others = TaskShare {
        language: "others".to_string(),
        timesteps: other_steps,
        share: share(other_steps),
    };

    let ground_truth = ground_truth.map(|gt| {
        let target_skills: Vec<usize> = result
            .matches
            .iter()
            .map(|m| m.query.trajectory_id.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .filter_map(|id| gt.labels.get(id))
            .flatten()
            .copied()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();

        let mut relevant_timesteps = 0usize;
        let mut tasks_hit: std::collections::BTreeSet<String> = Default::default();
        for m in &result.matches {
            let id = &m.prior.trajectory_id;
            let shares_skill = gt
                .skills_of_trajectory(id)
                .iter()
                .any(|s| target_skills.contains(s));
            if shares_skill {
                relevant_timesteps += m.prior.len();
            }
            tasks_hit.insert(gt.task_of_trajectory(id));
        }
        GroundTruthSummary {
            target_skills,
            relevant_timesteps,
            relevant_share: share(relevant_timesteps),
            distinct_prior_tasks: tasks_hit.len(),
        }
    });

    TaskDistributionReport {
        total_matches: result.matches.len(),
        total_timesteps,
        top_tasks,
        others,
        histograms: MatchHistograms {
            starts,
            ends,
            lengths,
        },
        ground_truth,
    }
}

/// CSV rendering of the per-task shares (top five plus others).
pub fn report_shares_csv(report: &TaskDistributionReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["language", "timesteps", "share"]).unwrap();
    for t in report.top_tasks.iter().chain(std::iter::once(&report.others)) {
        w.write_record([
            t.language.as_str(),
            &t.timesteps.to_string(),
            &format!("{:.6}", t.share),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// CSV rendering of per-match start/end/length rows.
pub fn report_matches_csv(report: &TaskDistributionReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["start", "end", "length"]).unwrap();
    let h = &report.histograms;
    for i in 0..h.starts.len() {
        w.write_record([
            h.starts[i].to_string(),
            h.ends[i].to_string(),
            h.lengths[i].to_string(),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}
