//! Dense cost matrices and the DTW / subsequence-DTW dynamic programs with
//! backtracking, plus exhaustive brute-force oracles for testing.
//!
//! Everything is 0-based. Full DTW accumulates along both boundary edges and
//! backtracks from the bottom-right corner. Subsequence DTW initializes the
//! first row to the raw costs (free start anywhere in the reference),
//! accumulates down the first column (the query is always fully consumed),
//! and backtracks from the smallest minimum in the last row.
//!
//! Tie-breaking is fixed: among DP predecessors, diagonal beats vertical
//! beats horizontal; the last-row argmin takes the smallest column.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::matrix::RowsView;

/// Largest cost-matrix side the exhaustive oracles accept.
pub const ORACLE_MAX_SIDE: usize = 8;

/// Pairwise distance between embedding rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    L2,
    OneMinusCosine,
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistanceMetric::L2 => write!(f, "l2"),
            DistanceMetric::OneMinusCosine => write!(f, "one_minus_cosine"),
        }
    }
}

impl FromStr for DistanceMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l2" => Ok(DistanceMetric::L2),
            "one_minus_cosine" => Ok(DistanceMetric::OneMinusCosine),
            other => Err(format!(
                "unknown metric {other:?}, expected l2 or one_minus_cosine"
            )),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DtwError {
    #[error("DIM_MISMATCH: query dim {query} != reference dim {reference}")]
    DimMismatch { query: usize, reference: usize },
    #[error("zero vector at row {row} of {side}: cosine distance undefined")]
    ZeroVector { side: &'static str, row: usize },
    #[error("cost matrix {n}x{m} exceeds the oracle bound {ORACLE_MAX_SIDE}")]
    SizeBound { n: usize, m: usize },
    #[error("invalid cost matrix: {0}")]
    InvalidCost(String),
}

/// Dense `n x m` matrix of pairwise costs between a query and a reference.
/// Entries are finite and non-negative by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    m: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn from_values(n: usize, m: usize, values: Vec<f64>) -> Result<Self, DtwError> {
        if n == 0 || m == 0 {
            return Err(DtwError::InvalidCost("n and m must be >= 1".into()));
        }
        if values.len() != n * m {
            return Err(DtwError::InvalidCost(format!(
                "expected {} values, found {}",
                n * m,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(DtwError::InvalidCost(format!(
                "entries must be finite and >= 0, found {v}"
            )));
        }
        Ok(CostMatrix { n, m, values })
    }

    pub fn from_fn(n: usize, m: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self, DtwError> {
        let mut values = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                values.push(f(i, j));
            }
        }
        CostMatrix::from_values(n, m, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }
}

/// Monotone, continuous alignment between query rows and reference columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpPath {
    pub pairs: Vec<(usize, usize)>,
}

impl WarpPath {
    /// Structural check: steps in {(+1,0),(0,+1),(+1,+1)}.
    pub fn is_monotone_continuous(&self) -> bool {
        self.pairs.windows(2).all(|w| {
            let (di, dj) = (w[1].0 as i64 - w[0].0 as i64, w[1].1 as i64 - w[0].1 as i64);
            matches!((di, dj), (1, 0) | (0, 1) | (1, 1))
        })
    }

    /// Sum of cost-matrix entries along the path.
    pub fn cost_along(&self, c: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(i, j)| c.at(i, j)).sum()
    }
}

/// Result of one subsequence-DTW run against a reference: the matched
/// half-open slice `[start, end)`, the cumulative cost at the path end, and
/// the warping path itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SdtwHit {
    pub start: usize,
    pub end: usize,
    pub cost: f64,
    pub path: WarpPath,
}

#[inline]
fn l2_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let rem_a = chunks_a.remainder();
    let rem_b = chunks_b.remainder();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for k in 0..4 {
            let d = f64::from(ca[k] - cb[k]);
            acc[k] += d * d;
        }
    }
    let mut tail = 0.0f64;
    for (x, y) in rem_a.iter().zip(rem_b) {
        let d = f64::from(x - y);
        tail += d * d;
    }
    (acc[0] + acc[1] + acc[2] + acc[3] + tail).sqrt()
}

/// Cosine distance between two single rows, clamped into [0, 2].
pub fn one_minus_cosine(a: &[f32], b: &[f32]) -> Result<f64, DtwError> {
    if a.len() != b.len() {
        return Err(DtwError::DimMismatch {
            query: a.len(),
            reference: b.len(),
        });
    }
    let (dot, na, nb) = dot_and_norms(a, b);
    if na == 0.0 {
        return Err(DtwError::ZeroVector { side: "query", row: 0 });
    }
    if nb == 0.0 {
        return Err(DtwError::ZeroVector {
            side: "reference",
            row: 0,
        });
    }
    Ok((1.0 - dot / (na * nb)).clamp(0.0, 2.0))
}

#[inline]
fn dot_and_norms(a: &[f32], b: &[f32]) -> (f64, f64, f64) {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot, na.sqrt(), nb.sqrt())
}

/// Pairwise distances between every query row and every reference row.
pub fn cost_matrix(
    q: RowsView<'_>,
    r: RowsView<'_>,
    metric: DistanceMetric,
) -> Result<CostMatrix, DtwError> {
    if q.cols() != r.cols() {
        return Err(DtwError::DimMismatch {
            query: q.cols(),
            reference: r.cols(),
        });
    }
    let (n, m) = (q.rows(), r.rows());
    if n == 0 || m == 0 {
        return Err(DtwError::InvalidCost("n and m must be >= 1".into()));
    }
    let mut values = Vec::with_capacity(n * m);
    match metric {
        DistanceMetric::L2 => {
            for i in 0..n {
                let qi = q.row(i);
                for j in 0..m {
                    values.push(l2_distance(qi, r.row(j)));
                }
            }
        }
        DistanceMetric::OneMinusCosine => {
            for i in 0..n {
                let qi = q.row(i);
                for j in 0..m {
                    let (dot, na, nb) = dot_and_norms(qi, r.row(j));
                    if na == 0.0 {
                        return Err(DtwError::ZeroVector { side: "query", row: i });
                    }
                    if nb == 0.0 {
                        return Err(DtwError::ZeroVector {
                            side: "reference",
                            row: j,
                        });
                    }
                    // Clamp rounding spill so entries stay in [0, 2].
                    values.push((1.0 - dot / (na * nb)).clamp(0.0, 2.0));
                }
            }
        }
    }
    Ok(CostMatrix { n, m, values })
}

fn fill_accumulated(c: &CostMatrix, subsequence: bool) -> Vec<f64> {
    let (n, m) = (c.n, c.m);
    let mut d = vec![0.0f64; n * m];
    d[0] = c.at(0, 0);
    for j in 1..m {
        d[j] = if subsequence {
            c.at(0, j)
        } else {
            d[j - 1] + c.at(0, j)
        };
    }
    for i in 1..n {
        d[i * m] = d[(i - 1) * m] + c.at(i, 0);
        for j in 1..m {
            let diag = d[(i - 1) * m + j - 1];
            let vert = d[(i - 1) * m + j];
            let horiz = d[i * m + j - 1];
            d[i * m + j] = c.at(i, j) + diag.min(vert).min(horiz);
        }
    }
    d
}

/// Backward step: best predecessor of `(i, j)` with `i >= 1`, preferring
/// diagonal, then vertical, then horizontal among ties.
#[inline]
fn best_predecessor(d: &[f64], m: usize, i: usize, j: usize) -> (usize, usize) {
    if j == 0 {
        return (i - 1, 0);
    }
    let diag = d[(i - 1) * m + j - 1];
    let vert = d[(i - 1) * m + j];
    let horiz = d[i * m + j - 1];
    let mn = diag.min(vert).min(horiz);
    if diag == mn {
        (i - 1, j - 1)
    } else if vert == mn {
        (i - 1, j)
    } else {
        (i, j - 1)
    }
}

/// Full dynamic time warping: both sequence ends are pinned.
pub fn dtw(c: &CostMatrix) -> (f64, WarpPath) {
    let (n, m) = (c.n, c.m);
    let d = fill_accumulated(c, false);
    let mut pairs = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let (pi, pj) = if i == 0 {
            (0, j - 1)
        } else {
            best_predecessor(&d, m, i, j)
        };
        pairs.push((pi, pj));
        i = pi;
        j = pj;
    }
    pairs.reverse();
    (d[(n - 1) * m + m - 1], WarpPath { pairs })
}

/// Subsequence DTW: matches the whole query to the best-aligned contiguous
/// slice of the reference.
pub fn sdtw(c: &CostMatrix) -> SdtwHit {
    let (n, m) = (c.n, c.m);
    let d = fill_accumulated(c, true);
    let last = &d[(n - 1) * m..];
    let mut j_end = 0;
    for (j, v) in last.iter().enumerate() {
        if *v < last[j_end] {
            j_end = j;
        }
    }
    let mut pairs = vec![(n - 1, j_end)];
    let (mut i, mut j) = (n - 1, j_end);
    while i > 0 {
        let (pi, pj) = best_predecessor(&d, m, i, j);
        pairs.push((pi, pj));
        i = pi;
        j = pj;
    }
    pairs.reverse();
    SdtwHit {
        start: pairs[0].1,
        end: j_end + 1,
        cost: last[j_end],
        path: WarpPath { pairs },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Diag = 0,
    Vert = 1,
    Horiz = 2,
}

/// Compares candidate paths by their reversed step sequence, diagonal before
/// vertical before horizontal. Matches the greedy backtracking order of the
/// dynamic programs exactly.
fn rev_steps_less(a: &[Step], b: &[Step]) -> bool {
    let mut ia = a.iter().rev();
    let mut ib = b.iter().rev();
    loop {
        match (ia.next(), ib.next()) {
            (Some(x), Some(y)) if x == y => continue,
            (Some(x), Some(y)) => return (*x as u8) < (*y as u8),
            (None, Some(_)) => return true,
            _ => return false,
        }
    }
}

fn path_from_steps(start: (usize, usize), steps: &[Step]) -> WarpPath {
    let mut pairs = vec![start];
    let (mut i, mut j) = start;
    for s in steps {
        match s {
            Step::Diag => {
                i += 1;
                j += 1;
            }
            Step::Vert => i += 1,
            Step::Horiz => j += 1,
        }
        pairs.push((i, j));
    }
    WarpPath { pairs }
}

struct OracleBest {
    cost: f64,
    j_end: usize,
    steps: Vec<Step>,
}

fn oracle_consider(best: &mut Option<OracleBest>, cost: f64, j_end: usize, steps: &[Step]) {
    let better = match best {
        None => true,
        Some(b) => {
            cost < b.cost
                || (cost == b.cost
                    && (j_end < b.j_end || (j_end == b.j_end && rev_steps_less(steps, &b.steps))))
        }
    };
    if better {
        *best = Some(OracleBest {
            cost,
            j_end,
            steps: steps.to_vec(),
        });
    }
}

fn oracle_dfs(
    c: &CostMatrix,
    i: usize,
    j: usize,
    cost: f64,
    steps: &mut Vec<Step>,
    subsequence: bool,
    best: &mut Option<OracleBest>,
) {
    let (n, m) = (c.n, c.m);
    if i == n - 1 {
        // Subsequence paths may end at any last-row column; full DTW only at
        // the corner.
        if subsequence || j == m - 1 {
            oracle_consider(best, cost, j, steps);
        }
    }
    for step in [Step::Diag, Step::Vert, Step::Horiz] {
        let (ni, nj) = match step {
            Step::Diag => (i + 1, j + 1),
            Step::Vert => (i + 1, j),
            Step::Horiz => (i, j + 1),
        };
        if ni < n && nj < m {
            steps.push(step);
            oracle_dfs(c, ni, nj, cost + c.at(ni, nj), steps, subsequence, best);
            steps.pop();
        }
    }
}

/// Exhaustive full-DTW oracle: enumerates every monotone-continuous path
/// from `(0,0)` to `(n-1,m-1)` and returns the global minimum under the same
/// tie-break order as the dynamic program.
pub fn brute_force_dtw(c: &CostMatrix) -> Result<(f64, WarpPath), DtwError> {
    if c.n > ORACLE_MAX_SIDE || c.m > ORACLE_MAX_SIDE {
        return Err(DtwError::SizeBound { n: c.n, m: c.m });
    }
    let mut best = None;
    let mut steps = Vec::new();
    oracle_dfs(c, 0, 0, c.at(0, 0), &mut steps, false, &mut best);
    let b = best.expect("at least one path exists");
    Ok((b.cost, path_from_steps((0, 0), &b.steps)))
}

/// Exhaustive subsequence-DTW oracle: enumerates every start column, every
/// path, and every end column in the last row.
pub fn brute_force_sdtw(c: &CostMatrix) -> Result<SdtwHit, DtwError> {
    if c.n > ORACLE_MAX_SIDE || c.m > ORACLE_MAX_SIDE {
        return Err(DtwError::SizeBound { n: c.n, m: c.m });
    }
    let mut best = None;
    for j0 in 0..c.m {
        let mut steps = Vec::new();
        oracle_dfs(c, 0, j0, c.at(0, j0), &mut steps, true, &mut best);
    }
    let b = best.expect("at least one path exists");
    // Recover the start column: the path ends at (n-1, j_end) after applying
    // the steps, so walk backwards from there.
    let (mut i, mut j) = (c.n - 1, b.j_end);
    for s in b.steps.iter().rev() {
        match s {
            Step::Diag => {
                i -= 1;
                j -= 1;
            }
            Step::Vert => i -= 1,
            Step::Horiz => j -= 1,
        }
    }
    debug_assert_eq!(i, 0);
    let path = path_from_steps((0, j), &b.steps);
    Ok(SdtwHit {
        start: j,
        end: b.j_end + 1,
        cost: b.cost,
        path,
    })
}
