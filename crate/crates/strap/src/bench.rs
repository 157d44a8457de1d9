//! Wall-clock scaling benchmark for the retrieval step.
//!
//! For each prior size M the harness generates M random trajectories of a
//! fixed length, splits one target trajectory into fixed-length query
//! chunks, and times `match_queries` + `select_top_k`. One warm-up run per
//! size is excluded; reported rows carry mean and standard deviation over
//! the remaining trials, plus a least-squares line over (M, mean time).

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Role, SubTrajectoryRef, Trajectory};
use crate::dtw::DistanceMetric;
use crate::matrix::Matrix;
use crate::retrieval::{match_queries, select_top_k, RetrievalError, DEFAULT_K};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    /// Number of query chunks cut from the single target trajectory.
    pub count: usize,
    /// Length of each chunk in timesteps.
    pub len: usize,
    pub embedding_dim: usize,
}

impl Default for QuerySpec {
    fn default() -> Self {
        QuerySpec {
            count: 5,
            len: 50,
            embedding_dim: 768,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub prior_size: usize,
    pub total_prior_timesteps: usize,
    pub wall_ms_mean: f64,
    pub wall_ms_std: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub fit: LinearFit,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// Ordinary least squares fit of y against x with coefficient of
/// determination.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = mean_y - slope * mean_x;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let pred = slope * x + intercept;
        ss_res += (y - pred) * (y - pred);
        ss_tot += (y - mean_y) * (y - mean_y);
    }
    let r_squared = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}

fn random_trajectory(id: String, len: usize, dim: usize, rng: &mut ChaCha8Rng) -> Trajectory {
    let data: Vec<f32> = (0..len * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Trajectory {
        id,
        embeddings: Matrix::from_vec(len, dim, data).expect("shape"),
        proprio: Matrix::zeros(len, 3),
        actions: Matrix::zeros(len, 0),
        language: "synthetic benchmark task".to_string(),
        frequency_hz: 15.0,
    }
}

/// Times the retrieval step over increasing prior sizes. The timed region is
/// matching plus top-K selection; dataset generation is excluded, and one
/// warm-up run per size is discarded.
pub fn run_benchmark(
    sizes: &[usize],
    traj_len: usize,
    query: &QuerySpec,
    trials: usize,
    seed: u64,
) -> Result<BenchReport, BenchError> {
    let err = |msg: String| Err(BenchError::ConfigInvalid(msg));
    if trials < 3 {
        return err(format!("trials must be >= 3, got {trials}"));
    }
    if sizes.len() < 2 {
        return err("need at least 2 prior sizes".to_string());
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return err("sizes must be strictly increasing".to_string());
    }
    if sizes[0] == 0 {
        return err("prior sizes must be >= 1".to_string());
    }
    if traj_len < 2 || query.count < 1 || query.len < 2 || query.embedding_dim < 1 {
        return err("degenerate benchmark workload".to_string());
    }

    let target_len = query.count * query.len;
    let mut rows = Vec::with_capacity(sizes.len());

    for &m in sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (m as u64).wrapping_mul(0x9E37_79B9));
        let target = Dataset {
            name: "bench_target".to_string(),
            embedding_dim: query.embedding_dim,
            role: Role::Target,
            trajectories: vec![random_trajectory(
                "target".to_string(),
                target_len,
                query.embedding_dim,
                &mut rng,
            )],
        };
        let queries: Vec<SubTrajectoryRef> = (0..query.count)
            .map(|i| SubTrajectoryRef::new("target", i * query.len, (i + 1) * query.len))
            .collect();
        let prior = Dataset {
            name: "bench_prior".to_string(),
            embedding_dim: query.embedding_dim,
            role: Role::Prior,
            trajectories: (0..m)
                .map(|i| {
                    random_trajectory(format!("p{i:05}"), traj_len, query.embedding_dim, &mut rng)
                })
                .collect(),
        };

        let run = || -> Result<(), BenchError> {
            let table = match_queries(&queries, &target, &prior, DistanceMetric::L2)?;
            let result = select_top_k(&table, DEFAULT_K, false);
            std::hint::black_box(result);
            Ok(())
        };

        run()?; // warm-up, excluded

        let mut samples_ms = Vec::with_capacity(trials);
        for _ in 0..trials {
            let start = Instant::now();
            run()?;
            samples_ms.push(start.elapsed().as_secs_f64() * 1e3);
        }
        let mean = samples_ms.iter().sum::<f64>() / trials as f64;
        let var = samples_ms
            .iter()
            .map(|s| (s - mean) * (s - mean))
            .sum::<f64>()
            / (trials - 1) as f64;
        rows.push(BenchRow {
            prior_size: m,
            total_prior_timesteps: m * traj_len,
            wall_ms_mean: mean,
            wall_ms_std: var.sqrt(),
            trials,
        });
    }

    let xs: Vec<f64> = rows.iter().map(|r| r.prior_size as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.wall_ms_mean).collect();
    let fit = linear_fit(&xs, &ys);
    Ok(BenchReport { rows, fit })
}

/// CSV rendering of the timing rows.
pub fn bench_csv(report: &BenchReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "prior_size",
        "total_prior_timesteps",
        "wall_ms_mean",
        "wall_ms_std",
        "trials",
    ])
    .unwrap();
    for r in &report.rows {
        w.write_record([
            r.prior_size.to_string(),
            r.total_prior_timesteps.to_string(),
            format!("{:.3}", r.wall_ms_mean),
            format!("{:.3}", r.wall_ms_std),
            r.trials.to_string(),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}
