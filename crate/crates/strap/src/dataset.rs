//! Demonstration dataset model: on-disk layout, loading, writing, validation.
//!
//! A dataset is a directory holding `manifest.json` plus one subdirectory per
//! trajectory with three raw little-endian row-major `float32` files:
//! `embeddings.f32`, `proprio.f32`, `actions.f32`. Byte length of each file
//! must equal `length * dim * 4`. The manifest fixes trajectory order.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{Matrix, MatrixError};

/// Which side of the retrieval problem a dataset plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Target,
    Prior,
    Retrieval,
}

/// One demonstration. Row counts of all three matrices must agree; the
/// shared row count is the horizon `H`. By convention the first three
/// proprio columns are end-effector XYZ position in meters. Actions are an
/// opaque payload: copied through on export, never interpreted.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub embeddings: Matrix,
    pub proprio: Matrix,
    pub actions: Matrix,
    pub language: String,
    pub frequency_hz: f64,
}

impl Trajectory {
    /// Horizon `H` (number of timesteps), taken from the embedding matrix.
    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An ordered collection of trajectories sharing one embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub embedding_dim: usize,
    pub role: Role,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn trajectory(&self, id: &str) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.id == id)
    }

    pub fn total_timesteps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }
}

/// Half-open index range `[start, end)` into a named trajectory; the unit of
/// querying and retrieval.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubTrajectoryRef {
    #[serde(rename = "traj")]
    pub trajectory_id: String,
    pub start: usize,
    pub end: usize,
}

impl SubTrajectoryRef {
    pub fn new(trajectory_id: impl Into<String>, start: usize, end: usize) -> Self {
        SubTrajectoryRef {
            trajectory_id: trajectory_id.into(),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Stable machine-readable codes for dataset invariant violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueCode {
    TooShort,
    DimMismatch,
    RowMismatch,
    NonFinite,
    DuplicateId,
    BadEmbeddingDim,
    BadFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub trajectory_id: String,
    pub code: IssueCode,
    pub message: String,
}

/// Outcome of [`validate_dataset`]; `ok` is true iff `issues` is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn from_issues(issues: Vec<Issue>) -> Self {
        ValidationReport {
            ok: issues.is_empty(),
            issues,
        }
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("missing manifest.json under {0}")]
    MissingManifest(PathBuf),
    #[error("manifest schema violation: {0}")]
    SchemaViolation(String),
    #[error("shape mismatch in {trajectory_id}/{file}: expected {expected} floats, found {found}")]
    ShapeMismatch {
        trajectory_id: String,
        file: String,
        expected: usize,
        found: usize,
    },
    #[error("corrupt binary {file}: trailing bytes at offset {byte_offset}")]
    CorruptBinary { file: String, byte_offset: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum WriteError {
    #[error("dataset failed validation: {0:?}")]
    ValidationFailed(Vec<Issue>),
    #[error("io failure at {path}: {source}")]
    IoFailure {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum AverageError {
    #[error("no views supplied")]
    EmptyInput,
    #[error("view {index} has shape {found_rows}x{found_cols}, expected {rows}x{cols}")]
    ShapeMismatch {
        index: usize,
        rows: usize,
        cols: usize,
        found_rows: usize,
        found_cols: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    name: String,
    embedding_dim: usize,
    role: Role,
    trajectories: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    length: usize,
    proprio_dim: usize,
    action_dim: usize,
    language: String,
    frequency_hz: f64,
}

fn check_id_is_path_safe(id: &str) -> Result<(), LoadError> {
    let bad = id.is_empty()
        || id == "."
        || id == ".."
        || id.contains('/')
        || id.contains('\\')
        || id.contains('\0');
    if bad {
        return Err(LoadError::SchemaViolation(format!(
            "id: {id:?} is not a usable path component"
        )));
    }
    Ok(())
}

fn read_matrix(
    dir: &Path,
    trajectory_id: &str,
    file: &str,
    rows: usize,
    cols: usize,
) -> Result<Matrix, LoadError> {
    let path = dir.join(trajectory_id).join(file);
    let bytes = fs::read(&path)?;
    match Matrix::from_le_bytes(rows, cols, &bytes) {
        Ok(m) => Ok(m),
        Err(MatrixError::ByteLength(len)) => Err(LoadError::CorruptBinary {
            file: format!("{trajectory_id}/{file}"),
            byte_offset: len - len % 4,
        }),
        Err(MatrixError::DataLength { found, .. }) => Err(LoadError::ShapeMismatch {
            trajectory_id: trajectory_id.to_string(),
            file: file.to_string(),
            expected: rows * cols,
            found,
        }),
    }
}

/// Loads a dataset directory. Matrices are decoded exactly as stored and
/// trajectory order equals manifest order. Structural problems (schema,
/// shapes, corrupt payloads) are errors; semantic invariants are checked
/// separately by [`validate_dataset`].
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, LoadError> {
    let path = path.as_ref();
    let manifest_path = path.join("manifest.json");
    if !manifest_path.is_file() {
        return Err(LoadError::MissingManifest(path.to_path_buf()));
    }
    let raw = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest =
        serde_json::from_str(&raw).map_err(|e| LoadError::SchemaViolation(e.to_string()))?;

    let mut seen = BTreeSet::new();
    for entry in &manifest.trajectories {
        check_id_is_path_safe(&entry.id)?;
        if !seen.insert(entry.id.clone()) {
            return Err(LoadError::SchemaViolation(format!(
                "id: duplicate trajectory id {:?}",
                entry.id
            )));
        }
    }

    let mut trajectories = Vec::with_capacity(manifest.trajectories.len());
    for entry in &manifest.trajectories {
        let embeddings = read_matrix(
            path,
            &entry.id,
            "embeddings.f32",
            entry.length,
            manifest.embedding_dim,
        )?;
        let proprio = read_matrix(path, &entry.id, "proprio.f32", entry.length, entry.proprio_dim)?;
        let actions = read_matrix(path, &entry.id, "actions.f32", entry.length, entry.action_dim)?;
        trajectories.push(Trajectory {
            id: entry.id.clone(),
            embeddings,
            proprio,
            actions,
            language: entry.language.clone(),
            frequency_hz: entry.frequency_hz,
        });
    }

    Ok(Dataset {
        name: manifest.name,
        embedding_dim: manifest.embedding_dim,
        role: manifest.role,
        trajectories,
    })
}

/// Writes a dataset directory such that [`load_dataset`] reproduces it
/// bit-exactly (float payloads byte-identical). The dataset must pass
/// [`validate_dataset`] first.
pub fn write_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<(), WriteError> {
    let report = validate_dataset(d);
    if !report.ok {
        return Err(WriteError::ValidationFailed(report.issues));
    }
    let path = path.as_ref();
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| WriteError::IoFailure { path: p, source }
    };

    fs::create_dir_all(path).map_err(io(path))?;
    let manifest = Manifest {
        name: d.name.clone(),
        embedding_dim: d.embedding_dim,
        role: d.role,
        trajectories: d
            .trajectories
            .iter()
            .map(|t| ManifestEntry {
                id: t.id.clone(),
                length: t.len(),
                proprio_dim: t.proprio.cols(),
                action_dim: t.actions.cols(),
                language: t.language.clone(),
                frequency_hz: t.frequency_hz,
            })
            .collect(),
    };
    let manifest_path = path.join("manifest.json");
    let mut body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    body.push('\n');
    fs::write(&manifest_path, body).map_err(io(&manifest_path))?;

    for t in &d.trajectories {
        let dir = path.join(&t.id);
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        for (file, m) in [
            ("embeddings.f32", &t.embeddings),
            ("proprio.f32", &t.proprio),
            ("actions.f32", &t.actions),
        ] {
            let fp = dir.join(file);
            fs::write(&fp, m.to_le_bytes()).map_err(io(&fp))?;
        }
    }
    Ok(())
}

/// Checks every dataset invariant and reports each violation under a stable
/// code. Violations are data, not errors.
pub fn validate_dataset(d: &Dataset) -> ValidationReport {
    let mut issues = Vec::new();

    if d.embedding_dim == 0 {
        issues.push(Issue {
            trajectory_id: String::new(),
            code: IssueCode::BadEmbeddingDim,
            message: "dataset embedding_dim must be >= 1".to_string(),
        });
    }

    let mut seen = BTreeSet::new();
    for t in &d.trajectories {
        if !seen.insert(t.id.as_str()) {
            issues.push(Issue {
                trajectory_id: t.id.clone(),
                code: IssueCode::DuplicateId,
                message: format!("trajectory id {:?} occurs more than once", t.id),
            });
        }
    }

    for t in &d.trajectories {
        let h = t.len();
        if h < 2 {
            issues.push(Issue {
                trajectory_id: t.id.clone(),
                code: IssueCode::TooShort,
                message: format!("H={h} but trajectories need at least 2 timesteps"),
            });
        }
        if t.embeddings.cols() != d.embedding_dim {
            issues.push(Issue {
                trajectory_id: t.id.clone(),
                code: IssueCode::DimMismatch,
                message: format!(
                    "embedding dim {} differs from dataset embedding_dim {}",
                    t.embeddings.cols(),
                    d.embedding_dim
                ),
            });
        }
        for (name, m) in [("proprio", &t.proprio), ("actions", &t.actions)] {
            if m.rows() != h {
                issues.push(Issue {
                    trajectory_id: t.id.clone(),
                    code: IssueCode::RowMismatch,
                    message: format!("{name} has {} rows, expected H={h}", m.rows()),
                });
            }
        }
        for (name, m) in [
            ("embeddings", &t.embeddings),
            ("proprio", &t.proprio),
            ("actions", &t.actions),
        ] {
            if m.has_non_finite() {
                issues.push(Issue {
                    trajectory_id: t.id.clone(),
                    code: IssueCode::NonFinite,
                    message: format!("{name} contains NaN or infinity"),
                });
            }
        }
        if !(t.frequency_hz.is_finite() && t.frequency_hz > 0.0) {
            issues.push(Issue {
                trajectory_id: t.id.clone(),
                code: IssueCode::BadFrequency,
                message: format!("frequency_hz {} must be a positive real", t.frequency_hz),
            });
        }
    }

    ValidationReport::from_issues(issues)
}

/// Element-wise arithmetic mean of several same-shape views, used at
/// ingestion when a source provides multiple camera streams.
pub fn average_views(views: &[Matrix]) -> Result<Matrix, AverageError> {
    let first = views.first().ok_or(AverageError::EmptyInput)?;
    let (rows, cols) = (first.rows(), first.cols());
    for (index, v) in views.iter().enumerate() {
        if v.rows() != rows || v.cols() != cols {
            return Err(AverageError::ShapeMismatch {
                index,
                rows,
                cols,
                found_rows: v.rows(),
                found_cols: v.cols(),
            });
        }
    }
    let mut acc = vec![0.0f64; rows * cols];
    for v in views {
        for (a, x) in acc.iter_mut().zip(v.data()) {
            *a += f64::from(*x);
        }
    }
    let n = views.len() as f64;
    let data: Vec<f32> = acc.into_iter().map(|a| (a / n) as f32).collect();
    Ok(Matrix::from_vec(rows, cols, data).expect("shape checked above"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(id: &str, h: usize, e: usize) -> Trajectory {
        let emb: Vec<f32> = (0..h * e).map(|i| i as f32 * 0.5 - 3.0).collect();
        let pro: Vec<f32> = (0..h * 3).map(|i| (i % 7) as f32 * 0.25).collect();
        let act: Vec<f32> = (0..h * 2).map(|i| -(i as f32)).collect();
        Trajectory {
            id: id.to_string(),
            embeddings: Matrix::from_vec(h, e, emb).unwrap(),
            proprio: Matrix::from_vec(h, 3, pro).unwrap(),
            actions: Matrix::from_vec(h, 2, act).unwrap(),
            language: format!("do the {id} thing"),
            frequency_hz: 15.0,
        }
    }

    fn dataset() -> Dataset {
        Dataset {
            name: "unit".to_string(),
            embedding_dim: 4,
            role: Role::Prior,
            trajectories: vec![traj("t0", 5, 4), traj("t1", 7, 4)],
        }
    }

    #[test]
    fn round_trips_on_disk() {
        let d = dataset();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&d, dir.path().join("ds")).unwrap();
        let back = load_dataset(dir.path().join("ds")).unwrap();
        assert_eq!(d, back);
        assert_eq!(back.total_timesteps(), 12);
        assert_eq!(back.trajectories.len(), 2);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let d = Dataset {
            name: "empty".to_string(),
            embedding_dim: 4,
            role: Role::Target,
            trajectories: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&d, dir.path().join("ds")).unwrap();
        let back = load_dataset(dir.path().join("ds")).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn load_reports_shape_mismatch() {
        let d = dataset();
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("ds");
        write_dataset(&d, &root).unwrap();
        // Drop one row's worth of floats from t0's embeddings (5x4 -> 4x4).
        let f = root.join("t0").join("embeddings.f32");
        let bytes = fs::read(&f).unwrap();
        fs::write(&f, &bytes[..bytes.len() - 16]).unwrap();
        match load_dataset(&root) {
            Err(LoadError::ShapeMismatch {
                trajectory_id,
                expected,
                found,
                ..
            }) => {
                assert_eq!(trajectory_id, "t0");
                assert_eq!(expected, 20);
                assert_eq!(found, 16);
            }
            other => panic!("expected ShapeMismatch, got {other:?}"),
        }
    }

    #[test]
    fn load_reports_corrupt_binary() {
        let d = dataset();
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("ds");
        write_dataset(&d, &root).unwrap();
        let f = root.join("t1").join("actions.f32");
        let mut bytes = fs::read(&f).unwrap();
        bytes.push(0xAB);
        let expect_offset = bytes.len() - 1;
        fs::write(&f, &bytes).unwrap();
        match load_dataset(&root) {
            Err(LoadError::CorruptBinary { file, byte_offset }) => {
                assert_eq!(file, "t1/actions.f32");
                assert_eq!(byte_offset, expect_offset);
            }
            other => panic!("expected CorruptBinary, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_duplicate_ids() {
        let d = dataset();
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("ds");
        write_dataset(&d, &root).unwrap();
        let manifest = fs::read_to_string(root.join("manifest.json")).unwrap();
        fs::write(root.join("manifest.json"), manifest.replace("\"t1\"", "\"t0\"")).unwrap();
        match load_dataset(&root) {
            Err(LoadError::SchemaViolation(msg)) => assert!(msg.starts_with("id"), "{msg}"),
            other => panic!("expected SchemaViolation, got {other:?}"),
        }
    }

    #[test]
    fn missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(LoadError::MissingManifest(_))
        ));
    }

    #[test]
    fn write_rejects_invalid() {
        let mut d = dataset();
        d.trajectories[0].embeddings.set(0, 0, f32::NAN);
        let dir = tempfile::tempdir().unwrap();
        match write_dataset(&d, dir.path().join("ds")) {
            Err(WriteError::ValidationFailed(issues)) => {
                assert_eq!(issues.len(), 1);
                assert_eq!(issues[0].code, IssueCode::NonFinite);
            }
            other => panic!("expected ValidationFailed, got {other:?}"),
        }
    }

    #[test]
    fn validation_flags_each_invariant_once() {
        // Valid baseline.
        assert!(validate_dataset(&dataset()).ok);

        // H = 1.
        let mut d = dataset();
        d.trajectories[0] = traj("t0", 1, 4);
        let r = validate_dataset(&d);
        assert_eq!(r.issues.len(), 1);
        assert_eq!(r.issues[0].code, IssueCode::TooShort);
        assert!(!r.ok);

        // Mixed embedding dims.
        let mut d = dataset();
        d.trajectories[1] = traj("t1", 7, 8);
        let r = validate_dataset(&d);
        assert_eq!(r.issues.len(), 1);
        assert_eq!(r.issues[0].code, IssueCode::DimMismatch);

        // Row-count disagreement.
        let mut d = dataset();
        d.trajectories[0].proprio = Matrix::zeros(4, 3);
        let r = validate_dataset(&d);
        assert_eq!(r.issues.len(), 1);
        assert_eq!(r.issues[0].code, IssueCode::RowMismatch);

        // One NaN.
        let mut d = dataset();
        d.trajectories[1].actions.set(2, 0, f32::INFINITY);
        let r = validate_dataset(&d);
        assert_eq!(r.issues.len(), 1);
        assert_eq!(r.issues[0].code, IssueCode::NonFinite);

        // Duplicate ids.
        let mut d = dataset();
        d.trajectories[1].id = "t0".to_string();
        let r = validate_dataset(&d);
        assert_eq!(r.issues.len(), 1);
        assert_eq!(r.issues[0].code, IssueCode::DuplicateId);

        // Non-positive control rate.
        let mut d = dataset();
        d.trajectories[0].frequency_hz = 0.0;
        let r = validate_dataset(&d);
        assert_eq!(r.issues.len(), 1);
        assert_eq!(r.issues[0].code, IssueCode::BadFrequency);

        // Zero embedding dim is a dataset-level issue plus one per trajectory.
        let mut d = dataset();
        d.embedding_dim = 0;
        let r = validate_dataset(&d);
        assert!(r.issues.iter().any(|i| i.code == IssueCode::BadEmbeddingDim));
    }

    #[test]
    fn average_of_one_is_identity() {
        let v = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(average_views(std::slice::from_ref(&v)).unwrap(), v);
    }

    #[test]
    fn average_of_opposites_is_zero() {
        let v = Matrix::from_rows(&[vec![1.5, -2.0], vec![0.25, 4.0]]).unwrap();
        let neg =
            Matrix::from_vec(2, 2, v.data().iter().map(|x| -x).collect::<Vec<_>>()).unwrap();
        assert_eq!(average_views(&[v, neg]).unwrap(), Matrix::zeros(2, 2));
    }

    #[test]
    fn average_matches_elementwise_oracle() {
        let views = [
            Matrix::from_rows(&[vec![2.0, 4.0]]).unwrap(),
            Matrix::from_rows(&[vec![4.0, 8.0]]).unwrap(),
            Matrix::from_rows(&[vec![6.0, 0.0]]).unwrap(),
        ];
        // Element-wise loop oracle.
        let mut expect = [0.0f32; 2];
        for (j, e) in expect.iter_mut().enumerate() {
            let mut s = 0.0;
            for v in &views {
                s += v.get(0, j);
            }
            *e = s / views.len() as f32;
        }
        let got = average_views(&views).unwrap();
        assert_eq!(got.data(), &expect[..]);
        assert_eq!(got.data(), &[4.0, 4.0]);
    }

    #[test]
    fn average_rejects_bad_shapes() {
        assert_eq!(average_views(&[]), Err(AverageError::EmptyInput));
        let a = Matrix::zeros(2, 2);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(
            average_views(&[a, b]),
            Err(AverageError::ShapeMismatch { index: 1, .. })
        ));
    }

    proptest! {
        // Dyadic grid values keep every f64 partial sum exact, so the mean is
        // exactly permutation-invariant.
        #[test]
        fn average_is_permutation_invariant(
            vals in proptest::collection::vec(-64i32..=64, 3 * 4),
            swap in 0usize..3,
        ) {
            let views: Vec<Matrix> = vals
                .chunks(4)
                .map(|c| {
                    Matrix::from_vec(2, 2, c.iter().map(|v| *v as f32 / 16.0).collect()).unwrap()
                })
                .collect();
            let mut shuffled = views.clone();
            shuffled.swap(swap, (swap + 1) % 3);
            prop_assert_eq!(
                average_views(&views).unwrap(),
                average_views(&shuffled).unwrap()
            );
        }

        #[test]
        fn roundtrip_any_valid_dataset(
            n_traj in 0usize..3,
            e in 1usize..5,
            hs in proptest::collection::vec(2usize..9, 3),
            seedish in 0u32..1000,
        ) {
            let trajectories: Vec<Trajectory> = (0..n_traj)
                .map(|i| {
                    let h = hs[i];
                    let base = (seedish as f32) * 0.001 + i as f32;
                    Trajectory {
                        id: format!("traj{i}"),
                        embeddings: Matrix::from_vec(
                            h, e, (0..h * e).map(|k| base + k as f32 * 0.125).collect()).unwrap(),
                        proprio: Matrix::from_vec(
                            h, 4, (0..h * 4).map(|k| base - k as f32 * 0.25).collect()).unwrap(),
                        actions: Matrix::from_vec(
                            h, 1, (0..h).map(|k| k as f32).collect()).unwrap(),
                        language: format!("instruction {i} with, commas"),
                        frequency_hz: 15.0,
                    }
                })
                .collect();
            let d = Dataset {
                name: "prop".to_string(),
                embedding_dim: e,
                role: Role::Retrieval,
                trajectories,
            };
            let dir = tempfile::tempdir().unwrap();
            write_dataset(&d, dir.path().join("ds")).unwrap();
            let back = load_dataset(dir.path().join("ds")).unwrap();
            prop_assert_eq!(&d, &back);
            // Byte-exact payloads.
            for t in &d.trajectories {
                let stored = fs::read(dir.path().join("ds").join(&t.id).join("embeddings.f32")).unwrap();
                prop_assert_eq!(stored, t.embeddings.to_le_bytes());
            }
        }
    }
}
