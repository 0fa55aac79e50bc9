//! LIBSVM-format datasets, train/test splitting and preprocessing.
//!
//! A line reads `label idx:val idx:val ...` with 1-based, strictly
//! increasing indices. Missing indices are zero, and the dimension is the
//! largest index seen.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hck_core::learner::FeatureScaling;
use hck_core::PointSet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no samples")]
    NoSamples,
    #[error("dimension mismatch: {0} vs {1} attributes")]
    Dimension(usize, usize),
}

/// How the label column is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelKind {
    Real,
    Integer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub points: PointSet,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            points: self.points.select(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Pads every row with zeros up to `dim` attributes.
    pub fn widen(&self, dim: usize) -> Result<Dataset, DataError> {
        let d = self.dim();
        if dim < d {
            return Err(DataError::Dimension(d, dim));
        }
        if dim == d {
            return Ok(self.clone());
        }
        let mut data = Vec::with_capacity(self.len() * dim);
        for row in self.points.rows() {
            data.extend_from_slice(row);
            data.extend(std::iter::repeat_n(0.0, dim - d));
        }
        Ok(Dataset {
            points: PointSet::new(dim, data).expect("consistent shape"),
            labels: self.labels.clone(),
        })
    }
}

pub fn parse_libsvm(path: &Path, kind: LabelKind) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_libsvm_str(&text, kind)
}

pub fn parse_libsvm_str(text: &str, kind: LabelKind) -> Result<Dataset, DataError> {
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut dim = 0;
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let err = |msg: String| DataError::Parse { line: line_no, msg };
        let mut tokens = line.split_whitespace();
        let Some(label) = tokens.next() else {
            continue;
        };
        let label = match kind {
            LabelKind::Real => label
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("bad label {label:?}")))?,
            LabelKind::Integer => label
                .parse::<i64>()
                .map_err(|_| err(format!("label {label:?} is not an integer")))?
                as f64,
        };
        let mut row = Vec::new();
        let mut last = 0;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected idx:val, found {tok:?}")))?;
            let idx: usize = idx.parse().map_err(|_| err(format!("bad index {idx:?}")))?;
            if idx == 0 {
                return Err(err("indices are 1-based".into()));
            }
            if idx <= last {
                return Err(err(format!("index {idx} does not increase (previous {last})")));
            }
            let val: f64 = val
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| err(format!("bad value {val:?}")))?;
            last = idx;
            row.push((idx - 1, val));
        }
        dim = dim.max(last);
        labels.push(label);
        rows.push(row);
    }
    if labels.is_empty() {
        return Err(DataError::NoSamples);
    }
    let dim = dim.max(1);
    let mut data = vec![0.0; rows.len() * dim];
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            data[i * dim + j] = v;
        }
    }
    Ok(Dataset {
        points: PointSet::new(dim, data).expect("consistent shape"),
        labels,
    })
}

/// LIBSVM text with zero attributes omitted. Reals use the shortest
/// representation that parses back to the same value.
pub fn to_libsvm_string(data: &Dataset) -> String {
    let mut out = String::new();
    for (row, label) in data.points.rows().zip(&data.labels) {
        write!(out, "{label}").unwrap();
        for (j, v) in row.iter().enumerate() {
            if *v != 0.0 {
                write!(out, " {}:{v}", j + 1).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_libsvm(path: &Path, data: &Dataset) -> Result<(), DataError> {
    std::fs::write(path, to_libsvm_string(data)).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Random split with `round(frac·n)` samples in the first part.
pub fn split(data: &Dataset, frac: f64, seed: u64) -> (Dataset, Dataset) {
    let n = data.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as f64) * frac).round() as usize;
    let cut = cut.min(n);
    (data.select(&idx[..cut]), data.select(&idx[cut..]))
}

/// The 4:1 train/test split.
pub fn split_train_test(data: &Dataset, seed: u64) -> (Dataset, Dataset) {
    split(data, 0.8, seed)
}

/// Random subsample of `m` rows (all rows if `m ≥ n`), in original order.
pub fn subsample(data: &Dataset, m: usize, seed: u64) -> Dataset {
    let n = data.len();
    if m >= n {
        return data.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    data.select(&idx)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessReport {
    pub duplicates_removed: usize,
    pub conflicts_removed: usize,
}

/// Collapses exact duplicate training rows (same coordinates and label) to
/// their first occurrence and drops every row whose coordinates appear with
/// more than one label.
pub fn dedup(data: &Dataset) -> (Dataset, PreprocessReport) {
    let key = |row: &[f64]| -> Vec<u64> { row.iter().map(|&v| if v == 0.0 { 0u64 } else { v.to_bits() }).collect() };
    // first index, label, conflicting
    let mut seen: HashMap<Vec<u64>, (usize, f64, bool)> = HashMap::new();
    for (i, row) in data.points.rows().enumerate() {
        let y = data.labels[i];
        seen.entry(key(row))
            .and_modify(|e| e.2 |= e.1 != y)
            .or_insert((i, y, false));
    }
    let mut keep = Vec::new();
    let mut conflicts = 0;
    for (i, row) in data.points.rows().enumerate() {
        let &(first, _, conflict) = &seen[&key(row)];
        if conflict {
            conflicts += 1;
        } else if first == i {
            keep.push(i);
        }
    }
    let report = PreprocessReport {
        duplicates_removed: data.len() - keep.len() - conflicts,
        conflicts_removed: conflicts,
    };
    (data.select(&keep), report)
}

/// Deduplicates the training set and, if `normalize`, scales both sets to
/// `[-1, 1]` per attribute with training statistics.
pub fn preprocess(
    train: &Dataset,
    test: &Dataset,
    normalize: bool,
) -> Result<(Dataset, Dataset, Option<FeatureScaling>, PreprocessReport), DataError> {
    let d = train.dim().max(test.dim());
    let train = train.widen(d)?;
    let test = test.widen(d)?;
    let (train, report) = dedup(&train);
    if train.is_empty() {
        return Err(DataError::NoSamples);
    }
    if !normalize {
        return Ok((train, test, None, report));
    }
    let scaling = FeatureScaling::from_points(&train.points);
    let train = Dataset {
        points: scaling.apply(&train.points),
        labels: train.labels,
    };
    let test = Dataset {
        points: scaling.apply(&test.points),
        labels: test.labels,
    };
    Ok((train, test, Some(scaling), report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sparse_line() {
        let d = parse_libsvm_str("1 3:0.5\n", LabelKind::Real).unwrap();
        assert_eq!(d.labels, vec![1.0]);
        assert_eq!(d.points.row(0), &[0.0, 0.0, 0.5]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_libsvm_str("1 1:2\n\n2 3:1 2:4\n", LabelKind::Real).unwrap_err();
        assert!(matches!(e, DataError::Parse { line: 3, .. }), "{e}");
        let e = parse_libsvm_str("1 1:x\n", LabelKind::Real).unwrap_err();
        assert!(matches!(e, DataError::Parse { line: 1, .. }));
        let e = parse_libsvm_str("1.5 1:1\n", LabelKind::Integer).unwrap_err();
        assert!(matches!(e, DataError::Parse { line: 1, .. }));
        let e = parse_libsvm_str("1 0:1\n", LabelKind::Real).unwrap_err();
        assert!(matches!(e, DataError::Parse { line: 1, .. }));
        let e = parse_libsvm_str("1 1:nan\n", LabelKind::Real).unwrap_err();
        assert!(matches!(e, DataError::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_input_has_no_samples() {
        let e = parse_libsvm_str("\n  \n", LabelKind::Real).unwrap_err();
        assert_eq!(e.to_string(), "no samples");
    }

    #[test]
    fn text_roundtrip() {
        let text = "-1 1:0.25 4:-3e-7\n+1 2:1\n1 1:0.1 2:0.2 3:0.30000000000000004\n";
        let d = parse_libsvm_str(text, LabelKind::Integer).unwrap();
        let again = parse_libsvm_str(&to_libsvm_string(&d), LabelKind::Integer).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn dedup_rules() {
        let text = "1 1:1 2:2\n1 1:1 2:2\n2 1:3\n-1 1:3\n5 2:-0\n5 1:0\n";
        let d = parse_libsvm_str(text, LabelKind::Real).unwrap();
        let (kept, report) = dedup(&d);
        assert_eq!(kept.labels, vec![1.0, 5.0]);
        assert_eq!(report.duplicates_removed, 2);
        assert_eq!(report.conflicts_removed, 2);
    }

    #[test]
    fn normalization_uses_train_stats() {
        let train = parse_libsvm_str("1 1:0 2:7\n2 1:10 2:7\n", LabelKind::Real).unwrap();
        let test = parse_libsvm_str("3 1:5 2:1\n4 1:20\n", LabelKind::Real).unwrap();
        let (tr, te, scaling, _) = preprocess(&train, &test, true).unwrap();
        assert!(scaling.is_some());
        assert_eq!(tr.points.as_slice(), &[-1.0, 0.0, 1.0, 0.0]);
        assert_eq!(te.points.as_slice(), &[0.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn split_sizes() {
        let text: String = (0..20640).map(|i| format!("{i} 1:{i}\n")).collect();
        let d = parse_libsvm_str(&text, LabelKind::Real).unwrap();
        let (a, b) = split_train_test(&d, 0);
        assert_eq!((a.len(), b.len()), (16512, 4128));
        let (c, _) = split_train_test(&d, 0);
        assert_eq!(a, c);
    }
}
