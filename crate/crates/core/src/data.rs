//! Sparse count-valued datasets.
//!
//! On disk, one example per line:
//!
//! ```text
//! #features: 165786
//! +1 3:2 7:1 # CID-1234
//! -1
//! ```
//!
//! Labels are `+1` (Active) or `-1` (Inactive). Feature indices are 1-based
//! and strictly increasing within a line; in memory they are 0-based. The
//! optional `#features: N` header fixes the dimension, otherwise it is one
//! more than the largest (0-based) index seen. A trailing `# <id>` attaches
//! an external identifier; either every example carries one or none does.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid sparse vector: {0}")]
    InvalidVector(String),
    #[error("feature index {index} out of range for {num_features} features")]
    IndexOutOfRange { index: usize, num_features: usize },
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("ids length {ids} does not match {examples} examples")]
    IdsMismatch { ids: usize, examples: usize },
}

/// Binary label. `Active` is the minority (positive) class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Active,
    Inactive,
}

impl Label {
    pub const BOTH: [Label; 2] = [Label::Active, Label::Inactive];

    /// +1 for Active, -1 for Inactive.
    pub fn sign(self) -> f64 {
        match self {
            Label::Active => 1.0,
            Label::Inactive => -1.0,
        }
    }

    pub fn other(self) -> Label {
        match self {
            Label::Active => Label::Inactive,
            Label::Inactive => Label::Active,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Label::Active => 0,
            Label::Inactive => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Active => "Active",
            Label::Inactive => "Inactive",
        }
    }

    fn token(self) -> &'static str {
        match self {
            Label::Active => "+1",
            Label::Inactive => "-1",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sparse vector of non-negative counts with strictly increasing indices.
/// Zero entries are never stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    indices: Vec<u32>,
    values: Vec<f64>,
    total: f64,
}

impl SparseVector {
    pub fn new(indices: Vec<u32>, values: Vec<f64>) -> Result<Self, DataError> {
        if indices.len() != values.len() {
            return Err(DataError::InvalidVector(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if let Some(w) = indices.windows(2).find(|w| w[0] >= w[1]) {
            return Err(DataError::InvalidVector(format!(
                "indices not strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(DataError::InvalidVector(format!(
                "value {v} is not a positive finite count"
            )));
        }
        let total = values.iter().sum();
        Ok(Self {
            indices,
            values,
            total,
        })
    }

    /// Builds from `(index, value)` pairs, dropping zeros.
    pub fn from_pairs<I>(pairs: I) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = (u32, f64)>,
    {
        let (indices, values): (Vec<u32>, Vec<f64>) =
            pairs.into_iter().filter(|&(_, v)| v != 0.0).unzip();
        Self::new(indices, values)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Sum of all counts.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// One past the largest index, or 0 for the empty vector.
    pub fn dimension_hint(&self) -> usize {
        self.indices.last().map_or(0, |&i| i as usize + 1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    fn write_entries(&self, out: &mut String) {
        use fmt::Write as _;
        for (i, v) in self.iter() {
            let _ = write!(out, " {}:{}", i + 1, v);
        }
    }
}

/// Labelled sparse examples sharing one feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    vectors: Vec<SparseVector>,
    labels: Vec<Label>,
    num_features: usize,
    ids: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        vectors: Vec<SparseVector>,
        labels: Vec<Label>,
        num_features: usize,
    ) -> Result<Self, DataError> {
        if vectors.len() != labels.len() {
            return Err(DataError::InvalidVector(format!(
                "{} vectors but {} labels",
                vectors.len(),
                labels.len()
            )));
        }
        if let Some(v) = vectors.iter().find(|v| v.dimension_hint() > num_features) {
            return Err(DataError::IndexOutOfRange {
                index: v.dimension_hint() - 1,
                num_features,
            });
        }
        Ok(Self {
            vectors,
            labels,
            num_features,
            ids: None,
        })
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self, DataError> {
        if ids.len() != self.vectors.len() {
            return Err(DataError::IdsMismatch {
                ids: ids.len(),
                examples: self.vectors.len(),
            });
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn empty(num_features: usize) -> Self {
        Self {
            vectors: Vec::new(),
            labels: Vec::new(),
            num_features,
            ids: None,
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn vectors(&self) -> &[SparseVector] {
        &self.vectors
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    pub fn vector(&self, i: usize) -> &SparseVector {
        &self.vectors[i]
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    /// External id of example `i`, or its 0-based position when the dataset
    /// carries no ids.
    pub fn id(&self, i: usize) -> String {
        match &self.ids {
            Some(ids) => ids[i].clone(),
            None => i.to_string(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SparseVector, Label)> {
        self.vectors.iter().zip(self.labels.iter().copied())
    }

    /// Widens the feature space. Narrowing below a used index is an error.
    pub fn set_num_features(&mut self, num_features: usize) -> Result<(), DataError> {
        if let Some(v) = self.vectors.iter().find(|v| v.dimension_hint() > num_features) {
            return Err(DataError::IndexOutOfRange {
                index: v.dimension_hint() - 1,
                num_features,
            });
        }
        self.num_features = num_features;
        Ok(())
    }

    /// Examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            vectors: indices.iter().map(|&i| self.vectors[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_features: self.num_features,
            ids: self
                .ids
                .as_ref()
                .map(|ids| indices.iter().map(|&i| ids[i].clone()).collect()),
        }
    }

    /// Same examples with labels replaced.
    pub fn with_labels(&self, labels: Vec<Label>) -> Result<Dataset, DataError> {
        if labels.len() != self.len() {
            return Err(DataError::InvalidVector(format!(
                "{} labels for {} examples",
                labels.len(),
                self.len()
            )));
        }
        Ok(Dataset {
            labels,
            ..self.clone()
        })
    }

    /// Positions of all examples carrying `label`.
    pub fn indices_of(&self, label: Label) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == label).collect()
    }

    /// Serializes to the sparse text format, including the `#features` header.
    pub fn to_sparse_text(&self) -> String {
        let mut out = format!("#features: {}\n", self.num_features);
        for i in 0..self.len() {
            out.push_str(self.labels[i].token());
            self.vectors[i].write_entries(&mut out);
            if let Some(ids) = &self.ids {
                out.push_str(" # ");
                out.push_str(&ids[i]);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_sparse_file(&self, path: &Path) -> Result<(), DataError> {
        let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
        file.write_all(self.to_sparse_text().as_bytes())
            .map_err(|e| io_err(path, e))
    }

    /// SHA-256 of the canonical text serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_sparse_text().as_bytes()))
    }
}

fn io_err(path: &Path, source: io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_label(token: &str, line: usize) -> Result<Label, DataError> {
    match token {
        "+1" | "1" => Ok(Label::Active),
        "-1" => Ok(Label::Inactive),
        other => Err(DataError::Parse {
            line,
            message: format!("label must be +1 or -1, got {other:?}"),
        }),
    }
}

fn parse_entry(token: &str, line: usize) -> Result<(u32, f64), DataError> {
    let bad = |message: String| DataError::Parse { line, message };
    let (idx, val) = token
        .split_once(':')
        .ok_or_else(|| bad(format!("expected index:value, got {token:?}")))?;
    let idx: u64 = idx
        .parse()
        .map_err(|_| bad(format!("bad feature index {idx:?}")))?;
    if idx == 0 || idx > u32::MAX as u64 {
        return Err(bad(format!("feature index {idx} out of range (1-based)")));
    }
    let val: f64 = val
        .parse()
        .map_err(|_| bad(format!("bad feature value {val:?}")))?;
    if !val.is_finite() || val < 0.0 {
        return Err(bad(format!("feature value {val} must be a non-negative count")));
    }
    Ok(((idx - 1) as u32, val))
}

/// Parses the sparse text format from any reader.
pub fn parse_sparse<R: BufRead>(reader: R) -> Result<Dataset, DataError> {
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    let mut ids: Vec<Option<String>> = Vec::new();
    let mut header_features: Option<usize> = None;
    let mut max_dim = 0usize;

    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| DataError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some(value) = rest.trim().strip_prefix("features:") {
                let value = value.trim();
                let parsed = value.parse::<usize>().map_err(|_| DataError::Parse {
                    line: lineno,
                    message: format!("bad #features header value {value:?}"),
                })?;
                header_features = Some(parsed);
            }
            continue;
        }

        let (body, id) = match trimmed.split_once('#') {
            Some((body, id)) => (body, Some(id.trim().to_string())),
            None => (trimmed, None),
        };
        let mut tokens = body.split_whitespace();
        let label = parse_label(tokens.next().unwrap_or(""), lineno)?;
        let mut pairs = Vec::new();
        for token in tokens {
            let (idx, val) = parse_entry(token, lineno)?;
            if let Some(&(prev, _)) = pairs.last() {
                if idx <= prev {
                    return Err(DataError::Parse {
                        line: lineno,
                        message: format!(
                            "feature indices must be strictly increasing ({} then {})",
                            prev + 1,
                            idx + 1
                        ),
                    });
                }
            }
            pairs.push((idx, val));
        }
        let vector = SparseVector::from_pairs(pairs).map_err(|e| DataError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        max_dim = max_dim.max(vector.dimension_hint());
        vectors.push(vector);
        labels.push(label);
        ids.push(id);
    }

    let num_features = match header_features {
        Some(n) if n < max_dim => {
            return Err(DataError::IndexOutOfRange {
                index: max_dim - 1,
                num_features: n,
            })
        }
        Some(n) => n,
        None => max_dim,
    };

    let with_id = ids.iter().filter(|id| id.is_some()).count();
    let dataset = Dataset::new(vectors, labels, num_features)?;
    if with_id == 0 {
        Ok(dataset)
    } else if with_id == ids.len() {
        dataset.with_ids(ids.into_iter().map(Option::unwrap).collect())
    } else {
        let line = ids.iter().position(Option::is_none).unwrap_or(0) + 1;
        Err(DataError::Parse {
            line,
            message: "example has no id while others do".into(),
        })
    }
}

/// Reads a sparse dataset file.
pub fn parse_sparse_file(path: &Path) -> Result<Dataset, DataError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    parse_sparse(BufReader::new(file))
}

/// Sizes and seed for a random proper-train / calibration / test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub proper_train_size: usize,
    pub calibration_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl SplitSpec {
    /// Calibration takes whatever remains after the test set and the proper
    /// training set are drawn.
    pub fn with_remainder(
        total: usize,
        proper_train_size: usize,
        test_size: usize,
        seed: u64,
    ) -> Result<Self, DataError> {
        let used = proper_train_size + test_size;
        if used >= total {
            return Err(DataError::InfeasibleSplit(format!(
                "proper train {proper_train_size} + test {test_size} leaves no calibration examples out of {total}"
            )));
        }
        Ok(Self {
            proper_train_size,
            calibration_size: total - used,
            test_size,
            seed,
        })
    }

    fn check(&self, total: usize) -> Result<(), DataError> {
        if self.proper_train_size == 0 || self.calibration_size == 0 {
            return Err(DataError::InfeasibleSplit(
                "proper training and calibration sizes must be at least 1".into(),
            ));
        }
        let sum = self.proper_train_size + self.calibration_size + self.test_size;
        if sum > total {
            return Err(DataError::InfeasibleSplit(format!(
                "requested {sum} examples but only {total} available"
            )));
        }
        Ok(())
    }
}

/// Index partition produced by [`split_indices`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub proper_train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded uniform random partition. The test set is drawn first, then the
/// proper training set, then calibration.
pub fn split_indices(total: usize, spec: &SplitSpec) -> Result<SplitIndices, DataError> {
    spec.check(total)?;
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let (test, rest) = order.split_at(spec.test_size);
    let (proper, rest) = rest.split_at(spec.proper_train_size);
    let calibration = &rest[..spec.calibration_size];
    Ok(SplitIndices {
        proper_train: proper.to_vec(),
        calibration: calibration.to_vec(),
        test: test.to_vec(),
    })
}

/// Splits into (proper_train, calibration, test).
pub fn split_dataset(
    ds: &Dataset,
    spec: &SplitSpec,
) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let idx = split_indices(ds.len(), spec)?;
    Ok((
        ds.subset(&idx.proper_train),
        ds.subset(&idx.calibration),
        ds.subset(&idx.test),
    ))
}

/// `(n_active, n_inactive)`.
pub fn class_counts(ds: &Dataset) -> (usize, usize) {
    let active = ds.labels.iter().filter(|&&l| l == Label::Active).count();
    (active, ds.len() - active)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn parse(text: &str) -> Result<Dataset, DataError> {
        parse_sparse(text.as_bytes())
    }

    #[test]
    fn parses_basic_line() {
        let ds = parse("+1 3:2 7:1\n").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.label(0), Label::Active);
        let pairs: Vec<_> = ds.vector(0).iter().collect();
        assert_eq!(pairs, vec![(2, 2.0), (6, 1.0)]);
        assert_eq!(ds.num_features(), 7);
    }

    #[test]
    fn parses_empty_vector() {
        let ds = parse("-1\n").unwrap();
        assert_eq!(ds.label(0), Label::Inactive);
        assert!(ds.vector(0).is_empty());
        assert_eq!(ds.num_features(), 0);
    }

    #[test]
    fn num_features_from_max_index() {
        let ds = parse("+1 1:1 165786:3\n-1 5:1\n").unwrap();
        assert_eq!(ds.num_features(), 165_786);
    }

    #[test]
    fn header_overrides_num_features() {
        let ds = parse("#features: 100\n+1 3:1\n").unwrap();
        assert_eq!(ds.num_features(), 100);
        let err = parse("#features: 2\n+1 3:1\n").unwrap_err();
        assert!(matches!(err, DataError::IndexOutOfRange { .. }));
    }

    #[test]
    fn rejects_bad_lines_with_line_number() {
        for (text, line) in [
            ("+1 1:1\n0 2:1\n", 2),
            ("+1 3:1 2:1\n", 1),
            ("-1 1:1\n+1 2:-1\n", 2),
            ("+1 1:1\n\n-1 2\n", 3),
            ("+1 0:1\n", 1),
        ] {
            match parse(text) {
                Err(DataError::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn duplicate_index_rejected() {
        assert!(parse("+1 2:1 2:3\n").is_err());
    }

    #[test]
    fn zero_values_are_dropped() {
        let ds = parse("+1 1:0 2:4\n").unwrap();
        assert_eq!(ds.vector(0).iter().collect::<Vec<_>>(), vec![(1, 4.0)]);
    }

    #[test]
    fn ids_all_or_none() {
        let ds = parse("+1 1:1 # CID1\n-1 # CID2\n").unwrap();
        assert_eq!(ds.ids().unwrap(), ["CID1", "CID2"]);
        assert!(parse("+1 1:1 # CID1\n-1\n").is_err());
    }

    #[test]
    fn text_round_trip() {
        let text = "#features: 10\n+1 1:2 4:0.5 # a\n-1 # b\n-1 10:3 # c\n";
        let ds = parse(text).unwrap();
        assert_eq!(ds.to_sparse_text(), text);
        assert_eq!(parse(&ds.to_sparse_text()).unwrap(), ds);
    }

    #[test]
    fn class_counts_basic() {
        assert_eq!(class_counts(&Dataset::empty(3)), (0, 0));
        let labels: Vec<Label> = (0..100)
            .map(|i| if i % 20 == 0 { Label::Active } else { Label::Inactive })
            .collect();
        let ds = Dataset::new(vec![SparseVector::empty(); 100], labels, 1).unwrap();
        assert_eq!(class_counts(&ds), (5, 95));
    }

    fn toy(n: usize) -> Dataset {
        let vectors = (0..n)
            .map(|i| SparseVector::from_pairs([(i as u32, 1.0)]).unwrap())
            .collect();
        let labels = (0..n)
            .map(|i| if i % 2 == 0 { Label::Active } else { Label::Inactive })
            .collect();
        Dataset::new(vectors, labels, n).unwrap()
    }

    #[test]
    fn split_is_disjoint_with_requested_sizes() {
        let spec = SplitSpec {
            proper_train_size: 6,
            calibration_size: 3,
            test_size: 1,
            seed: 3,
        };
        let idx = split_indices(10, &spec).unwrap();
        assert_eq!(idx.proper_train.len(), 6);
        assert_eq!(idx.calibration.len(), 3);
        assert_eq!(idx.test.len(), 1);
        let all: HashSet<usize> = idx
            .proper_train
            .iter()
            .chain(&idx.calibration)
            .chain(&idx.test)
            .copied()
            .collect();
        assert_eq!(all.len(), 10);
        assert!(all.iter().all(|&i| i < 10));

        let (p, c, t) = split_dataset(&toy(10), &spec).unwrap();
        assert_eq!((p.len(), c.len(), t.len()), (6, 3, 1));
    }

    #[test]
    fn split_is_deterministic() {
        let spec = SplitSpec {
            proper_train_size: 50,
            calibration_size: 30,
            test_size: 20,
            seed: 7,
        };
        assert_eq!(
            split_indices(100, &spec).unwrap(),
            split_indices(100, &spec).unwrap()
        );
        let other = SplitSpec { seed: 8, ..spec };
        assert_ne!(
            split_indices(100, &spec).unwrap(),
            split_indices(100, &other).unwrap()
        );
    }

    #[test]
    fn remainder_split_matches_protocol_arithmetic() {
        let spec = SplitSpec::with_remainder(138_287, 100_000, 10_000, 1).unwrap();
        assert_eq!(spec.calibration_size, 28_287);
        assert!(SplitSpec::with_remainder(10, 6, 4, 0).is_err());
    }

    #[test]
    fn infeasible_split_rejected() {
        let spec = SplitSpec {
            proper_train_size: 6,
            calibration_size: 5,
            test_size: 0,
            seed: 0,
        };
        assert!(matches!(
            split_indices(10, &spec),
            Err(DataError::InfeasibleSplit(_))
        ));
        let zero = SplitSpec {
            calibration_size: 0,
            ..spec
        };
        assert!(split_indices(100, &zero).is_err());
    }
}
