use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::NcmError;
use crate::data::{Dataset, Label, SparseVector};
use crate::kernel::{squared_distance, tanimoto};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    /// `1 - T(a, b)`.
    #[default]
    Tanimoto,
    Euclidean,
}

impl Distance {
    pub fn eval(&self, a: &SparseVector, b: &SparseVector) -> f64 {
        match self {
            Distance::Tanimoto => 1.0 - tanimoto(a, b),
            Distance::Euclidean => squared_distance(a, b).sqrt(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Distance::Tanimoto => "tanimoto",
            Distance::Euclidean => "euclidean",
        }
    }
}

impl std::str::FromStr for Distance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tanimoto" => Ok(Distance::Tanimoto),
            "euclidean" => Ok(Distance::Euclidean),
            other => Err(format!("unknown kNN metric {other:?} (expected tanimoto or euclidean)")),
        }
    }
}

/// k-nearest-neighbour nonconformity against a fixed reference set.
#[derive(Debug, Clone)]
pub struct KnnNcm {
    k: usize,
    metric: Distance,
    reference: Arc<Dataset>,
}

impl KnnNcm {
    /// The reference set must hold at least `k` examples of each label.
    pub fn new(reference: Arc<Dataset>, k: usize, metric: Distance) -> Result<Self, NcmError> {
        if k == 0 {
            return Err(NcmError::InvalidParameter("k must be at least 1".into()));
        }
        for label in Label::BOTH {
            let n = reference.labels().iter().filter(|&&l| l == label).count();
            if n < k {
                return Err(NcmError::InsufficientReference { label, have: n, k });
            }
        }
        Ok(Self { k, metric, reference })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn metric(&self) -> Distance {
        self.metric
    }

    pub fn reference(&self) -> &Dataset {
        &self.reference
    }

    pub fn score(&self, x: &SparseVector, y: Label) -> f64 {
        knn_ncm(&self.reference, self.k, self.metric, x, y, None)
    }

    /// Score for reference example `i`, which is left out of its own
    /// neighbour search.
    pub fn score_member(&self, i: usize, y: Label) -> f64 {
        knn_ncm(&self.reference, self.k, self.metric, self.reference.vector(i), y, Some(i))
    }
}

/// Sum of the `k` smallest values (fewer if fewer are available), added in
/// ascending order.
fn sum_smallest(mut d: Vec<f64>, k: usize) -> f64 {
    let k = k.min(d.len());
    if k == 0 {
        return 0.0;
    }
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, f64::total_cmp);
        d.truncate(k);
    }
    d.sort_by(f64::total_cmp);
    d.iter().sum()
}

/// `(sum of k smallest same-label distances) / (sum of k smallest
/// other-label distances)`, with reference example `exclude` skipped.
///
/// A zero numerator gives 0. Otherwise a zero denominator gives `+inf`.
pub fn knn_ncm(
    reference: &Dataset,
    k: usize,
    metric: Distance,
    x: &SparseVector,
    y: Label,
    exclude: Option<usize>,
) -> f64 {
    let mut same = Vec::new();
    let mut other = Vec::new();
    for (j, (v, label)) in reference.iter().enumerate() {
        if Some(j) == exclude {
            continue;
        }
        let d = metric.eval(v, x);
        if label == y {
            same.push(d);
        } else {
            other.push(d);
        }
    }
    let num = sum_smallest(same, k);
    let den = sum_smallest(other, k);
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}
