//! Synthetic sparse-count binary tasks.
//!
//! Each class has a multinomial distribution over features. The Inactive
//! feature weights are log-normal; the Active weights are the Inactive ones
//! multiplied by `exp(separation * z_f)` with `z_f` standard normal, so the
//! classes overlap more as `separation` shrinks. An example draws
//! `Poisson(mean_nnz)` feature occurrences (at least one) from its class.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, SparseVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub num_features: usize,
    /// Mean number of feature occurrences per example.
    pub mean_nnz: f64,
    pub separation: f64,
    /// Seeds the class profiles (not the examples).
    pub profile_seed: u64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            num_features: 200,
            mean_nnz: 20.0,
            separation: 1.0,
            profile_seed: 1,
        }
    }
}

struct Profiles {
    active: WeightedIndex<f64>,
    inactive: WeightedIndex<f64>,
}

impl SyntheticTask {
    fn profiles(&self) -> Profiles {
        let mut rng = ChaCha8Rng::seed_from_u64(self.profile_seed);
        let normal = Normal::<f64>::new(0.0, 1.0).expect("unit normal");
        let base: Vec<f64> = (0..self.num_features).map(|_| normal.sample(&mut rng).exp()).collect();
        let active: Vec<f64> = base
            .iter()
            .map(|w| w * (self.separation * normal.sample(&mut rng)).exp())
            .collect();
        Profiles {
            active: WeightedIndex::new(&active).expect("positive weights"),
            inactive: WeightedIndex::new(&base).expect("positive weights"),
        }
    }

    fn draw(&self, profile: &WeightedIndex<f64>, rng: &mut ChaCha8Rng) -> SparseVector {
        let occurrences = Poisson::new(self.mean_nnz)
            .map(|p| p.sample(rng) as usize)
            .unwrap_or(0)
            .max(1);
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..occurrences {
            *counts.entry(profile.sample(rng) as u32).or_insert(0.0) += 1.0;
        }
        SparseVector::from_pairs(counts).expect("sorted positive counts")
    }

    /// `n` examples, exactly `n_active` of them Active, in random order.
    pub fn generate(&self, n: usize, n_active: usize, seed: u64) -> Dataset {
        assert!(n_active <= n);
        let profiles = self.profiles();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<Label> = (0..n)
            .map(|i| if i < n_active { Label::Active } else { Label::Inactive })
            .collect();
        labels.shuffle(&mut rng);
        let vectors = labels
            .iter()
            .map(|&l| match l {
                Label::Active => self.draw(&profiles.active, &mut rng),
                Label::Inactive => self.draw(&profiles.inactive, &mut rng),
            })
            .collect();
        Dataset::new(vectors, labels, self.num_features).expect("indices within feature space")
    }

    /// A task whose class profiles are perturbed, for non-exchangeable
    /// test data.
    pub fn drifted(&self, profile_seed: u64) -> SyntheticTask {
        SyntheticTask {
            profile_seed,
            ..*self
        }
    }
}

/// `n` examples with `round(n * active_fraction)` Actives.
pub fn synthetic_dataset(task: &SyntheticTask, n: usize, active_fraction: f64, seed: u64) -> Dataset {
    let n_active = ((n as f64) * active_fraction).round() as usize;
    task.generate(n, n_active.min(n), seed)
}
