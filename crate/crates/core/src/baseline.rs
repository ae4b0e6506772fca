//! Comparison retrieval methods: brute-force kNN on the same global
//! features, and the whole training set as a generic prior.
//!
//! The kNN index is deliberately a flat linear scan. Its point is to make
//! the cost comparison measurable: every probe performs exactly one
//! distance computation per training image, recorded on an atomic counter.

use core::sync::atomic::{AtomicU64, Ordering};

use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::forest::{RetrievalEntry, RetrievalSet};

/// Flat feature matrix over all training images.
#[derive(Debug)]
pub struct KnnIndex {
    ids: Vec<u64>,
    features: Vec<f64>,
    d_glob: usize,
    distance_evals: AtomicU64,
}

impl KnnIndex {
    pub fn build(train: &Dataset) -> KnnIndex {
        let mut ids = Vec::with_capacity(train.images.len());
        let mut features = Vec::with_capacity(train.images.len() * train.d_glob);
        for img in &train.images {
            ids.push(img.id);
            features.extend_from_slice(&img.global_features);
        }
        KnnIndex {
            ids,
            features,
            d_glob: train.d_glob,
            distance_evals: AtomicU64::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Distance computations performed by this index since construction.
    pub fn distance_evals(&self) -> u64 {
        self.distance_evals.load(Ordering::Relaxed)
    }

    /// Bytes held by the feature matrix (f64 entries).
    pub fn memory_bytes(&self) -> u64 {
        feature_matrix_bytes(self.ids.len(), self.d_glob)
    }

    /// The `k` training images closest to `phi` in L2 distance, ties broken
    /// by ascending image id. The vote field carries a rank surrogate
    /// (nearest gets the largest value) so the result obeys the
    /// descending-vote ordering of [`RetrievalSet`].
    pub fn retrieve(&self, phi: &[f64], k: usize) -> Result<RetrievalSet> {
        if phi.len() != self.d_glob {
            return Err(Error::DimensionMismatch {
                expected: self.d_glob,
                got: phi.len(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidConfig(String::from(
                "retrieval size k must be >= 1",
            )));
        }
        let n = self.ids.len();
        let mut scored: Vec<(f64, u64)> = Vec::with_capacity(n);
        for (row, &id) in self.ids.iter().enumerate() {
            let base = row * self.d_glob;
            let mut dist2 = 0.0;
            for (a, b) in self.features[base..base + self.d_glob].iter().zip(phi) {
                let d = a - b;
                dist2 += d * d;
            }
            scored.push((dist2, id));
        }
        self.distance_evals.fetch_add(n as u64, Ordering::Relaxed);
        scored.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.truncate(k);
        let k_eff = scored.len();
        Ok(RetrievalSet {
            entries: scored
                .into_iter()
                .enumerate()
                .map(|(rank, (_, image_id))| RetrievalEntry {
                    image_id,
                    votes: (k_eff - rank) as u32,
                })
                .collect(),
        })
    }
}

/// Bytes of an `n x d` f64 feature matrix.
pub fn feature_matrix_bytes(n_train: usize, d_glob: usize) -> u64 {
    n_train as u64 * d_glob as u64 * 8
}

/// The whole training set with uniform votes: a prior that ignores the
/// probe entirely.
pub fn all_train_retrieval(train: &Dataset) -> RetrievalSet {
    let mut entries: Vec<RetrievalEntry> = train
        .images
        .iter()
        .map(|img| RetrievalEntry {
            image_id: img.id,
            votes: 1,
        })
        .collect();
    entries.sort_by_key(|e| e.image_id);
    RetrievalSet { entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthConfig};
    use alloc::vec;

    fn dataset() -> Dataset {
        synth_generate(&SynthConfig {
            num_scene_types: 3,
            num_components: 4,
            images_per_scene: 10,
            boxes_per_image: (1, 2),
            d_glob: 6,
            d_app: 4,
            noise_global: 0.3,
            noise_app: 0.1,
            noise_pos: 0.05,
            seed: 77,
        })
        .unwrap()
    }

    #[test]
    fn probe_on_training_features_ranks_itself_first() {
        let ds = dataset();
        let index = KnnIndex::build(&ds);
        for img in ds.images.iter().take(5) {
            let rs = index.retrieve(&img.global_features, 3).unwrap();
            assert_eq!(rs.entries[0].image_id, img.id);
        }
    }

    #[test]
    fn k_of_full_size_returns_everything_sorted() {
        let ds = dataset();
        let index = KnnIndex::build(&ds);
        let rs = index.retrieve(&ds.images[4].global_features, ds.images.len() + 5).unwrap();
        assert_eq!(rs.len(), ds.images.len());
        for pair in rs.entries.windows(2) {
            assert!(pair[0].votes > pair[1].votes);
        }
    }

    #[test]
    fn matches_full_sort_oracle() {
        let ds = dataset();
        let index = KnnIndex::build(&ds);
        for probe_img in ds.images.iter().step_by(2) {
            let probe = &probe_img.global_features;
            let rs = index.retrieve(probe, 7).unwrap();
            let mut oracle: Vec<(f64, u64)> = ds
                .images
                .iter()
                .map(|img| {
                    let d2: f64 = img
                        .global_features
                        .iter()
                        .zip(probe)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d2.sqrt(), img.id)
                })
                .collect();
            oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let expected: Vec<u64> = oracle.iter().take(7).map(|&(_, id)| id).collect();
            let got: Vec<u64> = rs.image_ids().collect();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn exactly_n_distance_computations_per_probe() {
        let ds = dataset();
        let index = KnnIndex::build(&ds);
        let n = ds.images.len() as u64;
        for (i, img) in ds.images.iter().take(4).enumerate() {
            let before = index.distance_evals();
            index.retrieve(&img.global_features, 1).unwrap();
            assert_eq!(index.distance_evals() - before, n);
            assert_eq!(index.distance_evals(), (i as u64 + 1) * n);
        }
    }

    #[test]
    fn row_permutation_only_changes_tie_order_by_id() {
        let ds = dataset();
        let mut reversed = ds.clone();
        reversed.images.reverse();
        let a = KnnIndex::build(&ds);
        let b = KnnIndex::build(&reversed);
        let probe = &ds.images[9].global_features;
        let ra = a.retrieve(probe, 10).unwrap();
        let rb = b.retrieve(probe, 10).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn retrieve_validates_inputs() {
        let ds = dataset();
        let index = KnnIndex::build(&ds);
        assert!(matches!(
            index.retrieve(&vec![0.0; 2], 3),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            index.retrieve(&ds.images[0].global_features, 0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn all_train_prior_is_probe_independent() {
        let ds = dataset();
        let rs = all_train_retrieval(&ds);
        assert_eq!(rs.len(), ds.images.len());
        assert!(rs.entries.iter().all(|e| e.votes == 1));
        let ids: Vec<u64> = rs.image_ids().collect();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn memory_accounting_is_exact() {
        let ds = dataset();
        let index = KnnIndex::build(&ds);
        assert_eq!(index.memory_bytes(), 30 * 6 * 8);
        assert_eq!(feature_matrix_bytes(14125, 16000), 14125 * 16000 * 8);
    }
}
