//! Deterministic batch streaming with per-epoch seeded shuffles.
//!
//! The batch for iteration `i` is a pure function of (seed, i): the epoch's
//! permutation is derived from the epoch number, so resuming from a
//! checkpoint at any iteration reproduces the uninterrupted run exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::augment::{apply_transform, AugmentParams, GeoTransform};
use super::clouds::{synthesize_clouds, CloudParams, CloudProfile};
use super::{derive_seed, load_paired_sample, PairedSample};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Split};
use crate::vocab::ClassVocabulary;

const SHUFFLE_STREAM: u64 = 0x5aff1e;
const AUGMENT_STREAM: u64 = 0xa06e47;

/// Which splits receive on-the-fly cloud synthesis. Baked datasets (from
/// `cloudgen`) use `NoSplit` and carry clouds in the tiles themselves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudApply {
    #[serde(rename = "none")]
    NoSplit,
    Train,
    Test,
    Both,
}

impl CloudApply {
    pub fn covers(&self, split: Split) -> bool {
        matches!(
            (self, split),
            (CloudApply::Train, Split::Train)
                | (CloudApply::Test, Split::Test)
                | (CloudApply::Both, _)
        )
    }
}

#[derive(Debug)]
pub struct BatchStream {
    samples: Vec<PairedSample>,
    /// Manifest indices backing `samples` (stable cloud seeds key off these).
    manifest_indices: Vec<usize>,
    split: Split,
    batch_size: usize,
    seed: u64,
    ignore_index: usize,
    augment: Option<AugmentParams>,
    cloud: Option<(CloudParams, CloudApply)>,
}

/// Load a split and prepare deterministic batches. Augmentation is applied
/// only to the train split; clouds per the [`CloudApply`] selector.
pub fn make_batches(
    manifest: &DatasetManifest,
    vocab: &ClassVocabulary,
    split: Split,
    batch_size: usize,
    seed: u64,
    augment: Option<AugmentParams>,
    cloud: Option<(CloudParams, CloudApply)>,
) -> Result<BatchStream> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let manifest_indices = manifest.split_indices(split);
    if manifest_indices.is_empty() {
        return Err(Error::Data(format!("split {split} is empty")));
    }
    let samples = manifest_indices
        .iter()
        .map(|&i| load_paired_sample(manifest, i, vocab))
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchStream {
        samples,
        manifest_indices,
        split,
        batch_size,
        seed,
        ignore_index: vocab.ignore_index,
        augment,
        cloud,
    })
}

impl BatchStream {
    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    /// Batches per epoch; the last partial batch is kept.
    pub fn batches_per_epoch(&self) -> usize {
        self.samples.len().div_ceil(self.batch_size)
    }

    /// Slot indices (into this split) for a given iteration.
    pub fn batch_slots(&self, iteration: u64) -> Vec<usize> {
        let per_epoch = self.batches_per_epoch() as u64;
        let epoch = iteration / per_epoch;
        let batch = (iteration % per_epoch) as usize;
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, SHUFFLE_STREAM, epoch]));
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        order
            .into_iter()
            .skip(batch * self.batch_size)
            .take(self.batch_size)
            .collect()
    }

    /// Materialize the batch for an iteration, applying configured clouds
    /// (keyed by manifest index, stable across epochs) and train-split
    /// augmentation (keyed by iteration and slot).
    pub fn batch_at(&self, iteration: u64) -> Result<Vec<PairedSample>> {
        let slots = self.batch_slots(iteration);
        let mut out = Vec::with_capacity(slots.len());
        for (pos, slot) in slots.into_iter().enumerate() {
            let mut sample = self.cloud_sample(slot)?;
            if self.split == Split::Train {
                if let Some(augment) = &self.augment {
                    let mut params = augment.clone();
                    params.seed =
                        derive_seed(&[self.seed, AUGMENT_STREAM, iteration, pos as u64]);
                    let transform = GeoTransform::sample(&params);
                    sample = apply_transform(&sample, &transform, self.ignore_index);
                }
            }
            out.push(sample);
        }
        Ok(out)
    }

    /// All samples of the split in manifest order, with clouds (if
    /// configured) but never augmentation. Used by evaluation.
    pub fn all_samples(&self) -> Result<Vec<PairedSample>> {
        (0..self.samples.len()).map(|slot| self.cloud_sample(slot)).collect()
    }

    fn cloud_sample(&self, slot: usize) -> Result<PairedSample> {
        let sample = &self.samples[slot];
        if let Some((cloud, apply)) = &self.cloud {
            if cloud.profile != CloudProfile::None && apply.covers(self.split) {
                let per_sample = cloud.for_sample(self.manifest_indices[slot] as u64);
                return synthesize_clouds(sample, &per_sample);
            }
        }
        Ok(sample.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::toygen::{generate_toy_dataset, ToySceneSpec};
    use crate::vocab::resolve_vocabulary;

    fn toy_setup(samples: usize) -> (tempfile::TempDir, DatasetManifest, ClassVocabulary) {
        let dir = tempfile::tempdir().unwrap();
        let spec = ToySceneSpec { samples, train_fraction: 1.0, ..ToySceneSpec::default() };
        let manifest = generate_toy_dataset(&spec, dir.path()).unwrap();
        let vocab = resolve_vocabulary(&spec.class_names(), &[], "a photo of {}", 255).unwrap();
        (dir, manifest, vocab)
    }

    #[test]
    fn five_samples_batch_two_gives_sizes_2_2_1() {
        let (_dir, manifest, vocab) = toy_setup(5);
        let stream =
            make_batches(&manifest, &vocab, Split::Train, 2, 0, None, None).unwrap();
        assert_eq!(stream.batches_per_epoch(), 3);
        let sizes: Vec<usize> =
            (0..3).map(|i| stream.batch_at(i).unwrap().len()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn same_seed_same_batch_order() {
        let (_dir, manifest, vocab) = toy_setup(6);
        let a = make_batches(&manifest, &vocab, Split::Train, 2, 9, None, None).unwrap();
        let b = make_batches(&manifest, &vocab, Split::Train, 2, 9, None, None).unwrap();
        for i in 0..6 {
            assert_eq!(a.batch_slots(i), b.batch_slots(i));
        }
    }

    #[test]
    fn epochs_cover_every_sample_exactly_once() {
        let (_dir, manifest, vocab) = toy_setup(5);
        let stream =
            make_batches(&manifest, &vocab, Split::Train, 2, 3, None, None).unwrap();
        let mut seen: Vec<usize> =
            (0..3).flat_map(|i| stream.batch_slots(i)).collect();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn test_split_never_augments() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ToySceneSpec { samples: 4, train_fraction: 0.5, ..ToySceneSpec::default() };
        let manifest = generate_toy_dataset(&spec, dir.path()).unwrap();
        let vocab = resolve_vocabulary(&spec.class_names(), &[], "a photo of {}", 255).unwrap();
        let augment = AugmentParams {
            translate_px: 4.0,
            hflip: true,
            rotate_deg: 30.0,
            ..AugmentParams::default()
        };
        let stream =
            make_batches(&manifest, &vocab, Split::Test, 2, 0, Some(augment), None).unwrap();
        let raw: Vec<PairedSample> = manifest
            .split_indices(Split::Test)
            .into_iter()
            .map(|i| load_paired_sample(&manifest, i, &vocab).unwrap())
            .collect();
        let batch = stream.batch_at(0).unwrap();
        for sample in &batch {
            assert!(raw.contains(sample), "test sample was modified");
        }
    }

    #[test]
    fn empty_split_is_an_error() {
        let (_dir, manifest, vocab) = toy_setup(3); // all train
        let err = make_batches(&manifest, &vocab, Split::Test, 2, 0, None, None).unwrap_err();
        assert!(err.to_string().contains("empty"));
    }
}
