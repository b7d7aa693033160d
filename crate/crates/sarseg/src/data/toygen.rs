//! Deterministic toy scenes for desk-scale experiments.
//!
//! Scenes are colored rectangular regions over a background class. RGB gets
//! a class-dependent color plus texture noise; SAR is derived from the label
//! geometry (per-class intensity plus a boundary response), so it carries
//! class signal that survives optical cloud contamination.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, PairedSample};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestEntry, Split};
use crate::tensor::Tensor;

/// Class palette: distinct base colors for up to [`MAX_CLASSES`] classes.
const PALETTE: [[f64; 3]; 6] = [
    [0.18, 0.38, 0.18], // background: dark green
    [0.62, 0.58, 0.46], // tan
    [0.42, 0.44, 0.58], // slate
    [0.70, 0.34, 0.28], // brick
    [0.30, 0.56, 0.60], // teal
    [0.58, 0.48, 0.64], // violet
];

/// SAR intensities are spaced evenly over this range, which keeps any two
/// class means at least 0.2 apart for up to 5 classes.
const SAR_RANGE: (f64, f64) = (0.05, 0.95);
pub const MAX_CLASSES: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySceneSpec {
    /// Number of classes including the background class 0.
    pub classes: usize,
    pub samples: usize,
    /// Square tile side in pixels.
    pub tile: usize,
    /// Upper bound on painted patch side in pixels.
    pub patch: usize,
    /// Fraction of samples assigned to the train split (rest test).
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for ToySceneSpec {
    fn default() -> Self {
        Self { classes: 3, samples: 16, tile: 32, patch: 10, train_fraction: 0.75, seed: 0 }
    }
}

impl ToySceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > MAX_CLASSES {
            return Err(Error::Config(format!(
                "toy scenes support 2..={MAX_CLASSES} classes, got {}",
                self.classes
            )));
        }
        if self.samples == 0 {
            return Err(Error::Config("sample count must be >= 1".into()));
        }
        if self.tile < 2 * self.patch {
            return Err(Error::Config(format!(
                "tile size {} must be at least twice the patch size {}",
                self.tile, self.patch
            )));
        }
        if self.patch < 3 {
            return Err(Error::Config("patch size must be >= 3 pixels".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config("train_fraction outside [0,1]".into()));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        let names = ["Background", "Field", "City", "Road", "Water"];
        (0..self.classes).map(|k| names[k].to_string()).collect()
    }
}

pub fn sar_intensity(class: usize, num_classes: usize) -> f64 {
    let (lo, hi) = SAR_RANGE;
    if num_classes == 1 {
        return (lo + hi) / 2.0;
    }
    lo + (hi - lo) * class as f64 / (num_classes - 1) as f64
}

/// Generate one scene. Pure function of (spec, index).
pub fn generate_scene(spec: &ToySceneSpec, index: usize) -> PairedSample {
    let t = spec.tile;
    let k = spec.classes;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, 0x70f0, index as u64]));

    // Label geometry: one patch per non-background class placed in its own
    // grid cell (guaranteed presence), plus a few extra patches of random
    // class for variety.
    let mut label = vec![0usize; t * t];
    let extra = rng.random_range(0..k);
    let num_patches = (k - 1) + extra;
    let grid = (num_patches as f64).sqrt().ceil() as usize;
    let cell = t / grid.max(1);
    let mut cells: Vec<usize> = (0..grid * grid).collect();
    // Fisher-Yates with the scene rng keeps placement deterministic.
    for i in (1..cells.len()).rev() {
        let j = rng.random_range(0..=i);
        cells.swap(i, j);
    }
    for p in 0..num_patches {
        let class = if p < k - 1 { p + 1 } else { rng.random_range(1..k) };
        let cell_idx = cells[p % cells.len()];
        let (cy, cx) = (cell_idx / grid, cell_idx % grid);
        let max_side = spec.patch.min(cell.saturating_sub(1)).max(3);
        let side_y = rng.random_range(3..=max_side);
        let side_x = rng.random_range(3..=max_side);
        let oy = cy * cell + rng.random_range(0..=cell.saturating_sub(side_y));
        let ox = cx * cell + rng.random_range(0..=cell.saturating_sub(side_x));
        for y in oy..(oy + side_y).min(t) {
            for x in ox..(ox + side_x).min(t) {
                label[y * t + x] = class;
            }
        }
    }

    // RGB: class color + per-pixel texture + per-sample brightness jitter.
    let brightness = rng.random_range(-0.05..0.05);
    let mut rgb = Tensor::zeros(&[3, t, t]);
    for y in 0..t {
        for x in 0..t {
            let class = label[y * t + x];
            let texture = rng.random_range(-0.06..0.06);
            for c in 0..3 {
                let v = PALETTE[class][c] + texture + brightness;
                rgb.set3(c, y, x, v.clamp(0.0, 1.0));
            }
        }
    }

    // SAR: class intensity + boundary brightening + small speckle-like noise.
    let mut sar = Tensor::zeros(&[1, t, t]);
    for y in 0..t {
        for x in 0..t {
            let class = label[y * t + x];
            let mut v = sar_intensity(class, k);
            if class != 0 && on_boundary(&label, t, y, x) {
                v += 0.03;
            }
            v += rng.random_range(-0.02..0.02);
            sar.set3(0, y, x, v.clamp(0.0, 1.0));
        }
    }

    PairedSample { rgb, sar, label, height: t, width: t, domain: "toy".into() }
}

fn on_boundary(label: &[usize], t: usize, y: usize, x: usize) -> bool {
    let class = label[y * t + x];
    let neighbors = [
        (y.wrapping_sub(1), x),
        (y + 1, x),
        (y, x.wrapping_sub(1)),
        (y, x + 1),
    ];
    neighbors.iter().any(|&(ny, nx)| ny < t && nx < t && label[ny * t + nx] != class)
}

/// Generate the full toy dataset on disk: tiles plus a manifest.
pub fn generate_toy_dataset(spec: &ToySceneSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let n_train = ((spec.samples as f64) * spec.train_fraction).round() as usize;
    let mut entries = Vec::with_capacity(spec.samples);
    for index in 0..spec.samples {
        let sample = generate_scene(spec, index);
        let stem = format!("toy_{index:04}");
        super::save_sample_tiles(
            &sample,
            &out_dir.join(format!("{stem}_rgb.png")),
            &out_dir.join(format!("{stem}_sar.png")),
            &out_dir.join(format!("{stem}_label.png")),
            255,
        )?;
        entries.push(ManifestEntry {
            rgb: format!("{stem}_rgb.png"),
            sar: format!("{stem}_sar.png"),
            label: format!("{stem}_label.png"),
            split: if index < n_train { Split::Train } else { Split::Test },
            domain: "toy".into(),
        });
    }
    let manifest = DatasetManifest {
        image_size: [spec.tile, spec.tile],
        entries,
        base_dir: out_dir.to_path_buf(),
    };
    crate::manifest::save_manifest(&manifest, &out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_class_scenes_contain_both_classes() {
        let spec = ToySceneSpec { classes: 2, samples: 8, ..ToySceneSpec::default() };
        for i in 0..8 {
            let scene = generate_scene(&spec, i);
            assert!(scene.label.contains(&0), "sample {i} lacks background");
            assert!(scene.label.contains(&1), "sample {i} lacks class 1");
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = ToySceneSpec::default();
        for i in 0..4 {
            assert_eq!(generate_scene(&spec, i), generate_scene(&spec, i));
        }
    }

    #[test]
    fn per_class_sar_means_are_separated() {
        let spec = ToySceneSpec { classes: 4, samples: 12, ..ToySceneSpec::default() };
        let mut sums = vec![0.0; 4];
        let mut counts = vec![0usize; 4];
        for i in 0..spec.samples {
            let scene = generate_scene(&spec, i);
            for y in 0..spec.tile {
                for x in 0..spec.tile {
                    let class = scene.label[y * spec.tile + x];
                    sums[class] += scene.sar.at3(0, y, x);
                    counts[class] += 1;
                }
            }
        }
        let means: Vec<f64> =
            sums.iter().zip(&counts).map(|(s, &c)| s / c.max(1) as f64).collect();
        for a in 0..4 {
            for b in (a + 1)..4 {
                assert!(
                    (means[a] - means[b]).abs() >= 0.2,
                    "classes {a},{b}: means {:.3} vs {:.3}",
                    means[a],
                    means[b]
                );
            }
        }
    }

    #[test]
    fn tile_smaller_than_twice_patch_is_rejected() {
        let spec = ToySceneSpec { tile: 16, patch: 10, ..ToySceneSpec::default() };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn dataset_on_disk_is_reproducible() {
        let spec = ToySceneSpec { samples: 4, ..ToySceneSpec::default() };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let ma = generate_toy_dataset(&spec, dir_a.path()).unwrap();
        generate_toy_dataset(&spec, dir_b.path()).unwrap();
        assert_eq!(ma.entries.len(), 4);
        for entry in &ma.entries {
            for rel in [&entry.rgb, &entry.sar, &entry.label] {
                let a = std::fs::read(dir_a.path().join(rel)).unwrap();
                let b = std::fs::read(dir_b.path().join(rel)).unwrap();
                assert_eq!(a, b, "tile {rel} differs between runs");
            }
        }
    }
}
