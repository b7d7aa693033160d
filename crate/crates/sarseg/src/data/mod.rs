//! Paired RGB–SAR–label tiles, synthetic clouds, paired augmentation, toy
//! data generation, and batching.

pub mod augment;
pub mod batches;
pub mod clouds;
pub mod toygen;

use std::path::Path;

use image::DynamicImage;

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::tensor::Tensor;
use crate::vocab::ClassVocabulary;

/// One co-registered RGB + SAR + label tile.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    /// `[3, H, W]`, values in `[0,1]`.
    pub rgb: Tensor,
    /// `[1, H, W]`, values in `[0,1]`.
    pub sar: Tensor,
    /// Row-major `H*W` class indices (or the vocabulary ignore index).
    pub label: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub domain: String,
}

impl PairedSample {
    pub fn label_at(&self, y: usize, x: usize) -> usize {
        self.label[y * self.width + x]
    }
}

/// Deterministic sub-seed derivation so that every stochastic stage
/// (shuffling, augmentation, clouds, scene layout) is a pure function of the
/// run seed and its position, independent of call order.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        state ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(state << 6);
        // splitmix64 finalizer
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        state = z ^ (z >> 31);
    }
    state
}

/// Load one manifest entry into a validated [`PairedSample`].
pub fn load_paired_sample(
    manifest: &DatasetManifest,
    index: usize,
    vocab: &ClassVocabulary,
) -> Result<PairedSample> {
    let entry = manifest.entries.get(index).ok_or_else(|| Error::ManifestEntry {
        index,
        message: "entry index out of range".into(),
    })?;
    let (h, w) = (manifest.height(), manifest.width());

    let rgb_img = open_exact(&manifest.resolve(&entry.rgb), index)?;
    let rgb = match rgb_img {
        DynamicImage::ImageRgb8(img) => {
            let mut t = Tensor::zeros(&[3, h, w]);
            for y in 0..h {
                for x in 0..w {
                    let p = img.get_pixel(x as u32, y as u32);
                    for c in 0..3 {
                        t.set3(c, y, x, p.0[c] as f64 / 255.0);
                    }
                }
            }
            t
        }
        other => {
            return Err(Error::ManifestEntry {
                index,
                message: format!("rgb tile must be 3-channel 8-bit, got {:?}", other.color()),
            })
        }
    };

    let sar_img = open_exact(&manifest.resolve(&entry.sar), index)?;
    let sar = match sar_img {
        DynamicImage::ImageLuma8(img) => {
            let mut t = Tensor::zeros(&[1, h, w]);
            for y in 0..h {
                for x in 0..w {
                    t.set3(0, y, x, img.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0);
                }
            }
            t
        }
        other => {
            return Err(Error::ManifestEntry {
                index,
                message: format!("sar tile must be 1-channel 8-bit, got {:?}", other.color()),
            })
        }
    };

    let label_img = open_exact(&manifest.resolve(&entry.label), index)?;
    let label = match label_img {
        DynamicImage::ImageLuma8(img) => {
            let mut values = Vec::with_capacity(h * w);
            for y in 0..h {
                for x in 0..w {
                    let v = img.get_pixel(x as u32, y as u32).0[0];
                    // 8-bit 255 is the on-disk ignore convention.
                    let mapped = if v == 255 { vocab.ignore_index } else { v as usize };
                    if !vocab.is_valid_label(mapped) {
                        return Err(Error::ManifestEntry {
                            index,
                            message: format!(
                                "label value {v} at ({y},{x}) outside the {}-class vocabulary",
                                vocab.len()
                            ),
                        });
                    }
                    values.push(mapped);
                }
            }
            values
        }
        other => {
            return Err(Error::ManifestEntry {
                index,
                message: format!("label tile must be 1-channel 8-bit, got {:?}", other.color()),
            })
        }
    };

    Ok(PairedSample { rgb, sar, label, height: h, width: w, domain: entry.domain.clone() })
}

fn open_exact(path: &Path, index: usize) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::ManifestEntry {
        index,
        message: format!("cannot open {}: {e}", path.display()),
    })
}

/// Save a sample's three tiles as 8-bit PNGs.
pub fn save_sample_tiles(
    sample: &PairedSample,
    rgb_path: &Path,
    sar_path: &Path,
    label_path: &Path,
    ignore_index: usize,
) -> Result<()> {
    let (h, w) = (sample.height, sample.width);
    let mut rgb = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                to_u8(sample.rgb.at3(0, y, x)),
                to_u8(sample.rgb.at3(1, y, x)),
                to_u8(sample.rgb.at3(2, y, x)),
            ];
            rgb.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    rgb.save(rgb_path)?;

    let mut sar = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            sar.put_pixel(x as u32, y as u32, image::Luma([to_u8(sample.sar.at3(0, y, x))]));
        }
    }
    sar.save(sar_path)?;

    let mut label = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = sample.label_at(y, x);
            let byte = if v == ignore_index { 255 } else { v as u8 };
            label.put_pixel(x as u32, y as u32, image::Luma([byte]));
        }
    }
    label.save(label_path)?;
    Ok(())
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
