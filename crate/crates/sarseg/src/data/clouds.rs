//! Synthetic cloud contamination over the optical channel.
//!
//! The opacity field is seeded multi-octave bilinear value noise, shaped and
//! clipped to `[0, alpha_max]`, then alpha-composited against a cloud color.
//! SAR and label are never touched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, PairedSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudProfile {
    None,
    Thin,
    Thick,
    Varied,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudParams {
    pub profile: CloudProfile,
    /// Peak opacity. Thin clouds cap at 0.4, thick start at 0.7; the varied
    /// profile ignores this and draws per-sample from `[0.2, 0.95]`.
    pub alpha_max: f64,
    pub noise_octaves: usize,
    /// Lattice period of the coarsest octave, in pixels.
    pub noise_base_period: usize,
    pub cloud_color: [f64; 3],
    pub seed: u64,
}

impl Default for CloudParams {
    fn default() -> Self {
        Self {
            profile: CloudProfile::None,
            alpha_max: 0.35,
            noise_octaves: 3,
            noise_base_period: 16,
            cloud_color: [0.95, 0.95, 0.97],
            seed: 0,
        }
    }
}

impl CloudParams {
    pub fn preset(profile: CloudProfile, seed: u64) -> Self {
        let alpha_max = match profile {
            CloudProfile::None => 0.0,
            CloudProfile::Thin => 0.35,
            CloudProfile::Thick => 0.9,
            CloudProfile::Varied => 0.95,
        };
        Self { profile, alpha_max, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_max) {
            return Err(Error::Config(format!("alpha_max {} outside [0,1]", self.alpha_max)));
        }
        match self.profile {
            CloudProfile::Thin if self.alpha_max > 0.4 => {
                return Err(Error::Config(format!(
                    "thin profile requires alpha_max <= 0.4, got {}",
                    self.alpha_max
                )))
            }
            CloudProfile::Thick if self.alpha_max < 0.7 => {
                return Err(Error::Config(format!(
                    "thick profile requires alpha_max >= 0.7, got {}",
                    self.alpha_max
                )))
            }
            _ => {}
        }
        if self.noise_octaves == 0 {
            return Err(Error::Config("noise_octaves must be >= 1".into()));
        }
        if self.noise_base_period < 2 {
            return Err(Error::Config("noise_base_period must be >= 2 pixels".into()));
        }
        if self.cloud_color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Config("cloud_color components must lie in [0,1]".into()));
        }
        Ok(())
    }

    /// Params for one sample: the varied profile redraws `alpha_max` and
    /// every profile gets a per-sample noise seed.
    pub fn for_sample(&self, sample_index: u64) -> CloudParams {
        let seed = derive_seed(&[self.seed, 0xc10d, sample_index]);
        let mut out = self.clone();
        out.seed = seed;
        if self.profile == CloudProfile::Varied {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0xa1fa]));
            out.alpha_max = rng.random_range(0.2..0.95);
        }
        out
    }
}

/// Multi-octave bilinear value noise in `[0,1]`, octave amplitudes halving.
fn value_noise(h: usize, w: usize, octaves: usize, base_period: usize, seed: u64) -> Tensor {
    let mut field = Tensor::zeros(&[1, h, w]);
    let mut total_amp = 0.0;
    for octave in 0..octaves {
        let period = (base_period >> octave).max(2);
        let amp = 0.5f64.powi(octave as i32);
        total_amp += amp;
        let gh = h / period + 2;
        let gw = w / period + 2;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, octave as u64]));
        let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.random::<f64>()).collect();
        for y in 0..h {
            let fy = y as f64 / period as f64;
            let y0 = fy.floor() as usize;
            let ty = fy - y0 as f64;
            for x in 0..w {
                let fx = x as f64 / period as f64;
                let x0 = fx.floor() as usize;
                let tx = fx - x0 as f64;
                let v00 = lattice[y0 * gw + x0];
                let v01 = lattice[y0 * gw + x0 + 1];
                let v10 = lattice[(y0 + 1) * gw + x0];
                let v11 = lattice[(y0 + 1) * gw + x0 + 1];
                // smoothstep on the interpolation weights
                let sx = tx * tx * (3.0 - 2.0 * tx);
                let sy = ty * ty * (3.0 - 2.0 * ty);
                let top = v00 * (1.0 - sx) + v01 * sx;
                let bot = v10 * (1.0 - sx) + v11 * sx;
                let idx = y * w + x;
                field.data_mut()[idx] += amp * (top * (1.0 - sy) + bot * sy);
            }
        }
    }
    field.map(|v| v / total_amp)
}

/// The per-pixel opacity field for one tile, in `[0, alpha_max]`.
///
/// The raw noise is stretched around its midpoint before clipping so that a
/// tile has both cloud-free gaps and saturated cores.
pub fn alpha_field(params: &CloudParams, h: usize, w: usize) -> Tensor {
    if params.profile == CloudProfile::None {
        return Tensor::zeros(&[1, h, w]);
    }
    let noise = value_noise(h, w, params.noise_octaves, params.noise_base_period, params.seed);
    let alpha_max = params.alpha_max;
    noise.map(|n| (1.4 * n - 0.2).clamp(0.0, 1.0) * alpha_max)
}

/// Composite clouds over the RGB channels only; SAR and label are returned
/// unchanged. Deterministic for a fixed seed.
pub fn synthesize_clouds(sample: &PairedSample, params: &CloudParams) -> Result<PairedSample> {
    params.validate()?;
    if params.profile == CloudProfile::None {
        return Ok(sample.clone());
    }
    let alpha = alpha_field(params, sample.height, sample.width);
    Ok(composite(sample, &alpha, params.cloud_color))
}

/// `rgb' = alpha * color + (1 - alpha) * rgb`, per pixel and channel.
pub fn composite(sample: &PairedSample, alpha: &Tensor, cloud_color: [f64; 3]) -> PairedSample {
    let (h, w) = (sample.height, sample.width);
    assert_eq!(alpha.shape(), &[1, h, w], "alpha field shape");
    let mut rgb = sample.rgb.clone();
    for y in 0..h {
        for x in 0..w {
            let a = alpha.at3(0, y, x);
            for c in 0..3 {
                let v = a * cloud_color[c] + (1.0 - a) * sample.rgb.at3(c, y, x);
                rgb.set3(c, y, x, v);
            }
        }
    }
    PairedSample { rgb, ..sample.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(h: usize, w: usize) -> PairedSample {
        let mut rgb = Tensor::zeros(&[3, h, w]);
        for (i, v) in rgb.data_mut().iter_mut().enumerate() {
            *v = (i % 7) as f64 / 7.0;
        }
        let mut sar = Tensor::zeros(&[1, h, w]);
        for (i, v) in sar.data_mut().iter_mut().enumerate() {
            *v = (i % 5) as f64 / 5.0;
        }
        PairedSample {
            rgb,
            sar,
            label: (0..h * w).map(|i| i % 3).collect(),
            height: h,
            width: w,
            domain: "toy".into(),
        }
    }

    #[test]
    fn profile_none_is_identity() {
        let s = sample(8, 8);
        let out = synthesize_clouds(&s, &CloudParams::preset(CloudProfile::None, 0)).unwrap();
        assert_eq!(s, out);
    }

    #[test]
    fn alpha_all_ones_paints_cloud_color() {
        let s = sample(4, 4);
        let alpha = Tensor::full(&[1, 4, 4], 1.0);
        let color = [0.9, 0.8, 0.7];
        let out = composite(&s, &alpha, color);
        for y in 0..4 {
            for x in 0..4 {
                for c in 0..3 {
                    assert!((out.rgb.at3(c, y, x) - color[c]).abs() < 1e-12);
                }
            }
        }
        assert_eq!(out.sar, s.sar);
        assert_eq!(out.label, s.label);
    }

    #[test]
    fn thin_profile_mean_alpha_in_expected_band() {
        let params = CloudParams::preset(CloudProfile::Thin, 0);
        let alpha = alpha_field(&params, 64, 64);
        let mean = alpha.data().iter().sum::<f64>() / alpha.len() as f64;
        assert!(mean > 0.02 && mean < 0.40, "mean alpha {mean}");

        let again = alpha_field(&params, 64, 64);
        assert_eq!(alpha, again, "same seed must be bit-identical");
    }

    #[test]
    fn clouds_never_touch_sar_or_label() {
        let s = sample(16, 16);
        for profile in [CloudProfile::Thin, CloudProfile::Thick, CloudProfile::Varied] {
            let params = CloudParams::preset(profile, 7).for_sample(3);
            let out = synthesize_clouds(&s, &params).unwrap();
            assert_eq!(out.sar, s.sar);
            assert_eq!(out.label, s.label);
        }
    }

    #[test]
    fn thin_alpha_cap_and_thick_floor_are_validated() {
        let mut p = CloudParams::preset(CloudProfile::Thin, 0);
        p.alpha_max = 0.5;
        assert!(p.validate().is_err());
        let mut p = CloudParams::preset(CloudProfile::Thick, 0);
        p.alpha_max = 0.5;
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn alpha_bounded_and_rgb_stays_in_unit_interval(seed in 0u64..500) {
            let params = CloudParams::preset(CloudProfile::Varied, seed).for_sample(0);
            let alpha = alpha_field(&params, 16, 16);
            prop_assert!(alpha.data().iter().all(|&a| (0.0..=params.alpha_max + 1e-12).contains(&a)));
            let out = composite(&sample(16, 16), &alpha, params.cloud_color);
            prop_assert!(out.rgb.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
