//! Feature-space slide augmentations. Pixel transforms do not apply to
//! pre-extracted features, so the view pipeline works on region rows:
//! order reversal, contiguous crops, random zeroing, global scaling, and
//! additive Gaussian noise.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bag::FeatureBag;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub p_flip: f64,
    pub p_crop: f64,
    pub p_zero: f64,
    pub p_scale: f64,
    pub p_noise: f64,
    pub zero_rate: f64,
    pub noise_sigma: f64,
    pub scale_range: [f64; 2],
    pub crop_keep_range: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_flip: 0.5,
            p_crop: 0.5,
            p_zero: 0.5,
            p_scale: 0.5,
            p_noise: 0.1,
            zero_rate: 0.25,
            noise_sigma: 0.1,
            scale_range: [0.8, 1.2],
            crop_keep_range: [0.5, 1.0],
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_flip", self.p_flip),
            ("p_crop", self.p_crop),
            ("p_zero", self.p_zero),
            ("p_scale", self.p_scale),
            ("p_noise", self.p_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must lie in [0,1], got {p}")));
            }
        }
        if !(0.0..1.0).contains(&self.zero_rate) {
            return Err(Error::invalid("zero_rate must lie in [0,1)"));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::invalid("noise_sigma must be non-negative"));
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::invalid("scale_range must satisfy 0 < lo <= hi"));
        }
        let [lo, hi] = self.crop_keep_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid("crop_keep_range must be within (0,1]"));
        }
        Ok(())
    }
}

/// Reverse the region order; feature values are untouched.
pub fn random_flip(bag: &FeatureBag) -> FeatureBag {
    let mut out = bag.clone();
    let d = bag.dim;
    for r in 0..bag.regions {
        out.features[r * d..(r + 1) * d].copy_from_slice(bag.row(bag.regions - 1 - r));
    }
    out
}

/// Zero each region independently with probability `zero_rate`, resampling
/// the selection if every region was chosen so at least one survives.
pub fn random_zero(bag: &FeatureBag, rng: &mut impl Rng, zero_rate: f64) -> FeatureBag {
    assert!((0.0..1.0).contains(&zero_rate), "zero_rate must be in [0,1)");
    let selection = loop {
        let sel: Vec<bool> = (0..bag.regions)
            .map(|_| rng.random_range(0.0..1.0) < zero_rate)
            .collect();
        if !sel.iter().all(|&z| z) {
            break sel;
        }
    };
    let mut out = bag.clone();
    for (r, &zeroed) in selection.iter().enumerate() {
        if zeroed {
            out.features[r * bag.dim..(r + 1) * bag.dim].fill(0.0);
        }
    }
    out
}

/// Add i.i.d. zero-mean Gaussian noise with standard deviation `sigma`.
pub fn gaussian_noise(bag: &FeatureBag, rng: &mut impl Rng, sigma: f64) -> FeatureBag {
    assert!(sigma >= 0.0, "sigma must be non-negative");
    let mut out = bag.clone();
    if sigma > 0.0 {
        for v in &mut out.features {
            let z: f64 = StandardNormal.sample(rng);
            *v += (z * sigma) as f32;
        }
    }
    out
}

/// Multiply the whole feature matrix by one scalar drawn from `[lo, hi]`.
pub fn random_scale(bag: &FeatureBag, rng: &mut impl Rng, range: [f64; 2]) -> FeatureBag {
    let [lo, hi] = range;
    assert!(lo > 0.0 && lo <= hi, "scale range must satisfy 0 < lo <= hi");
    let s = rng.random_range(lo..=hi) as f32;
    let mut out = bag.clone();
    for v in &mut out.features {
        *v *= s;
    }
    out
}

/// Keep a contiguous run of `round(keep * R) >= 1` regions starting at a
/// uniformly random offset; region order is preserved.
pub fn random_crop(bag: &FeatureBag, rng: &mut impl Rng, keep_range: [f64; 2]) -> FeatureBag {
    let [lo, hi] = keep_range;
    assert!(lo > 0.0 && lo <= hi && hi <= 1.0, "keep range must be within (0,1]");
    let keep = rng.random_range(lo..=hi);
    let len = ((keep * bag.regions as f64).round() as usize).clamp(1, bag.regions);
    let start = rng.random_range(0..=bag.regions - len);
    crop_window(bag, start, len)
}

fn crop_window(bag: &FeatureBag, start: usize, len: usize) -> FeatureBag {
    let d = bag.dim;
    let mut out = bag.clone();
    out.regions = len;
    out.features = bag.features[start * d..(start + len) * d].to_vec();
    out
}

/// How pre-training views are produced from a bag.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewMode {
    /// Full augmentation stack (flip, crop, zero, scale, noise).
    Sa,
    /// Each view keeps a random contiguous quarter of the regions; the
    /// windows of the two views may overlap.
    Rq,
}

/// One augmented view: applies flip, crop, zero, scale, noise in that fixed
/// order, each gated by its probability. Two calls with independent rng
/// streams yield the two pre-training views of a slide.
pub fn augment_view(bag: &FeatureBag, rng: &mut impl Rng, cfg: &AugmentConfig) -> FeatureBag {
    let mut out = bag.clone();
    if rng.random_range(0.0..1.0) < cfg.p_flip {
        out = random_flip(&out);
    }
    if rng.random_range(0.0..1.0) < cfg.p_crop {
        out = random_crop(&out, rng, cfg.crop_keep_range);
    }
    if rng.random_range(0.0..1.0) < cfg.p_zero {
        out = random_zero(&out, rng, cfg.zero_rate);
    }
    if rng.random_range(0.0..1.0) < cfg.p_scale {
        out = random_scale(&out, rng, cfg.scale_range);
    }
    if rng.random_range(0.0..1.0) < cfg.p_noise {
        out = gaussian_noise(&out, rng, cfg.noise_sigma);
    }
    out
}

/// Produce a view under the configured mode.
pub fn make_view(
    bag: &FeatureBag,
    rng: &mut impl Rng,
    mode: ViewMode,
    cfg: &AugmentConfig,
) -> FeatureBag {
    match mode {
        ViewMode::Sa => augment_view(bag, rng, cfg),
        ViewMode::Rq => {
            let len = ((0.25 * bag.regions as f64).round() as usize).clamp(1, bag.regions);
            let start = rng.random_range(0..=bag.regions - len);
            crop_window(bag, start, len)
        }
    }
}
