//! Random resized cropping: the only augmentation used to build contrastive
//! views.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::graph::interp_taps;
use crate::numerics::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub min_crop_frac: f64,
    pub max_crop_frac: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            min_crop_frac: 0.5,
            max_crop_frac: 1.0,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if 0.0 < self.min_crop_frac && self.min_crop_frac <= self.max_crop_frac && self.max_crop_frac <= 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "crop fractions must satisfy 0 < min <= max <= 1, got [{}, {}]",
                self.min_crop_frac, self.max_crop_frac
            )))
        }
    }
}

/// A crop window `[start, start + len)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Crop {
    pub start: usize,
    pub len: usize,
}

/// Draws a crop for a signal of length `len`: the crop length is uniform on
/// `round(min * len)..=round(max * len)` (at least 2), the start uniform on
/// the valid offsets.
pub fn draw_crop<R: Rng + ?Sized>(len: usize, spec: &AugmentSpec, rng: &mut R) -> Result<Crop> {
    spec.validate()?;
    if len < 2 {
        return Err(Error::InvalidArgument(format!("cannot crop a signal of length {len}")));
    }
    let lo = ((spec.min_crop_frac * len as f64).round() as usize).clamp(2, len);
    let hi = ((spec.max_crop_frac * len as f64).round() as usize).clamp(lo, len);
    let crop_len = rng.random_range(lo..=hi);
    let start = rng.random_range(0..=len - crop_len);
    Ok(Crop { start, len: crop_len })
}

/// Resamples `x[crop]` back to `x.len()` points by linear interpolation.
pub fn apply_crop<T: Real>(x: &[T], crop: Crop) -> Vec<T> {
    let src = &x[crop.start..crop.start + crop.len];
    interp_taps(crop.len, x.len())
        .into_iter()
        .map(|(lo, w)| {
            let hi = (lo + 1).min(crop.len - 1);
            src[lo] + (src[hi] - src[lo]) * T::of(w)
        })
        .collect()
}

pub fn crop_resize<T: Real, R: Rng + ?Sized>(x: &[T], spec: &AugmentSpec, rng: &mut R) -> Result<Vec<T>> {
    let crop = draw_crop(x.len(), spec, rng)?;
    Ok(apply_crop(x, crop))
}

/// Two independent crop-resize draws from the same stream.
pub fn make_views<T: Real, R: Rng + ?Sized>(x: &[T], spec: &AugmentSpec, rng: &mut R) -> Result<(Vec<T>, Vec<T>)> {
    let a = crop_resize(x, spec, rng)?;
    let b = crop_resize(x, spec, rng)?;
    Ok((a, b))
}
