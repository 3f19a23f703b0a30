//! Deterministic synthetic textures with known anomaly masks.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{FeatureMap, Mask, RgbImage};

/// Uniform noise on `[0.2, 0.6]` per pixel (gray), with a `square x square`
/// block whose mean is shifted up by `shift`. The block sits at
/// `(top, left)`.
pub fn mean_shift_square(
    size: usize,
    square: usize,
    top: usize,
    left: usize,
    shift: f64,
    seed: u64,
) -> Result<(RgbImage, Mask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inside = |y: usize, x: usize| (top..top + square).contains(&y) && (left..left + square).contains(&x);
    let values: Vec<f64> = (0..size * size)
        .map(|i| {
            let v = rng.random_range(0.2..0.6);
            if inside(i / size, i % size) {
                v + shift
            } else {
                v
            }
        })
        .collect();
    let img = RgbImage::from_fn(size, size, |y, x| {
        let v = values[y * size + x].clamp(0.0, 1.0);
        [v, v, v]
    })?;
    Ok((img, Mask::from_fn(size, size, inside)))
}

/// The default mean-shift fixture: 128x128 noise, centered 16x16 square.
pub fn mean_shift_fixture(seed: u64) -> Result<(RgbImage, Mask)> {
    mean_shift_square(128, 16, 56, 56, 0.3, seed)
}

/// Vertical stripes of period `period` (dark half, bright half) with noisy
/// intensities. Inside the `len x width` block at `(top, left)` the dark
/// columns are painted with values just below the bright range. Every
/// anomalous value falls in the same histogram bin as ordinary bright
/// pixels; only its position is wrong.
pub fn contextual_stripes(
    size: usize,
    period: usize,
    top: usize,
    left: usize,
    len: usize,
    width: usize,
    seed: u64,
) -> Result<(RgbImage, Mask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(size * size);
    let mut mask = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let dark = x % period < period / 2;
            let in_block = (top..top + len).contains(&y) && (left..left + width).contains(&x);
            let (v, anomalous) = if dark && in_block {
                (rng.random_range(0.61..0.64), true)
            } else if dark {
                (rng.random_range(0.2..0.3), false)
            } else {
                (rng.random_range(0.66..0.8), false)
            };
            values.push(v);
            mask.push(anomalous);
        }
    }
    let img = RgbImage::from_fn(size, size, |y, x| {
        let v = values[y * size + x];
        [v, v, v]
    })?;
    Ok((img, Mask::new(size, size, mask)?))
}

/// The default contextual fixture: 96x96 stripes of period 3 (one dark, two
/// bright columns) with a short run of brightened dark pixels near the
/// center. Any patch whose side is a multiple of 3 sees the same stripe count.
pub fn contextual_fixture(seed: u64) -> Result<(RgbImage, Mask)> {
    contextual_stripes(96, 3, 44, 45, 8, 4, seed)
}

/// Uniform random `height x width x channels` features in `[0, 1)`.
pub fn noise_features(height: usize, width: usize, channels: usize, seed: u64) -> Result<FeatureMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..height * width * channels).map(|_| rng.random::<f64>()).collect();
    FeatureMap::new(height, width, channels, data)
}
