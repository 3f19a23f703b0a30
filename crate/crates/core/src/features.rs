//! Classic full-resolution feature extractors.
//!
//! Deep features are produced offline and enter through the `FMP1` container
//! (see [`crate::fmap`]); [`ExtractorKind::External`] only records where they
//! come from.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math;
use crate::par;
use crate::tensor::{box_mean, correlate_separable, FeatureMap, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractorKind {
    Colors,
    RandomProjections,
    Steerable,
    LawsTem,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorSpec {
    pub kind: ExtractorKind,
    /// Side of the random kernels.
    pub kernel_size: usize,
    /// Output channels of the random projections.
    pub channel_count: usize,
    pub seed: u64,
    /// Orientation count `K` of the steerable bank (`2K` channels).
    pub orientations: usize,
    pub external_path: Option<String>,
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        Self::colors()
    }
}

impl ExtractorSpec {
    pub const DEFAULT_RANDOM_CHANNELS: usize = 128;
    pub const DEFAULT_KERNEL_SIZE: usize = 5;
    pub const DEFAULT_ORIENTATIONS: usize = 16;

    fn with_kind(kind: ExtractorKind) -> Self {
        Self {
            kind,
            kernel_size: Self::DEFAULT_KERNEL_SIZE,
            channel_count: Self::DEFAULT_RANDOM_CHANNELS,
            seed: 0,
            orientations: Self::DEFAULT_ORIENTATIONS,
            external_path: None,
        }
    }

    pub fn colors() -> Self {
        Self::with_kind(ExtractorKind::Colors)
    }

    pub fn random_projections(channel_count: usize, kernel_size: usize, seed: u64) -> Self {
        Self {
            channel_count,
            kernel_size,
            seed,
            ..Self::with_kind(ExtractorKind::RandomProjections)
        }
    }

    pub fn steerable(orientations: usize) -> Self {
        Self {
            orientations,
            ..Self::with_kind(ExtractorKind::Steerable)
        }
    }

    pub fn laws_tem() -> Self {
        Self::with_kind(ExtractorKind::LawsTem)
    }

    pub fn external(path: impl Into<String>) -> Self {
        Self {
            external_path: Some(path.into()),
            ..Self::with_kind(ExtractorKind::External)
        }
    }

    /// Number of channels the extractor produces, when known up front.
    pub fn output_channels(&self) -> Option<usize> {
        match self.kind {
            ExtractorKind::Colors => Some(3),
            ExtractorKind::RandomProjections => Some(self.channel_count),
            ExtractorKind::Steerable => Some(2 * self.orientations),
            ExtractorKind::LawsTem => Some(LAWS_CHANNELS),
            ExtractorKind::External => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ExtractorKind::RandomProjections => {
                if self.kernel_size % 2 == 0 {
                    return Err(Error::param(format!(
                        "random kernel size must be odd, got {}",
                        self.kernel_size
                    )));
                }
                if self.channel_count == 0 {
                    return Err(Error::param("random projections need at least one channel"));
                }
            }
            ExtractorKind::Steerable if self.orientations == 0 => {
                return Err(Error::param("steerable bank needs at least one orientation"));
            }
            ExtractorKind::External if self.external_path.is_none() => {
                return Err(Error::param("external extractor needs a feature file path"));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Runs the extractor described by `spec`. External features cannot be
/// produced here; load them from their file instead.
pub fn extract(image: &RgbImage, spec: &ExtractorSpec) -> Result<FeatureMap> {
    spec.validate()?;
    match spec.kind {
        ExtractorKind::Colors => Ok(extract_colors(image)),
        ExtractorKind::RandomProjections => extract_random_projections(image, spec),
        ExtractorKind::Steerable => extract_steerable(image, spec.orientations),
        ExtractorKind::LawsTem => extract_laws_tem(image),
        ExtractorKind::External => Err(Error::config(
            "external features are read from a feature file, not extracted from the image",
        )),
    }
}

/// The image itself, three channels in `[0, 1]`.
pub fn extract_colors(image: &RgbImage) -> FeatureMap {
    image.to_feature_map()
}

/// Zero-mean, unit-Frobenius-norm Gaussian kernels of shape `k x k x 3`,
/// laid out `[(i * k + j) * 3 + ch]`.
pub fn random_kernels(count: usize, kernel_size: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taps = kernel_size * kernel_size * 3;
    (0..count)
        .map(|_| {
            let mut k: Vec<f64> = (0..taps).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mean = k.iter().sum::<f64>() / taps as f64;
            k.iter_mut().for_each(|v| *v -= mean);
            let norm = math::sqrt(k.iter().map(|v| v * v).sum::<f64>());
            if norm > 0.0 {
                k.iter_mut().for_each(|v| *v /= norm);
            }
            k
        })
        .collect()
}

/// Valid-region correlation of the image with one `k x k x 3` kernel; the
/// result is padded back to full size by replicating the nearest valid value.
pub(crate) fn correlate_valid_replicate(image: &RgbImage, kernel: &[f64], k: usize) -> Vec<f64> {
    let (h, w) = (image.height(), image.width());
    let (vh, vw) = (h - k + 1, w - k + 1);
    let data = image.data();
    let mut valid = vec![0.0; vh * vw];
    for y in 0..vh {
        for x in 0..vw {
            let mut acc = 0.0;
            for i in 0..k {
                let row = &data[((y + i) * w + x) * 3..((y + i) * w + x + k) * 3];
                let krow = &kernel[i * k * 3..(i + 1) * k * 3];
                for (a, b) in row.iter().zip(krow) {
                    acc += a * b;
                }
            }
            valid[y * vw + x] = acc;
        }
    }
    let r = k / 2;
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let vy = y.saturating_sub(r).min(vh - 1);
        for x in 0..w {
            let vx = x.saturating_sub(r).min(vw - 1);
            out.push(valid[vy * vw + vx]);
        }
    }
    out
}

pub fn extract_random_projections(image: &RgbImage, spec: &ExtractorSpec) -> Result<FeatureMap> {
    spec.validate()?;
    let k = spec.kernel_size;
    if image.height() < k || image.width() < k {
        return Err(Error::input(format!(
            "image {}x{} is smaller than the {k}x{k} random kernels",
            image.height(),
            image.width()
        )));
    }
    let kernels = random_kernels(spec.channel_count, k, spec.seed);
    let planes = par::map_range(kernels.len(), |c| correlate_valid_replicate(image, &kernels[c], k));
    FeatureMap::from_planes(image.height(), image.width(), &planes)
}

// Second derivative of Gaussian (G2) and its Hilbert-transform approximation
// (H2), separable basis sampled on a 9-tap grid with spacing 0.67.
const STEER_RADIUS: usize = 4;
const STEER_SPACING: f64 = 0.67;

struct SteerableBasis {
    /// `(row factor, column factor)` for G2a, G2b, G2c.
    even: [(Vec<f64>, Vec<f64>); 3],
    /// `(row factor, column factor)` for H2a..H2d.
    odd: [(Vec<f64>, Vec<f64>); 4],
}

fn steerable_basis() -> SteerableBasis {
    let xs: Vec<f64> = (-(STEER_RADIUS as isize)..=STEER_RADIUS as isize)
        .map(|i| i as f64 * STEER_SPACING)
        .collect();
    let sample = |f: &dyn Fn(f64) -> f64| -> Vec<f64> { xs.iter().map(|x| f(*x)).collect() };
    let gauss = sample(&|x| math::exp(-x * x));
    // (2x^2 - 1) e^{-x^2}, made zero-sum by removing its Gaussian component so
    // constant images give exactly no response
    let mut second = sample(&|x| 0.9213 * (2.0 * x * x - 1.0) * math::exp(-x * x));
    let alpha = second.iter().sum::<f64>() / gauss.iter().sum::<f64>();
    second.iter_mut().zip(&gauss).for_each(|(s, g)| *s -= alpha * g);
    let first = sample(&|x| x * math::exp(-x * x));
    let first_scaled: Vec<f64> = first.iter().map(|v| 1.843 * v).collect();
    let cubic = sample(&|x| 0.9780 * (-2.254 * x + x * x * x) * math::exp(-x * x));
    let quad = sample(&|x| 0.9780 * (-0.7515 + x * x) * math::exp(-x * x));

    SteerableBasis {
        even: [
            (second.clone(), gauss.clone()),
            (first_scaled, first.clone()),
            (gauss.clone(), second),
        ],
        odd: [
            (cubic.clone(), gauss.clone()),
            (quad.clone(), first.clone()),
            (first, quad),
            (gauss, cubic),
        ],
    }
}

/// Orientation of steerable channel pair `k` out of `orientations`.
pub fn steering_angle(k: usize, orientations: usize) -> f64 {
    k as f64 * PI / orientations as f64
}

/// Quadrature pair responses at `orientations` angles evenly spaced in
/// `[0, pi)`. Channel `2k` is the even (G2) and `2k + 1` the odd (H2)
/// response at [`steering_angle`]`(k)`; angle 0 differentiates along x.
pub fn extract_steerable(image: &RgbImage, orientations: usize) -> Result<FeatureMap> {
    if orientations == 0 {
        return Err(Error::param("steerable bank needs at least one orientation"));
    }
    let (h, w) = (image.height(), image.width());
    let lum = image.luminance();
    let basis = steerable_basis();
    let filters: Vec<&(Vec<f64>, Vec<f64>)> = basis.even.iter().chain(basis.odd.iter()).collect();
    let responses = par::map_range(filters.len(), |i| {
        let (row, col) = filters[i];
        correlate_separable(&lum, h, w, row, col)
    });
    let (even, odd) = responses.split_at(3);

    let planes = par::map_range(2 * orientations, |ch| {
        let theta = steering_angle(ch / 2, orientations);
        let (c, s) = (math::cos(theta), math::sin(theta));
        let coeffs: Vec<f64> = if ch % 2 == 0 {
            vec![c * c, -2.0 * c * s, s * s]
        } else {
            vec![c * c * c, -3.0 * c * c * s, 3.0 * c * s * s, -s * s * s]
        };
        let bank = if ch % 2 == 0 { even } else { odd };
        let mut plane = vec![0.0; h * w];
        for (coef, resp) in coeffs.iter().zip(bank) {
            for (p, r) in plane.iter_mut().zip(resp) {
                *p += coef * r;
            }
        }
        plane
    });
    FeatureMap::from_planes(h, w, &planes)
}

pub const LAWS_VECTORS: [(&str, [f64; 5]); 5] = [
    ("L5", [1.0, 4.0, 6.0, 4.0, 1.0]),
    ("E5", [-1.0, -2.0, 0.0, 2.0, 1.0]),
    ("S5", [-1.0, 0.0, 2.0, 0.0, -1.0]),
    ("W5", [-1.0, 2.0, 0.0, -2.0, 1.0]),
    ("R5", [1.0, -4.0, 6.0, -4.0, 1.0]),
];
pub const LAWS_CHANNELS: usize = 25;
pub const LAWS_ENERGY_WINDOW: usize = 15;

/// Raw response of the Laws kernel `vertical (x) horizontal` on a plane.
pub(crate) fn laws_response(plane: &[f64], h: usize, w: usize, vertical: usize, horizontal: usize) -> Vec<f64> {
    correlate_separable(plane, h, w, &LAWS_VECTORS[horizontal].1, &LAWS_VECTORS[vertical].1)
}

/// Laws texture energy: the 25 outer-product kernels of L5, E5, S5, W5, R5
/// applied to luminance, then the mean absolute response over a 15x15
/// window. Channel `5 * i + j` uses vertical vector `i` and horizontal `j`.
pub fn extract_laws_tem(image: &RgbImage) -> Result<FeatureMap> {
    let (h, w) = (image.height(), image.width());
    let lum = image.luminance();
    let planes = par::map_range(LAWS_CHANNELS, |ch| {
        let resp = laws_response(&lum, h, w, ch / 5, ch % 5);
        let abs: Vec<f64> = resp.into_iter().map(math::abs).collect();
        box_mean(&abs, h, w, LAWS_ENERGY_WINDOW / 2)
    });
    FeatureMap::from_planes(h, w, &planes)
}
