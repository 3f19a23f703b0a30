//! Dense grids shared by every stage: feature maps, score maps, masks and
//! images, plus the Gaussian kernels, separable filtering and bilinear
//! resampling they are processed with.
//!
//! All grids are stored row-major. Feature maps interleave channels, so the
//! value at `(y, x, c)` lives at `(y * width + x) * channels + c`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// `H x W x C` grid of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::input(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let len = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::input("feature map dimensions overflow"))?;
        if data.len() != len {
            return Err(Error::input(format!(
                "feature map data has {} values, expected {len}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite feature value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a map from per-channel planes, each `height * width` long.
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let channels = planes.len();
        let n = height * width;
        if planes.iter().any(|p| p.len() != n) {
            return Err(Error::input("plane size does not match height * width"));
        }
        let mut data = vec![0.0; n * channels];
        for (c, plane) in planes.iter().enumerate() {
            for (i, v) in plane.iter().enumerate() {
                data[i * channels + c] = *v;
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// All channel values of one pixel.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Copy of a single channel as a `height * width` plane.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    /// Applies `f(channel, value)` to every value.
    pub fn map_values(&self, mut f: impl FnMut(usize, f64) -> f64) -> Result<Self> {
        let channels = self.channels;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| f(i % channels, *v))
            .collect();
        Self::new(self.height, self.width, self.channels, data)
    }

    /// Reorders channels so that output channel `i` is input channel `order[i]`.
    pub fn permute_channels(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.channels || order.iter().any(|&c| c >= self.channels) {
            return Err(Error::param("channel permutation does not match channel count"));
        }
        let mut data = Vec::with_capacity(self.data.len());
        for px in self.data.chunks_exact(self.channels) {
            data.extend(order.iter().map(|&c| px[c]));
        }
        Self::new(self.height, self.width, self.channels, data)
    }
}

/// Per-pixel anomaly scores, all finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    height: usize,
    width: usize,
    scores: Vec<f64>,
}

impl AnomalyMap {
    pub fn new(height: usize, width: usize, scores: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::input("anomaly map dimensions must be positive"));
        }
        if scores.len() != height * width {
            return Err(Error::input(format!(
                "anomaly map has {} scores, expected {}",
                scores.len(),
                height * width
            )));
        }
        if let Some(i) = scores.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::input(format!(
                "anomaly score at index {i} is negative or non-finite"
            )));
        }
        Ok(Self {
            height,
            width,
            scores,
        })
    }

    pub(crate) fn from_raw(height: usize, width: usize, scores: Vec<f64>) -> Self {
        debug_assert_eq!(scores.len(), height * width);
        debug_assert!(scores.iter().all(|v| v.is_finite() && *v >= 0.0));
        Self {
            height,
            width,
            scores,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn into_scores(self) -> Vec<f64> {
        self.scores
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.scores[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.scores.iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.scores.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Position `(y, x)` of the first maximum in raster order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.scores.iter().enumerate() {
            if *v > self.scores[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// Elementwise sum; dimensions must agree.
    pub fn add(&self, other: &AnomalyMap) -> Result<AnomalyMap> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::input("anomaly map dimensions differ"));
        }
        let scores = self
            .scores
            .iter()
            .zip(&other.scores)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self::from_raw(self.height, self.width, scores))
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<AnomalyMap> {
        let scores = crop_plane(&self.scores, self.height, self.width, top, left, height, width)?;
        Ok(Self::from_raw(height, width, scores))
    }
}

/// Binary ground-truth mask; `true` marks an anomalous pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::input("mask dimensions do not match data length"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|b| *b)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Mask> {
        let data = crop_plane(&self.data, self.height, self.width, top, left, height, width)?;
        Ok(Self {
            height,
            width,
            data,
        })
    }
}

fn crop_plane<T: Copy>(
    src: &[T],
    src_h: usize,
    src_w: usize,
    top: usize,
    left: usize,
    height: usize,
    width: usize,
) -> Result<Vec<T>> {
    if height == 0 || width == 0 || top + height > src_h || left + width > src_w {
        return Err(Error::param(format!(
            "crop {height}x{width} at ({top}, {left}) does not fit in {src_h}x{src_w}"
        )));
    }
    let mut out = Vec::with_capacity(height * width);
    for y in top..top + height {
        out.extend_from_slice(&src[y * src_w + left..y * src_w + left + width]);
    }
    Ok(out)
}

/// RGB image with intensities in `[0, 1]`, interleaved row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::input("image must be non-empty"));
        }
        if data.len() != height * width * 3 {
            return Err(Error::input("image data length must be height * width * 3"));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::input("image intensities must lie in [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// 8-bit samples are mapped to `[0, 1]` by dividing by 255.
    pub fn from_u8(height: usize, width: usize, data: &[u8]) -> Result<Self> {
        Self::new(height, width, data.iter().map(|v| f64::from(*v) / 255.0).collect())
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn rgb(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// BT.601 luminance plane.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    pub fn to_feature_map(&self) -> FeatureMap {
        FeatureMap {
            height: self.height,
            width: self.width,
            channels: 3,
            data: self.data.clone(),
        }
    }

    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<RgbImage> {
        let data = resize_interleaved(&self.data, self.height, self.width, 3, out_h, out_w)?;
        // interpolation cannot leave [0, 1] but may drift by an ulp
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(RgbImage {
            height: out_h,
            width: out_w,
            data,
        })
    }
}

/// Square Gaussian weight table of side `2 * radius + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    radius: usize,
    weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(dy, dx)` from the center.
    pub fn at(&self, dy: isize, dx: isize) -> f64 {
        let r = self.radius as isize;
        self.weights[((dy + r) as usize) * self.side() + (dx + r) as usize]
    }
}

/// Truncation radius used when none is given: `ceil(3 sigma)`.
pub fn default_radius(sigma: f64) -> usize {
    math::ceil(3.0 * sigma) as usize
}

pub fn gaussian_kernel(sigma: f64, radius: usize, normalized: bool) -> Result<GaussianKernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("gaussian sigma must be positive, got {sigma}")));
    }
    let profile = gaussian_profile(sigma, radius);
    let side = 2 * radius + 1;
    let mut weights = Vec::with_capacity(side * side);
    for wy in &profile {
        for wx in &profile {
            weights.push(wy * wx);
        }
    }
    if normalized {
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
    }
    Ok(GaussianKernel {
        sigma,
        radius,
        weights,
    })
}

/// Unnormalized 1-D Gaussian `exp(-d^2 / (2 sigma^2))` for `d` in `-radius..=radius`.
pub(crate) fn gaussian_profile(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let denom = 2.0 * sigma * sigma;
    (-r..=r)
        .map(|d| {
            let d = d as f64;
            math::exp(-(d * d) / denom)
        })
        .collect()
}

pub(crate) fn normalized_gaussian_profile(sigma: f64, radius: usize) -> Vec<f64> {
    let mut p = gaussian_profile(sigma, radius);
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|w| *w /= total);
    p
}

/// Rescales every channel to `[0, 1]` by its own min and max. Constant
/// channels map to zero.
pub fn normalize_channels(fm: &FeatureMap) -> FeatureMap {
    let c = fm.channels;
    let mut lo = vec![f64::INFINITY; c];
    let mut hi = vec![f64::NEG_INFINITY; c];
    for px in fm.data.chunks_exact(c) {
        for (ch, v) in px.iter().enumerate() {
            lo[ch] = lo[ch].min(*v);
            hi[ch] = hi[ch].max(*v);
        }
    }
    let data = fm
        .data
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let ch = i % c;
            let span = hi[ch] - lo[ch];
            if span > 0.0 {
                // the division can overshoot 1 by an ulp
                ((v - lo[ch]) / span).min(1.0)
            } else {
                0.0
            }
        })
        .collect();
    FeatureMap {
        height: fm.height,
        width: fm.width,
        channels: c,
        data,
    }
}

/// Corner-aligned bilinear resampling of an interleaved grid.
fn resize_interleaved(
    src: &[f64],
    h: usize,
    w: usize,
    channels: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Vec<f64>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::param("output dimensions must be positive"));
    }
    let coords = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|i| {
                if n_in == 1 || n_out == 1 {
                    return (0, 0, 0.0);
                }
                let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
                let i0 = (math::floor(pos) as usize).min(n_in - 1);
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, pos - i0 as f64)
            })
            .collect()
    };
    let ys = coords(h, out_h);
    let xs = coords(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w * channels);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..channels {
                let v00 = src[(y0 * w + x0) * channels + c];
                let v01 = src[(y0 * w + x1) * channels + c];
                let v10 = src[(y1 * w + x0) * channels + c];
                let v11 = src[(y1 * w + x1) * channels + c];
                let top = v00 + (v01 - v00) * fx;
                let bottom = v10 + (v11 - v10) * fx;
                out.push(top + (bottom - top) * fy);
            }
        }
    }
    Ok(out)
}

pub fn resize_bilinear(fm: &FeatureMap, out_h: usize, out_w: usize) -> Result<FeatureMap> {
    let data = resize_interleaved(&fm.data, fm.height, fm.width, fm.channels, out_h, out_w)?;
    FeatureMap::new(out_h, out_w, fm.channels, data)
}

/// Bilinear upsampling of a score map, corner-aligned.
pub fn upsample_bilinear(am: &AnomalyMap, out_h: usize, out_w: usize) -> Result<AnomalyMap> {
    let data = resize_interleaved(&am.scores, am.height, am.width, 1, out_h, out_w)?;
    // convex combinations of non-negative values; clamp away rounding drift
    let data = data.into_iter().map(|v| v.max(0.0)).collect();
    Ok(AnomalyMap::from_raw(out_h, out_w, data))
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable correlation of a plane with replicate padding:
/// `out(y, x) = sum_{i, j} col[i] row[j] in(y + i - rc, x + j - rr)`.
pub(crate) fn correlate_separable(
    plane: &[f64],
    h: usize,
    w: usize,
    row: &[f64],
    col: &[f64],
) -> Vec<f64> {
    let rr = (row.len() / 2) as isize;
    let rc = (col.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let line = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (j, k) in row.iter().enumerate() {
                acc += k * line[clamp_index(x as isize + j as isize - rr, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for (i, k) in col.iter().enumerate() {
            let sy = clamp_index(y as isize + i as isize - rc, h);
            let src = &tmp[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }
    out
}

/// Mean over a `(2r+1)^2` window with replicate padding.
pub(crate) fn box_mean(plane: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    let side = 2 * radius + 1;
    let k = vec![1.0 / side as f64; side];
    correlate_separable(plane, h, w, &k, &k)
}
