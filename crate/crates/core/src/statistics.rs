//! Patch statistics comparators.
//!
//! Every comparator looks at the `T x T` patches that lie fully inside the
//! feature map. Moments, histogram and sample-weighted Wasserstein (SWW)
//! produce one score per patch center and replicate the nearest valid score
//! into the border band of width `T / 2`. Feature correspondence analysis
//! (FCA) scatters each patch's per-pixel matching errors back onto the pixels
//! of the patch, so every pixel aggregates all patches containing it.
//!
//! The matching error ("non-compliance") comes from the rank correspondence
//! behind the 1-D Wasserstein distance: per channel the `T^2` patch samples
//! are sorted and the sample at rank `r` is compared against the reference
//! value at rank `r`. Ties are broken by raster order inside the patch.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::math;
use crate::par;
use crate::tensor::{gaussian_profile, normalized_gaussian_profile, default_radius, AnomalyMap, FeatureMap};

/// Patch statistics comparison function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparator {
    Moments,
    Histogram,
    Sww,
    Fca,
}

impl Comparator {
    pub const ALL: [Comparator; 4] = [Comparator::Moments, Comparator::Histogram, Comparator::Sww, Comparator::Fca];

    pub fn name(self) -> &'static str {
        match self {
            Comparator::Moments => "moments",
            Comparator::Histogram => "histogram",
            Comparator::Sww => "sww",
            Comparator::Fca => "fca",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s))
    }
}

/// Patch geometry and smoothing parameters shared by all comparators.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchConfig {
    /// Patch side `T`, odd.
    pub patch_size: usize,
    /// Weighting of matching errors inside one patch (SWW), also used for the
    /// optional spatial weighting of moments and histograms.
    pub sigma_w: f64,
    /// Weighting of the patches a pixel belongs to (FCA).
    pub sigma_p: f64,
    /// Smoothing of each patch's error map before aggregation (FCA); 0 disables.
    pub sigma_s: f64,
    pub histogram_bins: usize,
    /// SWW with uniform weights, i.e. the `sigma_w -> infinity` limit.
    pub sww_uniform: bool,
    /// Gaussian (`sigma_w`) weighting of samples for moments and histograms.
    pub spatial_weighting: bool,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_size: 9,
            sigma_w: 3.0,
            sigma_p: 3.0,
            sigma_s: 1.0,
            histogram_bins: 10,
            sww_uniform: false,
            spatial_weighting: false,
        }
    }
}

impl PatchConfig {
    pub fn with_patch_size(patch_size: usize) -> Self {
        Self {
            patch_size,
            ..Self::default()
        }
    }

    pub fn radius(&self) -> usize {
        self.patch_size / 2
    }

    pub fn area(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.patch_size % 2 == 0 {
            return Err(Error::param(format!(
                "patch size must be odd and positive, got {}",
                self.patch_size
            )));
        }
        if !(self.sigma_w > 0.0) || !(self.sigma_p > 0.0) {
            return Err(Error::param("sigma_w and sigma_p must be positive"));
        }
        if !(self.sigma_s >= 0.0) || !self.sigma_s.is_finite() {
            return Err(Error::param("sigma_s must be non-negative"));
        }
        if self.histogram_bins < 2 {
            return Err(Error::param("histogram needs at least two bins"));
        }
        Ok(())
    }

    /// Number of fully-inside patch centers along each axis.
    pub(crate) fn valid_extent(&self, fm: &FeatureMap) -> Result<(usize, usize)> {
        self.validate()?;
        let t = self.patch_size;
        if fm.height() < t || fm.width() < t {
            return Err(Error::input(format!(
                "feature map {}x{} is smaller than the {t}x{t} patch",
                fm.height(),
                fm.width()
            )));
        }
        Ok((fm.height() - t + 1, fm.width() - t + 1))
    }
}

/// Per-channel sorted samples of size `T^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedReference {
    channels: usize,
    ranks: usize,
    /// Channel-major: `values[c * ranks + r]`.
    values: Vec<f64>,
}

impl SortedReference {
    pub fn new(channels: usize, ranks: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || ranks == 0 || values.len() != channels * ranks {
            return Err(Error::input("reference size does not match channels * ranks"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("reference values must be finite"));
        }
        for c in 0..channels {
            let ch = &values[c * ranks..(c + 1) * ranks];
            if ch.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::input(format!("reference channel {c} is not sorted")));
            }
        }
        Ok(Self {
            channels,
            ranks,
            values,
        })
    }

    /// The sorted samples of the patch centered at `(cy, cx)`.
    pub fn from_patch(fm: &FeatureMap, cy: usize, cx: usize, patch_size: usize) -> Result<Self> {
        check_patch_bounds(fm, cy, cx, patch_size)?;
        let r = patch_size / 2;
        let ranks = patch_size * patch_size;
        let mut values = Vec::with_capacity(ranks * fm.channels());
        let mut buf = Vec::with_capacity(ranks);
        for c in 0..fm.channels() {
            buf.clear();
            for y in cy - r..=cy + r {
                for x in cx - r..=cx + r {
                    buf.push(fm.at(y, x, c));
                }
            }
            buf.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
            values.extend_from_slice(&buf);
        }
        Ok(Self {
            channels: fm.channels(),
            ranks,
            values,
        })
    }

    pub(crate) fn from_raw(channels: usize, ranks: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), channels * ranks);
        Self {
            channels,
            ranks,
            values,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn ranks(&self) -> usize {
        self.ranks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.ranks..(c + 1) * self.ranks]
    }

    /// Multiplies every value by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let mut values: Vec<f64> = self.values.iter().map(|v| v * factor).collect();
        if factor < 0.0 {
            for c in 0..self.channels {
                values[c * self.ranks..(c + 1) * self.ranks].reverse();
            }
        }
        Self::new(self.channels, self.ranks, values)
    }

    fn check_against(&self, fm: &FeatureMap, cfg: &PatchConfig) -> Result<()> {
        if self.channels != fm.channels() {
            return Err(Error::input(format!(
                "reference has {} channels, feature map has {}",
                self.channels,
                fm.channels()
            )));
        }
        if self.ranks != cfg.area() {
            return Err(Error::input(format!(
                "reference has {} ranks, patch has {} samples",
                self.ranks,
                cfg.area()
            )));
        }
        Ok(())
    }
}

/// Per-channel normalized histograms over `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramReference {
    channels: usize,
    bins: usize,
    /// `mass[c * bins + b]`; every row sums to 1.
    mass: Vec<f64>,
}

impl HistogramReference {
    pub fn new(channels: usize, bins: usize, mass: Vec<f64>) -> Result<Self> {
        if channels == 0 || bins < 2 || mass.len() != channels * bins {
            return Err(Error::input("histogram size does not match channels * bins"));
        }
        for c in 0..channels {
            let row = &mass[c * bins..(c + 1) * bins];
            if row.iter().any(|m| !(*m >= 0.0)) {
                return Err(Error::input("histogram mass must be non-negative"));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::input(format!("histogram row {c} sums to {total}, not 1")));
            }
        }
        Ok(Self { channels, bins, mass })
    }

    pub(crate) fn from_raw(channels: usize, bins: usize, mass: Vec<f64>) -> Self {
        Self { channels, bins, mass }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.mass[c * self.bins..(c + 1) * self.bins]
    }
}

/// Matching error of every pixel of one patch against a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct NonComplianceMap {
    /// `(y, x)` of the patch center.
    pub center: (usize, usize),
    side: usize,
    channels: usize,
    per_channel: Vec<f64>,
    values: Vec<f64>,
}

impl NonComplianceMap {
    pub fn side(&self) -> usize {
        self.side
    }

    /// Per-pixel error summed over channels, raster order inside the patch.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Contribution of one channel, raster order inside the patch.
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.side * self.side;
        &self.per_channel[c * n..(c + 1) * n]
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn at(&self, dy: usize, dx: usize) -> f64 {
        self.values[dy * self.side + dx]
    }
}

fn check_patch_bounds(fm: &FeatureMap, cy: usize, cx: usize, t: usize) -> Result<()> {
    let r = t / 2;
    if t == 0 || t % 2 == 0 || cy < r || cx < r || cy + r >= fm.height() || cx + r >= fm.width() {
        return Err(Error::precondition(format!(
            "{t}x{t} patch at (y={cy}, x={cx}) is not inside the {}x{} map",
            fm.height(),
            fm.width()
        )));
    }
    Ok(())
}

/// Reusable buffers for sorting one patch.
pub(crate) struct Scratch {
    pairs: Vec<(f64, u32)>,
}

impl Scratch {
    pub(crate) fn new(area: usize) -> Self {
        Self {
            pairs: Vec::with_capacity(area),
        }
    }
}

#[inline]
fn rank_order(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    a.0.partial_cmp(&b.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Gathers channel `c` of the patch with top-left corner `(y0, x0)` and sorts
/// it by value, ties by raster index.
#[inline]
pub(crate) fn sort_patch_channel(fm: &FeatureMap, y0: usize, x0: usize, t: usize, c: usize, pairs: &mut Vec<(f64, u32)>) {
    pairs.clear();
    let channels = fm.channels();
    let width = fm.width();
    let data = fm.data();
    let mut idx = 0u32;
    for y in y0..y0 + t {
        let base = (y * width + x0) * channels + c;
        for dx in 0..t {
            pairs.push((data[base + dx * channels], idx));
            idx += 1;
        }
    }
    pairs.sort_unstable_by(rank_order);
}

/// Adds, for every channel and every reference, `|sorted_patch[r] - ref[r]|`
/// to the pixel holding rank `r`. `out` has `T^2` entries and is not cleared.
pub(crate) fn accumulate_noncompliance(
    fm: &FeatureMap,
    y0: usize,
    x0: usize,
    t: usize,
    refs: &[&SortedReference],
    scratch: &mut Scratch,
    out: &mut [f64],
) {
    for c in 0..fm.channels() {
        sort_patch_channel(fm, y0, x0, t, c, &mut scratch.pairs);
        for reference in refs {
            let rv = reference.channel(c);
            for (&(v, idx), r) in scratch.pairs.iter().zip(rv) {
                out[idx as usize] += math::abs(v - r);
            }
        }
    }
}

/// Matching error of the patch centered at `(cy, cx)` against `reference`.
pub fn noncompliance(
    fm: &FeatureMap,
    cy: usize,
    cx: usize,
    reference: &SortedReference,
    cfg: &PatchConfig,
) -> Result<NonComplianceMap> {
    cfg.validate()?;
    let t = cfg.patch_size;
    check_patch_bounds(fm, cy, cx, t)?;
    reference.check_against(fm, cfg)?;
    let r = cfg.radius();
    let n = t * t;
    let mut per_channel = vec![0.0; n * fm.channels()];
    let mut pairs = Vec::with_capacity(n);
    for c in 0..fm.channels() {
        sort_patch_channel(fm, cy - r, cx - r, t, c, &mut pairs);
        let out = &mut per_channel[c * n..(c + 1) * n];
        for (&(v, idx), rv) in pairs.iter().zip(reference.channel(c)) {
            out[idx as usize] = math::abs(v - rv);
        }
    }
    let mut values = vec![0.0; n];
    for ch in per_channel.chunks_exact(n) {
        for (v, e) in values.iter_mut().zip(ch) {
            *v += e;
        }
    }
    Ok(NonComplianceMap {
        center: (cy, cx),
        side: t,
        channels: fm.channels(),
        per_channel,
        values,
    })
}

/// Copies a grid of per-center scores into a full-size map, replicating the
/// nearest valid center into the border band.
pub(crate) fn expand_centers(valid: &[f64], vh: usize, vw: usize, h: usize, w: usize, r: usize) -> AnomalyMap {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let vy = y.saturating_sub(r).min(vh - 1);
        for x in 0..w {
            let vx = x.saturating_sub(r).min(vw - 1);
            out.push(valid[vy * vw + vx]);
        }
    }
    AnomalyMap::from_raw(h, w, out)
}

/// 1-D weights over the patch side used by moments/histograms, summing to 1.
fn window_profile(cfg: &PatchConfig) -> Vec<f64> {
    if cfg.spatial_weighting {
        normalized_gaussian_profile(cfg.sigma_w, cfg.radius())
    } else {
        vec![1.0 / cfg.patch_size as f64; cfg.patch_size]
    }
}

/// Weighted mean feature of every valid patch, laid out
/// `[(vy * vw + vx) * C + c]`.
pub(crate) fn patch_means(fm: &FeatureMap, cfg: &PatchConfig) -> Result<(usize, usize, Vec<f64>)> {
    let (vh, vw) = cfg.valid_extent(fm)?;
    let channels = fm.channels();
    let width = fm.width();
    let profile = window_profile(cfg);
    // horizontal pass over every row, valid columns only
    let rows = par::map_range(fm.height(), |y| {
        let mut row = vec![0.0; vw * channels];
        for vx in 0..vw {
            let dst = &mut row[vx * channels..(vx + 1) * channels];
            for (dx, wgt) in profile.iter().enumerate() {
                let src = &fm.data()[(y * width + vx + dx) * channels..][..channels];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wgt * s;
                }
            }
        }
        row
    });
    let means = par::map_range(vh, |vy| {
        let mut out = vec![0.0; vw * channels];
        for (dy, wgt) in profile.iter().enumerate() {
            for (o, s) in out.iter_mut().zip(&rows[vy + dy]) {
                *o += wgt * s;
            }
        }
        out
    });
    Ok((vh, vw, means.concat()))
}

/// Squared distance between a patch mean and the reference mean of each
/// reference, summed over references.
pub fn moments_score_multi(fm: &FeatureMap, ref_means: &[Vec<f64>], cfg: &PatchConfig) -> Result<AnomalyMap> {
    let channels = fm.channels();
    if ref_means.is_empty() {
        return Err(Error::param("at least one reference is required"));
    }
    if ref_means.iter().any(|m| m.len() != channels) {
        return Err(Error::input("reference mean length differs from channel count"));
    }
    let (vh, vw, means) = patch_means(fm, cfg)?;
    let valid: Vec<f64> = means
        .chunks_exact(channels)
        .map(|m| {
            ref_means
                .iter()
                .map(|rm| m.iter().zip(rm).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .sum()
        })
        .collect();
    Ok(expand_centers(&valid, vh, vw, fm.height(), fm.width(), cfg.radius()))
}

pub fn moments_score(fm: &FeatureMap, ref_mean: &[f64], cfg: &PatchConfig) -> Result<AnomalyMap> {
    moments_score_multi(fm, core::slice::from_ref(&ref_mean.to_vec()), cfg)
}

#[inline]
pub(crate) fn bin_index(v: f64, bins: usize) -> usize {
    (math::floor(v * bins as f64) as usize).min(bins - 1)
}

pub(crate) fn check_unit_range(fm: &FeatureMap) -> Result<()> {
    if let Some(i) = fm.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::precondition(format!(
            "histogram features must lie in [0, 1]; value {} at index {i} (normalize channels first)",
            fm.data()[i]
        )));
    }
    Ok(())
}

/// 1-D earth mover's distance between two histograms over `[0, 1]` with
/// uniform bins: `sum_b |CDF_a(b) - CDF_b(b)| / B`.
pub fn histogram_emd(a: &[f64], b: &[f64]) -> f64 {
    let bins = a.len();
    let (mut ca, mut cb, mut acc) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ca += x;
        cb += y;
        acc += math::abs(ca - cb);
    }
    acc / bins as f64
}

/// Normalized histograms of every valid patch, laid out
/// `[((vy * vw + vx) * C + c) * B + b]`.
pub(crate) fn patch_histograms(fm: &FeatureMap, cfg: &PatchConfig) -> Result<(usize, usize, Vec<f64>)> {
    let (vh, vw) = cfg.valid_extent(fm)?;
    check_unit_range(fm)?;
    let rows = par::map_range(vh, |vy| histogram_row(fm, cfg, vy, vw));
    Ok((vh, vw, rows.concat()))
}

/// Histograms of the valid patches whose top row is `vy`.
fn histogram_row(fm: &FeatureMap, cfg: &PatchConfig, vy: usize, vw: usize) -> Vec<f64> {
    let t = cfg.patch_size;
    let bins = cfg.histogram_bins;
    let channels = fm.channels();
    let stride = channels * bins;
    let mut out = vec![0.0; vw * stride];
    if cfg.spatial_weighting {
        let profile = window_profile(cfg);
        for vx in 0..vw {
            let hist = &mut out[vx * stride..(vx + 1) * stride];
            for dy in 0..t {
                for dx in 0..t {
                    let wgt = profile[dy] * profile[dx];
                    for (c, v) in fm.pixel(vy + dy, vx + dx).iter().enumerate() {
                        hist[c * bins + bin_index(*v, bins)] += wgt;
                    }
                }
            }
        }
        return out;
    }
    // sliding integer counts along the row
    let mut counts = vec![0u32; stride];
    let column = |x: usize, counts: &mut [u32], add: bool| {
        for y in vy..vy + t {
            for (c, v) in fm.pixel(y, x).iter().enumerate() {
                let slot = &mut counts[c * bins + bin_index(*v, bins)];
                if add {
                    *slot += 1;
                } else {
                    *slot -= 1;
                }
            }
        }
    };
    for x in 0..t {
        column(x, &mut counts, true);
    }
    let area = (t * t) as f64;
    for vx in 0..vw {
        if vx > 0 {
            column(vx - 1, &mut counts, false);
            column(vx + t - 1, &mut counts, true);
        }
        for (o, n) in out[vx * stride..(vx + 1) * stride].iter_mut().zip(&counts) {
            *o = f64::from(*n) / area;
        }
    }
    out
}

/// Earth mover's distance between each patch histogram and the reference
/// histogram, summed over channels and references.
pub fn histogram_score_multi(fm: &FeatureMap, refs: &[HistogramReference], cfg: &PatchConfig) -> Result<AnomalyMap> {
    if refs.is_empty() {
        return Err(Error::param("at least one reference is required"));
    }
    let channels = fm.channels();
    let bins = cfg.histogram_bins;
    if refs.iter().any(|r| r.channels != channels || r.bins != bins) {
        return Err(Error::input("histogram reference does not match channels/bins"));
    }
    let (vh, vw) = cfg.valid_extent(fm)?;
    check_unit_range(fm)?;
    let rows = par::map_range(vh, |vy| {
        let hists = histogram_row(fm, cfg, vy, vw);
        hists
            .chunks_exact(channels * bins)
            .map(|h| {
                refs.iter()
                    .map(|reference| {
                        (0..channels)
                            .map(|c| histogram_emd(&h[c * bins..(c + 1) * bins], reference.row(c)))
                            .sum::<f64>()
                    })
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
    });
    Ok(expand_centers(&rows.concat(), vh, vw, fm.height(), fm.width(), cfg.radius()))
}

pub fn histogram_score(fm: &FeatureMap, reference: &HistogramReference, cfg: &PatchConfig) -> Result<AnomalyMap> {
    histogram_score_multi(fm, core::slice::from_ref(reference), cfg)
}

/// Normalized in-patch weights for SWW, raster order.
pub(crate) fn sww_weights(cfg: &PatchConfig) -> Vec<f64> {
    let n = cfg.area();
    if cfg.sww_uniform {
        return vec![1.0 / n as f64; n];
    }
    let p = gaussian_profile(cfg.sigma_w, cfg.radius());
    let mut w: Vec<f64> = p.iter().flat_map(|a| p.iter().map(move |b| a * b)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// SWW over per-center error maps produced by `fill`, which must add the
/// error map of the patch with top-left corner `(vy, vx)` into its buffer.
pub(crate) fn sww_with<F>(fm: &FeatureMap, cfg: &PatchConfig, fill: F) -> Result<AnomalyMap>
where
    F: Fn(usize, usize, &mut Scratch, &mut [f64]) + Sync + Send,
{
    let (vh, vw) = cfg.valid_extent(fm)?;
    let weights = sww_weights(cfg);
    let n = cfg.area();
    let rows = par::map_range(vh, |vy| {
        let mut scratch = Scratch::new(n);
        let mut m = vec![0.0; n];
        (0..vw)
            .map(|vx| {
                m.iter_mut().for_each(|v| *v = 0.0);
                fill(vy, vx, &mut scratch, &mut m);
                m.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect::<Vec<f64>>()
    });
    Ok(expand_centers(&rows.concat(), vh, vw, fm.height(), fm.width(), cfg.radius()))
}

fn check_sorted_refs(fm: &FeatureMap, refs: &[SortedReference], cfg: &PatchConfig) -> Result<()> {
    cfg.validate()?;
    if refs.is_empty() {
        return Err(Error::param("at least one reference is required"));
    }
    refs.iter().try_for_each(|r| r.check_against(fm, cfg))
}

pub fn sww_score_multi(fm: &FeatureMap, refs: &[SortedReference], cfg: &PatchConfig) -> Result<AnomalyMap> {
    check_sorted_refs(fm, refs, cfg)?;
    let refs: Vec<&SortedReference> = refs.iter().collect();
    let t = cfg.patch_size;
    sww_with(fm, cfg, |vy, vx, scratch, m| {
        accumulate_noncompliance(fm, vy, vx, t, &refs, scratch, m)
    })
}

/// Sample-weighted Wasserstein: the Gaussian-weighted mean of the error map
/// of the patch centered at each pixel.
pub fn sww_score(fm: &FeatureMap, reference: &SortedReference, cfg: &PatchConfig) -> Result<AnomalyMap> {
    sww_score_multi(fm, core::slice::from_ref(reference), cfg)
}

/// Smooths a `t x t` map in place with a normalized Gaussian, replicating
/// the patch border.
fn smooth_patch(m: &mut [f64], tmp: &mut [f64], t: usize, kernel: &[f64]) {
    let r = (kernel.len() / 2) as isize;
    let clamp = |i: isize| i.clamp(0, t as isize - 1) as usize;
    for y in 0..t {
        for x in 0..t {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                acc += k * m[y * t + clamp(x as isize + j as isize - r)];
            }
            tmp[y * t + x] = acc;
        }
    }
    for y in 0..t {
        for x in 0..t {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * tmp[clamp(y as isize + i as isize - r) * t + x];
            }
            m[y * t + x] = acc;
        }
    }
}

const FCA_ROW_CHUNK: usize = 32;

/// FCA scatter over per-center error maps produced by `fill` (same contract
/// as in [`sww_with`]). Each error map is smoothed with `sigma_s`, weighted
/// by `G_sigma_p(center - pixel)` and accumulated onto the pixels of its
/// patch; every pixel is finally divided by the weight mass it received.
pub(crate) fn fca_with<F>(fm: &FeatureMap, cfg: &PatchConfig, fill: F) -> Result<AnomalyMap>
where
    F: Fn(usize, usize, &mut Scratch, &mut [f64]) + Sync + Send,
{
    let (vh, vw) = cfg.valid_extent(fm)?;
    let (h, w) = (fm.height(), fm.width());
    let t = cfg.patch_size;
    let n = cfg.area();
    let gp = gaussian_profile(cfg.sigma_p, cfg.radius());
    let smoothing = (cfg.sigma_s > 0.0)
        .then(|| normalized_gaussian_profile(cfg.sigma_s, default_radius(cfg.sigma_s)));

    let mut num = vec![0.0; h * w];
    // rows are processed in fixed chunks and merged in order, so the result
    // does not depend on the thread count
    let mut start = 0;
    while start < vh {
        let len = FCA_ROW_CHUNK.min(vh - start);
        let strips = par::map_range(len, |i| {
            let vy = start + i;
            let mut scratch = Scratch::new(n);
            let mut m = vec![0.0; n];
            let mut tmp = vec![0.0; n];
            let mut strip = vec![0.0; t * w];
            for vx in 0..vw {
                m.iter_mut().for_each(|v| *v = 0.0);
                fill(vy, vx, &mut scratch, &mut m);
                if let Some(kernel) = &smoothing {
                    smooth_patch(&mut m, &mut tmp, t, kernel);
                }
                for dy in 0..t {
                    let dst = &mut strip[dy * w + vx..dy * w + vx + t];
                    let wy = gp[dy];
                    for ((d, e), wx) in dst.iter_mut().zip(&m[dy * t..(dy + 1) * t]).zip(&gp) {
                        *d += e * wy * wx;
                    }
                }
            }
            strip
        });
        for (i, strip) in strips.iter().enumerate() {
            let y0 = start + i;
            for (d, s) in num[y0 * w..(y0 + t) * w].iter_mut().zip(strip) {
                *d += s;
            }
        }
        start += len;
    }

    // accumulated weight mass is separable: rows and columns independently
    let mass_1d = |len: usize, valid: usize| -> Vec<f64> {
        (0..len)
            .map(|p| {
                (0..t)
                    .filter(|&d| p >= d && p - d < valid)
                    .map(|d| gp[d])
                    .sum()
            })
            .collect()
    };
    let my = mass_1d(h, vh);
    let mx = mass_1d(w, vw);
    for y in 0..h {
        for x in 0..w {
            num[y * w + x] /= my[y] * mx[x];
        }
    }
    Ok(AnomalyMap::from_raw(h, w, num))
}

pub fn fca_score_multi(fm: &FeatureMap, refs: &[SortedReference], cfg: &PatchConfig) -> Result<AnomalyMap> {
    check_sorted_refs(fm, refs, cfg)?;
    let refs: Vec<&SortedReference> = refs.iter().collect();
    let t = cfg.patch_size;
    fca_with(fm, cfg, |vy, vx, scratch, m| {
        accumulate_noncompliance(fm, vy, vx, t, &refs, scratch, m)
    })
}

/// Feature correspondence analysis: each pixel aggregates its own matching
/// error over every patch that contains it.
pub fn fca_score(fm: &FeatureMap, reference: &SortedReference, cfg: &PatchConfig) -> Result<AnomalyMap> {
    fca_score_multi(fm, core::slice::from_ref(reference), cfg)
}
