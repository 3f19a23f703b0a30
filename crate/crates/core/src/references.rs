//! Reference selection: what each patch is compared against.
//!
//! Global references aggregate the whole feature map once (mean for
//! moments, histogram for histograms, rank-wise median of sorted patch
//! samples for SWW/FCA). Patch-based references use individual patches of
//! the same image, either sampled at random or chosen per query patch as its
//! `k` nearest neighbours under the comparator's own cost.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::par;
use crate::statistics::{
    bin_index, check_unit_range, expand_centers, fca_with, histogram_emd, patch_histograms, patch_means, sort_patch_channel,
    sww_weights, Comparator, HistogramReference, PatchConfig, SortedReference,
};
use crate::tensor::{AnomalyMap, FeatureMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReferenceStrategy {
    GlobalMean,
    GlobalHistogram,
    MedianOrderStatistics,
    RandomPatches,
    KNearest,
    AllPatches,
}

impl ReferenceStrategy {
    pub const ALL: [ReferenceStrategy; 6] = [
        ReferenceStrategy::GlobalMean,
        ReferenceStrategy::GlobalHistogram,
        ReferenceStrategy::MedianOrderStatistics,
        ReferenceStrategy::RandomPatches,
        ReferenceStrategy::KNearest,
        ReferenceStrategy::AllPatches,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReferenceStrategy::GlobalMean => "global-mean",
            ReferenceStrategy::GlobalHistogram => "global-histogram",
            ReferenceStrategy::MedianOrderStatistics => "median-order",
            ReferenceStrategy::RandomPatches => "random",
            ReferenceStrategy::KNearest => "knn",
            ReferenceStrategy::AllPatches => "all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name().eq_ignore_ascii_case(s))
    }

    /// Whether this strategy can feed `comparator`.
    pub fn supports(self, comparator: Comparator) -> bool {
        match self {
            ReferenceStrategy::GlobalMean => comparator == Comparator::Moments,
            ReferenceStrategy::GlobalHistogram => comparator == Comparator::Histogram,
            ReferenceStrategy::MedianOrderStatistics => matches!(comparator, Comparator::Sww | Comparator::Fca),
            ReferenceStrategy::RandomPatches | ReferenceStrategy::KNearest | ReferenceStrategy::AllPatches => true,
        }
    }

    /// The aggregate reference paired with a comparator by default.
    pub fn global_for(comparator: Comparator) -> Self {
        match comparator {
            Comparator::Moments => ReferenceStrategy::GlobalMean,
            Comparator::Histogram => ReferenceStrategy::GlobalHistogram,
            Comparator::Sww | Comparator::Fca => ReferenceStrategy::MedianOrderStatistics,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSpec {
    pub strategy: ReferenceStrategy,
    /// Number of random patches, or `k` for nearest neighbours.
    pub count: usize,
    pub seed: u64,
    /// Candidates within this Chebyshev distance of the query center are not
    /// admissible as neighbours. Defaults to the patch size.
    pub self_exclusion_radius: Option<usize>,
    /// All-patches scoring is quadratic in the pixel count and must be
    /// requested explicitly.
    pub allow_all_patches: bool,
}

impl ReferenceSpec {
    pub const DEFAULT_K: usize = 10;

    pub fn new(strategy: ReferenceStrategy) -> Self {
        Self {
            strategy,
            count: match strategy {
                ReferenceStrategy::RandomPatches => 1,
                _ => Self::DEFAULT_K,
            },
            seed: 0,
            self_exclusion_radius: None,
            allow_all_patches: false,
        }
    }

    pub fn random(count: usize, seed: u64) -> Self {
        Self {
            count,
            seed,
            ..Self::new(ReferenceStrategy::RandomPatches)
        }
    }

    pub fn knn(k: usize) -> Self {
        Self {
            count: k,
            ..Self::new(ReferenceStrategy::KNearest)
        }
    }

    pub fn exclusion_radius(&self, cfg: &PatchConfig) -> usize {
        self.self_exclusion_radius.unwrap_or(cfg.patch_size)
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.strategy, ReferenceStrategy::RandomPatches | ReferenceStrategy::KNearest) && self.count == 0 {
            return Err(Error::param("reference count must be at least 1"));
        }
        if self.strategy == ReferenceStrategy::AllPatches && !self.allow_all_patches {
            return Err(Error::config(
                "all-patches references are quadratic in the image size; enable them explicitly",
            ));
        }
        Ok(())
    }
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self::new(ReferenceStrategy::MedianOrderStatistics)
    }
}

/// A single comparison target.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Mean(Vec<f64>),
    Histogram(HistogramReference),
    Sorted(SortedReference),
}

/// Per-channel arithmetic mean over all pixels.
pub fn global_mean_reference(fm: &FeatureMap) -> Vec<f64> {
    let c = fm.channels();
    let mut sums = vec![0.0; c];
    for px in fm.data().chunks_exact(c) {
        for (s, v) in sums.iter_mut().zip(px) {
            *s += v;
        }
    }
    let n = (fm.height() * fm.width()) as f64;
    sums.into_iter().map(|s| s / n).collect()
}

/// Per-channel normalized histogram over all pixels, values in `[0, 1]`.
pub fn global_histogram_reference(fm: &FeatureMap, bins: usize) -> Result<HistogramReference> {
    if bins < 2 {
        return Err(Error::param("histogram needs at least two bins"));
    }
    check_unit_range(fm)?;
    let c = fm.channels();
    let mut counts = vec![0u64; c * bins];
    for px in fm.data().chunks_exact(c) {
        for (ch, v) in px.iter().enumerate() {
            counts[ch * bins + bin_index(*v, bins)] += 1;
        }
    }
    let n = (fm.height() * fm.width()) as f64;
    Ok(HistogramReference::from_raw(
        c,
        bins,
        counts.into_iter().map(|k| k as f64 / n).collect(),
    ))
}

// Upper bound on the number of sorted samples held at once while building
// the median reference; larger inputs are processed in blocks of ranks.
const MEDIAN_BLOCK_VALUES: usize = 1 << 23;

/// Median of a non-empty slice; even lengths average the two middle values.
fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    let cmp = |a: &f64, b: &f64| a.partial_cmp(b).unwrap_or(Ordering::Equal);
    let (lower, upper, _) = values.select_nth_unstable_by(n / 2, cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

/// The reference minimizing the summed 1-D Wasserstein distance to all
/// fully-inside patches: per channel and rank, the median of that rank's
/// sorted sample over every patch.
pub fn median_order_statistics_reference(fm: &FeatureMap, cfg: &PatchConfig) -> Result<SortedReference> {
    let (vh, vw) = cfg.valid_extent(fm)?;
    let t = cfg.patch_size;
    let ranks = cfg.area();
    let patches = vh * vw;
    let block = (MEDIAN_BLOCK_VALUES / patches).clamp(1, ranks);
    let mut values = Vec::with_capacity(ranks * fm.channels());
    for c in 0..fm.channels() {
        let mut r0 = 0;
        while r0 < ranks {
            let r1 = (r0 + block).min(ranks);
            // sorted ranks r0..r1 of every patch, one vector per patch row
            let rows = par::map_range(vh, |vy| {
                let mut pairs = Vec::with_capacity(ranks);
                let mut out = Vec::with_capacity(vw * (r1 - r0));
                for vx in 0..vw {
                    sort_patch_channel(fm, vy, vx, t, c, &mut pairs);
                    out.extend(pairs[r0..r1].iter().map(|p| p.0));
                }
                out
            });
            let medians = par::map_range(r1 - r0, |i| {
                let mut column: Vec<f64> = rows
                    .iter()
                    .flat_map(|row| row.iter().skip(i).step_by(r1 - r0).copied())
                    .collect();
                median_in_place(&mut column)
            });
            values.extend(medians);
            r0 = r1;
        }
    }
    Ok(SortedReference::from_raw(fm.channels(), ranks, values))
}

/// Distinct fully-inside patch centers `(y, x)`, sampled uniformly without
/// replacement; deterministic given the seed.
pub fn random_patch_centers(fm: &FeatureMap, cfg: &PatchConfig, spec: &ReferenceSpec) -> Result<Vec<(usize, usize)>> {
    let (vh, vw) = cfg.valid_extent(fm)?;
    let total = vh * vw;
    if spec.count == 0 || spec.count > total {
        return Err(Error::param(format!(
            "cannot sample {} patches out of {total}",
            spec.count
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = cfg.radius();
    Ok(rand::seq::index::sample(&mut rng, total, spec.count)
        .into_iter()
        .map(|i| (i / vw + r, i % vw + r))
        .collect())
}

pub fn random_patch_references(fm: &FeatureMap, cfg: &PatchConfig, spec: &ReferenceSpec) -> Result<Vec<SortedReference>> {
    random_patch_centers(fm, cfg, spec)?
        .into_iter()
        .map(|(cy, cx)| SortedReference::from_patch(fm, cy, cx, cfg.patch_size))
        .collect()
}

/// Reference of the patch centered at `(cy, cx)` in the form `comparator`
/// consumes.
pub fn patch_reference(fm: &FeatureMap, cy: usize, cx: usize, cfg: &PatchConfig, comparator: Comparator) -> Result<Reference> {
    let t = cfg.patch_size;
    let r = cfg.radius();
    let sorted = SortedReference::from_patch(fm, cy, cx, t)?;
    let area = cfg.area() as f64;
    Ok(match comparator {
        Comparator::Moments => Reference::Mean(
            (0..fm.channels())
                .map(|c| sorted.channel(c).iter().sum::<f64>() / area)
                .collect(),
        ),
        Comparator::Histogram => {
            let bins = cfg.histogram_bins;
            let mut mass = vec![0.0; fm.channels() * bins];
            for y in cy - r..=cy + r {
                for x in cx - r..=cx + r {
                    for (c, v) in fm.pixel(y, x).iter().enumerate() {
                        if !(0.0..=1.0).contains(v) {
                            return Err(Error::precondition("histogram features must lie in [0, 1]"));
                        }
                        mass[c * bins + bin_index(*v, bins)] += 1.0 / area;
                    }
                }
            }
            Reference::Histogram(HistogramReference::from_raw(fm.channels(), bins, mass))
        }
        Comparator::Sww | Comparator::Fca => Reference::Sorted(sorted),
    })
}

/// Sorted samples with in-patch positions for every valid patch.
struct SortedPatches {
    channels: usize,
    area: usize,
    values: Vec<f64>,
    positions: Vec<u32>,
}

impl SortedPatches {
    fn build(fm: &FeatureMap, cfg: &PatchConfig, vh: usize, vw: usize) -> Self {
        let t = cfg.patch_size;
        let area = cfg.area();
        let channels = fm.channels();
        let rows = par::map_range(vh, |vy| {
            let mut pairs = Vec::with_capacity(area);
            let mut vals = Vec::with_capacity(vw * channels * area);
            let mut pos = Vec::with_capacity(vw * channels * area);
            for vx in 0..vw {
                for c in 0..channels {
                    sort_patch_channel(fm, vy, vx, t, c, &mut pairs);
                    vals.extend(pairs.iter().map(|p| p.0));
                    pos.extend(pairs.iter().map(|p| p.1));
                }
            }
            (vals, pos)
        });
        let mut values = Vec::with_capacity(vh * vw * channels * area);
        let mut positions = Vec::with_capacity(values.capacity());
        for (v, p) in rows {
            values.extend(v);
            positions.extend(p);
        }
        Self {
            channels,
            area,
            values,
            positions,
        }
    }

    fn stride(&self) -> usize {
        self.channels * self.area
    }

    fn values(&self, patch: usize) -> &[f64] {
        &self.values[patch * self.stride()..(patch + 1) * self.stride()]
    }

    fn positions(&self, patch: usize) -> &[u32] {
        &self.positions[patch * self.stride()..(patch + 1) * self.stride()]
    }
}

/// Per-patch features each comparator's pairwise cost is computed from.
enum PatchTable {
    Means { channels: usize, data: Vec<f64> },
    Histograms { channels: usize, bins: usize, data: Vec<f64> },
    Sorted(SortedPatches),
}

impl PatchTable {
    fn build(fm: &FeatureMap, cfg: &PatchConfig, comparator: Comparator) -> Result<(usize, usize, Self)> {
        Ok(match comparator {
            Comparator::Moments => {
                let (vh, vw, data) = patch_means(fm, cfg)?;
                (vh, vw, PatchTable::Means { channels: fm.channels(), data })
            }
            Comparator::Histogram => {
                let (vh, vw, data) = patch_histograms(fm, cfg)?;
                (
                    vh,
                    vw,
                    PatchTable::Histograms {
                        channels: fm.channels(),
                        bins: cfg.histogram_bins,
                        data,
                    },
                )
            }
            Comparator::Sww | Comparator::Fca => {
                let (vh, vw) = cfg.valid_extent(fm)?;
                (vh, vw, PatchTable::Sorted(SortedPatches::build(fm, cfg, vh, vw)))
            }
        })
    }
}

/// Admissible candidate patch indices for the query at valid index `(qy, qx)`.
fn admissible(qy: usize, qx: usize, vh: usize, vw: usize, radius: usize) -> impl Iterator<Item = usize> {
    (0..vh * vw).filter(move |&i| {
        let (y, x) = (i / vw, i % vw);
        y.abs_diff(qy) > radius || x.abs_diff(qx) > radius
    })
}

fn admissible_count(qy: usize, qx: usize, vh: usize, vw: usize, radius: usize) -> usize {
    let span = |q: usize, n: usize| q.min(radius) + (n - 1 - q).min(radius) + 1;
    vh * vw - span(qy, vh) * span(qx, vw)
}

/// Keeps the `k` smallest `(cost, candidate)` pairs, sorted.
fn k_smallest(costs: &mut Vec<(f64, usize)>, k: usize) {
    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
    };
    if k < costs.len() {
        costs.select_nth_unstable_by(k, cmp);
        costs.truncate(k);
    }
    costs.sort_unstable_by(cmp);
}

/// Scores every patch against its `k` nearest admissible patches (or all of
/// them for [`ReferenceStrategy::AllPatches`]) and sums the resulting costs.
///
/// Pairwise costs: squared mean distance (moments), histogram EMD summed over
/// channels (histogram), the SWW-weighted matching error (SWW) and the plain
/// 1-D Wasserstein distance (FCA). For FCA the matching errors of the
/// selected neighbours are scattered exactly as in
/// [`crate::statistics::fca_score`].
pub fn knn_score(fm: &FeatureMap, cfg: &PatchConfig, spec: &ReferenceSpec, comparator: Comparator) -> Result<AnomalyMap> {
    spec.validate()?;
    let all = match spec.strategy {
        ReferenceStrategy::KNearest => false,
        ReferenceStrategy::AllPatches => true,
        other => {
            return Err(Error::param(format!(
                "nearest-neighbour scoring needs the knn or all strategy, got {}",
                other.name()
            )))
        }
    };
    let (vh, vw, table) = PatchTable::build(fm, cfg, comparator)?;
    let radius = spec.exclusion_radius(cfg);
    let mut min_admissible = usize::MAX;
    for qy in 0..vh {
        for qx in 0..vw {
            min_admissible = min_admissible.min(admissible_count(qy, qx, vh, vw, radius));
        }
    }
    let needed = if all { 1 } else { spec.count };
    if min_admissible < needed {
        return Err(Error::param(format!(
            "only {min_admissible} admissible neighbour patches for some query, {needed} required"
        )));
    }
    let k_for = |qy: usize, qx: usize| {
        if all {
            admissible_count(qy, qx, vh, vw, radius)
        } else {
            spec.count
        }
    };
    let sww_w = sww_weights(cfg);

    // cost of query patch `q` against candidate patch `c`
    let cost = |q: usize, c: usize| -> f64 {
        match &table {
            PatchTable::Means { channels, data } => {
                let a = &data[q * channels..(q + 1) * channels];
                let b = &data[c * channels..(c + 1) * channels];
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
            }
            PatchTable::Histograms { channels, bins, data } => {
                let stride = channels * bins;
                let a = &data[q * stride..(q + 1) * stride];
                let b = &data[c * stride..(c + 1) * stride];
                a.chunks_exact(*bins)
                    .zip(b.chunks_exact(*bins))
                    .map(|(x, y)| histogram_emd(x, y))
                    .sum()
            }
            PatchTable::Sorted(sp) => {
                let a = sp.values(q);
                let b = sp.values(c);
                if comparator == Comparator::Sww {
                    let pos = sp.positions(q);
                    a.iter()
                        .zip(b)
                        .zip(pos)
                        .map(|((x, y), p)| math::abs(x - y) * sww_w[*p as usize])
                        .sum()
                } else {
                    a.iter().zip(b).map(|(x, y)| math::abs(x - y)).sum()
                }
            }
        }
    };
    let select = |qy: usize, qx: usize| -> Vec<(f64, usize)> {
        let q = qy * vw + qx;
        let mut costs: Vec<(f64, usize)> = admissible(qy, qx, vh, vw, radius).map(|c| (cost(q, c), c)).collect();
        k_smallest(&mut costs, k_for(qy, qx));
        costs
    };

    match comparator {
        Comparator::Fca => {
            let PatchTable::Sorted(sp) = &table else { unreachable!() };
            fca_with(fm, cfg, |vy, vx, _scratch, m| {
                let q = vy * vw + vx;
                let qv = sp.values(q);
                let qp = sp.positions(q);
                for (_, c) in select(vy, vx) {
                    for ((x, y), p) in qv.iter().zip(sp.values(c)).zip(qp) {
                        m[*p as usize] += math::abs(x - y);
                    }
                }
            })
        }
        Comparator::Moments | Comparator::Histogram | Comparator::Sww => {
            let scores = par::map_range(vh, |vy| {
                (0..vw)
                    .map(|vx| select(vy, vx).iter().map(|c| c.0).sum::<f64>())
                    .collect::<Vec<f64>>()
            });
            Ok(expand_centers(&scores.concat(), vh, vw, fm.height(), fm.width(), cfg.radius()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_reference_of_constant_map() {
        let fm = FeatureMap::from_fn(6, 6, 2, |_, _, c| if c == 0 { 0.3 } else { 0.8 }).unwrap();
        let r = median_order_statistics_reference(&fm, &PatchConfig::with_patch_size(3)).unwrap();
        assert!(r.channel(0).iter().all(|v| *v == 0.3));
        assert!(r.channel(1).iter().all(|v| *v == 0.8));
    }

    #[test]
    fn median_reference_single_rank_is_pixel_median() {
        let vals = [5.0, 1.0, 4.0, 2.0, 3.0, 9.0];
        let fm = FeatureMap::new(2, 3, 1, vals.to_vec()).unwrap();
        let r = median_order_statistics_reference(&fm, &PatchConfig::with_patch_size(1)).unwrap();
        // sorted 1 2 3 4 5 9 -> (3 + 4) / 2
        assert_eq!(r.channel(0), &[3.5]);
    }

    #[test]
    fn median_reference_rejects_small_maps() {
        let fm = FeatureMap::new(2, 2, 1, vec![0.0; 4]).unwrap();
        assert!(matches!(
            median_order_statistics_reference(&fm, &PatchConfig::with_patch_size(3)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn global_mean_values() {
        let fm = FeatureMap::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(global_mean_reference(&fm), vec![0.5]);
    }

    #[test]
    fn global_histogram_of_zero_map() {
        let fm = FeatureMap::new(2, 2, 1, vec![0.0; 4]).unwrap();
        let h = global_histogram_reference(&fm, 10).unwrap();
        assert_eq!(h.row(0)[0], 1.0);
        assert!(h.row(0)[1..].iter().all(|m| *m == 0.0));
    }

    #[test]
    fn global_histogram_of_ramp() {
        let n = 1000;
        let fm = FeatureMap::from_fn(1, n, 1, |_, x, _| x as f64 / (n - 1) as f64).unwrap();
        let h = global_histogram_reference(&fm, 10).unwrap();
        let quantum = 1.0 / n as f64;
        for m in h.row(0) {
            assert!((m - 0.1).abs() <= quantum + 1e-12);
        }
        assert!((h.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let bad = FeatureMap::new(1, 1, 1, vec![1.5]).unwrap();
        assert!(global_histogram_reference(&bad, 10).is_err());
    }

    #[test]
    fn random_centers_are_deterministic() {
        let fm = FeatureMap::from_fn(12, 12, 1, |y, x, _| (y * 12 + x) as f64).unwrap();
        let cfg = PatchConfig::with_patch_size(3);
        let spec = ReferenceSpec::random(5, 99);
        let a = random_patch_centers(&fm, &cfg, &spec).unwrap();
        let b = random_patch_centers(&fm, &cfg, &spec).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&(y, x)| (1..11).contains(&y) && (1..11).contains(&x)));
        assert!(random_patch_centers(&fm, &cfg, &ReferenceSpec::random(101, 0)).is_err());
    }

    #[test]
    fn admissible_count_matches_enumeration() {
        for (vh, vw, r) in [(5, 7, 1), (8, 8, 3), (4, 4, 0)] {
            for qy in 0..vh {
                for qx in 0..vw {
                    assert_eq!(admissible(qy, qx, vh, vw, r).count(), admissible_count(qy, qx, vh, vw, r));
                }
            }
        }
    }

    #[test]
    fn knn_requires_enough_candidates() {
        let fm = FeatureMap::from_fn(6, 6, 1, |y, x, _| ((y + x) % 3) as f64).unwrap();
        let cfg = PatchConfig::with_patch_size(3);
        let spec = ReferenceSpec::knn(50);
        assert!(matches!(knn_score(&fm, &cfg, &spec, Comparator::Moments), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn all_patches_needs_opt_in() {
        let fm = FeatureMap::from_fn(8, 8, 1, |_, _, _| 0.0).unwrap();
        let cfg = PatchConfig::with_patch_size(3);
        let mut spec = ReferenceSpec::new(ReferenceStrategy::AllPatches);
        spec.self_exclusion_radius = Some(1);
        assert!(knn_score(&fm, &cfg, &spec, Comparator::Moments).is_err());
        spec.allow_all_patches = true;
        assert!(knn_score(&fm, &cfg, &spec, Comparator::Moments).is_ok());
    }
}
