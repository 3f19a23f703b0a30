//! Independent reference implementations used as test oracles. They follow
//! the textbook definitions with plain loops and share no code with the
//! crate beyond its data types.

#![allow(dead_code)]

use fca_core::{AnomalyMap, FeatureMap, PatchConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_fm(h: usize, w: usize, c: usize, seed: u64) -> FeatureMap {
    let mut r = rng(seed);
    FeatureMap::from_fn(h, w, c, |_, _, _| r.random::<f64>()).unwrap()
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Raw values of channel `c` of the patch centered at `(cy, cx)`, raster order.
pub fn patch_values(fm: &FeatureMap, cy: usize, cx: usize, t: usize, c: usize) -> Vec<f64> {
    let r = t / 2;
    let mut v = Vec::with_capacity(t * t);
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            v.push(fm.at(y, x, c));
        }
    }
    v
}

pub fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// 1-D Wasserstein distance between equal-size samples, unnormalized:
/// sum of absolute differences of the sorted samples.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a.to_vec()), sorted(b.to_vec()));
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum()
}

/// Matching error of every in-patch pixel of one channel: stable sort of the
/// raster-ordered samples, pixel at rank `r` gets `|v - ref[r]|`.
pub fn noncompliance_channel(values: &[f64], reference: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; values.len()];
    for (rank, &i) in idx.iter().enumerate() {
        out[i] = (values[i] - reference[rank]).abs();
    }
    out
}

/// Matching error summed over channels, raster order inside the patch.
/// `reference[c]` holds the sorted reference of channel `c`.
pub fn noncompliance(fm: &FeatureMap, cy: usize, cx: usize, t: usize, reference: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; t * t];
    for (c, rc) in reference.iter().enumerate() {
        for (o, e) in out
            .iter_mut()
            .zip(noncompliance_channel(&patch_values(fm, cy, cx, t, c), rc))
        {
            *o += e;
        }
    }
    out
}

pub fn gauss(d2: f64, sigma: f64) -> f64 {
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Smooths a `t x t` map with a 2-D Gaussian of radius `ceil(3 sigma)`,
/// weights normalized to sum 1, replicate padding at the patch border.
pub fn smooth_2d(m: &[f64], t: usize, sigma: f64) -> Vec<f64> {
    let rad = (3.0 * sigma).ceil() as isize;
    let mut total = 0.0;
    for i in -rad..=rad {
        for j in -rad..=rad {
            total += gauss((i * i + j * j) as f64, sigma);
        }
    }
    let clamp = |v: isize| v.clamp(0, t as isize - 1) as usize;
    let mut out = vec![0.0; t * t];
    for y in 0..t {
        for x in 0..t {
            let mut acc = 0.0;
            for i in -rad..=rad {
                for j in -rad..=rad {
                    let k = gauss((i * i + j * j) as f64, sigma) / total;
                    acc += k * m[clamp(y as isize + i) * t + clamp(x as isize + j)];
                }
            }
            out[y * t + x] = acc;
        }
    }
    out
}

/// FCA in gather form: for every pixel, loop over every fully-inside patch
/// containing it and average its (optionally smoothed) matching error with
/// weights `G_sigma_p(center - pixel)`.
pub fn fca(fm: &FeatureMap, reference: &[Vec<f64>], cfg: &PatchConfig) -> Vec<f64> {
    let (h, w, t) = (fm.height(), fm.width(), cfg.patch_size);
    let r = t / 2;
    // error maps of every valid patch, computed once
    let mut maps = vec![Vec::new(); h * w];
    for cy in r..h - r {
        for cx in r..w - r {
            let m = noncompliance(fm, cy, cx, t, reference);
            maps[cy * w + cx] = if cfg.sigma_s > 0.0 { smooth_2d(&m, t, cfg.sigma_s) } else { m };
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (mut num, mut den) = (0.0, 0.0);
            for cy in r..h - r {
                for cx in r..w - r {
                    if y.abs_diff(cy) > r || x.abs_diff(cx) > r {
                        continue;
                    }
                    let d2 = ((y as f64 - cy as f64).powi(2)) + ((x as f64 - cx as f64).powi(2));
                    let g = gauss(d2, cfg.sigma_p);
                    let m = &maps[cy * w + cx];
                    num += g * m[(y + r - cy) * t + (x + r - cx)];
                    den += g;
                }
            }
            out[y * w + x] = num / den;
        }
    }
    out
}

/// Nearest fully-inside center of pixel `(y, x)` along one axis.
pub fn nearest_center(p: usize, n: usize, r: usize) -> usize {
    p.clamp(r, n - 1 - r)
}

/// Per-center score `f(cy, cx)` replicated into the border band.
pub fn center_map(h: usize, w: usize, r: usize, mut f: impl FnMut(usize, usize) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(f(nearest_center(y, h, r), nearest_center(x, w, r)));
        }
    }
    out
}

pub fn patch_mean(fm: &FeatureMap, cy: usize, cx: usize, t: usize) -> Vec<f64> {
    (0..fm.channels())
        .map(|c| patch_values(fm, cy, cx, t, c).iter().sum::<f64>() / (t * t) as f64)
        .collect()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn moments(fm: &FeatureMap, reference: &[f64], t: usize) -> Vec<f64> {
    center_map(fm.height(), fm.width(), t / 2, |cy, cx| sq_dist(&patch_mean(fm, cy, cx, t), reference))
}

/// Bin center of a value in `[0, 1]` with `bins` uniform bins.
pub fn bin_center(v: f64, bins: usize) -> f64 {
    let b = ((v * bins as f64).floor() as usize).min(bins - 1);
    (b as f64 + 0.5) / bins as f64
}

/// Exact transport cost between two equal-size samples after snapping to
/// bin centers, normalized by the sample size.
pub fn binned_transport(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let snap = |v: &[f64]| v.iter().map(|x| bin_center(*x, bins)).collect::<Vec<_>>();
    wasserstein_1d(&snap(a), &snap(b)) / a.len() as f64
}

/// Sorted-sample SWW: per center, weighted sum of the matching errors.
pub fn sww(fm: &FeatureMap, reference: &[Vec<f64>], cfg: &PatchConfig) -> Vec<f64> {
    let t = cfg.patch_size;
    let r = t / 2;
    let mut weights = Vec::with_capacity(t * t);
    for dy in 0..t {
        for dx in 0..t {
            let d2 = ((dy as f64 - r as f64).powi(2)) + ((dx as f64 - r as f64).powi(2));
            weights.push(if cfg.sww_uniform { 1.0 } else { gauss(d2, cfg.sigma_w) });
        }
    }
    let total: f64 = weights.iter().sum();
    center_map(fm.height(), fm.width(), r, |cy, cx| {
        noncompliance(fm, cy, cx, t, reference)
            .iter()
            .zip(&weights)
            .map(|(m, w)| m * w / total)
            .sum()
    })
}

/// Per-channel, per-rank median over all fully-inside patches.
pub fn median_reference(fm: &FeatureMap, t: usize) -> Vec<Vec<f64>> {
    let r = t / 2;
    let (h, w) = (fm.height(), fm.width());
    (0..fm.channels())
        .map(|c| {
            let patches: Vec<Vec<f64>> = (r..h - r)
                .flat_map(|cy| (r..w - r).map(move |cx| (cy, cx)))
                .map(|(cy, cx)| sorted(patch_values(fm, cy, cx, t, c)))
                .collect();
            (0..t * t)
                .map(|rank| {
                    let col = sorted(patches.iter().map(|p| p[rank]).collect());
                    let n = col.len();
                    if n % 2 == 1 {
                        col[n / 2]
                    } else {
                        (col[n / 2 - 1] + col[n / 2]) / 2.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Sum over all fully-inside patches and channels of the 1-D Wasserstein
/// distance to `reference`.
pub fn total_wasserstein(fm: &FeatureMap, t: usize, reference: &[Vec<f64>]) -> f64 {
    let r = t / 2;
    let mut total = 0.0;
    for cy in r..fm.height() - r {
        for cx in r..fm.width() - r {
            for (c, rc) in reference.iter().enumerate() {
                total += wasserstein_1d(&patch_values(fm, cy, cx, t, c), rc);
            }
        }
    }
    total
}

/// Moments k-NN from the full cost matrix: every center sums its `k`
/// smallest costs among candidates farther than `radius` (Chebyshev).
pub fn knn_moments(fm: &FeatureMap, t: usize, k: usize, radius: usize) -> Vec<f64> {
    let r = t / 2;
    let (h, w) = (fm.height(), fm.width());
    let centers: Vec<(usize, usize)> = (r..h - r).flat_map(|y| (r..w - r).map(move |x| (y, x))).collect();
    let means: Vec<Vec<f64>> = centers.iter().map(|&(y, x)| patch_mean(fm, y, x, t)).collect();
    let vw = w - 2 * r;
    center_map(h, w, r, |cy, cx| {
        let q = (cy - r) * vw + (cx - r);
        let mut costs: Vec<f64> = centers
            .iter()
            .enumerate()
            .filter(|(_, &(y, x))| y.abs_diff(cy).max(x.abs_diff(cx)) > radius)
            .map(|(i, _)| sq_dist(&means[q], &means[i]))
            .collect();
        costs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        costs.iter().take(k).sum()
    })
}

/// AUROC by counting all positive/negative pairs.
pub fn auroc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Distinct scores in descending order.
fn thresholds(scores: &[f64]) -> Vec<f64> {
    let mut t = sorted(scores.to_vec());
    t.dedup();
    t.reverse();
    t
}

/// PRO by direct evaluation at every distinct threshold (prediction =
/// score >= t), trapezoid from (0, 0), linear interpolation at the limit.
pub fn pro_sweep(scores: &[f64], region_ids: &[u32], fpr_limit: f64) -> f64 {
    let mut regions: Vec<u32> = region_ids.iter().copied().filter(|r| *r > 0).collect();
    regions.sort();
    regions.dedup();
    let negatives = region_ids.iter().filter(|r| **r == 0).count() as f64;
    let mut curve = vec![(0.0, 0.0)];
    for t in thresholds(scores) {
        let fp = scores
            .iter()
            .zip(region_ids)
            .filter(|(s, r)| **r == 0 && **s >= t)
            .count() as f64;
        let mut overlap = 0.0;
        for reg in &regions {
            let size = region_ids.iter().filter(|r| *r == reg).count() as f64;
            let hit = scores
                .iter()
                .zip(region_ids)
                .filter(|(s, r)| *r == reg && **s >= t)
                .count() as f64;
            overlap += hit / size;
        }
        curve.push((fp / negatives, overlap / regions.len() as f64));
    }
    let mut area = 0.0;
    for w in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= fpr_limit {
            break;
        }
        if x1 <= fpr_limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y = y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0);
            area += (fpr_limit - x0) * (y0 + y) / 2.0;
            break;
        }
    }
    area / fpr_limit
}

/// Best F1 over every distinct threshold; ties keep the higher threshold.
pub fn f1_sweep(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let mut best = (-1.0, f64::INFINITY);
    for t in thresholds(scores) {
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for (s, l) in scores.iter().zip(labels) {
            match (*s >= t, *l) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fneg += 1.0,
                _ => {}
            }
        }
        let f1 = 2.0 * tp / (2.0 * tp + fp + fneg);
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    best
}

/// 8-connected components by breadth-first flood fill, ids in raster order
/// of each component's first pixel.
pub fn components(mask: &[bool], h: usize, w: usize) -> Vec<u32> {
    let mut ids = vec![0u32; h * w];
    let mut next = 0;
    for start in 0..h * w {
        if !mask[start] || ids[start] != 0 {
            continue;
        }
        next += 1;
        ids[start] = next;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if mask[q] && ids[q] == 0 {
                        ids[q] = next;
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    ids
}

pub fn scores_of(am: &AnomalyMap) -> Vec<f64> {
    am.scores().to_vec()
}
