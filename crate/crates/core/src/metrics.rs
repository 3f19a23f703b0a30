//! Threshold-sweep evaluation of anomaly maps against ground-truth masks.
//!
//! Scores are pooled over a whole split. A pixel is predicted anomalous at
//! threshold `t` when its score is `>= t`; the sweep visits every distinct
//! score from the highest down. Ground-truth regions are the 8-connected
//! components of the masks, pooled over all images of the split.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::tensor::{AnomalyMap, Mask};

/// Integration limit on the false positive rate for the PRO metric.
pub const PRO_FPR_LIMIT: f64 = 0.3;

/// Above this many distinct scores the PRO curve is sampled at
/// [`PRO_QUANTILE_THRESHOLDS`] quantile-spaced thresholds instead of every one.
pub const PRO_EXACT_SWEEP_LIMIT: usize = 100_000;
pub const PRO_QUANTILE_THRESHOLDS: usize = 2000;

/// Labels the 8-connected components of a mask. Returns per-pixel ids
/// (0 = background, components numbered from 1 in raster order of their
/// first pixel) and the number of components.
pub fn label_components(mask: &Mask) -> (Vec<u32>, u32) {
    let (h, w) = (mask.height(), mask.width());
    let mut ids = vec![0u32; h * w];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask.data()[start] || ids[start] != 0 {
            continue;
        }
        next += 1;
        ids[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if mask.data()[j] && ids[j] == 0 {
                        ids[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
    }
    (ids, next)
}

/// Scores, labels and region ids pooled over a split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledScores {
    scores: Vec<f64>,
    labels: Vec<bool>,
    region_ids: Vec<u32>,
    regions: u32,
}

impl LabeledScores {
    /// Region ids must be positive exactly where the label is set.
    pub fn new(scores: Vec<f64>, labels: Vec<bool>, region_ids: Vec<u32>) -> Result<Self> {
        if scores.len() != labels.len() || scores.len() != region_ids.len() {
            return Err(Error::input("scores, labels and region ids differ in length"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::input("scores must be finite"));
        }
        if labels.iter().zip(&region_ids).any(|(l, r)| *l != (*r > 0)) {
            return Err(Error::input("region ids must be positive exactly on anomalous pixels"));
        }
        // compact the ids so that regions are numbered 1..=n
        let mut remap = alloc::collections::BTreeMap::new();
        for r in region_ids.iter().filter(|r| **r > 0) {
            let n = remap.len() as u32 + 1;
            remap.entry(*r).or_insert(n);
        }
        let regions = remap.len() as u32;
        let region_ids = region_ids
            .into_iter()
            .map(|r| if r == 0 { 0 } else { remap[&r] })
            .collect();
        Ok(Self {
            scores,
            labels,
            region_ids,
            regions,
        })
    }

    /// Flat scores and labels without spatial layout; all positives form a
    /// single region.
    pub fn from_scores_and_labels(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        let region_ids = labels.iter().map(|l| u32::from(*l)).collect();
        let mut ls = Self::new(scores, labels, region_ids)?;
        ls.regions = u32::from(ls.labels.iter().any(|l| *l));
        Ok(ls)
    }

    /// Appends one image; its mask components become new regions.
    pub fn push(&mut self, map: &AnomalyMap, mask: &Mask) -> Result<()> {
        if map.height() != mask.height() || map.width() != mask.width() {
            return Err(Error::input(format!(
                "score map {}x{} and mask {}x{} differ in size",
                map.height(),
                map.width(),
                mask.height(),
                mask.width()
            )));
        }
        let (ids, count) = label_components(mask);
        let offset = self.regions;
        self.scores.extend_from_slice(map.scores());
        self.labels.extend_from_slice(mask.data());
        self.region_ids
            .extend(ids.into_iter().map(|r| if r == 0 { 0 } else { r + offset }));
        self.regions += count;
        Ok(())
    }

    pub fn from_maps<'a>(pairs: impl IntoIterator<Item = (&'a AnomalyMap, &'a Mask)>) -> Result<Self> {
        let mut ls = Self::default();
        for (map, mask) in pairs {
            ls.push(map, mask)?;
        }
        Ok(ls)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn region_ids(&self) -> &[u32] {
        &self.region_ids
    }

    pub fn region_count(&self) -> usize {
        self.regions as usize
    }

    fn positives(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }

    /// Pixel indices ordered by descending score.
    fn descending(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_unstable_by(|&a, &b| self.scores[b].partial_cmp(&self.scores[a]).unwrap_or(Ordering::Equal));
        order
    }
}

/// Area under the ROC curve with ties counted as one half
/// (Mann-Whitney formulation).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::input("scores and labels differ in length"));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::undefined("AUROC needs both positive and negative samples"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // sum of (1-based, tie-averaged) ranks of the positives, doubled to stay integral
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_x2 = (i + 1 + j + 1) as u128;
        let p = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        rank_sum_x2 += avg_x2 * p;
        i = j + 1;
    }
    let (pos, neg) = (pos as u128, neg as u128);
    let u_x2 = rank_sum_x2 - pos * (pos + 1);
    Ok(u_x2 as f64 / (2.0 * pos as f64 * neg as f64))
}

pub fn auroc_pixel(ls: &LabeledScores) -> Result<f64> {
    auroc(&ls.scores, &ls.labels)
}

/// `(false positive rate, per-region overlap)` points of the PRO curve,
/// starting at `(0, 0)` and stopping at the first point beyond `fpr_limit`.
pub fn pro_curve(ls: &LabeledScores, fpr_limit: f64) -> Result<Vec<(f64, f64)>> {
    if !(fpr_limit > 0.0 && fpr_limit <= 1.0) {
        return Err(Error::param(format!("fpr limit must lie in (0, 1], got {fpr_limit}")));
    }
    if ls.regions == 0 {
        return Err(Error::undefined("PRO needs at least one ground-truth region"));
    }
    let negatives = ls.len() - ls.positives();
    if negatives == 0 {
        return Err(Error::undefined("PRO needs at least one normal pixel"));
    }
    let mut sizes = vec![0usize; ls.regions as usize + 1];
    for r in &ls.region_ids {
        sizes[*r as usize] += 1;
    }
    let order = ls.descending();
    let distinct = 1 + order
        .windows(2)
        .filter(|w| ls.scores[w[0]] != ls.scores[w[1]])
        .count();
    let coarse = distinct > PRO_EXACT_SWEEP_LIMIT;
    let step = order.len().div_ceil(PRO_QUANTILE_THRESHOLDS).max(1);

    let regions = f64::from(ls.regions);
    let mut points = vec![(0.0, 0.0)];
    let mut prev = (0.0, 0.0);
    let mut fp = 0usize;
    let mut overlap_sum = 0.0;
    let mut next_emit = step;
    let mut i = 0;
    while i < order.len() {
        let score = ls.scores[order[i]];
        while i < order.len() && ls.scores[order[i]] == score {
            let k = order[i];
            match ls.region_ids[k] {
                0 => fp += 1,
                r => overlap_sum += 1.0 / sizes[r as usize] as f64,
            }
            i += 1;
        }
        let point = (fp as f64 / negatives as f64, overlap_sum / regions);
        let crossed = point.0 > fpr_limit;
        if crossed {
            if coarse && points.last() != Some(&prev) {
                points.push(prev);
            }
            points.push(point);
            break;
        }
        if !coarse || i >= next_emit || i == order.len() {
            points.push(point);
            while next_emit <= i {
                next_emit += step;
            }
        }
        prev = point;
    }
    Ok(points)
}

/// Trapezoidal area under a curve of `(x, y)` points sorted by `x`, up to
/// `limit`, interpolating linearly at the limit.
pub fn area_up_to(points: &[(f64, f64)], limit: f64) -> f64 {
    let mut area = 0.0;
    for w in points.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        if x0 >= limit {
            break;
        }
        if x1 <= limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y_lim = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            area += (limit - x0) * (y0 + y_lim) / 2.0;
            break;
        }
    }
    area
}

/// Per-region overlap integrated over `FPR in [0, fpr_limit]` and divided
/// by `fpr_limit`.
pub fn pro_score(ls: &LabeledScores, fpr_limit: f64) -> Result<f64> {
    let points = pro_curve(ls, fpr_limit)?;
    Ok(area_up_to(&points, fpr_limit) / fpr_limit)
}

/// Best F1 over all thresholds and the threshold achieving it; ties go to
/// the higher threshold.
pub fn f1_max(ls: &LabeledScores) -> Result<(f64, f64)> {
    let positives = ls.positives();
    if positives == 0 {
        return Err(Error::undefined("F1 needs at least one anomalous pixel"));
    }
    let order = ls.descending();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = (-1.0, f64::INFINITY);
    let mut i = 0;
    while i < order.len() {
        let score = ls.scores[order[i]];
        while i < order.len() && ls.scores[order[i]] == score {
            if ls.labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let fneg = positives - tp;
        let f1 = 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64;
        if f1 > best.0 {
            best = (f1, score);
        }
    }
    Ok(best)
}

/// Image-level AUROC with each image scored by the maximum of its map.
pub fn image_auroc(maps: &[AnomalyMap], labels: &[bool]) -> Result<f64> {
    if maps.len() != labels.len() {
        return Err(Error::input("one label per image is required"));
    }
    let scores: Vec<f64> = maps.iter().map(AnomalyMap::max).collect();
    auroc(&scores, labels)
}

/// Metric summary of one split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub auroc: f64,
    pub pro_03: f64,
    pub f1_max: f64,
    pub image_auroc: Option<f64>,
    pub threshold_at_f1: f64,
}

impl EvalReport {
    /// Evaluates pooled pixel scores and, when both image classes are
    /// present, the image-level AUROC of `image_maps`.
    pub fn compute(ls: &LabeledScores, image_maps: &[AnomalyMap], image_labels: &[bool]) -> Result<Self> {
        if image_maps.len() != image_labels.len() {
            return Err(Error::input("one label per image is required"));
        }
        let image_scores: Vec<f64> = image_maps.iter().map(AnomalyMap::max).collect();
        Self::from_image_scores(ls, &image_scores, image_labels)
    }

    /// As [`EvalReport::compute`], with each image already reduced to its
    /// score.
    pub fn from_image_scores(ls: &LabeledScores, image_scores: &[f64], image_labels: &[bool]) -> Result<Self> {
        let (f1, threshold) = f1_max(ls)?;
        let image = match auroc(image_scores, image_labels) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            auroc: auroc_pixel(ls)?,
            pro_03: pro_score(ls, PRO_FPR_LIMIT)?,
            f1_max: f1,
            image_auroc: image,
            threshold_at_f1: threshold,
        })
    }

    /// Macro average over classes. The image AUROC is averaged over the
    /// classes that define it; the F1 threshold is averaged as well.
    pub fn mean(reports: &[EvalReport]) -> Option<EvalReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let images: Vec<f64> = reports.iter().filter_map(|r| r.image_auroc).collect();
        Some(EvalReport {
            auroc: avg(|r| r.auroc),
            pro_03: avg(|r| r.pro_03),
            f1_max: avg(|r| r.f1_max),
            image_auroc: (!images.is_empty()).then(|| images.iter().sum::<f64>() / images.len() as f64),
            threshold_at_f1: avg(|r| r.threshold_at_f1),
        })
    }
}
