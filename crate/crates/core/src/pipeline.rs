//! End-to-end localization: features, normalization, references, comparator
//! and resampling back to image resolution.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::features::{self, ExtractorKind, ExtractorSpec};
use crate::math;
use crate::references::{
    global_histogram_reference, global_mean_reference, knn_score, median_order_statistics_reference, patch_reference,
    random_patch_centers, Reference, ReferenceSpec, ReferenceStrategy,
};
use crate::statistics::{
    fca_score_multi, histogram_score_multi, moments_score_multi, sww_score_multi, HistogramReference, PatchConfig,
    SortedReference,
};
use crate::tensor::{normalize_channels, upsample_bilinear, AnomalyMap, FeatureMap, Mask, RgbImage};

pub use crate::statistics::Comparator;

pub const DEFAULT_CROP_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub extractor: ExtractorSpec,
    pub patch: PatchConfig,
    pub reference: ReferenceSpec,
    pub comparator: Comparator,
    /// Images are resized to `(height, width)` before feature extraction.
    pub resize_to: Option<(usize, usize)>,
    /// Border band removed before evaluation, as a fraction of the shorter side.
    pub crop_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Preset::FullRes.config()
    }
}

impl PipelineConfig {
    /// Checks parameters and the comparator/reference pairing.
    pub fn validate(&self) -> Result<()> {
        if !self.reference.strategy.supports(self.comparator) {
            return Err(Error::config(format!(
                "reference {} cannot be used with comparator {}",
                self.reference.strategy.name(),
                self.comparator.name()
            )));
        }
        self.reference.validate()?;
        self.patch.validate()?;
        self.extractor.validate()?;
        if !(0.0..0.5).contains(&self.crop_fraction) {
            return Err(Error::param(format!(
                "crop fraction must lie in [0, 0.5), got {}",
                self.crop_fraction
            )));
        }
        if let Some((h, w)) = self.resize_to {
            if h == 0 || w == 0 {
                return Err(Error::param("resize target must be positive"));
            }
        }
        Ok(())
    }

    /// Switches the comparator and, if the current reference cannot feed it,
    /// the reference to the comparator's global default.
    pub fn with_comparator(mut self, comparator: Comparator) -> Self {
        self.comparator = comparator;
        if !self.reference.strategy.supports(comparator) {
            self.reference.strategy = ReferenceStrategy::global_for(comparator);
        }
        self
    }
}

/// Shipped parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Classic-feature setting: 256x256 input, `T = 25`, smoothing 6.
    Prelim256,
    /// Low-resolution deep features: 320x320 input, `T = 3`.
    LowRes320,
    /// Full-resolution deep features: `T = 9`.
    FullRes,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Prelim256, Preset::LowRes320, Preset::FullRes];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Prelim256 => "prelim-256",
            Preset::LowRes320 => "lowres-320",
            Preset::FullRes => "fullres",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.to_ascii_lowercase();
        match s.as_str() {
            "fullres-fca" => Some(Preset::FullRes),
            _ => Self::ALL.into_iter().find(|p| p.name() == s),
        }
    }

    pub fn config(self) -> PipelineConfig {
        let (patch, resize_to) = match self {
            Preset::Prelim256 => (
                PatchConfig {
                    patch_size: 25,
                    sigma_w: 6.0,
                    sigma_p: 6.0,
                    sigma_s: 3.0,
                    histogram_bins: 10,
                    ..PatchConfig::default()
                },
                Some((256, 256)),
            ),
            Preset::LowRes320 => (
                PatchConfig {
                    patch_size: 3,
                    sigma_w: 3.0,
                    sigma_p: 3.0,
                    sigma_s: 1.0,
                    ..PatchConfig::default()
                },
                Some((320, 320)),
            ),
            Preset::FullRes => (
                PatchConfig {
                    patch_size: 9,
                    sigma_w: 3.0,
                    sigma_p: 3.0,
                    sigma_s: 1.0,
                    ..PatchConfig::default()
                },
                None,
            ),
        };
        PipelineConfig {
            extractor: ExtractorSpec::colors(),
            patch,
            reference: ReferenceSpec::new(ReferenceStrategy::MedianOrderStatistics),
            comparator: Comparator::Fca,
            resize_to,
            crop_fraction: DEFAULT_CROP_FRACTION,
        }
    }
}

/// Scores every pixel of `image`. The output has the dimensions of the
/// (resized) image.
pub fn localize(image: &RgbImage, cfg: &PipelineConfig) -> Result<AnomalyMap> {
    cfg.validate()?;
    if cfg.extractor.kind == ExtractorKind::External {
        return Err(Error::config(
            "external features must be loaded by the caller and passed to localize_features",
        ));
    }
    let resized;
    let image = match cfg.resize_to {
        Some((h, w)) if (h, w) != (image.height(), image.width()) => {
            resized = image.resize_bilinear(h, w)?;
            &resized
        }
        _ => image,
    };
    let fm = features::extract(image, &cfg.extractor)?;
    localize_features(&fm, cfg, image.height(), image.width())
}

/// Scores precomputed features and resamples the map to `out_h x out_w`.
pub fn localize_features(fm: &FeatureMap, cfg: &PipelineConfig, out_h: usize, out_w: usize) -> Result<AnomalyMap> {
    cfg.validate()?;
    let fm = normalize_channels(fm);
    let am = score_normalized(&fm, cfg)?;
    if (am.height(), am.width()) == (out_h, out_w) {
        Ok(am)
    } else {
        upsample_bilinear(&am, out_h, out_w)
    }
}

fn score_normalized(fm: &FeatureMap, cfg: &PipelineConfig) -> Result<AnomalyMap> {
    match cfg.reference.strategy {
        ReferenceStrategy::KNearest | ReferenceStrategy::AllPatches => {
            knn_score(fm, &cfg.patch, &cfg.reference, cfg.comparator)
        }
        _ => {
            let refs = build_references(fm, cfg)?;
            score_with_references(fm, &refs, cfg.comparator, &cfg.patch)
        }
    }
}

/// The explicit reference list for global and random-patch strategies.
/// Nearest-neighbour strategies pick references per query and have none.
pub fn build_references(fm: &FeatureMap, cfg: &PipelineConfig) -> Result<Vec<Reference>> {
    if !cfg.reference.strategy.supports(cfg.comparator) {
        return Err(Error::config(format!(
            "reference {} cannot be used with comparator {}",
            cfg.reference.strategy.name(),
            cfg.comparator.name()
        )));
    }
    let p = &cfg.patch;
    Ok(match cfg.reference.strategy {
        ReferenceStrategy::GlobalMean => {
            p.validate()?;
            alloc::vec![Reference::Mean(global_mean_reference(fm))]
        }
        ReferenceStrategy::GlobalHistogram => {
            alloc::vec![Reference::Histogram(global_histogram_reference(fm, p.histogram_bins)?)]
        }
        ReferenceStrategy::MedianOrderStatistics => {
            alloc::vec![Reference::Sorted(median_order_statistics_reference(fm, p)?)]
        }
        ReferenceStrategy::RandomPatches => random_patch_centers(fm, p, &cfg.reference)?
            .into_iter()
            .map(|(cy, cx)| patch_reference(fm, cy, cx, p, cfg.comparator))
            .collect::<Result<Vec<_>>>()?,
        ReferenceStrategy::KNearest | ReferenceStrategy::AllPatches => {
            return Err(Error::config(format!(
                "the {} strategy selects references per patch and has no fixed list",
                cfg.reference.strategy.name()
            )))
        }
    })
}

/// Sum of comparator scores over `refs`, on features used as given (no
/// normalization, no resampling).
pub fn score_with_references(
    fm: &FeatureMap,
    refs: &[Reference],
    comparator: Comparator,
    cfg: &PatchConfig,
) -> Result<AnomalyMap> {
    if refs.is_empty() {
        return Err(Error::param("at least one reference is required"));
    }
    let mismatch = || {
        Error::config(format!(
            "reference kind does not match comparator {}",
            comparator.name()
        ))
    };
    match comparator {
        Comparator::Moments => {
            let means = refs
                .iter()
                .map(|r| match r {
                    Reference::Mean(m) => Ok(m.clone()),
                    _ => Err(mismatch()),
                })
                .collect::<Result<Vec<_>>>()?;
            moments_score_multi(fm, &means, cfg)
        }
        Comparator::Histogram => {
            let hists = refs
                .iter()
                .map(|r| match r {
                    Reference::Histogram(h) => Ok(h.clone()),
                    _ => Err(mismatch()),
                })
                .collect::<Result<Vec<HistogramReference>>>()?;
            histogram_score_multi(fm, &hists, cfg)
        }
        Comparator::Sww | Comparator::Fca => {
            let sorted = refs
                .iter()
                .map(|r| match r {
                    Reference::Sorted(s) => Ok(s.clone()),
                    _ => Err(mismatch()),
                })
                .collect::<Result<Vec<SortedReference>>>()?;
            if comparator == Comparator::Sww {
                sww_score_multi(fm, &sorted, cfg)
            } else {
                fca_score_multi(fm, &sorted, cfg)
            }
        }
    }
}

/// Width of the border band removed by [`center_crop_masks`].
pub fn crop_band(height: usize, width: usize, crop_fraction: f64) -> Result<usize> {
    if !(0.0..0.5).contains(&crop_fraction) {
        return Err(Error::param(format!(
            "crop fraction must lie in [0, 0.5), got {crop_fraction}"
        )));
    }
    Ok(math::floor(crop_fraction * height.min(width) as f64) as usize)
}

/// Removes a border band of `floor(crop_fraction * min(H, W))` pixels from
/// both the score map and the ground truth.
pub fn center_crop_masks(am: &AnomalyMap, gt: &Mask, crop_fraction: f64) -> Result<(AnomalyMap, Mask)> {
    if (am.height(), am.width()) != (gt.height(), gt.width()) {
        return Err(Error::input(format!(
            "score map {}x{} and mask {}x{} differ in size",
            am.height(),
            am.width(),
            gt.height(),
            gt.width()
        )));
    }
    let band = crop_band(am.height(), am.width(), crop_fraction)?;
    if 2 * band >= am.height() || 2 * band >= am.width() {
        return Err(Error::param(format!(
            "crop band {band} leaves nothing of a {}x{} map",
            am.height(),
            am.width()
        )));
    }
    let (h, w) = (am.height() - 2 * band, am.width() - 2 * band);
    Ok((am.crop(band, band, h, w)?, gt.crop(band, band, h, w)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_their_settings() {
        let p = Preset::Prelim256.config();
        assert_eq!(p.resize_to, Some((256, 256)));
        assert_eq!(p.patch.patch_size, 25);
        assert_eq!((p.patch.sigma_w, p.patch.sigma_p, p.patch.sigma_s), (6.0, 6.0, 3.0));
        assert_eq!(p.patch.histogram_bins, 10);
        let l = Preset::LowRes320.config();
        assert_eq!((l.resize_to, l.patch.patch_size), (Some((320, 320)), 3));
        let f = Preset::FullRes.config();
        assert_eq!((f.patch.patch_size, f.patch.sigma_p, f.patch.sigma_s), (9, 3.0, 1.0));
        assert_eq!(Preset::parse("fullres-fca"), Some(Preset::FullRes));
    }

    #[test]
    fn incompatible_pairing_is_a_config_error() {
        let mut cfg = PipelineConfig::default();
        cfg.comparator = Comparator::Moments;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let img = RgbImage::from_fn(16, 16, |_, _| [0.5; 3]).unwrap();
        assert!(matches!(localize(&img, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn crop_arithmetic() {
        let am = AnomalyMap::new(100, 100, alloc::vec![0.0; 10_000]).unwrap();
        let gt = Mask::zeros(100, 100);
        let (a, m) = center_crop_masks(&am, &gt, 0.1).unwrap();
        assert_eq!((a.height(), a.width(), m.height(), m.width()), (80, 80, 80, 80));
        let (a, _) = center_crop_masks(&am, &gt, 0.0).unwrap();
        assert_eq!(a, am);
        let tiny = AnomalyMap::new(2, 2, alloc::vec![0.0; 4]).unwrap();
        assert!(center_crop_masks(&tiny, &Mask::zeros(2, 2), 0.49).is_ok());
        assert!(matches!(center_crop_masks(&tiny, &Mask::zeros(2, 2), 0.5), Err(Error::InvalidParameter(_))));
    }
}
