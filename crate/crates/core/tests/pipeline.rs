mod common;

use fca_core::metrics::{auroc, LabeledScores};
use fca_core::pipeline::{self, build_references, localize, localize_features, score_with_references};
use fca_core::references::Reference;
use fca_core::synthetic::{mean_shift_fixture, noise_features};
use fca_core::{
    Comparator, Error, ExtractorSpec, FeatureMap, PatchConfig, PipelineConfig, ReferenceSpec, ReferenceStrategy,
};

fn small_config(comparator: Comparator) -> PipelineConfig {
    let mut cfg = PipelineConfig::default().with_comparator(comparator);
    cfg.patch = PatchConfig::with_patch_size(5);
    cfg
}

#[test]
fn constant_features_score_zero_everywhere() {
    let fm = FeatureMap::from_fn(20, 18, 3, |_, _, c| 0.25 + 0.2 * c as f64).unwrap();
    for comparator in Comparator::ALL {
        for strategy in [ReferenceStrategy::global_for(comparator), ReferenceStrategy::RandomPatches] {
            let mut cfg = small_config(comparator);
            cfg.reference = ReferenceSpec { count: 3, ..ReferenceSpec::new(strategy) };
            let refs = build_references(&fm, &cfg).unwrap();
            let am = score_with_references(&fm, &refs, comparator, &cfg.patch).unwrap();
            assert!(am.scores().iter().all(|s| s.abs() < 1e-12), "{comparator:?} {strategy:?}");
        }
    }
}

#[test]
fn mean_shift_square_is_found_by_every_comparator() {
    let (img, gt) = mean_shift_fixture(0).unwrap();
    for comparator in Comparator::ALL {
        let am = localize(&img, &PipelineConfig::default().with_comparator(comparator)).unwrap();
        let a = auroc(am.scores(), gt.data()).unwrap();
        assert!(a >= 0.95, "{comparator:?}: {a}");
        let (y, x) = am.argmax();
        assert!(gt.at(y, x), "{comparator:?} peak at ({y}, {x})");
    }
}

#[test]
fn duplicated_references_double_the_score() {
    let fm = noise_features(22, 21, 2, 7).unwrap();
    for comparator in Comparator::ALL {
        let mut cfg = small_config(comparator);
        cfg.reference = ReferenceSpec::random(2, 3);
        let refs = build_references(&fm, &cfg).unwrap();
        let doubled: Vec<Reference> = refs.iter().chain(refs.iter()).cloned().collect();
        let once = score_with_references(&fm, &refs, comparator, &cfg.patch).unwrap();
        let twice = score_with_references(&fm, &doubled, comparator, &cfg.patch).unwrap();
        for (a, b) in once.scores().iter().zip(twice.scores()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0), "{comparator:?}");
        }
    }
}

#[test]
fn scores_are_additive_over_reference_sets() {
    let fm = noise_features(19, 24, 3, 8).unwrap();
    for comparator in Comparator::ALL {
        let mut cfg = small_config(comparator);
        cfg.reference = ReferenceSpec::random(5, 11);
        let refs = build_references(&fm, &cfg).unwrap();
        let (r1, r2) = refs.split_at(2);
        let whole = score_with_references(&fm, &refs, comparator, &cfg.patch).unwrap();
        let parts = score_with_references(&fm, r1, comparator, &cfg.patch)
            .unwrap()
            .add(&score_with_references(&fm, r2, comparator, &cfg.patch).unwrap())
            .unwrap();
        for (a, b) in whole.scores().iter().zip(parts.scores()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{comparator:?}");
        }
    }
}

#[test]
fn results_do_not_depend_on_the_thread_count() {
    let fm = noise_features(70, 66, 4, 9).unwrap();
    let run = |threads: usize, cfg: &PipelineConfig| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| localize_features(&fm, cfg, 70, 66).unwrap())
    };
    let mut configs: Vec<PipelineConfig> = Comparator::ALL.into_iter().map(small_config).collect();
    let mut knn = small_config(Comparator::Fca);
    knn.reference = ReferenceSpec::knn(3);
    configs.push(knn);
    for cfg in &configs {
        let reference = run(1, cfg);
        for threads in [2, 4] {
            assert_eq!(reference, run(threads, cfg), "{:?} with {threads} threads", cfg.comparator);
        }
    }
}

#[test]
fn external_features_are_upsampled_to_the_requested_size() {
    let fm = noise_features(16, 20, 6, 10).unwrap();
    let mut cfg = small_config(Comparator::Fca);
    cfg.extractor = ExtractorSpec::external("features.fmap");
    let am = localize_features(&fm, &cfg, 64, 80).unwrap();
    assert_eq!((am.height(), am.width()), (64, 80));
    let same = localize_features(&fm, &cfg, 16, 20).unwrap();
    assert_eq!((same.height(), same.width()), (16, 20));
    let img = fca_core::RgbImage::from_fn(16, 20, |_, _| [0.5; 3]).unwrap();
    assert!(matches!(localize(&img, &cfg), Err(Error::Config(_))));
}

#[test]
fn configuration_errors_surface_before_any_work() {
    // a map far too small for the patch would be an input error if scoring started
    let fm = noise_features(2, 2, 1, 0).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.comparator = Comparator::Moments;
    assert!(matches!(localize_features(&fm, &cfg, 2, 2), Err(Error::Config(_))));

    let mut cfg = PipelineConfig::default();
    cfg.reference = ReferenceSpec::new(ReferenceStrategy::AllPatches);
    assert!(matches!(localize_features(&fm, &cfg, 2, 2), Err(Error::Config(_))));

    let mut cfg = PipelineConfig::default();
    cfg.patch.patch_size = 4;
    assert!(matches!(localize_features(&fm, &cfg, 2, 2), Err(Error::InvalidParameter(_))));

    assert!(matches!(
        localize_features(&fm, &PipelineConfig::default(), 2, 2),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn cropping_before_evaluation_drops_the_border_band() {
    let (img, gt) = mean_shift_fixture(1).unwrap();
    let am = localize(&img, &PipelineConfig::default()).unwrap();
    let (cam, cgt) = pipeline::center_crop_masks(&am, &gt, 0.1).unwrap();
    assert_eq!((cam.height(), cam.width()), (104, 104));
    assert_eq!(cgt.count(), gt.count());
    let ls = LabeledScores::from_maps([(&cam, &cgt)]).unwrap();
    assert_eq!(ls.len(), 104 * 104);
}
