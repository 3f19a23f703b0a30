use fca::config::{parse_resize, parse_text, resolve, to_entries, Entries};
use fca::Error;
use fca_core::{Comparator, Preset, ReferenceStrategy};

fn entries(pairs: &[(&str, &str)]) -> Entries {
    let mut e = Entries::default();
    for (k, v) in pairs {
        e.push(k, v);
    }
    e
}

#[test]
fn empty_entries_give_the_full_resolution_preset() {
    assert_eq!(resolve(&Entries::default()).unwrap(), Preset::FullRes.config());
}

#[test]
fn later_entries_win() {
    let e = parse_text("# file\npatch-size = 5\n\nsigma-p=2.5 # inline\npatch-size = 7\n").unwrap();
    let cfg = resolve(&e).unwrap();
    assert_eq!(cfg.patch.patch_size, 7);
    assert_eq!(cfg.patch.sigma_p, 2.5);
}

#[test]
fn flags_appended_after_the_file_override_it() {
    let mut e = parse_text("preset = prelim-256\ncomparator = sww\n").unwrap();
    e.push("comparator", "moments");
    let cfg = resolve(&e).unwrap();
    assert_eq!(cfg.comparator, Comparator::Moments);
    // the preset's median reference was swapped for the comparator's default
    assert_eq!(cfg.reference.strategy, ReferenceStrategy::GlobalMean);
    assert_eq!(cfg.patch.patch_size, 25);
}

#[test]
fn explicit_bad_pairing_is_rejected() {
    let e = entries(&[("comparator", "moments"), ("reference", "median-order")]);
    assert!(matches!(resolve(&e), Err(Error::Core(fca_core::Error::Config(_)))));
    assert_eq!(resolve(&e).unwrap_err().exit_code(), 3);
}

#[test]
fn unknown_keys_and_values_are_config_errors() {
    for bad in [
        entries(&[("patch_size", "5")]),
        entries(&[("patch-size", "five")]),
        entries(&[("comparator", "l2")]),
        entries(&[("preset", "tiny")]),
        entries(&[("allow-all-patches", "maybe")]),
    ] {
        let err = resolve(&bad).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert_eq!(err.exit_code(), 3);
    }
    assert!(matches!(parse_text("just words"), Err(Error::Config(_))));
}

#[test]
fn invalid_parameters_map_to_the_config_exit_code() {
    let err = resolve(&entries(&[("patch-size", "4")])).unwrap_err();
    assert!(matches!(err, Error::Core(fca_core::Error::InvalidParameter(_))));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn reference_counts_follow_the_strategy() {
    let knn = resolve(&entries(&[("reference", "knn"), ("knn-k", "4"), ("reference-count", "9")])).unwrap();
    assert_eq!(knn.reference.count, 4);
    let random = resolve(&entries(&[("reference", "random"), ("knn-k", "4"), ("reference-count", "9")])).unwrap();
    assert_eq!(random.reference.count, 9);
    let all = entries(&[("reference", "all")]);
    assert!(resolve(&all).is_err());
    let mut allowed = all;
    allowed.push("allow-all-patches", "true");
    assert!(resolve(&allowed).unwrap().reference.allow_all_patches);
}

#[test]
fn resize_forms() {
    assert_eq!(parse_resize("none").unwrap(), None);
    assert_eq!(parse_resize("256").unwrap(), Some((256, 256)));
    assert_eq!(parse_resize("120x80").unwrap(), Some((120, 80)));
    assert!(parse_resize("12y").is_err());
}

#[test]
fn resolved_entries_round_trip() {
    let variants = [
        vec![],
        vec![("preset", "prelim-256"), ("comparator", "histogram"), ("bins", "7")],
        vec![("preset", "lowres-320"), ("reference", "random"), ("reference-count", "3"), ("seed", "42")],
        vec![("reference", "knn"), ("knn-k", "2"), ("exclusion-radius", "4"), ("comparator", "sww")],
        vec![("extractor", "random"), ("random-channels", "16"), ("kernel-size", "3"), ("resize", "64x48")],
        vec![("features", "deep.fmap"), ("crop-fraction", "0"), ("sww-uniform", "yes")],
    ];
    for v in variants {
        let cfg = resolve(&entries(&v)).unwrap();
        let again = resolve(&to_entries(&cfg)).unwrap();
        assert_eq!(again, cfg, "{v:?}");
        let text = fca::config::to_text(&to_entries(&cfg));
        assert_eq!(resolve(&parse_text(&text).unwrap()).unwrap(), cfg);
    }
}
