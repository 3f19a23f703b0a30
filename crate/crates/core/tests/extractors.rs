mod common;

use common::rng;
use fca_core::features::{self, steering_angle, ExtractorSpec};
use fca_core::RgbImage;
use rand::Rng;

fn random_image(h: usize, w: usize, seed: u64) -> RgbImage {
    let mut r = rng(seed);
    RgbImage::from_fn(h, w, |_, _| [r.random(), r.random(), r.random()]).unwrap()
}

fn crop_image(img: &RgbImage, top: usize, left: usize, h: usize, w: usize) -> RgbImage {
    RgbImage::from_fn(h, w, |y, x| img.rgb(y + top, x + left)).unwrap()
}

fn specs() -> Vec<ExtractorSpec> {
    vec![
        ExtractorSpec::colors(),
        ExtractorSpec::random_projections(8, 5, 3),
        ExtractorSpec::steerable(4),
        ExtractorSpec::laws_tem(),
    ]
}

#[test]
fn shapes_and_channel_counts() {
    let img = random_image(23, 31, 1);
    for (spec, channels) in specs().into_iter().zip([3, 8, 8, 25]) {
        let fm = features::extract(&img, &spec).unwrap();
        assert_eq!((fm.height(), fm.width(), fm.channels()), (23, 31, channels));
        assert_eq!(spec.output_channels(), Some(channels));
    }
    assert_eq!(ExtractorSpec::steerable(16).output_channels(), Some(32));
    assert_eq!(ExtractorSpec::random_projections(128, 5, 0).output_channels(), Some(128));
}

#[test]
fn extractors_are_deterministic() {
    let img = random_image(20, 20, 2);
    for spec in specs() {
        let a = features::extract(&img, &spec).unwrap();
        let b = features::extract(&img, &spec).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn extractors_commute_with_translation_on_the_interior() {
    let big = random_image(48, 48, 3);
    let (dy, dx) = (3, 5);
    let small = crop_image(&big, dy, dx, 36, 36);
    // margin covers the widest support: Laws 5x5 kernels plus 15x15 pooling
    let margin = 10;
    for spec in specs() {
        let a = features::extract(&big, &spec).unwrap();
        let b = features::extract(&small, &spec).unwrap();
        for y in margin..36 - margin {
            for x in margin..36 - margin {
                for c in 0..a.channels() {
                    let (u, v) = (a.at(y + dy, x + dx, c), b.at(y, x, c));
                    assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0), "{:?} c={c}", spec.kind);
                }
            }
        }
    }
}

fn argmax_orientation(k: usize, f: impl Fn(usize) -> f64) -> usize {
    (0..k).max_by(|&a, &b| f(a).total_cmp(&f(b))).unwrap()
}

#[test]
fn steerable_edge_selects_the_aligned_orientation() {
    let k = 8;
    // vertical step edge between columns 15 and 16
    let img = RgbImage::from_fn(32, 32, |_, x| if x < 16 { [0.1; 3] } else { [0.9; 3] }).unwrap();
    let fm = features::extract_steerable(&img, k).unwrap();
    assert_eq!(steering_angle(0, k), 0.0);
    let energy = |y: usize, x: usize, o: usize| fm.at(y, x, 2 * o).hypot(fm.at(y, x, 2 * o + 1));
    for y in 8..24 {
        for x in 12..20 {
            assert_eq!(argmax_orientation(k, |o| energy(y, x, o)), 0, "energy at ({y}, {x})");
        }
        // on the edge itself each filter of the pair peaks at orientation 0
        for x in [15, 16] {
            assert_eq!(argmax_orientation(k, |o| fm.at(y, x, 2 * o).abs()), 0);
            assert_eq!(argmax_orientation(k, |o| fm.at(y, x, 2 * o + 1).abs()), 0);
        }
    }
}

#[test]
fn steerable_rotation_permutes_orientations() {
    let k = 8;
    let n = 33;
    let img = random_image(n, n, 4);
    // rotate 90 degrees counter-clockwise: out(y, x) = in(x, n - 1 - y)
    let rotated = RgbImage::from_fn(n, n, |y, x| img.rgb(x, n - 1 - y)).unwrap();
    let a = features::extract_steerable(&img, k).unwrap();
    let b = features::extract_steerable(&rotated, k).unwrap();
    for y in 6..n - 6 {
        for x in 6..n - 6 {
            let (sy, sx) = (x, n - 1 - y);
            for o in 0..k {
                let p = (o + k / 2) % k;
                for parity in 0..2 {
                    let u = a.at(sy, sx, 2 * o + parity).abs();
                    let v = b.at(y, x, 2 * p + parity).abs();
                    assert!((u - v).abs() < 1e-9, "orientation {o} -> {p}, parity {parity}");
                }
            }
        }
    }
}

#[test]
fn laws_energy_is_non_negative_and_l5l5_sums_to_256() {
    let img = random_image(30, 30, 5);
    let fm = features::extract_laws_tem(&img).unwrap();
    assert!(fm.data().iter().all(|v| *v >= 0.0));
    let v = 0.25;
    let flat = RgbImage::from_fn(20, 20, |_, _| [v; 3]).unwrap();
    let fm = features::extract_laws_tem(&flat).unwrap();
    for y in 0..20 {
        for x in 0..20 {
            assert!((fm.at(y, x, 0) - 256.0 * v).abs() < 1e-9);
            for c in 1..25 {
                assert!(fm.at(y, x, c).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn colors_keep_intensities() {
    let img = RgbImage::from_u8(1, 2, &[255, 0, 0, 128, 128, 128]).unwrap();
    let fm = features::extract_colors(&img);
    assert_eq!(fm.pixel(0, 0), &[1.0, 0.0, 0.0]);
    assert!((fm.at(0, 1, 2) - 128.0 / 255.0).abs() < 1e-15);
}
