mod common;

use common::fixture;
use mcgaec::imageio::*;
use mcgaec::Error;
use proptest::prelude::*;

fn px(r: f64, g: f64, b: f64) -> Image {
    Image::new(1, 1, ColorSpace::Rgb, vec![r, g, b]).unwrap()
}

#[test]
fn decodes_committed_fixtures() {
    let white = load_image(fixture("white_2x2.png")).unwrap();
    assert_eq!((white.width(), white.height(), white.channels(), white.space()), (2, 2, 3, ColorSpace::Rgb));
    assert!(white.data().iter().all(|&v| v == 1.0));

    let black = load_image(fixture("black_1x1.jpg")).unwrap();
    assert_eq!(black.space(), ColorSpace::Rgb);
    assert!(black.data().iter().all(|&v| v == 0.0));

    let rgb = load_image(fixture("rgb_4x4.png")).unwrap();
    let expected: Vec<f64> = std::fs::read_to_string(fixture("rgb_4x4_expected.txt"))
        .unwrap()
        .split_whitespace()
        .map(|t| t.parse::<u8>().unwrap() as f64 / 255.0)
        .collect();
    assert_eq!(expected.len(), 48);
    assert_eq!(rgb.data(), &expected[..]);

    let gray = load_image(fixture("gray_4x4.png")).unwrap();
    assert_eq!(gray.space(), ColorSpace::Gray);
    let want: Vec<f64> = (0..16).map(|i| (i * 16) as f64 / 255.0).collect();
    assert_eq!(gray.data(), &want[..]);
}

#[test]
fn decode_errors() {
    assert!(matches!(load_image(fixture("corrupt.png")), Err(Error::Decode { .. })));
    assert!(matches!(load_image(fixture("missing.png")), Err(Error::FileNotFound(_))));
    assert!(matches!(load_image(fixture("tinycnn_expected.json")), Err(Error::Decode { .. })));
}

#[test]
fn png_round_trip_is_lossless_on_8bit_values() {
    let dir = tempfile::tempdir().unwrap();
    let img = Image::from_fn(5, 3, ColorSpace::Rgb, |x, y, c| ((x * 37 + y * 11 + c * 5) % 256) as f64 / 255.0);
    let p = dir.path().join("a.png");
    save_png(&img, &p).unwrap();
    assert_eq!(load_image(&p).unwrap(), img);
    let gray = Image::from_fn(4, 4, ColorSpace::Gray, |x, y, _| ((x + 4 * y) * 16) as f64 / 255.0);
    save_png(&gray, &p).unwrap();
    assert_eq!(load_image(&p).unwrap(), gray);
}

#[test]
fn bt601_and_hsv_hand_values() {
    let red = rgb_to_ycbcr(&px(1.0, 0.0, 0.0)).unwrap();
    assert!((red.get(0, 0, 0) - 0.299).abs() < 1e-12);
    assert!((red.get(0, 0, 1) - 0.331264).abs() < 1e-12);
    assert_eq!(red.get(0, 0, 2), 1.0);
    let white = rgb_to_ycbcr(&px(1.0, 1.0, 1.0)).unwrap();
    assert!(common::max_abs_diff(white.pixel(0, 0), &[1.0, 0.5, 0.5]) < 1e-12);
    let black = rgb_to_ycbcr(&px(0.0, 0.0, 0.0)).unwrap();
    assert!(common::max_abs_diff(black.pixel(0, 0), &[0.0, 0.5, 0.5]) < 1e-12);

    assert_eq!(rgb_to_hsv(&px(1.0, 0.0, 0.0)).unwrap().pixel(0, 0), &[0.0, 1.0, 1.0]);
    let h = rgb_to_hsv(&px(0.5, 0.25, 0.75)).unwrap();
    assert!((h.get(0, 0, 0) - 0.75).abs() < 1e-12);
    assert!((h.get(0, 0, 1) - 2.0 / 3.0).abs() < 1e-12);
    assert!((h.get(0, 0, 2) - 0.75).abs() < 1e-12);

    assert!((rgb_to_gray(&px(1.0, 0.0, 0.0)).unwrap().get(0, 0, 0) - 0.299).abs() < 1e-12);
    assert!((rgb_to_gray(&px(1.0, 1.0, 1.0)).unwrap().get(0, 0, 0) - 1.0).abs() < 1e-12);
}

#[test]
fn source_space_is_enforced() {
    let hsv = rgb_to_hsv(&px(0.2, 0.4, 0.6)).unwrap();
    assert!(matches!(rgb_to_ycbcr(&hsv), Err(Error::WrongColorSpace { .. })));
    assert!(matches!(rgb_to_hsv(&hsv), Err(Error::WrongColorSpace { .. })));
    assert!(matches!(rgb_to_gray(&hsv), Err(Error::WrongColorSpace { .. })));
    let ycc = rgb_to_ycbcr(&px(0.2, 0.4, 0.6)).unwrap();
    assert!(matches!(rgb_to_gray(&ycc), Err(Error::WrongColorSpace { .. })));
}

#[test]
fn resize_examples() {
    let c = Image::filled(100, 80, ColorSpace::Rgb, 0.37);
    for (w, h) in [(1, 1), (224, 224), (13, 301)] {
        let r = resize_bilinear(&c, w, h).unwrap();
        assert!(r.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
    }
    let corners = Image::new(2, 2, ColorSpace::Gray, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    assert!((resize_bilinear(&corners, 1, 1).unwrap().get(0, 0, 0) - 0.5).abs() < 1e-12);
    let mut rng = common::rng(3);
    let img = common::random_image(&mut rng, 224, 224, ColorSpace::Rgb);
    let same = resize_bilinear(&img, 224, 224).unwrap();
    assert!(common::max_abs_diff(same.data(), img.data()) < 1e-6);
    assert!(resize_bilinear(&img, 0, 4).is_err());
}

proptest! {
    #[test]
    fn achromatic_invariance(g in 0.0f64..=1.0) {
        let y = rgb_to_ycbcr(&px(g, g, g)).unwrap();
        prop_assert!((y.get(0, 0, 0) - g).abs() < 1e-9);
        prop_assert!((y.get(0, 0, 1) - 0.5).abs() < 1e-9);
        prop_assert!((y.get(0, 0, 2) - 0.5).abs() < 1e-9);
        let h = rgb_to_hsv(&px(g, g, g)).unwrap();
        prop_assert_eq!(h.get(0, 0, 0), 0.0);
        prop_assert!(h.get(0, 0, 1).abs() < 1e-9);
        prop_assert!((h.get(0, 0, 2) - g).abs() < 1e-9);
        prop_assert!((rgb_to_gray(&px(g, g, g)).unwrap().get(0, 0, 0) - g).abs() < 1e-9);
    }

    #[test]
    fn ycbcr_round_trip(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let ycc = rgb_to_ycbcr(&px(r, g, b)).unwrap();
        // Only pixels whose chroma did not clamp are in gamut for the inverse.
        prop_assume!(ycc.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let back = ycbcr_to_rgb(&ycc).unwrap();
        prop_assert!(common::max_abs_diff(back.data(), &[r, g, b]) < 1e-6);
    }

    #[test]
    fn hsv_components_in_range(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let h = rgb_to_hsv(&px(r, g, b)).unwrap();
        prop_assert!(h.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((h.get(0, 0, 2) - r.max(g).max(b)).abs() < 1e-12);
    }

    #[test]
    fn gray_is_idempotent(seed in any::<u64>(), w in 1usize..9, h in 1usize..9) {
        let mut rng = common::rng(seed);
        let img = common::random_image(&mut rng, w, h, ColorSpace::Gray);
        prop_assert_eq!(rgb_to_gray(&img).unwrap(), img);
    }

    #[test]
    fn resize_preserves_range(seed in any::<u64>(), w in 1usize..20, h in 1usize..20, ow in 1usize..40, oh in 1usize..40) {
        let mut rng = common::rng(seed);
        let img = common::random_image(&mut rng, w, h, ColorSpace::Rgb);
        let (lo, hi) = img.data().iter().fold((1.0f64, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        let out = resize_bilinear(&img, ow, oh).unwrap();
        prop_assert_eq!((out.width(), out.height(), out.space()), (ow, oh, ColorSpace::Rgb));
        prop_assert!(out.data().iter().all(|&v| v >= lo - 1e-9 && v <= hi + 1e-9));
    }
}
