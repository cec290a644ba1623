use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::jpeg::{compress, decompress_real, quality_to_qtable};
use crate::rng;
use crate::synth::{texture, TextureParams};

fn random_image(size: usize, seed: u64) -> RealImage {
    let mut r = rng::stream(seed, 3);
    RealImage::new(size, size, (0..size * size).map(|_| r.random_range(0.0..255.0f32).round()).collect()).unwrap()
}

fn small_bank() -> GaborBank {
    GaborBank::new(&[0.75, 1.25], 4).unwrap()
}

fn cfg() -> GfrConfig {
    GfrConfig { q: 2.0, truncation: 4 }
}

fn rotate_180(img: &RealImage) -> RealImage {
    RealImage::new(img.width(), img.height(), img.values().iter().rev().copied().collect()).unwrap()
}

#[test]
fn kernels_are_zero_mean() {
    let bank = GaborBank::default();
    assert_eq!(bank.len(), 64);
    for k in bank.kernels() {
        assert!(k.iter().sum::<f64>().abs() < 1e-10);
        assert!(k.iter().any(|v| v.abs() > 1e-3));
    }
}

#[test]
fn opposite_orientations_coincide() {
    for &sigma in &DEFAULT_SCALES {
        for o in 0..8 {
            let theta = o as f64 * 0.3;
            let a = gabor_kernel(sigma, theta);
            let b = gabor_kernel(sigma, theta + std::f64::consts::PI);
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }
}

#[test]
fn kernels_are_point_symmetric() {
    for k in GaborBank::default().kernels() {
        for i in 0..64 {
            assert!((k[i] - k[63 - i]).abs() < 1e-12);
        }
    }
}

#[test]
fn bank_rejects_bad_config() {
    assert!(GaborBank::new(&DEFAULT_SCALES, 0).is_err());
    assert!(GaborBank::new(&[], 4).is_err());
    assert!(GaborBank::new(&[-1.0], 4).is_err());
}

#[test]
fn default_dimension() {
    let cfg = GfrConfig { q: 1.0, truncation: DEFAULT_TRUNCATION };
    assert_eq!(feature_dim(&GaborBank::default(), &cfg), 14_400);
    let f = extract(&random_image(16, 1), &GaborBank::default(), &cfg).unwrap();
    assert_eq!(f.dim(), 14_400);
}

#[test]
fn twenty_five_phase_classes() {
    let mut seen = std::collections::BTreeSet::new();
    for a in 0..8 {
        for b in 0..8 {
            let c = phase_class(a, b);
            assert_eq!(c, phase_class((8 - a) % 8, b));
            assert_eq!(c, phase_class(a, (8 - b) % 8));
            seen.insert(c);
        }
    }
    assert_eq!(seen.len(), PHASE_CLASSES);
    assert_eq!(*seen.last().unwrap(), PHASE_CLASSES - 1);
}

#[test]
fn constant_image_has_all_mass_at_zero() {
    let img = RealImage::new(24, 16, vec![117.0; 24 * 16]).unwrap();
    let cfg = cfg();
    let f = extract(&img, &small_bank(), &cfg).unwrap();
    for hist in f.values.chunks(cfg.bins()) {
        for (bin, &v) in hist.iter().enumerate() {
            assert_eq!(v, if bin == cfg.truncation as usize { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn class_mass_equals_sample_count() {
    let img = random_image(32, 4);
    let cfg = cfg();
    let (hist, counts) = histograms(&img, &small_bank(), &cfg, None).unwrap();
    assert_eq!(counts.iter().sum::<usize>(), 25 * 25);
    for (c, chunk) in hist.chunks(cfg.bins()).enumerate() {
        assert!((chunk.iter().sum::<f64>() - counts[c % PHASE_CLASSES] as f64).abs() < 1e-9);
    }
}

#[test]
fn rejects_partial_blocks() {
    let img = RealImage::new(12, 16, vec![0.0; 12 * 16]).unwrap();
    assert!(extract(&img, &small_bank(), &cfg()).is_err());
    assert!(extract(&random_image(16, 0), &small_bank(), &GfrConfig { q: 0.0, truncation: 4 }).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn half_turn_invariance(seed in any::<u64>(), blocks in 2usize..5) {
        let img = random_image(8 * blocks, seed);
        let bank = small_bank();
        prop_assert_eq!(extract(&img, &bank, &cfg()).unwrap(), extract(&rotate_180(&img), &bank, &cfg()).unwrap());
    }

    #[test]
    fn constant_offset_invariance(seed in any::<u64>(), offset in -40i32..40) {
        let img = random_image(24, seed);
        let shifted = img.map(|v| v + offset as f32);
        let bank = small_bank();
        prop_assert_eq!(extract(&img, &bank, &cfg()).unwrap(), extract(&shifted, &bank, &cfg()).unwrap());
    }

    #[test]
    fn dimension_formula(scales in 1usize..4, orient in 1usize..6, t in 0u32..6) {
        let bank = GaborBank::new(&DEFAULT_SCALES[..scales], orient).unwrap();
        let cfg = GfrConfig { q: 1.5, truncation: t };
        let f = extract(&random_image(16, 9), &bank, &cfg).unwrap();
        prop_assert_eq!(f.dim(), scales * orient * 25 * (2 * t as usize + 1));
        prop_assert_eq!(f.dim(), feature_dim(&bank, &cfg));
    }
}

fn coded_texture(size: usize, seed: u64) -> (RealImage, QuantTable) {
    let qt = quality_to_qtable(75).unwrap();
    let ci = compress(&texture(&TextureParams::default(), size, seed), &qt).unwrap();
    (decompress_real(&ci), qt)
}

#[test]
fn zero_change_map_gives_zero_features() {
    let (img, qt) = coded_texture(32, 1);
    let f = extract_sca(&img, &small_bank(), &cfg(), &vec![0.0; 32 * 32], &qt).unwrap();
    assert!(f.values.iter().all(|&v| v == 0.0));
}

#[test]
fn uniform_change_map_scales_plain_features() {
    let (img, qt) = coded_texture(32, 2);
    let plain = extract(&img, &small_bank(), &cfg()).unwrap();
    for c in [0.05, 0.3, 1.0] {
        let f = extract_sca(&img, &small_bank(), &cfg(), &vec![c; 32 * 32], &qt).unwrap();
        for (a, b) in f.values.iter().zip(&plain.values) {
            assert!((a - c * b).abs() < 1e-12, "{a} vs {c}·{b}");
        }
    }
}

#[test]
fn change_map_contract() {
    let (img, qt) = coded_texture(32, 3);
    let bank = small_bank();
    assert!(matches!(extract_sca(&img, &bank, &cfg(), &vec![0.1; 100], &qt), Err(Error::Contract(_))));
    assert!(extract_sca(&img, &bank, &cfg(), &vec![1.5; 32 * 32], &qt).is_err());
}

#[test]
fn change_map_stays_inside_blocks() {
    let qt = quality_to_qtable(75).unwrap();
    let mut probs = vec![0.0; 16 * 16];
    probs[5] = 1.0;
    let map = pixel_change_map(&probs, 16, 16, &qt).unwrap();
    for y in 0..16 {
        for x in 0..16 {
            let inside = y < 8 && x < 8;
            assert_eq!(map[y * 16 + x] > 0.0, inside, "({y}, {x})");
        }
    }
}

#[test]
fn simulator_map_marks_nonzero_ac() {
    let qt = quality_to_qtable(75).unwrap();
    let ci = compress(&texture(&TextureParams::default(), 16, 5), &qt).unwrap();
    let map = simulator_change_map(&ci, 0.1);
    for (i, (&c, &p)) in ci.coeffs().iter().zip(&map).enumerate() {
        let expected = if i % 64 != 0 && c != 0 { 0.1 } else { 0.0 };
        assert_eq!(p, expected);
    }
}

#[test]
fn feature_file_round_trip() {
    let m = FeatureMatrix::from_rows(&[vec![1.0, -2.5, 3.0], vec![0.0, 7.0, f32::MIN_POSITIVE]], 0xABCD).unwrap();
    let back = FeatureMatrix::decode(&m.encode()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.rows(), 2);
    assert_eq!(back.row(1), &[0.0, 7.0, f32::MIN_POSITIVE]);
    let bytes = m.encode();
    assert!(FeatureMatrix::decode(&bytes[..bytes.len() - 2]).is_err());
    assert!(FeatureMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]], 0).is_err());

    let dir = tempfile::tempdir().unwrap();
    m.write(dir.path().join("f.stgf")).unwrap();
    assert_eq!(FeatureMatrix::read(dir.path().join("f.stgf")).unwrap(), m);
}

#[test]
fn label_files() {
    assert_eq!(parse_labels("0\n1\n\n1\n").unwrap(), [0, 1, 1]);
    assert_eq!(parse_labels(&labels_to_text(&[1, 0, 0])).unwrap(), [1, 0, 0]);
    match parse_labels("0\n2\n") {
        Err(Error::Parse { offset, .. }) => assert_eq!(offset, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn config_hash_tracks_settings() {
    let bank = GaborBank::default();
    let base = GfrConfig { q: 1.0, truncation: 4 };
    let h = config_hash(&bank, &base, false);
    assert_eq!(h, config_hash(&bank, &base, false));
    assert_ne!(h, config_hash(&bank, &base, true));
    assert_ne!(h, config_hash(&bank, &GfrConfig { q: 1.5, ..base }, false));
    assert_ne!(h, config_hash(&small_bank(), &base, false));
}
