use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::fld::BaseLearner;

fn small_cfg() -> FusionConfig {
    FusionConfig { ensemble: EnsembleConfig { learners: 5, d_sub: Some(16), ..EnsembleConfig::default() }, ..FusionConfig::default() }
}

/// Class-shifted Gaussian features: `shift` on every coordinate.
fn table(rows: usize, dim: usize, shift: f64, seed: u64) -> (FeatureMatrix, Vec<usize>) {
    let mut r = rng::stream(seed, 5);
    let labels: Vec<usize> = (0..rows).map(|i| i % 2).collect();
    let data = labels
        .iter()
        .flat_map(|&l| {
            let m = if l == 1 { shift } else { -shift };
            (0..dim).map(|_| (m + r.sample::<f64, _>(StandardNormal)) as f32).collect::<Vec<_>>()
        })
        .collect();
    (FeatureMatrix::new(dim, 0, data).unwrap(), labels)
}

#[test]
fn nine_models_make_1440_features() {
    let cfg = FusionConfig::default();
    let per_model: Vec<Vec<f32>> = (0..9).map(|j| vec![j as f32; FEATURE_DIM]).collect();
    let joined = concat_cnn_features(&per_model, &cfg).unwrap();
    assert_eq!(joined.len(), 1440);
    for j in 0..9 {
        assert_eq!(&joined[160 * j..160 * (j + 1)], per_model[j].as_slice());
    }
    let mut permuted = per_model.clone();
    permuted.swap(2, 7);
    let other = concat_cnn_features(&permuted, &cfg).unwrap();
    assert_eq!(&other[160 * 2..160 * 3], per_model[7].as_slice());
    assert_eq!(&other[160 * 7..160 * 8], per_model[2].as_slice());

    assert!(matches!(concat_cnn_features(&per_model[..8], &cfg), Err(Error::Contract(_))));
    let mut short = per_model.clone();
    short[4].pop();
    assert!(matches!(concat_cnn_features(&short, &cfg), Err(Error::Contract(_))));
}

#[test]
fn matrices_concatenate_row_by_row() {
    let cfg = FusionConfig { n_cnn_models: 2, ..small_cfg() };
    let a = FeatureMatrix::new(FEATURE_DIM, 1, (0..2 * FEATURE_DIM).map(|v| v as f32).collect()).unwrap();
    let b = FeatureMatrix::new(FEATURE_DIM, 2, (0..2 * FEATURE_DIM).map(|v| -(v as f32)).collect()).unwrap();
    let m = concat_feature_matrices(&[a.clone(), b.clone()], &cfg).unwrap();
    assert_eq!((m.rows(), m.dim), (2, 320));
    assert_eq!(&m.row(1)[..160], a.row(1));
    assert_eq!(&m.row(1)[160..], b.row(1));
    let c = FeatureMatrix::new(FEATURE_DIM, 0, vec![0.0; FEATURE_DIM]).unwrap();
    assert!(concat_feature_matrices(&[a, c], &cfg).is_err());
}

#[test]
fn separable_features_fuse_without_error() {
    let cfg = small_cfg();
    let (cnn, labels) = table(60, 1440, 2.0, 1);
    let (classical, _) = table(60, 40, 2.0, 2);
    let model = train_fusion(&cnn, &classical, &labels, &cfg, 9).unwrap();
    let preds = model.predict_all(&cnn, &classical).unwrap();
    for (p, &l) in preds.iter().zip(&labels) {
        assert_eq!(p.probabilities.len(), 7);
        assert_eq!(p.stego, l == 1);
    }
}

#[test]
fn forced_equal_seeds_give_equal_classifiers() {
    let cfg = small_cfg();
    let (cnn, labels) = table(30, 1440, 0.5, 3);
    let (classical, _) = table(30, 20, 0.5, 4);
    let m = train_fusion_seeded(&cnn, &classical, &labels, &cfg, &[7; 7]).unwrap();
    assert!(m.cnn.iter().all(|c| c == &m.cnn[0]));
    let d = train_fusion(&cnn, &classical, &labels, &cfg, 7).unwrap();
    assert_ne!(d.cnn[0], d.cnn[1]);
    assert_eq!(d, train_fusion(&cnn, &classical, &labels, &cfg, 7).unwrap());
}

#[test]
fn misaligned_inputs_are_rejected() {
    let cfg = small_cfg();
    let (cnn, labels) = table(30, 1440, 0.5, 3);
    let (classical, _) = table(28, 20, 0.5, 4);
    assert!(matches!(train_fusion(&cnn, &classical, &labels, &cfg, 0), Err(Error::Contract(_))));
    let (narrow, _) = table(30, 160, 0.5, 5);
    let (classical, _) = table(30, 20, 0.5, 4);
    assert!(matches!(train_fusion(&narrow, &classical, &labels, &cfg, 0), Err(Error::Contract(_))));
    let model = train_fusion(&cnn, &classical, &labels, &cfg, 0).unwrap();
    assert!(model.predict(&[0.0; 10], classical.row(0)).is_err());
}

/// Learners with thresholds `ts` on feature 0.
fn voter(dim: usize, ts: &[f64]) -> EnsembleModel {
    EnsembleModel {
        dim,
        d_sub: 1,
        lambda_scale: 0.0,
        learners: ts.iter().map(|&t| BaseLearner { indices: vec![0], weights: vec![1.0], threshold: t, lambda: 0.0 }).collect(),
    }
}

fn fixed_model(cnn: Vec<EnsembleModel>, classical: EnsembleModel) -> FusionModel {
    FusionModel { config: FusionConfig { n_cnn_models: 1, ..small_cfg() }, cnn, classical }
}

#[test]
fn tie_goes_to_cover() {
    let half = voter(1, &[-1.0, 1.0]);
    let m = fixed_model(vec![half.clone(); 6], voter(1, &[-1.0, 1.0]));
    let p = m.predict(&[0.0], &[0.0]).unwrap();
    assert_eq!(p.probabilities, [0.5; 7]);
    assert_eq!(p.fused, 0.5);
    assert!(!p.stego);
}

#[test]
fn six_of_seven() {
    let m = fixed_model(vec![voter(1, &[-1.0]); 6], voter(1, &[1.0]));
    let p = m.predict(&[0.0], &[0.0]).unwrap();
    assert_eq!(p.probabilities, [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
    assert!((p.fused - 6.0 / 7.0).abs() < 1e-15);
    assert!(p.stego);
}

#[test]
fn classical_branch_composes_with_cnn_only_mean() {
    let cfg = small_cfg();
    let (cnn, labels) = table(40, 1440, 0.3, 6);
    let (classical, _) = table(40, 30, 0.3, 7);
    let m = train_fusion(&cnn, &classical, &labels, &cfg, 1).unwrap();
    for i in 0..cnn.rows() {
        let p = m.predict(cnn.row(i), classical.row(i)).unwrap();
        let cnn_only = fuse(&p.probabilities[..6]);
        let direct: Vec<f64> = m.cnn.iter().map(|c| c.predict_proba(cnn.row(i)).unwrap()).collect();
        assert_eq!(cnn_only, fuse(&direct));
        assert!((7.0 * p.fused - (6.0 * cnn_only + p.probabilities[6])).abs() < 1e-12);
    }
}

#[test]
fn model_file_round_trip() {
    let cfg = small_cfg();
    let (cnn, labels) = table(20, 1440, 0.5, 8);
    let (classical, _) = table(20, 18, 0.5, 9);
    let m = train_fusion(&cnn, &classical, &labels, &cfg, 3).unwrap();
    let bytes = m.encode();
    assert_eq!(FusionModel::decode(&bytes).unwrap(), m);
    assert!(FusionModel::decode(&bytes[..bytes.len() - 1]).is_err());
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path().join("f.stgu")).unwrap();
    assert_eq!(FusionModel::load(dir.path().join("f.stgu")).unwrap(), m);
}

#[test]
fn csv_layout() {
    let m = fixed_model(vec![voter(1, &[-1.0]); 6], voter(1, &[1.0]));
    let preds = vec![m.predict(&[0.0], &[0.0]).unwrap(), m.predict(&[-5.0], &[-5.0]).unwrap()];
    let csv = predictions_csv(&preds);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "sample,P0,P1,P2,P3,P4,P5,P6,fused,label");
    assert!(lines[1].starts_with("0,1,1,1,1,1,1,0,0.857") && lines[1].ends_with(",1"));
    assert_eq!(lines[2], "1,0,0,0,0,0,0,0,0,0");
}

proptest! {
    #[test]
    fn fused_probability_is_an_order_free_mean(mut p in prop::collection::vec(0.0f64..=1.0, 7), rot in 0usize..7) {
        let f = fuse(&p);
        prop_assert!((0.0..=1.0).contains(&f));
        p.rotate_left(rot);
        prop_assert!((fuse(&p) - f).abs() < 1e-15);
    }
}
