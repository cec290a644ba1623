use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random_batch(rng: &mut impl Rng, n: usize, size: usize) -> Tensor4 {
    Tensor4::from_fn(Shape4::new(n, 1, size, size), |_, _, _, _| rng.random_range(0.0..255.0))
}

/// Per-layer count written out from the architecture table: conv weights,
/// 3×3 biases, batch-norm gamma and beta.
fn hand_count() -> usize {
    let conv3 = |i: usize, o: usize| i * o * 9 + o + 2 * o;
    let conv1 = |i: usize, o: usize| i * o + 2 * o;
    let dct = 16 * 4 * 4;
    let g3 = conv3(16, 32) + conv3(32, 64);
    let block = |c: usize| conv1(c, 96) + conv3(96, 32) + conv1(c + 32, 96) + conv3(96, 32);
    let transition = |c: usize| conv1(c, 128) + conv3(128, 96);
    let g4 = block(64) + transition(128);
    let g5_to_7 = 3 * (block(96) + transition(160));
    let g8 = block(96);
    let fc = 160 * 2 + 2;
    dct + g3 + g4 + g5_to_7 + g8 + fc
}

#[test]
fn table_one_output_sizes() {
    let g = build_proposed(256, 256).unwrap();
    let sizes: Vec<usize> = g.group_output_shapes(1).unwrap().iter().map(|s| s.h).collect();
    assert_eq!(sizes, [256, 256, 128, 64, 32, 16, 8, 1, 1]);
    let widths: Vec<usize> = g.group_output_shapes(1).unwrap().iter().map(|s| s.w).collect();
    assert_eq!(widths, sizes);
    assert_eq!(g.feature_dim(), FEATURE_DIM);
}

#[test]
fn group_four_channel_flow() {
    let g = build_proposed(256, 256).unwrap();
    let shapes = g.infer_shapes(1).unwrap();
    let channels: Vec<(String, usize)> = g
        .nodes()
        .iter()
        .zip(&shapes)
        .filter(|(n, _)| n.group == 4 && !n.name.ends_with(".bn") && !n.name.ends_with(".relu"))
        .map(|(n, s)| (n.name.clone(), s.c))
        .collect();
    let expected = [
        ("g4.layer1.bottleneck", 96),
        ("g4.layer1.conv", 32),
        ("g4.layer1.concat", 96),
        ("g4.layer2.bottleneck", 96),
        ("g4.layer2.conv", 32),
        ("g4.layer2.concat", 128),
        ("g4.transition.reduce", 128),
        ("g4.transition.conv", 96),
    ];
    let expected: Vec<(String, usize)> = expected.iter().map(|(n, c)| (n.to_string(), *c)).collect();
    assert_eq!(channels, expected);
}

#[test]
fn parameter_count_matches_hand_count() {
    let g = build_proposed(256, 256).unwrap();
    assert_eq!(hand_count(), 927_010);
    assert_eq!(g.parameter_count(), hand_count());
    assert_eq!(g.trainable_parameter_count(), hand_count());
    assert!((800_000..=1_000_000).contains(&g.parameter_count()));
}

#[test]
fn variant_parameter_ordering() {
    let proposed = build_proposed(64, 64).unwrap().parameter_count();
    let no_bottleneck = build_variant(2, 64, 64).unwrap().parameter_count();
    let wide = build_variant(3, 64, 64).unwrap().parameter_count();
    assert!(no_bottleneck < proposed && proposed < wide, "{no_bottleneck} {proposed} {wide}");
    let frozen = build_variant(4, 64, 64).unwrap();
    assert_eq!(frozen.parameter_count(), proposed);
    assert_eq!(frozen.trainable_parameter_count(), proposed - 256);
}

#[test]
fn every_variant_builds_with_table_sizes() {
    for id in 1..=5 {
        let g = build_variant(id, 256, 256).unwrap();
        let sizes: Vec<usize> = g.group_output_shapes(1).unwrap().iter().map(|s| s.h).collect();
        assert_eq!(sizes, [256, 256, 128, 64, 32, 16, 8, 1, 1], "variant {id}");
    }
    assert_eq!(build_variant(1, 64, 64).unwrap().feature_dim(), 96);
}

#[test]
fn bad_ids_and_sizes_are_contract_errors() {
    assert!(matches!(build_variant(0, 64, 64), Err(Error::Contract(_))));
    assert!(matches!(build_variant(6, 64, 64), Err(Error::Contract(_))));
    assert!(matches!(build_proposed(100, 64), Err(Error::Contract(_))));
    assert!(matches!(build_proposed(0, 0), Err(Error::Contract(_))));
}

#[test]
fn fresh_net_is_near_chance() {
    let g = build_proposed(32, 32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let probs = g.predict(&random_batch(&mut rng, 100, 32)).unwrap();
    let mean_stego: f64 = probs.chunks(2).map(|p| p[1]).sum::<f64>() / 100.0;
    assert!((mean_stego - 0.5).abs() < 0.2, "{mean_stego}");
    for p in probs.chunks(2) {
        assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
    }
}

#[test]
fn identical_inputs_give_identical_outputs() {
    let g = build_proposed(64, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let one = random_batch(&mut rng, 1, 64);
    let two = Tensor4::stack_batch(&[&one, &one]).unwrap();
    let p = g.predict(&two).unwrap();
    assert_eq!(p[..2], p[2..]);
}

#[test]
fn input_shape_is_checked() {
    let mut g = build_proposed(64, 64).unwrap();
    let wrong = Tensor4::zeros(Shape4::new(1, 1, 32, 32));
    assert!(matches!(g.forward(&wrong, false), Err(Error::Contract(_))));
    let two_channel = Tensor4::zeros(Shape4::new(1, 2, 64, 64));
    assert!(matches!(g.forward(&two_channel, true), Err(Error::Contract(_))));
}

#[test]
fn features_compose_with_head() {
    let g = build_proposed(64, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = random_batch(&mut rng, 1, 64);
    let image = RealImage::new(64, 64, batch.data().to_vec()).unwrap();
    let feats = g.extract_features(&image).unwrap();
    assert_eq!(feats.len(), 160);
    assert_eq!(feats, g.extract_features(&image).unwrap());
    let pooled = Tensor4::new(Shape4::new(1, 160, 1, 1), feats).unwrap();
    let via_features = g.classify(&pooled).unwrap();
    let direct = g.predict(&batch).unwrap();
    for (a, b) in via_features.iter().zip(&direct) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn abs_variant_feeds_non_negative_values() {
    let mut g = build_variant(5, 32, 32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let acts = g.forward_training(&random_batch(&mut rng, 2, 32)).unwrap();
    let abs_node = g.nodes().iter().position(|n| n.op == Op::Abs).unwrap();
    assert!(acts.node(abs_node).data().iter().all(|&v| v >= 0.0));
    assert!(acts.node(1).data().iter().any(|&v| v < 0.0));
}

#[test]
fn gradient_reaches_dct_kernels_unless_frozen() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = random_batch(&mut rng, 4, 32);
    let labels = [0, 1, 0, 1];

    let mut g = build_proposed(32, 32).unwrap();
    let info = g.param_info();
    assert_eq!(info[0].name, "g1.dct.kernels");
    let step = g.train_step(&batch, &labels).unwrap();
    assert_eq!(step.grads.len(), info.len());
    for (grad, p) in step.grads.iter().zip(&info) {
        assert_eq!(grad.len(), p.len, "{}", p.name);
    }
    let norm: f32 = step.grads[0].iter().map(|v| v * v).sum();
    assert!(norm > 0.0);

    let mut frozen = build_variant(4, 32, 32).unwrap();
    let step = frozen.train_step(&batch, &labels).unwrap();
    assert!(step.grads[0].iter().all(|&v| v == 0.0));
    assert!(!frozen.param_info()[0].trainable);
}

#[test]
fn every_concat_edge_carries_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut g = build_proposed(32, 32).unwrap();
    let batch = random_batch(&mut rng, 4, 32);
    let acts = g.forward_training(&batch).unwrap();
    let xent = dense_softmax_xent(acts.pooled(), g.head(), &[0, 1, 1, 0]).unwrap();
    let (node_grads, _) = g.backward(&acts, xent.grad_input).unwrap();
    let mut checked = 0;
    for node in g.nodes().iter().filter(|n| n.op == Op::Concat) {
        for &src in &node.inputs {
            let grad = node_grads[src].as_ref().unwrap_or_else(|| panic!("{} input {src}", node.name));
            assert!(grad.data().iter().any(|&v| v != 0.0), "{} input {src}", node.name);
            checked += 1;
        }
    }
    assert_eq!(checked, 20);
}

#[test]
fn training_forward_updates_running_stats_only_in_training() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = build_proposed(32, 32).unwrap();
    let before = g.clone();
    let batch = random_batch(&mut rng, 2, 32);
    g.forward(&batch, false).unwrap();
    assert_eq!(g, before);
    g.forward(&batch, true).unwrap();
    assert_ne!(g, before);
}

#[test]
fn structure_hash_ignores_trainability_and_size() {
    let a = build_proposed(64, 64).unwrap();
    assert_eq!(a.structure_hash(), build_proposed(128, 128).unwrap().structure_hash());
    assert_eq!(a.structure_hash(), build_variant(4, 64, 64).unwrap().structure_hash());
    for id in [1, 2, 3, 5] {
        assert_ne!(a.structure_hash(), build_variant(id, 64, 64).unwrap().structure_hash());
    }
}

#[test]
fn seeds_change_initialization() {
    let a = NetGraph::build(&NetConfig { seed: 1, ..NetConfig::default() }, 32, 32).unwrap();
    let b = NetGraph::build(&NetConfig { seed: 1, ..NetConfig::default() }, 32, 32).unwrap();
    let c = NetGraph::build(&NetConfig { seed: 2, ..NetConfig::default() }, 32, 32).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.dct_kernels(), c.dct_kernels());
}

#[test]
fn initialization_statistics() {
    let g = build_proposed(64, 64).unwrap();
    for node in g.nodes() {
        if let Op::Conv { params, .. } = &node.op {
            if node.name == "g1.dct" {
                continue;
            }
            let (kh, _) = params.kernel_size();
            assert_eq!(params.bias.is_some(), kh == 3, "{}", node.name);
            if let Some(b) = &params.bias {
                assert!(b.iter().all(|&v| v == 0.2));
            }
        }
    }
    let all: Vec<f64> = g
        .nodes()
        .iter()
        .filter(|n| n.name != "g1.dct")
        .filter_map(|n| match &n.op {
            Op::Conv { params, .. } => Some(params.kernels.data().iter().map(|&v| v as f64)),
            _ => None,
        })
        .flatten()
        .collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let sd = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
    assert!(mean.abs() < 1e-4 && (sd - 0.01).abs() < 2e-4, "{mean} {sd}");
    let limit = (3.0f32 / 160.0).sqrt();
    assert!(g.head().weights.iter().all(|w| w.abs() <= limit));
    assert!(g.head().bias.iter().all(|&b| b == 0.0));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut g = build_proposed(32, 32).unwrap();
    g.forward(&random_batch(&mut rng, 2, 32), true).unwrap();
    let meta = CheckpointMeta { iteration: 123, seed: 9, variant: Variant::Proposed };
    let bytes = g.encode_checkpoint(&meta);

    let mut fresh = NetGraph::build(&NetConfig { seed: 77, ..NetConfig::default() }, 32, 32).unwrap();
    assert_eq!(fresh.decode_checkpoint(&bytes).unwrap(), meta);
    let batch = random_batch(&mut rng, 3, 32);
    let a = g.predict(&batch).unwrap();
    let b = fresh.predict(&batch).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    for ((na, va), (nb, vb)) in g.named_arrays().iter().zip(fresh.named_arrays().iter()) {
        assert_eq!(na, nb);
        assert!(va.iter().zip(vb.iter()).all(|(x, y)| x.to_bits() == y.to_bits()), "{na}");
    }
}

#[test]
fn checkpoint_blob_count_matches_structural_walk() {
    let g = build_proposed(32, 32).unwrap();
    let convs = g.nodes().iter().filter(|n| matches!(n.op, Op::Conv { .. })).count();
    let biased = g.nodes().iter().filter(|n| matches!(&n.op, Op::Conv { params, .. } if params.bias.is_some())).count();
    let bns = g.nodes().iter().filter(|n| matches!(n.op, Op::BatchNorm(_))).count();
    // 1 DCT + 2 + (4 + 2) per transition group × 4 + 4 in group 8.
    assert_eq!(convs, 1 + 2 + 6 * 4 + 4);
    assert_eq!(bns, convs - 1);
    assert_eq!(g.named_arrays().len(), convs + biased + 4 * bns + 2);
}

#[test]
fn loading_other_variant_names_the_layer() {
    let other = build_variant(2, 32, 32).unwrap();
    let bytes = other.encode_checkpoint(&CheckpointMeta::default());
    let mut g = build_proposed(32, 32).unwrap();
    let before = g.clone();
    match g.decode_checkpoint(&bytes) {
        Err(Error::LayerShape { layer, .. }) => assert!(layer.starts_with("g4.layer1.conv"), "{layer}"),
        other => panic!("expected layer shape error, got {other:?}"),
    }
    assert_eq!(g, before);

    let abs = build_variant(5, 32, 32).unwrap().encode_checkpoint(&CheckpointMeta::default());
    let err = g.decode_checkpoint(&abs).unwrap_err().to_string();
    assert!(err.contains("structure hash"), "{err}");
}

#[test]
fn truncated_and_future_checkpoints_are_rejected() {
    let g = build_proposed(32, 32).unwrap();
    let bytes = g.encode_checkpoint(&CheckpointMeta::default());
    let mut target = g.clone();
    let err = target.decode_checkpoint(&bytes[..bytes.len() / 2]).unwrap_err().to_string();
    assert!(err.contains("truncated"), "{err}");

    let mut future = bytes.clone();
    future[4] = 9;
    let err = target.decode_checkpoint(&future).unwrap_err().to_string();
    assert!(err.contains("version 9"), "{err}");
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.stgn");
    let g = build_variant(4, 32, 32).unwrap();
    let meta = CheckpointMeta { iteration: 5, seed: 1, variant: Variant::FrozenDct };
    g.save_checkpoint(&path, &meta).unwrap();
    let mut h = build_variant(4, 32, 32).unwrap();
    assert_eq!(h.load_checkpoint(&path).unwrap(), meta);
    assert_eq!(g, h);
    assert!(matches!(h.load_checkpoint(dir.path().join("missing")), Err(Error::Io { .. })));

    let (k, peeked) = NetGraph::from_checkpoint_file(&path, 32, 32, TluConfig::default()).unwrap();
    assert_eq!(peeked, meta);
    assert_eq!(k, g);
    assert_eq!(k.variant(), Variant::FrozenDct);
}

/// Whole-network backward pass against a central difference along the
/// gradient direction, one learnable array at a time, on smooth textures
/// (white noise saturates the truncation and puts most samples on its
/// kinks). Freshly initialized weights are tiny and the batches small, so
/// the loss is sharply curved; the step is sized for a first-order loss
/// change of 1e-4. Biases feeding batch norm have zero true gradient.
#[test]
fn directional_derivative_per_array() {
    let textures: Vec<Tensor4> = (0..4)
        .map(|s| image_tensor(&crate::synth::texture(&crate::synth::TextureParams::default(), 32, s).to_real()))
        .collect();
    let batch = Tensor4::stack_batch(&textures.iter().collect::<Vec<_>>()).unwrap();
    let labels = [0, 1, 0, 1];
    let mut g = build_proposed(32, 32).unwrap();
    let step = g.clone().train_step(&batch, &labels).unwrap();
    let loss_at = |g: &NetGraph| {
        let acts = g.clone().forward_training(&batch).unwrap();
        dense_softmax_xent(acts.pooled(), g.head(), &labels).unwrap().loss
    };
    let mut checked = 0;
    for (k, p) in g.param_info().iter().enumerate() {
        let grad = &step.grads[k];
        let gnorm = grad.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if p.name.ends_with(".bias") && p.name != "fc.bias" {
            assert!(gnorm < 1e-5, "{} feeds batch norm but has gradient {gnorm}", p.name);
            continue;
        }
        let orig: Vec<f32> = g.params_mut()[k].to_vec();
        let eps = 1e-4 / gnorm;
        let set = |g: &mut NetGraph, s: f64| {
            for ((d, &o), &gv) in g.params_mut()[k].iter_mut().zip(&orig).zip(grad) {
                *d = o + (s * gv as f64 / gnorm) as f32;
            }
        };
        set(&mut g, eps);
        let plus = loss_at(&g);
        set(&mut g, -eps);
        let minus = loss_at(&g);
        g.params_mut()[k].copy_from_slice(&orig);
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = (numeric - gnorm).abs() / gnorm;
        assert!(rel < 0.05, "{}: analytic {gnorm} numeric {numeric}", p.name);
        checked += 1;
    }
    assert!(checked > 80);
}
