use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use steglab::fld::EnsembleConfig;
use steglab::fusion::{concat_feature_matrices, fuse as mean_of, predictions_csv, train_fusion, FusionConfig};
use steglab::gfr::{
    self, config_hash, extract, extract_sca, read_labels, simulator_change_map, FeatureMatrix, GaborBank, GfrConfig,
};
use steglab::jpeg::{
    compress_to_fixpoint, decompress_real, encode_coefficients, encode_pgm, quality_to_qtable, read_coefficients,
    read_pgm, CoefficientImage, RealImage,
};
use steglab::net::{CheckpointMeta, NetConfig, NetGraph, TluConfig, Variant};
use steglab::rng;
use steglab::stego::{embed_counted, payload_to_change_rate, EmbedConfig};
use steglab::synth::{texture, TextureParams};
use steglab::train::{
    error_rate, mean_probabilities, pooled_features, stego_probabilities, train as run_training, PairEntry,
    PairedDataset, Split, TrainConfig,
};

use crate::output::OutputDir;
use crate::{EmbedArgs, EvalArgs, FeaturesArgs, FuseArgs, PrepareArgs, SynthArgs, TrainArgs};

const STEGO_NOTE: &str = "stego source: random ±1 changes of nonzero AC coefficients at a fixed payload rate, \
standing in for a content-adaptive embedder; error rates are not comparable to those of adaptive schemes";

/// Files in `dir` with extension `ext`, sorted by name.
fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn file_name(path: &Path) -> Result<String> {
    Ok(path.file_name().and_then(|n| n.to_str()).context("file name is not UTF-8")?.to_string())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    ensure!(a.count > 0, "--count must be positive");
    let mut out = OutputDir::create(&a.out, "synth")?;
    let params = TextureParams::default();
    let images: Vec<Vec<u8>> =
        (0..a.count).into_par_iter().map(|i| encode_pgm(&texture(&params, a.size, rng::sub_seed(a.seed, i as u64)))).collect();
    for (i, bytes) in images.iter().enumerate() {
        out.write(&format!("tex_{i:05}.pgm"), bytes)?;
    }
    out.manifest.config("count", a.count)?.config("size", a.size)?.seed("run", a.seed)?;
    out.finish()?;
    println!("wrote {} textures to {}", a.count, a.out.display());
    Ok(())
}

pub fn prepare(a: &PrepareArgs) -> Result<()> {
    let qt = quality_to_qtable(a.quality_factor)?;
    let sources = list_files(&a.src, "pgm")?;
    ensure!(!sources.is_empty(), "no .pgm files in {}", a.src.display());
    let mut out = OutputDir::create(&a.out, "prepare")?;
    let results: Vec<Result<(String, Vec<u8>)>> = sources
        .par_iter()
        .map(|path| {
            let img = read_pgm(path)?;
            let img = if (img.width(), img.height()) == (a.size, a.size) { img } else { img.resize_square(a.size)? };
            let ci = compress_to_fixpoint(&img, &qt, 16)?;
            let stem = path.file_stem().and_then(|s| s.to_str()).context("file name is not UTF-8")?;
            Ok((format!("{stem}.stgc"), encode_coefficients(&ci)))
        })
        .collect();
    let mut written = 0;
    for (path, result) in sources.iter().zip(results) {
        match result {
            Ok((name, bytes)) => {
                out.manifest.input(&file_name(path)?, path)?;
                out.write(&name, &bytes)?;
                written += 1;
            }
            Err(e) => eprintln!("warning: skipping {}: {e:#}", path.display()),
        }
    }
    if written == 0 {
        bail!("none of the {} inputs could be prepared", sources.len());
    }
    out.manifest.config("size", a.size)?.config("quality_factor", a.quality_factor)?;
    out.finish()?;
    println!("prepared {written}/{} images into {}", sources.len(), a.out.display());
    Ok(())
}

pub fn embed(a: &EmbedArgs) -> Result<()> {
    ensure!(
        (0.0..=1.0).contains(&a.val_fraction)
            && (0.0..=1.0).contains(&a.test_fraction)
            && a.val_fraction + a.test_fraction <= 1.0,
        "split fractions must lie in [0, 1] and sum to at most 1"
    );
    let beta = payload_to_change_rate(a.payload_bpnzac)?;
    let covers = list_files(&a.covers, "stgc")?;
    ensure!(!covers.is_empty(), "no .stgc files in {}", a.covers.display());
    let mut out = OutputDir::create(&a.out, "embed")?;
    let embed_seed = rng::sub_seed(a.seed, 1);
    let results: Vec<Result<(CoefficientImage, usize)>> = covers
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let ci = read_coefficients(path)?;
            let e = embed_counted(&ci, &EmbedConfig { alpha: a.payload_bpnzac, seed: rng::sub_seed(embed_seed, i as u64) })?;
            Ok((e.stego, e.changes))
        })
        .collect();

    let n = covers.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(rng::sub_seed(a.seed, 0), 0));
    let n_val = (a.val_fraction * n as f64).round() as usize;
    let n_test = ((a.test_fraction * n as f64).round() as usize).min(n - n_val);
    let mut splits = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_val {
            splits[i] = Split::Val;
        } else if rank < n_val + n_test {
            splits[i] = Split::Test;
        }
    }

    let cover_dir = std::fs::canonicalize(&a.covers).with_context(|| format!("resolving {}", a.covers.display()))?;
    let mut dataset = PairedDataset::default();
    for ((path, result), split) in covers.iter().zip(results).zip(splits) {
        let name = file_name(path)?;
        let (stego, changes) = result.with_context(|| format!("embedding into {}", path.display()))?;
        out.write(&name, &encode_coefficients(&stego))?;
        out.manifest.input(&name, path)?.set(&format!("changes.{name}"), changes)?;
        dataset.entries.push(PairEntry { cover: cover_dir.join(&name), stego: PathBuf::from(&name), split });
    }
    out.write("pairs.txt", dataset.to_text().as_bytes())?;
    out.manifest
        .config("payload_bpnzac", a.payload_bpnzac)?
        .config("beta", beta)?
        .config("val_fraction", a.val_fraction)?
        .config("test_fraction", a.test_fraction)?
        .set("note", STEGO_NOTE)?
        .seed("run", a.seed)?;
    out.finish()?;
    println!("embedded {n} images at {} bpnzAC (change rate {beta:.5}) into {}", a.payload_bpnzac, a.out.display());
    Ok(())
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse().map_err(|e: steglab::Error| anyhow::anyhow!(e))
}

fn record_dataset_inputs(out: &mut OutputDir, pairs: &Path, dataset: &PairedDataset, split: Option<Split>) -> Result<()> {
    out.manifest.input("pairs", pairs)?;
    for (i, e) in dataset.entries.iter().enumerate() {
        if split.is_none_or(|s| s == e.split) {
            out.manifest.input(&format!("pair{i:05}.cover"), &e.cover)?.input(&format!("pair{i:05}.stego"), &e.stego)?;
        }
    }
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let dataset = PairedDataset::read(&a.pairs)?;
    let train_pairs = dataset.load(Split::Train)?;
    let val_pairs = dataset.load(Split::Val)?;
    ensure!(!train_pairs.is_empty(), "{} has no training pairs", a.pairs.display());
    let (h, w) = (train_pairs[0].cover.height(), train_pairs[0].cover.width());
    let variant = Variant::from_id(a.variant)?;
    let net_cfg = NetConfig { variant, tlu: TluConfig::new(a.tlu_threshold)?, seed: a.seed, ..NetConfig::default() };
    let mut g = NetGraph::build(&net_cfg, h, w)?;
    let scaled = TrainConfig::scaled(a.iters);
    let cfg = TrainConfig {
        lr0: a.lr0,
        momentum: a.momentum,
        dct_lr_scale: a.dct_lr_scale,
        recalibrate_bn: !a.no_bn_recalibration,
        batch_pairs: a.batch_pairs,
        checkpoint_every: a.checkpoint_every.unwrap_or(scaled.checkpoint_every),
        seed: a.seed,
        ..scaled
    };

    let mut out = OutputDir::create(&a.out, "train")?;
    record_dataset_inputs(&mut out, &a.pairs, &dataset, None)?;
    let outcome = run_training(&mut g, &train_pairs, &val_pairs, &cfg)?;
    for s in &outcome.snapshots {
        out.write(&format!("ckpt_{:07}.stgn", s.meta.iteration), &s.graph.encode_checkpoint(&s.meta))?;
    }
    out.write("log.csv", outcome.log_csv().as_bytes())?;
    out.manifest
        .config("variant", variant.id())?
        .config("tlu_threshold", a.tlu_threshold)?
        .config("height", h)?
        .config("width", w)?
        .config("iters", cfg.max_iters)?
        .config("batch_pairs", cfg.batch_pairs)?
        .config("lr0", cfg.lr0)?
        .config("lr_divisor", cfg.lr_divisor)?
        .config("lr_step", cfg.lr_step)?
        .config("momentum", cfg.momentum)?
        .config("dct_lr_scale", cfg.dct_lr_scale)?
        .config("recalibrate_bn", cfg.recalibrate_bn)?
        .config("checkpoint_every", cfg.checkpoint_every)?
        .config("scale", cfg.scale)?
        .config("structure_hash", format!("{:016x}", g.structure_hash()))?
        .seed("run", a.seed)?;
    out.finish()?;
    if let Some(last) = outcome.log.last() {
        let val = last.val_error.map_or("n/a".to_string(), |e| format!("{:.4}", e));
        println!("trained {variant} for {} iterations: loss {:.4}, validation error {val}", cfg.max_iters, last.loss);
    }
    Ok(())
}

/// Decompressed images of `pairs`, cover then stego, with labels 0/1.
fn images_and_labels(pairs: &[steglab::train::ImagePair]) -> (Vec<&RealImage>, Vec<usize>) {
    let images = pairs.iter().flat_map(|p| [&p.cover, &p.stego]).collect();
    let labels = pairs.iter().flat_map(|_| [0, 1]).collect();
    (images, labels)
}

fn load_models(paths: &[PathBuf], h: usize, w: usize, tlu: f32) -> Result<Vec<(NetGraph, CheckpointMeta)>> {
    paths
        .iter()
        .map(|p| {
            NetGraph::from_checkpoint_file(p, h, w, TluConfig::new(tlu)?).with_context(|| format!("loading {}", p.display()))
        })
        .collect()
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let split = parse_split(&a.split)?;
    let dataset = PairedDataset::read(&a.pairs)?;
    let pairs = dataset.load(split)?;
    ensure!(!pairs.is_empty(), "{} has no {split} pairs", a.pairs.display());
    let (h, w) = (pairs[0].cover.height(), pairs[0].cover.width());
    let models = load_models(&a.checkpoints, h, w, a.tlu_threshold)?;
    let (images, labels) = images_and_labels(&pairs);

    let mut out = OutputDir::create(&a.out, "eval")?;
    record_dataset_inputs(&mut out, &a.pairs, &dataset, Some(split))?;
    let mut per_model = Vec::with_capacity(models.len());
    let mut errors = String::from("checkpoint,iteration,error\n");
    let mut curve: Vec<(u64, f64)> = Vec::new();
    for ((g, meta), path) in models.iter().zip(&a.checkpoints) {
        let p = stego_probabilities(g, &images)?;
        let err = error_rate(&p, &labels);
        writeln!(errors, "{},{},{err}", file_name(path)?, meta.iteration)?;
        curve.push((meta.iteration, err));
        out.manifest.input(&format!("checkpoint.{}", file_name(path)?), path)?;
        per_model.push(p);
    }
    let mean = mean_probabilities(&per_model)?;
    let ensemble_error = error_rate(&mean, &labels);
    writeln!(errors, "ensemble,,{ensemble_error}")?;
    curve.sort_by_key(|c| c.0);
    let mut curve_csv = String::from("iteration,val_error\n");
    for (it, e) in &curve {
        writeln!(curve_csv, "{it},{e}")?;
    }
    let mut probs = String::from("sample,label,p_stego\n");
    for (i, (p, l)) in mean.iter().zip(&labels).enumerate() {
        writeln!(probs, "{i},{l},{p}")?;
    }
    let mut report = format!("detection error on {} {split} pairs\n\n", pairs.len());
    writeln!(report, "{:<28} {:>10} {:>8}", "checkpoint", "iteration", "error")?;
    for ((_, meta), (path, p)) in models.iter().zip(a.checkpoints.iter().zip(&per_model)) {
        writeln!(report, "{:<28} {:>10} {:>8.4}", file_name(path)?, meta.iteration, error_rate(p, &labels))?;
    }
    writeln!(report, "{:<28} {:>10} {:>8.4}", format!("ensemble of {}", models.len()), "", ensemble_error)?;
    writeln!(report, "\n{STEGO_NOTE}")?;

    out.write("errors.csv", errors.as_bytes())?;
    out.write("curve.csv", curve_csv.as_bytes())?;
    out.write("probabilities.csv", probs.as_bytes())?;
    out.write("report.txt", report.as_bytes())?;
    out.manifest.config("split", split)?.config("tlu_threshold", a.tlu_threshold)?;
    out.finish()?;
    print!("{report}");
    Ok(())
}

pub fn features(a: &FeaturesArgs) -> Result<()> {
    ensure!(!a.checkpoints.is_empty() || a.gfr, "nothing to extract: pass --checkpoints and/or --gfr");
    let split = parse_split(&a.split)?;
    let dataset = PairedDataset::read(&a.pairs)?;
    let entries: Vec<&PairEntry> = dataset.split(split).collect();
    ensure!(!entries.is_empty(), "{} has no {split} pairs", a.pairs.display());
    let coeffs: Vec<CoefficientImage> = entries
        .par_iter()
        .flat_map_iter(|e| [&e.cover, &e.stego])
        .map(|p| read_coefficients(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<_>>()?;
    let images: Vec<RealImage> = coeffs.par_iter().map(decompress_real).collect();
    let refs: Vec<&RealImage> = images.iter().collect();
    let labels: Vec<usize> = entries.iter().flat_map(|_| [0, 1]).collect();
    let (h, w) = (images[0].height(), images[0].width());

    let mut out = OutputDir::create(&a.out, "features")?;
    record_dataset_inputs(&mut out, &a.pairs, &dataset, Some(split))?;
    for (j, path) in a.checkpoints.iter().enumerate() {
        let (g, _) = load_models(std::slice::from_ref(path), h, w, a.tlu_threshold)?.remove(0);
        let rows = pooled_features(&g, &refs)?;
        let table = FeatureMatrix::from_rows(&rows, g.structure_hash())?;
        out.write(&format!("cnn_{j}.stgf"), &table.encode())?;
        out.manifest.input(&format!("checkpoint.{j}"), path)?;
    }
    if a.gfr {
        let qt = *coeffs[0].qtable();
        let cfg = GfrConfig { q: a.gfr_q.unwrap_or_else(|| GfrConfig::for_qtable(&qt).q), truncation: a.truncation };
        let bank = GaborBank::default();
        let beta = a.payload_bpnzac.map(payload_to_change_rate).transpose()?;
        let rows: Vec<Vec<f32>> = coeffs
            .par_iter()
            .zip(&images)
            .map(|(ci, img)| {
                let f = match (a.sca, beta) {
                    (true, Some(beta)) => extract_sca(img, &bank, &cfg, &simulator_change_map(ci, beta), ci.qtable())?,
                    _ => extract(img, &bank, &cfg)?,
                };
                Ok(f.values.iter().map(|&v| v as f32).collect())
            })
            .collect::<Result<_>>()?;
        let table = FeatureMatrix::from_rows(&rows, config_hash(&bank, &cfg, a.sca))?;
        out.write("gfr.stgf", &table.encode())?;
        out.manifest.config("gfr.q", cfg.q)?.config("gfr.truncation", cfg.truncation)?.config("gfr.sca", a.sca)?;
        if let Some(b) = beta {
            out.manifest.config("gfr.beta", b)?;
        }
    }
    out.write("labels.txt", gfr::labels_to_text(&labels).as_bytes())?;
    out.manifest.config("split", split)?.config("tlu_threshold", a.tlu_threshold)?;
    out.finish()?;
    println!("extracted features of {} images into {}", images.len(), a.out.display());
    Ok(())
}

struct FeatureSet {
    cnn: FeatureMatrix,
    classical: FeatureMatrix,
    labels: Vec<usize>,
}

fn read_feature_set(dir: &Path, cfg: &FusionConfig, out: &mut OutputDir, tag: &str) -> Result<FeatureSet> {
    let mut per_model = Vec::with_capacity(cfg.n_cnn_models);
    for j in 0..cfg.n_cnn_models {
        let path = dir.join(format!("cnn_{j}.stgf"));
        per_model.push(FeatureMatrix::read(&path).with_context(|| format!("reading {}", path.display()))?);
        out.manifest.input(&format!("{tag}.cnn_{j}"), &path)?;
    }
    let gfr_path = dir.join("gfr.stgf");
    let classical = FeatureMatrix::read(&gfr_path).with_context(|| format!("reading {}", gfr_path.display()))?;
    let labels_path = dir.join("labels.txt");
    let labels = read_labels(&labels_path).with_context(|| format!("reading {}", labels_path.display()))?;
    out.manifest.input(&format!("{tag}.gfr"), &gfr_path)?.input(&format!("{tag}.labels"), &labels_path)?;
    Ok(FeatureSet { cnn: concat_feature_matrices(&per_model, cfg)?, classical, labels })
}

pub fn fuse(a: &FuseArgs) -> Result<()> {
    let cfg = FusionConfig {
        n_cnn_models: a.models,
        n_cnn_classifiers: a.classifiers,
        ensemble: EnsembleConfig { learners: a.learners, d_sub: a.d_sub, ..EnsembleConfig::default() },
        ..FusionConfig::default()
    };
    let mut out = OutputDir::create(&a.out, "fuse")?;
    let train_set = read_feature_set(&a.train, &cfg, &mut out, "train")?;
    let model = train_fusion(&train_set.cnn, &train_set.classical, &train_set.labels, &cfg, a.seed)?;
    out.write("fusion.stgu", &model.encode())?;
    let mut summary = String::new();
    if let Some(test) = &a.test {
        let t = read_feature_set(test, &cfg, &mut out, "test")?;
        let preds = model.predict_all(&t.cnn, &t.classical)?;
        let k = cfg.n_cnn_classifiers;
        let column = |f: &dyn Fn(&[f64]) -> f64| preds.iter().map(|p| f(&p.probabilities)).collect::<Vec<_>>();
        let fused_error = error_rate(&column(&|p| mean_of(p)), &t.labels);
        let cnn_error = error_rate(&column(&|p| mean_of(&p[..k])), &t.labels);
        let classical_error = error_rate(&column(&|p| p[k]), &t.labels);
        out.write("predictions.csv", predictions_csv(&preds).as_bytes())?;
        summary = format!(
            "fusion of {} networks, {k} + 1 classifiers, {} test samples\n\n\
             {:<20} {:>8.4}\n{:<20} {:>8.4}\n{:<20} {:>8.4}\n\n{STEGO_NOTE}\n",
            cfg.n_cnn_models,
            preds.len(),
            "CNN features only",
            cnn_error,
            "classical only",
            classical_error,
            "fused",
            fused_error,
        );
        out.write("report.txt", summary.as_bytes())?;
    }
    out.manifest
        .config("models", cfg.n_cnn_models)?
        .config("classifiers", cfg.n_cnn_classifiers)?
        .config("learners", cfg.ensemble.learners)?
        .config("d_sub", cfg.ensemble.d_sub.map_or("auto".to_string(), |d| d.to_string()))?
        .config("lambda_scale", cfg.ensemble.lambda_scale)?
        .seed("run", a.seed)?;
    out.finish()?;
    print!("{summary}");
    println!("wrote {}", a.out.join("fusion.stgu").display());
    Ok(())
}
