//! Acceptance suite. Runs every criterion in sequence and prints one
//! PASS/FAIL line for each; exits non-zero if any criterion fails.
//!
//! Pass a substring as the first argument to run only matching criteria.

mod common;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use memefier::dataset::{build_vocab, generate_synthetic, read_manifest, write_manifest, Split};
use memefier::metrics::{macro_f1, roc_auc};
use memefier::model::{
    combined_loss, fuse_stage1, read_checkpoint, write_checkpoint, MemeFier, ModelConfig, Projections,
};
use memefier::tensor::Matrix;
use memefier::training::{ablate, evaluate, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_sample, sha256_hex, tiny_config};

// Synthetic shape used by the training experiments.
const SYN_D: usize = 8;
const SYN_TOKENS: usize = 2;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fusion_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst32 = 0.0f64;
    for case in 0..1000 {
        let d = rng.gen_range(1..=16);
        let n_g = rng.gen_range(1..=6);
        let n_x = rng.gen_range(1..=6);
        let mut vals = |n: usize| (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect::<Vec<f64>>();
        let img = vals(n_g * d);
        let txt = vals(n_x * d);
        let img_g = vals(d);
        let txt_g = vals(d);

        let p64 = Projections {
            image_tokens: Matrix::from_vec(n_g, d, img.clone()).unwrap(),
            image_global: img_g.clone(),
            text_tokens: Matrix::from_vec(n_x, d, txt.clone()).unwrap(),
            text_global: txt_g.clone(),
        };
        let (fi, ft) = fuse_stage1(&p64).map_err(|e| e.to_string())?;
        for i in 0..n_g {
            for k in 0..d {
                let want = img[i * d + k] * txt_g[k];
                ensure(fi.get(i, k).to_bits() == want.to_bits(), || {
                    format!("case {case}: 64-bit image[{i},{k}] {} != {want}", fi.get(i, k))
                })?;
            }
        }
        for j in 0..n_x {
            for k in 0..d {
                let want = txt[j * d + k] * img_g[k];
                ensure(ft.get(j, k).to_bits() == want.to_bits(), || {
                    format!("case {case}: 64-bit text[{j},{k}] differs")
                })?;
            }
        }

        let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        let p32 = Projections {
            image_tokens: Matrix::from_vec(n_g, d, f(&img)).unwrap(),
            image_global: f(&img_g),
            text_tokens: Matrix::from_vec(n_x, d, f(&txt)).unwrap(),
            text_global: f(&txt_g),
        };
        let (fi, ft) = fuse_stage1(&p32).map_err(|e| e.to_string())?;
        let rel = |got: f32, a: f32, b: f32| {
            let exact = a as f64 * b as f64;
            if exact == 0.0 {
                got.abs() as f64
            } else {
                ((got as f64 - exact) / exact).abs()
            }
        };
        for i in 0..n_g {
            for k in 0..d {
                let r = rel(fi.get(i, k), p32.image_tokens.get(i, k), p32.text_global[k]);
                worst32 = worst32.max(r);
            }
        }
        for j in 0..n_x {
            for k in 0..d {
                let r = rel(ft.get(j, k), p32.text_tokens.get(j, k), p32.image_global[k]);
                worst32 = worst32.max(r);
            }
        }
    }
    ensure(worst32 <= 1e-6, || format!("32-bit relative error {worst32:.3e} > 1e-6"))?;
    Ok(format!("1000 cases, 64-bit exact, 32-bit max rel err {worst32:.2e}"))
}

fn shape_suite() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let config = tiny_config(8);
    let model = MemeFier::<f32>::new(config.clone()).map_err(|e| e.to_string())?;
    let d = config.d_model;
    for case in 0..100 {
        let n_g = rng.gen_range(1..=8);
        let n_x = rng.gen_range(1..=8);
        let n_p = rng.gen_range(0..=3);
        let s = random_sample(&mut rng, &config, n_g, n_x, n_p);
        let out = model.forward(&s).map_err(|e| format!("case {case}: {e}"))?;
        let len = 1 + n_g + n_x + 3 * n_p;
        let ctx = format!("case {case} (n_g={n_g}, n_x={n_x}, n_p={n_p})");
        ensure(out.encoder_output.shape() == (len, d), || {
            format!("{ctx}: encoder output {:?}, expected ({len}, {d})", out.encoder_output.shape())
        })?;
        ensure(out.sequence.len() == len, || format!("{ctx}: sequence length"))?;
        ensure(out.fused_image_features.shape() == (n_g, d), || format!("{ctx}: image features"))?;
        ensure(out.r_cls.len() == d, || format!("{ctx}: r_cls width"))?;
        for (h, spec) in out.head_scores.iter().zip(&config.heads) {
            ensure(h.logits.len() == spec.kind.units() && h.probs.len() == spec.kind.units(), || {
                format!("{ctx}: head `{}` width", spec.name)
            })?;
        }
        let caption = out.caption_logits.as_ref().ok_or("missing caption logits")?;
        ensure(caption.shape() == (s.caption_ids.len() - 1, config.caption_vocab_size), || {
            format!("{ctx}: caption logits {:?}", caption.shape())
        })?;
        let prefix = &s.caption_ids[..s.caption_ids.len() - 1];
        let dec = model
            .decode_caption(&out.fused_image_features, prefix)
            .map_err(|e| format!("{ctx}: {e}"))?;
        for layer in &dec.cross_attention {
            for map in layer {
                ensure(map.shape() == (prefix.len(), n_g), || {
                    format!("{ctx}: cross-attention map {:?}", map.shape())
                })?;
            }
        }
    }
    Ok("100 random (n_g, n_x, n_p) triples".into())
}

fn gradient_check() -> Result<String, String> {
    let config = tiny_config(8);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut model = MemeFier::<f64>::new(config.clone()).map_err(|e| e.to_string())?;
    // Move away from the initializer, where near-uniform attention leaves
    // some groups with gradients at the finite-difference noise floor.
    for p in model.params_mut() {
        for x in p.data_mut() {
            *x += rng.gen_range(-0.5..0.5);
        }
    }
    // One person gives three external tokens.
    let mut s = random_sample(&mut rng, &config, 2, 2, 1);
    s.caption_ids = vec![1, 5, 9, 7, 2];
    let (_, grads) = model.loss_and_gradients(&s, None).map_err(|e| e.to_string())?;
    let specs = model.param_specs().to_vec();
    let h = 1e-6;
    const NOISE_FLOOR: f64 = 1e-7;
    let mut worst = (0.0f64, String::new());
    for (i, spec) in specs.iter().enumerate() {
        let analytic = grads[i]
            .as_ref()
            .ok_or_else(|| format!("no gradient for `{}`", spec.name))?
            .clone();
        let mut numeric = vec![0.0; spec.numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = model.params()[i].data()[j];
            model.params_mut()[i].data_mut()[j] = orig + h;
            let up = model.loss(&s).map_err(|e| e.to_string())?.total;
            model.params_mut()[i].data_mut()[j] = orig - h;
            let down = model.loss(&s).map_err(|e| e.to_string())?.total;
            model.params_mut()[i].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = analytic.frobenius_norm();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = na.max(nn);
        // Groups whose true gradient is zero (a key bias shifts every score in
        // a softmax row equally) only carry difference noise of order
        // eps * loss / h; compare those absolutely.
        let rel = if scale < NOISE_FLOOR { diff } else { diff / scale };
        if rel > worst.0 {
            worst = (rel, spec.name.clone());
        }
        ensure(rel < 1e-4, || {
            format!(
                "`{}`: relative error {rel:.3e} (analytic norm {na:.3e}, numeric norm {nn:.3e})",
                spec.name
            )
        })?;
    }
    Ok(format!(
        "{} parameter groups, worst {:.2e} ({})",
        specs.len(),
        worst.0,
        worst.1
    ))
}

fn loss_composition() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst = 0.0f64;
    for alpha in [0.0, 0.2, 0.8] {
        let config = ModelConfig {
            alpha,
            ..tiny_config(8)
        };
        let model = MemeFier::<f64>::new(config.clone()).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let batch: Vec<_> = (0..4)
                .map(|_| {
                    let (g, x, p) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(0..3));
                    random_sample(&mut rng, &config, g, x, p)
                })
                .collect();
            let (mut total, mut task, mut caption) = (0.0, 0.0, 0.0);
            for s in &batch {
                let (parts, _) = model.loss_and_gradients(s, None).map_err(|e| e.to_string())?;
                // Independent route: recompute both terms from the forward outputs.
                let out = model.forward(s).map_err(|e| e.to_string())?;
                let oracle = combined_loss(
                    &config.heads,
                    &out.head_scores,
                    &s.labels,
                    out.caption_logits.as_ref(),
                    &s.caption_ids,
                    alpha,
                )
                .map_err(|e| e.to_string())?;
                worst = worst.max((parts.total - oracle.task - alpha * oracle.caption).abs());
                total += parts.total;
                task += oracle.task;
                caption += oracle.caption;
            }
            let n = batch.len() as f64;
            worst = worst.max((total / n - task / n - alpha * caption / n).abs());
        }
    }
    ensure(worst < 1e-7, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("alpha in {{0, 0.2, 0.8}} x 100 batches, max deviation {worst:.2e}"))
}

fn auc_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst = 0.0f64;
    for case in 0..50 {
        // Scores on a coarse grid so ties are common.
        let scores: Vec<f64> = (0..200).map(|_| rng.gen_range(0..20) as f64 / 20.0).collect();
        let mut labels: Vec<bool> = (0..200).map(|_| rng.gen_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let mut wins = 0.0;
        let (mut p, mut n) = (0usize, 0usize);
        for i in 0..200 {
            if labels[i] {
                p += 1;
            } else {
                n += 1;
            }
            for j in 0..200 {
                if labels[i] && !labels[j] {
                    wins += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        let brute = wins / (p * n) as f64;
        let got = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((got - brute).abs());
        ensure(worst <= 1e-9, || format!("case {case}: {got} vs pairwise {brute}"))?;
    }
    Ok(format!("50 problems of 200 samples with ties, max diff {worst:.1e}"))
}

fn macro_f1_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for case in 0..50 {
        let n = rng.gen_range(5..120);
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let mut confusion = [[0usize; 3]; 3];
        for (&t, &p) in truth.iter().zip(&pred) {
            confusion[t][p] += 1;
        }
        let mut sum = 0.0;
        for c in 0..3 {
            let tp = confusion[c][c];
            let fp: usize = (0..3).filter(|&t| t != c).map(|t| confusion[t][c]).sum();
            let fn_: usize = (0..3).filter(|&p| p != c).map(|p| confusion[c][p]).sum();
            let denom = 2 * tp + fp + fn_;
            sum += if denom == 0 {
                0.0
            } else {
                (2 * tp) as f64 / denom as f64
            };
        }
        let want = sum / 3.0;
        let got = macro_f1(&pred, &truth, 3).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("case {case}: {got} vs hand {want}"))?;
    }
    Ok("50 random 3-class problems, exact".into())
}

fn vocabulary_rules() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let pool: Vec<String> = (0..40).map(|i| format!("w{}", char::from(b'a' + (i % 26) as u8)).repeat(1 + i / 26)).collect();
    for case in 0..50 {
        let n = rng.gen_range(10..80);
        let corpus: Vec<String> = (0..n)
            .map(|_| {
                let len = rng.gen_range(1..15);
                (0..len)
                    .map(|_| {
                        // Skewed toward the front of the pool.
                        let k = (rng.gen_range(0.0f64..1.0).powi(2) * pool.len() as f64) as usize;
                        pool[k].clone()
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let vocab = build_vocab(&corpus, 5, 0.9).map_err(|e| e.to_string())?;

        let mut counts: HashMap<&str, usize> = HashMap::new();
        for text in &corpus {
            for w in text.split(' ') {
                *counts.entry(w).or_default() += 1;
            }
        }
        for (w, &c) in &counts {
            ensure(vocab.contains(w) == (c >= 5), || {
                format!("case {case}: `{w}` seen {c} times, membership {}", vocab.contains(w))
            })?;
        }
        ensure(vocab.words().len() == counts.values().filter(|&&c| c >= 5).count(), || {
            format!("case {case}: vocabulary size")
        })?;

        let lengths: Vec<usize> = corpus.iter().map(|t| t.split(' ').count()).collect();
        let oracle_len = (0..)
            .find(|&l| 10 * lengths.iter().filter(|&&x| x <= l).count() >= 9 * n)
            .unwrap();
        ensure(vocab.max_len() == oracle_len, || {
            format!("case {case}: max_len {} vs enumerated {oracle_len}", vocab.max_len())
        })?;
    }
    Ok("50 corpora, min-count 5 and 90% length quantile".into())
}

fn overfit() -> Result<String, String> {
    let manifest = generate_synthetic(64, SYN_D, SYN_TOKENS, SYN_TOKENS, 0).map_err(|e| e.to_string())?;
    let train_cfg = TrainConfig {
        epochs: 200,
        seed: 0,
        ..TrainConfig::default()
    };
    let run = train(&ModelConfig::default(), &train_cfg, &manifest).map_err(|e| e.to_string())?;
    let train_set = manifest.split(Split::Train);
    let eval = evaluate(&run.final_model, &train_set).map_err(|e| e.to_string())?;
    let acc = eval.report.tasks["hateful"].accuracy;
    let first = run.history.epochs.first().unwrap().train.total;
    let last = run.history.last().unwrap().train.total;
    ensure(acc == 1.0, || format!("train accuracy {acc:.4} after 200 epochs"))?;
    ensure(last < first, || format!("train loss rose: {first:.4} -> {last:.4}"))?;
    Ok(format!(
        "{} train samples, accuracy {acc:.3}, train loss {first:.3} -> {last:.3}",
        train_set.len()
    ))
}

fn ablation_direction() -> Result<String, String> {
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for seed in 0..3u64 {
        let manifest =
            generate_synthetic(2000, SYN_D, SYN_TOKENS, SYN_TOKENS, seed).map_err(|e| e.to_string())?;
        let model_cfg = ModelConfig {
            seed,
            ..ModelConfig::default()
        };
        let train_cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let table = ablate(&model_cfg, &train_cfg, &manifest).map_err(|e| e.to_string())?;
        let auc = |label: &str| table.row(label).and_then(|r| r.val.tasks["hateful"].auc).unwrap_or(f64::NAN);
        let full = auc("MemeFier");
        let no_ext = auc("- External knowledge");
        let no_s2 = auc("- Fusion stage 2");
        lines.push(format!(
            "seed {seed}: full {full:.3}, -ext {no_ext:.3} (drop {:.3}), -stage2 {no_s2:.3} (drop {:.3})",
            full - no_ext,
            full - no_s2
        ));
        if !(full >= 0.90) {
            failures.push(format!("seed {seed}: full val AUC {full:.3} < 0.90"));
        }
        if !(full - no_s2 >= 0.05) {
            failures.push(format!("seed {seed}: stage-2 drop {:.3} < 0.05", full - no_s2));
        }
        if !(full - no_ext >= 0.02) {
            failures.push(format!("seed {seed}: external drop {:.3} < 0.02", full - no_ext));
        }
    }
    let summary = lines.join("; ");
    ensure(failures.is_empty(), || format!("{}; {summary}", failures.join("; ")))?;
    Ok(summary)
}

fn determinism() -> Result<String, String> {
    let manifest = generate_synthetic(200, SYN_D, SYN_TOKENS, SYN_TOKENS, 5).map_err(|e| e.to_string())?;
    let train_cfg = TrainConfig {
        epochs: 3,
        seed: 9,
        ..TrainConfig::default()
    };
    let model_cfg = ModelConfig {
        seed: 9,
        ..ModelConfig::default()
    };
    let bytes = || -> Result<(Vec<u8>, Vec<u8>, Vec<u8>), String> {
        let run = train(&model_cfg, &train_cfg, &manifest).map_err(|e| e.to_string())?;
        let history = run.history.to_jsonl().map_err(|e| e.to_string())?.into_bytes();
        let mut final_ckpt = Vec::new();
        write_checkpoint(&run.final_model, &mut final_ckpt).map_err(|e| e.to_string())?;
        let mut best_ckpt = Vec::new();
        write_checkpoint(&run.best_model, &mut best_ckpt).map_err(|e| e.to_string())?;
        Ok((history, final_ckpt, best_ckpt))
    };
    let a = bytes()?;
    let b = bytes()?;
    ensure(a.0 == b.0, || "histories differ".into())?;
    ensure(a.1 == b.1, || "final checkpoints differ".into())?;
    ensure(a.2 == b.2, || "best checkpoints differ".into())?;
    Ok(format!(
        "history {} and checkpoint {}",
        &sha256_hex(&a.0)[..12],
        &sha256_hex(&a.1)[..12]
    ))
}

fn round_trips() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = generate_synthetic(1000, 16, 4, 4, 21).map_err(|e| e.to_string())?;
    let path = dir.path().join("m.jsonl");
    write_manifest(&manifest, &path).map_err(|e| e.to_string())?;
    let first = std::fs::read(&path).map_err(|e| e.to_string())?;
    let back = read_manifest(&path).map_err(|e| e.to_string())?;
    ensure(back == manifest, || "manifest changed across a round trip".into())?;
    let path2 = dir.path().join("m2.jsonl");
    write_manifest(&back, &path2).map_err(|e| e.to_string())?;
    let second = std::fs::read(&path2).map_err(|e| e.to_string())?;
    ensure(sha256_hex(&first) == sha256_hex(&second), || "manifest hashes differ".into())?;

    // Perturb the parameters so the payload is not just initializer output.
    let mut model = MemeFier::<f32>::new(ModelConfig::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for p in model.params_mut() {
        for x in p.data_mut() {
            *x += rng.gen_range(-1e-3f32..1e-3) * (rng.gen_range(0..30) as f32 - 15.0).exp2();
        }
    }
    let mut ckpt = Vec::new();
    write_checkpoint(&model, &mut ckpt).map_err(|e| e.to_string())?;
    let loaded = read_checkpoint(ckpt.as_slice()).map_err(|e| e.to_string())?;
    ensure(loaded.params() == model.params(), || "checkpoint parameters differ".into())?;
    let mut again = Vec::new();
    write_checkpoint(&loaded, &mut again).map_err(|e| e.to_string())?;
    ensure(sha256_hex(&ckpt) == sha256_hex(&again), || "checkpoint hashes differ".into())?;
    Ok(format!(
        "manifest {}, checkpoint {}",
        &sha256_hex(&first)[..12],
        &sha256_hex(&ckpt)[..12]
    ))
}

fn main() {
    let criteria: [(&str, Check, Duration); 11] = [
        ("fusion oracle", fusion_oracle, Duration::from_secs(1)),
        ("shape suite", shape_suite, Duration::from_secs(10)),
        ("gradient check", gradient_check, Duration::from_secs(60)),
        ("loss composition", loss_composition, Duration::from_secs(5)),
        ("AUC oracle", auc_oracle, Duration::from_secs(5)),
        ("macro-F1 oracle", macro_f1_oracle, Duration::from_secs(5)),
        ("vocabulary rules", vocabulary_rules, Duration::from_secs(5)),
        ("overfit", overfit, Duration::from_secs(300)),
        ("ablation direction", ablation_direction, Duration::from_secs(900)),
        ("determinism", determinism, Duration::from_secs(300)),
        ("round trips", round_trips, Duration::from_secs(60)),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    let mut ran = 0;
    for (name, check, budget) in criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(&p))));
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > budget => Err(format!("took {took:.1?}, budget {budget:?}; {detail}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name:<20} {:>8.2}s  {detail}", took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<20} {:>8.2}s  {why}", took.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}
