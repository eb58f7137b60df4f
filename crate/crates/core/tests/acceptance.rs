//! Acceptance suite: one PASS/FAIL line per criterion; exits nonzero on any FAIL.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use confseg::dataio::{
    decode_cmap, decode_pgm, encode_cmap, encode_pgm, split_folds, video_refs, GrayImage,
};
use confseg::downstream::{
    aggregate_views, build_pairs, day_rmse, fuse_videos, majority_vote, predict_days, train_sf_regress,
    video_targets, Aggregation, Role, SegSource, TaskTrainConfig,
};
use confseg::experiment::{
    eval_seg_runs, gradcheck_suite, run, train_seg_runs, ExperimentConfig, RunContext, Task,
};
use confseg::label::{compute_weights, threshold_map, ConfidenceMap, ConfidenceThreshold, CHANNELS};
use confseg::metrics::{soft_ce, trimap_loss, weighted_ce, ProbMap};
use confseg::phantom::{gen_cohort, gen_cohort_data, PhantomSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_cmap(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ConfidenceMap {
    let values = (0..CHANNELS * w * h)
        .map(|_| match rng.random_range(0..4) {
            0 => 0,
            1 => 100,
            2 => [20, 40, 50, 60, 80][rng.random_range(0..5)],
            _ => rng.random_range(0..=100),
        })
        .collect();
    ConfidenceMap::from_values(w, h, values).unwrap()
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let entries = gradcheck_suite(0, 1e-3).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = entries.iter().map(|e| e.report.worst_rel_error).fold(0.0, f64::max);
    for e in &entries {
        ensure(e.report.passed && e.report.checked > 0, format!("{}: rel err {:.3e}", e.name, e.report.worst_rel_error))?;
    }
    ensure(entries.iter().any(|e| e.name.contains("FPN")), "no end-to-end segmenter case")?;
    ensure(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!("{} cases, worst rel err {worst:.2e}, {:.1}s", entries.len(), elapsed.as_secs_f64()))
}

fn oracle_bce(y: f64, p: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    if y == 1.0 {
        -p.ln()
    } else if y == 0.0 {
        -(1.0 - p).ln()
    } else {
        -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
    }
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (w, h) = (8, 8);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let cmap = random_cmap(&mut rng, w, h);
        let probs: Vec<f64> = (0..CHANNELS * w * h)
            .map(|_| if rng.random_bool(0.02) { [0.0, 1.0][rng.random_range(0..2)] } else { rng.random::<f64>() })
            .collect();
        let pred = ProbMap::new(w, h, probs.clone()).unwrap();
        let t = ConfidenceThreshold::ALL[case % 7];
        let mask = threshold_map(&cmap, t);
        let weights = compute_weights(&cmap, t, &mask).unwrap();

        let (mut wce, mut sce, mut tri, mut tri_n) = (0.0, 0.0, 0.0, 0usize);
        for c in 0..CHANNELS {
            for y in 0..h {
                for x in 0..w {
                    let i = c * w * h + y * w + x;
                    let conf = cmap.values()[i];
                    let p = probs[i];
                    let fg = if t.level() == 0 { conf > 0 } else { conf >= t.level() };
                    let bg_w = if t.level() == 0 || t.level() == 100 { 0.8 } else { f64::from(t.level()) / 100.0 };
                    let wt = if fg { f64::from(conf) / 100.0 } else { bg_w };
                    wce += wt * oracle_bce(if fg { 1.0 } else { 0.0 }, p);
                    sce += oracle_bce(f64::from(conf) / 100.0, p);
                    if conf == 0 || conf == 100 {
                        tri += oracle_bce(f64::from(conf) / 100.0, p);
                        tri_n += 1;
                    }
                }
            }
        }
        let n = (CHANNELS * w * h) as f64;
        let got_w = weighted_ce(&pred, &mask, &weights).unwrap();
        let got_s = soft_ce(&pred, &cmap).unwrap();
        let got_t = trimap_loss(&pred, &cmap);
        let mut diffs = vec![(got_w - wce / n).abs(), (got_s - sce / n).abs()];
        if tri_n > 0 {
            diffs.push((got_t.unwrap() - tri / tri_n as f64).abs());
        } else {
            ensure(got_t.is_err(), "trimap defined with no certain pixels")?;
        }
        for d in diffs {
            worst = worst.max(d);
            ensure(d <= 1e-10, format!("case {case}: diff {d:.3e}"))?;
        }

        let certain: Vec<u8> = cmap.values().iter().map(|&v| if v >= 50 { 100 } else { 0 }).collect();
        let certain = ConfidenceMap::from_values(w, h, certain).unwrap();
        let (a, b) = (trimap_loss(&pred, &certain).unwrap(), soft_ce(&pred, &certain).unwrap());
        ensure(a == b, format!("case {case}: all-certain trimap {a} != soft_ce {b}"))?;
    }
    Ok(format!("1000 instances, worst abs diff {worst:.2e}; all-certain trimap == soft_ce"))
}

fn threshold_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..10_000 {
        let (w, h) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let cmap = random_cmap(&mut rng, w, h);
        let masks: Vec<_> = ConfidenceThreshold::ALL.iter().map(|&t| threshold_map(&cmap, t)).collect();
        for pair in masks.windows(2) {
            let shrinks = pair[1].bits().iter().zip(pair[0].bits()).all(|(&hi, &lo)| !hi || lo);
            ensure(shrinks, format!("case {case}: mask grew with threshold"))?;
        }
        let support: Vec<bool> = cmap.values().iter().map(|&v| v > 0).collect();
        ensure(masks[0].bits() == support.as_slice(), format!("case {case}: t=0 is not the strict support"))?;
    }
    Ok("10000 maps monotone; t=0 == strict support".into())
}

fn weighting_rule() -> Outcome {
    let expected: [(u8, f64); 7] = [(0, 0.8), (20, 0.2), (40, 0.4), (50, 0.5), (60, 0.6), (80, 0.8), (100, 0.8)];
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut background = 0usize;
    for _ in 0..200 {
        let cmap = random_cmap(&mut rng, 8, 8);
        for &(level, bg) in &expected {
            let t = ConfidenceThreshold::new(level).unwrap();
            ensure(t.background_weight() == bg, format!("t={level}: {}", t.background_weight()))?;
            let mask = threshold_map(&cmap, t);
            let weights = compute_weights(&cmap, t, &mask).unwrap();
            for ((&v, &fg), &wt) in cmap.values().iter().zip(mask.bits()).zip(weights.values()) {
                let want = if fg { f64::from(v) / 100.0 } else { bg };
                ensure(wt == want, format!("t={level}, value {v}: weight {wt} != {want}"))?;
                background += !fg as usize;
            }
        }
    }
    Ok(format!("exact on {background} background pixels across all 7 thresholds"))
}

fn phantom_segmentation() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = ExperimentConfig {
        thresholds: [0, 60, 100].map(|t| ConfidenceThreshold::new(t).unwrap()).to_vec(),
        max_folds: Some(1),
        seed: 7,
        out_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let data = gen_cohort_data(config.seed, config.patients, &config.phantom).map_err(|e| e.to_string())?;
    let ctx = RunContext::from_data(config, data).map_err(|e| e.to_string())?;
    let start = Instant::now();
    train_seg_runs(&ctx).map_err(|e| e.to_string())?;
    let per_model = start.elapsed().as_secs_f64() / 3.0;
    let rows = eval_seg_runs(&ctx).map_err(|e| e.to_string())?;
    let iou: HashMap<String, f64> =
        rows.iter().filter(|r| r.metric == "iou").map(|r| (r.threshold.clone(), r.value)).collect();
    let (i0, i60, i100) = (iou["0"], iou["60"], iou["100"]);
    let detail = format!(
        "60 patients, {} test; IoU t=0 {i0:.3}, t=60 {i60:.3}, t=100 {i100:.3}; {per_model:.0}s per model",
        ctx.split.held_out_test.len()
    );
    ensure(per_model < 600.0, detail.clone())?;
    ensure(i60 >= 0.5, detail.clone())?;
    ensure(i0 > i100, detail.clone())?;
    Ok(detail)
}

fn planted_signal_recovery() -> Outcome {
    let spec = PhantomSpec { frames: 4, ..Default::default() };
    let t60 = ConfidenceThreshold::new(60).unwrap();
    let mut held = 0;
    let mut lines = Vec::new();
    for seed in 1..=5u64 {
        let n = 40;
        let data = gen_cohort_data(seed, n, &spec).map_err(|e| e.to_string())?;
        let split = split_folds(&data.manifest, 4, n / 5, seed).map_err(|e| e.to_string())?;
        let train = video_targets(&data.manifest, &split.train_patients(0));
        let val = video_targets(&data.manifest, &split.val_patients(0));
        let test = video_targets(&data.manifest, &split.held_out_test);
        let ids: Vec<String> = data.refs().into_iter().map(|r| r.video_id).collect();
        let cfg = TaskTrainConfig { epochs: 20, lr: 1e-4, seed, downsample: 2, ..Default::default() };
        let mut rmse = [0.0; 2];
        for (slot, source) in [SegSource::Oracle(t60), SegSource::Zero].into_iter().enumerate() {
            let bank = fuse_videos(&data, ids.iter().map(String::as_str), source, None, cfg.downsample)
                .map_err(|e| e.to_string())?;
            let model = train_sf_regress(&cfg, &bank, &train, &val).map_err(|e| e.to_string())?;
            let days = predict_days(&model.net, &model.params, &bank, &test).map_err(|e| e.to_string())?;
            rmse[slot] = day_rmse(&days, Aggregation::Avg).map_err(|e| e.to_string())?;
        }
        let ok = rmse[0] <= 0.10 && rmse[1] >= 0.15;
        held += ok as usize;
        lines.push(format!("seed {seed}: oracle {:.3} zero {:.3}", rmse[0], rmse[1]));
    }
    let detail = format!("gap on {held}/5 seeds ({})", lines.join("; "));
    ensure(held >= 4, detail.clone())?;
    Ok(detail)
}

fn vote_and_aggregation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut ties = 0;
    for votes in 0u32..64 {
        for trial in 0..50 {
            let logits: Vec<[f64; 2]> = (0..6)
                .map(|v| {
                    let yes = votes >> v & 1 == 1;
                    let (a, b) = if trial % 5 == 0 {
                        (0.0, [0.5, 1.0, 2.0][rng.random_range(0..3)])
                    } else {
                        (rng.random_range(-3.0..3.0), rng.random_range(0.01..3.0))
                    };
                    if yes {
                        [a, a + b]
                    } else {
                        [a + b, a]
                    }
                })
                .collect();
            let yes = votes.count_ones() as i32;
            let want = if yes != 3 {
                yes > 3
            } else {
                ties += 1;
                let s1: f64 = logits.iter().map(|l| l[1]).sum();
                let s0: f64 = logits.iter().map(|l| l[0]).sum();
                s1 > s0
            };
            let got = majority_vote(&logits).map_err(|e| e.to_string())?;
            ensure(got == want, format!("votes {votes:06b}: got {got}"))?;
        }
    }
    for _ in 0..10_000 {
        let preds: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut s = preds.clone();
        for i in 1..s.len() {
            let mut j = i;
            while j > 0 && s[j - 1] > s[j] {
                s.swap(j - 1, j);
                j -= 1;
            }
        }
        let avg = (preds[0] + preds[1] + preds[2] + preds[3] + preds[4] + preds[5]) / 6.0;
        let median = (s[2] + s[3]) / 2.0;
        let max = s[5];
        let got = |m| aggregate_views(&preds, m).unwrap();
        ensure((got(Aggregation::Avg) - avg).abs() <= 1e-15, "avg")?;
        ensure(got(Aggregation::Median) == median, "median")?;
        ensure(got(Aggregation::Max) == max, "max")?;
    }
    Ok(format!("64 vote vectors x 50 logit draws ({ties} tied votes); 10000 aggregation vectors"))
}

fn pair_hygiene() -> Outcome {
    let spec = PhantomSpec { frames: 2, ..Default::default() };
    let data = gen_cohort_data(3, 12, &spec).map_err(|e| e.to_string())?;
    let refs: BTreeMap<String, (String, u8)> =
        video_refs(&data.manifest).into_iter().map(|r| (r.video_id, (r.patient_id, r.zone))).collect();
    let patients: Vec<String> = data.manifest.patients.iter().map(|p| p.patient_id.clone()).collect();
    let mut by_zone: HashMap<u8, Vec<&str>> = HashMap::new();
    for (patient, zone) in refs.values() {
        by_zone.entry(*zone).or_default().push(patient);
    }
    let all_pairs: usize = by_zone.values().map(|v| v.len() * (v.len() - 1) / 2).sum();
    let mut same_patient = 0;
    for v in by_zone.values() {
        for i in 0..v.len() {
            same_patient += v[i + 1..].iter().filter(|&&p| p == v[i]).count();
        }
    }
    let mut checked = 0;
    for role in [Role::Train, Role::Val, Role::Test] {
        let pairs = build_pairs(&data.manifest, &patients, role, 9, usize::MAX).map_err(|e| e.to_string())?;
        let want = if role == Role::Train { all_pairs } else { same_patient };
        ensure(pairs.len() == want, format!("{role:?}: {} pairs, expected {want}", pairs.len()))?;
        for p in &pairs {
            let (pa, za) = &refs[&p.video_a];
            let (pb, zb) = &refs[&p.video_b];
            ensure(za == zb, format!("{role:?}: zone mismatch {} / {}", p.video_a, p.video_b))?;
            if role != Role::Train {
                ensure(pa == pb, format!("{role:?}: patient mismatch {} / {}", p.video_a, p.video_b))?;
            }
        }
        checked += pairs.len();
    }
    Ok(format!("{checked} pairs over 12 patients"))
}

const TINY: &str = r#"{
  "thresholds": [0, 100], "folds": 3, "test_patients": 2, "max_folds": 1, "patients": 8,
  "seg_model": {"width": 32, "height": 32, "encoder_widths": [4, 8, 8], "lateral_width": 8},
  "seg_train": {"epochs": 2, "batch_size": 8},
  "task_train": {"epochs": 1, "batch_size": 4},
  "pair_caps": {"train": 12, "val": 6, "test": 6},
  "phantom": {"width": 32, "height": 32, "frames": 4}
}"#;

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base: ExperimentConfig = serde_json::from_str(TINY).map_err(|e| e.to_string())?;
    let cohort = dir.path().join("cohort");
    gen_cohort(5, base.patients, &base.phantom, &cohort).map_err(|e| e.to_string())?;
    let mut files = 0;
    for task in [Task::Seg, Task::SfChange, Task::SfRegress, Task::Readmission] {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let mut config = base.clone();
            config.task = task;
            config.cohort = Some(cohort.clone());
            config.out_dir = dir.path().join(format!("{task}_{rep}"));
            run(&RunContext::open(config.clone()).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            outputs.push(csv_files(&config.out_dir));
        }
        ensure(!outputs[0].is_empty(), format!("{task}: no CSV written"))?;
        ensure(outputs[0] == outputs[1], format!("{task}: CSV reports differ between reruns"))?;
        files += outputs[0].len();
    }
    Ok(format!("4 tasks run twice, {files} CSV files byte-identical"))
}

fn format_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..10_000 {
        let (w, h) = (rng.random_range(1..=24), rng.random_range(1..=24));
        let cmap = ConfidenceMap::from_values(w, h, (0..CHANNELS * w * h).map(|_| rng.random_range(0..=100)).collect())
            .unwrap();
        let bytes = encode_cmap(&cmap);
        let back = decode_cmap(&bytes).map_err(|e| format!("case {case}: {e}"))?;
        ensure(back == cmap && encode_cmap(&back) == bytes, format!("case {case}: cmap differs"))?;

        let img = GrayImage::new(w, h, (0..w * h).map(|_| rng.random()).collect()).unwrap();
        let bytes = encode_pgm(&img);
        let back = decode_pgm(&bytes).map_err(|e| format!("case {case}: {e}"))?;
        ensure(back == img && encode_pgm(&back) == bytes, format!("case {case}: pgm differs"))?;
    }
    Ok("10000 cmap + 10000 PGM cases bit-exact".into())
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient fidelity", gradient_fidelity),
        ("metric oracles", metric_oracles),
        ("threshold algebra", threshold_algebra),
        ("weighting rule", weighting_rule),
        ("phantom segmentation", phantom_segmentation),
        ("planted-signal recovery", planted_signal_recovery),
        ("vote/aggregation oracles", vote_and_aggregation),
        ("pair hygiene", pair_hygiene),
        ("determinism", determinism),
        ("format round trips", format_round_trips),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
