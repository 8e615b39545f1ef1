//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers to run a subset, e.g.
//! `cargo test --test acceptance -- 1 2 7`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::{Array2, Array4, Array5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

use signflow::ablate::{changed_keys, run_ablation, standard_matrix, AblationBudget, BASELINE};
use signflow::backbone::{BackboneConfig, Variant};
use signflow::config::RunConfig;
use signflow::ingest::split::SplitMode;
use signflow::ingest::{load_manifest, split_dataset, write_splits};
use signflow::metrics::{classification_report, confusion, f1_score, numbered_classes};
use signflow::model::{Mode, ModelConfig, SignTransformer};
use signflow::pipeline::{load_split_manifest, prepare_synthetic, train_and_evaluate, DataCache, RunResult};
use signflow::preprocess::{denormalize_clip, normalize_clip, IMAGENET_MEAN, IMAGENET_STD};
use signflow::seqmodel::{self, classify, mhsa_forward, positional_encoding, SeqModelConfig};
use signflow::synthgen::SynthSpec;
use signflow::training::gradcheck::{grad_check, tiny_case, GradCheckOptions};
use signflow::training::trainer::HISTORY_FILE;
use signflow::training::weighted_cross_entropy;

// criterion 1
const PE_TOL: f64 = 1e-9;
const STOCHASTIC_TOL: f64 = 1e-6;
const CE_TOL: f64 = 1e-8;
const ROUND_TRIP_TOL: f64 = 1e-6;
const C1_BUDGET: Duration = Duration::from_secs(10);
// criterion 2
const GRAD_TOL: f64 = 1e-3;
const C2_BUDGET: Duration = Duration::from_secs(120);
// criterion 3
const C3_BUDGET: Duration = Duration::from_secs(60);
// criterion 4
const C4_BUDGET: Duration = Duration::from_secs(300);
// criterion 5
const MIN_SD_VAL_ACC: f64 = 0.9;
const MAX_EPOCHS: usize = 30;
const C5_BUDGET: Duration = Duration::from_secs(20 * 60);
// criterion 7
const METRIC_TOL: f64 = 1e-9;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: String) -> Self {
        Self { passed, detail }
    }
}

fn check(passed: &mut bool, ok: bool, notes: &mut Vec<String>, note: String) {
    if !ok {
        *passed = false;
        notes.push(format!("FAILED {note}"));
    } else {
        notes.push(note);
    }
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn synth_tiny() -> RunConfig {
    RunConfig::load(&repo_root().join("configs/synth-tiny.toml")).expect("configs/synth-tiny.toml parses")
}

fn c1_equations() -> Outcome {
    let start = Instant::now();
    let (mut ok, mut notes) = (true, Vec::new());

    let (t, d) = (32, 256);
    let pe = positional_encoding::<f64>(t, d).unwrap();
    let mut pe_err = 0.0f64;
    for pos in 0..t {
        for i in 0..d / 2 {
            let angle = pos as f64 * (-(2.0 * i as f64 / d as f64) * 10000f64.ln()).exp();
            pe_err = pe_err.max((pe[[pos, 2 * i]] - angle.sin()).abs());
            pe_err = pe_err.max((pe[[pos, 2 * i + 1]] - angle.cos()).abs());
        }
    }
    check(&mut ok, pe_err < PE_TOL, &mut notes, format!("PE max err {pe_err:.2e}"));

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = SeqModelConfig::default();
    let params = seqmodel::init_params::<f64, _>(&cfg, 512, &mut rng);
    let x = Array2::from_shape_fn((2 * t, d), |_| rng.random_range(-2.0..2.0));
    let (_, cache) = mhsa_forward(&params, "seq.encoder.0.attn", x.view(), 2, t, cfg.num_heads).unwrap();
    let attn_err = cache
        .weights
        .rows()
        .into_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    check(&mut ok, attn_err < STOCHASTIC_TOL, &mut notes, format!("attention row-sum err {attn_err:.2e}"));

    let lstm = Array2::from_shape_fn((2 * t, cfg.lstm_out_width()), |_| rng.random_range(-3.0..3.0));
    let head = classify(&params, "seq.head", lstm.view(), 2, t).unwrap();
    let softmax_err = head.probs.rows().into_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);
    check(&mut ok, softmax_err < STOCHASTIC_TOL, &mut notes, format!("softmax row-sum err {softmax_err:.2e}"));

    let (b, c) = (16, 85);
    let logits = Array2::from_shape_fn((b, c), |_| rng.random_range(-8.0..8.0));
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
    let uniform = ndarray::Array1::<f64>::ones(c);
    let weighted = weighted_cross_entropy(logits.view(), &labels, uniform.view()).unwrap().loss;
    let plain: f64 = (0..b)
        .map(|i| {
            let row = logits.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - row[labels[i]]
        })
        .sum::<f64>()
        / b as f64;
    let ce_err = (weighted - plain).abs();
    check(&mut ok, ce_err < CE_TOL, &mut notes, format!("uniform-weight CE err {ce_err:.2e}"));

    let original = Array4::from_shape_fn((8, 3, 32, 32), |_| rng.random_range(0.0f32..1.0));
    let mut clip = original.clone();
    normalize_clip(clip.view_mut(), &IMAGENET_MEAN, &IMAGENET_STD).unwrap();
    denormalize_clip(clip.view_mut(), &IMAGENET_MEAN, &IMAGENET_STD);
    let rt_err = (&clip - &original).iter().map(|v| v.abs() as f64).fold(0.0, f64::max);
    check(&mut ok, rt_err < ROUND_TRIP_TOL, &mut notes, format!("normalize round trip err {rt_err:.2e}"));

    let elapsed = start.elapsed();
    check(&mut ok, elapsed < C1_BUDGET, &mut notes, format!("{:.2}s < {}s", elapsed.as_secs_f64(), C1_BUDGET.as_secs()));
    Outcome::new(ok, notes.join("; "))
}

fn c2_gradcheck() -> Outcome {
    let start = Instant::now();
    let mut case = tiny_case(2024).unwrap();
    let names = case.model.trainable_names();
    let report = grad_check(&mut case, &names, &GradCheckOptions::default()).unwrap();
    let worst = report
        .groups
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .map(|g| g.name.clone())
        .unwrap_or_default();
    let elapsed = start.elapsed();
    let ok = report.max_rel_error < GRAD_TOL && !report.groups.is_empty() && elapsed < C2_BUDGET;
    Outcome::new(
        ok,
        format!(
            "{} groups, max rel err {:.2e} ({worst}) < {GRAD_TOL:.0e}; {:.1}s < {}s",
            report.groups.len(),
            report.max_rel_error,
            elapsed.as_secs_f64(),
            C2_BUDGET.as_secs()
        ),
    )
}

fn c3_shapes() -> Outcome {
    let start = Instant::now();
    let config = ModelConfig {
        backbone: BackboneConfig {
            pretrained: false,
            ..BackboneConfig::default()
        },
        seq: SeqModelConfig::default(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = SignTransformer::<f32>::new(config, &mut rng).unwrap();
    let (b, t) = (2, 32);
    let clips = Array5::from_shape_fn((b, t, 3, 224, 224), |_| rng.random_range(-2.0f32..2.0));
    let out = model.forward(clips.view(), Mode::Eval).unwrap();
    let as_btw = |m: &Array2<f32>| vec![b, t, m.ncols() * m.nrows() / (b * t)];
    let rows_ok = |m: &Array2<f32>| m.nrows() == b * t;
    let features = as_btw(&out.features);
    let projected = as_btw(&out.trace.projected);
    let lstm = as_btw(&out.trace.lstm_out);
    let logits = out.logits.shape().to_vec();
    let elapsed = start.elapsed();
    let ok = rows_ok(&out.features)
        && rows_ok(&out.trace.projected)
        && rows_ok(&out.trace.lstm_out)
        && features == [2, 32, 512]
        && projected == [2, 32, 256]
        && lstm == [2, 32, 256]
        && logits == [2, 85]
        && elapsed < C3_BUDGET;
    Outcome::new(
        ok,
        format!(
            "input [2, 32, 3, 224, 224] -> features {features:?}, projected {projected:?}, lstm {lstm:?}, logits {logits:?}; {:.1}s < {}s",
            elapsed.as_secs_f64(),
            C3_BUDGET.as_secs()
        ),
    )
}

/// Thirty short 32x32 clips with a small model, for the one-step and
/// determinism checks.
fn small_setup(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.synth = SynthSpec {
        repetitions: 1,
        frames_min: 40,
        frames_max: 60,
        resolution: 32,
        transition_min: 3,
        transition_max: 8,
        ..SynthSpec::default()
    };
    cfg.split.fractions = [0.6, 0.2, 0.2];
    cfg.preprocess.target_size = 32;
    cfg.backbone.base_width = 4;
    cfg.backbone.stage_blocks = Some(vec![1, 1, 1, 1]);
    cfg.seq = SeqModelConfig {
        d_model: 32,
        num_layers: 3,
        num_heads: 8,
        ffn_dim: 64,
        lstm_hidden: 16,
        num_classes: 5,
        ..SeqModelConfig::default()
    };
    cfg.pretrain.frames = 64;
    cfg.pretrain.epochs = 1;
    cfg.pretrain.resolution = 32;
    prepare_synthetic(&mut cfg, dir, &[Variant::Resnet18, Variant::Resnet50]).unwrap();
    cfg
}

fn c4_ablation_reachability() -> Outcome {
    let start = Instant::now();
    let dir = TempDir::new().unwrap();
    let base = small_setup(dir.path());
    let matrix = standard_matrix();
    let (mut ok, mut notes) = (true, Vec::new());
    check(&mut ok, matrix.len() == 9, &mut notes, format!("{} configurations", matrix.len()));
    for axis in &matrix {
        let (patched, previous) = axis.apply(&base).unwrap();
        let mut changed = changed_keys(&base, &patched);
        let mut declared: Vec<String> = axis.keys().iter().map(|k| k.to_string()).collect();
        changed.sort();
        declared.sort();
        let reverted = signflow::ablate::revert(&patched, &previous).unwrap();
        if changed != declared || reverted != base {
            ok = false;
            notes.push(format!("FAILED {}: changed {changed:?}, declared {declared:?}", axis.name));
        }
    }
    let manifest = load_split_manifest(&base).unwrap();
    let budget = AblationBudget {
        epochs: Some(1),
        max_batches_per_epoch: Some(1),
    };
    let report = run_ablation(&base, &matrix, &manifest, &budget, None).unwrap();
    let failures: Vec<String> = report
        .rows
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.name)))
        .collect();
    check(
        &mut ok,
        failures.is_empty() && report.rows.len() == 9,
        &mut notes,
        format!("{} rows trained one step, {} errors {failures:?}", report.rows.len(), failures.len()),
    );
    let hashes: std::collections::BTreeSet<&str> = report.rows.iter().map(|r| r.split_hash.as_str()).collect();
    check(&mut ok, hashes.len() == 1, &mut notes, "shared split hash".into());
    let elapsed = start.elapsed();
    check(&mut ok, elapsed < C4_BUDGET, &mut notes, format!("{:.1}s < {}s", elapsed.as_secs_f64(), C4_BUDGET.as_secs()));
    Outcome::new(ok, notes.join("; "))
}

struct SynthRuns {
    _dir: TempDir,
    sd_cfg: RunConfig,
    sd: RunResult,
    si: RunResult,
    elapsed: Duration,
}

fn synth_runs() -> SynthRuns {
    let start = Instant::now();
    let dir = TempDir::new().unwrap();
    let mut sd_cfg = synth_tiny();
    sd_cfg.paths.output_dir = dir.path().join("sd");
    sd_cfg.split.mode = SplitMode::SignerDependent;
    prepare_synthetic(&mut sd_cfg, dir.path(), &[Variant::Resnet18]).unwrap();
    let mut si_cfg = sd_cfg.clone();
    si_cfg.paths.output_dir = dir.path().join("si");
    si_cfg.split.mode = SplitMode::SignerIndependent;
    prepare_synthetic(&mut si_cfg, dir.path(), &[Variant::Resnet18]).unwrap();

    let sd_manifest = load_split_manifest(&sd_cfg).unwrap();
    let si_manifest = load_split_manifest(&si_cfg).unwrap();
    let (_, sd) = train_and_evaluate(&sd_cfg, &sd_manifest, &mut DataCache::new(), None).unwrap();
    let (_, si) = train_and_evaluate(&si_cfg, &si_manifest, &mut DataCache::new(), None).unwrap();
    SynthRuns {
        _dir: dir,
        sd_cfg,
        sd,
        si,
        elapsed: start.elapsed(),
    }
}

fn c5_learnability(runs: &SynthRuns) -> Outcome {
    let (mut ok, mut notes) = (true, Vec::new());
    let epochs = runs.sd.history.len();
    check(
        &mut ok,
        runs.sd.val_accuracy >= MIN_SD_VAL_ACC && epochs <= MAX_EPOCHS,
        &mut notes,
        format!(
            "signer-dependent val acc {:.4} >= {MIN_SD_VAL_ACC} (best epoch {} of {epochs})",
            runs.sd.val_accuracy, runs.sd.best_epoch
        ),
    );
    check(
        &mut ok,
        runs.si.test.accuracy < runs.sd.test.accuracy,
        &mut notes,
        format!(
            "test acc signer-independent {:.4} < signer-dependent {:.4} (val {:.4} vs {:.4})",
            runs.si.test.accuracy, runs.sd.test.accuracy, runs.si.val_accuracy, runs.sd.val_accuracy
        ),
    );
    check(
        &mut ok,
        runs.elapsed < C5_BUDGET,
        &mut notes,
        format!("{:.0}s < {}s", runs.elapsed.as_secs_f64(), C5_BUDGET.as_secs()),
    );
    Outcome::new(ok, notes.join("; "))
}

fn c6_directional(runs: &SynthRuns) -> Outcome {
    let start = Instant::now();
    let rows: Vec<_> = standard_matrix()
        .into_iter()
        .filter(|a| a.name.contains("Frames") || a.name.contains("Randomly Initialized"))
        .collect();
    let manifest = load_split_manifest(&runs.sd_cfg).unwrap();
    let report = run_ablation(&runs.sd_cfg, &rows, &manifest, &AblationBudget::default(), None).unwrap();
    let base = runs.sd.test.accuracy;
    let random = report.rows.iter().find(|r| r.name.contains("Randomly")).unwrap();
    let frames16 = report.rows.iter().find(|r| r.name.contains("Frames")).unwrap();
    let ok = random.error.is_none() && frames16.error.is_none() && random.accuracy <= base;
    Outcome::new(
        ok,
        format!(
            "{BASELINE} test acc {base:.4}; random-init {:.4} <= baseline; T=16 {:.4} (delta {:+.4}, reported only); {:.0}s",
            random.accuracy,
            frames16.accuracy,
            frames16.accuracy - base,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn c7_metrics() -> Outcome {
    let (n, c) = (1000, 85);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let preds: Vec<usize> = labels
        .iter()
        .map(|&l| if rng.random::<f64>() < 0.5 { l } else { rng.random_range(0..c) })
        .collect();
    let matrix = confusion(&preds, &labels, &numbered_classes(c)).unwrap();
    let report = classification_report(&matrix).unwrap();

    let mut counts_ok = true;
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for i in 0..c {
        for j in 0..c {
            let brute = (0..n).filter(|&k| labels[k] == i && preds[k] == j).count() as u64;
            counts_ok &= matrix.counts[i][j] == brute;
        }
        let tp = (0..n).filter(|&k| labels[k] == i && preds[k] == i).count() as f64;
        let predicted = preds.iter().filter(|&&p| p == i).count() as f64;
        let actual = labels.iter().filter(|&&l| l == i).count() as f64;
        let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let r = if actual > 0.0 { tp / actual } else { 0.0 };
        p_sum += p;
        r_sum += r;
        f_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let errs = [
        (report.macro_precision - p_sum / c as f64).abs(),
        (report.macro_recall - r_sum / c as f64).abs(),
        (report.macro_f1 - f_sum / c as f64).abs(),
    ];
    let max_err = errs.iter().cloned().fold(0.0, f64::max);
    let spot = format!("{:.4}", f1_score(1.0, 0.9091));
    let ok = counts_ok && max_err < METRIC_TOL && spot == "0.9524";
    Outcome::new(
        ok,
        format!("confusion counts exact: {counts_ok}; macro P/R/F1 max err {max_err:.2e} < {METRIC_TOL:.0e}; F1(1.0, 0.9091) = {spot}"),
    )
}

fn sha(path: &Path) -> String {
    Sha256::digest(fs::read(path).unwrap()).iter().map(|b| format!("{b:02x}")).collect()
}

fn c8_determinism() -> Outcome {
    let dir = TempDir::new().unwrap();
    let mut cfg = small_setup(dir.path());
    cfg.preprocess.frames = 8;
    cfg.train.epochs = 3;
    cfg.train.patience = 3;
    let manifest = load_manifest(&cfg.manifest_path()).unwrap();
    let mut hashes = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}"));
        fs::create_dir_all(&out).unwrap();
        let split = split_dataset(&manifest, cfg.split.mode, cfg.split.fractions, cfg.seed).unwrap();
        let split_path = out.join("splits.csv");
        write_splits(&split_path, &split).unwrap();
        let mut run_cfg = cfg.clone();
        run_cfg.paths.splits = Some(split_path.clone());
        let m = load_split_manifest(&run_cfg).unwrap();
        let (_, result) = train_and_evaluate(&run_cfg, &m, &mut DataCache::new(), Some(&out)).unwrap();
        let report_path = out.join("metrics.json");
        fs::write(&report_path, result.test.to_json()).unwrap();
        hashes.push([sha(&split_path), sha(&out.join(HISTORY_FILE)), sha(&report_path)]);
    }
    let same = hashes[0] == hashes[1];
    Outcome::new(
        same,
        format!(
            "splits {}, history {}, eval report {} (sha256 prefixes, run 1 vs run 2 {})",
            &hashes[0][0][..12],
            &hashes[0][1][..12],
            &hashes[0][2][..12],
            if same { "identical" } else { "DIFFER" }
        ),
    )
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |n: u32| selected.is_empty() || selected.contains(&n);
    let titles = [
        (1, "equation fidelity"),
        (2, "gradient check"),
        (3, "shape contract"),
        (4, "ablation reachability"),
        (5, "synthetic learnability"),
        (6, "directional ablation echo"),
        (7, "metrics oracle equivalence"),
        (8, "determinism"),
    ];
    let mut synth: Option<SynthRuns> = None;
    let mut failed = 0;
    for (n, title) in titles {
        if !wants(n) {
            continue;
        }
        let outcome = match n {
            1 => c1_equations(),
            2 => c2_gradcheck(),
            3 => c3_shapes(),
            4 => c4_ablation_reachability(),
            5 | 6 => {
                let runs = synth.get_or_insert_with(synth_runs);
                if n == 5 {
                    c5_learnability(runs)
                } else {
                    c6_directional(runs)
                }
            }
            7 => c7_metrics(),
            _ => c8_determinism(),
        };
        if !outcome.passed {
            failed += 1;
        }
        println!(
            "{} criterion {n} ({title}): {}",
            if outcome.passed { "PASS" } else { "FAIL" },
            outcome.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
