//! `signflow`: generate, validate, split, pretrain, train, eval, ablate and report.
//!
//! Every subcommand reads a TOML run config (or a previous `run.json`),
//! applies `--set key=value` overrides, and records the resolved config in
//! `run.json` under the output directory. Exit codes: 2 config, 3 data,
//! 4 runtime.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use signflow::ablate::{run_ablation, select_rows, standard_matrix, AblationBudget};
use signflow::backbone::Variant;
use signflow::checkpoint::write_atomic;
use signflow::error::{Error, ErrorCategory};
use signflow::ingest::{load_manifest, split_dataset, split_hash, validate_sample, write_splits, Split, SplitMode};
use signflow::metrics::heatmap::render_heatmap;
use signflow::metrics::EvalReport;
use signflow::pipeline::{evaluate_split, load_split_manifest, prepare_synthetic, train_and_evaluate, DataCache};
use signflow::report::{accuracy_curve_svg, loss_curve_svg};
use signflow::synthgen::generate_dataset;
use signflow::training::trainer::{read_history, HISTORY_FILE};
use signflow::training::{pretrain_to_dir, ClipSet};
use signflow::{RunConfig, SignTransformer};

#[derive(Parser)]
#[command(name = "signflow", version, about = "Sign-language video classification pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run config (TOML) or a `run.json` from an earlier run.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory; beats SIGNFLOW_OUTPUT and `paths.output_dir`.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Shared seed; beats the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic dataset described by `[synth]` into the data root.
    Generate {
        #[arg(long)]
        force: bool,
    },
    /// Run the machine-checkable quality rules over every manifest row.
    Validate,
    /// Assign samples to train/val/test and write the split file.
    Split {
        #[arg(long)]
        mode: Option<SplitMode>,
    },
    /// Pretrain backbone weights on rendered still frames.
    Pretrain {
        /// Variants to pretrain; defaults to the configured one.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Train on the split, keep the best checkpoint, evaluate it on the test split.
    Train,
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train every row of the ablation matrix and write the comparison table.
    Ablate {
        #[arg(long, default_value = "standard")]
        matrix: String,
        /// `synth-default` prepares data, split and weights under the output directory.
        #[arg(long)]
        dataset: Option<String>,
        /// Keep only rows whose name contains one of these (the baseline always runs).
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_batches: Option<usize>,
    },
    /// Plot loss/accuracy curves and the confusion heatmap of a finished run.
    Report {
        /// Run directory holding history.jsonl and metrics.json; defaults to the output directory.
        #[arg(long)]
        run: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Validate => "validate",
            Command::Split { .. } => "split",
            Command::Pretrain { .. } => "pretrain",
            Command::Train => "train",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::Report { .. } => "report",
        }
    }
}

fn resolve_config(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load_any(path)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        cfg.set_str(o)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Ok(dir) = std::env::var("SIGNFLOW_OUTPUT") {
        if !dir.is_empty() {
            cfg.paths.output_dir = dir.into();
        }
    }
    if let Some(dir) = &common.output {
        cfg.paths.output_dir = dir.clone();
    }
    cfg.train.seed = cfg.seed;
    Ok(cfg)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).expect("json serializes") + "\n";
    write_atomic(path, text.as_bytes())
}

fn write_run_record(cfg: &RunConfig, command: &str, extra: serde_json::Value) -> Result<(), Error> {
    let dir = &cfg.paths.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(
        &dir.join("run.json"),
        &json!({ "command": command, "seed": cfg.seed, "config": cfg.to_json(), "outputs": extra }),
    )
}

fn write_eval(dir: &Path, report: &EvalReport) -> Result<(), Error> {
    write_atomic(&dir.join("metrics.json"), report.to_json().as_bytes())?;
    write_atomic(&dir.join("confusion.csv"), report.matrix.to_csv().as_bytes())?;
    write_atomic(&dir.join("report.txt"), report.table().as_bytes())
}

fn parse_variant(name: &str) -> Result<Variant, Error> {
    serde_json::from_value(json!(name)).map_err(|_| Error::Config(format!("unknown backbone variant {name:?}")))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = resolve_config(&cli.common)?;
    let out = cfg.paths.output_dir.clone();
    let command = cli.command.name();
    match cli.command {
        Command::Generate { force } => {
            let (manifest, info) = generate_dataset(&cfg.synth, &cfg.paths.data_root, force)?;
            println!(
                "wrote {} clips to {} (separability margin {:.4}, nearest-centroid accuracy {:.4})",
                info.checksums.len(),
                manifest.display(),
                info.separability.margin,
                info.centroid_accuracy
            );
            write_run_record(&cfg, command, json!({ "manifest": manifest }))?;
        }
        Command::Validate => {
            let manifest = load_manifest(&cfg.manifest_path())?;
            let reports: Vec<_> = manifest.samples.iter().map(|s| validate_sample(&manifest, s, &cfg.qc)).collect();
            let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.sample_id.as_str()).collect();
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_json(&out.join("qc_report.json"), &serde_json::to_value(&reports)?)?;
            write_run_record(&cfg, command, json!({ "qc_report": out.join("qc_report.json") }))?;
            println!("{} of {} samples passed QC", reports.len() - failed.len(), reports.len());
            if !failed.is_empty() {
                return Err(Error::QcFailed {
                    failed: failed.len(),
                    total: reports.len(),
                    samples: failed.iter().map(|s| s.to_string()).collect(),
                }
                .into());
            }
        }
        Command::Split { mode } => {
            if let Some(mode) = mode {
                cfg.split.mode = mode;
            }
            let manifest = load_manifest(&cfg.manifest_path())?;
            let split = split_dataset(&manifest, cfg.split.mode, cfg.split.fractions, cfg.seed)?;
            let path = cfg.splits_path();
            write_splits(&path, &split)?;
            let hash = split_hash(&split)?;
            let sizes: Vec<usize> = Split::ALL.iter().map(|&s| split.split_samples(s).len()).collect();
            println!("wrote {} (train {}, val {}, test {}; sha256 {hash})", path.display(), sizes[0], sizes[1], sizes[2]);
            write_run_record(&cfg, command, json!({ "splits": path, "split_hash": hash }))?;
        }
        Command::Pretrain { variants } => {
            let dir = cfg.backbone.weights_path.clone().unwrap_or_else(|| out.join("weights"));
            let variants = if variants.is_empty() {
                vec![cfg.backbone.variant]
            } else {
                variants.iter().map(|v| parse_variant(v)).collect::<Result<_, _>>()?
            };
            let mut written = Vec::new();
            for variant in variants {
                let bcfg = signflow::backbone::BackboneConfig {
                    variant,
                    ..cfg.backbone.clone()
                };
                let (path, report) = pretrain_to_dir(&bcfg, &cfg.pretrain, &cfg.preprocess, &dir)?;
                println!("wrote {} (final loss {:.4}, accuracy {:.4})", path.display(), report.losses.last().unwrap_or(&f64::NAN), report.accuracy);
                written.push(path);
            }
            write_run_record(&cfg, command, json!({ "weights": written }))?;
        }
        Command::Train => {
            let cfg = cfg.resolve()?;
            let manifest = load_split_manifest(&cfg)?;
            let mut cache = DataCache::new();
            let (_, result) = train_and_evaluate(&cfg, &manifest, &mut cache, Some(&out))?;
            write_eval(&out, &result.test)?;
            println!(
                "best epoch {} (val loss {:.4}, val accuracy {:.4}); test accuracy {:.4}, macro F1 {:.4}",
                result.best_epoch, result.best_val_loss, result.val_accuracy, result.test.accuracy, result.test.macro_f1
            );
            write_run_record(
                &cfg,
                command,
                json!({ "history": out.join(HISTORY_FILE), "split_hash": split_hash(&manifest)?, "result": result }),
            )?;
        }
        Command::Eval { checkpoint, split } => {
            let split = Split::parse(&split).ok_or_else(|| Error::Config(format!("unknown split {split:?}")))?;
            let model = SignTransformer::<f32>::load(&checkpoint)?;
            let manifest = load_split_manifest(&cfg)?;
            let train = manifest.split_samples(Split::Train);
            let mut counts = vec![0; manifest.num_classes()];
            for r in train {
                counts[r.class_index] += 1;
            }
            let set = ClipSet::load(&manifest, split, cfg.preprocess.frames)?;
            let (loss, report) = evaluate_split(&model, &cfg, &manifest, &set, &counts)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_eval(&out, &report)?;
            print!("{}", report.table());
            println!("loss {loss:.6}");
            write_run_record(&cfg, command, json!({ "checkpoint": checkpoint, "split": split.name(), "loss": loss }))?;
        }
        Command::Ablate {
            matrix,
            dataset,
            only,
            epochs,
            max_batches,
        } => {
            if matrix != "standard" {
                return Err(Error::Config(format!("unknown ablation matrix {matrix:?} (only \"standard\")")).into());
            }
            let mut rows = standard_matrix();
            if !only.is_empty() {
                let filters: Vec<&str> = only.iter().map(String::as_str).collect();
                rows = select_rows(&rows, &filters);
            }
            match dataset.as_deref() {
                Some("synth-default") => {
                    let setup = prepare_synthetic(&mut cfg, &out, &[Variant::Resnet18, Variant::Resnet50])?;
                    println!("synthetic data at {}", setup.manifest.display());
                }
                Some(other) => return Err(Error::Config(format!("unknown dataset {other:?}")).into()),
                None => {}
            }
            let manifest = load_split_manifest(&cfg)?;
            let budget = AblationBudget {
                epochs,
                max_batches_per_epoch: max_batches,
            };
            let report = run_ablation(&cfg, &rows, &manifest, &budget, Some(&out.join("rows")))?;
            write_atomic(&out.join("ablation.csv"), report.to_csv().as_bytes())?;
            write_atomic(&out.join("ablation.txt"), report.table().as_bytes())?;
            print!("{}", report.table());
            write_run_record(&cfg, command, json!({ "report": out.join("ablation.csv"), "budget": budget }))?;
        }
        Command::Report { run } => {
            let dir = run.unwrap_or_else(|| out.clone());
            let history_path = dir.join(HISTORY_FILE);
            if !history_path.is_file() {
                return Err(Error::MissingFile(history_path).into());
            }
            let history = read_history(&history_path)?;
            write_atomic(&dir.join("loss.svg"), loss_curve_svg(&history).as_bytes())?;
            write_atomic(&dir.join("accuracy.svg"), accuracy_curve_svg(&history).as_bytes())?;
            let metrics = dir.join("metrics.json");
            if metrics.is_file() {
                let text = fs::read_to_string(&metrics).map_err(|e| Error::io(&metrics, e))?;
                let report: EvalReport = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", metrics.display())))?;
                render_heatmap(&report.matrix, &dir.join("confusion.png"))?;
            }
            println!("wrote plots to {}", dir.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) => match e.category() {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Runtime => 4,
        },
        None => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {:#}", err);
            ExitCode::from(exit_code(&err))
        }
    }
}
