//! Command-line surface for the counting pipeline: dataset generation,
//! training, evaluation, prediction, ablation sweeps, and plot-data export.

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use fcarac_core::config::{Config, Variant};
use fcarac_core::densitymap::{export_csv, gt_density_for_sequence};
use fcarac_core::head::Model;
use fcarac_core::metrics::{
    counting_metrics, run_cell, write_report_csv, AblationGrid, EvalReport, SeqRecord,
};
use fcarac_core::sampling::sample;
use fcarac_core::seqdata::{resplit, Dataset, DatasetSplit, GenRanges, SplitMode};
use fcarac_core::tka::EmbeddingStore;
use fcarac_core::train::{finetune, pretrain};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_MISSING_CHECKPOINT: u8 = 2;
const EXIT_BAD_CONFIG: u8 = 3;
const EXIT_EMPTY_SPLIT: u8 = 4;

#[derive(Parser)]
#[command(name = "fcarac", about = "First-cycle-annotated repetition counting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a train/val/test split manifest.
    Generate {
        #[arg(long)]
        out_dir: PathBuf,
        /// JSON file with generation ranges; defaults are used if omitted.
        #[arg(long)]
        spec_file: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        n_train: usize,
        #[arg(long, default_value_t = 30)]
        n_val: usize,
        #[arg(long, default_value_t = 60)]
        n_test: usize,
        /// Re-split by waveform type so test types are unseen in training.
        #[arg(long)]
        disjoint: bool,
    },
    /// Pre-train a model on the train split.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fine-tune a pre-trained model with retrieval augmentation.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Neighbors to retrieve; defaults to the config's topk.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Embedding store for retrieval-augmented evaluation.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        /// Adapt the head to each sequence's first cycle before predicting.
        #[arg(long)]
        tta: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Predict the count and density map of one sequence.
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sequence: String,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train and evaluate every cell of the ablation grid.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Cap on grid cells, for quick partial sweeps.
        #[arg(long)]
        max_cells: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Export the ground-truth density map of one sequence as CSV.
    ExportDensity {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sequence: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .downcast_ref::<CliError>()
                .map(|e| e.exit_code)
                .unwrap_or(1);
            ExitCode::from(code)
        }
    }
}

#[derive(Debug)]
struct CliError {
    exit_code: u8,
    msg: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for CliError {}

fn fail(exit_code: u8, msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(CliError { exit_code, msg: msg.into() })
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<Config> {
    match path {
        None => Ok(Config::default()),
        Some(p) => {
            Config::load(p).map_err(|e| fail(EXIT_BAD_CONFIG, format!("{}: {e}", p.display())))
        }
    }
}

fn require_checkpoint(path: &Path) -> anyhow::Result<()> {
    if !path.exists() {
        return Err(fail(
            EXIT_MISSING_CHECKPOINT,
            format!("checkpoint {} does not exist", path.display()),
        ));
    }
    Ok(())
}

fn load_data(dir: &Path) -> anyhow::Result<(Dataset, DatasetSplit)> {
    let dataset = Dataset::load(dir).with_context(|| format!("loading {}", dir.display()))?;
    let split_path = dir.join("split.json");
    let split: DatasetSplit = if split_path.exists() {
        serde_json::from_str(&fs::read_to_string(&split_path)?)?
    } else {
        resplit(&dataset, SplitMode::Regular, 0)?
    };
    split.validate()?;
    Ok((dataset, split))
}

fn split_sequences(
    dataset: &Dataset,
    split: &DatasetSplit,
    which: &str,
) -> anyhow::Result<Vec<fcarac_core::seqdata::RawSequence>> {
    let ids = match which {
        "train" => &split.train,
        "val" => &split.val,
        "test" => &split.test,
        other => bail!("unknown split {other} (expected train, val, or test)"),
    };
    let seqs = dataset.subset(ids).sequences;
    if seqs.is_empty() {
        return Err(fail(EXIT_EMPTY_SPLIT, format!("split {which} is empty")));
    }
    Ok(seqs)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

fn dataset_hash(dir: &Path, dataset: &Dataset) -> anyhow::Result<String> {
    let mut h = Sha256::new();
    h.update(fs::read(dir.join("annotations.jsonl"))?);
    let mut ids: Vec<&str> = dataset.sequences.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    for id in ids {
        h.update(id.as_bytes());
        h.update(fs::read(dir.join("frames").join(format!("{id}.bin")))?);
    }
    Ok(format!("{:x}", h.finalize()))
}

/// Reproducibility manifest written by every command.
fn write_manifest(
    out_dir: &Path,
    command: &str,
    seed: u64,
    cfg: Option<&Config>,
    data: Option<(&Path, &Dataset)>,
) -> anyhow::Result<()> {
    let config_sha256 = cfg.map(|c| sha256_hex(c.to_text().as_bytes()));
    let dataset_sha256 = match data {
        Some((dir, ds)) => Some(dataset_hash(dir, ds)?),
        None => None,
    };
    let manifest = serde_json::json!({
        "command": command,
        "seed": seed,
        "config_sha256": config_sha256,
        "dataset_sha256": dataset_sha256,
    });
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn write_report(
    out_dir: &Path,
    report: &EvalReport,
    cfg: &Config,
    extra: &[(&str, serde_json::Value)],
) -> anyhow::Result<()> {
    let mut summary = serde_json::Map::new();
    summary.insert("mae".into(), serde_json::json!(report.mae));
    summary.insert("obo".into(), serde_json::json!(report.obo));
    summary.insert("n".into(), serde_json::json!(report.records.len()));
    summary.insert(
        "config_sha256".into(),
        serde_json::json!(sha256_hex(cfg.to_text().as_bytes())),
    );
    for (k, v) in extra {
        summary.insert((*k).into(), v.clone());
    }
    fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&serde_json::Value::Object(summary))?,
    )?;
    let mut csv = Vec::new();
    write_report_csv(report, &mut csv)?;
    fs::write(out_dir.join("report.csv"), csv)?;
    Ok(())
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Generate { out_dir, spec_file, seed, n_train, n_val, n_test, disjoint } => {
            let ranges: GenRanges = match &spec_file {
                None => GenRanges::default(),
                Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
            };
            fs::create_dir_all(&out_dir)?;
            let mut dataset = Dataset::default();
            let mut split = DatasetSplit::default();
            for (prefix, n, bucket) in [
                ("train", n_train, 0usize),
                ("val", n_val, 1),
                ("test", n_test, 2),
            ] {
                let part = fcarac_core::seqdata::generate_dataset(
                    &ranges,
                    n,
                    seed.wrapping_add(bucket as u64),
                    prefix,
                )?;
                for seq in &part.sequences {
                    match bucket {
                        0 => split.train.push(seq.id.clone()),
                        1 => split.val.push(seq.id.clone()),
                        _ => split.test.push(seq.id.clone()),
                    }
                }
                dataset.sequences.extend(part.sequences);
            }
            if disjoint {
                if dataset.sequences.is_empty() {
                    bail!("--disjoint needs a nonempty dataset");
                }
                split = resplit(&dataset, SplitMode::DisjointTypes, seed)?;
            }
            dataset.save(&out_dir)?;
            fs::write(out_dir.join("split.json"), serde_json::to_string_pretty(&split)?)?;
            write_manifest(&out_dir, "generate", seed, None, Some((&out_dir, &dataset)))?;
            println!(
                "generated {} sequences ({} train / {} val / {} test) in {}",
                dataset.len(),
                split.train.len(),
                split.val.len(),
                split.test.len(),
                out_dir.display()
            );
            Ok(())
        }

        Command::Pretrain { data, config, out_dir } => {
            let cfg = load_config(&config)?;
            let (dataset, split) = load_data(&data)?;
            let train_set = split_sequences(&dataset, &split, "train")?;
            fs::create_dir_all(&out_dir)?;
            let mut model = Model::init(cfg.clone())?;
            let report =
                pretrain(&mut model, &train_set, cfg.steps_pretrain, cfg.lr_pretrain, cfg.seed)?;
            model.save(&out_dir.join("model.ckpt"))?;
            fs::write(out_dir.join("model.config"), cfg.to_text())?;
            write_manifest(&out_dir, "pretrain", cfg.seed, Some(&cfg), Some((&data, &dataset)))?;
            println!(
                "pretrained {} steps, final loss {:.4}, tail mean {:.4}",
                report.steps, report.final_loss, report.tail_mean_loss
            );
            Ok(())
        }

        Command::Finetune { data, checkpoint, config, k, out_dir } => {
            let cfg = load_config(&config)?;
            require_checkpoint(&checkpoint)?;
            let (dataset, split) = load_data(&data)?;
            let train_set = split_sequences(&dataset, &split, "train")?;
            fs::create_dir_all(&out_dir)?;
            let mut model = Model::load(cfg.clone(), &checkpoint)?;
            let k = k.unwrap_or(cfg.topk);
            let (store, report) =
                finetune(&mut model, &train_set, k, cfg.steps_finetune, cfg.lr_finetune, cfg.seed)?;
            model.save(&out_dir.join("model.ckpt"))?;
            store.save(&out_dir.join("store.bin"))?;
            fs::write(out_dir.join("model.config"), cfg.to_text())?;
            write_manifest(&out_dir, "finetune", cfg.seed, Some(&cfg), Some((&data, &dataset)))?;
            println!(
                "finetuned {} steps with K={k}, final loss {:.4}",
                report.steps, report.final_loss
            );
            Ok(())
        }

        Command::Eval { data, checkpoint, config, split, store, k, tta, out_dir } => {
            let cfg = load_config(&config)?;
            require_checkpoint(&checkpoint)?;
            let (dataset, splits) = load_data(&data)?;
            let seqs = split_sequences(&dataset, &splits, &split)?;
            fs::create_dir_all(&out_dir)?;
            let model = Model::load(cfg.clone(), &checkpoint)?;
            let bank = match &store {
                Some(p) => {
                    require_checkpoint(p)?;
                    Some(EmbeddingStore::load(p)?)
                }
                None => None,
            };
            let retrieval = bank.as_ref().map(|b| (b, k.unwrap_or(cfg.topk)));
            let mut records = Vec::with_capacity(seqs.len());
            for seq in &seqs {
                let density = if tta {
                    let mut adapted = model.clone();
                    adapted.tta_adapt(seq, cfg.tta_steps, cfg.tta_lr)?;
                    adapted.predict(seq, retrieval)?
                } else {
                    model.predict(seq, retrieval)?
                };
                records.push(SeqRecord { id: seq.id.clone(), gt: seq.count, pred: density.count() });
            }
            let pairs: Vec<(u32, f64)> = records.iter().map(|r| (r.gt, r.pred)).collect();
            let (mae, obo) = counting_metrics(&pairs, cfg.round_obo)?;
            let report = EvalReport { mae, obo, records };
            write_report(
                &out_dir,
                &report,
                &cfg,
                &[
                    ("split", serde_json::json!(split)),
                    ("tta", serde_json::json!(tta)),
                    ("baseline", serde_json::json!(cfg.baseline.to_string())),
                ],
            )?;
            write_manifest(&out_dir, "eval", cfg.seed, Some(&cfg), Some((&data, &dataset)))?;
            println!("split {split}: MAE {mae:.4}, OBO {obo:.4} over {} sequences", pairs.len());
            Ok(())
        }

        Command::Predict { data, checkpoint, config, sequence, store, k, out_dir } => {
            let cfg = load_config(&config)?;
            require_checkpoint(&checkpoint)?;
            let (dataset, _) = load_data(&data)?;
            let seq = dataset
                .get(&sequence)
                .with_context(|| format!("sequence {sequence} not in dataset"))?;
            fs::create_dir_all(&out_dir)?;
            let model = Model::load(cfg.clone(), &checkpoint)?;
            let bank = match &store {
                Some(p) => {
                    require_checkpoint(p)?;
                    Some(EmbeddingStore::load(p)?)
                }
                None => None,
            };
            let retrieval = bank.as_ref().map(|b| (b, k.unwrap_or(cfg.topk)));
            let density = model.predict(seq, retrieval)?;
            let mut csv = Vec::new();
            export_csv(&density, &mut csv)?;
            fs::write(out_dir.join(format!("{sequence}.density.csv")), csv)?;
            let summary = serde_json::json!({
                "id": sequence,
                "count": density.count(),
                "gt_count": seq.count,
            });
            fs::write(
                out_dir.join(format!("{sequence}.json")),
                serde_json::to_string_pretty(&summary)?,
            )?;
            write_manifest(&out_dir, "predict", cfg.seed, Some(&cfg), Some((&data, &dataset)))?;
            println!("{sequence}: predicted {:.3} (truth {})", density.count(), seq.count);
            Ok(())
        }

        Command::Ablate { data, config, max_cells, out_dir } => {
            let cfg = load_config(&config)?;
            if cfg.baseline != Variant::Mtgc {
                bail!("ablate sweeps the main model; set baseline = none");
            }
            let (dataset, split) = load_data(&data)?;
            let train_set = split_sequences(&dataset, &split, "train")?;
            let test_set = split_sequences(&dataset, &split, "test")?;
            fs::create_dir_all(&out_dir)?;
            let mut cells = AblationGrid::default().cells();
            if let Some(cap) = max_cells {
                cells.truncate(cap);
            }
            let mut csv = Vec::new();
            use std::io::Write;
            writeln!(csv, "scales,topk,fusion,alpha,mae,obo")?;
            for cell in &cells {
                let report = run_cell(&cfg, cell, &train_set, &test_set)?;
                let scales: Vec<String> = cell.scales.iter().map(|s| s.to_string()).collect();
                writeln!(
                    csv,
                    "{},{},{},{},{:.6},{:.6}",
                    scales.join("|"),
                    cell.topk,
                    cell.fusion,
                    cell.alpha,
                    report.mae,
                    report.obo
                )?;
            }
            fs::write(out_dir.join("ablation.csv"), csv)?;
            write_manifest(&out_dir, "ablate", cfg.seed, Some(&cfg), Some((&data, &dataset)))?;
            println!("ran {} ablation cells", cells.len());
            Ok(())
        }

        Command::ExportDensity { data, config, sequence, out_dir } => {
            let cfg = load_config(&config)?;
            let (dataset, _) = load_data(&data)?;
            let seq = dataset
                .get(&sequence)
                .with_context(|| format!("sequence {sequence} not in dataset"))?;
            fs::create_dir_all(&out_dir)?;
            let sampled = sample(seq, cfg.k)?;
            let gt = gt_density_for_sequence(seq, &sampled)?;
            let mut csv = Vec::new();
            export_csv(&gt, &mut csv)?;
            fs::write(out_dir.join(format!("{sequence}.gt_density.csv")), csv)?;
            write_manifest(&out_dir, "export-density", cfg.seed, Some(&cfg), Some((&data, &dataset)))?;
            println!("wrote ground-truth density for {sequence}");
            Ok(())
        }
    }
}
