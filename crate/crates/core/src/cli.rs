//! Command implementations behind the `meal` binary.
//!
//! A run directory holds `config.toml`, `metrics.jsonl`,
//! `checkpoints/epoch-NNNN.json` with a `checkpoints/latest.json` copy, and
//! `analysis/` artifacts.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use crate::analysis::{
    classwise_for_model, compare_curves, export_embeddings, gaps_to_csv, histograms_to_csv, percentile_snapshot, teacher_student_gaps,
    weight_histogram, ClassPair, LayerSelector, PairKind, PercentileTrace, CIFAR10_PAIRS, SYNTHETIC_PAIRS,
};
use crate::checkpoint::{fingerprint, CheckpointBundle, CheckpointKind};
use crate::config::{DatasetKind, RunConfig};
use crate::data::{Dataset, ImageSource, Split};
use crate::ensemble::{supervision_stats, Ensemble, Preprocessing};
use crate::error::{Error, Result};
use crate::nets::build_model;
use crate::rng::{derive_seed, Stream};
use crate::trainer::{accuracy_from_logits, evaluate, pretrain_hard, Accuracy, Distiller, InitMode, MetricsRecord, StudentInit};
use crate::transfer::{transfer_from_scratch, transfer_run, TransferMode};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const LATEST: &str = "latest.json";
pub const PERCENTILES_FILE: &str = "percentiles.csv";

/// Paths inside one run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_file(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join(METRICS_FILE)
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint(&self, epoch: usize) -> PathBuf {
        self.checkpoints().join(format!("epoch-{epoch:04}.json"))
    }

    pub fn latest(&self) -> PathBuf {
        self.checkpoints().join(LATEST)
    }

    pub fn analysis(&self, file: &str) -> PathBuf {
        self.root.join("analysis").join(file)
    }

    fn is_populated(&self) -> bool {
        self.config().exists() || self.metrics().exists() || self.checkpoints().exists()
    }

    /// Claims the directory for a new run. Refuses to overwrite an existing
    /// run unless `force` is set, in which case its artifacts are removed.
    pub fn create(&self, force: bool) -> Result<()> {
        if self.is_populated() {
            if !force {
                return Err(Error::Config(format!(
                    "run directory {} already holds a run; pass --force to overwrite or --resume to continue",
                    self.root.display()
                )));
            }
            for dir in [self.checkpoints(), self.root.join("analysis")] {
                if dir.exists() {
                    fs::remove_dir_all(&dir).map_err(|e| Error::io(format!("removing {}", dir.display()), e))?;
                }
            }
            for file in [self.config(), self.metrics()] {
                if file.exists() {
                    fs::remove_file(&file).map_err(|e| Error::io(format!("removing {}", file.display()), e))?;
                }
            }
        }
        fs::create_dir_all(&self.root).map_err(|e| Error::io(format!("creating {}", self.root.display()), e))
    }

    pub fn write_config(&self, config: &RunConfig) -> Result<()> {
        write_file(&self.config(), config.to_toml()?)
    }

    pub fn load_config(&self) -> Result<RunConfig> {
        RunConfig::load(&self.config(), &[])
    }

    pub fn append_metrics(&self, record: &MetricsRecord) -> Result<()> {
        let path = self.metrics();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let line = serde_json::to_string(record)?;
        writeln!(f, "{line}").map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read_metrics(&self) -> Result<Vec<MetricsRecord>> {
        read_metrics(&self.metrics())
    }

    /// Writes the epoch checkpoint and refreshes the `latest` copy.
    pub fn save_checkpoint(&self, bundle: &CheckpointBundle) -> Result<()> {
        bundle.save(&self.checkpoint(bundle.epoch))?;
        bundle.save(&self.latest())
    }

    /// Epoch checkpoints in epoch order.
    pub fn epoch_checkpoints(&self) -> Result<Vec<PathBuf>> {
        let dir = self.checkpoints();
        if !dir.is_dir() {
            return Err(Error::MissingFile(dir));
        }
        let mut v: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("epoch-") && n.ends_with(".json"))
            })
            .collect();
        v.sort();
        Ok(v)
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    read_file(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Serde(format!("{}: {e}", path.display()))))
        .collect()
}

fn load_teachers(config: &RunConfig, train: &Dataset) -> Result<(Ensemble, Vec<CheckpointBundle>)> {
    if config.ensemble.teachers.is_empty() {
        return Err(Error::Config("ensemble.teachers lists no teacher checkpoints".into()));
    }
    let bundles = config
        .ensemble
        .teachers
        .iter()
        .map(|p| CheckpointBundle::load(p))
        .collect::<Result<Vec<_>>>()?;
    let models = bundles.iter().map(CheckpointBundle::to_model).collect::<Result<Vec<_>>>()?;
    let ensemble = Ensemble::new(models, Preprocessing::of(train.spec()))?;
    ensemble.check_compatible(train.spec())?;
    Ok((ensemble, bundles))
}

/// Hard-label training of the configured model; returns the run directory.
pub fn cmd_pretrain(config: &RunConfig, force: bool) -> Result<PathBuf> {
    let run = RunDir::new(&config.output_dir);
    let train = config.dataset.load(Split::Train)?;
    let val = config.dataset.load(Split::Val)?;
    let model = build_model(&config.student_spec(), derive_seed(config.model.seed, Stream::Init, 0))?;
    run.create(force)?;
    run.write_config(config)?;
    let fp = fingerprint(config);
    let (mut bundle, _) = pretrain_hard(model, &train, &val, &config.pretrain, |model, record| {
        run.append_metrics(record)?;
        let mut b = CheckpointBundle::from_model(model, CheckpointKind::Pretrain, fp.clone(), config.pretrain.seed);
        b.epoch = record.epoch;
        b.rng.next_epoch = record.epoch;
        b.reference_top1 = Some(record.val_top1);
        run.save_checkpoint(&b)
    })?;
    bundle.config_fingerprint = fp;
    run.save_checkpoint(&bundle)?;
    info!("pretrain finished: val top-1 {:?}", bundle.reference_top1);
    Ok(run.root)
}

fn percentile_selector(config: &RunConfig) -> Result<LayerSelector> {
    config.analysis.percentile_layer.parse()
}

fn truncate_after(run: &RunDir, epoch: usize) -> Result<()> {
    if run.metrics().exists() {
        let kept: Vec<MetricsRecord> = run.read_metrics()?.into_iter().filter(|r| r.epoch <= epoch).collect();
        let mut text = String::new();
        for r in &kept {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        write_file(&run.metrics(), text)?;
    }
    let pct = run.analysis(PERCENTILES_FILE);
    if pct.exists() {
        let text = read_file(&pct)?;
        let mut out = String::new();
        for (i, line) in text.lines().enumerate() {
            let keep = i == 0
                || line
                    .split(',')
                    .next()
                    .and_then(|e| e.parse::<usize>().ok())
                    .is_some_and(|e| e <= epoch);
            if keep {
                out.push_str(line);
                out.push('\n');
            }
        }
        write_file(&pct, out)?;
    }
    Ok(())
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Soft-label distillation from the configured ensemble; resumable from `latest`.
pub fn cmd_distill(config: &RunConfig, force: bool, resume: bool) -> Result<PathBuf> {
    let run = RunDir::new(&config.output_dir);
    let train = config.dataset.load(Split::Train)?;
    let val = config.dataset.load(Split::Val)?;
    let (ensemble, _) = load_teachers(config, &train)?;
    let selector = percentile_selector(config)?;
    let pct_path = run.analysis(PERCENTILES_FILE);

    let mut distiller = if resume {
        let saved = run.load_config()?;
        if fingerprint(&saved.distill) != fingerprint(&config.distill) {
            return Err(Error::Config(format!(
                "{} was written with different distillation settings",
                run.config().display()
            )));
        }
        let bundle = CheckpointBundle::load(&run.latest())?;
        truncate_after(&run, bundle.epoch)?;
        info!("resuming {} after epoch {}", run.root.display(), bundle.epoch);
        Distiller::resume(&bundle, &ensemble, &config.distill)?
    } else {
        let init = match config.distill.init_mode {
            InitMode::Random => StudentInit::Random {
                spec: config.student_spec(),
                seed: config.model.seed,
            },
            InitMode::HardLabelPretrained | InitMode::Superior => {
                let path = config
                    .student_init
                    .as_ref()
                    .ok_or_else(|| Error::Config("student_init must name a checkpoint for pretrained initialization".into()))?;
                StudentInit::Checkpoint(Box::new(CheckpointBundle::load(path)?))
            }
        };
        let d = Distiller::new(&init, &ensemble, &config.distill)?;
        run.create(force)?;
        run.write_config(config)?;
        run.save_checkpoint(&d.checkpoint())?;
        write_file(&pct_path, format!("{}\n", PercentileTrace::CSV_HEADER))?;
        let snap = percentile_snapshot(d.student(), &selector)?;
        append_line(&pct_path, &PercentileTrace::csv_row(0, &snap))?;
        d
    };

    let hard = if config.distill.use_hard_labels_in_distill {
        Some(train.class_labels()?)
    } else {
        None
    };
    while !distiller.is_done() {
        let mut record = distiller.run_epoch(&train as &dyn ImageSource, hard, &val, Some(&train))?;
        let snap = percentile_snapshot(distiller.student(), &selector)?;
        append_line(&pct_path, &PercentileTrace::csv_row(record.epoch, &snap))?;
        record.weight_percentiles = Some(format!("analysis/{PERCENTILES_FILE}"));
        run.append_metrics(&record)?;
        let mut bundle = distiller.checkpoint();
        bundle.reference_top1 = Some(record.val_top1);
        run.save_checkpoint(&bundle)?;
    }
    Ok(run.root)
}

/// Single-crop evaluation of a checkpoint (default: the run's latest) on the validation split.
pub fn cmd_eval(config: &RunConfig, checkpoint: Option<&Path>) -> Result<Accuracy> {
    let run = RunDir::new(&config.output_dir);
    let path = checkpoint.map_or_else(|| run.latest(), Path::to_path_buf);
    let model = CheckpointBundle::load(&path)?.to_model()?;
    let val = config.dataset.load(Split::Val)?;
    let acc = evaluate(&model, &val)?;
    if checkpoint.is_none() {
        write_file(&run.analysis("eval.json"), serde_json::to_string_pretty(&acc)? + "\n")?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnalyzeCommand {
    Classwise,
    Supervision,
    Embeddings { classes: Option<Vec<usize>> },
    Histogram { layers: Option<Vec<String>>, bins: Option<usize> },
    Percentiles,
    Compare { other: PathBuf },
}

fn designated_pairs(config: &RunConfig) -> Vec<ClassPair> {
    let pairs: &[ClassPair] = match config.dataset.kind {
        DatasetKind::Cifar10 => &CIFAR10_PAIRS,
        DatasetKind::Synthetic => &SYNTHETIC_PAIRS,
    };
    let c = config.dataset.num_classes();
    pairs.iter().copied().filter(|p| p.a < c && p.b < c).collect()
}

#[derive(Serialize)]
struct CompareSummaryFile<'a> {
    a: &'a Path,
    b: &'a Path,
    #[serde(flatten)]
    summary: &'a crate::analysis::CurveSummary,
}

/// Writes the requested artifacts under `<run>/analysis/`; returns their paths.
pub fn cmd_analyze(run_root: &Path, command: &AnalyzeCommand) -> Result<Vec<PathBuf>> {
    let run = RunDir::new(run_root);
    let config = run.load_config()?;
    let names = config.dataset.class_names();
    let mut written = Vec::new();
    let mut emit = |file: &str, contents: String| -> Result<()> {
        let path = run.analysis(file);
        write_file(&path, contents)?;
        written.push(path);
        Ok(())
    };
    match command {
        AnalyzeCommand::Classwise => {
            let model = CheckpointBundle::load(&run.latest())?.to_model()?;
            let val = config.dataset.load(Split::Val)?;
            let report = classwise_for_model(&model, &val, &designated_pairs(&config))?;
            emit("classwise.csv", report.to_csv(names))?;
            emit("pairs.csv", report.pairs_csv(names))?;
        }
        AnalyzeCommand::Supervision => {
            let train = config.dataset.load(Split::Train)?;
            let val = config.dataset.load(Split::Val)?;
            let (ensemble, _) = load_teachers(&config, &train)?;
            emit("supervision.csv", supervision_stats(&ensemble, &val, 256)?.to_csv())?;
        }
        AnalyzeCommand::Embeddings { classes } => {
            let pairs = designated_pairs(&config);
            let classes = match classes {
                Some(c) => c.clone(),
                None if !config.analysis.embedding_classes.is_empty() => config.analysis.embedding_classes.clone(),
                None => {
                    let mut c: Vec<usize> = pairs.iter().flat_map(|p| [p.a, p.b]).collect();
                    c.sort_unstable();
                    c.dedup();
                    c
                }
            };
            let model = CheckpointBundle::load(&run.latest())?.to_model()?;
            let val = config.dataset.load(Split::Val)?;
            let table = export_embeddings(&model, &val, &classes)?;
            emit("embeddings.csv", table.to_csv())?;
            let mut sep = String::from("kind,a,b,accuracy\n");
            for p in pairs.iter().filter(|p| classes.contains(&p.a) && classes.contains(&p.b)) {
                let kind = if p.kind == PairKind::Similar { "similar" } else { "dissimilar" };
                let accuracy = table.linear_separability(p.a, p.b)?;
                sep.push_str(&format!("{kind},{},{},{accuracy:.4}\n", p.a, p.b));
            }
            emit("separability.csv", sep)?;
        }
        AnalyzeCommand::Histogram { layers, bins } => {
            let model = CheckpointBundle::load(&run.latest())?.to_model()?;
            let layers = layers.clone().unwrap_or_else(|| config.analysis.histogram_layers.clone());
            let bins = bins.unwrap_or(config.analysis.histogram_bins);
            let mut hists = Vec::new();
            for l in &layers {
                hists.extend(weight_histogram(&model, &l.parse()?, bins)?);
            }
            emit("histogram.csv", histograms_to_csv(&hists))?;
        }
        AnalyzeCommand::Percentiles => {
            let selector = percentile_selector(&config)?;
            let mut trace = PercentileTrace::default();
            for path in run.epoch_checkpoints()? {
                let bundle = CheckpointBundle::load(&path)?;
                trace.push(bundle.epoch, &percentile_snapshot(&bundle.to_model()?, &selector)?);
            }
            emit(PERCENTILES_FILE, trace.to_csv())?;
        }
        AnalyzeCommand::Compare { other } => {
            let a = run.read_metrics()?;
            let b = RunDir::new(other).read_metrics()?;
            let cmp = compare_curves(&a, &b)?;
            emit("compare.csv", cmp.to_csv())?;
            let summary = CompareSummaryFile {
                a: run_root,
                b: other,
                summary: &cmp.summary,
            };
            emit("compare_summary.json", serde_json::to_string_pretty(&summary)? + "\n")?;
            if !config.ensemble.teachers.is_empty() {
                let train = config.dataset.load(Split::Train)?;
                let val = config.dataset.load(Split::Val)?;
                let (ensemble, bundles) = load_teachers(&config, &train)?;
                let labels = val.class_labels()?;
                let mut teachers = Vec::new();
                for (path, bundle) in config.ensemble.teachers.iter().zip(&bundles) {
                    teachers.push((path.display().to_string(), evaluate(&bundle.to_model()?, &val)?.top1));
                }
                let order: Vec<usize> = (0..val.len()).collect();
                let mut logits = Vec::new();
                for idx in order.chunks(256) {
                    logits.push(ensemble.predict_with_logits(&crate::data::eval_batch(&val, idx))?.1.into_inner());
                }
                let views: Vec<_> = logits.iter().map(|l| l.view()).collect();
                let stacked = ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
                let ens_top1 = accuracy_from_logits(&crate::tensor::LogitBatch::new(stacked)?, labels)?.top1;
                let student = a
                    .last()
                    .map(|r| r.val_top1)
                    .ok_or_else(|| Error::Empty("run A has no metrics".into()))?;
                emit("gaps.csv", gaps_to_csv(&teacher_student_gaps(student, &teachers, Some(ens_top1))))?;
            }
        }
    }
    Ok(written)
}

/// Where a transfer run starts.
#[derive(Debug, Clone, PartialEq)]
pub enum TransferInit {
    Checkpoint(PathBuf),
    Scratch,
}

impl std::str::FromStr for TransferInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(if s == "scratch" {
            Self::Scratch
        } else {
            Self::Checkpoint(PathBuf::from(s))
        })
    }
}

#[derive(Serialize)]
struct TransferSummary<'a> {
    mode: TransferMode,
    init: String,
    final_score: f64,
    dataset: &'a str,
}

pub fn cmd_transfer(config: &RunConfig, init: &TransferInit, force: bool) -> Result<PathBuf> {
    let run = RunDir::new(&config.output_dir);
    let data = config.transfer_dataset.as_ref().unwrap_or(&config.dataset);
    let train = data.load(Split::Train)?;
    let val = data.load(Split::Val)?;
    let outcome = match init {
        TransferInit::Checkpoint(path) => {
            let bundle = CheckpointBundle::load(path)?;
            run.create(force)?;
            transfer_run(&bundle, &train, &val, &config.transfer)?
        }
        TransferInit::Scratch => {
            if config.transfer.mode == TransferMode::LinearProbe {
                warn!("from-scratch control always fine-tunes");
            }
            run.create(force)?;
            let spec = crate::nets::ModelSpec::new(config.model.capacity_tier, data.num_classes(), data.resolution());
            transfer_from_scratch(&spec, &train, &val, &config.transfer)?
        }
    };
    run.write_config(config)?;
    for r in &outcome.records {
        run.append_metrics(r)?;
    }
    run.save_checkpoint(&outcome.checkpoint)?;
    let summary = TransferSummary {
        mode: config.transfer.mode,
        init: match init {
            TransferInit::Checkpoint(p) => p.display().to_string(),
            TransferInit::Scratch => "scratch".into(),
        },
        final_score: outcome.final_score,
        dataset: &train.spec().name,
    };
    write_file(&run.analysis("transfer.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(run.root)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dir_refuses_reuse_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path().join("r"));
        run.create(false).unwrap();
        run.write_config(&RunConfig::default()).unwrap();
        assert!(matches!(run.create(false), Err(Error::Config(_))));
        run.create(true).unwrap();
        assert!(!run.config().exists());
    }

    #[test]
    fn transfer_init_parses() {
        assert_eq!("scratch".parse::<TransferInit>().unwrap(), TransferInit::Scratch);
        assert_eq!("a.json".parse::<TransferInit>().unwrap(), TransferInit::Checkpoint("a.json".into()));
    }
}
