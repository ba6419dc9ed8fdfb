//! `relaxmatch` command-line interface.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::artifacts::{read_json, write_history, write_json, Manifest, Meta, ModelFile};
use crate::config::{load_spec, ConfigError, RunConfig};
use crate::corpus::{
    generate_synthetic_corpus, label_overlap_histogram, Corpus, CorpusError, ReportParser, SentenceSplitter, Split,
    Study,
};
use crate::metrics::{alignment, evaluate, Alignment, BootstrapConfig, EvalOptions, EvalReport, MetricError};
use crate::relaxed_loss::LossError;
use crate::trainer::{ensemble_predict_all, select_best, EpochRecord, TrainConfig, TrainError, Trainer};
use crate::zero_shot::{build_prompts, InferenceTemperature};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("cannot write CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Io { .. }) => EXIT_IO,
            CliError::Io { .. } | CliError::Csv(_) => EXIT_IO,
            CliError::Corpus(CorpusError::Io(_)) => EXIT_IO,
            CliError::Train(TrainError::NonFiniteLoss { .. } | TrainError::NonFiniteParameters { .. })
            | CliError::Train(TrainError::Loss(LossError::NotUnit { .. } | LossError::BadTemperature(_)))
            | CliError::Metric(MetricError::NonFiniteScore(_)) => EXIT_NUMERIC,
            _ => EXIT_CONFIG,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

#[derive(Debug, Parser)]
#[command(
    name = "relaxmatch",
    version,
    about = "Contrastive image-report training with relaxed positives"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TemperatureArg {
    Off,
    Tau,
}

impl From<TemperatureArg> for InferenceTemperature {
    fn from(t: TemperatureArg) -> Self {
        match t {
            TemperatureArg::Off => InferenceTemperature::Off,
            TemperatureArg::Tau => InferenceTemperature::Tau,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic JSONL corpus from a spec file.
    GenCorpus {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and select the best epoch on validation.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Zero-shot evaluation of one model or an ensemble.
    Eval {
        /// Comma-separated model files; several are averaged.
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Run config supplying `eval` options.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Bootstrap resamples; enables confidence intervals.
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long)]
        bootstrap_seed: Option<u64>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Defaults to the first model's training setting.
        #[arg(long, value_enum)]
        inference_temperature: Option<TemperatureArg>,
        /// CSV of `study_id, label, probability, ground_truth`.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// CSV of `label, auroc, f1, mcc, ci_low, ci_high`.
        #[arg(long)]
        label_table: Option<PathBuf>,
    },
    /// Sampling x relaxation grid over several seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    configure_threads();
    let mut stdout = std::io::stdout().lock();
    match execute(cli.command, &mut stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() {
    if let Ok(v) = std::env::var("RELAXMATCH_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => log::warn!("ignoring RELAXMATCH_THREADS={v:?}"),
        }
    }
}

pub fn execute<W: Write>(command: Command, out: &mut W) -> Result<(), CliError> {
    let value = match command {
        Command::GenCorpus { spec, out } => gen_corpus(&spec, &out)?,
        Command::Train {
            config,
            corpus,
            seed,
            out,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            let corpus = load_corpus(&corpus)?;
            train_command(&cfg, &corpus, &out)?
        }
        Command::Eval {
            models,
            corpus,
            split,
            config,
            bootstrap,
            bootstrap_seed,
            threshold,
            inference_temperature,
            predictions,
            label_table,
        } => {
            let mut opts = match config {
                Some(path) => RunConfig::load(&path)?.eval,
                None => EvalOptions::default(),
            };
            if let Some(threshold) = threshold {
                opts.threshold = threshold;
            }
            if let Some(resamples) = bootstrap {
                let base = opts.bootstrap.unwrap_or_default();
                opts.bootstrap = Some(BootstrapConfig { resamples, ..base });
            }
            if let (Some(seed), Some(b)) = (bootstrap_seed, opts.bootstrap.as_mut()) {
                b.seed = seed;
            }
            let corpus = load_corpus(&corpus)?;
            let models = models
                .iter()
                .map(|p| read_json::<ModelFile>(p).map_err(io_err(format!("cannot load model {}", p.display()))))
                .collect::<Result<Vec<_>, _>>()?;
            let temperature = inference_temperature
                .map(InferenceTemperature::from)
                .unwrap_or(models[0].config.inference_temperature);
            let studies = corpus.split(split.into());
            let eval = evaluate_models(&models, &studies, &opts, temperature)?;
            if let Some(path) = predictions {
                write_predictions(&path, &studies, &eval.labels, &eval.probabilities)?;
            }
            if let Some(path) = label_table {
                let file = File::create(&path).map_err(io_err(format!("cannot create {}", path.display())))?;
                eval.report.write_label_table(BufWriter::new(file))?;
            }
            serde_json::to_value(&eval.report).expect("report serializes")
        }
        Command::Ablate {
            config,
            corpus,
            seeds,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let corpus = load_corpus(&corpus)?;
            ablate_command(&cfg, &corpus, seeds, &out)?
        }
    };
    serde_json::to_writer_pretty(&mut *out, &value).map_err(|e| io_err("cannot write output")(e.into()))?;
    writeln!(out).map_err(io_err("cannot write output"))?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CliError> {
    let file = File::open(path).map_err(io_err(format!("cannot open corpus {}", path.display())))?;
    let parser = ReportParser::new(SentenceSplitter::default());
    Ok(Corpus::read_jsonl(BufReader::new(file), &parser)?)
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(format!("cannot create {}", path.display())))
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_json(path, value).map_err(io_err(format!("cannot write {}", path.display())))
}

fn gen_corpus(spec_path: &Path, out: &Path) -> Result<serde_json::Value, CliError> {
    let spec = load_spec(spec_path)?;
    let corpus = generate_synthetic_corpus(&spec)?;
    let file = File::create(out).map_err(io_err(format!("cannot create {}", out.display())))?;
    let mut w = BufWriter::new(file);
    corpus.write_jsonl(&mut w)?;
    w.flush().map_err(io_err(format!("cannot write {}", out.display())))?;

    let histogram = label_overlap_histogram(corpus.studies(), 5)?;
    let counts: BTreeMap<&str, usize> = corpus
        .split_counts()
        .into_iter()
        .map(|(s, n)| (s.as_str(), n))
        .collect();
    Ok(json!({
        "studies": corpus.len(),
        "splits": counts,
        "labels": corpus.labels(),
        "label_overlap_histogram": histogram.into_iter().map(|(k, v)| (k.to_string(), v)).collect::<BTreeMap<_, _>>(),
    }))
}

/// Outcome of one training run written under an output directory.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub best: ModelFile,
    pub history: Vec<EpochRecord>,
    pub files: Vec<String>,
}

/// Trains and writes `checkpoints/epoch_<k>.json`, `history.csv` and
/// `best.json` under `out`.
pub fn run_training(cfg: &TrainConfig, corpus: &Corpus, out: &Path) -> Result<TrainSummary, CliError> {
    let cp_dir = out.join("checkpoints");
    create_dir(&cp_dir)?;
    let mut trainer = Trainer::new(corpus, cfg)?;
    let featurizer = trainer.featurizer().clone();
    let mut checkpoints = Vec::with_capacity(cfg.epochs);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut files = Vec::new();
    for _ in 0..cfg.epochs {
        let outcome = trainer.run_epoch()?;
        let name = format!("checkpoints/epoch_{}.json", outcome.checkpoint.epoch);
        save_json(
            &out.join(&name),
            &ModelFile::new(&outcome.checkpoint, corpus.labels(), &featurizer, cfg),
        )?;
        files.push(name);
        history.push(outcome.record);
        checkpoints.push(outcome.checkpoint);
    }
    let path = out.join("history.csv");
    let file = File::create(&path).map_err(io_err(format!("cannot create {}", path.display())))?;
    write_history(BufWriter::new(file), &history)?;
    files.push("history.csv".into());

    let best = ModelFile::new(select_best(&checkpoints)?, corpus.labels(), &featurizer, cfg);
    save_json(&out.join("best.json"), &best.clone().with_meta(Meta::now()))?;
    files.push("best.json".into());
    Ok(TrainSummary { best, history, files })
}

fn write_manifest(out: &Path, command: &str, cfg: &RunConfig, mut files: Vec<String>) -> Result<(), CliError> {
    files.push("manifest.json".into());
    files.sort();
    let manifest = Manifest {
        meta: Meta::now(),
        command: command.to_string(),
        config_hash: cfg.hash(),
        files,
    };
    save_json(&out.join("manifest.json"), &manifest)
}

fn train_command(cfg: &RunConfig, corpus: &Corpus, out: &Path) -> Result<serde_json::Value, CliError> {
    create_dir(out)?;
    let summary = run_training(&cfg.train, corpus, out)?;
    write_manifest(out, "train", cfg, summary.files)?;
    let last = summary.history.last().expect("at least one epoch");
    Ok(json!({
        "seed": cfg.train.seed,
        "best_epoch": summary.best.epoch,
        "best_valid_macro_auroc": summary.best.valid_score,
        "final_valid_macro_auroc": last.valid_macro_auroc,
        "final_mean_loss": last.mean_loss,
    }))
}

/// Evaluation result with the probabilities it was computed from.
#[derive(Debug, Clone)]
pub struct ModelEvaluation {
    pub report: EvalReport,
    pub labels: Vec<String>,
    /// One row per study, one column per label.
    pub probabilities: Vec<Vec<f64>>,
}

/// Zero-shot evaluation of `models` (averaged when several) on `studies`.
pub fn evaluate_models(
    models: &[ModelFile],
    studies: &[&Study],
    opts: &EvalOptions,
    temperature: InferenceTemperature,
) -> Result<ModelEvaluation, CliError> {
    let first = models.first().ok_or(TrainError::NoModels)?;
    if studies.is_empty() {
        return Err(CliError::Usage("the evaluated split has no studies".into()));
    }
    for m in &models[1..] {
        if m.labels != first.labels || m.vocabulary != first.vocabulary {
            return Err(CliError::Usage(
                "ensembled models must share labels and vocabulary".into(),
            ));
        }
    }
    let prompts = build_prompts(&first.labels).map_err(TrainError::from)?;
    let params: Vec<_> = models.iter().map(|m| &m.params).collect();
    let probabilities = ensemble_predict_all(
        &params,
        studies.iter().map(|s| s.image_features.as_slice()),
        &prompts,
        &first.vocabulary,
        temperature,
    )?;
    let truth: Vec<Vec<bool>> = studies
        .iter()
        .map(|s| first.labels.iter().map(|l| s.has_label(l)).collect())
        .collect();
    let mut report = evaluate(&first.labels, &probabilities, &truth, opts)?;

    let per_model = models
        .iter()
        .map(|m| alignment(studies.iter().copied(), &m.params, &m.vocabulary))
        .collect::<Result<Vec<_>, _>>()?;
    let k = per_model.len() as f64;
    report.alignment = Some(Alignment {
        sentence_level: per_model.iter().map(|a| a.sentence_level).sum::<f64>() / k,
        report_level: per_model.iter().map(|a| a.report_level).sum::<f64>() / k,
    });
    Ok(ModelEvaluation {
        report,
        labels: first.labels.clone(),
        probabilities,
    })
}

fn write_predictions(path: &Path, studies: &[&Study], labels: &[String], probs: &[Vec<f64>]) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(format!("cannot create {}", path.display())))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["study_id", "label", "probability", "ground_truth"])?;
    for (study, row) in studies.iter().zip(probs) {
        for (label, p) in labels.iter().zip(row) {
            let truth = if study.has_label(label) { "1" } else { "0" };
            w.write_record([study.id.as_str(), label.as_str(), &p.to_string(), truth])?;
        }
    }
    w.flush().map_err(io_err(format!("cannot write {}", path.display())))?;
    Ok(())
}

/// One configuration of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridCell {
    pub sampling: bool,
    pub relaxation: bool,
}

impl GridCell {
    pub const ALL: [GridCell; 4] = [
        GridCell {
            sampling: false,
            relaxation: false,
        },
        GridCell {
            sampling: true,
            relaxation: false,
        },
        GridCell {
            sampling: false,
            relaxation: true,
        },
        GridCell {
            sampling: true,
            relaxation: true,
        },
    ];

    pub fn name(&self) -> String {
        let flag = |b: bool| if b { "on" } else { "off" };
        format!("sampling_{}-relaxation_{}", flag(self.sampling), flag(self.relaxation))
    }

    pub fn apply(&self, cfg: &TrainConfig, seed: u64) -> TrainConfig {
        let mut cfg = cfg.clone();
        cfg.sampling_enabled = self.sampling;
        cfg.sim.enabled = self.relaxation;
        cfg.seed = seed;
        cfg
    }
}

/// Test-split scores of one grid cell and seed; NaN when the run failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRun {
    pub sampling: bool,
    pub relaxation: bool,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub macro_auroc: f64,
    pub sentence_alignment: f64,
    pub report_alignment: f64,
    pub per_label_auroc: Vec<f64>,
    /// Files written, relative to the ablation output directory.
    #[serde(skip)]
    pub files: Vec<String>,
}

fn ablation_run(
    cell: GridCell,
    seed: u64,
    cfg: &RunConfig,
    corpus: &Corpus,
    dir: &Path,
) -> Result<AblationRun, CliError> {
    create_dir(dir)?;
    let train_cfg = cell.apply(&cfg.train, seed);
    let summary = run_training(&train_cfg, corpus, dir)?;
    let test = corpus.split(Split::Test);
    let opts = EvalOptions {
        bootstrap: None,
        ..cfg.eval
    };
    let eval = evaluate_models(
        std::slice::from_ref(&summary.best),
        &test,
        &opts,
        train_cfg.inference_temperature,
    )?;
    save_json(&dir.join("test_report.json"), &eval.report)?;
    let prefix = format!("{}/seed_{seed}", cell.name());
    let files = summary
        .files
        .iter()
        .map(String::as_str)
        .chain(["test_report.json"])
        .map(|f| format!("{prefix}/{f}"))
        .collect();
    let align = eval.report.alignment.expect("alignment computed");
    Ok(AblationRun {
        sampling: cell.sampling,
        relaxation: cell.relaxation,
        seed,
        best_epoch: Some(summary.best.epoch),
        macro_auroc: eval.report.macro_metrics.auroc,
        sentence_alignment: align.sentence_level,
        report_alignment: align.report_level,
        per_label_auroc: eval
            .labels
            .iter()
            .map(|l| eval.report.per_label[l].auroc.unwrap_or(f64::NAN))
            .collect(),
        files,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Runs the 2x2 grid for seeds `train.seed + i`, `i < seeds`, writing each
/// run to `<out>/<cell>/seed_<s>` plus `ablation.csv` (mean and sample
/// standard deviation per configuration) and `ablation_runs.csv`.
pub fn ablate_command(
    cfg: &RunConfig,
    corpus: &Corpus,
    seeds: usize,
    out: &Path,
) -> Result<serde_json::Value, CliError> {
    if seeds == 0 {
        return Err(CliError::Usage("--seeds must be >= 1".into()));
    }
    create_dir(out)?;
    let labels = corpus.labels().to_vec();
    let jobs: Vec<(GridCell, u64)> = GridCell::ALL
        .iter()
        .flat_map(|&c| (0..seeds as u64).map(move |i| (c, cfg.train.seed + i)))
        .collect();
    let results: Vec<(GridCell, u64, Result<AblationRun, CliError>)> = jobs
        .par_iter()
        .map(|&(cell, seed)| {
            let dir = out.join(cell.name()).join(format!("seed_{seed}"));
            (cell, seed, ablation_run(cell, seed, cfg, corpus, &dir))
        })
        .collect();

    let mut failures = Vec::new();
    let runs: Vec<AblationRun> = results
        .into_iter()
        .map(|(cell, seed, r)| {
            r.unwrap_or_else(|e| {
                failures.push(format!("{} seed {seed}: {e}", cell.name()));
                AblationRun {
                    sampling: cell.sampling,
                    relaxation: cell.relaxation,
                    seed,
                    best_epoch: None,
                    macro_auroc: f64::NAN,
                    sentence_alignment: f64::NAN,
                    report_alignment: f64::NAN,
                    per_label_auroc: vec![f64::NAN; labels.len()],
                    files: Vec::new(),
                }
            })
        })
        .collect();

    let mut files = vec!["ablation.csv".to_string(), "ablation_runs.csv".to_string()];
    let path = out.join("ablation_runs.csv");
    let file = File::create(&path).map_err(io_err(format!("cannot create {}", path.display())))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header: Vec<String> = [
        "sampling",
        "relaxation",
        "seed",
        "best_epoch",
        "macro_auroc",
        "sentence_alignment",
        "report_alignment",
    ]
    .map(String::from)
    .to_vec();
    header.extend(labels.iter().map(|l| format!("auroc_{l}")));
    w.write_record(&header)?;
    for r in &runs {
        let mut row = vec![
            r.sampling.to_string(),
            r.relaxation.to_string(),
            r.seed.to_string(),
            r.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
            r.macro_auroc.to_string(),
            r.sentence_alignment.to_string(),
            r.report_alignment.to_string(),
        ];
        row.extend(r.per_label_auroc.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(format!("cannot write {}", path.display())))?;

    let path = out.join("ablation.csv");
    let file = File::create(&path).map_err(io_err(format!("cannot create {}", path.display())))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header: Vec<String> = ["sampling", "relaxation", "seeds", "failed"].map(String::from).to_vec();
    for name in labels
        .iter()
        .map(|l| format!("auroc_{l}"))
        .chain(["macro_auroc", "sentence_alignment", "report_alignment"].map(String::from))
    {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_std"));
    }
    w.write_record(&header)?;
    let mut rows = Vec::new();
    for cell in GridCell::ALL {
        let cell_runs: Vec<&AblationRun> = runs
            .iter()
            .filter(|r| r.sampling == cell.sampling && r.relaxation == cell.relaxation)
            .collect();
        let failed = cell_runs.iter().filter(|r| r.best_epoch.is_none()).count();
        let mut record = vec![
            cell.sampling.to_string(),
            cell.relaxation.to_string(),
            cell_runs.len().to_string(),
            failed.to_string(),
        ];
        let mut columns: Vec<Vec<f64>> = (0..labels.len())
            .map(|k| cell_runs.iter().map(|r| r.per_label_auroc[k]).collect())
            .collect();
        columns.push(cell_runs.iter().map(|r| r.macro_auroc).collect());
        columns.push(cell_runs.iter().map(|r| r.sentence_alignment).collect());
        columns.push(cell_runs.iter().map(|r| r.report_alignment).collect());
        let stats: Vec<(f64, f64)> = columns.iter().map(|c| mean_std(c)).collect();
        for (m, s) in &stats {
            record.push(m.to_string());
            record.push(s.to_string());
        }
        w.write_record(&record)?;
        let n = stats.len();
        rows.push(json!({
            "sampling": cell.sampling,
            "relaxation": cell.relaxation,
            "failed": failed,
            "macro_auroc_mean": stats[n - 3].0,
            "macro_auroc_std": stats[n - 3].1,
            "sentence_alignment_mean": stats[n - 2].0,
            "report_alignment_mean": stats[n - 1].0,
        }));
    }
    w.flush().map_err(io_err(format!("cannot write {}", path.display())))?;

    if !failures.is_empty() {
        let path = out.join("failures.log");
        fs::write(&path, failures.join("\n") + "\n").map_err(io_err(format!("cannot write {}", path.display())))?;
        files.push("failures.log".into());
        for f in &failures {
            log::error!("{f}");
        }
    }
    for r in &runs {
        files.extend(r.files.iter().cloned());
    }
    write_manifest(out, "ablate", cfg, files)?;
    // serde_json writes non-finite numbers as null.
    Ok(json!({ "seeds": seeds, "rows": rows, "failures": failures }))
}
