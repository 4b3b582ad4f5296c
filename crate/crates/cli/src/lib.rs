//! The `mhyper` command line: train, evaluate, ablate, corrupt datasets,
//! generate the toy graph and run the self-check suites.
//!
//! Exit codes are a stable contract: 0 success, 1 runtime failure, 2 usage,
//! configuration or input-data error. Outputs are bit-reproducible only with
//! `--threads 1`.

pub mod config;
pub mod manifest;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mhyper::checkpoint;
use mhyper::diagnostics;
use mhyper::eval::{aggregate, evaluate, per_relation, per_relation_table, EvalOptions, Metrics};
use mhyper::hypercomplex::{StructureConstants, QUATERNION};
use mhyper::kgdata::synthetic::{toy_dataset, ToySpec};
use mhyper::kgdata::{
    corrupt_dataset, load_dataset, write_dataset, write_mhft, CorruptionMode, Dataset, FilterIndex, Triple,
    TEST_FILE, TRAIN_FILE, VALID_FILE,
};
use mhyper::model::{Ablation, Features, ModelParams, ScoreVariant};
use mhyper::train::{model_dims, train, EpochRecord, Precision};
use mhyper::{Error, Real};

pub use config::RunConfig;
pub use manifest::RunManifest;

pub const CHECKPOINT_FILE: &str = "checkpoint.mhck";
pub const EPOCH_LOG_FILE: &str = "epochs.tsv";
pub const VALID_LOG_FILE: &str = "valid.tsv";
pub const METRICS_FILE: &str = "metrics.txt";
pub const TOY_CONFIG_FILE: &str = "toy.conf";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or input data; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Failure while running; exit code 1.
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Parse { .. } | Error::Format { .. } => 2,
                Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => 2,
                _ => 1,
            },
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn parse_with<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "mhyper", version = manifest_version(), about = "Multi-modal knowledge graph completion in biquaternion space")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn manifest_version() -> &'static str {
    Box::leak(manifest::version_string().into_boxed_str())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a config file; writes checkpoint, logs, metrics and manifest.
    Train(TrainArgs),
    /// Filtered MRR / Hit@K of a checkpoint.
    Eval(EvalArgs),
    /// Evaluate a checkpoint with one component switched off.
    Ablate(AblateArgs),
    /// Write a corrupted copy of a dataset.
    Corrupt(CorruptArgs),
    /// Run the algebra, score-expansion, gradient and metric suites.
    Selfcheck(SelfcheckArgs),
    /// Write the 50-entity synthetic dataset and a matching config.
    Toy(ToyArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's dataset directory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "mhyper-run")]
    pub out: PathBuf,
    /// Checkpoint path; defaults to `<out>/checkpoint.mhck`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Worker threads; more than 1 gives up bit-reproducibility.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, value_parser = parse_with::<Precision>)]
    pub precision: Option<Precision>,
}

#[derive(Debug, Args)]
pub struct EvalTarget {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_parser = parse_with::<ScoreVariant>, default_value = "full")]
    pub variant: ScoreVariant,
    /// Which split to rank.
    #[arg(long, value_parser = ["test", "valid"], default_value = "test")]
    pub split: String,
    /// Also print MRR per relation.
    #[arg(long)]
    pub per_relation: bool,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, value_parser = parse_with::<Precision>, default_value = "f32")]
    pub precision: Precision,
    /// Also write the printed report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub target: EvalTarget,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub target: EvalTarget,
    #[arg(long, value_parser = parse_with::<Ablation>)]
    pub mode: Ablation,
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_parser = parse_with::<CorruptionMode>)]
    pub mode: CorruptionMode,
    #[arg(long)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test hook: flip the sign of structure constant `a,b,c` (zero becomes
    /// one) before running the score-expansion suites.
    #[arg(long, hide = true, value_parser = parse_triple_index)]
    pub corrupt_structure: Option<[usize; 3]>,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = ToySpec::default().seed)]
    pub seed: u64,
}

fn parse_triple_index(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad index `{p}`")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] if a < 4 && b < 4 && c < 4 => Ok([a, b, c]),
        _ => Err("expected three basis indices in 0..4, e.g. 1,2,3".into()),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Errors go to stderr.
pub fn main_with_args<I, S>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a.target, Ablation::None, out),
        Command::Ablate(a) => cmd_eval(&a.target, a.mode, out),
        Command::Corrupt(a) => cmd_corrupt(&a),
        Command::Selfcheck(a) => cmd_selfcheck(&a, out),
        Command::Toy(a) => cmd_toy(&a),
    }
}

/// Runs `f` on a dedicated pool of `threads` workers.
fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> CliResult<R> {
    if threads == 0 {
        return Err(CliError::Usage("--threads must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn load_dataset_at(dir: &Path) -> CliResult<Dataset> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("dataset directory not found: {}", dir.display())));
    }
    Ok(load_dataset(dir)?)
}

fn split_triples<'a>(ds: &'a Dataset, split: &str) -> &'a [Triple] {
    match split {
        "valid" => &ds.graph.valid,
        _ => &ds.graph.test,
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(d) = &a.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(t) = a.threads {
        cfg.threads = t;
    }
    if let Some(p) = a.precision {
        cfg.train.precision = p;
    }
    cfg.train.parallel_eval = cfg.threads > 1;
    cfg.validate()?;
    if cfg.threads > 1 {
        log::warn!("--threads {} > 1: results are not guaranteed bit-reproducible", cfg.threads);
    }
    let dataset = cfg
        .dataset
        .clone()
        .ok_or_else(|| CliError::Usage("no dataset: set `dataset` in the config or pass --dataset".into()))?;
    let ds = load_dataset_at(&dataset)?;
    let mut manifest = RunManifest::new("train", cfg.train.seed, &dataset, cfg.snapshot())?;

    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let ckpt_path = a.checkpoint.clone().unwrap_or_else(|| a.out.join(CHECKPOINT_FILE));
    match cfg.train.precision {
        Precision::F32 => train_typed::<f32>(&cfg, &ds, &a.out, &ckpt_path, &mut manifest, out),
        Precision::F64 => train_typed::<f64>(&cfg, &ds, &a.out, &ckpt_path, &mut manifest, out),
    }
}

fn train_typed<T: Real>(
    cfg: &RunConfig,
    ds: &Dataset,
    out_dir: &Path,
    ckpt_path: &Path,
    manifest: &mut RunManifest,
    out: &mut dyn Write,
) -> CliResult<()> {
    let log_path = out_dir.join(EPOCH_LOG_FILE);
    let file = fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut log = BufWriter::new(file);
    writeln!(log, "{}", EpochRecord::HEADER).map_err(|e| io_err(&log_path, e))?;
    let mut write_failed = None;
    let outcome = manifest.phase("train", || {
        with_threads(cfg.threads, || {
            train::<T>(ds, &cfg.train, &mut |rec| {
                let line = rec.log_line();
                log::info!("{line}");
                if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                    write_failed.get_or_insert(e);
                }
            })
        })
    })??;
    if let Some(e) = write_failed {
        return Err(io_err(&log_path, e));
    }
    log.flush().map_err(|e| io_err(&log_path, e))?;
    drop(log);

    checkpoint::save(ckpt_path, &outcome.best)?;

    let valid_path = out_dir.join(VALID_LOG_FILE);
    let mut valid = String::from("epoch\tvalid_MRR\n");
    for r in &outcome.history {
        if let Some(m) = r.valid_mrr {
            valid.push_str(&format!("{}\t{:.6}\n", r.epoch, m));
        }
    }
    write_file(&valid_path, &valid)?;

    let metrics_path = out_dir.join(METRICS_FILE);
    let report = if ds.graph.test.is_empty() {
        String::from("no test triples\n")
    } else {
        let metrics = manifest.phase("test_eval", || -> CliResult<Metrics> {
            let feats = Features::<T>::from_modalities(&ds.features)?;
            let filter = FilterIndex::build(&ds.graph);
            let opts = EvalOptions {
                ablation: cfg.train.ablation,
                parallel: cfg.threads > 1,
                ..Default::default()
            };
            let ranks = with_threads(cfg.threads, || {
                evaluate(&outcome.best, &feats, &ds.graph, &filter, &ds.graph.test, opts)
            })??;
            Ok(aggregate(&ranks)?)
        })?;
        format!("{}\n", metrics.block())
    };
    write_file(&metrics_path, &report)?;
    out.write_all(report.as_bytes()).map_err(|e| io_err(Path::new("<stdout>"), e))?;

    for p in [ckpt_path, &log_path, &valid_path, &metrics_path] {
        manifest.add_output(p)?;
    }
    manifest.write(out_dir)?;
    match outcome.aborted {
        Some(msg) => Err(CliError::Runtime(format!(
            "training aborted: {msg}; last good checkpoint written to {}",
            ckpt_path.display()
        ))),
        None => Ok(()),
    }
}

/// Loads a checkpoint and checks it against the dataset's vocabulary and
/// feature widths.
pub fn load_compatible<T: Real>(path: &Path, ds: &Dataset) -> CliResult<ModelParams<T>> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("checkpoint not found: {}", path.display())));
    }
    let params = checkpoint::load::<T>(path)?;
    let found = params.dims;
    let want = model_dims(ds, found.d);
    if found != want {
        return Err(CliError::Usage(format!(
            "checkpoint {} does not fit the dataset: expected entities={} relations={} visual_dim={} textual_dim={}, \
             found entities={} relations={} visual_dim={} textual_dim={}",
            path.display(),
            want.num_entities,
            want.num_relations,
            want.visual_dim,
            want.textual_dim,
            found.num_entities,
            found.num_relations,
            found.visual_dim,
            found.textual_dim
        )));
    }
    Ok(params)
}

/// Evaluation report text: the metric block and, if asked, the
/// per-relation table.
pub fn eval_report<T: Real>(
    params: &ModelParams<T>,
    ds: &Dataset,
    triples: &[Triple],
    opts: EvalOptions,
    per_rel: bool,
) -> CliResult<String> {
    let feats = Features::<T>::from_modalities(&ds.features)?;
    let filter = FilterIndex::build(&ds.graph);
    let ranks = evaluate(params, &feats, &ds.graph, &filter, triples, opts)?;
    let mut report = format!("{}\n", aggregate(&ranks)?.block());
    if per_rel {
        report.push_str(&per_relation_table(&per_relation(&ds.graph, &ranks)?));
    }
    Ok(report)
}

pub fn cmd_eval(a: &EvalTarget, ablation: Ablation, out: &mut dyn Write) -> CliResult<()> {
    let ds = load_dataset_at(&a.dataset)?;
    let triples = split_triples(&ds, &a.split);
    if triples.is_empty() {
        return Err(CliError::Usage(format!("the {} split of {} is empty", a.split, a.dataset.display())));
    }
    let opts = EvalOptions {
        ablation,
        variant: a.variant,
        parallel: a.threads > 1,
    };
    if ablation == Ablation::NoNoise {
        log::warn!("no-noise only changes training; evaluation matches the full model");
    }
    let report = with_threads(a.threads, || match a.precision {
        Precision::F32 => load_compatible::<f32>(&a.checkpoint, &ds)
            .and_then(|p| eval_report(&p, &ds, triples, opts, a.per_relation)),
        Precision::F64 => load_compatible::<f64>(&a.checkpoint, &ds)
            .and_then(|p| eval_report(&p, &ds, triples, opts, a.per_relation)),
    })??;
    if let Some(path) = &a.out {
        write_file(path, &report)?;
    }
    out.write_all(report.as_bytes()).map_err(|e| io_err(Path::new("<stdout>"), e))
}

fn copy_file(from: &Path, to: &Path) -> CliResult<()> {
    fs::copy(from, to).map(|_| ()).map_err(|e| io_err(from, e))
}

/// Writes the corrupted dataset. Files the corruption leaves unchanged are
/// copied byte for byte.
pub fn cmd_corrupt(a: &CorruptArgs) -> CliResult<()> {
    let ds = load_dataset_at(&a.dataset)?;
    let (graph, features) = corrupt_dataset(&ds.graph, &ds.features, a.mode, a.ratio, a.seed)?;
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    if graph == ds.graph {
        for name in [TRAIN_FILE, VALID_FILE, TEST_FILE] {
            copy_file(&a.dataset.join(name), &a.out.join(name))?;
        }
    } else {
        graph.write_tsv_dir(&a.out)?;
    }
    for (new, old) in features.iter().zip(&ds.features) {
        let name = new.modality.file_name();
        let src = a.dataset.join(name);
        if new == old && src.is_file() {
            copy_file(&src, &a.out.join(name))?;
        } else {
            write_mhft(&a.out.join(name), new.dim, &new.to_records(&graph))?;
        }
    }
    log::info!(
        "{} train triples kept of {}",
        graph.train_original().len(),
        ds.graph.train_original().len()
    );
    Ok(())
}

pub fn cmd_selfcheck(a: &SelfcheckArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut sc: StructureConstants = QUATERNION;
    if let Some([i, j, k]) = a.corrupt_structure {
        let v = sc.get(i, j, k);
        sc.set(i, j, k, if v == 0 { 1 } else { -v });
        log::warn!("structure constant ({i},{j},{k}) corrupted for this run");
    }
    let reports = diagnostics::run_all_with(a.seed, &sc);
    let mut failed = 0;
    for r in &reports {
        writeln!(out, "{r}").map_err(|e| io_err(Path::new("<stdout>"), e))?;
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} of {} suites failed", reports.len())));
    }
    Ok(())
}

/// Config matching the toy acceptance run: default hyperparameters at
/// `d = 16` with batches small enough to give several steps per epoch.
pub fn toy_config_text() -> String {
    "# 50-entity synthetic graph; defaults otherwise\n\
     dataset = \".\"\n\
     d = 16\n\
     batch_size = 32\n\
     epochs = 200\n\
     eval_every = 10\n\
     seed = 0\n"
        .into()
}

pub fn cmd_toy(a: &ToyArgs) -> CliResult<()> {
    let spec = ToySpec {
        seed: a.seed,
        ..ToySpec::default()
    };
    let ds = toy_dataset(&spec);
    write_dataset(&a.out, &ds)?;
    write_file(&a.out.join(TOY_CONFIG_FILE), &toy_config_text())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::Runtime("x".into()).exit_code(), 1);
        assert_eq!(CliError::from(Error::Config("x".into())).exit_code(), 2);
        assert_eq!(
            CliError::from(Error::NonFinite {
                what: "loss",
                table: "t".into()
            })
            .exit_code(),
            1
        );
    }

    #[test]
    fn triple_index_parser() {
        assert_eq!(parse_triple_index("1,2,3").unwrap(), [1, 2, 3]);
        assert!(parse_triple_index("1,2").is_err());
        assert!(parse_triple_index("1,2,4").is_err());
    }

    #[test]
    fn toy_config_parses() {
        let c = RunConfig::parse(&toy_config_text(), Path::new("/d"), Path::new("toy.conf")).unwrap();
        assert_eq!((c.train.d, c.train.batch_size, c.train.epochs), (16, 32, 200));
        assert_eq!(c.dataset, Some(PathBuf::from("/d/.")));
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
