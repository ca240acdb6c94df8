//! Pipeline driver: one binary, four subcommands.
//!
//! `gen-data` rolls out the scripted teacher and writes the demonstration
//! dataset, `train` fits offline agents to it, `eval` scores checkpoints
//! against the conservative baseline over paired scenes, and `report`
//! re-renders plots from existing CSV artifacts.
//!
//! Every subcommand resolves its configuration the same way: built-in
//! defaults, then the `--config` key=value file, then explicit flags. Each
//! run writes a `manifest.txt` capturing the fully resolved configuration
//! and a content hash of every file input, and nothing in the outputs
//! depends on wall time or absolute paths, so a fixed seed reproduces
//! byte-identical artifacts. Exit code is 0 only when every requested
//! artifact was written and read back successfully.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crossflow::config::{AppConfig, ConfigError};
use crossflow::dataset::{
    generate_dataset, read_rsu_csv_file, read_transitions, write_rsu_csv_file,
    write_transitions_file, DatasetError, ReplayBuffer,
};
use crossflow::env::DensitySpec;
use crossflow::eval::{
    read_metrics_csv_file, run_matrix, summarize, write_metrics_csv_file, write_summary_csv_file,
    AgentUnderTest, EvalError,
};
use crossflow::nn::{Checkpoint, NnError};
use crossflow::offline_rl::{
    aggregate_runs, derive_run_seeds, train, AggregateCurve, Algorithm, OfflineRlError,
    TrainedPolicy,
};
use crossflow::par::{map_ordered, Parallelism};
use crossflow::plot::{training_curves_svg, travel_time_boxes_svg, travel_time_change_svg};

#[derive(Parser)]
#[command(
    name = "crossflow",
    version,
    about = "Connected-intersection driving pipeline: demonstrations, offline training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Roll out the scripted teacher and write the demonstration dataset
    GenData(GenDataArgs),
    /// Train offline agents on a demonstration dataset
    Train(TrainArgs),
    /// Score trained checkpoints against the conservative baseline
    Eval(EvalArgs),
    /// Re-render plots from existing CSV artifacts
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Key=value config file; explicit flags override file values
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; every derived stream is a pure function of it
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    /// Demonstration episodes to roll out [default: from config, 500]
    #[arg(long, value_parser = positive_usize, value_name = "N")]
    episodes: Option<usize>,
    /// Traffic density of the generated episodes
    #[arg(long, value_enum, default_value_t = DensityArg::Mix)]
    density: DensityArg,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset file written by gen-data
    #[arg(long, value_name = "PATH", default_value = "runs/data/dataset.cfds")]
    data: PathBuf,
    /// Algorithm to train
    #[arg(long, value_enum, default_value_t = AlgoArg::Td3Bc)]
    algo: AlgoArg,
    /// Number of independent runs; run seeds derive from --seed [default: from config, 10]
    #[arg(long, value_parser = positive_usize, value_name = "N")]
    seeds: Option<usize>,
    /// Gradient steps per run [default: from config, 20000]
    #[arg(long, value_parser = positive_usize, value_name = "N")]
    max_steps: Option<usize>,
    /// Steps between evaluation points [default: from config, 400]
    #[arg(long, value_parser = positive_usize, value_name = "N")]
    eval_every: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// TD3+BC checkpoint to evaluate
    #[arg(long, value_name = "PATH", default_value = "runs/train-td3+bc/policy_run00.cfnn")]
    td3bc: PathBuf,
    /// BC checkpoint to evaluate
    #[arg(long, value_name = "PATH", default_value = "runs/train-bc/policy_run00.cfnn")]
    bc: PathBuf,
    /// Density classes to evaluate over
    #[arg(long, value_enum, default_value_t = DensityArg::Mix)]
    density: DensityArg,
    /// Paired episodes per (agent, density) cell [default: from config, 5]
    #[arg(long, value_parser = positive_usize, value_name = "N")]
    repeats: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Eval output directory holding metrics.csv
    #[arg(long, value_name = "DIR", default_value = "runs/eval")]
    eval_dir: PathBuf,
    /// Train output directory holding aggregate.csv; repeatable
    /// [default: runs/train-td3+bc and runs/train-bc, when present]
    #[arg(long = "train-dir", value_name = "DIR")]
    train_dirs: Vec<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlgoArg {
    Bc,
    Td3,
    #[value(name = "td3+bc")]
    Td3Bc,
}

impl AlgoArg {
    fn algorithm(self) -> Algorithm {
        match self {
            AlgoArg::Bc => Algorithm::Bc,
            AlgoArg::Td3 => Algorithm::Td3,
            AlgoArg::Td3Bc => Algorithm::Td3Bc,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DensityArg {
    Low,
    Middle,
    High,
    Mix,
}

impl DensityArg {
    /// Density for dataset generation; `Mix` cycles the three classes.
    fn spec(self) -> Option<DensitySpec> {
        match self {
            DensityArg::Low => Some(DensitySpec::Low),
            DensityArg::Middle => Some(DensitySpec::Middle),
            DensityArg::High => Some(DensitySpec::High),
            DensityArg::Mix => None,
        }
    }

    /// Density list for evaluation; `Mix` is all three classes.
    fn list(self) -> Vec<DensitySpec> {
        match self.spec() {
            Some(d) => vec![d],
            None => DensitySpec::CLASSES.to_vec(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            DensityArg::Low => "low",
            DensityArg::Middle => "middle",
            DensityArg::High => "high",
            DensityArg::Mix => "mix",
        }
    }
}

#[derive(Debug, Error)]
enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("training: {0}")]
    Train(#[from] OfflineRlError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] NnError),
    #[error("{0}")]
    Invalid(String),
}

fn main() {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::GenData(args) => cmd_gen_data(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Report(args) => cmd_report(args),
    };
    if let Err(e) = res {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

/// Defaults, then the config file, then nothing: flag overrides are applied
/// by each subcommand through [`AppConfig::set`] so the manifest sees them.
fn load_config(common: &Common) -> Result<AppConfig, CliError> {
    let mut cfg = AppConfig::default();
    if let Some(p) = &common.config {
        let text = read_text(p)?;
        cfg.apply_text(&text)?;
    }
    Ok(cfg)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `manifest.txt`: run identity first, then input hashes, then the
/// fully resolved configuration. No timestamps and no paths, so reruns with
/// the same seed hash identically.
fn write_manifest(
    dir: &Path,
    subcommand: &str,
    extra: &[(&str, String)],
    cfg: &AppConfig,
) -> Result<(), CliError> {
    let mut text = String::new();
    text.push_str("# crossflow run manifest\n");
    text.push_str(&format!("subcommand={subcommand}\n"));
    for (k, v) in extra {
        text.push_str(&format!("{k}={v}\n"));
    }
    text.push_str(&cfg.to_kv());
    write_bytes(&dir.join("manifest.txt"), text.as_bytes())
}

/// Flag parser for counts that must be at least 1.
fn positive_usize(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v == 0 {
        return Err("must be at least 1".into());
    }
    Ok(v)
}

fn run_mode() -> Parallelism {
    Parallelism::default()
}

fn cmd_gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.common)?;
    if let Some(n) = args.episodes {
        cfg.set("data.episodes", &n.to_string())?;
    }
    if cfg.data_episodes == 0 {
        return Err(CliError::Invalid("data.episodes must be at least 1".into()));
    }
    let out = args.common.out.unwrap_or_else(|| PathBuf::from("runs/data"));
    let seed = args.common.seed;

    let ds = generate_dataset(&cfg.env, cfg.data_episodes, seed, args.density.spec());
    create_dir(&out)?;
    let data_path = out.join("dataset.cfds");
    write_transitions_file(&data_path, &ds.transitions)?;
    write_rsu_csv_file(&out.join("log.csv"), &ds.log)?;

    // Validation: both artifacts must load back with matching sizes.
    let back = read_transitions(&read_bytes(&data_path)?[..])?;
    if back.len() != ds.transitions.len() {
        return Err(CliError::Invalid(format!(
            "dataset round-trip lost rows: wrote {}, read {}",
            ds.transitions.len(),
            back.len()
        )));
    }
    let log_back = read_rsu_csv_file(&out.join("log.csv"))?;
    if log_back.len() != ds.log.len() {
        return Err(CliError::Invalid(format!(
            "log round-trip lost rows: wrote {}, read {}",
            ds.log.len(),
            log_back.len()
        )));
    }

    write_manifest(
        &out,
        "gen-data",
        &[
            ("seed", seed.to_string()),
            ("density", args.density.name().to_string()),
            ("transitions", ds.transitions.len().to_string()),
        ],
        &cfg,
    )?;
    println!(
        "gen-data: {} episodes, {} transitions -> {}",
        ds.episodes.len(),
        ds.transitions.len(),
        out.display()
    );
    Ok(())
}

fn curve_csv(points: &[(usize, f64)]) -> String {
    let mut text = String::from("step,normalized_reward\n");
    for (step, v) in points {
        text.push_str(&format!("{step},{v}\n"));
    }
    text
}

fn parse_curve_csv(text: &str) -> Result<Vec<(usize, f64)>, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some("step,normalized_reward") {
        return Err(CliError::Invalid("curve csv: bad header".into()));
    }
    lines
        .map(|l| {
            let (s, v) = l
                .split_once(',')
                .ok_or_else(|| CliError::Invalid(format!("curve csv: bad row {l:?}")))?;
            match (s.parse(), v.parse()) {
                (Ok(s), Ok(v)) => Ok((s, v)),
                _ => Err(CliError::Invalid(format!("curve csv: bad row {l:?}"))),
            }
        })
        .collect()
}

fn aggregate_csv(agg: &AggregateCurve) -> String {
    let mut text = String::from("step,mean,ci_lo,ci_hi\n");
    for (i, step) in agg.steps.iter().enumerate() {
        match &agg.ci {
            Some((lo, hi)) => {
                text.push_str(&format!("{step},{},{},{}\n", agg.mean[i], lo[i], hi[i]))
            }
            None => text.push_str(&format!("{step},{},,\n", agg.mean[i])),
        }
    }
    text
}

fn parse_aggregate_csv(text: &str) -> Result<AggregateCurve, CliError> {
    let bad = |l: &str| CliError::Invalid(format!("aggregate csv: bad row {l:?}"));
    let mut lines = text.lines();
    if lines.next() != Some("step,mean,ci_lo,ci_hi") {
        return Err(CliError::Invalid("aggregate csv: bad header".into()));
    }
    let mut steps = Vec::new();
    let mut mean = Vec::new();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for l in lines {
        let cols: Vec<&str> = l.split(',').collect();
        let [s, m, l1, l2] = cols[..] else { return Err(bad(l)) };
        steps.push(s.parse().map_err(|_| bad(l))?);
        mean.push(m.parse().map_err(|_| bad(l))?);
        match (l1.is_empty(), l2.is_empty()) {
            (true, true) => {}
            (false, false) => {
                lo.push(l1.parse().map_err(|_| bad(l))?);
                hi.push(l2.parse().map_err(|_| bad(l))?);
            }
            _ => return Err(bad(l)),
        }
    }
    if !lo.is_empty() && lo.len() != steps.len() {
        return Err(CliError::Invalid("aggregate csv: mixed ci presence".into()));
    }
    let ci = (!lo.is_empty()).then_some((lo, hi));
    Ok(AggregateCurve { steps, mean, ci })
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.common)?;
    if let Some(n) = args.max_steps {
        cfg.set("train.max_steps", &n.to_string())?;
    }
    if let Some(n) = args.eval_every {
        cfg.set("train.eval_every", &n.to_string())?;
    }
    let mut train_cfg = cfg.train_config();
    let n_runs = args.seeds.unwrap_or(train_cfg.seeds.len());
    train_cfg.seeds = derive_run_seeds(args.common.seed, n_runs);
    train_cfg.parallelism = Parallelism::Sequential;
    train_cfg.validate()?;
    let algorithm = args.algo.algorithm();

    // The dataset is read and validated before anything is written, so a
    // corrupt input cannot leave partial outputs behind.
    let data_bytes = read_bytes(&args.data)?;
    let transitions = read_transitions(&data_bytes[..])?;
    let buffer = ReplayBuffer::new(transitions);

    let seeds = train_cfg.seeds.clone();
    // Runs are independent; parallelism goes over whole runs.
    let runs = map_ordered(run_mode(), seeds, |s| train(algorithm, &buffer, &train_cfg, s))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let agg = aggregate_runs(&runs)?;

    let out = args
        .common
        .out
        .unwrap_or_else(|| PathBuf::from(format!("runs/train-{}", algorithm.name())));
    create_dir(&out)?;
    for (i, run) in runs.iter().enumerate() {
        write_bytes(&out.join(format!("curve_run{i:02}.csv")), curve_csv(&run.curve).as_bytes())?;
        run.checkpoint.save(&out.join(format!("policy_run{i:02}.cfnn")))?;
    }
    write_bytes(&out.join("aggregate.csv"), aggregate_csv(&agg).as_bytes())?;

    // Validation: every artifact must load back.
    for (i, run) in runs.iter().enumerate() {
        let curve = parse_curve_csv(&read_text(&out.join(format!("curve_run{i:02}.csv")))?)?;
        if curve.len() != run.curve.len() {
            return Err(CliError::Invalid(format!("curve_run{i:02}.csv: row count changed")));
        }
        TrainedPolicy::load(&out.join(format!("policy_run{i:02}.cfnn")))?;
    }
    parse_aggregate_csv(&read_text(&out.join("aggregate.csv"))?)?;

    write_manifest(
        &out,
        "train",
        &[
            ("algo", algorithm.name().to_string()),
            ("seed", args.common.seed.to_string()),
            ("runs", n_runs.to_string()),
            ("input.dataset.sha256", sha256_hex(&data_bytes)),
        ],
        &cfg,
    )?;
    let last = agg.mean.last().copied().unwrap_or(f64::NAN);
    println!(
        "train: {} x{} runs, {} eval points, final mean reward {:.3} -> {}",
        algorithm.name(),
        runs.len(),
        agg.steps.len(),
        last,
        out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.common)?;
    if let Some(n) = args.repeats {
        cfg.set("eval.repeats", &n.to_string())?;
    }
    if cfg.eval_repeats == 0 {
        return Err(CliError::Invalid("eval.repeats must be at least 1".into()));
    }
    let seed = args.common.seed;

    // Load both checkpoints up front: a missing file fails before any write.
    let td3bc_bytes = read_bytes(&args.td3bc)?;
    let bc_bytes = read_bytes(&args.bc)?;
    let agents = vec![
        AgentUnderTest::from_checkpoint("td3+bc", Checkpoint::from_bytes(&td3bc_bytes)?)?,
        AgentUnderTest::from_checkpoint("bc", Checkpoint::from_bytes(&bc_bytes)?)?,
        AgentUnderTest::ConservativeBaseline,
    ];

    let densities = args.density.list();
    let rows = run_matrix(&cfg.env, &agents, &densities, cfg.eval_repeats, seed, run_mode())?;
    let cells = summarize(&rows)?;

    let out = args.common.out.unwrap_or_else(|| PathBuf::from("runs/eval"));
    let plots = out.join("plots");
    create_dir(&plots)?;
    write_metrics_csv_file(&out.join("metrics.csv"), &rows)?;
    write_summary_csv_file(&out.join("summary.csv"), &cells)?;
    write_bytes(
        &plots.join("travel_time_boxes.svg"),
        travel_time_boxes_svg(&cells, "Travel time by density").as_bytes(),
    )?;
    write_bytes(
        &plots.join("travel_time_change.svg"),
        travel_time_change_svg(&cells, "Travel time vs baseline").as_bytes(),
    )?;

    // Validation: metrics must round-trip, summary must keep its shape.
    let back = read_metrics_csv_file(&out.join("metrics.csv"))?;
    if back.len() != rows.len() {
        return Err(CliError::Invalid(format!(
            "metrics round-trip lost rows: wrote {}, read {}",
            rows.len(),
            back.len()
        )));
    }
    let summary_lines = read_text(&out.join("summary.csv"))?.lines().count();
    if summary_lines != cells.len() + 1 {
        return Err(CliError::Invalid("summary.csv: row count changed".into()));
    }

    write_manifest(
        &out,
        "eval",
        &[
            ("seed", seed.to_string()),
            ("density", args.density.name().to_string()),
            ("episodes", rows.len().to_string()),
            ("input.td3bc.sha256", sha256_hex(&td3bc_bytes)),
            ("input.bc.sha256", sha256_hex(&bc_bytes)),
        ],
        &cfg,
    )?;
    println!("eval: {} episodes over {} cells -> {}", rows.len(), cells.len(), out.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let metrics_path = args.eval_dir.join("metrics.csv");
    let metrics_bytes = read_bytes(&metrics_path)?;
    let rows = read_metrics_csv_file(&metrics_path)?;
    let cells = summarize(&rows)?;

    // Default train dirs are optional conveniences; explicit ones must exist.
    let explicit = !args.train_dirs.is_empty();
    let train_dirs: Vec<PathBuf> = if explicit {
        args.train_dirs
    } else {
        ["runs/train-td3+bc", "runs/train-bc"]
            .iter()
            .map(PathBuf::from)
            .filter(|d| d.join("aggregate.csv").is_file())
            .collect()
    };
    let mut series = Vec::new();
    let mut input_hashes = Vec::new();
    for dir in &train_dirs {
        let path = dir.join("aggregate.csv");
        let bytes = read_bytes(&path)?;
        let agg = parse_aggregate_csv(
            std::str::from_utf8(&bytes)
                .map_err(|_| CliError::Invalid(format!("{}: not utf-8", path.display())))?,
        )?;
        let label = manifest_algo(dir).unwrap_or_else(|| dir.display().to_string());
        input_hashes.push((label.clone(), sha256_hex(&bytes)));
        series.push((label, agg));
    }

    let out = args.common.out.unwrap_or_else(|| PathBuf::from("runs/report"));
    let plots = out.join("plots");
    create_dir(&plots)?;
    write_bytes(
        &plots.join("travel_time_boxes.svg"),
        travel_time_boxes_svg(&cells, "Travel time by density").as_bytes(),
    )?;
    write_bytes(
        &plots.join("travel_time_change.svg"),
        travel_time_change_svg(&cells, "Travel time vs baseline").as_bytes(),
    )?;
    let mut wrote = 2usize;
    if !series.is_empty() {
        write_bytes(
            &plots.join("training_curves.svg"),
            training_curves_svg(&series, "Training curves").as_bytes(),
        )?;
        wrote += 1;
    }

    let mut extra = vec![("input.metrics.sha256", sha256_hex(&metrics_bytes))];
    let hash_lines: Vec<(String, String)> = input_hashes
        .iter()
        .map(|(label, h)| (format!("input.curve.{label}.sha256"), h.clone()))
        .collect();
    extra.extend(hash_lines.iter().map(|(k, v)| (k.as_str(), v.clone())));
    write_manifest(&out, "report", &extra, &cfg)?;
    println!("report: {wrote} plots -> {}", out.display());
    Ok(())
}

/// The `algo=` line of a train manifest, if the directory has one.
fn manifest_algo(dir: &Path) -> Option<String> {
    let text = fs::read_to_string(dir.join("manifest.txt")).ok()?;
    text.lines().find_map(|l| l.strip_prefix("algo=")).map(str::to_string)
}
