//! `flame`: amplification curves, training runs and knob sweeps.

mod config;
mod error;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use flame_core::accountant::{amplification_curve, write_curve_csv};
use flame_core::{PrivacyParams, Protocol, RandomizerKind};
use flame_harness::dataset::{load_dataset, DataSource};
use flame_harness::experiment::Partition;
use flame_harness::model::LogReg;
use flame_harness::sweep::{mean_by_value, run_sweep, write_sweep_csv, Knob};
use flame_harness::{run_experiment, ExperimentResult};

use config::{load, parse_name, synthetic_source, AmplifyConfig, RunConfig, RunProtocol, SweepConfig};
use error::{CliError, Result};

/// A comma-separated flag value. Spelled as an alias so clap parses it as
/// one value instead of a repeated flag.
type List<T> = Vec<T>;

const DATA_DIR_ENV: &str = "FLAME_DATA_DIR";

#[derive(Parser)]
#[command(name = "flame", version, about = "Shuffle-model federated learning: accountant and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the one-round amplification curve as CSV.
    Amplify(AmplifyArgs),
    /// Train once and write JSON and CSV results.
    Train(TrainArgs),
    /// Train over a grid of one knob and several seeds.
    Sweep(SweepArgs),
}

fn comma_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|e| format!("`{t}`: {e}")))
        .collect()
}

fn name_list<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(parse_name).collect()
}

#[derive(Args)]
struct AmplifyArgs {
    /// JSON grid; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated protocols, e.g. `simple,double`.
    #[arg(long, value_parser = name_list::<Protocol>)]
    protocols: Option<List<Protocol>>,
    #[arg(long, value_parser = parse_name::<RandomizerKind>)]
    randomizer: Option<RandomizerKind>,
    #[arg(long)]
    d: Option<usize>,
    /// Comma-separated user counts.
    #[arg(long, value_parser = comma_list::<usize>)]
    n: Option<List<usize>>,
    #[arg(long, value_parser = comma_list::<f64>)]
    beta: Option<List<f64>>,
    #[arg(long)]
    pool_ratio: Option<f64>,
    #[arg(long)]
    b: Option<u32>,
    /// Comma-separated local budgets per perturbed coordinate.
    #[arg(long, value_parser = comma_list::<f64>)]
    eps: Option<List<f64>>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Run flags shared by `train` and `sweep`.
#[derive(Args)]
struct RunFlags {
    #[arg(long, value_parser = parse_name::<RunProtocol>)]
    protocol: Option<RunProtocol>,
    #[arg(long, value_parser = parse_name::<RandomizerKind>)]
    randomizer: Option<RandomizerKind>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    n_p: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    b: Option<u32>,
    #[arg(long)]
    eps_l: Option<f64>,
    #[arg(long)]
    eps_per_dim: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    shard_size: Option<usize>,
    #[arg(long, value_parser = parse_name::<Partition>)]
    partition: Option<Partition>,
    /// Per-round (epsilon, delta) of the Gaussian baselines, as `eps,delta`.
    #[arg(long, value_parser = comma_list::<f64>)]
    dp: Option<List<f64>>,
    /// MNIST directory holding the four IDX files. Falls back to
    /// `$FLAME_DATA_DIR`, then `data/mnist`.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Use a synthetic dataset with this many training samples instead.
    #[arg(long, conflicts_with = "data_dir")]
    synthetic: Option<usize>,
}

impl RunFlags {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { cfg.$f = v.into(); })*};
        }
        set!(protocol, randomizer, n, clip, b, seed, lr, shard_size, partition);
        set!(k, beta, n_p, l, nu, eps_l, eps_per_dim, epochs);
        if self.k.is_some() {
            cfg.beta = None;
        }
        if self.beta.is_some() {
            cfg.k = None;
        }
        if self.eps_l.is_some() {
            cfg.eps_per_dim = None;
        }
        if self.eps_per_dim.is_some() {
            cfg.eps_l = None;
        }
        if self.epochs.is_some() {
            cfg.rounds = None;
        }
        if let Some(dp) = &self.dp {
            let [e, d] = dp[..] else {
                return Err(CliError::Validation(format!("--dp takes `eps,delta`, got {} values", dp.len())));
            };
            cfg.dp = Some(PrivacyParams::new(e, d).map_err(|e| CliError::Validation(e.to_string()))?);
        }
        if let Some(train) = self.synthetic {
            cfg.data = Some(synthetic_source(train, cfg.seed));
        } else if let Some(dir) = &self.data_dir {
            cfg.data = Some(DataSource::Mnist { dir: dir.clone() });
        }
        Ok(())
    }
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    run: RunFlags,
    #[arg(long)]
    out_json: Option<PathBuf>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON sweep config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    run: RunFlags,
    #[arg(long, value_parser = parse_name::<Knob>)]
    knob: Option<Knob>,
    #[arg(long, value_parser = comma_list::<f64>)]
    values: Option<List<f64>>,
    #[arg(long, value_parser = comma_list::<u64>)]
    seeds: Option<List<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn amplify(args: AmplifyArgs) -> Result<()> {
    let mut cfg: AmplifyConfig = load(args.config.as_deref())?;
    if let Some(v) = args.protocols {
        cfg.protocols = v;
    }
    if let Some(v) = args.randomizer {
        cfg.randomizer = v;
    }
    if let Some(v) = args.d {
        cfg.d = v;
    }
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.beta {
        cfg.beta = v;
    }
    if let Some(v) = args.pool_ratio {
        cfg.pool_ratio = v;
    }
    if let Some(v) = args.b {
        cfg.b = v;
    }
    if let Some(v) = args.eps {
        cfg.eps_per_dim = v;
    }
    if let Some(v) = args.delta {
        cfg.delta_c = v;
    }
    if let Some(v) = args.out {
        cfg.output = v;
    }
    let mut rows = Vec::new();
    for base in cfg.bases()? {
        rows.extend(
            amplification_curve(&base, &cfg.eps_per_dim, cfg.delta_c)
                .map_err(|e| CliError::Validation(e.to_string()))?,
        );
    }
    write_curve_csv(&rows, create(&cfg.output)?).map_err(runtime)?;
    println!("wrote {} rows to {}", rows.len(), cfg.output.display());
    Ok(())
}

/// Loads the data and resolves the run against it.
fn prepare(cfg: &RunConfig) -> Result<(flame_harness::ExperimentConfig, flame_harness::dataset::DataSplit, DataSource)> {
    let env_dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
    let source = cfg.data_source(env_dir.as_deref());
    let data = load_dataset(&source).map_err(|e| CliError::Runtime(format!("cannot load dataset: {e}")))?;
    let exp = cfg.resolve(LogReg::for_data(&data.train).params())?;
    exp.validate(&data)?;
    Ok((exp, data, source))
}

/// The JSON file `train` writes: the resolved run plus its result.
#[derive(Serialize)]
struct TrainOutput<'a> {
    data: &'a DataSource,
    #[serde(flatten)]
    result: &'a ExperimentResult,
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg: RunConfig = load(args.config.as_deref())?;
    args.run.apply(&mut cfg)?;
    if let Some(p) = args.out_json {
        cfg.output.json = p;
    }
    if let Some(p) = args.out_csv {
        cfg.output.csv = p;
    }
    let (exp, data, source) = prepare(&cfg)?;
    let result = run_experiment(&exp, &data)?;
    let out = TrainOutput { data: &source, result: &result };
    let mut json = create(&cfg.output.json)?;
    serde_json::to_writer_pretty(&mut json, &out).map_err(runtime)?;
    result.write_csv(create(&cfg.output.csv)?)?;

    println!("final accuracy {:.4}", result.final_accuracy);
    for p in &result.epoch_privacy {
        println!("epoch {} privacy ({:.6}, {:e})", p.epoch + 1, p.epsilon, p.delta);
    }
    if let Some(e) = &result.report_error {
        println!("accountant: {e}");
    }
    println!("wall clock {:.1} s", result.wall_clock.as_secs_f64());
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut cfg: SweepConfig = load(args.config.as_deref())?;
    args.run.apply(&mut cfg.base)?;
    if let Some(k) = args.knob {
        cfg.knob = Some(k);
    }
    if let Some(v) = args.values {
        cfg.values = v;
    }
    if let Some(s) = args.seeds {
        cfg.seeds = s;
    }
    if let Some(o) = args.out {
        cfg.output = o;
    }
    let knob = cfg.knob.ok_or_else(|| CliError::Validation("`knob` is required".into()))?;
    if cfg.values.is_empty() {
        return Err(CliError::Validation("grid field `values` is empty".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(CliError::Validation("grid field `seeds` is empty".into()));
    }
    let (exp, data, _) = prepare(&cfg.base)?;
    for &v in &cfg.values {
        let probe = flame_harness::sweep::apply_knob(&exp, knob, v)?;
        probe.validate(&data)?;
    }
    let rows = run_sweep(&exp, knob, &cfg.values, &cfg.seeds, &data)?;
    write_sweep_csv(&rows, create(&cfg.output)?)?;
    for (v, acc) in mean_by_value(&rows) {
        println!("{} = {v}: mean final accuracy {acc:.4}", knob.name());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Amplify(a) => amplify(a),
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
