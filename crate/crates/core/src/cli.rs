//! Command-line front end of the `fairmine` binary.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analytics::{
    cpos_bound_check, mlpos_bound_check, mlpos_limit_fairness, pow_bound_check,
};
use crate::engine::{
    default_checkpoints, run_experiment, run_experiment_with_threads, ExperimentSpec,
    FairnessReport,
};
use crate::error::Error;
use crate::model::{
    FairnessParams, MlposMode, ProtocolKind, ProtocolSpec, ShareVector, DEFAULT_RACE_SCALE,
};
use crate::oracle::{
    cpos_exact_dist, mlpos_exact_dist, slpos_exact_dist, slpos_multi_exact_dist, ExactDist,
};
use crate::protocols::{drift, slpos_win_probs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable capping the number of trial worker threads.
pub const THREADS_ENV: &str = "FAIRMINE_THREADS";

/// Shares that miss a unit sum by more than this are normalized with a warning.
const SHARE_WARN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(
    name = "fairmine",
    version,
    about = "Incentive fairness of PoW and PoS proposer selection"
)]
#[command(args_override_self = true)]
struct Cli {
    /// Plain-text `key=value` file pre-populating subcommand flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write a CSV or JSON report.
    Simulate(SimulateArgs),
    /// Evaluate a sufficiency bound for (ε, δ)-fairness.
    Bounds(BoundsArgs),
    /// Analytic SL-PoS win probabilities.
    Winprob(WinprobArgs),
    /// Exact small-horizon distribution of the subject's reward fraction.
    Oracle(OracleArgs),
    /// Limiting ML-PoS fair probability from the Beta limit law.
    Limit(LimitArgs),
    /// Two-miner SL-PoS drift at stake share z.
    Drift(DriftArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MlposModeArg {
    Proportional,
    Race,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct SimulateArgs {
    #[arg(long, value_parser = parse_protocol)]
    protocol: ProtocolKind,
    /// Comma-separated shares; `rest:K` splits the remainder among K miners.
    #[arg(long)]
    shares: String,
    /// Proposer reward w per block or epoch.
    #[arg(long, default_value_t = 0.01)]
    reward: f64,
    /// Inflation reward v per epoch (C-PoS; default 0.1 there).
    #[arg(long)]
    inflation: Option<f64>,
    /// Shards per epoch (C-PoS; default 32 there).
    #[arg(long)]
    shards: Option<u32>,
    /// Withholding period k; 0 credits rewards immediately.
    #[arg(long, default_value_t = 0)]
    withhold: u64,
    /// Horizon in blocks (epochs for C-PoS).
    #[arg(long)]
    blocks: u64,
    #[arg(long, default_value_t = crate::engine::DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Index of the miner whose fairness is reported.
    #[arg(long, default_value_t = 0)]
    subject: usize,
    #[arg(long, value_enum, default_value_t = MlposModeArg::Proportional)]
    mlpos_mode: MlposModeArg,
    #[arg(long, default_value_t = DEFAULT_RACE_SCALE)]
    race_scale: f64,
    /// Comma-separated checkpoints; defaults to {1,2,5}×10^j plus the horizon.
    #[arg(long)]
    checkpoints: Option<String>,
    /// Report path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format; inferred from the `--out` extension when absent.
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// Also write every trial's subject λ per checkpoint as CSV.
    #[arg(long, value_name = "FILE")]
    dump_trials: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Theorem {
    Pow,
    Mlpos,
    Cpos,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct BoundsArgs {
    #[arg(long, value_enum)]
    theorem: Theorem,
    #[arg(long)]
    a: f64,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Horizon; omitted means the limit n → ∞.
    #[arg(long)]
    n: Option<u64>,
    #[arg(long, default_value_t = 0.01)]
    reward: f64,
    #[arg(long, default_value_t = 0.1)]
    inflation: f64,
    #[arg(long, default_value_t = 32)]
    shards: u32,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct WinprobArgs {
    #[arg(long)]
    shares: String,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct OracleArgs {
    #[arg(long, value_parser = parse_protocol)]
    protocol: ProtocolKind,
    /// Subject share in a two-miner game.
    #[arg(long, conflicts_with = "shares")]
    a: Option<f64>,
    /// Multi-miner shares (SL-PoS only); the subject is miner 0.
    #[arg(long)]
    shares: Option<String>,
    #[arg(long, default_value_t = 0.01)]
    reward: f64,
    #[arg(long, default_value_t = 0.1)]
    inflation: f64,
    #[arg(long, default_value_t = 2)]
    shards: u32,
    #[arg(long)]
    blocks: u64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct LimitArgs {
    #[arg(long)]
    a: f64,
    #[arg(long, default_value_t = 0.01)]
    reward: f64,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct DriftArgs {
    #[arg(long)]
    z: f64,
}

fn parse_protocol(s: &str) -> Result<ProtocolKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure of a subcommand, split by exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NoConvergence { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

/// Parses a share list such as `0.2,0.3,0.5` or `0.2,rest:9`. Sums away from 1
/// are normalized; deviations above 1e-9 produce a warning on `warn`.
pub fn parse_shares(text: &str, warn: &mut dyn Write) -> Result<ShareVector, Error> {
    let mut explicit = Vec::new();
    let mut rest: Option<usize> = None;
    for token in text.split(',').map(str::trim) {
        if let Some(count) = token.strip_prefix("rest:") {
            if rest.is_some() {
                return Err(Error::InvalidShares("`rest:` given twice".into()));
            }
            let k: usize = count
                .parse()
                .map_err(|_| Error::InvalidShares(format!("bad competitor count `{count}`")))?;
            if k == 0 {
                return Err(Error::InvalidShares(
                    "`rest:` needs at least one miner".into(),
                ));
            }
            rest = Some(k);
        } else {
            let v: f64 = token
                .parse()
                .map_err(|_| Error::InvalidShares(format!("bad share `{token}`")))?;
            explicit.push(v);
        }
    }
    if let Some(k) = rest {
        let used: f64 = explicit.iter().sum();
        let remaining = 1.0 - used;
        if remaining.is_nan() || remaining <= 0.0 {
            return Err(Error::InvalidShares(format!(
                "explicit shares sum to {used}, nothing left for `rest:{k}`"
            )));
        }
        explicit.extend(std::iter::repeat(remaining / k as f64).take(k));
    }
    let sum: f64 = explicit.iter().sum();
    if explicit.iter().all(|v| v.is_finite() && *v > 0.0)
        && (sum - 1.0).abs() > SHARE_WARN_TOLERANCE
    {
        let _ = writeln!(warn, "warning: shares sum to {sum}; normalizing");
    }
    ShareVector::normalized(&explicit)
}

fn parse_checkpoints(text: &str) -> Result<Vec<u64>, Error> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::InvalidExperiment(format!("bad checkpoint `{t}`")))
        })
        .collect()
}

/// Reads a `key=value` config file into `--key value` argument pairs.
fn config_args(path: &Path) -> Result<Vec<OsString>, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Failure::Usage(format!(
                "{}:{}: expected key=value",
                path.display(),
                lineno + 1
            )));
        };
        out.push(OsString::from(format!(
            "--{}",
            key.trim().replace('_', "-")
        )));
        out.push(OsString::from(value.trim()));
    }
    Ok(out)
}

/// Splices config-file pairs between the subcommand and its flags so that
/// explicit flags win.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let mut config = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            let path = it
                .next()
                .ok_or_else(|| Failure::Usage("--config needs a file".into()))?;
            config = Some(PathBuf::from(path));
        } else if let Some(path) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(path));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let pairs = config_args(&path)?;
    let sub = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 2)
        .unwrap_or(rest.len());
    let mut out = rest[..sub].to_vec();
    out.extend(pairs);
    out.extend_from_slice(&rest[sub..]);
    Ok(out)
}

fn fmt_list(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn threads_from_env() -> Result<Option<usize>, Failure> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::Usage(format!(
                "{THREADS_ENV}={v} is not a positive integer"
            ))),
        },
        _ => Ok(None),
    }
}

fn build_experiment(args: &SimulateArgs, warn: &mut dyn Write) -> Result<ExperimentSpec, Error> {
    let shares = parse_shares(&args.shares, warn)?;
    let protocol = match args.protocol {
        ProtocolKind::Cpos => ProtocolSpec::cpos(
            args.reward,
            args.inflation.unwrap_or(0.1),
            args.shards.unwrap_or(32),
            args.blocks,
        ),
        kind => {
            let mut p = ProtocolSpec::new(kind, args.reward, args.blocks);
            if let Some(v) = args.inflation {
                p.inflation_reward = v;
            }
            if let Some(s) = args.shards {
                p.shards = s;
            }
            p
        }
    };
    let mode = match args.mlpos_mode {
        MlposModeArg::Proportional => MlposMode::Proportional,
        MlposModeArg::Race => MlposMode::GeometricRace {
            race_scale: args.race_scale,
        },
    };
    let protocol = protocol
        .with_withholding(args.withhold)
        .with_mlpos_mode(mode);
    let checkpoints = match &args.checkpoints {
        Some(text) => parse_checkpoints(text)?,
        None => default_checkpoints(args.blocks),
    };
    let spec = ExperimentSpec {
        protocol,
        shares,
        fairness: FairnessParams::new(args.epsilon, args.delta, args.subject)?,
        trials: args.trials,
        base_seed: args.seed,
        checkpoints,
    };
    spec.validate()?;
    if spec.trials < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: spec.trials,
        });
    }
    Ok(spec)
}

fn trials_csv(spec: &ExperimentSpec, report: &FairnessReport) -> String {
    let mut out = String::from("trial");
    for t in &spec.checkpoints {
        out.push_str(&format!(",{t}"));
    }
    out.push('\n');
    for trial in 0..spec.trials {
        out.push_str(&trial.to_string());
        for column in &report.samples {
            out.push_str(&format!(",{}", column[trial]));
        }
        out.push('\n');
    }
    out
}

fn cmd_simulate(
    args: &SimulateArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), Failure> {
    let spec = build_experiment(args, err)?;
    let threads = threads_from_env()?;
    let report = match threads {
        Some(n) => run_experiment_with_threads(&spec, n)?,
        None => run_experiment(&spec)?,
    };
    let format = args.format.unwrap_or_else(|| match &args.out {
        Some(p)
            if p.extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("json")) =>
        {
            OutputFormat::Json
        }
        _ => OutputFormat::Csv,
    });
    let body = match format {
        OutputFormat::Csv => report.to_csv(),
        OutputFormat::Json => report.to_json() + "\n",
    };
    match &args.out {
        Some(path) => fs::write(path, body).map_err(|e| io_failure(path, e))?,
        None => out
            .write_all(body.as_bytes())
            .map_err(|e| Failure::Runtime(e.to_string()))?,
    }
    if let Some(path) = &args.dump_trials {
        fs::write(path, trials_csv(&spec, &report)).map_err(|e| io_failure(path, e))?;
    }
    let _ = writeln!(err, "convergence time: {}", report.convergence_time);
    Ok(())
}

fn cmd_bounds(args: &BoundsArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let result = match args.theorem {
        Theorem::Pow => pow_bound_check(args.n, args.a, args.epsilon, args.delta)?,
        Theorem::Mlpos => mlpos_bound_check(args.n, args.reward, args.a, args.epsilon, args.delta)?,
        Theorem::Cpos => cpos_bound_check(
            args.n,
            args.reward,
            args.inflation,
            args.shards,
            args.a,
            args.epsilon,
            args.delta,
        )?,
    };
    let json = serde_json::to_string_pretty(&result).expect("bound results serialize");
    writeln!(out, "{json}").map_err(|e| Failure::Runtime(e.to_string()))
}

fn cmd_oracle(args: &OracleArgs, err: &mut dyn Write) -> Result<ExactDist, Failure> {
    if let Some(text) = &args.shares {
        if args.protocol != ProtocolKind::Slpos {
            return Err(Failure::Usage(
                "--shares is only supported for slpos".into(),
            ));
        }
        let shares = parse_shares(text, err)?;
        return Ok(slpos_multi_exact_dist(
            shares.as_slice(),
            args.reward,
            args.blocks,
            0,
        )?);
    }
    let a = args
        .a
        .ok_or_else(|| Failure::Usage("oracle needs --a or --shares".into()))?;
    Ok(match args.protocol {
        ProtocolKind::Mlpos => mlpos_exact_dist(a, args.reward, args.blocks)?,
        ProtocolKind::Slpos => slpos_exact_dist(a, args.reward, args.blocks)?,
        ProtocolKind::Cpos => {
            cpos_exact_dist(a, args.reward, args.inflation, args.shards, args.blocks)?
        }
        other => return Err(Failure::Usage(format!("no exact oracle for {other}"))),
    })
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let write_err = |e: std::io::Error| Failure::Runtime(e.to_string());
    match cli.command {
        Command::Simulate(args) => cmd_simulate(&args, out, err),
        Command::Bounds(args) => cmd_bounds(&args, out),
        Command::Winprob(args) => {
            let shares = parse_shares(&args.shares, err)?;
            let probs = slpos_win_probs(&shares)?;
            writeln!(out, "{}", fmt_list(&probs)).map_err(write_err)
        }
        Command::Oracle(args) => {
            let dist = cmd_oracle(&args, err)?;
            writeln!(out, "lambda,prob").map_err(write_err)?;
            for (x, p) in dist.support.iter().zip(&dist.probs) {
                writeln!(out, "{x},{p}").map_err(write_err)?;
            }
            Ok(())
        }
        Command::Limit(args) => {
            let fair = mlpos_limit_fairness(args.a, args.reward, args.epsilon)?;
            let json = serde_json::json!({ "fair": fair, "unfair": 1.0 - fair });
            writeln!(out, "{}", serde_json::to_string_pretty(&json).unwrap()).map_err(write_err)
        }
        Command::Drift(args) => writeln!(out, "{}", drift(args.z)?).map_err(write_err),
    }
}

/// Runs the command line `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let parsed = expand_config(args).and_then(|argv| {
        Cli::try_parse_from(argv).map_err(|e| {
            if e.use_stderr() {
                Failure::Usage(e.render().to_string())
            } else {
                // --help and --version
                let _ = write!(out, "{}", e.render());
                Failure::Runtime(String::new())
            }
        })
    });
    let result = match parsed {
        Ok(cli) => dispatch(cli, out, err),
        Err(Failure::Runtime(msg)) if msg.is_empty() => return EXIT_OK,
        Err(f) => Err(f),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(
                err,
                "error: {}",
                msg.trim_end().trim_start_matches("error: ")
            );
            EXIT_USAGE
        }
        Err(Failure::Runtime(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_RUNTIME
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut argv = vec!["fairmine"];
        argv.extend_from_slice(args);
        let code = run(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn share_shorthand() {
        let mut sink = Vec::new();
        let s = parse_shares("0.2,rest:4", &mut sink).unwrap();
        assert_eq!(s.len(), 5);
        assert!((s.as_slice()[3] - 0.2).abs() < 1e-15);
        assert!(sink.is_empty());
        let s = parse_shares("1,4", &mut sink).unwrap();
        assert_eq!(s.as_slice(), &[0.2, 0.8]);
        assert!(String::from_utf8(sink).unwrap().contains("normalizing"));
        let mut sink = Vec::new();
        assert!(parse_shares("0.2,x", &mut sink).is_err());
        assert!(parse_shares("1.2,rest:2", &mut sink).is_err());
        assert!(parse_shares("0.2,-0.1,0.9", &mut sink).is_err());
    }

    #[test]
    fn winprob_and_drift() {
        assert_eq!(
            run_capture(&["winprob", "--shares", "0.2,0.8"]).1,
            "0.125,0.875\n"
        );
        assert_eq!(run_capture(&["drift", "--z", "0.5"]).1, "0\n");
        assert_eq!(run_capture(&["drift", "--z", "1.5"]).0, EXIT_USAGE);
    }

    #[test]
    fn oracle_output() {
        let (code, out, _) = run_capture(&[
            "oracle",
            "--protocol",
            "mlpos",
            "--a",
            "0.5",
            "--reward",
            "1",
            "--blocks",
            "2",
        ]);
        assert_eq!(code, 0);
        assert_eq!(out, "lambda,prob\n0,0.375\n0.5,0.25\n1,0.375\n");
    }

    #[test]
    fn bounds_output() {
        let (code, out, _) = run_capture(&["bounds", "--theorem", "pow", "--a", "0.2"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["minimal_n"], 3745);
        let (_, out, _) = run_capture(&[
            "bounds",
            "--theorem",
            "mlpos",
            "--a",
            "0.2",
            "--reward",
            "0.01",
        ]);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["satisfied"], false);
        assert!((v["rhs"].as_f64().unwrap() - 0.00027).abs() < 0.00001);
        assert_eq!(
            run_capture(&["bounds", "--theorem", "cpos", "--a", "0.2", "--n", "0"]).0,
            EXIT_USAGE
        );
    }

    #[test]
    fn usage_errors() {
        assert_eq!(
            run_capture(&["simulate", "--protocol", "pow"]).0,
            EXIT_USAGE
        );
        assert_eq!(run_capture(&["nope"]).0, EXIT_USAGE);
        let (code, _, err) = run_capture(&[
            "simulate",
            "--protocol",
            "mlpos",
            "--shares",
            "0.2,0.8",
            "--reward",
            "0",
            "--blocks",
            "10",
        ]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.starts_with("error:"));
        assert_eq!(run_capture(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn config_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(
            &path,
            "# figure\nprotocol = pow\nshares=0.2,0.8\nblocks=50\ntrials=4\nseed=9\n",
        )
        .unwrap();
        let p = path.to_str().unwrap();
        let (code, from_file, _) = run_capture(&["--config", p, "simulate"]);
        assert_eq!(code, 0, "{from_file}");
        let (_, explicit, _) = run_capture(&[
            "simulate",
            "--protocol",
            "pow",
            "--shares",
            "0.2,0.8",
            "--blocks",
            "50",
            "--trials",
            "4",
            "--seed",
            "9",
        ]);
        assert_eq!(from_file, explicit);
        let (_, overridden, _) = run_capture(&["simulate", "--config", p, "--blocks", "20"]);
        assert_eq!(
            overridden.lines().last().unwrap().split(',').next(),
            Some("20")
        );
    }
}
