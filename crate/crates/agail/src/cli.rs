//! Command-line experiment harness: expert training, demonstration
//! recording, imitation runs, and cross-seed reporting.

use std::collections::BTreeMap;
use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::demos::{mask, record};
use crate::envs::make_env;
use crate::error::{AgailError, Result};
use crate::policy::StochasticPolicy;
use crate::trainer::{evaluate, train, Algorithm, IterationMetrics, TrainConfig};

pub const METRICS_HEADER: &str = "iter,true_return,composed_reward,d_bce,q_nll,kl,entropy,seconds";

#[derive(Parser)]
#[command(name = "agail", version, about = "Adversarial imitation learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a true-reward TRPO expert and save its checkpoint.
    Expert {
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 300)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stop early once the rollout return holds at this level.
        #[arg(long)]
        early_stop: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out a checkpointed policy and write masked demonstrations.
    Record {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 25)]
        episodes: usize,
        #[arg(long, default_value_t = 0.0)]
        eta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a training configuration and write per-iteration metrics.
    Train(TrainArgs),
    /// Summarize metrics files across seeds and emit plot data.
    Report {
        /// Metrics CSV files, one per seed.
        files: Vec<PathBuf>,
        /// Where to write the iteration-vs-return band data.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value config file; command-line flags win on conflict.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    demos: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Resolves a path under `AGAIL_OUT_DIR` when it is relative and the
/// variable is set.
fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match env::var_os("AGAIL_OUT_DIR") {
        Some(root) => PathBuf::from(root).join(path),
        None => path.to_path_buf(),
    }
}

fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| AgailError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: format!("expected key=value, got '{line}'"),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn parse_key<T: FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match kv.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| AgailError::Config(format!("bad value '{v}' for config key '{key}'"))),
    }
}

fn build_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let kv = match &args.config {
        Some(path) => parse_config_file(path)?,
        None => BTreeMap::new(),
    };
    for key in kv.keys() {
        let known = [
            "algo", "env", "eta", "alpha", "beta", "lambda1", "lambda2", "gamma", "batch",
            "iters", "seed", "demos", "neg_log_reward", "early_stop", "checkpoint_every",
            "max_kl",
        ];
        if !known.contains(&key.as_str()) {
            return Err(AgailError::Config(format!("unknown config key '{key}'")));
        }
    }

    let algo_name = args
        .algo
        .clone()
        .or_else(|| kv.get("algo").cloned())
        .ok_or_else(|| AgailError::Config("algorithm not given (--algo or algo=)".into()))?;
    let env_name = args
        .env
        .clone()
        .or_else(|| kv.get("env").cloned())
        .ok_or_else(|| AgailError::Config("environment not given (--env or env=)".into()))?;

    let mut cfg = TrainConfig::new(algo_name.parse()?, &env_name);
    cfg.eta = args.eta.or(parse_key(&kv, "eta")?).unwrap_or(0.0);
    if let Some(v) = parse_key(&kv, "alpha")? {
        cfg.alpha = v;
    }
    cfg.beta = parse_key(&kv, "beta")?;
    if let Some(v) = parse_key(&kv, "lambda1")? {
        cfg.lambda1 = v;
    }
    if let Some(v) = parse_key(&kv, "lambda2")? {
        cfg.lambda2 = v;
    }
    cfg.gamma = parse_key(&kv, "gamma")?;
    cfg.batch_timesteps = parse_key(&kv, "batch")?;
    cfg.iterations = args.iters.or(parse_key(&kv, "iters")?).unwrap_or(100);
    cfg.seed = args.seed.or(parse_key(&kv, "seed")?).unwrap_or(0);
    cfg.demo_path = args
        .demos
        .clone()
        .or_else(|| kv.get("demos").map(PathBuf::from));
    if let Some(v) = parse_key(&kv, "neg_log_reward")? {
        cfg.neg_log_reward = v;
    }
    cfg.early_stop_return = parse_key(&kv, "early_stop")?;
    if let Some(v) = parse_key(&kv, "checkpoint_every")? {
        cfg.checkpoint_every = v;
    }
    if let Some(v) = parse_key(&kv, "max_kl")? {
        cfg.trpo.max_kl = v;
    }
    Ok(cfg)
}

pub fn format_metrics_csv(metrics: &[IterationMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            m.iter, m.true_return, m.composed_reward, m.d_bce, m.q_nll, m.kl, m.entropy,
            m.seconds
        ));
    }
    out
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn write_manifest(cfg: &TrainConfig, out: &Path) -> Result<()> {
    let mut text = String::new();
    text.push_str(&format!("version={}\n", env!("CARGO_PKG_VERSION")));
    text.push_str(&format!("algo={}\n", cfg.algorithm));
    text.push_str(&format!("env={}\n", cfg.env));
    text.push_str(&format!("eta={}\n", cfg.eta));
    text.push_str(&format!("alpha={}\n", cfg.alpha));
    text.push_str(&format!("beta={}\n", cfg.resolved_beta()));
    text.push_str(&format!("lambda1={}\n", cfg.lambda1));
    text.push_str(&format!("lambda2={}\n", cfg.lambda2));
    text.push_str(&format!("batch={}\n", cfg.resolved_batch_timesteps()));
    text.push_str(&format!("iters={}\n", cfg.iterations));
    text.push_str(&format!("seed={}\n", cfg.seed));
    text.push_str(&format!("metrics={}\n", out.display()));
    if let Some(demo) = &cfg.demo_path {
        text.push_str(&format!("demos={}\n", demo.display()));
        text.push_str(&format!("demos_sha256={}\n", sha256_file(demo)?));
    }
    fs::write(manifest_path(out), text)?;
    Ok(())
}

fn manifest_path(metrics: &Path) -> PathBuf {
    let mut os = metrics.as_os_str().to_os_string();
    os.push(".manifest");
    PathBuf::from(os)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = {
        let mut cfg = build_train_config(args)?;
        let out = resolve_out(&args.out);
        cfg.checkpoint_prefix = Some(out.clone());
        cfg
    };
    let out = resolve_out(&args.out);
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_manifest(&cfg, &out)?;
    let outcome = train(&cfg)?;
    fs::write(&out, format_metrics_csv(&outcome.metrics))?;
    let env = make_env(&cfg.env)?;
    let (mean, std) = evaluate(&outcome.policy, env.as_ref(), 100, cfg.seed ^ 0xe7a1)?;
    println!(
        "{} {} seed {} final return {:.1} +- {:.1} over 100 episodes",
        cfg.algorithm, cfg.env, cfg.seed, mean, std
    );
    Ok(())
}

fn cmd_expert(
    env_name: &str,
    iterations: usize,
    seed: u64,
    early_stop: Option<f64>,
    out: &Path,
) -> Result<()> {
    let out = resolve_out(out);
    let mut cfg = TrainConfig::new(Algorithm::Trpo, env_name);
    cfg.iterations = iterations;
    cfg.seed = seed;
    cfg.early_stop_return = early_stop;
    let outcome = train(&cfg)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    outcome.policy.save(&out, env_name, "trpo")?;
    let env = make_env(env_name)?;
    let (mean, std) = evaluate(&outcome.policy, env.as_ref(), 100, seed ^ 0xe7a1)?;
    println!(
        "expert {} seed {} return {:.1} +- {:.1} over 100 episodes, checkpoint {}",
        env_name,
        seed,
        mean,
        std,
        out.display()
    );
    Ok(())
}

fn cmd_record(
    checkpoint: &Path,
    env_name: &str,
    episodes: usize,
    eta: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let out = resolve_out(out);
    let (policy, ckpt_env, _) = StochasticPolicy::load(checkpoint)?;
    if ckpt_env != env_name {
        return Err(AgailError::Config(format!(
            "checkpoint was trained on '{ckpt_env}', asked to record on '{env_name}'"
        )));
    }
    let env = make_env(env_name)?;
    let trajectories = record(&policy, env.as_ref(), episodes, seed)?;
    let demos = mask(&trajectories, env_name, eta, seed)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    demos.save(&out)?;
    println!(
        "recorded {} episodes ({} states, {} demonstrated actions) to {}",
        demos.trajectories.len(),
        demos.total_states(),
        demos.present_action_count(),
        out.display()
    );
    Ok(())
}

/// Parsed metrics file: per-iteration true returns.
struct SeedCurve {
    path: PathBuf,
    returns: Vec<f64>,
}

pub fn parse_metrics_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let perr = |line: usize, message: String| AgailError::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    match lines.next() {
        Some((_, header)) if header == METRICS_HEADER => {}
        _ => return Err(perr(1, "bad or missing metrics header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.parse()
                    .map_err(|_| perr(i + 1, format!("bad number '{f}'")))
            })
            .collect::<Result<_>>()?;
        if fields.len() != 8 {
            return Err(perr(i + 1, format!("expected 8 fields, got {}", fields.len())));
        }
        rows.push(fields);
    }
    Ok(rows)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn cmd_report(files: &[PathBuf], out: Option<&Path>) -> Result<()> {
    if files.is_empty() {
        return Err(AgailError::Input("report: no metrics files given".into()));
    }

    // Refuse to aggregate runs from different environments or algorithms.
    let mut run_ids: Vec<Option<(String, String)>> = Vec::new();
    for f in files {
        let manifest = manifest_path(f);
        if manifest.exists() {
            let kv = parse_config_file(&manifest)?;
            run_ids.push(Some((
                kv.get("env").cloned().unwrap_or_default(),
                kv.get("algo").cloned().unwrap_or_default(),
            )));
        } else {
            run_ids.push(None);
        }
    }
    let known: Vec<&(String, String)> = run_ids.iter().flatten().collect();
    if let Some(first) = known.first() {
        for (f, id) in files.iter().zip(&run_ids) {
            if let Some(id) = id {
                if id != *first {
                    return Err(AgailError::Input(format!(
                        "{} is a {}/{} run, others are {}/{}",
                        f.display(),
                        id.0,
                        id.1,
                        first.0,
                        first.1
                    )));
                }
            }
        }
    }

    let curves: Vec<SeedCurve> = files
        .iter()
        .map(|f| {
            let rows = parse_metrics_csv(f)?;
            Ok(SeedCurve {
                path: f.clone(),
                returns: rows.iter().map(|r| r[1]).collect(),
            })
        })
        .collect::<Result<_>>()?;
    for c in &curves {
        if c.returns.is_empty() {
            return Err(AgailError::Input(format!(
                "{} holds no iterations",
                c.path.display()
            )));
        }
    }

    println!("seed runs:");
    let finals: Vec<f64> = curves
        .iter()
        .map(|c| {
            let last = *c.returns.last().unwrap();
            println!("  {}: final return {:.2} ({} iterations)", c.path.display(), last, c.returns.len());
            last
        })
        .collect();
    let (mean, std) = mean_std(&finals);
    println!("final return over {} runs: {:.2} +- {:.2}", finals.len(), mean, std);

    if let Some(out) = out {
        let out = resolve_out(out);
        let min_len = curves.iter().map(|c| c.returns.len()).min().unwrap();
        let mut text = String::from("iter,mean_return,std_return,n_seeds\n");
        for i in 0..min_len {
            let vals: Vec<f64> = curves.iter().map(|c| c.returns[i]).collect();
            let (m, s) = mean_std(&vals);
            text.push_str(&format!("{i},{m},{s},{}\n", vals.len()));
        }
        fs::write(&out, text)?;
        println!("plot data written to {}", out.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Expert {
            env,
            iterations,
            seed,
            early_stop,
            out,
        } => cmd_expert(env, *iterations, *seed, *early_stop, out),
        Command::Record {
            checkpoint,
            env,
            episodes,
            eta,
            seed,
            out,
        } => cmd_record(checkpoint, env, *episodes, *eta, *seed, out),
        Command::Train(args) => cmd_train(args),
        Command::Report { files, out } => cmd_report(files, out.as_deref()),
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AgailError::Numerical(msg)) => {
            eprintln!("error: training diverged: {msg}");
            ExitCode::from(3)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn metrics_csv_round_trips() {
        let metrics = vec![
            IterationMetrics {
                iter: 0,
                true_return: 21.5,
                composed_reward: 0.51,
                d_bce: 0.69,
                q_nll: f64::NAN,
                kl: 0.0099,
                entropy: 0.693,
                seconds: 1.25,
            },
            IterationMetrics {
                iter: 1,
                true_return: 23.0,
                composed_reward: 0.52,
                d_bce: 0.68,
                q_nll: 0.45,
                kl: 0.0101,
                entropy: 0.690,
                seconds: 1.26,
            },
        ];
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, format_metrics_csv(&metrics)).unwrap();
        let rows = parse_metrics_csv(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0][1], 21.5);
        assert!(rows[0][4].is_nan());
        assert_eq!(rows[1][4], 0.45);
    }

    #[test]
    fn bad_header_is_parse_error() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "iter,stuff\n0,1\n").unwrap();
        assert!(matches!(
            parse_metrics_csv(&path),
            Err(AgailError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn config_file_and_overrides() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "algo=gail\nenv=cartpole\neta=0.25\niters=7\n# comment\n").unwrap();
        let args = TrainArgs {
            config: Some(path),
            algo: None,
            env: None,
            eta: Some(0.5),
            seed: Some(3),
            iters: None,
            demos: None,
            out: PathBuf::from("x.csv"),
        };
        let cfg = build_train_config(&args).unwrap();
        assert_eq!(cfg.algorithm, Algorithm::Gail);
        assert_eq!(cfg.env, "cartpole");
        assert_eq!(cfg.eta, 0.5); // flag wins over file
        assert_eq!(cfg.iterations, 7);
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn unknown_config_key_rejected() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "algo=trpo\nenv=cartpole\nbogus=1\n").unwrap();
        let args = TrainArgs {
            config: Some(path),
            algo: None,
            env: None,
            eta: None,
            seed: None,
            iters: None,
            demos: None,
            out: PathBuf::from("x.csv"),
        };
        assert!(build_train_config(&args).is_err());
    }

    #[test]
    fn manifest_sits_next_to_metrics() {
        assert_eq!(
            manifest_path(Path::new("runs/a.csv")),
            PathBuf::from("runs/a.csv.manifest")
        );
    }
}
