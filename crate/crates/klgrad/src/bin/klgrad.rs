use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use klgrad::config::{load_json, EstimateConfig, ExactConfig, GradBiasConfig, SweepGrid};
use klgrad::error::exit;
use klgrad::experiments::{self, SweepStatus};
use klgrad::run_store::RunStore;
use klgrad::{Error, Result};
use klgrad_core::model::{exact_kl, exact_kl_grad, exact_kl_grad_dp, ENUMERATION_LIMIT};
use klgrad_core::trainer::TrainConfig;
use klgrad_core::{ArParams, EstimatorKind, KlPlacement};

#[derive(Parser, Debug)]
#[command(name = "klgrad", version, about = "Exact and Monte Carlo audits of KL estimators in policy gradients")]
struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for run records and CSV files.
    #[arg(long, global = true, env = "KLGRAD_OUT", default_value = "runs")]
    out: PathBuf,
    /// JSON config file; explicit flags take precedence over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact KL and its gradient between two models.
    Exact(ModelArgs),
    /// Monte Carlo KL estimates against the exact value.
    Estimate(EstimateArgs),
    /// Bias and variance of the KL gradient per estimator, placement and length.
    GradBias(GradBiasArgs),
    /// One training run.
    Train(TrainArgs),
    /// Grid of training runs from a config file; completed runs are skipped.
    Sweep {
        /// Grid file; same as --config.
        grid: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Policy parameters as `a,b`.
    #[arg(long, value_parser = parse_params)]
    policy: Option<ArParams>,
    /// Reference parameters as `a,b`.
    #[arg(long, value_parser = parse_params)]
    reference: Option<ArParams>,
    /// Sequence length T.
    #[arg(long)]
    seq_len: Option<usize>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// `k1`, `k3` or `both`.
    #[arg(long)]
    kind: Option<String>,
    /// Number of sampled sequences.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Debug)]
struct GradBiasArgs {
    #[arg(long, value_parser = parse_params)]
    policy: Option<ArParams>,
    #[arg(long, value_parser = parse_params)]
    reference: Option<ArParams>,
    /// Comma-separated estimators.
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    kinds: Option<Vec<EstimatorKind>>,
    /// Comma-separated placements (`reward`, `loss`, `both`).
    #[arg(long, value_delimiter = ',', value_parser = parse_placement)]
    placements: Option<Vec<KlPlacement>>,
    /// Comma-separated sequence lengths.
    #[arg(long, value_delimiter = ',')]
    lengths: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    n_per_trial: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: Option<EstimatorKind>,
    #[arg(long, value_parser = parse_placement)]
    placement: Option<KlPlacement>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    async_lag: Option<usize>,
    #[arg(long)]
    clip_eps: Option<f64>,
}

fn parse_params(s: &str) -> std::result::Result<ArParams, String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    ArParams::new(a, b).map_err(|e| e.to_string())
}

fn parse_kind(s: &str) -> std::result::Result<EstimatorKind, String> {
    s.parse().map_err(|e: klgrad_core::Error| e.to_string())
}

fn parse_placement(s: &str) -> std::result::Result<KlPlacement, String> {
    s.parse().map_err(|e: klgrad_core::Error| e.to_string())
}

fn base_config<T: Default + serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), load_json)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Exact(args) => cmd_exact(config, args),
        Command::Estimate(args) => {
            let mut cfg: EstimateConfig = base_config(config)?;
            if let Some(p) = args.model.policy {
                cfg.policy = p;
            }
            if let Some(p) = args.model.reference {
                cfg.reference = p;
            }
            if let Some(t) = args.model.seq_len {
                cfg.seq_len = t;
            }
            if let Some(n) = args.n {
                cfg.n = n;
            }
            if let Some(kind) = args.kind {
                cfg.kinds = match kind.as_str() {
                    "both" => EstimatorKind::ALL.to_vec(),
                    k => vec![parse_kind(k).map_err(Error::Validation)?],
                };
            }
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let pool = experiments::thread_pool(cli.jobs)?;
            let store = RunStore::open(&cli.out)?;
            let (out, rows) = experiments::run_estimate(&store, &cfg, &pool)?;
            for r in rows {
                println!(
                    "{} T={} n={} mean={:.6} se={:.6} exact={:.6}",
                    r.kind, r.horizon, r.n, r.mean, r.std_err, r.exact_kl
                );
            }
            println!("{}", out.dir.display());
            Ok(exit::SUCCESS)
        }
        Command::GradBias(args) => {
            let mut cfg: GradBiasConfig = base_config(config)?;
            let s = &mut cfg.sweep;
            if let Some(p) = args.policy {
                s.policy = p;
            }
            if let Some(p) = args.reference {
                s.reference = p;
            }
            if let Some(k) = args.kinds {
                s.kinds = k;
            }
            if let Some(p) = args.placements {
                s.placements = p;
            }
            if let Some(l) = args.lengths {
                s.lengths = l;
            }
            if let Some(t) = args.trials {
                s.trials = t;
            }
            if let Some(n) = args.n_per_trial {
                s.n_per_trial = n;
            }
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            cfg.sweep.validate()?;
            let pool = experiments::thread_pool(cli.jobs)?;
            let store = RunStore::open(&cli.out)?;
            let (out, reports) = experiments::run_grad_bias(&store, &cfg, &pool)?;
            for r in &reports {
                println!(
                    "{}/{} T={} bias_norm={:.3e} var_trace={:.3e}",
                    r.kind,
                    r.placement,
                    r.horizon,
                    r.bias_norm(),
                    r.var_trace()
                );
            }
            println!("{}", out.dir.display());
            Ok(exit::SUCCESS)
        }
        Command::Train(args) => {
            let mut cfg: TrainConfig = base_config(config)?;
            if let Some(k) = args.kind {
                cfg.kl.kind = k;
            }
            if let Some(p) = args.placement {
                cfg.kl.placement = p;
            }
            if let Some(b) = args.beta {
                cfg.kl.beta = b;
            }
            if let Some(s) = args.steps {
                cfg.steps = s;
            }
            if let Some(lr) = args.learning_rate {
                cfg.learning_rate = Some(lr);
            }
            if let Some(l) = args.async_lag {
                cfg.async_lag = l;
            }
            if let Some(e) = args.clip_eps {
                cfg.clip_eps = e;
            }
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let store = RunStore::open(&cli.out)?;
            let (out, outcome) = experiments::run_train(&store, &cfg)?;
            if let Some(last) = outcome.metrics.last() {
                println!(
                    "step={} reward={:.4} reverse_kl={:.6} entropy={:.4}",
                    last.step, last.mean_reward, last.exact_reverse_kl, last.entropy
                );
            }
            println!("{}", out.dir.display());
            if outcome.diverged {
                eprintln!("run diverged; metrics up to the failing step were written");
                return Ok(exit::COLLAPSE);
            }
            Ok(exit::SUCCESS)
        }
        Command::Sweep { grid } => {
            let path = grid
                .as_deref()
                .or(config)
                .ok_or_else(|| Error::Validation("sweep needs a grid file".into()))?;
            let mut grid: SweepGrid = load_json(path)?;
            if let Some(s) = cli.seed {
                grid.base.seed = s;
            }
            if grid.expand().is_empty() {
                log::warn!("sweep grid is empty; nothing to run");
                return Ok(exit::SUCCESS);
            }
            let pool = experiments::thread_pool(cli.jobs)?;
            let store = RunStore::open(&cli.out)?;
            let entries = experiments::run_sweep(&store, &grid, &pool)?;
            let mut diverged = false;
            for e in &entries {
                let status = match e.status {
                    SweepStatus::Completed => "completed",
                    SweepStatus::Skipped => "skipped",
                    SweepStatus::Diverged => {
                        diverged = true;
                        "diverged"
                    }
                };
                println!(
                    "{} {}/{} beta={} seed={} {status}",
                    e.run_id, e.config.kl.kind, e.config.kl.placement, e.config.kl.beta, e.config.seed
                );
            }
            Ok(if diverged { exit::COLLAPSE } else { exit::SUCCESS })
        }
    }
}

fn cmd_exact(config: Option<&Path>, args: ModelArgs) -> Result<i32> {
    let mut cfg: ExactConfig = base_config(config)?;
    if let Some(p) = args.policy {
        cfg.policy = p;
    }
    if let Some(p) = args.reference {
        cfg.reference = p;
    }
    if let Some(t) = args.seq_len {
        cfg.seq_len = t;
    }
    let t = cfg.seq_len;
    let kl = exact_kl(&cfg.policy, &cfg.reference, t)?;
    let grad = exact_kl_grad_dp(&cfg.policy, &cfg.reference, t)?;
    println!("kl_dp {kl:.12}");
    println!("grad_dp {:.12} {:.12}", grad[0], grad[1]);
    if t > ENUMERATION_LIMIT {
        println!("kl_enumeration unavailable");
        println!("grad_enumeration unavailable");
        eprintln!("T = {t} exceeds the enumeration limit of {ENUMERATION_LIMIT}");
        return Ok(exit::UNSUPPORTED);
    }
    let kl_enum = klgrad_core::enumeration::enumerated_kl(&cfg.policy, &cfg.reference, t)?;
    let grad_enum = exact_kl_grad(&cfg.policy, &cfg.reference, t)?;
    println!("kl_enumeration {kl_enum:.12}");
    println!("grad_enumeration {:.12} {:.12}", grad_enum[0], grad_enum[1]);
    Ok(exit::SUCCESS)
}
