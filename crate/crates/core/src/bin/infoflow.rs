use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use infoflow::cli::{
    cmd_advise_n, cmd_analyze_dump, cmd_estimate, cmd_theory, cmd_toy, cmd_train, load_config, AdviseArgs, AnalyzeArgs,
    EstimateOptions, RunManifest, TheoryArgs, Toy, ToyArgs,
};
use infoflow::clustering_metrics::{BinRange, HistogramSpec, OutOfRange};
use infoflow::io_formats::ExperimentConfig;
use infoflow::{Error, Result};

#[derive(Parser)]
#[command(name = "infoflow", version, about = "Information flow in noisy neural networks")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// -v for progress, -vv for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Hidden-layer noise level of a stacked network.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_x: Option<usize>,
    #[arg(long)]
    n_mc: Option<usize>,
    /// Any config key, e.g. `--set estimator.cutoff=12`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut overrides = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(vec![format!("--set expects KEY=VALUE, got '{s}'")]))?;
            overrides.push((k.to_string(), v.to_string()));
        }
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                overrides.push((k.into(), v));
            }
        };
        put("seed", self.seed.map(|v| v.to_string()));
        put(
            "output_dir",
            self.out_dir.as_ref().map(|p| serde_json::Value::from(p.to_string_lossy()).to_string()),
        );
        put("train.epochs", self.epochs.map(|v| v.to_string()));
        put("train.learning_rate", self.learning_rate.map(|v| v.to_string()));
        put("network.beta", self.beta.map(|v| v.to_string()));
        put("estimator.n", self.n.map(|v| v.to_string()));
        put("estimator.n_x", self.n_x.map(|v| v.to_string()));
        put("estimator.n_mc", self.n_mc.map(|v| v.to_string()));
        load_config(&self.config, &overrides)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ToyKind {
    Tanh1,
    LeakyRelu2,
}

#[derive(Clone, Copy, ValueEnum)]
enum RangeMode {
    Error,
    Clamp,
    Overflow,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and save checkpoints and the loss trace.
    Train(ConfigArgs),
    /// MI and binned metrics for every saved checkpoint.
    Estimate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Comma-separated epochs (default: the configured schedule).
        #[arg(long, value_delimiter = ',')]
        at_epochs: Option<Vec<usize>>,
    },
    /// Risk bound, bias floor, k★ and MC error bound.
    Theory {
        /// Comma-separated dimensions.
        #[arg(long, value_delimiter = ',', required = true)]
        d: Vec<usize>,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 1e4)]
        n: f64,
        #[arg(long, default_value_t = 1000)]
        n_mc: usize,
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        /// Subgaussian class mean bound.
        #[arg(long, default_value_t = 0.0)]
        mu: f64,
        /// Subgaussian class scale.
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        /// Second-moment bound of the support (unit cube when absent).
        #[arg(long)]
        m_c: Option<f64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Train a toy network and trace I(X;T) per epoch.
    Toy {
        #[arg(value_enum)]
        which: ToyKind,
        #[arg(long)]
        epochs: Option<usize>,
        /// Comma-separated noise levels, one series each.
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        n_mc: Option<usize>,
        /// Comma-separated epochs for density snapshots.
        #[arg(long, value_delimiter = ',')]
        snapshots: Option<Vec<usize>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Clustering metrics of activation dumps.
    AnalyzeDump {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        bin_size: f64,
        /// `lo,hi` for every coordinate (default: observed min and max).
        #[arg(long, value_delimiter = ',', num_args = 2)]
        range: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value = "error")]
        out_of_range: RangeMode,
        #[arg(long, default_value_t = 50)]
        hist_bins: usize,
        #[arg(long)]
        max_distance: Option<f64>,
        #[arg(long, default_value_t = infoflow::clustering_metrics::DEFAULT_PAIR_CAP)]
        pair_cap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Smallest stable sample size by a halving ladder.
    AdviseN {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        layer: usize,
        /// Checkpoint epoch (default: the freshly initialized network).
        #[arg(long)]
        epoch: Option<usize>,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0.01)]
        target_tol: f64,
        #[arg(long, default_value_t = 4000)]
        cap: usize,
        #[arg(long, default_value_t = 50)]
        min_n: usize,
    },
}

fn report(m: &RunManifest) {
    // checkpoint blobs are summarized; everything else is listed
    let (ckpt, rest): (Vec<_>, Vec<_>) = m.outputs.iter().partition(|o| o.path.starts_with("checkpoints"));
    if !ckpt.is_empty() {
        let bytes: u64 = ckpt.iter().map(|o| o.bytes).sum();
        println!("wrote {} checkpoint files ({bytes} bytes)", ckpt.len());
    }
    for o in rest {
        println!("wrote {} ({} bytes)", o.path, o.bytes);
    }
    for n in &m.notes {
        println!("{n}");
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train(c) => report(&cmd_train(&c.load()?)?),
        Command::Estimate {
            cfg,
            checkpoint_dir,
            at_epochs,
        } => {
            let m = cmd_estimate(
                &cfg.load()?,
                &EstimateOptions {
                    checkpoint_dir,
                    epochs: at_epochs,
                },
            )?;
            report(&m);
            if !m.refusals.is_empty() {
                for r in &m.refusals {
                    eprintln!("refused: {r}");
                }
                return Ok(2);
            }
        }
        Command::Theory {
            d,
            beta,
            n,
            n_mc,
            epsilon,
            delta,
            mu,
            k,
            m_c,
            out_dir,
        } => {
            let (table, _) = cmd_theory(&TheoryArgs {
                dims: d,
                beta,
                n,
                n_mc,
                epsilon,
                delta,
                mu,
                k,
                m_c,
                out_dir,
            })?;
            print!("{table}");
        }
        Command::Toy {
            which,
            epochs,
            betas,
            learning_rate,
            n,
            n_mc,
            snapshots,
            seed,
            out_dir,
        } => {
            let which = match which {
                ToyKind::Tanh1 => Toy::Tanh1,
                ToyKind::LeakyRelu2 => Toy::LeakyRelu2,
            };
            let mut a = ToyArgs::defaults(which, out_dir);
            if let Some(e) = epochs {
                a.epochs = e;
                a.snapshots = vec![0, e / 2, e];
            }
            a.betas = betas.unwrap_or(a.betas);
            a.learning_rate = learning_rate.unwrap_or(a.learning_rate);
            a.n = n.unwrap_or(a.n);
            a.n_mc = n_mc.unwrap_or(a.n_mc);
            a.snapshots = snapshots.unwrap_or(a.snapshots);
            a.seed = seed;
            report(&cmd_toy(&a)?);
        }
        Command::AnalyzeDump {
            paths,
            bin_size,
            range,
            out_of_range,
            hist_bins,
            max_distance,
            pair_cap,
            seed,
            out_dir,
        } => {
            let args = AnalyzeArgs {
                bin_size,
                range: range.map(|r| BinRange::Fixed { lo: r[0], hi: r[1] }),
                out_of_range: match out_of_range {
                    RangeMode::Error => OutOfRange::Error,
                    RangeMode::Clamp => OutOfRange::Clamp,
                    RangeMode::Overflow => OutOfRange::Overflow,
                },
                histogram: HistogramSpec {
                    n_bins: hist_bins,
                    max_distance,
                    pair_cap,
                    seed,
                },
                out_dir,
            };
            report(&cmd_analyze_dump(&paths, &args)?);
        }
        Command::AdviseN {
            cfg,
            layer,
            epoch,
            checkpoint_dir,
            target_tol,
            cap,
            min_n,
        } => {
            let (n, m) = cmd_advise_n(
                &cfg.load()?,
                &AdviseArgs {
                    layer,
                    epoch,
                    checkpoint_dir,
                    target_tol,
                    cap,
                    min_n,
                },
            )?;
            report(&m);
            println!("{n}");
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
