//! Commands behind the `infoflow` binary. Every command writes its files and
//! a `manifest.json` listing them into one output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use ndarray::Array2;
use serde::Serialize;

use crate::clustering_metrics::{
    binned_entropy, entropy_slopes, pairwise_distance_histogram, per_unit_binned_entropy, BinRange, BinningSpec,
    DistanceHistogram, HistogramSpec, OutOfRange,
};
use crate::error::{Error, Result};
use crate::gmm_entropy::{mixture_log_density, GaussianMixture};
use crate::io_formats::{
    fmt_sig, read_activation_dump, read_checkpoint, write_checkpoint, write_csv, write_results_csv,
    ExperimentConfig, ResultRow,
};
use crate::noisy_net::{
    collect_activations, sample_layer, train, Activation, ActivationSet, CheckpointSchedule, LabeledDataset, LeakyReluToy,
    Loss, Mode, NoisyNet, TanhToy, TrainConfig,
};
use crate::rng::{derive_seed, TAG_TRAIN, TAG_UNCOND};
use crate::sp_estimator::{advise_n, estimate_mi, theory_report, AdviseConfig, EstimatorConfig, MIEstimate, TheoryInputs};
use crate::svg::{line_plot, Series};

#[derive(Debug, Clone, Serialize)]
pub struct Phase {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: String,
    pub config_hash: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    pub phases: Vec<Phase>,
    pub outputs: Vec<OutputFile>,
    pub notes: Vec<String>,
    /// MI requests declined because a layer is noiseless.
    pub refusals: Vec<String>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

struct Run {
    out_dir: PathBuf,
    manifest: RunManifest,
    files: Vec<PathBuf>,
}

impl Run {
    fn new(command: &str, out_dir: &Path, config_hash: Option<String>) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            manifest: RunManifest {
                command: command.into(),
                toolkit_version: env!("CARGO_PKG_VERSION").into(),
                config_hash,
                seeds: BTreeMap::new(),
                phases: Vec::new(),
                outputs: Vec::new(),
                notes: Vec::new(),
                refusals: Vec::new(),
            },
            files: Vec::new(),
        })
    }

    fn seed(&mut self, name: &str, v: u64) {
        self.manifest.seeds.insert(name.into(), v);
    }

    fn phase<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f();
        self.manifest.phases.push(Phase {
            name: name.into(),
            seconds: t.elapsed().as_secs_f64(),
        });
        out
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out_dir.join(rel)
    }

    fn record(&mut self, path: PathBuf) {
        self.files.push(path);
    }

    fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.record(path);
        Ok(())
    }

    fn csv(&mut self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let path = self.path(rel);
        write_csv(&path, header, rows)?;
        self.record(path);
        Ok(())
    }

    fn note(&mut self, s: String) {
        info!("{s}");
        self.manifest.notes.push(s);
    }

    /// Writes the manifest after checking every listed file is non-empty.
    fn finish(mut self) -> Result<RunManifest> {
        for p in &self.files {
            let bytes = fs::metadata(p).map_err(|e| Error::io(p, e))?.len();
            if bytes == 0 {
                return Err(Error::io(p, std::io::Error::other("output file is empty")));
            }
            let rel = p.strip_prefix(&self.out_dir).unwrap_or(p);
            self.manifest.outputs.push(OutputFile {
                path: rel.to_string_lossy().replace('\\', "/"),
                bytes,
            });
        }
        let path = self.path(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }
}

fn checked(cfg: &ExperimentConfig) -> Result<()> {
    let errs = cfg.validate();
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(errs))
    }
}

fn config_run(command: &str, cfg: &ExperimentConfig) -> Result<Run> {
    let mut run = Run::new(command, &cfg.output_dir, Some(cfg.hash()))?;
    let s = cfg.seeds();
    run.seed("master", cfg.seed);
    run.seed("init", s.init);
    run.seed("data", s.data);
    run.seed("train", s.train);
    run.seed("estimate", s.estimate);
    Ok(run)
}

fn load_data(cfg: &ExperimentConfig, net_input: usize) -> Result<(LabeledDataset, Option<LabeledDataset>)> {
    let seeds = cfg.seeds();
    let data = cfg.dataset.load(seeds.data)?;
    let test = cfg
        .test_dataset
        .as_ref()
        .map(|t| t.load(derive_seed(seeds.data, 1)))
        .transpose()?;
    for d in std::iter::once(&data).chain(test.as_ref()) {
        if d.input_dim() != net_input {
            return Err(Error::Config(vec![format!(
                "dataset has {} input columns but the network expects {net_input}",
                d.input_dim()
            )]));
        }
    }
    Ok((data, test))
}

fn loss_rows(losses: impl IntoIterator<Item = (usize, f64, Option<f64>)>) -> Vec<Vec<String>> {
    losses
        .into_iter()
        .map(|(e, tr, te)| vec![e.to_string(), fmt_sig(tr), te.map(fmt_sig).unwrap_or_default()])
        .collect()
}

/// Trains the configured network and writes `checkpoints/`, `loss.csv` and
/// `loss.svg`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunManifest> {
    checked(cfg)?;
    let seeds = cfg.seeds();
    let mut run = config_run("train", cfg)?;
    let net = cfg.network.build(seeds.init)?;
    let (data, test) = run.phase("load", || load_data(cfg, net.input_dim()))?;
    let tc = cfg.train_config(seeds.train);
    let outcome = run.phase("train", || train(&net, &data, test.as_ref(), &tc))?;
    let ckpt_dir = run.path("checkpoints");
    let files = run.phase("write", || {
        let mut files = Vec::new();
        for (epoch, n) in &outcome.checkpoints {
            files.extend(write_checkpoint(&ckpt_dir, *epoch, n)?);
        }
        Ok(files)
    })?;
    files.into_iter().for_each(|f| run.record(f));
    let rows = loss_rows(outcome.losses.iter().map(|l| (l.epoch, l.train_loss, l.test_loss)));
    run.csv("loss.csv", &["epoch", "train_loss", "test_loss"], &rows)?;
    let mut series = vec![Series::new(
        "train",
        outcome.losses.iter().map(|l| (l.epoch as f64, l.train_loss)).collect(),
    )];
    if test.is_some() {
        series.push(Series::new(
            "test",
            outcome
                .losses
                .iter()
                .filter_map(|l| l.test_loss.map(|t| (l.epoch as f64, t)))
                .collect(),
        ));
    }
    run.write("loss.svg", &line_plot("training loss", "epoch", "loss", &series))?;
    run.note(format!("{} checkpoints written", outcome.checkpoints.len()));
    run.finish()
}

#[derive(Debug, Clone, Default)]
pub struct EstimateOptions {
    /// Defaults to `<output_dir>/checkpoints`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Defaults to the configured checkpoint schedule.
    pub epochs: Option<Vec<usize>>,
}

/// Binning used for layer `layer` of `net` under the config's binning section.
pub fn layer_binning(cfg: &ExperimentConfig, net: &NoisyNet, layer: usize) -> BinningSpec {
    let l = &net.layers()[layer - 1];
    let (range, width) = match (&cfg.binning.range, l.activation) {
        (Some(r), _) => (r.clone(), None),
        (None, Activation::Tanh) => (BinRange::Fixed { lo: -1.0, hi: 1.0 }, Some(2.0)),
        (None, Activation::Sigmoid) => (BinRange::Fixed { lo: 0.0, hi: 1.0 }, Some(1.0)),
        (None, Activation::Relu) => (BinRange::ObservedMax, None),
        (None, _) => (BinRange::Observed, None),
    };
    let bin_size = cfg.binning.bin_size.unwrap_or_else(|| {
        let b = if l.beta > 0.0 { 10.0 * l.beta } else { 0.05 };
        width.map_or(b, |w| b.min(w))
    });
    BinningSpec {
        bin_size,
        range,
        out_of_range: cfg.binning.out_of_range,
    }
}

fn histogram_rows(epoch: usize, layer: usize, h: &DistanceHistogram) -> Vec<Vec<String>> {
    (0..h.within_counts.len())
        .map(|k| {
            vec![
                epoch.to_string(),
                layer.to_string(),
                fmt_sig(h.edges[k]),
                fmt_sig(h.edges[k + 1]),
                h.within_counts[k].to_string(),
                h.between_counts[k].to_string(),
            ]
        })
        .collect()
}

const HISTOGRAM_COLUMNS: [&str; 6] = ["epoch", "layer", "bin_lo", "bin_hi", "within", "between"];

fn estimator_seed(base: u64, epoch: usize, layer: usize) -> u64 {
    derive_seed(derive_seed(base, epoch as u64), layer as u64)
}

/// Per-epoch, per-layer MI and binned metrics over saved checkpoints.
/// Writes `results.csv` and `layer_<l>.svg`, plus `per_unit.csv` and
/// `histograms.csv` when configured. MI requests on noiseless layers are
/// listed in `refusals`; binned metrics are still produced.
pub fn cmd_estimate(cfg: &ExperimentConfig, opts: &EstimateOptions) -> Result<RunManifest> {
    checked(cfg)?;
    let seeds = cfg.seeds();
    let mut run = config_run("estimate", cfg)?;
    let ckpt_dir = opts.checkpoint_dir.clone().unwrap_or_else(|| run.path("checkpoints"));
    let epochs = opts
        .epochs
        .clone()
        .unwrap_or_else(|| cfg.train.checkpoints.epochs(cfg.train.epochs));
    if epochs.is_empty() {
        return Err(Error::Config(vec!["no checkpoint epochs selected".into()]));
    }
    let nets: Vec<(usize, NoisyNet)> = run.phase("load", || {
        epochs.iter().map(|&e| Ok((e, read_checkpoint(&ckpt_dir, e)?))).collect()
    })?;
    let (data, test) = load_data(cfg, nets[0].1.input_dim())?;
    let depth = nets[0].1.depth();
    if nets.iter().any(|(_, n)| n.depth() != depth) {
        return Err(Error::Config(vec!["checkpoints disagree on depth".into()]));
    }
    let est = &cfg.estimator;
    let bin_layers: Vec<usize> = est.bin_layers.clone().unwrap_or_else(|| (1..=depth).collect());
    let first = &nets[0].1;
    let noisy = |l: usize| est.beta_override.unwrap_or(first.beta(l)) > 0.0;
    let mut mi_layers: Vec<usize> = Vec::new();
    if est.mi {
        let requested: Vec<usize> = match &est.mi_layers {
            Some(v) => v.clone(),
            None => {
                let v: Vec<usize> = (1..=depth).filter(|&l| noisy(l)).collect();
                if v.is_empty() {
                    (1..=depth).collect()
                } else {
                    v
                }
            }
        };
        for l in requested {
            if noisy(l) {
                mi_layers.push(l);
            } else {
                let msg = Error::DeterministicLayer { layer: l }.to_string();
                warn!("{msg}");
                run.manifest.refusals.push(msg);
            }
        }
    }
    let mut layers: Vec<usize> = bin_layers.iter().chain(&mi_layers).copied().collect();
    layers.sort_unstable();
    layers.dedup();

    let loss = cfg.train.loss;
    let class_labels = data.labels.classes().map(<[i32]>::to_vec);
    let mut rows = Vec::new();
    let mut unit_rows = Vec::new();
    let mut hist_rows = Vec::new();
    let started = Instant::now();
    let mut loss_note = None;
    for (epoch, net) in &nets {
        // a fixed channel may have no loss that fits its labels; leave it blank
        let mut eval = |d: &LabeledDataset| match net.evaluate(d, loss) {
            Ok(v) => Some(v),
            Err(e) => {
                loss_note.get_or_insert_with(|| format!("loss columns left empty: {e}"));
                None
            }
        };
        let train_loss = eval(&data);
        let test_loss = test.as_ref().and_then(&mut eval);
        for &l in &layers {
            let mut row = ResultRow {
                epoch: *epoch,
                layer: l,
                train_loss,
                test_loss,
                ..ResultRow::default()
            };
            if bin_layers.contains(&l) {
                let acts = collect_activations(net, &data, l, Mode::Deterministic)?;
                let spec = layer_binning(cfg, net, l);
                row.binned_entropy = Some(binned_entropy(acts.values.view(), &spec)?);
                if cfg.binning.per_unit {
                    for (u, h) in per_unit_binned_entropy(acts.values.view(), &spec)?.iter().enumerate() {
                        unit_rows.push(vec![epoch.to_string(), l.to_string(), (u + 1).to_string(), fmt_sig(*h)]);
                    }
                }
                if let (Some(hs), Some(labels)) = (&cfg.histogram, &class_labels) {
                    let h = pairwise_distance_histogram(acts.values.view(), labels, hs)?;
                    hist_rows.extend(histogram_rows(*epoch, l, &h));
                }
            }
            if mi_layers.contains(&l) {
                let ec = EstimatorConfig {
                    n: est.n,
                    n_x: est.n_x,
                    n_mc: est.n_mc,
                    seed: estimator_seed(seeds.estimate, *epoch, l),
                    cutoff: est.cutoff,
                    keep_per_x: false,
                    beta_override: est.beta_override,
                };
                let mi = estimate_mi(net, &data, l, &ec)?;
                fill_mi(&mut row, &mi);
            }
            rows.push(row);
        }
    }
    if let Some(n) = loss_note {
        run.note(n);
    }
    run.manifest.phases.push(Phase {
        name: "estimate".into(),
        seconds: started.elapsed().as_secs_f64(),
    });
    let path = run.path("results.csv");
    write_results_csv(&path, &rows)?;
    run.record(path);
    for &l in &layers {
        let pick = |f: fn(&ResultRow) -> Option<f64>| -> Vec<(f64, f64)> {
            rows.iter()
                .filter(|r| r.layer == l)
                .filter_map(|r| f(r).map(|v| (r.epoch as f64, v)))
                .collect()
        };
        let mut series = Vec::new();
        if mi_layers.contains(&l) {
            series.push(Series::new("I_SP", pick(|r| r.i_sp)));
            series.push(Series::new("lower", pick(|r| r.lb)).dashed());
            series.push(Series::new("upper", pick(|r| r.ub)).dashed());
        }
        if bin_layers.contains(&l) {
            series.push(Series::new("H(Bin)", pick(|r| r.binned_entropy)));
        }
        run.write(
            &format!("layer_{l}.svg"),
            &line_plot(&format!("layer {l}"), "epoch", "nats", &series),
        )?;
    }
    if cfg.binning.per_unit {
        run.csv("per_unit.csv", &["epoch", "layer", "unit", "entropy"], &unit_rows)?;
    }
    if !hist_rows.is_empty() {
        run.csv("histograms.csv", &HISTOGRAM_COLUMNS, &hist_rows)?;
    }
    run.finish()
}

fn fill_mi(row: &mut ResultRow, mi: &MIEstimate) {
    row.i_sp = Some(mi.i_sp);
    row.h_uncond = Some(mi.h_unconditional.value);
    row.h_cond_mean = Some(mi.h_conditional_mean);
    row.lb = Some(mi.lower_bound);
    row.ub = Some(mi.upper_bound);
    row.mc_se = Some(mi.combined_std_error);
}

#[derive(Debug, Clone)]
pub struct TheoryArgs {
    pub dims: Vec<usize>,
    pub beta: f64,
    pub n: f64,
    pub n_mc: usize,
    pub epsilon: f64,
    pub delta: f64,
    /// Subgaussian class parameters.
    pub mu: f64,
    pub k: f64,
    /// Second-moment support bound for the MC MSE; unit cube when absent.
    pub m_c: Option<f64>,
    pub out_dir: PathBuf,
}

const THEORY_COLUMNS: [&str; 14] = [
    "d",
    "beta",
    "n",
    "n_mc",
    "epsilon",
    "delta",
    "mu",
    "k",
    "risk_bound_bounded",
    "risk_bound_subgaussian",
    "bias_floor",
    "k_star",
    "min_n_unbiased_log10",
    "mc_mse_bound",
];

/// Theory calculators for each `d`, as a table. Also writes `theory.csv`.
pub fn cmd_theory(args: &TheoryArgs) -> Result<(String, RunManifest)> {
    if args.dims.is_empty() {
        return Err(Error::Config(vec!["theory needs at least one d".into()]));
    }
    let mut run = Run::new("theory", &args.out_dir, None)?;
    let reports = run.phase("compute", || {
        args.dims
            .iter()
            .map(|&d| {
                theory_report(TheoryInputs {
                    d,
                    beta: args.beta,
                    n: args.n,
                    n_mc: args.n_mc,
                    epsilon: args.epsilon,
                    delta: args.delta,
                    mu: args.mu,
                    k: args.k,
                    m_c: args.m_c,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let i = &r.inputs;
            vec![
                i.d.to_string(),
                fmt_sig(i.beta),
                fmt_sig(i.n),
                i.n_mc.to_string(),
                fmt_sig(i.epsilon),
                fmt_sig(i.delta),
                fmt_sig(i.mu),
                fmt_sig(i.k),
                fmt_sig(r.risk_bound_bounded),
                fmt_sig(r.risk_bound_subgaussian),
                fmt_sig(r.bias_floor),
                r.k_star.to_string(),
                fmt_sig(r.min_n_unbiased.log10()),
                fmt_sig(r.mc_mse),
            ]
        })
        .collect();
    run.csv("theory.csv", &THEORY_COLUMNS, &rows)?;
    let mut table = String::new();
    let widths: Vec<usize> = THEORY_COLUMNS
        .iter()
        .enumerate()
        .map(|(c, h)| rows.iter().map(|r| r[c].len()).max().unwrap_or(0).max(h.len()))
        .collect();
    let line = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let _ = writeln!(table, "{}", line(THEORY_COLUMNS.to_vec()));
    for r in &rows {
        let _ = writeln!(table, "{}", line(r.iter().map(String::as_str).collect()));
    }
    if let Some(r) = reports.first() {
        let _ = writeln!(table, "epsilon window lower edge (d = {}): {}", r.inputs.d, fmt_sig(r.epsilon_window_lower));
    }
    Ok((table, run.finish()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Toy {
    Tanh1,
    LeakyRelu2,
}

#[derive(Debug, Clone)]
pub struct ToyArgs {
    pub which: Toy,
    pub epochs: usize,
    /// One MI series per β; defaults to the toy's own β.
    pub betas: Vec<f64>,
    pub learning_rate: f64,
    /// Unconditional and per-input conditional sample count.
    pub n: usize,
    pub n_mc: usize,
    /// Epochs with density snapshots.
    pub snapshots: Vec<usize>,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl ToyArgs {
    /// Declared defaults: tanh1 trains 300 epochs at rate 0.05, leaky_relu2
    /// 100 epochs at rate 0.001 with smaller samples, since its second layer
    /// needs a sampled conditional term at every epoch.
    pub fn defaults(which: Toy, out_dir: PathBuf) -> Self {
        let (epochs, lr, beta, n, n_mc) = match which {
            Toy::Tanh1 => (300, 0.05, TanhToy::default().beta, 400, 200),
            Toy::LeakyRelu2 => (100, 0.001, LeakyReluToy::default().beta, 160, 100),
        };
        Self {
            which,
            epochs,
            betas: vec![beta],
            learning_rate: lr,
            n,
            n_mc,
            snapshots: vec![0, epochs / 2, epochs],
            seed: 0,
            out_dir,
        }
    }
}

const TOY_COLUMNS: [&str; 8] = ["beta", "epoch", "layer", "i_sp", "lb", "ub", "mc_se", "train_loss"];
const TOY_CUTOFF: f64 = 12.0;
const DENSITY_POINTS: usize = 200;

fn density_rows(beta: f64, epoch: usize, layer: usize, samples: &Array2<f64>, b: f64) -> Result<Vec<Vec<String>>> {
    let g = GaussianMixture::from_samples(samples.view(), b)?;
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 4.0 * b;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 4.0 * b;
    (0..DENSITY_POINTS)
        .map(|k| {
            let t = lo + (hi - lo) * k as f64 / (DENSITY_POINTS - 1) as f64;
            let p = mixture_log_density(&g, &[t])?.exp();
            Ok(vec![fmt_sig(beta), epoch.to_string(), layer.to_string(), fmt_sig(t), fmt_sig(p)])
        })
        .collect()
}

/// Trains a toy network once per β and estimates MI of every layer at every
/// epoch. Writes `toy_mi.csv`, `mi.svg`, `density.csv` and `density.svg`.
pub fn cmd_toy(args: &ToyArgs) -> Result<RunManifest> {
    let mut errs = Vec::new();
    if args.betas.is_empty() || args.betas.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
        errs.push("toy betas must be a non-empty list of values > 0".to_string());
    }
    if !(args.learning_rate.is_finite() && args.learning_rate >= 0.0) {
        errs.push(format!("learning_rate must be >= 0, got {}", args.learning_rate));
    }
    if args.n == 0 || args.n_mc == 0 {
        errs.push("n and n_mc must be >= 1".into());
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let name = match args.which {
        Toy::Tanh1 => "tanh1",
        Toy::LeakyRelu2 => "leaky_relu2",
    };
    let mut run = Run::new(&format!("toy {name}"), &args.out_dir, None)?;
    run.seed("master", args.seed);
    let mut rows = Vec::new();
    let mut density = Vec::new();
    let mut violations = 0usize;
    let mut mi_series = Vec::new();
    let mut density_series = Vec::new();
    for &beta in &args.betas {
        let (net0, data) = match args.which {
            Toy::Tanh1 => {
                let t = TanhToy {
                    beta,
                    ..TanhToy::default()
                };
                (t.net()?, t.dataset()?)
            }
            Toy::LeakyRelu2 => (
                LeakyReluToy {
                    beta,
                    ..LeakyReluToy::default()
                }
                .net()?,
                LeakyReluToy::dataset(),
            ),
        };
        let tc = TrainConfig {
            loss: Loss::MeanSquared,
            learning_rate: args.learning_rate,
            epochs: args.epochs,
            batch_size: None,
            ortho_alpha: 0.0,
            noise_during_training: true,
            seed: derive_seed(args.seed, TAG_TRAIN),
            checkpoints: CheckpointSchedule::Every(1),
        };
        let outcome = run.phase(&format!("train beta={beta}"), || train(&net0, &data, None, &tc))?;
        let started = Instant::now();
        let mut per_layer: Vec<Vec<(f64, f64, f64, f64)>> = vec![Vec::new(); net0.depth()];
        for (epoch, net) in &outcome.checkpoints {
            let train_loss = net.evaluate(&data, Loss::MeanSquared)?;
            for layer in 1..=net.depth() {
                let seed = estimator_seed(args.seed, *epoch, layer);
                let ec = EstimatorConfig {
                    n: args.n,
                    n_x: args.n,
                    n_mc: args.n_mc,
                    seed,
                    cutoff: Some(TOY_CUTOFF),
                    keep_per_x: false,
                    beta_override: None,
                };
                let mi = estimate_mi(net, &data, layer, &ec)?;
                let slack = 5.0 * mi.combined_std_error;
                if mi.i_sp < mi.lower_bound - slack || mi.i_sp > mi.upper_bound + slack {
                    violations += 1;
                }
                per_layer[layer - 1].push((*epoch as f64, mi.i_sp, mi.lower_bound, mi.upper_bound));
                rows.push(vec![
                    fmt_sig(beta),
                    epoch.to_string(),
                    layer.to_string(),
                    fmt_sig(mi.i_sp),
                    fmt_sig(mi.lower_bound),
                    fmt_sig(mi.upper_bound),
                    fmt_sig(mi.combined_std_error),
                    fmt_sig(train_loss),
                ]);
                if args.snapshots.contains(epoch) {
                    let idx: Vec<usize> = (0..args.n).map(|k| k % data.len()).collect();
                    let s = sample_layer(
                        net,
                        data.inputs.view(),
                        &idx,
                        layer,
                        Mode::Noisy(derive_seed(seed, TAG_UNCOND)),
                    )?;
                    let d = density_rows(beta, *epoch, layer, &s, net.beta(layer))?;
                    if beta == args.betas[0] {
                        density_series.push(Series::new(
                            format!("epoch {epoch}, layer {layer}"),
                            d.iter()
                                .map(|r| (r[3].parse().unwrap_or(f64::NAN), r[4].parse().unwrap_or(f64::NAN)))
                                .collect(),
                        ));
                    }
                    density.extend(d);
                }
            }
        }
        run.manifest.phases.push(Phase {
            name: format!("estimate beta={beta}"),
            seconds: started.elapsed().as_secs_f64(),
        });
        for (k, pts) in per_layer.iter().enumerate() {
            let tag = format!("beta={beta} layer {}", k + 1);
            mi_series.push(Series::new(tag.clone(), pts.iter().map(|p| (p.0, p.1)).collect()));
            mi_series.push(Series::new(format!("{tag} lower"), pts.iter().map(|p| (p.0, p.2)).collect()).dashed());
            mi_series.push(Series::new(format!("{tag} upper"), pts.iter().map(|p| (p.0, p.3)).collect()).dashed());
        }
    }
    if violations > 0 {
        let msg = format!("{violations} estimates fell outside their bound envelope by more than 5 standard errors");
        warn!("{msg}");
        run.note(msg);
    }
    run.csv("toy_mi.csv", &TOY_COLUMNS, &rows)?;
    run.write("mi.svg", &line_plot(&format!("{name}: I(X;T)"), "epoch", "nats", &mi_series))?;
    if !density.is_empty() {
        run.csv("density.csv", &["beta", "epoch", "layer", "t", "density"], &density)?;
        run.write("density.svg", &line_plot(&format!("{name}: density of T"), "t", "density", &density_series))?;
    }
    run.finish()
}

#[derive(Debug, Clone)]
pub struct AnalyzeArgs {
    pub bin_size: f64,
    /// Defaults to the observed `[min, max]` of each dump.
    pub range: Option<BinRange>,
    pub out_of_range: OutOfRange,
    pub histogram: HistogramSpec,
    pub out_dir: PathBuf,
}

/// Clustering metrics over activation dumps, ordered by epoch. Slopes are
/// fitted per layer when it has at least two epochs.
pub fn cmd_analyze_dump(paths: &[PathBuf], args: &AnalyzeArgs) -> Result<RunManifest> {
    if paths.is_empty() {
        return Err(Error::Config(vec!["analyze-dump needs at least one dump".into()]));
    }
    let mut run = Run::new("analyze-dump", &args.out_dir, None)?;
    let mut sets: Vec<(PathBuf, ActivationSet)> = run.phase("load", || {
        paths.iter().map(|p| Ok((p.clone(), read_activation_dump(p)?))).collect()
    })?;
    let d = sets[0].1.values.ncols();
    if let Some((p, s)) = sets.iter().find(|(_, s)| s.values.ncols() != d) {
        return Err(Error::Config(vec![format!(
            "inconsistent d across dumps: {} has d = {} but {} has d = {d}",
            p.display(),
            s.values.ncols(),
            sets[0].0.display()
        )]));
    }
    sets.sort_by_key(|(_, s)| (s.layer, s.epoch));
    let spec = BinningSpec {
        bin_size: args.bin_size,
        range: args.range.clone().unwrap_or(BinRange::Observed),
        out_of_range: args.out_of_range,
    };
    let mut rows = Vec::new();
    let mut unit_rows = Vec::new();
    let mut hist_rows = Vec::new();
    let mut by_layer: BTreeMap<usize, Vec<(f64, Vec<f64>)>> = BTreeMap::new();
    let started = Instant::now();
    for (_, s) in &sets {
        let h = binned_entropy(s.values.view(), &spec)?;
        let units = per_unit_binned_entropy(s.values.view(), &spec)?;
        for (u, v) in units.iter().enumerate() {
            unit_rows.push(vec![s.epoch.to_string(), s.layer.to_string(), (u + 1).to_string(), fmt_sig(*v)]);
        }
        by_layer.entry(s.layer).or_default().push((s.epoch as f64, units));
        let (mut wmode, mut bmode) = (String::new(), String::new());
        if let Some(labels) = &s.labels {
            if s.values.nrows() >= 2 {
                let hist = pairwise_distance_histogram(s.values.view(), labels, &args.histogram)?;
                wmode = hist.within_mode().map(fmt_sig).unwrap_or_default();
                bmode = hist.between_mode().map(fmt_sig).unwrap_or_default();
                hist_rows.extend(histogram_rows(s.epoch, s.layer, &hist));
            }
        }
        rows.push(vec![
            s.epoch.to_string(),
            s.layer.to_string(),
            s.values.nrows().to_string(),
            d.to_string(),
            fmt_sig(h),
            wmode,
            bmode,
        ]);
    }
    let mut slope_rows = Vec::new();
    for (layer, series) in &by_layer {
        let epochs: Vec<f64> = series.iter().map(|p| p.0).collect();
        let values: Vec<Vec<f64>> = series.iter().map(|p| p.1.clone()).collect();
        match entropy_slopes(&values, &epochs) {
            Ok(s) => {
                for (u, v) in s.per_unit.iter().enumerate() {
                    slope_rows.push(vec![layer.to_string(), (u + 1).to_string(), fmt_sig(*v)]);
                }
                slope_rows.push(vec![layer.to_string(), "mean".into(), fmt_sig(s.mean_slope)]);
                slope_rows.push(vec![layer.to_string(), "std".into(), fmt_sig(s.std_slope)]);
            }
            Err(e) => run.note(format!("layer {layer}: slopes unavailable: {e}")),
        }
    }
    run.manifest.phases.push(Phase {
        name: "metrics".into(),
        seconds: started.elapsed().as_secs_f64(),
    });
    run.csv(
        "clustering.csv",
        &["epoch", "layer", "n", "d", "binned_entropy", "within_mode", "between_mode"],
        &rows,
    )?;
    run.csv("per_unit.csv", &["epoch", "layer", "unit", "entropy"], &unit_rows)?;
    if !slope_rows.is_empty() {
        run.csv("slopes.csv", &["layer", "unit", "slope"], &slope_rows)?;
    }
    if !hist_rows.is_empty() {
        run.csv("histograms.csv", &HISTOGRAM_COLUMNS, &hist_rows)?;
    }
    run.finish()
}

#[derive(Debug, Clone)]
pub struct AdviseArgs {
    pub layer: usize,
    /// Checkpoint to analyze; the freshly initialized network when absent.
    pub epoch: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
    pub target_tol: f64,
    pub cap: usize,
    pub min_n: usize,
}

/// Runs the halving ladder and writes `advice.csv`.
pub fn cmd_advise_n(cfg: &ExperimentConfig, args: &AdviseArgs) -> Result<(usize, RunManifest)> {
    checked(cfg)?;
    let seeds = cfg.seeds();
    let mut run = config_run("advise-n", cfg)?;
    let net = match args.epoch {
        Some(e) => {
            let dir = args.checkpoint_dir.clone().unwrap_or_else(|| run.path("checkpoints"));
            read_checkpoint(&dir, e)?
        }
        None => cfg.network.build(seeds.init)?,
    };
    let (data, _) = load_data(cfg, net.input_dim())?;
    let ac = AdviseConfig {
        target_tol: args.target_tol,
        cap: args.cap,
        min_n: args.min_n,
        n_mc: cfg.estimator.n_mc,
        seed: seeds.estimate,
        cutoff: cfg.estimator.cutoff,
    };
    let advice = run.phase("ladder", || advise_n(&net, &data, args.layer, &ac))?;
    let rows: Vec<Vec<String>> = advice
        .rungs
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                fmt_sig(r.i_n),
                fmt_sig(r.i_half),
                fmt_sig(r.diff),
                r.stable.to_string(),
            ]
        })
        .collect();
    run.csv("advice.csv", &["n", "i_n", "i_half", "diff", "stable"], &rows)?;
    run.note(format!(
        "recommended n = {} (ladder start {}, risk-bound n = 10^{})",
        advice.recommended_n,
        advice.start_n,
        fmt_sig(advice.risk_n.log10())
    ));
    if advice.unstable {
        run.note("first rung already disagreed; recommending the start value".into());
    }
    Ok((advice.recommended_n, run.finish()?))
}

/// Sets a dotted `key.path` in a JSON config to `raw`, parsed as JSON when
/// possible and as a string otherwise.
pub fn apply_override(config: &mut serde_json::Value, key: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.into()));
    let mut node = config;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(vec![format!("cannot set {key}: {part} is not inside an object")]))?;
        if k + 1 == parts.len() {
            obj.insert((*part).into(), value);
            return Ok(());
        }
        node = obj
            .entry(*part)
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Err(Error::Config(vec![format!("empty override key '{key}'")]))
}

/// Loads a config file and applies `key=value` overrides before schema
/// checks, so unknown keys are rejected either way.
pub fn load_config(path: &Path, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
    for (k, v) in overrides {
        apply_override(&mut value, k, v)?;
    }
    serde_json::from_value(value).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_set_nested_keys() {
        let mut v = json!({"train": {"epochs": 3}, "seed": 1});
        apply_override(&mut v, "train.epochs", "7").unwrap();
        apply_override(&mut v, "output_dir", "runs/a").unwrap();
        apply_override(&mut v, "estimator.n_mc", "50").unwrap();
        assert_eq!(v["train"]["epochs"], 7);
        assert_eq!(v["output_dir"], "runs/a");
        assert_eq!(v["estimator"]["n_mc"], 50);
        assert!(apply_override(&mut v, "seed.x", "1").is_err());
    }
}
