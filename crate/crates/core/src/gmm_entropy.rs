//! Differential entropy of isotropic Gaussian mixtures
//! `g = Σ c_i N(μ_i, β² I_d)`: Monte Carlo estimate, analytic bounds and the
//! MC mean-squared-error guarantee. All values are in nats.

use std::collections::HashMap;
use std::f64::consts::{E, PI};

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, substream, TAG_MC, TAG_MC_OUTER};

/// Weighted isotropic Gaussian mixture.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    centers: Array2<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    // samples merged into each component; MC draws scale with it
    multiplicity: Vec<usize>,
    beta: f64,
}

fn neumaier_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

impl GaussianMixture {
    /// `centers` is n×d, one center per row.
    pub fn new(centers: Array2<f64>, weights: Vec<f64>, beta: f64) -> Result<Self> {
        let (n, d) = centers.dim();
        if n == 0 || d == 0 {
            return Err(Error::InvalidMixture(format!(
                "need at least one center and one dimension, got {n}x{d}"
            )));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidMixture(format!("beta must be positive, got {beta}")));
        }
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                context: "mixture weights",
                expected: n,
                got: weights.len(),
            });
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mixture centers"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidMixture("weights must be finite and nonnegative".into()));
        }
        let total = neumaier_sum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMixture(format!("weights sum to {total}, not 1")));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            centers: centers.as_standard_layout().into_owned(),
            weights,
            log_weights,
            multiplicity: vec![1; n],
            beta,
        })
    }

    pub fn uniform(centers: Array2<f64>, beta: f64) -> Result<Self> {
        let n = centers.nrows();
        Self::new(centers, vec![1.0 / n.max(1) as f64; n], beta)
    }

    /// Empirical mixture of a sample set. Repeated rows are merged into one
    /// component whose weight is its frequency. A merged component receives
    /// `n_mc` MC draws per merged sample, so the estimate has the precision
    /// of the unmerged mixture.
    pub fn from_samples(samples: ArrayView2<f64>, beta: f64) -> Result<Self> {
        let (n, d) = samples.dim();
        if n == 0 {
            return Err(Error::InvalidMixture("no samples".into()));
        }
        let mut index: HashMap<Vec<u64>, usize> = HashMap::with_capacity(n);
        let mut rows: Vec<usize> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for (r, row) in samples.outer_iter().enumerate() {
            // +0.0 folds -0.0 into 0.0 so both map to one key
            let key: Vec<u64> = row.iter().map(|v| (v + 0.0).to_bits()).collect();
            match index.get(&key) {
                Some(&k) => counts[k] += 1,
                None => {
                    index.insert(key, rows.len());
                    rows.push(r);
                    counts.push(1);
                }
            }
        }
        let mut centers = Array2::zeros((rows.len(), d));
        for (k, &r) in rows.iter().enumerate() {
            centers.row_mut(k).assign(&samples.row(r));
        }
        let weights = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let mut g = Self::new(centers, weights, beta)?;
        g.multiplicity = counts;
        Ok(g)
    }

    pub fn n_components(&self) -> usize {
        self.centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn centers(&self) -> ArrayView2<'_, f64> {
        self.centers.view()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn multiplicity(&self) -> &[usize] {
        &self.multiplicity
    }

    /// Copy with every center and β multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let mut g = Self::new(&self.centers * c, self.weights.clone(), self.beta * c)?;
        g.multiplicity = self.multiplicity.clone();
        Ok(g)
    }

    fn log_norm(&self) -> f64 {
        0.5 * self.dim() as f64 * (2.0 * PI * self.beta * self.beta).ln()
    }

    fn center(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.centers.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }
}

/// Gaussian entropy `(d/2) log(2πeβ²)`.
pub fn gaussian_entropy(d: usize, beta: f64) -> f64 {
    0.5 * d as f64 * (2.0 * PI * E * beta * beta).ln()
}

/// `log g(t)` via log-sum-exp.
pub fn mixture_log_density(g: &GaussianMixture, t: &[f64]) -> Result<f64> {
    if t.len() != g.dim() {
        return Err(Error::DimensionMismatch {
            context: "mixture_log_density point",
            expected: g.dim(),
            got: t.len(),
        });
    }
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("density evaluation point"));
    }
    let inv = 1.0 / (2.0 * g.beta * g.beta);
    let mut buf = Vec::with_capacity(g.n_components());
    for j in 0..g.n_components() {
        let sq: f64 = g.center(j).iter().zip(t).map(|(m, x)| (x - m) * (x - m)).sum();
        buf.push(g.log_weights[j] - sq * inv);
    }
    Ok(log_sum_exp(&buf) - g.log_norm())
}

fn log_sum_exp(a: &[f64]) -> f64 {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + a.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Knobs for [`mc_entropy_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    /// Skip components farther than `cutoff * β` along the first coordinate
    /// when the skipped mass is certified below 1e-12 of the densest term.
    pub cutoff: Option<f64>,
    /// Compute the analytic bounds (O(n² d)).
    pub bounds: bool,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            cutoff: None,
            bounds: true,
        }
    }
}

/// Evaluates `log g(μ_i + z)` in difference form so the result depends only on
/// center differences.
struct Evaluator<'a> {
    g: &'a GaussianMixture,
    inv: f64,
    log_norm: f64,
    window: Option<Window>,
}

struct Window {
    radius: f64,
    order: Vec<usize>,
    keys: Vec<f64>,
    // prefix sums of weights in key order
    cum_weight: Vec<f64>,
}

const CUTOFF_REL: f64 = 1e-12;

impl<'a> Evaluator<'a> {
    fn new(g: &'a GaussianMixture, cutoff: Option<f64>) -> Self {
        let window = cutoff.filter(|c| c.is_finite() && *c > 0.0).map(|c| {
            let mut order: Vec<usize> = (0..g.n_components()).collect();
            order.sort_by(|&a, &b| g.center(a)[0].total_cmp(&g.center(b)[0]).then(a.cmp(&b)));
            let keys: Vec<f64> = order.iter().map(|&j| g.center(j)[0]).collect();
            let mut cum_weight = Vec::with_capacity(order.len() + 1);
            cum_weight.push(0.0);
            let mut acc = 0.0;
            for &j in &order {
                acc += g.weights[j];
                cum_weight.push(acc);
            }
            Window {
                radius: c * g.beta,
                order,
                keys,
                cum_weight,
            }
        });
        Self {
            g,
            inv: 1.0 / (2.0 * g.beta * g.beta),
            log_norm: g.log_norm(),
            window,
        }
    }

    fn term(&self, i: usize, j: usize, z: &[f64]) -> f64 {
        let mi = self.g.center(i);
        let mj = self.g.center(j);
        let mut sq = 0.0;
        for k in 0..z.len() {
            let diff = (mi[k] - mj[k]) + z[k];
            sq += diff * diff;
        }
        self.g.log_weights[j] - sq * self.inv
    }

    fn log_density_at(&self, i: usize, z: &[f64], buf: &mut Vec<f64>) -> f64 {
        buf.clear();
        if let Some(w) = &self.window {
            let t0 = self.g.center(i)[0] + z[0];
            let lo = w.keys.partition_point(|&k| k < t0 - w.radius);
            let hi = w.keys.partition_point(|&k| k <= t0 + w.radius);
            if hi > lo {
                for &j in &w.order[lo..hi] {
                    buf.push(self.term(i, j, z));
                }
                let skipped = (w.cum_weight[lo] + (1.0 - w.cum_weight[hi])).max(0.0);
                let best = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let bound = skipped.ln() - w.radius * w.radius * self.inv;
                if skipped == 0.0 || bound < CUTOFF_REL.ln() + best {
                    return log_sum_exp(buf) - self.log_norm;
                }
                buf.clear();
            }
        }
        for j in 0..self.g.n_components() {
            buf.push(self.term(i, j, z));
        }
        log_sum_exp(buf) - self.log_norm
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn sample_var(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}

/// Mean of `-log g(μ_i + Z)` over `n_mc` draws from stream `stream`.
fn center_moments(ev: &Evaluator<'_>, i: usize, n_mc: usize, seed: u64, stream: u64) -> Moments {
    let d = ev.g.dim();
    let beta = ev.g.beta;
    let mut rng = substream(seed, stream);
    let mut z = vec![0.0; d];
    let mut buf = Vec::with_capacity(ev.g.n_components());
    let mut mom = Moments::default();
    for _ in 0..n_mc {
        for zk in z.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *zk = beta * e;
        }
        mom.push(-ev.log_density_at(i, &z, &mut buf));
    }
    mom
}

/// MC entropy estimate with analytic bounds attached.
#[derive(Debug, Clone, Serialize)]
pub struct EntropyEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_mc: usize,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub seed: u64,
    pub bounds: Option<EntropyBounds>,
}

impl EntropyEstimate {
    fn assemble(value: f64, std_error: f64, n_mc: usize, seed: u64, bounds: Option<EntropyBounds>) -> Self {
        let (lower_bound, upper_bound) = match &bounds {
            Some(b) => (b.max_lower(), b.min_upper()),
            None => (f64::NEG_INFINITY, f64::INFINITY),
        };
        Self {
            value,
            std_error,
            n_mc,
            lower_bound,
            upper_bound,
            seed,
            bounds,
        }
    }

    /// Exact closed form, zero error (single Gaussian).
    pub fn exact(d: usize, beta: f64) -> Self {
        let h = gaussian_entropy(d, beta);
        Self {
            value: h,
            std_error: 0.0,
            n_mc: 0,
            lower_bound: h,
            upper_bound: h,
            seed: 0,
            bounds: None,
        }
    }
}

pub fn mc_entropy(g: &GaussianMixture, n_mc: usize, seed: u64) -> Result<EntropyEstimate> {
    mc_entropy_with(g, n_mc, seed, &McOptions::default())
}

/// `ĥ = -Σ_i c_i (1/n_mc) Σ_j log g(μ_i + Z_j)`. Center `i` draws from its own
/// substream, so the result is independent of the thread count.
pub fn mc_entropy_with(g: &GaussianMixture, n_mc: usize, seed: u64, opts: &McOptions) -> Result<EntropyEstimate> {
    if n_mc == 0 {
        return Err(Error::InvalidParameter("n_mc must be at least 1".into()));
    }
    let ev = Evaluator::new(g, opts.cutoff);
    let stream_seed = derive_seed(seed, TAG_MC);
    let moments: Vec<Option<Moments>> = (0..g.n_components())
        .into_par_iter()
        .map(|i| {
            (g.weights[i] > 0.0).then(|| center_moments(&ev, i, n_mc * g.multiplicity[i], stream_seed, i as u64))
        })
        .collect();

    let value = neumaier_sum(
        moments
            .iter()
            .zip(&g.weights)
            .filter_map(|(m, c)| m.map(|m| c * m.mean)),
    );
    let var_sum = neumaier_sum(moments.iter().zip(&g.weights).filter_map(|(m, c)| {
        m.map(|m| {
            let var = if m.count < 2 {
                // A single draw: its distance from the overall estimate
                // stands in for the per-center variance. That also holds the
                // between-center spread, so it errs high.
                (m.mean - value) * (m.mean - value)
            } else {
                m.sample_var()
            };
            c * c * var / m.count as f64
        })
    }));
    let std_error = var_sum.sqrt();
    if !value.is_finite() || !std_error.is_finite() {
        return Err(Error::NonFinite("mc_entropy"));
    }
    let bounds = opts.bounds.then(|| entropy_bounds(g));
    Ok(EntropyEstimate::assemble(value, std_error, n_mc, seed, bounds))
}

/// Two-level estimate: `n_outer` centers drawn with replacement by weight,
/// `n_mc` noise draws each. Unbiased for the same quantity as [`mc_entropy`].
pub fn mc_entropy_subsampled(g: &GaussianMixture, n_outer: usize, n_mc: usize, seed: u64) -> Result<EntropyEstimate> {
    if n_outer == 0 {
        return Err(Error::InvalidParameter("n_outer must be at least 1".into()));
    }
    if g.n_components() == 1 {
        return mc_entropy(g, n_mc, seed);
    }
    if n_mc == 0 {
        return Err(Error::InvalidParameter("n_mc must be at least 1".into()));
    }
    let mut cum = Vec::with_capacity(g.n_components());
    let mut acc = 0.0;
    for w in &g.weights {
        acc += w;
        cum.push(acc);
    }
    let mut outer = substream(derive_seed(seed, TAG_MC_OUTER), 0);
    let picks: Vec<usize> = (0..n_outer)
        .map(|_| {
            let u: f64 = outer.random::<f64>() * acc;
            cum.partition_point(|&c| c <= u).min(g.n_components() - 1)
        })
        .collect();

    let ev = Evaluator::new(g, None);
    let stream_seed = derive_seed(seed, TAG_MC);
    let per: Vec<Moments> = picks
        .par_iter()
        .enumerate()
        .map(|(k, &i)| center_moments(&ev, i, n_mc, stream_seed, k as u64))
        .collect();

    let mut overall = Moments::default();
    for m in &per {
        overall.push(m.mean);
    }
    let std_error = if n_outer >= 2 {
        (overall.sample_var() / n_outer as f64).sqrt()
    } else {
        (per[0].sample_var() / n_mc as f64).sqrt()
    };
    Ok(EntropyEstimate::assemble(
        overall.mean,
        std_error,
        n_mc,
        seed,
        Some(entropy_bounds(g)),
    ))
}

/// Three lower and three upper bounds on `h(g)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyBounds {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl EntropyBounds {
    pub fn max_lower(&self) -> f64 {
        self.lower.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_upper(&self) -> f64 {
        self.upper.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

const ROW_BLOCK: usize = 64;
const COL_BLOCK: usize = 2048;

#[derive(Clone, Copy)]
struct Lse {
    max: f64,
    sum: f64,
}

impl Lse {
    const EMPTY: Lse = Lse {
        max: f64::NEG_INFINITY,
        sum: 0.0,
    };

    fn push(&mut self, a: f64) {
        if a == f64::NEG_INFINITY {
            return;
        }
        if a > self.max {
            self.sum = self.sum * (self.max - a).exp() + 1.0;
            self.max = a;
        } else {
            self.sum += (a - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        self.max + self.sum.ln()
    }
}

/// `[L1, L2, L3]` and `[U1, U2, U3]`. Pairwise distances are computed in
/// blocks from centered coordinates as `‖a‖² + ‖b‖² - 2a·b`, clamped at 0.
pub fn entropy_bounds(g: &GaussianMixture) -> EntropyBounds {
    let (n, d) = g.centers.dim();
    let df = d as f64;
    let b2 = g.beta * g.beta;

    let mut mean = vec![0.0; d];
    for (row, c) in g.centers.outer_iter().zip(&g.weights) {
        for k in 0..d {
            mean[k] += c * row[k];
        }
    }
    let mut a = g.centers.clone();
    for mut row in a.outer_iter_mut() {
        for k in 0..d {
            row[k] -= mean[k];
        }
    }
    let norms: Vec<f64> = a.outer_iter().map(|r| r.dot(&r)).collect();
    let scales = [1.0 / (4.0 * b2), 1.0 / (8.0 * b2), 1.0 / (2.0 * b2)];

    let starts: Vec<usize> = (0..n).step_by(ROW_BLOCK).collect();
    let rows: Vec<[f64; 3]> = starts
        .par_iter()
        .flat_map_iter(|&i0| {
            let i1 = (i0 + ROW_BLOCK).min(n);
            let ai = a.slice(s![i0..i1, ..]);
            let mut acc = vec![[Lse::EMPTY; 3]; i1 - i0];
            for j0 in (0..n).step_by(COL_BLOCK) {
                let j1 = (j0 + COL_BLOCK).min(n);
                let gram = ai.dot(&a.slice(s![j0..j1, ..]).t());
                for (r, grow) in gram.axis_iter(Axis(0)).enumerate() {
                    let i = i0 + r;
                    for (cidx, &dot) in grow.iter().enumerate() {
                        let j = j0 + cidx;
                        let sq = if i == j {
                            0.0
                        } else {
                            (norms[i] + norms[j] - 2.0 * dot).max(0.0)
                        };
                        for (lse, s) in acc[r].iter_mut().zip(&scales) {
                            lse.push(g.log_weights[j] - sq * s);
                        }
                    }
                }
            }
            acc.into_iter().zip(i0..i1).map(|(l, i)| {
                // Clamp each log-sum into its provable range: it is at most 0
                // (weights sum to 1), at least log c_i (the j = i term), and
                // nonincreasing in the exponent scale. Rounding can otherwise
                // flip the order of near-equal bounds.
                let floor = g.log_weights[i];
                let u2 = l[2].value().clamp(floor, 0.0);
                let l2 = l[0].value().clamp(u2, 0.0);
                let l3 = l[1].value().clamp(l2, 0.0);
                [l2, l3, u2]
            })
        })
        .collect();

    // Plain sums: rounding is monotone, so termwise order carries over.
    let weighted = |k: usize| -> f64 {
        rows.iter()
            .zip(&g.weights)
            .filter(|(_, c)| **c > 0.0)
            .map(|(r, c)| c * r[k])
            .sum()
    };
    let base = gaussian_entropy(d, g.beta);
    let shannon: f64 = -g
        .weights
        .iter()
        .zip(&g.log_weights)
        .filter(|(c, _)| **c > 0.0)
        .map(|(c, l)| c * l)
        .sum::<f64>();

    let l1 = base;
    let l2 = 0.5 * df * (4.0 * PI * b2).ln() - weighted(0);
    let l3 = base - weighted(1);
    let u1 = base + shannon;
    let u2 = base - weighted(2);
    let u3 = base + covariance_excess(&a, &g.weights, b2);

    EntropyBounds {
        lower: [l1, l2, l3],
        upper: [u1, u2, u3],
    }
}

/// `½ logdet(Σ/β²)`, so that `U3 = (d/2) log(2πeβ²) + excess`. Σ - β²I is
/// positive semidefinite, hence the clamp at 0. +∞ when Σ is not numerically
/// positive definite.
fn covariance_excess(centered: &Array2<f64>, weights: &[f64], b2: f64) -> f64 {
    let d = centered.ncols();
    let mut cov = Array2::<f64>::zeros((d, d));
    for (row, &c) in centered.outer_iter().zip(weights) {
        if c == 0.0 {
            continue;
        }
        for p in 0..d {
            for q in 0..=p {
                cov[[p, q]] += c * row[p] * row[q] / b2;
            }
        }
    }
    for p in 0..d {
        cov[[p, p]] += 1.0;
    }
    match cholesky_logdet(&mut cov) {
        Some(logdet) => 0.5 * logdet.max(0.0),
        None => f64::INFINITY,
    }
}

/// In-place Cholesky on the lower triangle; returns log det.
fn cholesky_logdet(m: &mut Array2<f64>) -> Option<f64> {
    let d = m.nrows();
    let mut logdet = 0.0;
    for j in 0..d {
        let mut diag = m[[j, j]];
        for k in 0..j {
            diag -= m[[j, k]] * m[[j, k]];
        }
        if !(diag > 0.0 && diag.is_finite()) {
            return None;
        }
        let l = diag.sqrt();
        m[[j, j]] = l;
        logdet += 2.0 * l.ln();
        for i in j + 1..d {
            let mut v = m[[i, j]];
            for k in 0..j {
                v -= m[[i, k]] * m[[j, k]];
            }
            m[[i, j]] = v / l;
        }
    }
    Some(logdet)
}

/// Support class for [`mc_mse_bound`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Support {
    /// Centers inside `[-1, 1]^d`.
    BoundedUnitCube,
    /// Centers with `E‖μ‖² ≤ m_c`.
    SecondMoment(f64),
}

/// Which numerator to use in the bounded-support MSE bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum MseConstant {
    /// `2d(2+β²)/β²`.
    Stated,
    /// `2d(4+β²)/β²`, the looser value reached by the derivation.
    #[default]
    Conservative,
}

/// Upper bound on the MSE of `ĥ_MC`, in nats².
pub fn mc_mse_bound(d: usize, beta: f64, n: usize, n_mc: usize, support: Support, constant: MseConstant) -> f64 {
    let df = d as f64;
    let b2 = beta * beta;
    let numer = match support {
        Support::BoundedUnitCube => {
            let k = match constant {
                MseConstant::Stated => 2.0,
                MseConstant::Conservative => 4.0,
            };
            2.0 * df * (k + b2)
        }
        Support::SecondMoment(mc) => {
            let bsd = beta * df.sqrt();
            9.0 * df * b2 + 8.0 * (2.0 + bsd) * mc + 3.0 * (11.0 * bsd + 1.0) * mc.sqrt()
        }
    };
    numer / b2 / (n as f64 * n_mc as f64)
}
