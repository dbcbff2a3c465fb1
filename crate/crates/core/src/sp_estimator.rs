//! Sample-propagation estimate of `I(X; T_ℓ)` and the theory calculators
//! (risk bound, bias floor, k★, sample-size ladder).

use log::warn;
use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::gmm_entropy::{mc_entropy_with, EntropyEstimate, GaussianMixture, McOptions};
use crate::noisy_net::{sample_layer, LabeledDataset, Mode, NoisyNet};
use crate::rng::{derive_seed, TAG_COND, TAG_COND_MC, TAG_LADDER, TAG_UNCOND, TAG_UNCOND_MC};

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    /// Unconditional samples; input `k mod m` feeds sample `k`.
    pub n: usize,
    /// Conditional samples per dataset input.
    pub n_x: usize,
    pub n_mc: usize,
    pub seed: u64,
    pub cutoff: Option<f64>,
    pub keep_per_x: bool,
    /// Replaces β of layers `1..=ℓ`. Estimation normally uses the training β.
    pub beta_override: Option<f64>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            n_x: 1000,
            n_mc: 1000,
            seed: 0,
            cutoff: None,
            keep_per_x: false,
            beta_override: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MIEstimate {
    pub layer: usize,
    pub i_sp: f64,
    pub h_unconditional: EntropyEstimate,
    pub h_conditional_mean: f64,
    pub h_conditional_per_x: Option<Vec<f64>>,
    pub conditional_std_error: f64,
    pub n: usize,
    pub n_x: usize,
    pub combined_std_error: f64,
    /// `max-lower(h_u) - mean(min-upper(h_c))`
    pub lower_bound: f64,
    /// `min-upper(h_u) - mean(max-lower(h_c))`
    pub upper_bound: f64,
}

fn effective_net(net: &NoisyNet, layer: usize, beta_override: Option<f64>) -> Result<(NoisyNet, f64)> {
    if layer == 0 || layer > net.depth() {
        return Err(Error::InvalidParameter(format!(
            "layer index {layer} out of range 1..={}",
            net.depth()
        )));
    }
    let mut net = net.clone();
    if let Some(b) = beta_override {
        if !(b.is_finite() && b >= 0.0) {
            return Err(Error::InvalidParameter(format!("beta override must be >= 0, got {b}")));
        }
        if b != net.beta(layer) {
            warn!(
                "estimating layer {layer} with beta = {b} instead of the training value {}",
                net.beta(layer)
            );
        }
        for l in &mut net.layers_mut()[..layer] {
            l.beta = b;
        }
    }
    let beta = net.beta(layer);
    if beta == 0.0 {
        return Err(Error::DeterministicLayer { layer });
    }
    Ok((net, beta))
}

/// `Î_SP = h(S_ℓ-mixture) - (1/m) Σ_x h(S_ℓ|x-mixture)` over the `m` dataset
/// inputs. For layer 1 the conditional term is the closed form.
pub fn estimate_mi(net: &NoisyNet, data: &LabeledDataset, layer: usize, cfg: &EstimatorConfig) -> Result<MIEstimate> {
    if cfg.n == 0 || cfg.n_x == 0 || cfg.n_mc == 0 {
        return Err(Error::InvalidParameter("n, n_x and n_mc must all be >= 1".into()));
    }
    let (net, beta) = effective_net(net, layer, cfg.beta_override)?;
    let m = data.len();
    let width = net.layers()[layer - 1].out_dim();
    let opts = McOptions {
        cutoff: cfg.cutoff,
        bounds: true,
    };

    let rows: Vec<usize> = (0..cfg.n).map(|k| k % m).collect();
    let samples = sample_layer(
        &net,
        data.inputs.view(),
        &rows,
        layer,
        Mode::Noisy(derive_seed(cfg.seed, TAG_UNCOND)),
    )?;
    let g = GaussianMixture::from_samples(samples.view(), beta)?;
    let h_u = mc_entropy_with(&g, cfg.n_mc, derive_seed(cfg.seed, TAG_UNCOND_MC), &opts)?;

    let per_x: Vec<EntropyEstimate> = if layer == 1 {
        vec![EntropyEstimate::exact(width, beta); m]
    } else {
        let cond_seed = derive_seed(cfg.seed, TAG_COND);
        (0..m)
            .into_par_iter()
            .map(|i| {
                let seed_x = derive_seed(cond_seed, i as u64);
                let x = data.inputs.row(i).to_owned().insert_axis(ndarray::Axis(0));
                let s = sample_layer(&net, x.view(), &vec![0; cfg.n_x], layer, Mode::Noisy(seed_x))?;
                let gx = GaussianMixture::from_samples(s.view(), beta)?;
                mc_entropy_with(&gx, cfg.n_mc, derive_seed(seed_x, TAG_COND_MC), &opts)
            })
            .collect::<Result<_>>()?
    };

    let mf = m as f64;
    let h_c = per_x.iter().map(|e| e.value).sum::<f64>() / mf;
    let se_c = (per_x.iter().map(|e| e.std_error * e.std_error).sum::<f64>()).sqrt() / mf;
    let upper_c = per_x.iter().map(|e| e.upper_bound).sum::<f64>() / mf;
    let lower_c = per_x.iter().map(|e| e.lower_bound).sum::<f64>() / mf;
    let combined = (h_u.std_error * h_u.std_error + se_c * se_c).sqrt();
    Ok(MIEstimate {
        layer,
        i_sp: h_u.value - h_c,
        lower_bound: h_u.lower_bound - upper_c,
        upper_bound: h_u.upper_bound - lower_c,
        h_conditional_mean: h_c,
        h_conditional_per_x: cfg.keep_per_x.then(|| per_x.iter().map(|e| e.value).collect()),
        conditional_std_error: se_c,
        h_unconditional: h_u,
        n: cfg.n,
        n_x: cfg.n_x,
        combined_std_error: combined,
    })
}

/// Gaussian tail `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse of [`q_function`] on `(0, 1)`, polished by Newton steps.
pub fn q_inverse(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::INFINITY;
    }
    if p >= 1.0 {
        return f64::NEG_INFINITY;
    }
    let mut x = std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..3 {
        let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if density == 0.0 {
            break;
        }
        let step = (q_function(x) - p) / density;
        if !step.is_finite() {
            break;
        }
        x += step;
    }
    x
}

/// Binary entropy in nats.
pub fn binary_entropy(eps: f64) -> f64 {
    let term = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    term(eps) + term(1.0 - eps)
}

/// Left end of the admissible ε window, `1 - (1 - 2Q(1/(2β)))^d`.
pub fn epsilon_window_lower(d: usize, beta: f64) -> f64 {
    let q2 = 2.0 * q_function(1.0 / (2.0 * beta));
    -(d as f64 * (-q2).ln_1p()).exp_m1()
}

fn check_theory_args(d: usize, beta: f64, eps: f64) -> Result<()> {
    if d == 0 || !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidParameter(format!("need d >= 1 and beta > 0, got d = {d}, beta = {beta}")));
    }
    let lower = epsilon_window_lower(d, beta);
    if !(eps > lower && eps <= 1.0) {
        return Err(Error::EpsilonOutOfWindow {
            epsilon: eps,
            lower,
            dim: d,
            beta,
        });
    }
    Ok(())
}

/// `k★ = ⌊1 / (β Q⁻¹(½(1 - (1-ε)^{1/d})))⌋`
pub fn k_star(d: usize, beta: f64, eps: f64) -> Result<u64> {
    check_theory_args(d, beta, eps)?;
    // (1-ε)^{1/d} = exp(ln(1-ε)/d), kept in expm1 form for small ε
    let p = -0.5 * ((-eps).ln_1p() / d as f64).exp_m1();
    let q = q_inverse(p);
    let k = (1.0 / (beta * q)).floor();
    if !(k.is_finite() && k >= 2.0) {
        return Err(Error::EpsilonOutOfWindow {
            epsilon: eps,
            lower: epsilon_window_lower(d, beta),
            dim: d,
            beta,
        });
    }
    Ok(k as u64)
}

/// `max(0, log(k★^{d(1-ε)} / n) - H_b(ε))`
pub fn bias_floor(d: usize, beta: f64, eps: f64, n: u64) -> Result<f64> {
    let k = k_star(d, beta, eps)?;
    let v = d as f64 * (1.0 - eps) * (k as f64).ln() - (n.max(1) as f64).ln() - binary_entropy(eps);
    Ok(v.max(0.0))
}

/// A sample count kept as its natural log, since it easily exceeds `u64`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogCount {
    pub ln: f64,
}

impl LogCount {
    /// `⌈e^ln⌉` when it fits in a `u64`.
    pub fn to_u64(self) -> Option<u64> {
        if self.ln < 0.0 {
            return Some(1);
        }
        if self.ln >= 63.0 * std::f64::consts::LN_2 {
            return None;
        }
        Some(self.ln.exp().ceil() as u64)
    }

    pub fn log10(self) -> f64 {
        self.ln / std::f64::consts::LN_10
    }
}

/// Smallest n that avoids the bias floor `δ`: `⌈k★^{d(1-ε)} e^{-(δ + H_b(ε))}⌉`.
pub fn min_n_for_bias(d: usize, beta: f64, eps: f64, delta: f64) -> Result<LogCount> {
    let k = k_star(d, beta, eps)?;
    Ok(LogCount {
        ln: d as f64 * (1.0 - eps) * (k as f64).ln() - delta - binary_entropy(eps),
    })
}

/// Distribution class for [`risk_bound`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RiskClass {
    /// Support in `[-1, 1]^d`.
    Bounded,
    /// Subgaussian with parameters μ and K.
    Subgaussian { mu: f64, k: f64 },
}

/// `ln Δ_{β,d}(n)`, the entropy-estimation risk term.
pub fn ln_entropy_risk(d: usize, beta: f64, n: f64, cls: RiskClass) -> f64 {
    let df = d as f64;
    match cls {
        RiskClass::Bounded => (-df * beta.ln()).max(0.0) + (df + 2.0) * std::f64::consts::LN_2 + 0.5 * (df / n).ln(),
        RiskClass::Subgaussian { mu, k } => {
            let kb = k + beta / std::f64::consts::SQRT_2;
            let inner = 8.0 * (2.0 * mu.powi(4) + 32.0 * df * df * k.powi(4) + df * (df + 2.0) * kb.powi(4)) / beta.powi(4);
            0.5 * df * (std::f64::consts::FRAC_1_SQRT_2 + k / beta).ln()
                + 0.5 * inner.ln()
                + 3.0 * df / 16.0
                + mu * mu / (4.0 * kb * kb)
                - 0.5 * n.ln()
        }
    }
}

/// MI risk `2Δ_{β,d}(n) + d log(1 + 1/β²) / (4√n)`. Saturates at +∞ when Δ
/// exceeds the f64 range.
pub fn risk_bound(d: usize, beta: f64, n: f64, cls: RiskClass) -> f64 {
    2.0 * ln_entropy_risk(d, beta, n, cls).exp() + d as f64 * (1.0 / (beta * beta)).ln_1p() / (4.0 * n.sqrt())
}

/// Smallest n with `risk_bound ≤ tol`. The bound is `R/√n`, so this is
/// `⌈(R/tol)²⌉`, returned in log form.
pub fn n_for_risk(d: usize, beta: f64, tol: f64, cls: RiskClass) -> LogCount {
    let ln_two_delta_1 = std::f64::consts::LN_2 + ln_entropy_risk(d, beta, 1.0, cls);
    let ln_other = (d as f64 * (1.0 / (beta * beta)).ln_1p() / 4.0).ln();
    let hi = ln_two_delta_1.max(ln_other);
    let ln_r = hi + ((ln_two_delta_1 - hi).exp() + (ln_other - hi).exp()).ln();
    LogCount {
        ln: 2.0 * (ln_r - tol.ln()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryInputs {
    pub d: usize,
    pub beta: f64,
    pub n: f64,
    pub n_mc: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub mu: f64,
    pub k: f64,
    pub m_c: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub inputs: TheoryInputs,
    pub risk_bound_bounded: f64,
    pub risk_bound_subgaussian: f64,
    pub bias_floor: f64,
    pub k_star: u64,
    pub epsilon_window_lower: f64,
    pub min_n_unbiased: LogCount,
    pub mc_mse: f64,
}

pub fn theory_report(inputs: TheoryInputs) -> Result<TheoryReport> {
    use crate::gmm_entropy::{mc_mse_bound, MseConstant, Support};
    if !(inputs.n.is_finite() && inputs.n >= 1.0) || inputs.n_mc == 0 {
        return Err(Error::InvalidParameter("n and n_mc must be >= 1".into()));
    }
    let k = k_star(inputs.d, inputs.beta, inputs.epsilon)?;
    let support = match inputs.m_c {
        Some(mc) => Support::SecondMoment(mc),
        None => Support::BoundedUnitCube,
    };
    let n_int = inputs.n.round().min(u64::MAX as f64) as u64;
    Ok(TheoryReport {
        risk_bound_bounded: risk_bound(inputs.d, inputs.beta, inputs.n, RiskClass::Bounded),
        risk_bound_subgaussian: risk_bound(
            inputs.d,
            inputs.beta,
            inputs.n,
            RiskClass::Subgaussian {
                mu: inputs.mu,
                k: inputs.k,
            },
        ),
        bias_floor: bias_floor(inputs.d, inputs.beta, inputs.epsilon, n_int)?,
        k_star: k,
        epsilon_window_lower: epsilon_window_lower(inputs.d, inputs.beta),
        min_n_unbiased: min_n_for_bias(inputs.d, inputs.beta, inputs.epsilon, inputs.delta)?,
        mc_mse: mc_mse_bound(
            inputs.d,
            inputs.beta,
            n_int.max(1) as usize,
            inputs.n_mc,
            support,
            MseConstant::Conservative,
        ),
        inputs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdviseConfig {
    pub target_tol: f64,
    pub cap: usize,
    pub min_n: usize,
    pub n_mc: usize,
    pub seed: u64,
    pub cutoff: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderRung {
    pub n: usize,
    pub i_n: f64,
    pub i_half: f64,
    pub diff: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Advice {
    pub recommended_n: usize,
    pub start_n: usize,
    pub risk_n: LogCount,
    /// Set when the first rung was already unstable; `recommended_n` is then
    /// the starting value.
    pub unstable: bool,
    pub rungs: Vec<LadderRung>,
}

/// Halving ladder: from `min(risk-bound n, cap)` downwards, compare Î at `n`
/// and `n/2` with independent seeds and keep going while they agree within
/// `target_tol`. The last agreeing rung is recommended.
pub fn advise_n(net: &NoisyNet, data: &LabeledDataset, layer: usize, cfg: &AdviseConfig) -> Result<Advice> {
    if cfg.cap == 0 || cfg.min_n == 0 || cfg.min_n > cfg.cap || cfg.target_tol.is_nan() || cfg.target_tol < 0.0 {
        return Err(Error::InvalidParameter(
            "advise-n needs 1 <= min_n <= cap and target_tol >= 0".into(),
        ));
    }
    let (_, beta) = effective_net(net, layer, None)?;
    let width = net.layers()[layer - 1].out_dim();
    let risk_n = n_for_risk(width, beta, cfg.target_tol, RiskClass::Bounded);
    let start = risk_n.to_u64().map_or(cfg.cap, |v| (v as usize).clamp(1, cfg.cap)).max(cfg.min_n);
    let ladder_seed = derive_seed(cfg.seed, TAG_LADDER);
    let est = |n: usize, stream: u64| -> Result<f64> {
        let c = EstimatorConfig {
            n,
            n_x: n,
            n_mc: cfg.n_mc,
            seed: derive_seed(ladder_seed, stream),
            cutoff: cfg.cutoff,
            keep_per_x: false,
            beta_override: None,
        };
        Ok(estimate_mi(net, data, layer, &c)?.i_sp)
    };

    let mut rungs = Vec::new();
    let mut n = start;
    let mut stream = 0u64;
    let mut recommended = None;
    loop {
        let half = (n / 2).max(1);
        let i_n = est(n, stream)?;
        let i_half = est(half, stream + 1)?;
        stream += 2;
        let diff = (i_n - i_half).abs();
        let stable = diff <= cfg.target_tol;
        rungs.push(LadderRung {
            n,
            i_n,
            i_half,
            diff,
            stable,
        });
        if !stable {
            break;
        }
        recommended = Some(n);
        if half < cfg.min_n || half == n {
            break;
        }
        n = half;
    }
    Ok(Advice {
        recommended_n: recommended.unwrap_or(start),
        start_n: start,
        risk_n,
        unstable: recommended.is_none(),
        rungs,
    })
}

/// Identity channel `T = X + Z` over the given points, for tests and demos.
pub fn identity_channel(points: &[f64], beta: f64) -> Result<(NoisyNet, LabeledDataset)> {
    use crate::noisy_net::{Activation, Labels, Layer};
    let net = NoisyNet::new(vec![Layer {
        weights: Array2::eye(1),
        bias: ndarray::Array1::zeros(1),
        activation: Activation::Linear,
        beta,
    }])?;
    let x = Array2::from_shape_vec((points.len(), 1), points.to_vec()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let labels = Labels::Class((0..points.len() as i32).collect());
    Ok((net, LabeledDataset::new(x, labels, "identity_channel")?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm_entropy::gaussian_entropy;
    use crate::noisy_net::{Activation, Labels};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    #[test]
    fn q_roundtrip() {
        for &p in &[0.5, 0.1, 1e-3, 4.5e-4, 1e-9, 1e-15, 0.9] {
            let x = q_inverse(p);
            assert!(((q_function(x) - p) / p).abs() < 1e-12, "{p}");
        }
        // Q(1) = 0.158655253931457...
        assert!((q_function(1.0) - 0.158_655_253_931_457_05).abs() < 1e-16);
        assert!((q_function(5.0) / 2.866_515_718_791_939e-7 - 1.0).abs() < 1e-14);
        assert!((q_inverse(0.025) - 1.959_963_984_540_054).abs() < 1e-12);
    }

    #[test]
    fn k_star_table() {
        for d in 1..=11 {
            assert_eq!(k_star(d, 0.1, 0.01).unwrap(), 3, "d = {d}");
        }
        for d in [12, 100, 1000, 10_000] {
            assert_eq!(k_star(d, 0.1, 0.01).unwrap(), 2, "d = {d}");
        }
    }

    #[test]
    fn epsilon_window() {
        let lo = epsilon_window_lower(10_000, 0.1);
        assert!(lo > 0.005 && lo < 0.0058, "{lo}");
        assert!(matches!(k_star(10_000, 0.1, 0.005), Err(Error::EpsilonOutOfWindow { .. })));
        assert!(matches!(k_star(3, 0.1, 1.5), Err(Error::EpsilonOutOfWindow { .. })));
        assert!(k_star(0, 0.1, 0.01).is_err());
    }

    #[test]
    fn binary_entropy_value() {
        assert!((binary_entropy(0.01) - 0.056_001_534_354_847_42).abs() < 1e-15);
        assert_eq!(binary_entropy(0.0), 0.0);
        assert!((binary_entropy(0.5) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn bias_floor_and_min_n() {
        let ln = min_n_for_bias(20, 0.1, 0.01, 0.1).unwrap();
        let hand = 20.0 * 0.99 * 2f64.ln() - 0.1 - binary_entropy(0.01);
        assert!((ln.ln - hand).abs() < 1e-12);
        let n = ln.to_u64().unwrap();
        assert!(((n as f64).ln() - hand).abs() < 1e-5);

        // boundary: n = k^{d(1-ε)} e^{-H_b} gives a zero floor
        let boundary = (20.0 * 0.99 * 2f64.ln() - binary_entropy(0.01)).exp().ceil() as u64;
        assert_eq!(bias_floor(20, 0.1, 0.01, boundary).unwrap(), 0.0);
        let mut prev = f64::INFINITY;
        for n in [1u64, 10, 100, 1000, 100_000, 10_000_000] {
            let b = bias_floor(20, 0.1, 0.01, n).unwrap();
            assert!(b <= prev);
            prev = b;
        }
        let huge = min_n_for_bias(10_000, 0.1, 0.01, 0.1).unwrap();
        assert!(huge.ln.is_finite() && huge.to_u64().is_none());
    }

    #[test]
    fn risk_bound_examples() {
        let v = risk_bound(3, 0.5, 1e6, RiskClass::Bounded);
        let hand = 2.0 * (8.0 * 32.0 * (3.0f64 / 1e6).sqrt()) + 3.0 * 5f64.ln() / (4.0 * 1e3);
        assert!((v - hand).abs() < 1e-12 * hand, "{v} {hand}");

        for cls in [RiskClass::Bounded, RiskClass::Subgaussian { mu: 1.0, k: 1.0 }] {
            let a = risk_bound(4, 0.3, 1e4, cls);
            let b = risk_bound(4, 0.3, 2e4, cls);
            assert!(b < a);
            assert!((a / b - 2f64.sqrt()).abs() < 1e-12);
            let mut prev = f64::INFINITY;
            for beta in [0.05, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
                let r = risk_bound(4, beta, 1e4, cls);
                assert!(r < prev, "{cls:?} {beta}");
                prev = r;
            }
        }
    }

    #[test]
    fn subgaussian_by_hand() {
        let (d, beta, n, mu, k) = (2usize, 0.5f64, 100.0f64, 1.0f64, 1.0f64);
        let kb = k + beta / 2f64.sqrt();
        let df = d as f64;
        let delta = (1.0 / 2f64.sqrt() + k / beta).powf(df / 2.0)
            * (8.0 * (2.0 * mu.powi(4) + 32.0 * df * df * k.powi(4) + df * (df + 2.0) * kb.powi(4)) / beta.powi(4)).sqrt()
            * (3.0 * df / 16.0 + mu * mu / (4.0 * kb * kb)).exp()
            / n.sqrt();
        let expect = 2.0 * delta + df * (1.0 + 1.0 / (beta * beta)).ln() / (4.0 * n.sqrt());
        let got = risk_bound(d, beta, n, RiskClass::Subgaussian { mu, k });
        assert!((got - expect).abs() < 1e-10 * expect);
    }

    #[test]
    fn n_for_risk_inverts_bound() {
        let ln = n_for_risk(3, 0.5, 0.1, RiskClass::Bounded);
        let n = ln.ln.exp();
        assert!((risk_bound(3, 0.5, n, RiskClass::Bounded) - 0.1).abs() < 1e-9);
    }

    #[test]
    fn theory_report_runs() {
        let r = theory_report(TheoryInputs {
            d: 5,
            beta: 0.1,
            n: 1e4,
            n_mc: 100,
            epsilon: 0.01,
            delta: 0.1,
            mu: 1.0,
            k: 1.0,
            m_c: None,
        })
        .unwrap();
        assert_eq!(r.k_star, 3);
        assert!(r.risk_bound_bounded > 0.0 && r.mc_mse > 0.0 && r.bias_floor >= 0.0);
    }

    #[test]
    fn two_point_identity_channel() {
        let (net, data) = identity_channel(&[-10.0, 10.0], 0.1).unwrap();
        let cfg = EstimatorConfig {
            n: 1000,
            n_x: 1000,
            n_mc: 1000,
            seed: 3,
            ..Default::default()
        };
        let e = estimate_mi(&net, &data, 1, &cfg).unwrap();
        assert!((e.i_sp - 2f64.ln()).abs() <= 0.02, "{}", e.i_sp);
        assert_eq!(e.h_conditional_mean, gaussian_entropy(1, 0.1));
        assert_eq!(e.i_sp, e.h_unconditional.value - e.h_conditional_mean);
        assert!(e.lower_bound <= e.i_sp + 5.0 * e.combined_std_error);
        assert!(e.i_sp - 5.0 * e.combined_std_error <= e.upper_bound);
    }

    #[test]
    fn single_point_has_zero_information() {
        let net = NoisyNet::init(&[2, 3, 2], &[Activation::Tanh; 2], &[0.1, 0.1], 4).unwrap();
        let data = LabeledDataset::new(Array2::from_elem((1, 2), 0.3), Labels::Class(vec![0]), "one").unwrap();
        let cfg = EstimatorConfig {
            n: 300,
            n_x: 300,
            n_mc: 200,
            seed: 1,
            ..Default::default()
        };
        let e = estimate_mi(&net, &data, 2, &cfg).unwrap();
        assert!(e.i_sp.abs() <= 5.0 * e.combined_std_error, "{} {}", e.i_sp, e.combined_std_error);
    }

    #[test]
    fn deterministic_layer_is_refused() {
        let (net, data) = identity_channel(&[0.0, 1.0], 0.0).unwrap();
        let err = estimate_mi(&net, &data, 1, &EstimatorConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DeterministicLayer { layer: 1 }));
        assert!(err.to_string().contains("vacuous"));
    }

    #[test]
    fn ladder_with_infinite_tolerance_reaches_bottom() {
        let (net, data) = identity_channel(&[-10.0, 10.0], 0.1).unwrap();
        let cfg = AdviseConfig {
            target_tol: f64::INFINITY,
            cap: 512,
            min_n: 16,
            n_mc: 50,
            seed: 0,
            cutoff: None,
        };
        let a = advise_n(&net, &data, 1, &cfg).unwrap();
        assert_eq!(a.recommended_n, 16);
        assert!(!a.unstable);
    }

    #[test]
    fn ladder_on_far_points_is_small() {
        let (net, data) = identity_channel(&[-10.0, 10.0], 0.1).unwrap();
        let cfg = AdviseConfig {
            target_tol: 0.02,
            cap: 1000,
            min_n: 8,
            n_mc: 200,
            seed: 2,
            cutoff: None,
        };
        let a = advise_n(&net, &data, 1, &cfg).unwrap();
        assert!(a.recommended_n <= 1000);
        assert!(a.rungs[0].diff <= 0.02, "{:?}", a.rungs);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn k_star_at_least_two_inside_window(d in 1usize..20_000, beta in 0.01f64..0.4, t in 0.001f64..1.0) {
            let lo = epsilon_window_lower(d, beta);
            let eps = lo + t * (1.0 - lo);
            if eps > lo {
                if let Ok(k) = k_star(d, beta, eps) {
                    prop_assert!(k >= 2);
                }
            }
        }
    }
}
