//! Clustering diagnostics: binned entropy of activations, per-unit entropy
//! slopes over epochs, and within/between-class pairwise distance histograms.

use std::collections::HashMap;

use ndarray::ArrayView2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, substream, TAG_PAIRS};

/// Binning range per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BinRange {
    /// The same `[lo, hi]` for every coordinate.
    Fixed { lo: f64, hi: f64 },
    PerDim(Vec<[f64; 2]>),
    /// `[0, max]` with `max` the largest observed value of the set, for
    /// unbounded (ReLU) layers.
    ObservedMax,
    /// `[min, max]` of the observed values of the set.
    Observed,
}

/// Handling of values outside `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutOfRange {
    #[default]
    Error,
    /// Map to the first or last bin.
    Clamp,
    /// Values above `hi` share one extra bin; values below `lo` are errors.
    Overflow,
}

/// Equal-width bins of width `bin_size` anchored at the lower edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinningSpec {
    pub bin_size: f64,
    pub range: BinRange,
    #[serde(default)]
    pub out_of_range: OutOfRange,
}

impl BinningSpec {
    /// `[-1, 1]`, the range of a tanh layer.
    pub fn tanh(bin_size: f64) -> Self {
        Self {
            bin_size,
            range: BinRange::Fixed { lo: -1.0, hi: 1.0 },
            out_of_range: OutOfRange::Error,
        }
    }

    /// Upper edge of a derived range, stretched to hold at least one full bin.
    fn widen(&self, lo: f64, hi: f64) -> f64 {
        if !(self.bin_size.is_finite() && self.bin_size > 0.0) || hi - lo >= self.bin_size {
            return hi;
        }
        // lo + B can round to a width just under B
        let mut h = lo + self.bin_size;
        while h - lo < self.bin_size {
            h = h.next_up();
        }
        h
    }

    fn ranges(&self, values: ArrayView2<f64>) -> Result<Vec<(f64, f64)>> {
        let d = values.ncols();
        let ranges = match &self.range {
            BinRange::Fixed { lo, hi } => vec![(*lo, *hi); d],
            BinRange::PerDim(v) => {
                if v.len() != d {
                    return Err(Error::DimensionMismatch {
                        context: "per-dimension bin ranges",
                        expected: d,
                        got: v.len(),
                    });
                }
                v.iter().map(|r| (r[0], r[1])).collect()
            }
            BinRange::ObservedMax => {
                let max = values.iter().copied().fold(0.0, f64::max);
                vec![(0.0, self.widen(0.0, max)); d]
            }
            BinRange::Observed => {
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = if lo.is_finite() { lo } else { 0.0 };
                vec![(lo, self.widen(lo, hi)); d]
            }
        };
        for &(lo, hi) in &ranges {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidParameter(format!("bin range [{lo}, {hi}] is empty")));
            }
            if !(self.bin_size.is_finite() && self.bin_size > 0.0 && self.bin_size <= hi - lo) {
                return Err(Error::InvalidParameter(format!(
                    "bin size {} must be in (0, {}]",
                    self.bin_size,
                    hi - lo
                )));
            }
        }
        Ok(ranges)
    }
}

/// Number of bins `⌈(hi - lo)/B⌉`.
pub fn bin_count(lo: f64, hi: f64, bin_size: f64) -> u64 {
    ((hi - lo) / bin_size).ceil().max(1.0) as u64
}

fn bin_index(v: f64, lo: f64, hi: f64, spec: &BinningSpec, row: usize, coord: usize) -> Result<u64> {
    let bins = bin_count(lo, hi, spec.bin_size);
    let below = v < lo;
    let above = v > hi;
    if !v.is_finite() || below || above {
        let err = Error::OutOfRange {
            row,
            coord,
            value: v,
            lo,
            hi,
        };
        return match spec.out_of_range {
            _ if v.is_nan() => Err(err),
            OutOfRange::Error => Err(err),
            OutOfRange::Clamp => Ok(if below { 0 } else { bins - 1 }),
            OutOfRange::Overflow if above => Ok(bins),
            OutOfRange::Overflow => Err(err),
        };
    }
    let k = ((v - lo) / spec.bin_size).floor() as u64;
    Ok(k.min(bins - 1))
}

fn entropy_of_counts(mut counts: Vec<usize>, n: usize) -> f64 {
    // summed in sorted order so the value does not depend on hash order
    counts.sort_unstable();
    let nf = n as f64;
    let s: f64 = counts.iter().map(|&c| c as f64 * (c as f64).ln()).sum();
    (nf.ln() - s / nf).max(0.0)
}

/// Empirical Shannon entropy (nats) of the joint bin index tuples.
pub fn binned_entropy(values: ArrayView2<f64>, spec: &BinningSpec) -> Result<f64> {
    let n = values.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let ranges = spec.ranges(values)?;
    let mut counts: HashMap<Vec<u64>, usize> = HashMap::new();
    for (r, row) in values.outer_iter().enumerate() {
        let key = row
            .iter()
            .zip(&ranges)
            .enumerate()
            .map(|(c, (&v, &(lo, hi)))| bin_index(v, lo, hi, spec, r, c))
            .collect::<Result<Vec<u64>>>()?;
        *counts.entry(key).or_insert(0) += 1;
    }
    Ok(entropy_of_counts(counts.into_values().collect(), n))
}

/// [`binned_entropy`] of each coordinate on its own.
pub fn per_unit_binned_entropy(values: ArrayView2<f64>, spec: &BinningSpec) -> Result<Vec<f64>> {
    let n = values.nrows();
    let ranges = spec.ranges(values)?;
    (0..values.ncols())
        .map(|c| {
            let (lo, hi) = ranges[c];
            let mut counts: HashMap<u64, usize> = HashMap::new();
            for (r, &v) in values.column(c).iter().enumerate() {
                *counts.entry(bin_index(v, lo, hi, spec, r, c)?).or_insert(0) += 1;
            }
            Ok(if n == 0 {
                0.0
            } else {
                entropy_of_counts(counts.into_values().collect(), n)
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeSummary {
    pub mean_slope: f64,
    /// Population standard deviation across units.
    pub std_slope: f64,
    pub per_unit: Vec<f64>,
}

/// OLS slope of each unit's entropy against the epoch index.
pub fn entropy_slopes(per_epoch: &[Vec<f64>], epochs: &[f64]) -> Result<SlopeSummary> {
    if per_epoch.len() != epochs.len() {
        return Err(Error::DimensionMismatch {
            context: "entropy slopes epochs",
            expected: per_epoch.len(),
            got: epochs.len(),
        });
    }
    if epochs.len() < 2 {
        return Err(Error::TooFewEpochs(epochs.len()));
    }
    let d = per_epoch[0].len();
    if let Some(bad) = per_epoch.iter().find(|v| v.len() != d) {
        return Err(Error::DimensionMismatch {
            context: "entropy slopes units",
            expected: d,
            got: bad.len(),
        });
    }
    let k = epochs.len() as f64;
    let mean_x = epochs.iter().sum::<f64>() / k;
    let sxx: f64 = epochs.iter().map(|x| (x - mean_x) * (x - mean_x)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("epochs must not all be equal".into()));
    }
    let per_unit: Vec<f64> = (0..d)
        .map(|u| {
            let mean_y = per_epoch.iter().map(|v| v[u]).sum::<f64>() / k;
            let sxy: f64 = epochs.iter().zip(per_epoch).map(|(x, v)| (x - mean_x) * (v[u] - mean_y)).sum();
            sxy / sxx
        })
        .collect();
    let df = d.max(1) as f64;
    let mean_slope = per_unit.iter().sum::<f64>() / df;
    let std_slope = (per_unit.iter().map(|s| (s - mean_slope).powi(2)).sum::<f64>() / df).sqrt();
    Ok(SlopeSummary {
        mean_slope,
        std_slope,
        per_unit,
    })
}

/// Default cap on the number of pairs before uniform subsampling.
pub const DEFAULT_PAIR_CAP: usize = 2_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramSpec {
    pub n_bins: usize,
    pub max_distance: Option<f64>,
    pub pair_cap: usize,
    pub seed: u64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self {
            n_bins: 50,
            max_distance: None,
            pair_cap: DEFAULT_PAIR_CAP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceHistogram {
    pub edges: Vec<f64>,
    pub within_counts: Vec<u64>,
    pub between_counts: Vec<u64>,
    /// Pairs counted (equal to the totals unless subsampled).
    pub n_within_pairs: u64,
    pub n_between_pairs: u64,
    /// `Σ_c C(n_c, 2)` and `Σ_{c<c'} n_c n_{c'}` over the whole set.
    pub total_within_pairs: u64,
    pub total_between_pairs: u64,
    pub subsampled: bool,
    pub pair_cap: usize,
}

impl DistanceHistogram {
    fn mode(counts: &[u64], edges: &[f64]) -> Option<f64> {
        let (k, &c) = counts.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
        (c > 0).then(|| 0.5 * (edges[k] + edges[k + 1]))
    }

    /// Center of the fullest within-class bin.
    pub fn within_mode(&self) -> Option<f64> {
        Self::mode(&self.within_counts, &self.edges)
    }

    pub fn between_mode(&self) -> Option<f64> {
        Self::mode(&self.between_counts, &self.edges)
    }
}

fn distance(values: ArrayView2<f64>, i: usize, j: usize) -> f64 {
    values
        .row(i)
        .iter()
        .zip(values.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Histogram of Euclidean distances over unordered pairs, split by whether
/// the two labels agree. Above `pair_cap` pairs, `pair_cap` pairs are drawn
/// uniformly with replacement from the seed.
pub fn pairwise_distance_histogram(values: ArrayView2<f64>, labels: &[i32], spec: &HistogramSpec) -> Result<DistanceHistogram> {
    let n = values.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            context: "histogram labels",
            expected: n,
            got: labels.len(),
        });
    }
    if n < 2 {
        return Err(Error::InvalidParameter("pairwise histogram needs at least 2 samples".into()));
    }
    if spec.n_bins == 0 {
        return Err(Error::InvalidParameter("n_bins must be >= 1".into()));
    }
    let mut class_sizes: HashMap<i32, u64> = HashMap::new();
    for &l in labels {
        *class_sizes.entry(l).or_insert(0) += 1;
    }
    let total = (n as u64) * (n as u64 - 1) / 2;
    let total_within: u64 = class_sizes.values().map(|&c| c * c.saturating_sub(1) / 2).sum();
    let total_between = total - total_within;

    let subsampled = total > spec.pair_cap as u64;
    let pairs: Vec<(f64, bool)> = if subsampled {
        let mut rng = substream(derive_seed(spec.seed, TAG_PAIRS), 0);
        let picks: Vec<(usize, usize)> = (0..spec.pair_cap)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                (i, j)
            })
            .collect();
        picks
            .par_iter()
            .map(|&(i, j)| (distance(values, i, j), labels[i] == labels[j]))
            .collect()
    } else {
        (0..n)
            .into_par_iter()
            .flat_map_iter(|i| (i + 1..n).map(move |j| (distance(values, i, j), labels[i] == labels[j])))
            .collect()
    };

    let upper = match spec.max_distance {
        Some(m) if m.is_finite() && m > 0.0 => m,
        Some(m) => return Err(Error::InvalidParameter(format!("max_distance must be > 0, got {m}"))),
        None => {
            let m = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    };
    let bins = spec.n_bins;
    let width = upper / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| k as f64 * width).collect();
    let mut within = vec![0u64; bins];
    let mut between = vec![0u64; bins];
    for &(dist, same) in &pairs {
        let k = ((dist / width).floor() as usize).min(bins - 1);
        if same {
            within[k] += 1;
        } else {
            between[k] += 1;
        }
    }
    Ok(DistanceHistogram {
        edges,
        n_within_pairs: within.iter().sum(),
        n_between_pairs: between.iter().sum(),
        within_counts: within,
        between_counts: between,
        total_within_pairs: total_within,
        total_between_pairs: total_between,
        subsampled,
        pair_cap: spec.pair_cap,
    })
}
