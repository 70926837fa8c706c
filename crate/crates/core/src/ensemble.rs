//! Parallel Monte Carlo over independent paths.
//!
//! Path `i` uses seed `path_seed(seed_base, i)`. Paths are simulated in
//! lockstep groups on the rayon pool, collected by index, and reduced over a
//! fixed binary tree of index ranges, so every output is independent of the
//! worker count and of completion order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::sde::{path_seed, CycleObservables, Simulator, DEFAULT_DT_DIV};

/// Paths advanced together by one worker.
const LANES: usize = 8;

/// Upper limit on Freedman-Diaconis bins; heavy tails can otherwise ask for millions.
pub const MAX_HISTOGRAM_BINS: usize = 4096;

/// Probability levels of the reported quantiles.
pub const QUANTILE_LEVELS: [f64; 7] = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99];

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n: usize,
    pub seed_base: u64,
    pub t0: f64,
    pub span: f64,
    pub dt_div: f64,
    /// Retain per-path observables in the result.
    pub keep_samples: bool,
    /// Start state; the upper stable equilibrium at `t0` when absent.
    pub x0: Option<f64>,
    pub level: f64,
    /// Path indices run from `index_offset` to `index_offset + n - 1`.
    pub index_offset: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            seed_base: 0,
            t0: -0.5,
            span: 1.0,
            dt_div: DEFAULT_DT_DIV,
            keep_samples: false,
            x0: None,
            level: 0.0,
            index_offset: 0,
        }
    }
}

impl EnsembleConfig {
    pub fn new(n: usize, seed_base: u64) -> Self {
        Self {
            n,
            seed_base,
            ..Self::default()
        }
    }

    pub fn simulator(&self, params: &ModelParams) -> Result<Simulator> {
        let sim = Simulator::over(*params, self.t0, self.span, self.dt_div)?.crossing_level(self.level);
        Ok(match self.x0 {
            Some(x0) => sim.start_at(x0),
            None => sim,
        })
    }
}

/// Central moment sums of a sample, mergeable without loss of order information.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
}

impl Moments {
    pub fn single(x: f64) -> Self {
        Self {
            count: 1,
            mean: x,
            ..Self::default()
        }
    }

    /// Pairwise update of the first four central moment sums.
    pub fn merge(&self, other: &Self) -> Self {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let d = other.mean - self.mean;
        let dn = d / n;
        let dn2 = dn * dn;
        let cross = d * dn * na * nb;
        Self {
            count: self.count + other.count,
            mean: self.mean + dn * nb,
            m2: self.m2 + other.m2 + cross,
            m3: self.m3 + other.m3 + cross * dn * (na - nb) + 3.0 * dn * (na * other.m2 - nb * self.m2),
            m4: self.m4
                + other.m4
                + cross * dn2 * (na * na - na * nb + nb * nb)
                + 6.0 * dn2 * (na * na * other.m2 + nb * nb * self.m2)
                + 4.0 * dn * (na * other.m3 - nb * self.m3),
        }
    }

    /// Moments of `xs` by a balanced merge tree split at `len / 2`.
    pub fn of(xs: &[f64]) -> Self {
        match xs.len() {
            0 => Self::default(),
            1 => Self::single(xs[0]),
            len => {
                let (lo, hi) = xs.split_at(len / 2);
                Self::of(lo).merge(&Self::of(hi))
            }
        }
    }

    /// As [`Moments::of`], with missing values as empty leaves, so the tree
    /// shape depends on the index range only.
    pub fn of_present(xs: &[Option<f64>]) -> Self {
        match xs.len() {
            0 => Self::default(),
            1 => xs[0].map_or_else(Self::default, Self::single),
            len => {
                let (lo, hi) = xs.split_at(len / 2);
                Self::of_present(lo).merge(&Self::of_present(hi))
            }
        }
    }

    /// Unbiased variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    /// Moment skewness `g1`; zero for a degenerate sample.
    pub fn skewness(&self) -> f64 {
        if self.m2 <= 0.0 {
            return 0.0;
        }
        let n = self.count as f64;
        n.sqrt() * self.m3 / self.m2.powf(1.5)
    }

    /// Moment excess kurtosis `g2`; zero for a degenerate sample.
    pub fn excess_kurtosis(&self) -> f64 {
        if self.m2 <= 0.0 {
            return 0.0;
        }
        let n = self.count as f64;
        n * self.m4 / (self.m2 * self.m2) - 3.0
    }
}

/// Bin edges (one more than counts) and counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Freedman-Diaconis binning of sorted samples: width `2 IQR n^(-1/3)`.
    pub fn freedman_diaconis(sorted: &[f64]) -> Self {
        if sorted.is_empty() {
            return Self {
                edges: Vec::new(),
                counts: Vec::new(),
            };
        }
        let n = sorted.len();
        let (lo, hi) = (sorted[0], sorted[n - 1]);
        if lo == hi {
            return Self {
                edges: vec![lo - 0.5, hi + 0.5],
                counts: vec![n as u64],
            };
        }
        let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
        let width = 2.0 * iqr / (n as f64).cbrt();
        let bins = if width > 0.0 {
            (((hi - lo) / width).ceil() as usize).clamp(1, MAX_HISTOGRAM_BINS)
        } else {
            MAX_HISTOGRAM_BINS.min(n)
        };
        let step = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * step).collect();
        edges.push(hi);
        let mut counts = vec![0u64; bins];
        for &x in sorted {
            let i = (((x - lo) / step) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Self { edges, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(left_edge, right_edge, count)` rows.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (self.edges[i], self.edges[i + 1], c))
    }
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of an empty sample");
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let i = h.floor() as usize;
    if i + 1 >= n {
        return sorted[n - 1];
    }
    sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i])
}

fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Summary statistics of one observable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableSummary {
    pub count: u64,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub min: f64,
    pub max: f64,
    /// `(level, value)` pairs at [`QUANTILE_LEVELS`].
    pub quantiles: Vec<(f64, f64)>,
    pub histogram: Histogram,
}

impl ObservableSummary {
    fn from_parts(moments: &Moments, sorted: &[f64]) -> Option<Self> {
        if sorted.is_empty() {
            return None;
        }
        Some(Self {
            count: moments.count,
            mean: moments.mean,
            variance: moments.variance(),
            skewness: moments.skewness(),
            excess_kurtosis: moments.excess_kurtosis(),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            quantiles: QUANTILE_LEVELS
                .iter()
                .map(|&p| (p, quantile_sorted(sorted, p)))
                .collect(),
            histogram: Histogram::freedman_diaconis(sorted),
        })
    }

    pub fn of(samples: &[f64]) -> Option<Self> {
        Self::from_parts(&Moments::of(samples), &sorted_copy(samples))
    }

    pub fn quantile(&self, level: f64) -> Option<f64> {
        self.quantiles.iter().find(|(p, _)| *p == level).map(|&(_, q)| q)
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5).expect("median is always reported")
    }

    /// Standard error of the unbiased variance, from the fourth central moment.
    pub fn variance_std_error(&self) -> f64 {
        let n = self.count as f64;
        if n < 4.0 {
            return f64::INFINITY;
        }
        let m4 = (self.excess_kurtosis + 3.0) * self.variance * self.variance;
        let v2 = self.variance * self.variance;
        ((m4 - v2 * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt()
    }
}

/// Mergeable per-observable state: moments plus the sorted sample multiset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObservableAccumulator {
    pub moments: Moments,
    sorted: Vec<f64>,
}

impl ObservableAccumulator {
    pub fn of(samples: &[f64]) -> Self {
        Self {
            moments: Moments::of(samples),
            sorted: sorted_copy(samples),
        }
    }

    pub fn of_present(samples: &[Option<f64>]) -> Self {
        let present: Vec<f64> = samples.iter().flatten().copied().collect();
        Self {
            moments: Moments::of_present(samples),
            sorted: sorted_copy(&present),
        }
    }

    pub fn merge(&self, other: &Self) -> Self {
        let mut sorted = Vec::with_capacity(self.sorted.len() + other.sorted.len());
        let (mut i, mut j) = (0, 0);
        while i < self.sorted.len() && j < other.sorted.len() {
            if other.sorted[j].total_cmp(&self.sorted[i]).is_lt() {
                sorted.push(other.sorted[j]);
                j += 1;
            } else {
                sorted.push(self.sorted[i]);
                i += 1;
            }
        }
        sorted.extend_from_slice(&self.sorted[i..]);
        sorted.extend_from_slice(&other.sorted[j..]);
        Self {
            moments: self.moments.merge(&other.moments),
            sorted,
        }
    }

    pub fn summary(&self) -> Option<ObservableSummary> {
        ObservableSummary::from_parts(&self.moments, &self.sorted)
    }
}

/// Mergeable ensemble state over a contiguous range of path indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnsembleAccumulator {
    pub n: u64,
    pub crossed: u64,
    pub area: ObservableAccumulator,
    pub tau0: ObservableAccumulator,
    pub lambda0: ObservableAccumulator,
}

impl EnsembleAccumulator {
    /// Accumulates observables listed in path-index order.
    pub fn of(obs: &[CycleObservables]) -> Self {
        let area: Vec<f64> = obs.iter().map(|o| o.area).collect();
        let tau0: Vec<Option<f64>> = obs.iter().map(|o| o.tau0).collect();
        let lambda0: Vec<Option<f64>> = obs.iter().map(|o| o.lambda0).collect();
        Self {
            n: obs.len() as u64,
            crossed: obs.iter().filter(|o| o.crossed).count() as u64,
            area: ObservableAccumulator::of(&area),
            tau0: ObservableAccumulator::of_present(&tau0),
            lambda0: ObservableAccumulator::of_present(&lambda0),
        }
    }

    /// Combines with the accumulator of the index range that follows this one.
    pub fn merge(&self, next: &Self) -> Self {
        Self {
            n: self.n + next.n,
            crossed: self.crossed + next.crossed,
            area: self.area.merge(&next.area),
            tau0: self.tau0.merge(&next.tau0),
            lambda0: self.lambda0.merge(&next.lambda0),
        }
    }

    pub fn finish(&self, seed_base: u64) -> EnsembleSummary {
        EnsembleSummary {
            n: self.n,
            seed_base,
            crossing_rate: if self.n == 0 {
                0.0
            } else {
                self.crossed as f64 / self.n as f64
            },
            crossed: self.crossed,
            area: self.area.summary(),
            tau0: self.tau0.summary(),
            lambda0: self.lambda0.summary(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n: u64,
    pub seed_base: u64,
    pub crossing_rate: f64,
    pub crossed: u64,
    pub area: Option<ObservableSummary>,
    /// Over crossing paths only.
    pub tau0: Option<ObservableSummary>,
    /// Over crossing paths only.
    pub lambda0: Option<ObservableSummary>,
}

impl EnsembleSummary {
    pub fn area(&self) -> &ObservableSummary {
        self.area.as_ref().expect("ensembles have at least two paths")
    }

    pub fn observables(&self) -> impl Iterator<Item = (&'static str, &ObservableSummary)> {
        [("area", &self.area), ("tau0", &self.tau0), ("lambda0", &self.lambda0)]
            .into_iter()
            .filter_map(|(name, s)| s.as_ref().map(|s| (name, s)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleRun {
    pub summary: EnsembleSummary,
    /// Per-path observables in index order, when requested.
    pub samples: Option<Vec<CycleObservables>>,
}

impl EnsembleRun {
    pub fn area_samples(&self) -> Result<Vec<f64>> {
        let samples = self.samples.as_ref().ok_or(Error::NoSamples)?;
        Ok(samples.iter().map(|o| o.area).collect())
    }

    /// Exceedance `P(|area - center| >= h)` from the retained samples.
    pub fn tail_probability(&self, center: f64, h: f64) -> Result<TailEstimate> {
        tail_probability(&self.area_samples()?, center, h)
    }
}

/// Observables of paths `offset .. offset + n` in index order.
pub fn simulate_observables(sim: &Simulator, seed_base: u64, offset: u64, n: usize) -> Result<Vec<CycleObservables>> {
    let groups: Vec<Result<Vec<CycleObservables>>> = (0..n.div_ceil(LANES))
        .into_par_iter()
        .map(|g| {
            let start = g * LANES;
            let seed = |i: usize| path_seed(seed_base, offset + i as u64);
            if start + LANES <= n {
                let seeds: [u64; LANES] = std::array::from_fn(|l| seed(start + l));
                Ok(sim.observe_lanes(&seeds)?.to_vec())
            } else {
                (start..n).map(|i| sim.observe(seed(i))).collect()
            }
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for g in groups {
        out.extend(g?);
    }
    Ok(out)
}

/// Runs `config.n` paths on the current rayon pool.
pub fn run_ensemble(params: &ModelParams, config: &EnsembleConfig) -> Result<EnsembleRun> {
    if config.n < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: config.n,
        });
    }
    let sim = config.simulator(params)?;
    let obs = simulate_observables(&sim, config.seed_base, config.index_offset, config.n)?;
    let summary = EnsembleAccumulator::of(&obs).finish(config.seed_base);
    Ok(EnsembleRun {
        summary,
        samples: config.keep_samples.then_some(obs),
    })
}

/// Runs on a dedicated pool of `threads` workers; results do not depend on `threads`.
pub fn run_ensemble_with_threads(params: &ModelParams, config: &EnsembleConfig, threads: usize) -> Result<EnsembleRun> {
    with_threads(threads, || run_ensemble(params, config))
}

/// Runs `f` on a fresh rayon pool with `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(f)
}

/// Reconstructs the observables of one ensemble member.
pub fn replay_path(params: &ModelParams, config: &EnsembleConfig, index: u64) -> Result<CycleObservables> {
    config
        .simulator(params)?
        .observe(path_seed(config.seed_base, config.index_offset + index))
}

/// Exceedance fraction with a 95% Wilson score interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub threshold: f64,
    pub exceed: u64,
    pub n: u64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Wilson score interval for `k` successes out of `n` at normal quantile `z`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    let n = n as f64;
    let p = k as f64 / n;
    let z2n = z * z / n;
    let center = (p + 0.5 * z2n) / (1.0 + z2n);
    let half = z / (1.0 + z2n) * (p * (1.0 - p) / n + 0.25 * z2n / n).sqrt();
    let lower = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let upper = if k as f64 == n { 1.0 } else { (center + half).min(1.0) };
    (lower, upper)
}

/// `P(|x - center| >= h)` over the samples.
pub fn tail_probability(samples: &[f64], center: f64, h: f64) -> Result<TailEstimate> {
    if samples.is_empty() {
        return Err(Error::NoSamples);
    }
    let exceed = samples.iter().filter(|&&x| (x - center).abs() >= h).count() as u64;
    let n = samples.len() as u64;
    let (lower, upper) = wilson_interval(exceed, n, Z_95);
    Ok(TailEstimate {
        threshold: h,
        exceed,
        n,
        estimate: exceed as f64 / n as f64,
        lower,
        upper,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianityThresholds {
    pub max_abs_skewness: f64,
    pub max_abs_excess_kurtosis: f64,
    pub min_samples: usize,
}

impl Default for GaussianityThresholds {
    fn default() -> Self {
        Self {
            max_abs_skewness: 0.2,
            max_abs_excess_kurtosis: 0.5,
            min_samples: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianityReport {
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub gaussian: bool,
}

pub fn gaussianity_check(samples: &[f64], thresholds: &GaussianityThresholds) -> Result<GaussianityReport> {
    if samples.len() < thresholds.min_samples {
        return Err(Error::TooFewSamples {
            needed: thresholds.min_samples,
            got: samples.len(),
        });
    }
    let m = Moments::of(samples);
    let (skewness, excess_kurtosis) = (m.skewness(), m.excess_kurtosis());
    Ok(GaussianityReport {
        skewness,
        excess_kurtosis,
        gaussian: skewness.abs() < thresholds.max_abs_skewness
            && excess_kurtosis.abs() < thresholds.max_abs_excess_kurtosis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::det;
    use crate::sde::NoiseStream;
    use proptest::prelude::*;

    fn small_amplitude() -> ModelParams {
        ModelParams::with_a0(0.001, 0.05, -0.1).unwrap()
    }

    fn quick(n: usize, seed: u64) -> EnsembleConfig {
        EnsembleConfig {
            dt_div: 20.0,
            keep_samples: true,
            ..EnsembleConfig::new(n, seed)
        }
    }

    fn naive_moments(xs: &[f64]) -> (f64, f64, f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let c = |p: i32| xs.iter().map(|x| (x - mean).powi(p)).sum::<f64>();
        (mean, c(2), c(3), c(4))
    }

    #[test]
    fn moments_match_two_pass_formulas() {
        let xs: Vec<f64> = NoiseStream::new(4).take(5000).map(|z| z.exp()).collect();
        let m = Moments::of(&xs);
        let (mean, c2, c3, c4) = naive_moments(&xs);
        assert!((m.mean - mean).abs() < 1e-12 * mean.abs());
        assert!((m.m2 - c2).abs() < 1e-10 * c2);
        assert!((m.m3 - c3).abs() < 1e-9 * c3.abs());
        assert!((m.m4 - c4).abs() < 1e-9 * c4);
    }

    #[test]
    fn moments_stable_under_large_offset() {
        let xs: Vec<f64> = NoiseStream::new(5).take(100_000).map(|z| 1e8 + z).collect();
        let m = Moments::of(&xs);
        assert!((m.variance() - 1.0).abs() < 0.02, "{}", m.variance());
    }

    #[test]
    fn quantiles_type7() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(quantile_sorted(&xs, 1.0), 4.0);
        assert_eq!(quantile_sorted(&xs, 0.5), 2.5);
        assert!((quantile_sorted(&xs, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn histogram_counts_sum_to_n() {
        let xs: Vec<f64> = NoiseStream::new(6).take(10_000).collect();
        let h = Histogram::freedman_diaconis(&sorted_copy(&xs));
        assert_eq!(h.total(), 10_000);
        assert_eq!(h.edges.len(), h.counts.len() + 1);
        assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
        let constant = Histogram::freedman_diaconis(&[2.0; 10]);
        assert_eq!(constant.counts, vec![10]);
    }

    #[test]
    fn zero_noise_ensemble_is_degenerate() {
        let p = small_amplitude().with_sigma(0.0);
        let orbit = det::upper_orbit(&p, &det::OrbitOptions::default()).unwrap();
        let cfg = EnsembleConfig {
            n: 16,
            x0: Some(orbit.fixed_point),
            ..EnsembleConfig::default()
        };
        let run = run_ensemble(&p, &cfg).unwrap();
        let area = run.summary.area();
        assert_eq!(area.variance, 0.0);
        let exact = det::det_area(&orbit.path, p.amplitude).unwrap();
        assert!((area.mean - exact).abs() < 4e-6 * p.amplitude);
        assert_eq!(run.summary.crossing_rate, 0.0);
        assert!(run.summary.tau0.is_none());
    }

    #[test]
    fn thread_count_does_not_change_summary() {
        let p = small_amplitude().with_sigma(0.3);
        let cfg = quick(37, 9);
        let one = run_ensemble_with_threads(&p, &cfg, 1).unwrap();
        for threads in [2, 8] {
            let other = run_ensemble_with_threads(&p, &cfg, threads).unwrap();
            assert_eq!(
                serde_json::to_string(&one.summary).unwrap(),
                serde_json::to_string(&other.summary).unwrap()
            );
            assert_eq!(one.samples, other.samples);
        }
    }

    #[test]
    fn merge_of_halves_equals_whole() {
        let p = small_amplitude().with_sigma(0.3);
        let k = 24;
        let whole = run_ensemble(&p, &quick(2 * k, 3)).unwrap();
        let first = run_ensemble(&p, &quick(k, 3)).unwrap();
        let second = run_ensemble(
            &p,
            &EnsembleConfig {
                index_offset: k as u64,
                ..quick(k, 3)
            },
        )
        .unwrap();
        let merged = EnsembleAccumulator::of(first.samples.as_ref().unwrap())
            .merge(&EnsembleAccumulator::of(second.samples.as_ref().unwrap()))
            .finish(3);
        assert_eq!(merged, whole.summary);
    }

    #[test]
    fn replay_single_member() {
        let p = small_amplitude().with_sigma(0.2);
        let cfg = quick(20, 17);
        let run = run_ensemble(&p, &cfg).unwrap();
        let samples = run.samples.unwrap();
        for i in [0u64, 7, 19] {
            assert_eq!(replay_path(&p, &cfg, i).unwrap(), samples[i as usize]);
        }
    }

    #[test]
    fn summary_invariants() {
        let p = small_amplitude().with_sigma(0.4);
        let run = run_ensemble(&p, &quick(64, 1)).unwrap();
        let s = &run.summary;
        assert!(s.crossed > 0, "large noise should cross");
        for (_, o) in s.observables() {
            assert!(o.variance >= 0.0);
            assert!(o.quantiles.windows(2).all(|w| w[0].1 <= w[1].1));
            assert_eq!(o.histogram.total(), o.count);
        }
        assert_eq!(s.tau0.as_ref().unwrap().count, s.crossed);
        assert!(s.lambda0.as_ref().unwrap().max <= p.amplitude);
    }

    #[test]
    fn too_few_paths() {
        assert!(run_ensemble(&small_amplitude(), &EnsembleConfig::new(1, 0)).is_err());
    }

    #[test]
    fn tail_probability_edges() {
        let xs: Vec<f64> = NoiseStream::new(8).take(2000).collect();
        let t = tail_probability(&xs, 0.0, 0.0).unwrap();
        assert_eq!(t.estimate, 1.0);
        let t = tail_probability(&xs, 0.0, 100.0).unwrap();
        assert_eq!(t.estimate, 0.0);
        assert_eq!(t.lower, 0.0);
        // Wilson upper bound with no exceedances is z^2/(n + z^2), near the rule of three.
        assert!(t.upper > 3.0 / 2000.0 && t.upper < 4.0 / 2000.0, "{}", t.upper);
        assert_eq!(tail_probability(&[], 0.0, 1.0), Err(Error::NoSamples));
        let run = EnsembleRun {
            summary: EnsembleAccumulator::default().finish(0),
            samples: None,
        };
        assert_eq!(run.tail_probability(0.0, 1.0), Err(Error::NoSamples));
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson_interval(30, 1000, Z_95);
        assert!(lo < 0.03 && 0.03 < hi);
        assert!((lo - 0.0211).abs() < 5e-4 && (hi - 0.0425).abs() < 5e-4);
    }

    #[test]
    fn gaussianity_calibration() {
        let th = GaussianityThresholds::default();
        let normal: Vec<f64> = NoiseStream::new(10).take(20_000).collect();
        assert!(gaussianity_check(&normal, &th).unwrap().gaussian);
        let skewed: Vec<f64> = normal.iter().map(|z| z.exp()).collect();
        assert!(!gaussianity_check(&skewed, &th).unwrap().gaussian);
        assert!(gaussianity_check(&normal[..10], &th).is_err());
    }

    #[test]
    fn variance_error_for_normal_data() {
        let xs: Vec<f64> = NoiseStream::new(11).take(10_000).collect();
        let s = ObservableSummary::of(&xs).unwrap();
        // Var(s^2) = 2 sigma^4 / (n - 1) for normal data.
        let expected = (2.0f64 / 9999.0).sqrt();
        assert!((s.variance_std_error() / expected - 1.0).abs() < 0.1);
    }

    proptest! {
        #[test]
        fn merge_matches_whole(xs in prop::collection::vec(-1e3f64..1e3, 2..200), cut in 0usize..200) {
            let cut = cut % xs.len();
            let (a, b) = xs.split_at(cut);
            let merged = Moments::of(a).merge(&Moments::of(b));
            let whole = Moments::of(&xs);
            prop_assert_eq!(merged.count, whole.count);
            let scale = 1.0 + whole.m2.abs();
            prop_assert!((merged.mean - whole.mean).abs() < 1e-9 * (1.0 + whole.mean.abs()));
            prop_assert!((merged.m2 - whole.m2).abs() < 1e-9 * scale);
        }

        #[test]
        fn accumulator_merge_sorts(xs in prop::collection::vec(-10f64..10.0, 0..50), ys in prop::collection::vec(-10f64..10.0, 0..50)) {
            let merged = ObservableAccumulator::of(&xs).merge(&ObservableAccumulator::of(&ys));
            let mut all = xs.clone();
            all.extend(&ys);
            prop_assert_eq!(merged.sorted, sorted_copy(&all));
        }
    }
}
