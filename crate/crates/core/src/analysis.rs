//! Coincidence analysis of detection record streams.
//!
//! Records are consumed trial by trial. For every trial the accumulator bins
//! all Stokes/anti-Stokes pairs by the delay sum `τ = T_S + T_aS`, and pairs
//! the anti-Stokes photons with the Stokes photons of the previous `K` trials
//! to measure the accidental background from data. All accumulated
//! quantities are integer counts, so partial results over disjoint trial
//! ranges merge exactly.

use crate::config::ProtocolConfig;
use crate::error::{Error, Result};
use crate::protocol::{mode_count, Gate};
use crate::records::{Channel, DetectionRecord};
use crate::source::Source;
use rayon::prelude::*;
use std::collections::VecDeque;
use std::fmt::Write as _;

/// Uniform τ binning centred on the echo delay sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauBinning {
    pub origin_us: f64,
    pub width_us: f64,
    pub n_bins: usize,
}

impl TauBinning {
    /// An odd number of bins of width `width_us`, one of them centred on
    /// `center`, covering `[lo, hi]`.
    pub fn centered(center: f64, lo: f64, hi: f64, width_us: f64) -> Self {
        let half = (center - lo).max(hi - center);
        let k = ((half - width_us / 2.0) / width_us - 1e-9).ceil().max(0.0) as usize;
        Self {
            origin_us: center - (k as f64 + 0.5) * width_us,
            width_us,
            n_bins: 2 * k + 1,
        }
    }

    pub fn for_config(config: &ProtocolConfig) -> Self {
        let (s, a) = (config.stokes_gate(), config.anti_stokes_gate());
        Self::centered(config.echo_sum_us(), s.start + a.start, s.end + a.end, config.bin_us())
    }

    pub fn locate(&self, tau: f64) -> Option<usize> {
        let x = ((tau - self.origin_us) / self.width_us).floor();
        if x >= 0.0 && (x as usize) < self.n_bins {
            Some(x as usize)
        } else {
            None
        }
    }

    pub fn center(&self, i: usize) -> f64 {
        self.origin_us + (i as f64 + 0.5) * self.width_us
    }

    pub fn edges(&self, i: usize) -> (f64, f64) {
        let lo = self.origin_us + i as f64 * self.width_us;
        (lo, lo + self.width_us)
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_bins).map(|i| self.center(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairCounting {
    /// Every Stokes/anti-Stokes combination within a trial.
    #[default]
    AllCombinations,
    /// Only the first photon of each channel in a trial.
    FirstPhotonOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccidentalMethod {
    /// Stokes of trial `i - k` against anti-Stokes of trial `i`, `k = 1..=K`.
    #[default]
    InterTrial,
    /// Convolution of the two uniform gates scaled by measured singles.
    AnalyticTriangle,
}

impl AccidentalMethod {
    pub fn name(self) -> &'static str {
        match self {
            AccidentalMethod::InterTrial => "inter_trial",
            AccidentalMethod::AnalyticTriangle => "analytic_triangle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EtaWindow {
    /// The single bin centred on the echo.
    #[default]
    SingleBin,
    /// Bins whose centres lie within ±τ_c of the echo (a 2τ_c window).
    TwoTauC,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    /// Number of trial offsets `K` paired for the inter-trial background.
    pub accidental_offsets: u32,
    pub pairing: PairCounting,
    pub accidentals: AccidentalMethod,
    /// Number of trials in the run. Trials without detections leave no
    /// records, so when `None` it is taken as the largest trial id plus one.
    pub n_trials: Option<u64>,
    /// Half width (µs) of the τ window used by the peak fit.
    pub fit_half_width_us: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            accidental_offsets: 10,
            pairing: PairCounting::AllCombinations,
            accidentals: AccidentalMethod::InterTrial,
            n_trials: None,
            fit_half_width_us: 2.0,
        }
    }
}

/// A value with its 1σ uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub value: f64,
    pub error: f64,
}

impl Measurement {
    pub fn new(value: f64, error: f64) -> Self {
        Self { value, error }
    }
}

/// Mergeable integer tallies of one analysed stream.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationStats {
    pub binning: TauBinning,
    /// Same-trial pairs per τ bin.
    pub coincidences: Vec<u64>,
    /// Pairs from trial offsets `1..=K` per τ bin.
    pub inter_trial: Vec<u64>,
    /// Photons per channel.
    pub singles: [u64; 2],
    /// Photons per channel entering the pair counting.
    pub paired_singles: [u64; 2],
    /// Unordered same-channel photon pairs within a trial.
    pub same_trial_pairs: [u64; 2],
    /// `Σ_k Σ_i N_i N_{i+k}` per channel.
    pub inter_trial_products: [u64; 2],
    /// Per-trial second moments `Σ N²`, `Σ q²` and `Σ qN` per channel, with
    /// `q = N(N - 1)/2` the same-trial pairs of a trial.
    pub pair_moments: [[u64; 3]; 2],
    pub max_trial_id: Option<u64>,
    pub accidental_offsets: u32,
}

impl CorrelationStats {
    pub fn empty(binning: TauBinning, accidental_offsets: u32) -> Self {
        Self {
            binning,
            coincidences: vec![0; binning.n_bins],
            inter_trial: vec![0; binning.n_bins],
            singles: [0; 2],
            paired_singles: [0; 2],
            same_trial_pairs: [0; 2],
            inter_trial_products: [0; 2],
            pair_moments: [[0; 3]; 2],
            max_trial_id: None,
            accidental_offsets,
        }
    }

    /// Adds the tallies of a disjoint trial range.
    pub fn merge(&mut self, other: &CorrelationStats) {
        debug_assert_eq!(self.binning, other.binning);
        for (a, b) in self.coincidences.iter_mut().zip(&other.coincidences) {
            *a += b;
        }
        for (a, b) in self.inter_trial.iter_mut().zip(&other.inter_trial) {
            *a += b;
        }
        for c in 0..2 {
            self.singles[c] += other.singles[c];
            self.paired_singles[c] += other.paired_singles[c];
            self.same_trial_pairs[c] += other.same_trial_pairs[c];
            self.inter_trial_products[c] += other.inter_trial_products[c];
            for m in 0..3 {
                self.pair_moments[c][m] += other.pair_moments[c][m];
            }
        }
        self.max_trial_id = match (self.max_trial_id, other.max_trial_id) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
    }

    pub fn resolve_trials(&self, n_trials: Option<u64>) -> Result<u64> {
        let seen = self.max_trial_id.map(|m| m + 1);
        match (n_trials, seen) {
            (_, None) => Err(Error::analysis("stream contains no detections")),
            (Some(n), Some(s)) if n < s => Err(Error::analysis(format!(
                "trial count {n} is smaller than the largest trial id + 1 ({s})"
            ))),
            (Some(n), _) => Ok(n),
            (None, Some(s)) => Ok(s),
        }
    }

    /// Number of `(i, i + k)` trial pairs visited by the inter-trial pairing.
    pub fn inter_trial_slots(&self, n_trials: u64) -> u64 {
        let k_max = (self.accidental_offsets as u64).min(n_trials.saturating_sub(1));
        (1..=k_max).map(|k| n_trials - k).sum()
    }

    pub fn histogram(&self, n_trials: u64) -> CoincidenceHistogram {
        CoincidenceHistogram {
            bin_width_ns: self.binning.width_us * 1e3,
            tau_origin_us: self.binning.origin_us,
            counts: self.coincidences.clone(),
            n_trials,
            n_stokes: self.singles[0],
            n_anti_stokes: self.singles[1],
        }
    }

    pub fn accidentals(
        &self,
        method: AccidentalMethod,
        n_trials: u64,
        stokes_gate: Gate,
        anti_stokes_gate: Gate,
    ) -> Result<AccidentalEstimate> {
        let n = self.binning.n_bins;
        match method {
            AccidentalMethod::InterTrial => {
                let slots = self.inter_trial_slots(n_trials);
                if n_trials < 2 || slots == 0 {
                    return Err(Error::analysis(
                        "inter-trial accidentals need at least two trials",
                    ));
                }
                let scale = n_trials as f64 / slots as f64;
                // Each photon enters up to K pairs, so pairs sharing a photon
                // add C²/N per channel on top of the Poisson term.
                let shared = self
                    .paired_singles
                    .iter()
                    .map(|&n| if n > 0 { 1.0 / n as f64 } else { 0.0 })
                    .sum::<f64>();
                let expected = self.inter_trial.iter().map(|&c| c as f64 * scale).collect();
                let variance = self
                    .inter_trial
                    .iter()
                    .map(|&c| {
                        let c = c as f64;
                        (c.max(1.0) + c * c * shared) * scale * scale
                    })
                    .collect();
                let rel_var = self
                    .inter_trial
                    .iter()
                    .map(|&c| if c > 0 { 1.0 / c as f64 + shared } else { f64::INFINITY })
                    .collect();
                Ok(AccidentalEstimate {
                    method,
                    expected,
                    rel_var,
                    variance,
                })
            }
            AccidentalMethod::AnalyticTriangle => {
                let [ns, na] = self.paired_singles;
                if ns == 0 || na == 0 {
                    return Err(Error::analysis(
                        "analytic accidentals need singles in both channels",
                    ));
                }
                let pairs_per_trial = ns as f64 * na as f64 / (n_trials as f64 * n_trials as f64);
                let rv = 1.0 / ns as f64 + 1.0 / na as f64;
                let expected: Vec<f64> = (0..n)
                    .map(|i| {
                        let (lo, hi) = self.binning.edges(i);
                        let p = uniform_sum_cdf(hi, stokes_gate, anti_stokes_gate)
                            - uniform_sum_cdf(lo, stokes_gate, anti_stokes_gate);
                        n_trials as f64 * pairs_per_trial * p.max(0.0)
                    })
                    .collect();
                let variance = expected.iter().map(|e| e * e * rv).collect();
                Ok(AccidentalEstimate {
                    method,
                    expected,
                    rel_var: vec![rv; n],
                    variance,
                })
            }
        }
    }

    /// Zero-delay auto-correlation of one channel over its whole gate.
    pub fn auto_correlation(&self, channel: Channel, n_trials: u64) -> Result<Measurement> {
        let c = channel.index();
        if self.singles[c] == 0 {
            return Err(Error::analysis(format!("no {} singles", channel.name())));
        }
        let slots = self.inter_trial_slots(n_trials);
        let products = self.inter_trial_products[c];
        if slots == 0 || products == 0 {
            return Err(Error::analysis(format!(
                "no inter-trial {} pairs to normalise the auto-correlation",
                channel.name()
            )));
        }
        let same = self.same_trial_pairs[c] as f64;
        let scale = 2.0 / n_trials as f64 / (products as f64 / slots as f64);
        let g = same * scale;
        if same == 0.0 {
            // The error of a single pair.
            return Ok(Measurement::new(0.0, scale));
        }
        // Delta method on g ∝ Q / S² with per-trial sums Q = Σq and S = ΣN.
        // Pairs cluster in multi-photon trials, so Var(Q) exceeds Q.
        let n = n_trials as f64;
        let total = self.singles[c] as f64;
        let [n2, q2, qn] = self.pair_moments[c].map(|v| v as f64);
        let var_q = (q2 - same * same / n).max(0.0);
        let var_s = (n2 - total * total / n).max(0.0);
        let cov = qn - same * total / n;
        let rel_var = var_q / (same * same) + 4.0 * var_s / (total * total)
            - 4.0 * cov / (same * total);
        Ok(Measurement::new(g, g * rel_var.max(1.0 / same).sqrt()))
    }
}

/// CDF of `X + Y` with `X ~ U(a)` and `Y ~ U(b)` independent.
fn uniform_sum_cdf(t: f64, a: Gate, b: Gate) -> f64 {
    let ramp = |x: f64| if x > 0.0 { 0.5 * x * x } else { 0.0 };
    let (wa, wb) = (a.duration(), b.duration());
    let v = ramp(t - a.start - b.start) - ramp(t - a.end - b.start) - ramp(t - a.start - b.end)
        + ramp(t - a.end - b.end);
    (v / (wa * wb)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceHistogram {
    pub bin_width_ns: f64,
    pub tau_origin_us: f64,
    pub counts: Vec<u64>,
    pub n_trials: u64,
    pub n_stokes: u64,
    pub n_anti_stokes: u64,
}

impl CoincidenceHistogram {
    pub fn binning(&self) -> TauBinning {
        TauBinning {
            origin_us: self.tau_origin_us,
            width_us: self.bin_width_ns * 1e-3,
            n_bins: self.counts.len(),
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Centre of the bin with the most coincidences (first one on ties).
    pub fn peak_tau_us(&self) -> Option<f64> {
        let (i, &max) = self
            .counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
        (max > 0).then(|| self.binning().center(i))
    }
}

/// Expected accidental coincidences per τ bin over the whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct AccidentalEstimate {
    pub method: AccidentalMethod,
    pub expected: Vec<f64>,
    /// Relative variance of each expected value.
    pub rel_var: Vec<f64>,
    /// Absolute variance of each expected value, with a one-count floor for
    /// bins where no inter-trial pair was seen.
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    pub taus: Vec<f64>,
    pub counts: Vec<u64>,
    /// `None` where the accidental estimate is zero.
    pub g_values: Vec<Option<f64>>,
    pub g_errors: Vec<Option<f64>>,
    pub accidentals: Vec<f64>,
}

impl CorrelationResult {
    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn bin_at(&self, tau: f64) -> Option<usize> {
        if self.taus.len() < 2 {
            return (self.taus.len() == 1).then_some(0);
        }
        let width = self.taus[1] - self.taus[0];
        let i = ((tau - self.taus[0]) / width).round();
        (i >= 0.0 && (i as usize) < self.taus.len()).then_some(i as usize)
    }

    pub fn measurement(&self, i: usize) -> Option<Measurement> {
        Some(Measurement::new(self.g_values[i]?, self.g_errors[i]?))
    }

    /// Delimited text `tau_us,counts,accidentals,g,g_err`; undefined bins
    /// are written as `undefined`.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("tau_us,counts,accidentals,g,g_err\n");
        for i in 0..self.len() {
            let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| x.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.taus[i],
                self.counts[i],
                self.accidentals[i],
                fmt(self.g_values[i]),
                fmt(self.g_errors[i])
            );
        }
        out
    }
}

pub fn histogram_to_delimited(hist: &CoincidenceHistogram, acc: &AccidentalEstimate) -> String {
    let binning = hist.binning();
    let mut out = String::from("tau_us,counts,accidentals\n");
    for (i, c) in hist.counts.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", binning.center(i), c, acc.expected[i]);
    }
    out
}

/// `g(τ) = counts / accidentals` with Poisson errors on both.
pub fn cross_correlation(
    hist: &CoincidenceHistogram,
    acc: &AccidentalEstimate,
) -> Result<CorrelationResult> {
    if hist.counts.len() != acc.expected.len() {
        return Err(Error::analysis(format!(
            "histogram has {} bins but accidental estimate has {}",
            hist.counts.len(),
            acc.expected.len()
        )));
    }
    let binning = hist.binning();
    let mut g_values = Vec::with_capacity(hist.counts.len());
    let mut g_errors = Vec::with_capacity(hist.counts.len());
    for (i, &c) in hist.counts.iter().enumerate() {
        let a = acc.expected[i];
        if a > 0.0 && a.is_finite() {
            let g = c as f64 / a;
            // Zero-count bins keep a one-count Poisson floor on the error.
            let var = (c.max(1) as f64) / (a * a) + g * g * acc.rel_var[i];
            g_values.push(Some(g));
            g_errors.push(Some(var.sqrt()));
        } else {
            g_values.push(None);
            g_errors.push(None);
        }
    }
    Ok(CorrelationResult {
        taus: binning.centers(),
        counts: hist.counts.clone(),
        g_values,
        g_errors,
        accidentals: acc.expected.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CauchySchwarz {
    pub r: f64,
    /// `R exp(-σ)` and `R exp(+σ)` with σ propagated in log space.
    pub lower: f64,
    pub upper: f64,
    pub sigma_log: f64,
}

impl CauchySchwarz {
    /// Number of log-space standard deviations by which `R` exceeds 1.
    pub fn violation_sigmas(&self) -> f64 {
        self.r.ln() / self.sigma_log
    }
}

/// `R = g_SaS² / (g_SS g_aSaS)`; `R > 1` excludes classical fields.
pub fn cauchy_schwarz(
    g_sas: Measurement,
    g_ss: Measurement,
    g_asas: Measurement,
) -> Result<CauchySchwarz> {
    for (name, m) in [("g_SaS", g_sas), ("g_SS", g_ss), ("g_aSaS", g_asas)] {
        if !(m.value > 0.0) || !(m.error >= 0.0) {
            return Err(Error::domain(format!(
                "{name} must be positive with non-negative error, got {} ± {}",
                m.value, m.error
            )));
        }
    }
    let r = g_sas.value * g_sas.value / (g_ss.value * g_asas.value);
    let rel = |m: Measurement| m.error / m.value;
    let sigma_log = (4.0 * rel(g_sas).powi(2) + rel(g_ss).powi(2) + rel(g_asas).powi(2)).sqrt();
    Ok(CauchySchwarz {
        r,
        lower: r * (-sigma_log).exp(),
        upper: r * sigma_log.exp(),
        sigma_log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakFit {
    pub center: f64,
    pub fwhm: f64,
    pub amplitude: f64,
    pub baseline: f64,
    pub fit_rms: f64,
}

fn gaussian(p: &[f64; 4], x: f64) -> f64 {
    let [b, a, c, s] = *p;
    b + a * (-(x - c).powi(2) / (2.0 * s * s)).exp()
}

fn solve4(mut m: [[f64; 4]; 4], mut v: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        v.swap(col, pivot);
        for row in col + 1..4 {
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= f * m[col][k];
            }
            v[row] -= f * v[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| m[row][k] * x[k]).sum();
        x[row] = (v[row] - s) / m[row][row];
    }
    Some(x)
}

/// Least-squares Gaussian-plus-baseline fit to the correlation peak with the
/// default window of ±2 µs.
pub fn fit_peak(result: &CorrelationResult) -> Result<PeakFit> {
    fit_peak_within(result, AnalysisOptions::default().fit_half_width_us)
}

/// Fits bins within `half_width` µs of the largest excess `counts - accidentals`.
pub fn fit_peak_within(result: &CorrelationResult, half_width: f64) -> Result<PeakFit> {
    let defined: Vec<usize> = (0..result.len()).filter(|&i| result.g_values[i].is_some()).collect();
    let seed = defined
        .iter()
        .copied()
        .max_by(|&i, &j| {
            let e = |k: usize| result.counts[k] as f64 - result.accidentals[k];
            e(i).total_cmp(&e(j))
        })
        .ok_or_else(|| Error::analysis("no defined correlation bins to fit"))?;
    let tau_seed = result.taus[seed];
    let (xs, ys): (Vec<f64>, Vec<f64>) = defined
        .iter()
        .filter(|&&i| (result.taus[i] - tau_seed).abs() <= half_width + 1e-9)
        .map(|&i| (result.taus[i], result.g_values[i].expect("defined")))
        .unzip();
    fit_gaussian(&xs, &ys)
}

/// Levenberg-Marquardt fit of `b + a exp(-(x - c)² / 2s²)`.
pub fn fit_gaussian(xs: &[f64], ys: &[f64]) -> Result<PeakFit> {
    if xs.len() < 5 || xs.len() != ys.len() {
        return Err(Error::analysis(format!(
            "peak fit needs at least 5 points, got {}",
            xs.len()
        )));
    }
    let n = xs.len();
    let step = if n > 1 { (xs[n - 1] - xs[0]).abs() / (n - 1) as f64 } else { 1.0 };
    let mut sorted = ys.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (imax, &ymax) = ys
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let b0 = sorted[n / 4];
    let a0 = ymax - b0;
    let above = ys.iter().filter(|&&y| y > b0 + a0 / 2.0).count().max(1);
    let s0 = (above as f64 * step / 2.354_820_045).max(step / 2.0);
    let mut p = [b0, a0, xs[imax], s0];

    let sse = |p: &[f64; 4]| -> f64 {
        xs.iter().zip(ys).map(|(&x, &y)| (y - gaussian(p, x)).powi(2)).sum()
    };
    let mut current = sse(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < 1000 {
        iterations += 1;
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (&x, &y) in xs.iter().zip(ys) {
            let [_, a, c, s] = p;
            let e = (-(x - c).powi(2) / (2.0 * s * s)).exp();
            let j = [1.0, e, a * e * (x - c) / (s * s), a * e * (x - c).powi(2) / (s * s * s)];
            let r = y - gaussian(&p, x);
            for u in 0..4 {
                jtr[u] += j[u] * r;
                for v in 0..4 {
                    jtj[u][v] += j[u] * j[v];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut m = jtj;
            for (u, row) in m.iter_mut().enumerate() {
                row[u] += lambda * jtj[u][u].max(1e-30);
            }
            let Some(delta) = solve4(m, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2], p[3] + delta[3]];
            let next = sse(&trial);
            if next.is_finite() && next <= current {
                let small_step = delta
                    .iter()
                    .zip(&trial)
                    .all(|(d, q)| d.abs() <= 1e-13 * q.abs().max(1e-12));
                let small_gain = current - next <= 1e-15 * current.max(1e-300);
                p = trial;
                current = next;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                if small_step || small_gain {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged || !improved || current < 1e-28 {
            converged = true;
            break;
        }
    }
    let fwhm = 2.354_820_045_030_949_3 * p[3].abs();
    let (lo, hi) = (xs[0].min(xs[n - 1]), xs[0].max(xs[n - 1]));
    if !converged || !fwhm.is_finite() || fwhm <= 0.0 || !(p[1] > 0.0) || p[2] < lo || p[2] > hi {
        return Err(Error::analysis(format!(
            "Gaussian fit did not converge after {iterations} iterations \
             (center {}, fwhm {fwhm}, amplitude {}, baseline {}, sse {current}, {n} points in [{lo}, {hi}])",
            p[2], p[1], p[0]
        )));
    }
    Ok(PeakFit {
        center: p[2],
        fwhm,
        amplitude: p[1],
        baseline: p[0],
        fit_rms: (current / n as f64).sqrt(),
    })
}

/// `η_R = (p_coinc - p_acc) / p_S`.
pub fn eta_from_probabilities(p_coinc: f64, p_acc: f64, p_s: f64) -> Result<f64> {
    if !(p_s > 0.0) {
        return Err(Error::analysis("Stokes probability estimate is zero"));
    }
    Ok((p_coinc - p_acc) / p_s)
}

/// Streaming accumulator over records grouped by trial.
pub struct Accumulator<'a> {
    analyzer: &'a Analyzer,
    stats: CorrelationStats,
    history: VecDeque<TrialSummary>,
    current: Option<TrialBuffer>,
    last_trial: Option<u64>,
    counting: bool,
}

struct TrialSummary {
    trial_id: u64,
    stokes: Vec<f64>,
    counts: [u64; 2],
}

struct TrialBuffer {
    trial_id: u64,
    times: [Vec<f64>; 2],
}

/// Gate geometry and options for one analysis run.
#[derive(Debug, Clone)]
pub struct Analyzer {
    pub binning: TauBinning,
    pub stokes_gate: Gate,
    pub anti_stokes_gate: Gate,
    pub options: AnalysisOptions,
    config: ProtocolConfig,
}

impl Analyzer {
    pub fn new(config: &ProtocolConfig, options: AnalysisOptions) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            binning: TauBinning::for_config(config),
            stokes_gate: config.stokes_gate(),
            anti_stokes_gate: config.anti_stokes_gate(),
            options,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn accumulator(&self) -> Accumulator<'_> {
        Accumulator {
            analyzer: self,
            stats: CorrelationStats::empty(self.binning, self.options.accidental_offsets),
            history: VecDeque::new(),
            current: None,
            last_trial: None,
            counting: true,
        }
    }

    /// Serial single pass over a record stream.
    pub fn accumulate(&self, records: &[DetectionRecord]) -> Result<CorrelationStats> {
        let mut acc = self.accumulator();
        acc.extend(records)?;
        acc.finish()
    }

    /// Simulates and accumulates `n_trials` trials without materialising the
    /// whole record stream. Trailing trials without detections leave no trace
    /// in the tallies, so reports should set [`AnalysisOptions::n_trials`].
    pub fn accumulate_source(&self, source: &Source, n_trials: u64) -> Result<CorrelationStats> {
        let mut acc = self.accumulator();
        source.for_each_batch(n_trials, 1 << 14, |batch| acc.extend(batch))?;
        acc.finish()
    }

    /// Splits the stream at trial boundaries into `chunks` pieces, accumulates
    /// them in parallel and merges. Each piece first replays the preceding
    /// `K` trials as pairing context only, so the merged tallies equal the
    /// serial ones exactly.
    pub fn accumulate_parallel(
        &self,
        records: &[DetectionRecord],
        chunks: usize,
    ) -> Result<CorrelationStats> {
        let chunks = chunks.max(1);
        if chunks == 1 || records.len() < 2 * chunks {
            return self.accumulate(records);
        }
        for w in records.windows(2) {
            if w[1].trial_id < w[0].trial_id {
                return Err(Error::data_in_trial(w[1].trial_id, "records are not grouped by trial"));
            }
        }
        let mut bounds = vec![0usize];
        for c in 1..chunks {
            let mut i = records.len() * c / chunks;
            while i < records.len() && i > 0 && records[i].trial_id == records[i - 1].trial_id {
                i += 1;
            }
            if i > *bounds.last().expect("non-empty") && i < records.len() {
                bounds.push(i);
            }
        }
        bounds.push(records.len());
        let k = self.options.accidental_offsets as u64;
        let parts: Vec<Result<CorrelationStats>> = bounds
            .windows(2)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|w| {
                let (lo, hi) = (w[0], w[1]);
                let first = records[lo].trial_id;
                let ctx_start = records[..lo].partition_point(|r| r.trial_id + k < first);
                let mut acc = self.accumulator();
                acc.prime(&records[ctx_start..lo])?;
                acc.extend(&records[lo..hi])?;
                acc.finish()
            })
            .collect();
        let mut total = CorrelationStats::empty(self.binning, self.options.accidental_offsets);
        for p in parts {
            total.merge(&p?);
        }
        Ok(total)
    }
}

impl<'a> Accumulator<'a> {
    pub fn push(&mut self, record: &DetectionRecord) -> Result<()> {
        let a = self.analyzer;
        let gate = match record.channel {
            Channel::Stokes => a.stokes_gate,
            Channel::AntiStokes => a.anti_stokes_gate,
        };
        if !gate.contains(record.timestamp_us) {
            return Err(Error::data_in_trial(
                record.trial_id,
                format!(
                    "{} detection at {} µs outside its gate [{}, {}]",
                    record.channel.name(),
                    record.timestamp_us,
                    gate.start,
                    gate.end
                ),
            ));
        }
        if let Some(last) = self.last_trial {
            if record.trial_id < last {
                return Err(Error::data_in_trial(
                    record.trial_id,
                    format!("trial ids decrease (previous {last})"),
                ));
            }
        }
        self.last_trial = Some(record.trial_id);
        match &mut self.current {
            Some(buf) if buf.trial_id == record.trial_id => {
                buf.times[record.channel.index()].push(record.timestamp_us);
            }
            _ => {
                self.close_trial();
                let mut times = [Vec::new(), Vec::new()];
                times[record.channel.index()].push(record.timestamp_us);
                self.current = Some(TrialBuffer {
                    trial_id: record.trial_id,
                    times,
                });
            }
        }
        Ok(())
    }

    pub fn extend(&mut self, records: &[DetectionRecord]) -> Result<()> {
        records.iter().try_for_each(|r| self.push(r))
    }

    /// Feeds records that only serve as inter-trial partners for later trials.
    pub fn prime(&mut self, records: &[DetectionRecord]) -> Result<()> {
        let counting = std::mem::replace(&mut self.counting, false);
        let result = self.extend(records);
        self.close_trial();
        self.counting = counting;
        result
    }

    pub fn finish(mut self) -> Result<CorrelationStats> {
        self.close_trial();
        Ok(self.stats)
    }

    fn close_trial(&mut self) {
        let Some(TrialBuffer { trial_id, times: [mut stokes, mut anti] }) = self.current.take() else {
            return;
        };
        let k = self.analyzer.options.accidental_offsets as u64;
        let counts = [stokes.len() as u64, anti.len() as u64];
        if self.analyzer.options.pairing == PairCounting::FirstPhotonOnly {
            for v in [&mut stokes, &mut anti] {
                if let Some(first) = v.iter().copied().min_by(f64::total_cmp) {
                    v.clear();
                    v.push(first);
                }
            }
        }
        while self.history.front().is_some_and(|h| h.trial_id + k < trial_id) {
            self.history.pop_front();
        }
        if self.counting {
            let stats = &mut self.stats;
            let binning = &self.analyzer.binning;
            for c in 0..2 {
                stats.singles[c] += counts[c];
                let q = counts[c] * counts[c].saturating_sub(1) / 2;
                stats.same_trial_pairs[c] += q;
                stats.pair_moments[c][0] += counts[c] * counts[c];
                stats.pair_moments[c][1] += q * q;
                stats.pair_moments[c][2] += q * counts[c];
            }
            stats.paired_singles[0] += stokes.len() as u64;
            stats.paired_singles[1] += anti.len() as u64;
            for &s in &stokes {
                for &a in &anti {
                    if let Some(i) = binning.locate(s + a) {
                        stats.coincidences[i] += 1;
                    }
                }
            }
            for prior in &self.history {
                for c in 0..2 {
                    stats.inter_trial_products[c] += prior.counts[c] * counts[c];
                }
                for &s in &prior.stokes {
                    for &a in &anti {
                        if let Some(i) = binning.locate(s + a) {
                            stats.inter_trial[i] += 1;
                        }
                    }
                }
            }
            stats.max_trial_id = Some(stats.max_trial_id.map_or(trial_id, |m| m.max(trial_id)));
        }
        if k > 0 {
            self.history.push_back(TrialSummary {
                trial_id,
                stokes,
                counts,
            });
        }
    }
}

/// Everything reported for one analysed stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub n_trials: u64,
    pub n_stokes: u64,
    pub n_anti_stokes: u64,
    pub p_s_estimate: f64,
    pub accidental_method: AccidentalMethod,
    pub peak_tau_us: Option<f64>,
    pub central_tau_us: f64,
    pub g_central: Option<Measurement>,
    pub g_ss: Option<Measurement>,
    pub g_asas: Option<Measurement>,
    pub cauchy_schwarz: Option<CauchySchwarz>,
    pub eta_r_bin: Option<Measurement>,
    pub eta_r_window: Option<Measurement>,
    pub fit: Option<PeakFit>,
    pub mode_count: Option<u32>,
}

impl Summary {
    /// Machine-readable `key = value` block; unavailable values are `undefined`.
    pub fn to_key_value(&self) -> String {
        fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
            v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
        }
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("n_trials", self.n_trials.to_string());
        kv("n_stokes", self.n_stokes.to_string());
        kv("n_anti_stokes", self.n_anti_stokes.to_string());
        kv("p_s_estimate", self.p_s_estimate.to_string());
        kv("accidental_method", self.accidental_method.name().to_string());
        kv("peak_tau_us", opt(self.peak_tau_us));
        kv("central_tau_us", self.central_tau_us.to_string());
        kv("g_central", opt(self.g_central.map(|m| m.value)));
        kv("g_central_err", opt(self.g_central.map(|m| m.error)));
        kv("g_ss", opt(self.g_ss.map(|m| m.value)));
        kv("g_ss_err", opt(self.g_ss.map(|m| m.error)));
        kv("g_asas", opt(self.g_asas.map(|m| m.value)));
        kv("g_asas_err", opt(self.g_asas.map(|m| m.error)));
        kv("r", opt(self.cauchy_schwarz.map(|c| c.r)));
        kv("r_lower", opt(self.cauchy_schwarz.map(|c| c.lower)));
        kv("r_upper", opt(self.cauchy_schwarz.map(|c| c.upper)));
        kv("eta_r_bin", opt(self.eta_r_bin.map(|m| m.value)));
        kv("eta_r_bin_err", opt(self.eta_r_bin.map(|m| m.error)));
        kv("eta_r_window", opt(self.eta_r_window.map(|m| m.value)));
        kv("eta_r_window_err", opt(self.eta_r_window.map(|m| m.error)));
        kv("tau_c_fit_us", opt(self.fit.map(|f| f.fwhm)));
        kv("fit_center_us", opt(self.fit.map(|f| f.center)));
        kv("fit_amplitude", opt(self.fit.map(|f| f.amplitude)));
        kv("fit_baseline", opt(self.fit.map(|f| f.baseline)));
        kv("fit_rms", opt(self.fit.map(|f| f.fit_rms)));
        kv("mode_count", opt(self.mode_count));
        out
    }
}

/// Complete reduction of accumulated tallies: histogram, accidentals,
/// correlation function and summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub histogram: CoincidenceHistogram,
    pub accidentals: AccidentalEstimate,
    pub correlation: CorrelationResult,
    pub summary: Summary,
}

impl Analyzer {
    fn window_bins(&self, window: EtaWindow) -> Vec<usize> {
        let center = self.config.echo_sum_us();
        match window {
            EtaWindow::SingleBin => self.binning.locate(center).into_iter().collect(),
            EtaWindow::TwoTauC => {
                let half = self.config.pair_coherence_fwhm_us;
                (0..self.binning.n_bins)
                    .filter(|&i| (self.binning.center(i) - center).abs() <= half + 1e-9)
                    .collect()
            }
        }
    }

    /// Retrieval efficiency `η_R = (p_coinc - p_acc) / p_S` over a window.
    pub fn readout_efficiency(
        &self,
        stats: &CorrelationStats,
        acc: &AccidentalEstimate,
        window: EtaWindow,
    ) -> Result<Measurement> {
        let n_s = stats.paired_singles[0] as f64;
        if n_s == 0.0 {
            return Err(Error::analysis("Stokes probability estimate is zero"));
        }
        let bins = self.window_bins(window);
        let coinc: f64 = bins.iter().map(|&i| stats.coincidences[i] as f64).sum();
        let accidental: f64 = bins.iter().map(|&i| acc.expected[i]).sum();
        let acc_var: f64 = bins.iter().map(|&i| acc.variance[i]).sum();
        let eta = eta_from_probabilities(coinc, accidental, n_s)?;
        let err = ((coinc.max(1.0) + acc_var) / (n_s * n_s) + eta * eta / n_s).sqrt();
        Ok(Measurement::new(eta, err))
    }

    pub fn report(&self, stats: &CorrelationStats) -> Result<Report> {
        let n_trials = stats.resolve_trials(self.options.n_trials)?;
        let histogram = stats.histogram(n_trials);
        let accidentals = stats.accidentals(
            self.options.accidentals,
            n_trials,
            self.stokes_gate,
            self.anti_stokes_gate,
        )?;
        let correlation = cross_correlation(&histogram, &accidentals)?;
        let central = self.binning.locate(self.config.echo_sum_us());
        let g_central = central.and_then(|i| correlation.measurement(i));
        let g_ss = stats.auto_correlation(Channel::Stokes, n_trials).ok();
        let g_asas = stats.auto_correlation(Channel::AntiStokes, n_trials).ok();
        let cs = match (g_central, g_ss, g_asas) {
            (Some(a), Some(b), Some(c)) => cauchy_schwarz(a, b, c).ok(),
            _ => None,
        };
        let eta_r_bin = self.readout_efficiency(stats, &accidentals, EtaWindow::SingleBin).ok();
        let eta_r_window = self.readout_efficiency(stats, &accidentals, EtaWindow::TwoTauC).ok();
        let fit = fit_peak_within(&correlation, self.options.fit_half_width_us).ok();
        let mode_count = fit.and_then(|f| mode_count(self.config.gate_us, f.fwhm).ok());
        let summary = Summary {
            n_trials,
            n_stokes: stats.singles[0],
            n_anti_stokes: stats.singles[1],
            p_s_estimate: stats.singles[0] as f64 / n_trials as f64,
            accidental_method: self.options.accidentals,
            peak_tau_us: histogram.peak_tau_us(),
            central_tau_us: central.map_or(f64::NAN, |i| self.binning.center(i)),
            g_central,
            g_ss,
            g_asas,
            cauchy_schwarz: cs,
            eta_r_bin,
            eta_r_window,
            fit,
            mode_count,
        };
        Ok(Report {
            histogram,
            accidentals,
            correlation,
            summary,
        })
    }
}

/// Analyses a whole in-memory stream with the given options.
pub fn analyze(
    records: &[DetectionRecord],
    config: &ProtocolConfig,
    options: AnalysisOptions,
) -> Result<Report> {
    let analyzer = Analyzer::new(config, options)?;
    let stats = analyzer.accumulate(records)?;
    analyzer.report(&stats)
}

pub fn coincidence_histogram(
    records: &[DetectionRecord],
    config: &ProtocolConfig,
) -> Result<CoincidenceHistogram> {
    let analyzer = Analyzer::new(config, AnalysisOptions::default())?;
    let stats = analyzer.accumulate(records)?;
    Ok(stats.histogram(stats.resolve_trials(None)?))
}

pub fn accidental_estimate(
    records: &[DetectionRecord],
    config: &ProtocolConfig,
    method: AccidentalMethod,
) -> Result<AccidentalEstimate> {
    let analyzer = Analyzer::new(config, AnalysisOptions::default())?;
    let stats = analyzer.accumulate(records)?;
    let n = stats.resolve_trials(None)?;
    stats.accidentals(method, n, analyzer.stokes_gate, analyzer.anti_stokes_gate)
}

pub fn auto_correlation(
    records: &[DetectionRecord],
    channel: Channel,
    config: &ProtocolConfig,
) -> Result<Measurement> {
    let analyzer = Analyzer::new(config, AnalysisOptions::default())?;
    let stats = analyzer.accumulate(records)?;
    stats.auto_correlation(channel, stats.resolve_trials(None)?)
}

pub fn readout_efficiency(
    records: &[DetectionRecord],
    config: &ProtocolConfig,
    window: EtaWindow,
) -> Result<Measurement> {
    let analyzer = Analyzer::new(config, AnalysisOptions::default())?;
    let stats = analyzer.accumulate(records)?;
    let n = stats.resolve_trials(None)?;
    let acc = stats.accidentals(
        AccidentalMethod::InterTrial,
        n,
        analyzer.stokes_gate,
        analyzer.anti_stokes_gate,
    )?;
    analyzer.readout_efficiency(&stats, &acc, window)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(trial_id: u64, channel: Channel, timestamp_us: f64) -> DetectionRecord {
        DetectionRecord {
            trial_id,
            channel,
            timestamp_us,
        }
    }

    #[test]
    fn binning_is_centred_on_echo() {
        let b = TauBinning::for_config(&ProtocolConfig::default());
        assert_eq!(b.n_bins, 201);
        assert!((b.origin_us - 1009.95).abs() < 1e-9);
        let c = b.locate(1020.0).unwrap();
        assert_eq!(c, 100);
        assert!((b.center(c) - 1020.0).abs() < 1e-9);
        assert_eq!(b.locate(1010.0), Some(0));
        assert_eq!(b.locate(1030.0), Some(200));
        assert_eq!(b.locate(1009.0), None);
    }

    #[test]
    fn single_pair_lands_in_echo_bin() {
        let config = ProtocolConfig::default();
        let records = [rec(0, Channel::Stokes, 3.0), rec(0, Channel::AntiStokes, 1017.0)];
        let hist = coincidence_histogram(&records, &config).unwrap();
        assert_eq!(hist.total(), 1);
        let i = hist.binning().locate(1020.0).unwrap();
        assert_eq!(hist.counts[i], 1);
        assert_eq!(hist.peak_tau_us().map(|t| (t - 1020.0).abs() < 1e-9), Some(true));
    }

    #[test]
    fn multi_photon_trial_counts_all_combinations() {
        let config = ProtocolConfig::default();
        let records = [
            rec(0, Channel::Stokes, 2.0),
            rec(0, Channel::Stokes, 6.0),
            rec(0, Channel::AntiStokes, 1010.0),
            rec(0, Channel::AntiStokes, 1015.0),
        ];
        let hist = coincidence_histogram(&records, &config).unwrap();
        assert_eq!(hist.total(), 4);
        let analyzer = Analyzer::new(
            &config,
            AnalysisOptions {
                pairing: PairCounting::FirstPhotonOnly,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(analyzer.accumulate(&records).unwrap().coincidences.iter().sum::<u64>(), 1);
    }

    #[test]
    fn out_of_gate_record_names_trial() {
        let config = ProtocolConfig::default();
        let records = [rec(4, Channel::Stokes, 15.0)];
        match coincidence_histogram(&records, &config) {
            Err(Error::Data { trial_id: Some(4), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let unordered = [rec(4, Channel::Stokes, 5.0), rec(2, Channel::Stokes, 5.0)];
        assert!(matches!(
            coincidence_histogram(&unordered, &config),
            Err(Error::Data { trial_id: Some(2), .. })
        ));
    }

    #[test]
    fn empty_stream_is_an_analysis_error() {
        let config = ProtocolConfig::default();
        assert!(matches!(coincidence_histogram(&[], &config), Err(Error::Analysis(_))));
    }

    #[test]
    fn analytic_triangle_shape() {
        let config = ProtocolConfig::default();
        let analyzer = Analyzer::new(&config, AnalysisOptions::default()).unwrap();
        let mut stats = CorrelationStats::empty(analyzer.binning, 10);
        stats.paired_singles = [100, 100];
        stats.max_trial_id = Some(999);
        let acc = stats
            .accidentals(AccidentalMethod::AnalyticTriangle, 1000, analyzer.stokes_gate, analyzer.anti_stokes_gate)
            .unwrap();
        let (imax, _) = acc
            .expected
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert_eq!(imax, analyzer.binning.locate(1020.0).unwrap());
        // Bins straddling the ends of the reachable range [1010, 1030].
        // Half of each edge bin overlaps the triangle foot: 0.05² / 2 / 100 of the pairs.
        assert!((acc.expected[0] - 10.0 * 1.25e-5).abs() < 1e-12);
        assert!((acc.expected[200] - 10.0 * 1.25e-5).abs() < 1e-12);
        let total: f64 = acc.expected.iter().sum();
        assert!((total - 100.0 * 100.0 / 1000.0).abs() < 1e-9);
        // Zero overlap at the exact extremes.
        let (s, a) = (analyzer.stokes_gate, analyzer.anti_stokes_gate);
        assert_eq!(uniform_sum_cdf(1010.0, s, a), 0.0);
        assert_eq!(uniform_sum_cdf(1030.0, s, a), 1.0);
        assert!((uniform_sum_cdf(1020.0, s, a) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn correlation_normalisation() {
        let hist = CoincidenceHistogram {
            bin_width_ns: 100.0,
            tau_origin_us: 0.0,
            counts: vec![50, 2000, 0],
            n_trials: 10,
            n_stokes: 1,
            n_anti_stokes: 1,
        };
        let acc = AccidentalEstimate {
            method: AccidentalMethod::InterTrial,
            expected: vec![50.0, 1000.0, 0.0],
            rel_var: vec![0.0, 1.0 / 1e6, f64::INFINITY],
            variance: vec![0.0, 1.0, 0.0],
        };
        let g = cross_correlation(&hist, &acc).unwrap();
        assert_eq!(g.g_values[0], Some(1.0));
        assert_eq!(g.g_values[1], Some(2.0));
        let expected_err = 2.0 * (1.0 / 2000.0 + 1.0 / 1e6f64).sqrt();
        assert!((g.g_errors[1].unwrap() - expected_err).abs() < 1e-12);
        assert_eq!(g.g_values[2], None);
        assert!(g.to_delimited().lines().nth(3).unwrap().ends_with("undefined,undefined"));
        let short = AccidentalEstimate {
            expected: vec![1.0],
            rel_var: vec![0.0],
            variance: vec![0.0],
            ..acc
        };
        assert!(cross_correlation(&hist, &short).is_err());
    }

    #[test]
    fn cauchy_schwarz_values() {
        let m = |v: f64| Measurement::new(v, 0.1 * v);
        let cs = cauchy_schwarz(m(3.24), m(1.86), m(1.96)).unwrap();
        assert!((cs.r - 2.88).abs() < 0.01);
        assert!(cs.lower < cs.r && cs.upper > cs.r);
        assert!((cs.r / cs.lower - cs.upper / cs.r).abs() < 1e-12);
        assert!((cauchy_schwarz(m(2.0), m(2.0), m(2.0)).unwrap().r - 1.0).abs() < 1e-15);
        assert_eq!(cauchy_schwarz(m(1.0), m(1.0), m(1.0)).unwrap().r, 1.0);
        assert!(cauchy_schwarz(m(0.0), m(1.0), m(1.0)).is_err());
        assert!(cauchy_schwarz(m(1.0), m(-1.0), m(1.0)).is_err());
    }

    #[test]
    fn gaussian_fit_recovers_noiseless_peak() {
        let sigma = 0.41 / 2.354_820_045_030_949_3;
        let taus: Vec<f64> = (0..201).map(|i| 1009.95 + (i as f64 + 0.5) * 0.1).collect();
        let g: Vec<Option<f64>> = taus
            .iter()
            .map(|t| Some(1.0 + 2.6 * (-(t - 1020.0f64).powi(2) / (2.0 * sigma * sigma)).exp()))
            .collect();
        let result = CorrelationResult {
            counts: g.iter().map(|v| (v.unwrap() * 100.0) as u64).collect(),
            accidentals: vec![100.0; taus.len()],
            g_errors: vec![Some(0.1); taus.len()],
            g_values: g,
            taus,
        };
        let fit = fit_peak(&result).unwrap();
        assert!((fit.center - 1020.0).abs() / 1020.0 < 1e-6);
        assert!((fit.fwhm - 0.41).abs() / 0.41 < 1e-6);
        assert!((fit.amplitude - 2.6).abs() / 2.6 < 1e-6);
        assert!((fit.baseline - 1.0).abs() < 1e-6);
        assert!(fit.fit_rms < 1e-8);
    }

    #[test]
    fn gaussian_fit_needs_points() {
        assert!(fit_gaussian(&[1.0, 2.0, 3.0], &[1.0, 2.0, 1.0]).is_err());
        // A flat line has no peak to converge on.
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ys = vec![1.0; 20];
        assert!(fit_gaussian(&xs, &ys).is_err());
    }

    #[test]
    fn eta_arithmetic() {
        let eta = eta_from_probabilities(1.1e-5, 2.0e-6, 0.002).unwrap();
        assert!((eta - 0.0045).abs() < 1e-12);
        assert!(eta_from_probabilities(1e-5, 1e-6, 0.0).is_err());
    }

    #[test]
    fn inter_trial_slots() {
        let stats = CorrelationStats::empty(TauBinning::for_config(&ProtocolConfig::default()), 3);
        assert_eq!(stats.inter_trial_slots(10), 9 + 8 + 7);
        assert_eq!(stats.inter_trial_slots(2), 1);
        assert_eq!(stats.inter_trial_slots(1), 0);
    }

    #[test]
    fn inter_trial_requires_two_trials() {
        let config = ProtocolConfig::default();
        let records = [rec(0, Channel::Stokes, 3.0), rec(0, Channel::AntiStokes, 1017.0)];
        assert!(matches!(
            accidental_estimate(&records, &config, AccidentalMethod::InterTrial),
            Err(Error::Analysis(_))
        ));
    }

    #[test]
    fn inter_trial_pairs_reach_back_k_trials() {
        let config = ProtocolConfig::default();
        let records = [
            rec(0, Channel::Stokes, 3.0),
            rec(2, Channel::AntiStokes, 1017.0),
            rec(20, Channel::AntiStokes, 1017.0),
        ];
        let analyzer = Analyzer::new(&config, AnalysisOptions::default()).unwrap();
        let stats = analyzer.accumulate(&records).unwrap();
        // Trial 20 is beyond the 10-trial pairing window of trial 0.
        assert_eq!(stats.inter_trial.iter().sum::<u64>(), 1);
        assert_eq!(stats.inter_trial_products, [0, 0]);
        assert_eq!(stats.singles, [1, 2]);
    }

    #[test]
    fn parallel_accumulation_matches_serial() {
        let config = ProtocolConfig::default();
        let mut records = Vec::new();
        for t in 0..400u64 {
            if t % 3 == 0 {
                records.push(rec(t, Channel::Stokes, 1.0 + (t % 10) as f64));
            }
            if t % 2 == 0 {
                records.push(rec(t, Channel::AntiStokes, 1009.0 + (t % 7) as f64));
                records.push(rec(t, Channel::AntiStokes, 1011.5));
            }
        }
        let analyzer = Analyzer::new(&config, AnalysisOptions::default()).unwrap();
        let serial = analyzer.accumulate(&records).unwrap();
        for chunks in [2, 3, 7, 16] {
            assert_eq!(analyzer.accumulate_parallel(&records, chunks).unwrap(), serial);
        }
    }

    #[test]
    fn auto_correlation_of_identical_trials_is_below_one() {
        // Exactly one photon per trial: no same-trial pairs at all.
        let config = ProtocolConfig::default();
        let records: Vec<_> = (0..100).map(|t| rec(t, Channel::AntiStokes, 1012.0)).collect();
        let g = auto_correlation(&records, Channel::AntiStokes, &config).unwrap();
        assert_eq!(g.value, 0.0);
        assert!(g.error > 0.0);
        assert!(auto_correlation(&records, Channel::Stokes, &config).is_err());
    }
}
