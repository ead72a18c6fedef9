//! Monte Carlo photon-pair source.
//!
//! Each trial partitions the Stokes gate into `M` temporal modes and draws a
//! thermal photon number per mode (the marginal of a two-mode squeezed
//! vacuum). Every Stokes photon is retrieved as an anti-Stokes photon with the
//! total conditional probability implied by `eta_r_per_bin`, at the conjugate
//! time `T_spin + 1/Δ - T_S` plus Gaussian timing jitter. Two uncorrelated
//! noise channels fill the anti-Stokes gate uniformly: write-induced
//! spontaneous emission and write-independent readout noise.
//!
//! Trial `i` uses stream `i` of a ChaCha generator keyed by the run seed, so
//! trials can be generated in any order or on any number of workers.

use crate::config::ProtocolConfig;
use crate::ensemble::GAUSSIAN_FWHM_PER_SIGMA;
use crate::error::{Error, Result};
use crate::protocol::Gate;
use crate::records::{Channel, DetectionRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Mean photon number per mode above which the single-excitation picture
/// behind the pair model is no longer accurate.
pub const MULTI_EXCITATION_THRESHOLD: f64 = 0.1;

/// Draws a Bose-Einstein (geometric) photon number with the given mean.
pub fn thermal_sample<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    if !(mean >= 0.0) || !mean.is_finite() {
        return Err(Error::domain(format!("thermal mean must be non-negative, got {mean}")));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Geometric::new(1.0 / (1.0 + mean))
        .map_err(|e| Error::domain(format!("thermal distribution: {e}")))?;
    Ok(dist.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseOrigin {
    ReadoutNoise,
    WriteInducedFluorescence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairEvent {
    pub t_s: f64,
    /// Anti-Stokes emission time, present when `retrieved`.
    pub t_as: Option<f64>,
    pub retrieved: bool,
    /// The anti-Stokes partner was detected inside its gate.
    pub survived_readout: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseEvent {
    pub channel: Channel,
    pub origin: NoiseOrigin,
    pub timestamp_us: f64,
}

/// Ground truth of one trial. Only detected Stokes photons appear as pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialTruth {
    pub trial_id: u64,
    pub pairs: Vec<PairEvent>,
    pub noise: Vec<NoiseEvent>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceTruth {
    /// Trials with at least one generated event, in trial order.
    pub trials: Vec<TrialTruth>,
}

impl SourceTruth {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, self)
            .map_err(|e| Error::Io(std::io::Error::other(e)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceWarning {
    /// Mean photon number per mode exceeds [`MULTI_EXCITATION_THRESHOLD`].
    MultiExcitation { mean_per_mode: f64 },
}

impl std::fmt::Display for SourceWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SourceWarning::MultiExcitation { mean_per_mode } => write!(
                f,
                "mean Stokes photon number per mode {mean_per_mode:.3} exceeds {MULTI_EXCITATION_THRESHOLD}; \
                 the single-excitation pair model degrades"
            ),
        }
    }
}

#[derive(Clone, Copy)]
enum Tag {
    Stokes(usize),
    AntiStokes(usize),
    Noise(usize),
}

/// A configured, seeded source.
#[derive(Clone)]
pub struct Source {
    config: ProtocolConfig,
    seed: u64,
    base: ChaCha8Rng,
    modes: u32,
    mode_len: f64,
    mean_per_mode: f64,
    thermal: Option<Geometric>,
    retrieval: f64,
    jitter: Option<Normal<f64>>,
    write_noise: Option<Poisson<f64>>,
    readout_noise: Option<Poisson<f64>>,
    stokes_gate: Gate,
    anti_stokes_gate: Gate,
    warnings: Vec<SourceWarning>,
}

fn poisson(mean: f64) -> Result<Option<Poisson<f64>>> {
    if mean <= 0.0 {
        return Ok(None);
    }
    Poisson::new(mean)
        .map(Some)
        .map_err(|e| Error::domain(format!("noise distribution: {e}")))
}

impl Source {
    pub fn new(config: &ProtocolConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let modes = config.source_modes();
        let mean_per_mode = config.p_s / modes as f64;
        let mut warnings = Vec::new();
        if mean_per_mode > MULTI_EXCITATION_THRESHOLD {
            log::warn!("mean Stokes photon number per mode {mean_per_mode} is not small");
            warnings.push(SourceWarning::MultiExcitation { mean_per_mode });
        }
        let thermal = if mean_per_mode > 0.0 {
            Some(
                Geometric::new(1.0 / (1.0 + mean_per_mode))
                    .map_err(|e| Error::config("p_s", e.to_string()))?,
            )
        } else {
            None
        };
        let jitter = if config.pair_coherence_fwhm_us > 0.0 {
            Some(
                Normal::new(0.0, config.pair_coherence_fwhm_us / GAUSSIAN_FWHM_PER_SIGMA)
                    .map_err(|e| Error::config("pair_coherence_fwhm_us", e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            seed,
            base: ChaCha8Rng::seed_from_u64(seed),
            modes,
            mode_len: config.gate_us / modes as f64,
            mean_per_mode,
            thermal,
            retrieval: config.retrieval_total(),
            jitter,
            write_noise: poisson(config.write_noise_mean())?,
            readout_noise: poisson(config.readout_noise_mean())?,
            stokes_gate: config.stokes_gate(),
            anti_stokes_gate: config.anti_stokes_gate(),
            warnings,
        })
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn modes(&self) -> u32 {
        self.modes
    }

    pub fn mean_per_mode(&self) -> f64 {
        self.mean_per_mode
    }

    /// Total conditional retrieval probability used per Stokes photon.
    pub fn retrieval(&self) -> f64 {
        self.retrieval
    }

    pub fn warnings(&self) -> &[SourceWarning] {
        &self.warnings
    }

    fn trial_rng(&self, trial_id: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(trial_id);
        rng
    }

    /// Appends the detections of one trial to `out`, sorted by channel and
    /// time. Fills `truth` when given.
    pub fn generate_trial(
        &self,
        trial_id: u64,
        out: &mut Vec<DetectionRecord>,
        truth: Option<&mut TrialTruth>,
    ) {
        let mut rng = self.trial_rng(trial_id);
        let mut pairs: Vec<PairEvent> = Vec::new();
        if let Some(thermal) = &self.thermal {
            for mode in 0..self.modes {
                let n = thermal.sample(&mut rng);
                for _ in 0..n {
                    let u: f64 = rng.random();
                    let t_s = self.stokes_gate.start + (mode as f64 + u) * self.mode_len;
                    let retrieved = rng.random::<f64>() < self.retrieval;
                    let t_as = retrieved.then(|| {
                        let jitter = self.jitter.map_or(0.0, |j| j.sample(&mut rng));
                        self.config.echo_sum_us() - t_s + jitter
                    });
                    pairs.push(PairEvent {
                        t_s,
                        t_as,
                        retrieved,
                        survived_readout: false,
                    });
                }
            }
        }
        let mut noise: Vec<NoiseEvent> = Vec::new();
        let gate = self.anti_stokes_gate;
        for (dist, origin) in [
            (&self.write_noise, NoiseOrigin::WriteInducedFluorescence),
            (&self.readout_noise, NoiseOrigin::ReadoutNoise),
        ] {
            if let Some(dist) = dist {
                let n = dist.sample(&mut rng) as u64;
                for _ in 0..n {
                    let u: f64 = rng.random();
                    noise.push(NoiseEvent {
                        channel: Channel::AntiStokes,
                        origin,
                        timestamp_us: gate.start + u * gate.duration(),
                    });
                }
            }
        }
        if pairs.is_empty() && noise.is_empty() {
            if let Some(t) = truth {
                *t = TrialTruth { trial_id, ..Default::default() };
            }
            return;
        }

        let mut candidates: Vec<(Channel, f64, Tag)> = Vec::with_capacity(2 * pairs.len() + noise.len());
        for (i, p) in pairs.iter().enumerate() {
            candidates.push((Channel::Stokes, p.t_s, Tag::Stokes(i)));
            if let Some(t_as) = p.t_as.filter(|&t| gate.contains(t)) {
                candidates.push((Channel::AntiStokes, t_as, Tag::AntiStokes(i)));
            }
        }
        for (i, n) in noise.iter().enumerate() {
            candidates.push((n.channel, n.timestamp_us, Tag::Noise(i)));
        }
        candidates.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

        let dead = self.config.detector_dead_time_ns * 1e-3;
        let mut last: [Option<f64>; 2] = [None, None];
        let mut stokes_kept = vec![false; pairs.len()];
        let mut noise_kept = vec![false; noise.len()];
        for (channel, t, tag) in candidates {
            let slot = &mut last[channel.index()];
            if dead > 0.0 && slot.is_some_and(|prev| t - prev < dead) {
                continue;
            }
            *slot = Some(t);
            out.push(DetectionRecord {
                trial_id,
                channel,
                timestamp_us: t,
            });
            match tag {
                Tag::Stokes(i) => stokes_kept[i] = true,
                Tag::AntiStokes(i) => pairs[i].survived_readout = true,
                Tag::Noise(i) => noise_kept[i] = true,
            }
        }

        if let Some(t) = truth {
            t.trial_id = trial_id;
            t.pairs = pairs
                .into_iter()
                .zip(stokes_kept)
                .filter_map(|(p, kept)| kept.then_some(p))
                .collect();
            t.noise = noise
                .into_iter()
                .zip(noise_kept)
                .filter_map(|(n, kept)| kept.then_some(n))
                .collect();
        }
    }

    /// Generates trials `[start, end)` serially.
    pub fn generate_range(&self, start: u64, end: u64) -> Vec<DetectionRecord> {
        let mut out = Vec::new();
        for trial in start..end {
            self.generate_trial(trial, &mut out, None);
        }
        out
    }

    /// Generates `n_trials` trials in batches of `batch` trials. Batches are
    /// produced in parallel and handed to `sink` in trial order, so the
    /// observed stream does not depend on the worker count.
    pub fn for_each_batch<F>(&self, n_trials: u64, batch: u64, mut sink: F) -> Result<()>
    where
        F: FnMut(&[DetectionRecord]) -> Result<()>,
    {
        let batch = batch.max(1);
        let wave = rayon::current_num_threads().max(1) as u64 * 2;
        let mut start = 0;
        while start < n_trials {
            let ranges: Vec<(u64, u64)> = (0..wave)
                .map(|k| start + k * batch)
                .take_while(|&s| s < n_trials)
                .map(|s| (s, (s + batch).min(n_trials)))
                .collect();
            start = ranges.last().map_or(n_trials, |r| r.1);
            let batches: Vec<Vec<DetectionRecord>> = ranges
                .par_iter()
                .map(|&(s, e)| self.generate_range(s, e))
                .collect();
            for b in &batches {
                sink(b)?;
            }
        }
        Ok(())
    }

    pub fn run(&self, n_trials: u64) -> Result<Vec<DetectionRecord>> {
        if n_trials == 0 {
            return Err(Error::domain("at least one trial is required"));
        }
        let mut out = Vec::new();
        self.for_each_batch(n_trials, 1 << 14, |b| {
            out.extend_from_slice(b);
            Ok(())
        })?;
        Ok(out)
    }

    pub fn run_with_truth(&self, n_trials: u64) -> Result<(Vec<DetectionRecord>, SourceTruth)> {
        if n_trials == 0 {
            return Err(Error::domain("at least one trial is required"));
        }
        let mut records = Vec::new();
        let mut truth = SourceTruth::default();
        for trial in 0..n_trials {
            let mut t = TrialTruth::default();
            self.generate_trial(trial, &mut records, Some(&mut t));
            if !t.pairs.is_empty() || !t.noise.is_empty() {
                truth.trials.push(t);
            }
        }
        Ok((records, truth))
    }
}

/// Simulates `n_trials` trials of the configured protocol.
pub fn run_trials(config: &ProtocolConfig, n_trials: u64, seed: u64) -> Result<Vec<DetectionRecord>> {
    Source::new(config, seed)?.run(n_trials)
}
