//! Protocol configuration and its flat `key = value` text form.
//!
//! Keys carry their unit as a suffix (`t_spin_us`, `bin_ns`, ...). Lines
//! starting with `#` and blank lines are ignored. Unknown keys are rejected.

use crate::ensemble::{SpinDecay, GAUSSIAN_FWHM_PER_SIGMA};
use crate::error::{Error, Result};
use crate::model::{compute_beta, BetaInputs, ModelParams};
use crate::protocol::{mode_count, Gate};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfPulse {
    pub fwhm_us: f64,
    pub phase_deg: f64,
    pub chirp_khz: f64,
}

impl RfPulse {
    /// The XYX sequence: adiabatic pulses of 45, 90 and 45 µs chirped over
    /// 100 kHz with relative phases 0, 90 and 0 degrees.
    pub fn xyx() -> Vec<RfPulse> {
        [(45.0, 0.0), (90.0, 90.0), (45.0, 0.0)]
            .into_iter()
            .map(|(fwhm_us, phase_deg)| RfPulse {
                fwhm_us,
                phase_deg,
                chirp_khz: 100.0,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    /// AFC rephasing time 1/Δ (µs).
    pub inv_delta_us: f64,
    /// Detection gate duration τ_g (µs), same for both gates.
    pub gate_us: f64,
    pub t_spin_us: f64,
    /// Delay from the end of the write pulse to the Stokes gate opening (µs).
    pub stokes_dead_time_us: f64,
    pub write_duration_us: f64,
    pub read_duration_us: f64,
    pub write_bandwidth_mhz: f64,
    /// Read-pulse population transfer efficiency η_T.
    pub read_transfer: f64,
    pub rf_pulses: Vec<RfPulse>,
    /// Mean Stokes photon number per gate.
    pub p_s: f64,
    /// Conditional anti-Stokes retrieval within one analysis bin.
    pub eta_r_per_bin: f64,
    /// Write-independent anti-Stokes noise probability per analysis bin.
    pub p_n_per_bin: f64,
    pub bin_ns: f64,
    /// Gaussian FWHM of the Stokes/anti-Stokes pair correlation (µs).
    pub pair_coherence_fwhm_us: f64,
    pub repetitions_per_prep: u32,
    pub prepare_ms: f64,
    pub repump_ms: f64,
    pub t1_optical_ms: f64,
    pub gamma_es: f64,
    pub gamma_eg: f64,
    pub t2_spin_ms: f64,
    pub spin_decay: SpinDecay,
    /// Explicit β; computed from the level-scheme inputs when `None`.
    pub beta: Option<f64>,
    /// Per-channel detector dead time (ns); zero disables it.
    pub detector_dead_time_ns: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            inv_delta_us: 20.0,
            gate_us: 10.0,
            t_spin_us: 1000.0,
            stokes_dead_time_us: 1.0,
            write_duration_us: 8.0,
            read_duration_us: 8.0,
            write_bandwidth_mhz: 2.0,
            read_transfer: 0.75,
            rf_pulses: RfPulse::xyx(),
            p_s: 0.002,
            eta_r_per_bin: 0.0045,
            p_n_per_bin: 0.0012,
            bin_ns: 100.0,
            pair_coherence_fwhm_us: 0.41,
            repetitions_per_prep: 14,
            prepare_ms: 575.0,
            repump_ms: 10.0,
            t1_optical_ms: 1.97,
            gamma_es: 0.75,
            gamma_eg: 0.2,
            t2_spin_ms: 1.0,
            spin_decay: SpinDecay::Exponential,
            beta: None,
            detector_dead_time_ns: 0.0,
        }
    }
}

/// Keys accepted by [`ProtocolConfig::set`] that hold a single number.
pub const NUMERIC_KEYS: &[&str] = &[
    "inv_delta_us",
    "gate_us",
    "t_spin_us",
    "stokes_dead_time_us",
    "write_duration_us",
    "read_duration_us",
    "write_bandwidth_mhz",
    "read_transfer",
    "p_s",
    "eta_r_per_bin",
    "p_n_per_bin",
    "bin_ns",
    "pair_coherence_fwhm_us",
    "repetitions_per_prep",
    "prepare_ms",
    "repump_ms",
    "t1_optical_ms",
    "gamma_es",
    "gamma_eg",
    "t2_spin_ms",
    "beta",
    "detector_dead_time_ns",
];

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::config(key, format!("expected a number, got `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_f64(key, s))
        .collect()
}

fn join(values: impl Iterator<Item = f64>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn check(cond: bool, field: &str, message: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::config(field, message))
    }
}

impl ProtocolConfig {
    /// Sets one key from its textual value. Does not validate the whole config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "inv_delta_us" => self.inv_delta_us = parse_f64(key, v)?,
            "gate_us" => self.gate_us = parse_f64(key, v)?,
            "t_spin_us" => self.t_spin_us = parse_f64(key, v)?,
            "stokes_dead_time_us" => self.stokes_dead_time_us = parse_f64(key, v)?,
            "write_duration_us" => self.write_duration_us = parse_f64(key, v)?,
            "read_duration_us" => self.read_duration_us = parse_f64(key, v)?,
            "write_bandwidth_mhz" => self.write_bandwidth_mhz = parse_f64(key, v)?,
            "read_transfer" => self.read_transfer = parse_f64(key, v)?,
            "p_s" => self.p_s = parse_f64(key, v)?,
            "eta_r_per_bin" => self.eta_r_per_bin = parse_f64(key, v)?,
            "p_n_per_bin" => self.p_n_per_bin = parse_f64(key, v)?,
            "bin_ns" => self.bin_ns = parse_f64(key, v)?,
            "pair_coherence_fwhm_us" => self.pair_coherence_fwhm_us = parse_f64(key, v)?,
            "repetitions_per_prep" => {
                let x = parse_f64(key, v)?;
                if x.fract() != 0.0 || x < 0.0 || x > u32::MAX as f64 {
                    return Err(Error::config(key, "expected a non-negative integer"));
                }
                self.repetitions_per_prep = x as u32;
            }
            "prepare_ms" => self.prepare_ms = parse_f64(key, v)?,
            "repump_ms" => self.repump_ms = parse_f64(key, v)?,
            "t1_optical_ms" => self.t1_optical_ms = parse_f64(key, v)?,
            "gamma_es" => self.gamma_es = parse_f64(key, v)?,
            "gamma_eg" => self.gamma_eg = parse_f64(key, v)?,
            "t2_spin_ms" => self.t2_spin_ms = parse_f64(key, v)?,
            "spin_decay" => {
                self.spin_decay = match v {
                    "exponential" => SpinDecay::Exponential,
                    "gaussian" => SpinDecay::Gaussian,
                    _ => return Err(Error::config(key, "expected `exponential` or `gaussian`")),
                }
            }
            "beta" => {
                self.beta = if v == "auto" {
                    None
                } else {
                    Some(parse_f64(key, v)?)
                }
            }
            "detector_dead_time_ns" => self.detector_dead_time_ns = parse_f64(key, v)?,
            "rf_pulse_fwhm_us" | "rf_pulse_phase_deg" | "rf_pulse_chirp_khz" => {
                let values = parse_list(key, v)?;
                if self.rf_pulses.len() != values.len() {
                    self.rf_pulses.resize(
                        values.len(),
                        RfPulse {
                            fwhm_us: 45.0,
                            phase_deg: 0.0,
                            chirp_khz: 100.0,
                        },
                    );
                }
                for (pulse, x) in self.rf_pulses.iter_mut().zip(values) {
                    match key {
                        "rf_pulse_fwhm_us" => pulse.fwhm_us = x,
                        "rf_pulse_phase_deg" => pulse.phase_deg = x,
                        _ => pulse.chirp_khz = x,
                    }
                }
            }
            _ => return Err(Error::config(key, "unknown configuration key")),
        }
        Ok(())
    }

    pub fn get_numeric(&self, key: &str) -> Option<f64> {
        Some(match key {
            "inv_delta_us" => self.inv_delta_us,
            "gate_us" => self.gate_us,
            "t_spin_us" => self.t_spin_us,
            "stokes_dead_time_us" => self.stokes_dead_time_us,
            "write_duration_us" => self.write_duration_us,
            "read_duration_us" => self.read_duration_us,
            "write_bandwidth_mhz" => self.write_bandwidth_mhz,
            "read_transfer" => self.read_transfer,
            "p_s" => self.p_s,
            "eta_r_per_bin" => self.eta_r_per_bin,
            "p_n_per_bin" => self.p_n_per_bin,
            "bin_ns" => self.bin_ns,
            "pair_coherence_fwhm_us" => self.pair_coherence_fwhm_us,
            "repetitions_per_prep" => self.repetitions_per_prep as f64,
            "prepare_ms" => self.prepare_ms,
            "repump_ms" => self.repump_ms,
            "t1_optical_ms" => self.t1_optical_ms,
            "gamma_es" => self.gamma_es,
            "gamma_eg" => self.gamma_eg,
            "t2_spin_ms" => self.t2_spin_ms,
            "beta" => self.beta()?,
            "detector_dead_time_ns" => self.detector_dead_time_ns,
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("inv_delta_us", self.inv_delta_us),
            ("gate_us", self.gate_us),
            ("t_spin_us", self.t_spin_us),
            ("write_duration_us", self.write_duration_us),
            ("read_duration_us", self.read_duration_us),
            ("write_bandwidth_mhz", self.write_bandwidth_mhz),
            ("bin_ns", self.bin_ns),
            ("prepare_ms", self.prepare_ms),
            ("repump_ms", self.repump_ms),
            ("t1_optical_ms", self.t1_optical_ms),
            ("t2_spin_ms", self.t2_spin_ms),
        ];
        for (field, v) in positive {
            check(v.is_finite() && v > 0.0, field, "must be positive")?;
        }
        let non_negative = [
            ("stokes_dead_time_us", self.stokes_dead_time_us),
            ("pair_coherence_fwhm_us", self.pair_coherence_fwhm_us),
            ("detector_dead_time_ns", self.detector_dead_time_ns),
        ];
        for (field, v) in non_negative {
            check(v.is_finite() && v >= 0.0, field, "must be non-negative")?;
        }
        let mut unit = vec![
            ("read_transfer", self.read_transfer),
            ("p_s", self.p_s),
            ("eta_r_per_bin", self.eta_r_per_bin),
            ("p_n_per_bin", self.p_n_per_bin),
            ("gamma_es", self.gamma_es),
            ("gamma_eg", self.gamma_eg),
        ];
        if let Some(beta) = self.beta {
            unit.push(("beta", beta));
        }
        for (field, v) in unit {
            check((0.0..=1.0).contains(&v), field, "must lie in [0, 1]")?;
        }
        check(
            self.gamma_es + self.gamma_eg <= 1.0 + 1e-12,
            "gamma_eg",
            "branching ratios gamma_es + gamma_eg must not exceed 1",
        )?;
        check(
            self.gate_us < self.inv_delta_us,
            "gate_us",
            "detection gate must be shorter than the AFC period (tau_g < 1/Delta)",
        )?;
        check(
            self.stokes_dead_time_us + self.gate_us <= self.inv_delta_us,
            "stokes_dead_time_us",
            "Stokes gate must close before the write-pulse AFC echo",
        )?;
        check(
            self.rf_pulses.len() % 2 == 1,
            "rf_pulse_fwhm_us",
            "RF sequence must contain an odd number of pulses",
        )?;
        for p in &self.rf_pulses {
            check(
                p.fwhm_us.is_finite() && p.fwhm_us > 0.0,
                "rf_pulse_fwhm_us",
                "pulse durations must be positive",
            )?;
            check(p.phase_deg.is_finite(), "rf_pulse_phase_deg", "must be finite")?;
            check(
                p.chirp_khz.is_finite() && p.chirp_khz >= 0.0,
                "rf_pulse_chirp_khz",
                "must be non-negative",
            )?;
        }
        check(
            self.repetitions_per_prep >= 1,
            "repetitions_per_prep",
            "at least one cycle per preparation",
        )?;
        check(
            self.retrieval_total() <= 1.0,
            "eta_r_per_bin",
            "implied total retrieval probability exceeds 1 for this bin width and pair coherence",
        )?;
        Ok(())
    }

    pub fn bin_us(&self) -> f64 {
        self.bin_ns * 1e-3
    }

    /// Stokes gate in trial time (µs after the end of the write pulse).
    pub fn stokes_gate(&self) -> Gate {
        Gate {
            start: self.stokes_dead_time_us,
            end: self.stokes_dead_time_us + self.gate_us,
        }
    }

    /// Anti-Stokes gate: the conjugate image of the Stokes gate under
    /// `T_S + T_aS = T_spin + 1/Δ`.
    pub fn anti_stokes_gate(&self) -> Gate {
        let sum = self.echo_sum_us();
        let s = self.stokes_gate();
        Gate {
            start: sum - s.end,
            end: sum - s.start,
        }
    }

    /// `T_spin + 1/Δ` (µs), the delay sum at which pairs correlate.
    pub fn echo_sum_us(&self) -> f64 {
        self.t_spin_us + self.inv_delta_us
    }

    pub fn beta_inputs(&self) -> BetaInputs<f64> {
        BetaInputs {
            t_spin_ms: self.t_spin_us * 1e-3,
            t1_ms: self.t1_optical_ms,
            gamma_es: self.gamma_es,
            gamma_eg: self.gamma_eg,
            eta_t: self.read_transfer,
        }
    }

    /// β, either the explicit override or computed from the level scheme.
    pub fn beta(&self) -> Option<f64> {
        match self.beta {
            Some(b) => Some(b),
            None => compute_beta(&self.beta_inputs()).ok(),
        }
    }

    pub fn model_params(&self) -> Result<ModelParams<f64>> {
        let beta = self
            .beta()
            .ok_or_else(|| Error::config("beta", "cannot be computed from the level-scheme inputs"))?;
        Ok(ModelParams {
            p_s: self.p_s,
            eta_r: self.eta_r_per_bin,
            beta,
            p_n: self.p_n_per_bin,
            bin_ns: self.bin_ns,
        })
    }

    /// Number of temporal modes in the Stokes gate, `floor(τ_g / 2τ_c)`,
    /// floored at one for the source partition.
    pub fn source_modes(&self) -> u32 {
        mode_count(self.gate_us, self.pair_coherence_fwhm_us)
            .unwrap_or(1)
            .max(1)
    }

    /// Fraction of pair delay sums `T_S + T_aS` that land in the analysis bin
    /// centred on the echo, for Gaussian jitter of the configured FWHM.
    pub fn central_bin_fraction(&self) -> f64 {
        if self.pair_coherence_fwhm_us == 0.0 {
            return 1.0;
        }
        let sigma = self.pair_coherence_fwhm_us / GAUSSIAN_FWHM_PER_SIGMA;
        libm::erf(self.bin_us() / 2.0 / (sigma * std::f64::consts::SQRT_2))
    }

    /// Total conditional retrieval probability implied by the per-bin value.
    pub fn retrieval_total(&self) -> f64 {
        self.eta_r_per_bin / self.central_bin_fraction()
    }

    /// Bins per detection gate.
    pub fn bins_per_gate(&self) -> f64 {
        self.gate_us / self.bin_us()
    }

    /// Mean number of write-induced spontaneous photons per anti-Stokes gate.
    pub fn write_noise_mean(&self) -> f64 {
        self.beta().unwrap_or(0.0) * self.p_s * self.bins_per_gate()
    }

    /// Mean number of write-independent noise photons per anti-Stokes gate.
    pub fn readout_noise_mean(&self) -> f64 {
        self.p_n_per_bin * self.bins_per_gate()
    }
}

impl FromStr for ProtocolConfig {
    type Err = Error;

    /// Parses `key = value` lines on top of the defaults and validates.
    fn from_str(text: &str) -> Result<Self> {
        let mut config = ProtocolConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, got `{line}`"),
                )
            })?;
            config.set(key.trim(), value)?;
        }
        config.validate()?;
        Ok(config)
    }
}

impl fmt::Display for ProtocolConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for key in NUMERIC_KEYS {
            match *key {
                "beta" => match self.beta {
                    Some(b) => writeln!(f, "beta = {b}")?,
                    None => writeln!(f, "beta = auto")?,
                },
                "repetitions_per_prep" => writeln!(f, "{key} = {}", self.repetitions_per_prep)?,
                _ => writeln!(f, "{key} = {}", self.get_numeric(key).unwrap_or(f64::NAN))?,
            }
        }
        let decay = match self.spin_decay {
            SpinDecay::Exponential => "exponential",
            SpinDecay::Gaussian => "gaussian",
        };
        writeln!(f, "spin_decay = {decay}")?;
        writeln!(f, "rf_pulse_fwhm_us = {}", join(self.rf_pulses.iter().map(|p| p.fwhm_us)))?;
        writeln!(f, "rf_pulse_phase_deg = {}", join(self.rf_pulses.iter().map(|p| p.phase_deg)))?;
        writeln!(f, "rf_pulse_chirp_khz = {}", join(self.rf_pulses.iter().map(|p| p.chirp_khz)))
    }
}
