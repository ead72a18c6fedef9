//! Experimental cycle: timeline, timing law, phase matching and mode count.

use crate::config::ProtocolConfig;
use crate::error::{Error, Result};
use crate::num::Real;

/// Closed detection window in trial time (µs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate {
    pub start: f64,
    pub end: f64,
}

impl Gate {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntervalLabel {
    Prepare,
    Write,
    StokesGate,
    RfPulse,
    Read,
    AntiStokesGate,
    Repump,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub label: IntervalLabel,
    /// Absolute start (µs from the start of the preparation).
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// One preparation followed by `repetitions_per_prep` write/store/read cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub intervals: Vec<Interval>,
    /// Absolute time of each cycle's trial origin (end of its write pulse).
    pub cycle_origins: Vec<f64>,
}

impl Timeline {
    pub fn of(&self, label: IntervalLabel) -> impl Iterator<Item = &Interval> {
        self.intervals.iter().filter(move |i| i.label == label)
    }

    pub fn cycles(&self) -> usize {
        self.cycle_origins.len()
    }

    /// Checks ordering, non-overlap and the per-cycle gate placement.
    pub fn validate(&self) -> Result<()> {
        for w in self.intervals.windows(2) {
            if w[0].end > w[1].start + 1e-9 {
                return Err(Error::config(
                    label_field(w[1].label),
                    format!(
                        "{:?} [{}, {}] overlaps {:?} [{}, {}]",
                        w[0].label, w[0].start, w[0].end, w[1].label, w[1].start, w[1].end
                    ),
                ));
            }
        }
        for i in &self.intervals {
            if !(i.end > i.start) {
                return Err(Error::config(label_field(i.label), "interval has no duration"));
            }
        }
        let mut last_write_end = None;
        let mut last_read_end = None;
        for i in &self.intervals {
            match i.label {
                IntervalLabel::Write => last_write_end = Some(i.end),
                IntervalLabel::Read => last_read_end = Some(i.end),
                IntervalLabel::StokesGate if last_write_end.is_none_or(|w| i.start < w) => {
                    return Err(Error::config("stokes_dead_time_us", "Stokes gate opens before the write pulse ends"));
                }
                IntervalLabel::AntiStokesGate if last_read_end.is_none_or(|r| i.start < r) => {
                    return Err(Error::config("inv_delta_us", "anti-Stokes gate opens before the read pulse ends"));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn label_field(label: IntervalLabel) -> &'static str {
    match label {
        IntervalLabel::Prepare => "prepare_ms",
        IntervalLabel::Write => "write_duration_us",
        IntervalLabel::StokesGate => "gate_us",
        IntervalLabel::RfPulse => "rf_pulse_fwhm_us",
        IntervalLabel::Read => "read_duration_us",
        IntervalLabel::AntiStokesGate => "gate_us",
        IntervalLabel::Repump => "repump_ms",
    }
}

/// Centre of RF pulse `k` (0-based) of `n` over a storage time `t_spin`,
/// relative to the trial origin. Pulses sit at `(2k + 1) T / 2n`, which
/// refocuses static spin detunings at `T`.
pub fn rf_pulse_center(k: usize, n: usize, t_spin: f64) -> f64 {
    (2 * k + 1) as f64 * t_spin / (2 * n) as f64
}

/// Builds and validates the timeline of one preparation plus its cycles.
pub fn build_timeline(config: &ProtocolConfig) -> Result<Timeline> {
    config.validate()?;
    let mut intervals = Vec::new();
    let mut cycle_origins = Vec::new();
    let mut push = |label, start: f64, end: f64| intervals.push(Interval { label, start, end });

    let prepare_end = config.prepare_ms * 1e3;
    push(IntervalLabel::Prepare, 0.0, prepare_end);
    let mut cursor = prepare_end;
    let n_rf = config.rf_pulses.len();
    for _ in 0..config.repetitions_per_prep {
        let origin = cursor + config.write_duration_us;
        cycle_origins.push(origin);
        push(IntervalLabel::Write, cursor, origin);
        let s = config.stokes_gate();
        push(IntervalLabel::StokesGate, origin + s.start, origin + s.end);
        for (k, pulse) in config.rf_pulses.iter().enumerate() {
            let c = origin + rf_pulse_center(k, n_rf, config.t_spin_us);
            push(IntervalLabel::RfPulse, c - pulse.fwhm_us / 2.0, c + pulse.fwhm_us / 2.0);
        }
        let read_end = origin + config.t_spin_us;
        push(IntervalLabel::Read, read_end - config.read_duration_us, read_end);
        let a = config.anti_stokes_gate();
        push(IntervalLabel::AntiStokesGate, origin + a.start, origin + a.end);
        let repump_start = origin + a.end;
        cursor = repump_start + config.repump_ms * 1e3;
        push(IntervalLabel::Repump, repump_start, cursor);
    }
    let timeline = Timeline {
        intervals,
        cycle_origins,
    };
    timeline.validate()?;
    Ok(timeline)
}

/// Net accumulated phase of a static spin detuning at the read time, in
/// units of `detuning * T_spin`, for one cycle. Zero means refocused.
pub fn echo_refocus_residual(config: &ProtocolConfig) -> f64 {
    let n = config.rf_pulses.len();
    let mut sign = 1.0;
    let mut last = 0.0;
    let mut phase = 0.0;
    for k in 0..n {
        let c = rf_pulse_center(k, n, config.t_spin_us);
        phase += sign * (c - last);
        sign = -sign;
        last = c;
    }
    phase += sign * (config.t_spin_us - last);
    phase / config.t_spin_us
}

/// Anti-Stokes emission time conjugate to a Stokes detection at `t_s`:
/// `T_aS = T_spin + 1/Δ - T_S`.
pub fn expected_anti_stokes_time(t_s: f64, config: &ProtocolConfig) -> Result<f64> {
    if !(t_s >= 0.0 && t_s <= config.inv_delta_us) {
        return Err(Error::domain(format!(
            "Stokes time {t_s} µs outside [0, {}] µs",
            config.inv_delta_us
        )));
    }
    Ok(config.t_spin_us + config.inv_delta_us - t_s)
}

/// True when `|k_W + k_R - k_S - k_aS| <= tolerance`.
pub fn check_phase_matching<T: Real>(
    k_w: [T; 3],
    k_r: [T; 3],
    k_s: [T; 3],
    k_as: [T; 3],
    tolerance: T,
) -> bool {
    let mismatch = (0..3)
        .map(|i| k_w[i] + k_r[i] - k_s[i] - k_as[i])
        .fold(T::zero(), |acc, d| acc + d * d)
        .sqrt();
    mismatch <= tolerance
}

/// Number of temporal modes `floor(τ_g / 2τ_c)` in a gate.
pub fn mode_count(gate: f64, tau_c: f64) -> Result<u32> {
    if !(gate > 0.0 && tau_c > 0.0) || !gate.is_finite() {
        return Err(Error::domain(format!(
            "mode count needs positive gate and coherence time, got {gate} and {tau_c}"
        )));
    }
    // Guard against representation error at exact multiples (e.g. 2τ_c / 2τ_c).
    Ok((gate / (2.0 * tau_c) * (1.0 + 1e-12)).floor() as u32)
}
