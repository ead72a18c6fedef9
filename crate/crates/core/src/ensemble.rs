//! Spectrally tailored ion ensemble and its collective optical coherence.
//!
//! Optical detunings are drawn from an atomic frequency comb: teeth spaced by
//! `1 / period_inv_delta`, each of width `spacing / finesse`, restricted to the
//! comb bandwidth. The collective coherence after an excitation at `t = 0` is
//!
//! ```text
//! A(t) = sum_j |c_j|^2 exp(-i 2 pi delta_j t)
//! ```
//!
//! with `delta_j` in MHz and `t` in µs. It rephases at multiples of the comb
//! period. The spatial phase of each ion is taken as phase matched (unity).

use crate::error::{Error, Result};
use crate::num::Real;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::io::Write;

/// FWHM of a unit-variance Gaussian, `2 sqrt(2 ln 2)`.
pub const GAUSSIAN_FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

const SAMPLE_BLOCK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToothShape {
    Square,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombSpec<T> {
    /// Rephasing time `1/Δ` (µs).
    pub period_inv_delta: T,
    /// Tooth spacing over tooth FWHM. `INFINITY` gives delta-function teeth.
    pub finesse: T,
    /// Total comb extent (MHz), centred on zero detuning.
    pub bandwidth: T,
    pub effective_optical_depth: T,
    pub tooth_shape: ToothShape,
}

impl<T: Real> CombSpec<T> {
    pub fn new(period_inv_delta: T, finesse: T, bandwidth: T, tooth_shape: ToothShape) -> Self {
        Self {
            period_inv_delta,
            finesse,
            bandwidth,
            effective_optical_depth: T::one(),
            tooth_shape,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period_inv_delta.is_finite() && self.period_inv_delta > T::zero()) {
            return Err(Error::config("period_inv_delta", "must be positive"));
        }
        if !(self.finesse > T::one()) {
            return Err(Error::config("finesse", "must exceed 1"));
        }
        if !(self.bandwidth.is_finite() && self.bandwidth > self.tooth_spacing()) {
            return Err(Error::config(
                "bandwidth",
                "must exceed the tooth spacing 1/period_inv_delta",
            ));
        }
        if !(self.effective_optical_depth >= T::zero()) {
            return Err(Error::config("effective_optical_depth", "must be non-negative"));
        }
        Ok(())
    }

    /// Tooth spacing Δ (MHz).
    pub fn tooth_spacing(&self) -> T {
        T::one() / self.period_inv_delta
    }

    /// Tooth FWHM (MHz); zero for infinite finesse.
    pub fn tooth_fwhm(&self) -> T {
        if self.finesse.is_infinite() {
            T::zero()
        } else {
            self.tooth_spacing() / self.finesse
        }
    }

    /// Centre frequencies of all teeth inside the bandwidth.
    pub fn tooth_centers(&self) -> Vec<T> {
        let spacing = self.tooth_spacing().to_f64_lossy();
        let half = self.bandwidth.to_f64_lossy() / 2.0;
        let k_max = (half / spacing + 1e-9).floor() as i64;
        (-k_max..=k_max)
            .map(|k| T::lit(k as f64 * spacing))
            .collect()
    }
}

/// Sampled ion ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct IonPopulation<T> {
    /// Optical detunings δ_j (MHz) from the comb centre.
    pub optical_detunings: Vec<T>,
    /// Spin detunings (kHz) from the spin line centre.
    pub spin_detunings: Vec<T>,
    /// Coupling amplitudes c_j, normalised to Σ|c_j|² = 1.
    pub weights: Vec<T>,
    pub seed: u64,
    pub comb: CombSpec<T>,
}

impl<T: Real> IonPopulation<T> {
    pub fn len(&self) -> usize {
        self.optical_detunings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.optical_detunings.is_empty()
    }

    pub fn weight_norm(&self) -> T {
        self.weights.iter().fold(T::zero(), |acc, &c| acc + c * c)
    }
}

/// Draws `n` ions from the comb density with Gaussian spin broadening of
/// FWHM `spin_fwhm` (kHz). Ions are generated in fixed-size blocks, each from
/// its own stream of the seeded generator, so the result does not depend on
/// how blocks are scheduled.
pub fn sample_ions<T: Real>(
    comb: &CombSpec<T>,
    spin_fwhm: T,
    n: usize,
    seed: u64,
) -> Result<IonPopulation<T>> {
    comb.validate()?;
    if n == 0 {
        return Err(Error::domain("ion count must be at least 1"));
    }
    if !(spin_fwhm >= T::zero() && spin_fwhm.is_finite()) {
        return Err(Error::domain("spin linewidth must be finite and non-negative"));
    }
    let centers: Vec<f64> = comb.tooth_centers().iter().map(|c| c.to_f64_lossy()).collect();
    let fwhm = comb.tooth_fwhm().to_f64_lossy();
    let shape = comb.tooth_shape;
    let spin_sigma = spin_fwhm.to_f64_lossy() / GAUSSIAN_FWHM_PER_SIGMA;
    let base = ChaCha8Rng::seed_from_u64(seed);

    let blocks: Vec<(Vec<T>, Vec<T>)> = (0..n.div_ceil(SAMPLE_BLOCK))
        .into_par_iter()
        .map(|block| {
            let mut rng = base.clone();
            rng.set_stream(block as u64);
            let len = SAMPLE_BLOCK.min(n - block * SAMPLE_BLOCK);
            let mut optical = Vec::with_capacity(len);
            let mut spin = Vec::with_capacity(len);
            for _ in 0..len {
                let tooth = centers[rng.random_range(0..centers.len())];
                let offset = if fwhm == 0.0 {
                    0.0
                } else {
                    match shape {
                        ToothShape::Gaussian => {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            z * fwhm / GAUSSIAN_FWHM_PER_SIGMA
                        }
                        ToothShape::Square => (rng.random::<f64>() - 0.5) * fwhm,
                    }
                };
                optical.push(T::lit(tooth + offset));
                let z: f64 = StandardNormal.sample(&mut rng);
                spin.push(T::lit(z * spin_sigma));
            }
            (optical, spin)
        })
        .collect();

    let mut optical_detunings = Vec::with_capacity(n);
    let mut spin_detunings = Vec::with_capacity(n);
    for (o, s) in blocks {
        optical_detunings.extend(o);
        spin_detunings.extend(s);
    }
    let weight = T::one() / T::lit(n as f64).sqrt();
    Ok(IonPopulation {
        optical_detunings,
        spin_detunings,
        weights: vec![weight; n],
        seed,
        comb: *comb,
    })
}

/// Collective optical coherence `A(t)` at time `t` (µs) after excitation.
pub fn collective_coherence<T: Real>(ions: &IonPopulation<T>, t: T) -> Complex<T> {
    let omega = T::lit(2.0) * T::PI() * t;
    ions.optical_detunings
        .iter()
        .zip(&ions.weights)
        .fold(Complex::new(T::zero(), T::zero()), |acc, (&delta, &c)| {
            let phase = -(omega * delta);
            acc + Complex::new(phase.cos(), phase.sin()) * (c * c)
        })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoPeak<T> {
    /// Delay after the read pulse (µs) at which |A|² peaks.
    pub t_prime: T,
    pub magnitude_sq: T,
}

/// Locates the rephasing peak for a Stokes emission at `t_s`.
///
/// Scans `t'` over `(0, 1/Δ]` in steps of `step` (µs) and maximises
/// `|A(t_s + t')|²`. Points with `t_s + t' < 1/(2Δ)` lie inside the initial
/// free-induction decay, not the echo, and are skipped.
pub fn echo_amplitude<T: Real>(ions: &IonPopulation<T>, t_s: T, step: T) -> Result<EchoPeak<T>> {
    let period = ions.comb.period_inv_delta;
    if !(t_s >= T::zero() && t_s < period) {
        return Err(Error::domain(format!(
            "Stokes time {t_s} µs must lie in [0, {period}) µs"
        )));
    }
    if !(step > T::zero()) {
        return Err(Error::domain("scan step must be positive"));
    }
    let n_steps = (period / step).round().to_usize().unwrap_or(0).max(1);
    let half_period = period / T::lit(2.0);
    let mut best: Option<EchoPeak<T>> = None;
    for k in 1..=n_steps {
        let t_prime = step * T::lit(k as f64);
        if t_s + t_prime < half_period {
            continue;
        }
        let magnitude_sq = collective_coherence(ions, t_s + t_prime).norm_sqr();
        if best.is_none_or(|b| magnitude_sq > b.magnitude_sq) {
            best = Some(EchoPeak {
                t_prime,
                magnitude_sq,
            });
        }
    }
    best.ok_or_else(|| Error::domain("scan window is empty"))
}

/// Default scan step for [`echo_amplitude`]: 10 ns.
pub fn default_echo_step<T: Real>() -> T {
    T::lit(0.01)
}

/// |A(t)|² sampled at the given times.
pub fn coherence_trace<T: Real>(ions: &IonPopulation<T>, times: &[T]) -> Vec<(T, T)> {
    times
        .par_iter()
        .map(|&t| (t, collective_coherence(ions, t).norm_sqr()))
        .collect()
}

/// Writes a trace as two-column delimited text `time_us,magnitude_squared`.
pub fn write_trace<T: Real, W: Write>(mut out: W, trace: &[(T, T)]) -> Result<()> {
    writeln!(out, "time_us,magnitude_squared")?;
    for (t, m) in trace {
        writeln!(out, "{t},{m}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpinDecay {
    #[default]
    Exponential,
    Gaussian,
}

/// Residual spin coherence after rephased storage for `t_spin`.
pub fn spin_storage_factor<T: Real>(model: SpinDecay, t2_spin: T, t_spin: T) -> Result<T> {
    if !(t2_spin > T::zero()) {
        return Err(Error::domain("spin coherence time must be positive"));
    }
    if !(t_spin >= T::zero()) {
        return Err(Error::domain("storage time must be non-negative"));
    }
    let x = t_spin / t2_spin;
    Ok(match model {
        SpinDecay::Exponential => (-x).exp(),
        SpinDecay::Gaussian => (-(x * x)).exp(),
    })
}
