//! Closed-form photon-pair source models.
//!
//! The cross-correlation model treats the source as a two-mode squeezed
//! vacuum with conditional anti-Stokes retrieval `eta_r`, write-induced
//! spontaneous emission `beta * p_s` and write-independent noise `p_n`
//! in the anti-Stokes mode:
//!
//! ```text
//! g = 1 + eta_r / ((eta_r + beta) * p_s + p_n)
//! ```
//!
//! `eta_r`, `beta` and `p_n` are per-analysis-bin quantities, so every
//! parameter set carries the bin width it refers to.

use crate::error::{Error, Result};
use crate::num::{all_unit, Real};

/// Parameters of the cross-correlation model, all referred to one bin width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams<T> {
    pub p_s: T,
    pub eta_r: T,
    pub beta: T,
    pub p_n: T,
    /// Analysis bin width (ns) the per-bin quantities refer to.
    pub bin_ns: T,
}

impl<T: Real> ModelParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !all_unit(&[self.p_s, self.eta_r, self.beta, self.p_n]) {
            return Err(Error::domain(format!(
                "model parameters must lie in [0, 1]: p_s={}, eta_r={}, beta={}, p_n={}",
                self.p_s, self.eta_r, self.beta, self.p_n
            )));
        }
        if !(self.bin_ns.is_finite() && self.bin_ns > T::zero()) {
            return Err(Error::domain(format!(
                "bin width must be positive, got {} ns",
                self.bin_ns
            )));
        }
        Ok(())
    }

    pub fn with_p_s(self, p_s: T) -> Self {
        Self { p_s, ..self }
    }
}

/// Inputs to the write-induced excited-population fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaInputs<T> {
    /// Spin storage time (ms).
    pub t_spin_ms: T,
    /// Excited-state radiative lifetime (ms).
    pub t1_ms: T,
    /// Branching ratio of |e> into |s>.
    pub gamma_es: T,
    /// Branching ratio of |e> into |g>.
    pub gamma_eg: T,
    /// Read-pulse transfer efficiency.
    pub eta_t: T,
}

impl<T: Real> BetaInputs<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.t1_ms.is_finite() && self.t1_ms > T::zero()) {
            return Err(Error::domain(format!("T1 must be positive, got {} ms", self.t1_ms)));
        }
        if !(self.t_spin_ms >= T::zero()) {
            return Err(Error::domain(format!(
                "spin storage time must be non-negative, got {} ms",
                self.t_spin_ms
            )));
        }
        if !all_unit(&[self.gamma_es, self.gamma_eg, self.eta_t]) {
            return Err(Error::domain(
                "branching ratios and transfer efficiency must lie in [0, 1]",
            ));
        }
        if self.gamma_es + self.gamma_eg > T::one() + T::lit(1e-12) {
            return Err(Error::domain(format!(
                "branching ratios sum to {} > 1",
                self.gamma_es + self.gamma_eg
            )));
        }
        Ok(())
    }
}

/// Cross-correlation predicted by the pair-source model.
pub fn g_model<T: Real>(params: &ModelParams<T>) -> Result<T> {
    params.validate()?;
    let denominator = (params.eta_r + params.beta) * params.p_s + params.p_n;
    if denominator <= T::zero() {
        return Err(Error::domain(
            "zero denominator: (eta_r + beta) * p_s + p_n must be positive",
        ));
    }
    if params.eta_r == T::zero() {
        return Ok(T::one());
    }
    // Dividing through by eta_r keeps the noise-free limit 1 + 1/p_s exact.
    let scaled = (T::one() + params.beta / params.eta_r) * params.p_s + params.p_n / params.eta_r;
    Ok(T::one() + T::one() / scaled)
}

/// Fraction of the write-excited population that radiates into the
/// anti-Stokes gate, relative to the population right after the write pulse.
///
/// Two contributions: ions left in |e> by an imperfect read transfer, and ions
/// that decayed during storage into the state later promoted by the read pulse
/// (|s> for the first half of the storage, |g> for the second half after the
/// inverting RF sequence).
pub fn compute_beta<T: Real>(inputs: &BetaInputs<T>) -> Result<T> {
    inputs.validate()?;
    let half = (-(inputs.t_spin_ms / (T::lit(2.0) * inputs.t1_ms))).exp();
    let full = (-(inputs.t_spin_ms / inputs.t1_ms)).exp();
    let decayed = (T::one() - half) * (inputs.gamma_es + half * inputs.gamma_eg) * inputs.eta_t;
    let untransferred = (T::one() - inputs.eta_t) * inputs.gamma_es * full;
    Ok(decayed + untransferred)
}

/// Model prediction on a grid of Stokes probabilities, with the parameters
/// it was evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCurve<T> {
    pub eta_r: T,
    pub beta: T,
    pub p_n: T,
    pub bin_ns: T,
    pub points: Vec<(T, T)>,
}

impl<T: Real> ModelCurve<T> {
    pub fn params_at(&self, p_s: T) -> ModelParams<T> {
        ModelParams {
            p_s,
            eta_r: self.eta_r,
            beta: self.beta,
            p_n: self.p_n,
            bin_ns: self.bin_ns,
        }
    }

    /// Evaluates the model at an arbitrary `p_s` (not limited to grid points).
    pub fn evaluate(&self, p_s: T) -> Result<T> {
        g_model(&self.params_at(p_s))
    }

    /// Two-column delimited text `p_s,g`.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("p_s,g\n");
        for (p, g) in &self.points {
            out.push_str(&format!("{p},{g}\n"));
        }
        out
    }
}

pub fn model_curve<T: Real>(
    p_s_grid: &[T],
    eta_r: T,
    beta: T,
    p_n: T,
    bin_ns: T,
) -> Result<ModelCurve<T>> {
    if p_s_grid.is_empty() {
        return Err(Error::domain("p_s grid is empty"));
    }
    let mut curve = ModelCurve {
        eta_r,
        beta,
        p_n,
        bin_ns,
        points: Vec::with_capacity(p_s_grid.len()),
    };
    for &p in p_s_grid {
        let g = curve.evaluate(p)?;
        curve.points.push((p, g));
    }
    Ok(curve)
}

/// A measured cross-correlation at one Stokes probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasuredPoint<T> {
    pub p_s: T,
    pub g: T,
    pub sigma: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelComparison<T> {
    pub chi_square: T,
    /// Number of points; nothing is fitted, so no parameters are subtracted.
    pub degrees_of_freedom: usize,
    pub pulls: Vec<T>,
}

impl<T: Real> ModelComparison<T> {
    pub fn reduced_chi_square(&self) -> T {
        self.chi_square / T::from_usize(self.degrees_of_freedom).unwrap_or_else(T::one)
    }
}

/// Goodness of fit of measured points against a fixed model curve.
pub fn compare_model_to_analysis<T: Real>(
    curve: &ModelCurve<T>,
    measured: &[MeasuredPoint<T>],
) -> Result<ModelComparison<T>> {
    if measured.is_empty() {
        return Err(Error::domain("no measured points to compare"));
    }
    let mut pulls = Vec::with_capacity(measured.len());
    for point in measured {
        if !(point.sigma > T::zero()) {
            return Err(Error::domain(format!(
                "measured point at p_s={} has non-positive sigma {}",
                point.p_s, point.sigma
            )));
        }
        let predicted = curve.evaluate(point.p_s)?;
        pulls.push((point.g - predicted) / point.sigma);
    }
    let chi_square = pulls.iter().fold(T::zero(), |acc, &p| acc + p * p);
    Ok(ModelComparison {
        chi_square,
        degrees_of_freedom: measured.len(),
        pulls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn fig3(p_s: f64) -> ModelParams<f64> {
        ModelParams {
            p_s,
            eta_r: 0.0045,
            beta: 0.27,
            p_n: 0.0012,
            bin_ns: 100.0,
        }
    }

    fn paper_beta(t_spin_ms: f64) -> BetaInputs<f64> {
        BetaInputs {
            t_spin_ms,
            t1_ms: 1.9,
            gamma_es: 0.75,
            gamma_eg: 0.2,
            eta_t: 0.75,
        }
    }

    #[test]
    fn g_model_at_fig3_point() {
        // 1 + 0.0045 / (0.2745 * 0.002 + 0.0012) = 1 + 0.0045 / 0.001749
        let g = g_model(&fig3(0.002)).unwrap();
        assert_relative_eq!(g, 1.0 + 0.0045 / 0.001749, max_relative = 1e-14);
        assert!((g - 3.573).abs() < 5e-4);
    }

    #[test]
    fn g_model_ideal_limits() {
        let ideal = |p_s: f64| ModelParams {
            p_s,
            eta_r: 0.3,
            beta: 0.0,
            p_n: 0.0,
            bin_ns: 100.0,
        };
        assert_eq!(g_model(&ideal(0.25)).unwrap(), 1.0 + 1.0 / 0.25);
        assert_eq!(g_model(&ideal(1.0)).unwrap(), 2.0);
        let no_retrieval = ModelParams { eta_r: 0.0, ..fig3(0.002) };
        assert_eq!(g_model(&no_retrieval).unwrap(), 1.0);
    }

    #[test]
    fn g_model_zero_denominator() {
        let p = ModelParams {
            p_s: 0.0,
            eta_r: 0.1,
            beta: 0.2,
            p_n: 0.0,
            bin_ns: 100.0,
        };
        assert!(matches!(g_model(&p), Err(Error::Domain(_))));
    }

    #[test]
    fn g_model_generic_f32() {
        let p = ModelParams::<f32> {
            p_s: 0.002,
            eta_r: 0.0045,
            beta: 0.27,
            p_n: 0.0012,
            bin_ns: 100.0,
        };
        assert!((g_model(&p).unwrap() - 3.573).abs() < 1e-3);
    }

    #[test]
    fn beta_paper_point() {
        let beta = compute_beta(&paper_beta(1.0)).unwrap();
        assert!((beta - 0.27).abs() <= 0.005, "beta = {beta}");
    }

    #[test]
    fn beta_limits() {
        assert_relative_eq!(compute_beta(&paper_beta(0.0)).unwrap(), 0.1875, epsilon = 1e-15);
        assert_relative_eq!(compute_beta(&paper_beta(1e6)).unwrap(), 0.5625, epsilon = 1e-12);
    }

    #[test]
    fn beta_rejects_bad_inputs() {
        let mut b = paper_beta(1.0);
        b.t1_ms = 0.0;
        assert!(compute_beta(&b).is_err());
        let mut b = paper_beta(1.0);
        b.gamma_eg = 0.5;
        assert!(compute_beta(&b).is_err());
    }

    #[test]
    fn beta_transfer_slope_at_paper_point() {
        let h = 1e-6;
        let mut lo = paper_beta(1.0);
        lo.eta_t -= h;
        let mut hi = paper_beta(1.0);
        hi.eta_t += h;
        let slope = (compute_beta(&hi).unwrap() - compute_beta(&lo).unwrap()) / (2.0 * h);
        assert!((slope - (-0.2340)).abs() < 1e-3, "slope = {slope}");
    }

    #[test]
    fn beta_grows_from_half_to_one_ms() {
        let a = compute_beta(&paper_beta(0.5)).unwrap();
        let b = compute_beta(&paper_beta(1.0)).unwrap();
        assert!(a < b);
    }

    #[test]
    fn curve_is_decreasing_and_matches_duplicate_arithmetic() {
        let grid: Vec<f64> = (0..40).map(|i| 0.0005 + i as f64 * 0.0005).collect();
        let curve = model_curve(&grid, 0.0045, 0.27, 0.0012, 100.0).unwrap();
        for w in curve.points.windows(2) {
            assert!(w[1].1 < w[0].1);
        }
        for &(p, g) in &curve.points {
            // Same quantity written as a single ratio.
            let d = 0.2745 * p + 0.0012;
            let oracle = (d + 0.0045) / d;
            assert!((g - oracle).abs() <= 1e-12 * oracle);
        }
        let single = model_curve(&[0.002], 0.0045, 0.27, 0.0012, 100.0).unwrap();
        assert_eq!(single.points, vec![(0.002, g_model(&fig3(0.002)).unwrap())]);
        assert!(model_curve::<f64>(&[], 0.1, 0.1, 0.1, 100.0).is_err());
    }

    #[test]
    fn comparison_chi_square() {
        let curve = model_curve(&[0.001, 0.002], 0.0045, 0.27, 0.0012, 100.0).unwrap();
        let on_curve: Vec<_> = curve
            .points
            .iter()
            .map(|&(p_s, g)| MeasuredPoint { p_s, g, sigma: 1.0 })
            .collect();
        let cmp = compare_model_to_analysis(&curve, &on_curve).unwrap();
        assert_eq!(cmp.chi_square, 0.0);
        assert_eq!(cmp.degrees_of_freedom, 2);

        let mut shifted = on_curve.clone();
        shifted[1].g += 0.5;
        shifted[1].sigma = 0.5;
        let cmp = compare_model_to_analysis(&curve, &shifted).unwrap();
        assert_relative_eq!(cmp.chi_square, 1.0, epsilon = 1e-12);

        shifted[0].sigma = 0.0;
        assert!(compare_model_to_analysis(&curve, &shifted).is_err());
        assert!(compare_model_to_analysis(&curve, &[]).is_err());
    }

    fn params_strategy() -> impl Strategy<Value = ModelParams<f64>> {
        (1e-4..0.5f64, 1e-4..0.5f64, 0.0..0.8f64, 1e-5..0.05f64).prop_map(
            |(p_s, eta_r, beta, p_n)| ModelParams {
                p_s,
                eta_r,
                beta,
                p_n,
                bin_ns: 100.0,
            },
        )
    }

    proptest! {
        #[test]
        fn g_above_floor_when_retrieving(p in params_strategy()) {
            prop_assert!(g_model(&p).unwrap() > 1.0);
        }

        #[test]
        fn g_monotonic_by_finite_differences(p in params_strategy()) {
            let h = 1e-7;
            let g0 = g_model(&p).unwrap();
            let dp = g_model(&ModelParams { p_s: p.p_s + h, ..p }).unwrap() - g0;
            let db = g_model(&ModelParams { beta: p.beta + h, ..p }).unwrap() - g0;
            let dn = g_model(&ModelParams { p_n: p.p_n + h, ..p }).unwrap() - g0;
            let de = g_model(&ModelParams { eta_r: p.eta_r + h, ..p }).unwrap() - g0;
            prop_assert!(dp < 0.0);
            prop_assert!(db < 0.0);
            prop_assert!(dn < 0.0);
            prop_assert!(de > 0.0);
        }

        #[test]
        fn beta_in_unit_interval(
            t_spin in 0.0..20.0f64,
            t1 in 0.01..10.0f64,
            es in 0.0..1.0f64,
            frac in 0.0..1.0f64,
            eta_t in 0.0..1.0f64,
        ) {
            let inputs = BetaInputs { t_spin_ms: t_spin, t1_ms: t1, gamma_es: es, gamma_eg: (1.0 - es) * frac, eta_t };
            let beta = compute_beta(&inputs).unwrap();
            prop_assert!((0.0..=1.0).contains(&beta));
        }

        #[test]
        fn beta_transfer_slope_matches_closed_form(t_spin in 0.0..2.0f64) {
            // d(beta)/d(eta_t) = (1 - h)(g_es + h g_eg) - g_es h^2, h = exp(-T/2T1).
            // Its sign flips inside this box: negative at short storage.
            let h = 1e-6;
            let mut lo = paper_beta(t_spin);
            lo.eta_t = 0.75 - h;
            let mut hi = lo;
            hi.eta_t = 0.75 + h;
            let fd = (compute_beta(&hi).unwrap() - compute_beta(&lo).unwrap()) / (2.0 * h);
            let half = (-t_spin / 3.8f64).exp();
            let slope = (1.0 - half) * (0.75 + half * 0.2) - 0.75 * half * half;
            prop_assert!((fd - slope).abs() < 1e-8);
        }
    }
}
