use afc_dlcz::ensemble::{
    collective_coherence, default_echo_step, echo_amplitude, sample_ions, CombSpec,
    ToothShape, GAUSSIAN_FWHM_PER_SIGMA,
};
use std::f64::consts::PI;

fn comb(finesse: f64) -> CombSpec<f64> {
    CombSpec::new(20.0, finesse, 5.0, ToothShape::Gaussian)
}

/// Comb density: equal-weight Gaussian teeth.
fn density(comb: &CombSpec<f64>, x: f64) -> f64 {
    let sigma = comb.tooth_fwhm() / GAUSSIAN_FWHM_PER_SIGMA;
    let centers = comb.tooth_centers();
    let norm = 1.0 / (centers.len() as f64 * sigma * (2.0 * PI).sqrt());
    centers
        .iter()
        .map(|c| (-(x - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .sum::<f64>()
        * norm
}

/// Characteristic function of the comb density by midpoint quadrature.
fn characteristic(comb: &CombSpec<f64>, t: f64) -> (f64, f64) {
    let half = comb.bandwidth / 2.0 + 0.1;
    let n = 400_000;
    let dx = 2.0 * half / n as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for i in 0..n {
        let x = -half + (i as f64 + 0.5) * dx;
        let p = density(comb, x) * dx;
        let phase = -2.0 * PI * x * t;
        re += p * phase.cos();
        im += p * phase.sin();
    }
    (re, im)
}

#[test]
fn detunings_follow_comb_density() {
    // Kolmogorov-Smirnov against the cumulative density, integrated with the
    // trapezoid rule on a fine grid.
    let comb = comb(4.0);
    let n = 10_000;
    let ions = sample_ions(&comb, 27.0, n, 3).unwrap();
    let half = comb.bandwidth / 2.0 + 0.1;
    let grid = 500_000;
    let dx = 2.0 * half / grid as f64;
    let mut cdf = Vec::with_capacity(grid + 1);
    let mut acc = 0.0;
    let mut prev = density(&comb, -half);
    cdf.push(0.0);
    for i in 1..=grid {
        let d = density(&comb, -half + i as f64 * dx);
        acc += 0.5 * (prev + d) * dx;
        prev = d;
        cdf.push(acc);
    }
    let total = acc;
    let eval = |x: f64| {
        let u = ((x + half) / dx).clamp(0.0, grid as f64);
        let i = (u.floor() as usize).min(grid - 1);
        let f = u - i as f64;
        (cdf[i] * (1.0 - f) + cdf[i + 1] * f) / total
    };
    let mut xs = ions.optical_detunings.clone();
    xs.sort_by(f64::total_cmp);
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = eval(x);
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    let critical = 1.628 / (n as f64).sqrt();
    assert!(d < critical, "KS statistic {d} exceeds {critical}");
}

#[test]
fn coherence_at_first_echo_matches_quadrature_oracle() {
    let comb = comb(4.0);
    let n = 100_000;
    let ions = sample_ions(&comb, 27.0, n, 11).unwrap();
    let (re, im) = characteristic(&comb, 20.0);
    let phi_sq = re * re + im * im;
    // E|A|^2 = 1/n + (1 - 1/n)|phi|^2 for n independent equal-weight ions.
    let expected = 1.0 / n as f64 + (1.0 - 1.0 / n as f64) * phi_sq;
    let a = collective_coherence(&ions, 20.0).norm_sqr();
    let sigma = 2.0 * phi_sq.sqrt() / (n as f64).sqrt();
    assert!((a - expected).abs() < 5.0 * sigma, "|A|^2 = {a}, oracle {expected} ± {sigma}");
    // Gaussian teeth rephase to exp(-4 pi^2 sigma_t^2 / delta^2).
    let closed = (-(2.0 * PI / (4.0 * GAUSSIAN_FWHM_PER_SIGMA)).powi(2)).exp();
    assert!((closed - 0.6408).abs() < 1e-4);
    assert!((phi_sq - closed).abs() < 1e-6);
}

#[test]
fn echo_peak_matches_oracle_within_two_percent() {
    let comb = comb(4.0);
    let ions = sample_ions(&comb, 27.0, 100_000, 5).unwrap();
    let (re, im) = characteristic(&comb, 20.0);
    let oracle = re * re + im * im;
    let peak = echo_amplitude(&ions, 5.0, default_echo_step()).unwrap();
    assert!((peak.t_prime - 15.0).abs() <= 0.01 + 1e-9);
    assert!(
        (peak.magnitude_sq - oracle).abs() / oracle < 0.02,
        "peak {} vs oracle {oracle}",
        peak.magnitude_sq
    );
}

#[test]
fn echo_peak_grows_with_finesse() {
    let n = 10_000;
    let peaks: Vec<f64> = [2.0, 4.0, 8.0, 16.0]
        .iter()
        .map(|&f| {
            let ions = sample_ions(&comb(f), 27.0, n, 21).unwrap();
            collective_coherence(&ions, 20.0).norm_sqr()
        })
        .collect();
    for w in peaks.windows(2) {
        let sigma = 2.0 * w[1].sqrt() / (n as f64).sqrt();
        assert!(w[1] >= w[0] - sigma, "peaks {peaks:?}");
    }
}
