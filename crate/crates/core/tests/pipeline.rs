use afc_dlcz::analysis::{
    analyze, AccidentalMethod, AnalysisOptions, Analyzer, CorrelationStats, Report,
};
use afc_dlcz::ensemble::GAUSSIAN_FWHM_PER_SIGMA;
use afc_dlcz::records::{read_records_file, write_records_file, RecordFormat};
use afc_dlcz::source::Source;
use afc_dlcz::ProtocolConfig;
use proptest::prelude::*;

fn options(n: u64) -> AnalysisOptions {
    AnalysisOptions {
        n_trials: Some(n),
        ..Default::default()
    }
}

fn stats(config: &ProtocolConfig, n: u64, seed: u64) -> (Analyzer, CorrelationStats) {
    let analyzer = Analyzer::new(config, options(n)).unwrap();
    let source = Source::new(config, seed).unwrap();
    let stats = analyzer.accumulate_source(&source, n).unwrap();
    (analyzer, stats)
}

fn report(config: &ProtocolConfig, n: u64, seed: u64) -> Report {
    let (analyzer, stats) = stats(config, n, seed);
    analyzer.report(&stats).unwrap()
}

fn uncorrelated() -> ProtocolConfig {
    ProtocolConfig {
        p_s: 0.2,
        eta_r_per_bin: 0.0,
        p_n_per_bin: 0.01,
        ..Default::default()
    }
}

#[test]
fn uncorrelated_streams_have_unit_cross_correlation() {
    let config = uncorrelated();
    let (mut inside, mut total) = (0usize, 0usize);
    for seed in 0..5 {
        let r = report(&config, 100_000, seed);
        for i in 0..r.correlation.len() {
            if let (Some(g), Some(e)) = (r.correlation.g_values[i], r.correlation.g_errors[i]) {
                total += 1;
                inside += usize::from((g - 1.0).abs() <= 3.0 * e);
            }
        }
    }
    let fraction = inside as f64 / total as f64;
    assert!(total > 900, "only {total} defined bins");
    assert!(fraction >= 0.99, "{inside}/{total} bins within 3σ");
}

#[test]
fn accidental_estimators_agree_on_uncorrelated_streams() {
    let config = uncorrelated();
    let n = 200_000;
    let (analyzer, stats) = stats(&config, n, 21);
    let inter = stats
        .accidentals(AccidentalMethod::InterTrial, n, analyzer.stokes_gate, analyzer.anti_stokes_gate)
        .unwrap();
    let tri = stats
        .accidentals(AccidentalMethod::AnalyticTriangle, n, analyzer.stokes_gate, analyzer.anti_stokes_gate)
        .unwrap();
    let (mut agree, mut compared) = (0, 0);
    for i in 0..inter.expected.len() {
        let (a, b) = (inter.expected[i], tri.expected[i]);
        if a == 0.0 || b == 0.0 {
            continue;
        }
        compared += 1;
        let sigma = (inter.variance[i] + tri.variance[i]).sqrt();
        agree += usize::from((a - b).abs() <= 3.0 * sigma);
    }
    assert!(compared > 190);
    assert!(agree as f64 >= 0.99 * compared as f64, "{agree}/{compared}");
    // Both estimators follow the triangle: its apex holds the most accidentals.
    let apex = analyzer.binning.locate(config.echo_sum_us()).unwrap();
    let max = inter.expected.iter().cloned().fold(0.0, f64::max);
    assert!(inter.expected[apex] > 0.9 * max);
}

#[test]
fn central_bin_error_bars_are_calibrated() {
    let config = ProtocolConfig {
        p_s: 0.02,
        eta_r_per_bin: 0.02,
        ..Default::default()
    };
    let seeds = 120;
    let g: Vec<(f64, f64)> = (0..seeds)
        .map(|seed| {
            let m = report(&config, 100_000, 1000 + seed).summary.g_central.unwrap();
            (m.value, m.error)
        })
        .collect();
    let mean = g.iter().map(|x| x.0).sum::<f64>() / seeds as f64;
    let covered = g.iter().filter(|(v, e)| (v - mean).abs() <= *e).count();
    let fraction = covered as f64 / seeds as f64;
    assert!((0.58..=0.78).contains(&fraction), "coverage {fraction}");
}

#[test]
fn parallel_analysis_equals_serial() {
    let config = ProtocolConfig {
        p_s: 0.05,
        ..Default::default()
    };
    let n = 150_000;
    let records = Source::new(&config, 5).unwrap().run(n).unwrap();
    let analyzer = Analyzer::new(&config, options(n)).unwrap();
    let serial = analyzer.accumulate(&records).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    for chunks in [2, 5, 13] {
        let parallel = pool.install(|| analyzer.accumulate_parallel(&records, chunks)).unwrap();
        assert_eq!(parallel, serial);
    }
    let (_, streamed) = stats(&config, n, 5);
    assert_eq!(streamed, serial);
    assert_eq!(analyzer.report(&serial).unwrap(), analyzer.report(&streamed).unwrap());
}

#[test]
fn analysing_a_file_twice_is_identical() {
    let config = ProtocolConfig {
        p_s: 0.05,
        ..Default::default()
    };
    let records = Source::new(&config, 8).unwrap().run(50_000).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("stream.bin");
    let txt = dir.path().join("stream.csv");
    write_records_file(&bin, &records, RecordFormat::Binary).unwrap();
    write_records_file(&txt, &records, RecordFormat::Text).unwrap();
    let run = |path: &std::path::Path| {
        let (recs, _) = read_records_file(path).unwrap();
        let r = analyze(&recs, &config, options(50_000)).unwrap();
        (r.summary.to_key_value(), r.correlation.to_delimited())
    };
    let first = run(&bin);
    assert_eq!(first, run(&bin));
    assert_eq!(first, run(&txt));
}

#[test]
fn perfect_retrieval_is_recovered() {
    let config = ProtocolConfig {
        p_s: 0.01,
        eta_r_per_bin: 1.0,
        pair_coherence_fwhm_us: 0.0,
        p_n_per_bin: 0.0,
        beta: Some(0.0),
        ..Default::default()
    };
    let eta = report(&config, 50_000, 3).summary.eta_r_bin.unwrap();
    assert!((eta.value - 1.0).abs() <= 3.0 * eta.error, "eta {} ± {}", eta.value, eta.error);
}

#[test]
fn doubling_jitter_doubles_fitted_width() {
    let base = ProtocolConfig {
        p_s: 0.05,
        eta_r_per_bin: 0.02,
        pair_coherence_fwhm_us: 0.41,
        ..Default::default()
    };
    let wide = ProtocolConfig {
        pair_coherence_fwhm_us: 0.82,
        eta_r_per_bin: base.retrieval_total()
            * ProtocolConfig {
                pair_coherence_fwhm_us: 0.82,
                ..base.clone()
            }
            .central_bin_fraction(),
        ..base.clone()
    };
    let narrow = report(&base, 400_000, 1).summary.fit.unwrap().fwhm;
    let broad = report(&wide, 400_000, 1).summary.fit.unwrap().fwhm;
    let ratio = broad / narrow;
    assert!((ratio - 2.0).abs() / 2.0 < 0.15, "ratio {ratio} ({narrow} -> {broad})");
}

#[test]
fn default_run_is_consistent_with_measured_values() {
    // Measured at T_spin = 1 ms: g_SaS = 4.2 ± 0.5 and g_SS = 1.86 ± 0.4.
    let config = ProtocolConfig::default();
    let r = report(&config, 10_000_000, 2024);
    let peak = r.histogram.peak_tau_us().unwrap();
    assert!((peak - 1020.0).abs() <= config.bin_us());
    let g = r.summary.g_central.unwrap();
    assert!((g.value - 4.2).abs() <= 3.0 * (g.error.powi(2) + 0.25).sqrt());
    let g_ss = r.summary.g_ss.unwrap();
    assert!((1.0 - 3.0 * g_ss.error..=2.0 + 3.0 * g_ss.error).contains(&g_ss.value));
    assert!((g_ss.value - 1.86).abs() <= 3.0 * (g_ss.error.powi(2) + 0.16).sqrt());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn estimator_round_trip(
        retrieval in 0.05..0.5f64,
        fwhm in 0.3..0.8f64,
        p_s in 0.02..0.06f64,
        seed in 0u64..1000,
    ) {
        let mut config = ProtocolConfig {
            p_s,
            pair_coherence_fwhm_us: fwhm,
            ..Default::default()
        };
        config.eta_r_per_bin = retrieval * config.central_bin_fraction();
        let r = report(&config, 200_000, seed);
        let bin = r.summary.eta_r_bin.unwrap();
        prop_assert!((bin.value - config.eta_r_per_bin).abs() <= 3.0 * bin.error);
        // The window spans whole bins out to ±τ_c.
        let w = config.bin_us();
        let k = (fwhm / w + 1e-9).floor();
        let sigma = fwhm / GAUSSIAN_FWHM_PER_SIGMA;
        let fraction = libm::erf((k + 0.5) * w / (sigma * std::f64::consts::SQRT_2));
        let window = r.summary.eta_r_window.unwrap();
        prop_assert!((window.value - retrieval * fraction).abs() <= 3.0 * window.error);
        let fit = r.summary.fit.unwrap();
        prop_assert!((fit.center - config.echo_sum_us()).abs() <= w);
        prop_assert!((fit.fwhm - fwhm).abs() / fwhm < 0.15, "fwhm {} vs {}", fit.fwhm, fwhm);
    }
}
