use crate::error::{CliError, CliResult, WithPath};
use crate::grid::{parse_axis, parse_grid};
use crate::manifest::{load_config, sidecar, with_suffix, Manifest};
use crate::{Accidentals, AnalysisArgs, ConfigArgs, Format, Pairing};
use afc_dlcz::analysis::{
    histogram_to_delimited, AccidentalMethod, AnalysisOptions, Analyzer, CorrelationStats,
    PairCounting, Report, Summary,
};
use afc_dlcz::config::NUMERIC_KEYS;
use afc_dlcz::model::{g_model, model_curve};
use afc_dlcz::records::{
    read_text, write_records_file, BinaryReader, BinaryWriter, RecordFormat, MAGIC,
};
use afc_dlcz::source::Source;
use afc_dlcz::{Channel, ProtocolConfig};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::Path;

fn resolve_config(
    args: &ConfigArgs,
    fallback: Option<ProtocolConfig>,
    verbose: bool,
) -> CliResult<ProtocolConfig> {
    let mut config = match &args.config {
        Some(path) => load_config(path)?,
        None => fallback.unwrap_or_default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        config.set(k.trim(), v)?;
    }
    if let Some(bin) = args.bin_ns {
        config.bin_ns = bin as f64;
    }
    config.validate()?;
    if verbose {
        eprint!("# resolved configuration\n{config}");
    }
    Ok(config)
}

fn analysis_options(args: &AnalysisArgs, n_trials: Option<u64>) -> AnalysisOptions {
    AnalysisOptions {
        accidental_offsets: args.offsets,
        pairing: match args.pairing {
            Pairing::All => PairCounting::AllCombinations,
            Pairing::First => PairCounting::FirstPhotonOnly,
        },
        accidentals: match args.accidentals {
            Accidentals::InterTrial => AccidentalMethod::InterTrial,
            Accidentals::Analytic => AccidentalMethod::AnalyticTriangle,
        },
        n_trials,
        ..Default::default()
    }
}

fn record_analysis(m: &mut Manifest, args: &AnalysisArgs) {
    m.set("analysis.accidentals", format!("{:?}", args.accidentals).to_lowercase());
    m.set("analysis.offsets", args.offsets);
    m.set("analysis.pairing", format!("{:?}", args.pairing).to_lowercase());
}

fn positive_trials(trials: u64) -> CliResult<()> {
    if trials == 0 {
        return Err(CliError::usage("--trials must be at least 1"));
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).at(path)
}

pub fn simulate(
    args: &ConfigArgs,
    trials: u64,
    seed: u64,
    out: &Path,
    format: Format,
    truth: Option<&Path>,
    verbose: bool,
) -> CliResult<()> {
    positive_trials(trials)?;
    let config = resolve_config(args, None, verbose)?;
    let source = Source::new(&config, seed)?;
    for w in source.warnings() {
        eprintln!("warning: {w}");
    }
    let mut singles = [0u64; 2];
    let mut count = |records: &[afc_dlcz::DetectionRecord]| {
        for r in records {
            singles[r.channel.index()] += 1;
        }
    };
    let record_format = match format {
        Format::Binary => RecordFormat::Binary,
        Format::Text => RecordFormat::Text,
    };
    if let Some(truth_path) = truth {
        let (records, t) = source.run_with_truth(trials)?;
        count(&records);
        write_records_file(out, &records, record_format).at(out)?;
        let file = std::fs::File::create(truth_path).at(truth_path)?;
        t.write_json(BufWriter::new(file)).at(truth_path)?;
    } else if format == Format::Binary {
        let file = std::fs::File::create(out).at(out)?;
        let mut writer = BinaryWriter::new(BufWriter::new(file)).at(out)?;
        source
            .for_each_batch(trials, 1 << 14, |batch| {
                count(batch);
                writer.extend(batch)
            })
            .at(out)?;
        writer.finish().at(out)?;
    } else {
        let records = source.run(trials)?;
        count(&records);
        write_records_file(out, &records, record_format).at(out)?;
    }

    let mut m = Manifest::new("simulate");
    m.set("seed", seed);
    m.set("n_trials", trials);
    m.set("format", format!("{format:?}").to_lowercase());
    m.set(
        "reproduce",
        format!(
            "afc-dlcz simulate --config {} --trials {trials} --seed {seed} --format {} --out {}",
            sidecar(out).display(),
            format!("{format:?}").to_lowercase(),
            out.display()
        ),
    );
    m.set_config(&config);
    m.file("output.records", out)?;
    if let Some(t) = truth {
        m.file("output.truth", t)?;
    }
    m.write_for(out)?;

    println!("n_trials = {trials}");
    println!("n_stokes = {}", singles[Channel::Stokes.index()]);
    println!("n_anti_stokes = {}", singles[Channel::AntiStokes.index()]);
    println!("expected_peak_tau_us = {}", config.echo_sum_us());
    Ok(())
}

fn accumulate_file(analyzer: &Analyzer, input: &Path) -> CliResult<CorrelationStats> {
    let file = std::fs::File::open(input).at(input)?;
    let mut reader = BufReader::new(file);
    let is_binary = reader.fill_buf().at(input)?.starts_with(MAGIC);
    let mut acc = analyzer.accumulator();
    if is_binary {
        for record in BinaryReader::new(reader).at(input)? {
            acc.push(&record.at(input)?).at(input)?;
        }
    } else {
        acc.extend(&read_text(reader).at(input)?).at(input)?;
    }
    acc.finish().at(input)
}

fn write_report(report: &Report, prefix: &Path, m: &mut Manifest) -> CliResult<()> {
    let outputs = [
        (
            "histogram",
            ".histogram.csv",
            histogram_to_delimited(&report.histogram, &report.accidentals),
        ),
        ("correlation", ".correlation.csv", report.correlation.to_delimited()),
        ("summary", ".summary.txt", report.summary.to_key_value()),
    ];
    for (role, suffix, text) in outputs {
        let path = with_suffix(prefix, suffix);
        write_file(&path, &text)?;
        m.file(&format!("output.{role}"), &path)?;
    }
    Ok(())
}

pub fn analyze(
    input: &Path,
    args: &ConfigArgs,
    analysis: &AnalysisArgs,
    prefix: &Path,
    trials: Option<u64>,
    verbose: bool,
) -> CliResult<()> {
    let upstream = Manifest::read(&sidecar(input))?;
    let upstream_config = match upstream.as_ref().and_then(|m| m.config()) {
        Some(c) => Some(c.at(&sidecar(input))?),
        None => None,
    };
    let config = resolve_config(args, upstream_config, verbose)?;
    let n_trials = match trials {
        Some(n) => {
            positive_trials(n)?;
            Some(n)
        }
        None => upstream
            .as_ref()
            .and_then(|m| m.get("n_trials"))
            .and_then(|v| v.parse().ok()),
    };
    let analyzer = Analyzer::new(&config, analysis_options(analysis, n_trials))?;
    let stats = accumulate_file(&analyzer, input)?;
    let report = analyzer.report(&stats).at(input)?;

    let mut m = Manifest::new("analyze");
    m.file("input.records", input)?;
    m.set("n_trials", report.summary.n_trials);
    record_analysis(&mut m, analysis);
    m.set_config(&config);
    write_report(&report, prefix, &mut m)?;
    m.write_for(prefix)?;
    print!("{}", report.summary.to_key_value());
    Ok(())
}

pub fn model(args: &ConfigArgs, grid: &str, out: &Path, verbose: bool) -> CliResult<()> {
    let config = resolve_config(args, None, verbose)?;
    let grid = parse_grid(grid).map_err(CliError::Usage)?;
    if let Some(p) = grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(CliError::usage(format!("p_s grid value {p} lies outside [0, 1]")));
    }
    let params = config.model_params()?;
    let curve = model_curve(&grid, params.eta_r, params.beta, params.p_n, params.bin_ns)?;
    write_file(out, &curve.to_delimited())?;

    let inputs = config.beta_inputs();
    let mut block = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(block, "{k} = {v}");
    };
    kv("beta", params.beta.to_string());
    kv("beta_source", if config.beta.is_some() { "configured" } else { "computed" }.into());
    kv("beta.t_spin_ms", inputs.t_spin_ms.to_string());
    kv("beta.t1_ms", inputs.t1_ms.to_string());
    kv("beta.gamma_es", inputs.gamma_es.to_string());
    kv("beta.gamma_eg", inputs.gamma_eg.to_string());
    kv("beta.eta_t", inputs.eta_t.to_string());
    kv("eta_r_per_bin", params.eta_r.to_string());
    kv("p_n_per_bin", params.p_n.to_string());
    kv("bin_ns", params.bin_ns.to_string());
    kv("points", curve.points.len().to_string());

    let mut m = Manifest::new("model");
    for line in block.lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            m.set(&format!("model.{k}"), v);
        }
    }
    m.set_config(&config);
    m.file("output.curve", out)?;
    m.write_for(out)?;
    print!("{block}");
    Ok(())
}

fn cell<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

fn sweep_row(key_value: f64, seed: u64, config: &ProtocolConfig, s: &Summary) -> String {
    let g_model = config.model_params().ok().and_then(|p| g_model(&p).ok());
    let cs = s.cauchy_schwarz;
    [
        key_value.to_string(),
        seed.to_string(),
        cell(config.beta()),
        cell(g_model),
        cell(s.g_central.map(|m| m.value)),
        cell(s.g_central.map(|m| m.error)),
        cell(cs.map(|c| c.r)),
        cell(cs.map(|c| c.lower)),
        cell(cs.map(|c| c.upper)),
        cell(s.eta_r_bin.map(|m| m.value)),
        cell(s.eta_r_bin.map(|m| m.error)),
        cell(s.eta_r_window.map(|m| m.value)),
        cell(s.eta_r_window.map(|m| m.error)),
    ]
    .join(",")
}

pub fn sweep(
    args: &ConfigArgs,
    analysis: &AnalysisArgs,
    axis: &str,
    trials: u64,
    seed: u64,
    out: &Path,
    verbose: bool,
) -> CliResult<()> {
    positive_trials(trials)?;
    let axis = parse_axis(axis).map_err(CliError::Usage)?;
    if !NUMERIC_KEYS.contains(&axis.key.as_str()) {
        return Err(CliError::usage(format!(
            "unknown sweep field `{}`; sweepable fields: {}",
            axis.key,
            NUMERIC_KEYS.join(", ")
        )));
    }
    let base = resolve_config(args, None, verbose)?;
    let mut table = format!(
        "{},seed,beta,g_model,g_central,g_central_err,r,r_lower,r_upper,\
         eta_r_bin,eta_r_bin_err,eta_r_window,eta_r_window_err\n",
        axis.key
    );
    for (i, &value) in axis.values.iter().enumerate() {
        let mut config = base.clone();
        config.set(&axis.key, &value.to_string())?;
        config.validate()?;
        let point_seed = seed.wrapping_add(i as u64);
        let source = Source::new(&config, point_seed)?;
        for w in source.warnings() {
            eprintln!("warning: {} = {value}: {w}", axis.key);
        }
        let analyzer = Analyzer::new(&config, analysis_options(analysis, Some(trials)))?;
        let stats = analyzer.accumulate_source(&source, trials)?;
        let report = analyzer.report(&stats)?;
        table.push_str(&sweep_row(value, point_seed, &config, &report.summary));
        table.push('\n');
    }
    write_file(out, &table)?;

    let mut m = Manifest::new("sweep");
    m.set("axis", &axis.key);
    m.set(
        "axis.values",
        axis.values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
    );
    m.set("trials_per_point", trials);
    m.set("seed", seed);
    record_analysis(&mut m, analysis);
    m.set_config(&base);
    m.file("output.table", out)?;
    m.write_for(out)?;
    print!("{table}");
    Ok(())
}
