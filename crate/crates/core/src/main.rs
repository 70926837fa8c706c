use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hysterion::det::{self, OrbitOptions};
use hysterion::ensemble::{run_ensemble_with_threads, with_threads, EnsembleConfig};
use hysterion::io::config::{RunConfig, Settings, THREADS_ENV};
use hysterion::io::manifest::{sha256_hex, wall_clock, ExperimentManifest, OutputDir, ReportDigest, SOURCE_DATE_EPOCH};
use hysterion::io::{output, Format};
use hysterion::scaling::{verify_scaling, LawConfig, LawId};
use hysterion::sde::{path_seed, Simulator};
use hysterion::{classify, Error, Thresholds};

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_FAILED_VERIFICATION: u8 = 3;

#[derive(Parser)]
#[command(
    name = "hysterion",
    version,
    about = "Noisy dynamical hysteresis in a forced double-well potential"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the parameter regime and the slack of every threshold inequality.
    Classify(Flags),
    /// Deterministic periodic orbits and their areas.
    Det(Flags),
    /// One stochastic path (ensemble member 0 of --seed).
    Simulate(Flags),
    /// Monte Carlo ensemble summary, histograms and optional per-path samples.
    Ensemble(Flags),
    /// Sweep tables and power-law fits of a scaling law.
    Sweep(Flags),
    /// As sweep, exiting with status 3 when the law fails.
    Verify(Flags),
}

#[derive(Args, Clone, Debug, Default)]
struct Flags {
    #[arg(long, allow_negative_numbers = true)]
    eps: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    sigma: Option<f64>,
    /// Amplitude excess over the fold value; conflicts with --amplitude.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "amplitude")]
    a0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    amplitude: Option<f64>,
    /// Number of paths.
    #[arg(long)]
    n: Option<usize>,
    /// Seed base; path i uses a hash of (seed, i).
    #[arg(long)]
    seed: Option<u64>,
    /// Steps per eps: dt <= eps / dt-div.
    #[arg(long = "dt-div", allow_negative_numbers = true)]
    dt_div: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    t0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    span: Option<f64>,
    /// Scaling law: det_small, det_large, var_ia, var_iia, deficit_iii, lambda0_width.
    #[arg(long)]
    law: Option<String>,
    /// Comma-separated values replacing the first sweep's grid.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    grid: Option<Vec<f64>>,
    /// Output directory; tables go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or jsonl.
    #[arg(long)]
    format: Option<Format>,
    #[arg(long = "keep-samples", num_args = 0..=1, default_missing_value = "true")]
    keep_samples: Option<bool>,
    /// Worker threads (falls back to HYSTERION_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    /// Flat JSON config, or a manifest to replay.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Flags {
    fn layer(&self) -> RunConfig {
        RunConfig {
            eps: self.eps,
            sigma: self.sigma,
            a0: self.a0,
            amplitude: self.amplitude,
            n: self.n,
            seed: self.seed,
            dt_div: self.dt_div,
            t0: self.t0,
            span: self.span,
            law: self.law.clone(),
            grid: self.grid.clone(),
            out: self.out.clone(),
            format: self.format,
            keep_samples: self.keep_samples,
            threads: self.threads,
        }
    }

    /// Command line over config file.
    fn merged(&self) -> Result<RunConfig, Error> {
        let file = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        Ok(self.layer().over(&file))
    }
}

struct Run {
    command: &'static str,
    merged: RunConfig,
    settings: Settings,
    started_at: u64,
}

impl Run {
    fn new(command: &'static str, flags: &Flags) -> Result<Self, Error> {
        let started_at = wall_clock(std::env::var(SOURCE_DATE_EPOCH).ok().as_deref())?;
        let merged = flags.merged()?;
        let settings = Settings::resolve(&merged, std::env::var(THREADS_ENV).ok().as_deref())?;
        Ok(Self {
            command,
            merged,
            settings,
            started_at,
        })
    }

    fn output_dir(&self) -> Result<Option<OutputDir>, Error> {
        self.settings.out.as_ref().map(OutputDir::create).transpose()
    }

    fn manifest(&self, config: RunConfig, reports: Vec<ReportDigest>) -> Result<ExperimentManifest, Error> {
        Ok(ExperimentManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            grid: config.grid.clone(),
            config,
            seed_base: self.settings.seed,
            started_at: self.started_at,
            finished_at: wall_clock(std::env::var(SOURCE_DATE_EPOCH).ok().as_deref())?,
            reports,
            outputs: Vec::new(),
        })
    }

    fn file_name(&self, stem: &str) -> String {
        format!("{stem}.{}", self.settings.format.extension())
    }
}

fn stdout() -> std::io::StdoutLock<'static> {
    std::io::stdout().lock()
}

fn cmd_classify(flags: &Flags) -> Result<u8, Error> {
    let run = Run::new("classify", flags)?;
    let p = run.settings.params;
    let regime = classify(&p, &Thresholds::default());
    let mut out = stdout();
    let w = |e| Error::io("stdout", e);
    writeln!(out, "{}", regime.case).map_err(w)?;
    writeln!(out, "eps {}  sigma {}  a0 {:.6}", p.epsilon, p.sigma, p.a0()).map_err(w)?;
    writeln!(out, "score {:.4}  borderline {}", regime.score, regime.borderline).map_err(w)?;
    writeln!(out, "{:<40} {:>10}", "inequality", "slack").map_err(w)?;
    for m in &regime.margins {
        writeln!(out, "{:<40} {:>10.4}", m.inequality, m.slack).map_err(w)?;
    }
    Ok(0)
}

fn cmd_det(flags: &Flags) -> Result<u8, Error> {
    let run = Run::new("det", flags)?;
    let p = run.settings.params;
    let opts = OrbitOptions {
        dt_div: run.settings.dt_div,
        ..OrbitOptions::default()
    };
    let orbits = det::find_periodic_orbits(&p, &opts)?;
    let mut rows = Vec::with_capacity(orbits.len());
    for o in &orbits {
        rows.push(vec![
            output::Cell::S(o.branch.name().into()),
            output::Cell::S(format!("{:?}", o.stability).to_lowercase()),
            output::Cell::F(o.fixed_point),
            output::Cell::F(det::det_area(&o.path, p.amplitude)?),
            output::Cell::U(o.iterations as u64),
        ]);
    }
    let header = ["branch", "stability", "fixed_point", "area", "iterations"];
    let format = run.settings.format;
    match run.output_dir()? {
        None => output::write_table(stdout(), format, &header, rows)?,
        Some(mut dir) => {
            for o in &orbits {
                dir.write(&run.file_name(&format!("orbit_{}", o.branch.name())), |b| {
                    output::write_path(b, &o.path, format)
                })?;
            }
            dir.write(&run.file_name("det_summary"), |b| {
                output::write_table(b, format, &header, rows)
            })?;
            dir.finish(run.manifest(run.settings.to_config(), vec![])?)?;
        }
    }
    Ok(0)
}

fn cmd_simulate(flags: &Flags) -> Result<u8, Error> {
    let run = Run::new("simulate", flags)?;
    let s = &run.settings;
    let sim = Simulator::over(s.params, s.t0, s.span, s.dt_div)?;
    let (path, obs) = sim.run(path_seed(s.seed, 0), 1)?;
    match run.output_dir()? {
        None => output::write_path(stdout(), &path, s.format)?,
        Some(mut dir) => {
            dir.write(&run.file_name("path"), |b| output::write_path(b, &path, s.format))?;
            dir.write(&run.file_name("observables"), |b| {
                output::write_samples(b, std::slice::from_ref(&obs), s.format)
            })?;
            dir.finish(run.manifest(s.to_config(), vec![])?)?;
        }
    }
    Ok(0)
}

fn cmd_ensemble(flags: &Flags) -> Result<u8, Error> {
    let run = Run::new("ensemble", flags)?;
    let s = &run.settings;
    let cfg = EnsembleConfig {
        n: s.n,
        seed_base: s.seed,
        t0: s.t0,
        span: s.span,
        dt_div: s.dt_div,
        keep_samples: s.keep_samples,
        ..EnsembleConfig::default()
    };
    let result = run_ensemble_with_threads(&s.params, &cfg, s.threads)?;
    match run.output_dir()? {
        None => output::write_summary(stdout(), &result.summary, s.format)?,
        Some(mut dir) => {
            dir.write(&run.file_name("summary"), |b| {
                output::write_summary(b, &result.summary, s.format)
            })?;
            for (name, o) in result.summary.observables() {
                dir.write(&run.file_name(&format!("histogram_{name}")), |b| {
                    output::write_histogram(b, &o.histogram, s.format)
                })?;
            }
            if let Some(samples) = &result.samples {
                dir.write(&run.file_name("samples"), |b| {
                    output::write_samples(b, samples, s.format)
                })?;
            }
            dir.finish(run.manifest(s.to_config(), vec![])?)?;
        }
    }
    Ok(0)
}

/// Law defaults with explicitly given keys applied on top.
fn law_config(merged: &RunConfig) -> Result<LawConfig, Error> {
    let law: LawId = merged
        .law
        .as_deref()
        .ok_or_else(|| Error::Config("--law is required".into()))?
        .parse()?;
    let mut cfg = LawConfig::default_for(law);
    if let Some(n) = merged.n {
        cfg.n_paths = n;
    }
    if let Some(seed) = merged.seed {
        cfg.seed_base = seed;
    }
    if let Some(dt_div) = merged.dt_div {
        cfg.dt_div = dt_div;
        cfg.orbit.dt_div = dt_div;
    }
    for spec in &mut cfg.sweeps {
        if let Some(eps) = merged.eps {
            spec.base.epsilon = eps;
        }
        if let Some(sigma) = merged.sigma {
            spec.base.sigma = sigma;
        }
        if let Some(a0) = merged.a0 {
            spec.base = spec.base.with_amplitude_excess(a0);
        }
        if let Some(amplitude) = merged.amplitude {
            spec.base.amplitude = amplitude;
        }
    }
    if let Some(grid) = &merged.grid {
        cfg.sweeps[0].grid = grid.clone();
    }
    Ok(cfg)
}

fn cmd_scaling(flags: &Flags, verify: bool) -> Result<u8, Error> {
    let command = if verify { "verify" } else { "sweep" };
    let run = Run::new(command, flags)?;
    let cfg = law_config(&run.merged)?;
    let report = with_threads(run.settings.threads, || verify_scaling(&cfg))?;
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| Error::io("report", e))?;
    json.push('\n');

    if let Some(mut dir) = run.output_dir()? {
        let format = run.settings.format;
        for (k, sweep) in report.sweeps.iter().enumerate() {
            let axis = serde_json::to_value(sweep.axis)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default();
            dir.write(&run.file_name(&format!("sweep_{}_{k}_{axis}", report.law_id)), |b| {
                output::write_sweep(b, &sweep.table, format)
            })?;
        }
        let report_name = format!("report_{}.json", report.law_id);
        dir.write(&report_name, |b| {
            b.extend_from_slice(json.as_bytes());
            Ok(())
        })?;
        let digest = ReportDigest {
            law: report.law_id.to_string(),
            pass: report.pass,
            sha256: sha256_hex(json.as_bytes()),
        };
        let config = RunConfig {
            out: None,
            threads: None,
            ..run.merged.clone()
        };
        dir.finish(run.manifest(config, vec![digest])?)?;
    }
    stdout()
        .write_all(json.as_bytes())
        .map_err(|e| Error::io("stdout", e))?;
    Ok(if verify && !report.pass {
        EXIT_FAILED_VERIFICATION
    } else {
        0
    })
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::NonFinite { .. } | Error::NoConvergence { .. } => EXIT_RUNTIME,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Classify(f) => cmd_classify(f),
        Command::Det(f) => cmd_det(f),
        Command::Simulate(f) => cmd_simulate(f),
        Command::Ensemble(f) => cmd_ensemble(f),
        Command::Sweep(f) => cmd_scaling(f, false),
        Command::Verify(f) => cmd_scaling(f, true),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
