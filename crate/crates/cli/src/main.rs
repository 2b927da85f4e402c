use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dicke_mf::pipeline::{self, ExperimentConfig, Pipeline, PointSpec};
use dicke_mf::Error;

/// Multifractal analysis of Dicke-model coherent states.
#[derive(Parser, Debug)]
#[command(name = "dicke-mf", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON experiment configuration; defaults are used for absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Spectrum cache directory.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Diagonalize both parity blocks for every j and report certified levels.
    Spectrum,
    /// Mass exponents, fits, PDoS and widths of coherent states.
    StateAnalyze {
        /// Point as `eps0,jz[,phi]`; repeatable. Defaults to the configured points.
        #[arg(long = "point", value_parser = parse_point, allow_hyphen_values = true)]
        points: Vec<PointSpec>,
    },
    /// Parabolic D1 along the jz grid of energy surfaces.
    SurfaceScan {
        /// Energy surface; repeatable. Defaults to the configured surfaces.
        #[arg(long = "eps0", allow_hyphen_values = true)]
        surfaces: Vec<f64>,
    },
    /// Classical Poincare sections at p = 0.
    Poincare,
    /// Synthetic-oracle slopes and closed-form agreement.
    BoundsCheck,
    /// Compare tau_q at two bosonic cutoffs.
    ConvergenceSweep {
        #[arg(long)]
        n_max_alt: Option<u32>,
        #[arg(long = "point", value_parser = parse_point, allow_hyphen_values = true)]
        points: Vec<PointSpec>,
    },
}

fn parse_point(s: &str) -> Result<PointSpec, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [eps0, jz] => Ok(PointSpec { eps0, jz, phi: 0.0 }),
        [eps0, jz, phi] => Ok(PointSpec { eps0, jz, phi }),
        _ => Err(format!("expected eps0,jz[,phi], got {s:?}")),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::InvalidParams(_)
        | Error::InvalidPoint(_)
        | Error::EmptySurface(_)
        | Error::Json(_)
        | Error::ParamMismatch(_)
        | Error::DimensionOverflow { .. }
        | Error::Pole { .. } => 2,
        Error::Unconverged(_) | Error::EigenNonConvergence { .. } | Error::InsufficientData(_) => 3,
        Error::CacheCorrupt { .. } => 4,
        _ => 1,
    }
}

fn load_config(g: &Global) -> dicke_mf::Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if g.threads.is_some() {
        cfg.threads = g.threads;
    }
    if g.cache.is_some() {
        cfg.cache_dir = g.cache.clone();
    }
    cfg.out_dir = Some(g.out.clone());
    cfg.validate()?;
    Ok(cfg)
}

fn report(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> dicke_mf::Result<()> {
    let mut cfg = load_config(&cli.global)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let out: &Path = &cli.global.out;
    std::fs::create_dir_all(out)?;

    match cli.command {
        Command::Spectrum => {
            let digest = cfg.digest();
            let p = Pipeline::new(cfg)?;
            let rows = p.run_spectrum()?;
            let path = out.join("spectrum.csv");
            pipeline::write_spectrum_rows(&path, &digest, &rows)?;
            log::info!("cache hits {}, misses {}", p.store.hits(), p.store.misses());
            report(&[path]);
        }
        Command::StateAnalyze { points } => {
            if !points.is_empty() {
                cfg.points = points;
            }
            let digest = cfg.digest();
            let p = Pipeline::new(cfg)?;
            let specs = p.config.points.clone();
            let bundles = p.run_state_analysis(&specs)?;
            for b in &bundles {
                if let Some(f) = b.fit(dicke_mf::multifractal::FitModel::Linear, p.config.q_range_high) {
                    println!(
                        "eps0={} jz={} D1={:.4} ({}) trusted=[{}, {}]",
                        b.spec.eps0,
                        b.spec.jz,
                        f.d1,
                        f.classification.name(),
                        b.curve.trusted_range.0,
                        b.curve.trusted_range.1
                    );
                }
            }
            report(&pipeline::write_state_bundles(out, &digest, &bundles)?);
        }
        Command::SurfaceScan { surfaces } => {
            if !surfaces.is_empty() {
                cfg.surfaces = surfaces;
            }
            cfg.validate()?;
            let digest = cfg.digest();
            let p = Pipeline::new(cfg)?;
            let mut files = Vec::new();
            for &eps0 in &p.config.surfaces.clone() {
                let scan = p.run_surface_scan(eps0)?;
                let path = out.join(format!("surface_eps{eps0}.csv"));
                pipeline::write_surface_scan(&path, &digest, &scan)?;
                files.push(path);
            }
            report(&files);
        }
        Command::Poincare => {
            let digest = cfg.digest();
            let p = Pipeline::new(cfg)?;
            let runs = p.run_poincare()?;
            for r in &runs {
                println!("eps0={} points={} coverage={:.4}", r.eps0, r.section.points.len(), r.coverage.fraction());
            }
            report(&pipeline::write_sections(out, &digest, &runs)?);
        }
        Command::BoundsCheck => {
            let digest = cfg.digest();
            let r = pipeline::run_bounds_check(&cfg)?;
            println!(
                "random D1={:.4} sequence D1={:.4} max closed-form error={:.3e}",
                r.random_d1,
                r.sequence_d1,
                r.max_closed_form_error()
            );
            report(&pipeline::write_bounds(out, &digest, &r)?);
        }
        Command::ConvergenceSweep { n_max_alt, points } => {
            if n_max_alt.is_some() {
                cfg.n_max_alt = n_max_alt;
            }
            if !points.is_empty() {
                cfg.points = points;
            }
            cfg.validate()?;
            let digest = cfg.digest();
            let p = Pipeline::new(cfg)?;
            let specs = p.config.points.clone();
            let sweeps = p.run_convergence_sweep(&specs)?;
            for s in &sweeps {
                println!(
                    "eps0={} jz={} n_max {} vs {}: separation q*={}",
                    s.spec.eps0,
                    s.spec.jz,
                    s.n_max_lo,
                    s.n_max_hi,
                    s.separation_q.map_or("none".into(), |q| q.to_string())
                );
            }
            let path = out.join("convergence.csv");
            pipeline::write_convergence_sweep(&path, &digest, &sweeps)?;
            report(&[path]);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
