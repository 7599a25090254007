use std::path::PathBuf;
use std::process::ExitCode;

use biharm_core::corner::{characteristic_roots, CornerSpectrum};
use biharm_core::mesh::{read_polygon_mesh, MeshHierarchy, BUILTIN_DOMAINS};
use biharm_cli::config::{ExperimentConfig, SCHEMA};
use biharm_cli::experiment::{run_comparison, run_experiment, write_comparison, write_outputs};
use biharm_cli::parse_angle;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "biharm", version, about = "Decoupled finite elements for the clamped biharmonic problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a convergence study and write CSV and markdown rate tables
    #[command(after_long_help = SCHEMA)]
    Run {
        config: PathBuf,
        /// Override the config's `jobs`
        #[arg(long)]
        jobs: Option<usize>,
        /// No per-level progress on stderr
        #[arg(long)]
        quiet: bool,
    },
    /// Per-level differences between two runs that differ only in algorithm or forcing
    Compare {
        config_a: PathBuf,
        config_b: PathBuf,
        /// Output directory, default results/<a>_vs_<b>
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Corner singularity exponents for an interior angle
    CornerExponents {
        /// Angle in radians, or a multiple of pi such as 3pi/2
        #[arg(long, allow_hyphen_values = true)]
        omega: String,
        /// Also list the characteristic roots with real part up to this bound
        #[arg(long)]
        roots: Option<f64>,
    },
    /// Write the finest mesh of a graded hierarchy
    Mesh {
        /// Builtin domain name or a level-0 polygon mesh file
        #[arg(long)]
        domain: String,
        #[arg(long, default_value_t = 0.5)]
        kappa: f64,
        #[arg(long)]
        levels: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, ExitCode> {
    ExperimentConfig::from_file(path).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        ExitCode::from(2)
    })
}

fn list(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(command: Command) -> Result<(), ExitCode> {
    match command {
        Command::Run { config, jobs, quiet } => {
            let mut cfg = load(&config)?;
            if let Some(j) = jobs {
                cfg.jobs = j.max(1);
            }
            let result = run_experiment(&cfg, !quiet);
            let written = write_outputs(&cfg, &result).map_err(|e| {
                eprintln!("writing outputs: {e}");
                ExitCode::FAILURE
            })?;
            list(&written);
            let mut failed = false;
            for col in result.failures() {
                eprintln!("kappa {}: {}", col.kappa, col.error.as_deref().unwrap_or(""));
                failed = true;
            }
            if failed {
                return Err(ExitCode::FAILURE);
            }
        }
        Command::Compare {
            config_a,
            config_b,
            out,
            quiet,
        } => {
            let a = load(&config_a)?;
            let b = load(&config_b)?;
            let columns = run_comparison(&a, &b, !quiet).map_err(|e| {
                eprintln!("{e}");
                ExitCode::from(2)
            })?;
            let dir = out.unwrap_or_else(|| PathBuf::from("results").join(format!("{}_vs_{}", a.name, b.name)));
            let written = write_comparison(&dir, &a, &b, &columns).map_err(|e| {
                eprintln!("writing outputs: {e}");
                ExitCode::FAILURE
            })?;
            list(&written);
            if columns.iter().any(|c| c.error.is_some()) {
                for c in columns.iter().filter(|c| c.error.is_some()) {
                    eprintln!("kappa {}: {}", c.kappa, c.error.as_deref().unwrap_or(""));
                }
                return Err(ExitCode::FAILURE);
            }
        }
        Command::CornerExponents { omega, roots } => {
            let w = parse_angle(&omega).ok_or_else(|| {
                eprintln!("cannot parse angle `{omega}`");
                ExitCode::from(2)
            })?;
            let spectrum = CornerSpectrum::new(w).map_err(|e| {
                eprintln!("{e}");
                ExitCode::FAILURE
            })?;
            println!("omega  = {:.15}", spectrum.omega);
            println!("alpha0 = {:.15}", spectrum.alpha0);
            println!("beta0  = {:.15}", spectrum.beta0);
            if let Some(cap) = roots {
                let zs = characteristic_roots(w, cap).map_err(|e| {
                    eprintln!("{e}");
                    ExitCode::FAILURE
                })?;
                for z in zs {
                    println!("root   = {:.15} {:+.15}i", z.re, z.im);
                }
            }
        }
        Command::Mesh {
            domain,
            kappa,
            levels,
            out,
        } => {
            let fail = |e: biharm_core::Error| {
                eprintln!("{e}");
                ExitCode::FAILURE
            };
            let mut h = if BUILTIN_DOMAINS.contains(&domain.as_str()) {
                MeshHierarchy::builtin(&domain, kappa).map_err(fail)?
            } else {
                let text = std::fs::read_to_string(&domain).map_err(|e| {
                    eprintln!("{domain}: {e}");
                    ExitCode::from(2)
                })?;
                let (poly, mesh) = read_polygon_mesh(&text).map_err(fail)?;
                let rule = biharm_core::corner::GradingRule::from_kappa(kappa).map_err(fail)?;
                let rules = poly.graded_corners.iter().map(|&c| (c, rule)).collect();
                MeshHierarchy::new(poly, mesh, rules).map_err(fail)?
            };
            h.refine_to(levels).map_err(fail)?;
            std::fs::write(&out, h.finest().to_text()).map_err(|e| {
                eprintln!("{}: {e}", out.display());
                ExitCode::FAILURE
            })?;
            println!(
                "wrote {} ({} points, {} triangles)",
                out.display(),
                h.finest().num_points(),
                h.finest().num_triangles()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
