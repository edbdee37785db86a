//! Command-line pipeline runner for the single-rail qubit laboratory.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use singlerail::analysis::{wigner, GridSpec};
use singlerail::homodyne::read_quadratures_csv;
use singlerail::pipeline::{
    compare_runs, run_pipeline, CompareOptions, PipelineConfig, Stage, RECONSTRUCTION_FILE,
};
use singlerail::tomography::{maxlik_reconstruct, ReconstructionReport};

#[derive(Parser)]
#[command(name = "singlerail", version, about = "Heralded single-rail qubit simulation and tomography")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured pipeline stages over the grid.
    Run(RunArgs),
    /// Write the model curves for the configured grid without sampling.
    Curves(RunArgs),
    /// Reconstruct a density matrix from a quadrature CSV.
    Reconstruct {
        /// Quadrature record (CSV with header `theta,x`).
        csv: PathBuf,
        /// Truncation of the reconstruction.
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 2000)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Output report path.
        #[arg(long, default_value = "reconstruction.json")]
        out: PathBuf,
    },
    /// Evaluate the Wigner function of a reconstructed state.
    Wigner {
        /// Reconstruction report (JSON).
        report: PathBuf,
        /// Output CSV path (`x,p,w` rows).
        #[arg(long, default_value = "wigner.csv")]
        out: PathBuf,
        /// Optional JSON output path.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, default_value_t = -4.0)]
        min: f64,
        #[arg(long, default_value_t = 4.0)]
        max: f64,
        #[arg(long, default_value_t = 121)]
        points: usize,
    },
    /// Compare two run manifests point by point.
    Compare {
        manifest_a: PathBuf,
        manifest_b: PathBuf,
        /// Absolute tolerance on reconstructed rho11 and |rho01| (defaults
        /// to the 3-sigma reseeding band).
        #[arg(long)]
        rho_tol: Option<f64>,
        /// Absolute tolerance on reconstructed efficiency.
        #[arg(long)]
        eff_tol: Option<f64>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration (TOML).
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the enabled stages (comma separated:
    /// simulate,sample,reconstruct,analyze).
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<String>>,
}

fn parse_stage(name: &str) -> anyhow::Result<Stage> {
    match name.trim() {
        "simulate" => Ok(Stage::Simulate),
        "sample" => Ok(Stage::Sample),
        "reconstruct" => Ok(Stage::Reconstruct),
        "analyze" => Ok(Stage::Analyze),
        other => anyhow::bail!("unknown stage `{other}`"),
    }
}

fn load_config(args: &RunArgs) -> anyhow::Result<PipelineConfig> {
    let mut config = PipelineConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        config.pipeline.seed = seed;
    }
    if let Some(out) = &args.out {
        config.pipeline.output_dir = out.clone();
    }
    if let Some(stages) = &args.stages {
        let mut parsed = Vec::new();
        for name in stages {
            parsed.push(parse_stage(name)?);
        }
        parsed.sort();
        parsed.dedup();
        config.pipeline.stages = parsed;
    }
    config.validate()?;
    Ok(config)
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Run(args) => {
            let config = load_config(&args)?;
            let manifest = run_pipeline(&config)?;
            println!(
                "wrote {} grid points to {}",
                manifest.points.len(),
                config.pipeline.output_dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Curves(args) => {
            let mut config = load_config(&args)?;
            config.pipeline.stages = vec![Stage::Analyze];
            let manifest = run_pipeline(&config)?;
            println!(
                "wrote model curves for {} grid points to {}",
                manifest.points.len(),
                config.pipeline.output_dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Reconstruct {
            csv,
            dim,
            max_iter,
            tol,
            out,
        } => {
            let samples = read_quadratures_csv(BufReader::new(
                fs::File::open(&csv).with_context(|| format!("opening {}", csv.display()))?,
            ))?;
            let report = maxlik_reconstruct(&samples, dim, max_iter, tol)?;
            let writer = BufWriter::new(fs::File::create(&out)?);
            serde_json::to_writer_pretty(writer, &report)?;
            println!(
                "reconstructed {} samples at dim {} in {} iterations (converged: {}) -> {}",
                samples.len(),
                dim,
                report.iterations_run,
                report.converged,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Wigner {
            report,
            out,
            json,
            min,
            max,
            points,
        } => {
            let path = if report.is_dir() {
                report.join(RECONSTRUCTION_FILE)
            } else {
                report
            };
            let parsed: ReconstructionReport = serde_json::from_reader(BufReader::new(
                fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?,
            ))?;
            let grid = GridSpec {
                x_min: min,
                x_max: max,
                p_min: min,
                p_max: max,
                nx: points,
                np: points,
            };
            let w = wigner(&parsed.rho, &grid)?;
            let mut writer = BufWriter::new(fs::File::create(&out)?);
            w.write_csv(&mut writer)?;
            if let Some(json_path) = json {
                let writer = BufWriter::new(fs::File::create(&json_path)?);
                serde_json::to_writer_pretty(writer, &w)?;
            }
            if w.boundary_warning {
                eprintln!("warning: Wigner support reaches the grid boundary");
            }
            println!("wrote Wigner grid ({}x{}) to {}", points, points, out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare {
            manifest_a,
            manifest_b,
            rho_tol,
            eff_tol,
        } => {
            let report = compare_runs(
                &manifest_a,
                &manifest_b,
                &CompareOptions { rho_tol, eff_tol },
            )?;
            for point in &report.points {
                for d in &point.diffs {
                    if d.delta != 0.0 || !d.within {
                        println!(
                            "point {:3} {:>18}: {:+.6e} (tolerance {:.3e}) {}",
                            point.index,
                            d.metric,
                            d.delta,
                            d.tolerance,
                            if d.within { "ok" } else { "FAIL" }
                        );
                    }
                }
            }
            if report.pass {
                if report.stochastic_deltas {
                    println!("runs agree within statistical bands (stochastic deltas noted)");
                } else {
                    println!("runs are identical");
                }
                Ok(ExitCode::SUCCESS)
            } else {
                println!("runs differ beyond tolerance");
                Ok(ExitCode::from(2))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
