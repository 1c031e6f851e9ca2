use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mtl_core::experiment::{evaluate_run, report_csv, run_experiment, run_grid, AblationGrid};
use mtl_core::plots::emit_plots;
use mtl_core::synthdata::{generate_dataset, DatasetSpec};
use mtl_core::training::ExperimentConfig;
use mtl_core::Error;

/// Multitask scene classification and event detection experiments.
#[derive(Parser)]
#[command(name = "mtl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration over all of its seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "MTL_OUT_DIR", default_value = "runs")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Run an ablation grid.
    Grid {
        #[arg(long)]
        grid: PathBuf,
        /// Defaults to `<MTL_OUT_DIR>/<grid file stem>`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Render SVG figures for a run or grid directory.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Generate a synthetic dataset.
    GenData {
        /// A spec JSON file, or the built-in profile `fast` or `full`.
        #[arg(long, default_value = "fast")]
        spec: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides the spec's clips per scene.
        #[arg(long)]
        clips_per_scene: Option<usize>,
    },
    /// Recompute a run's report from its checkpoints.
    Eval {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn load_spec(spec: &str) -> Result<DatasetSpec, Error> {
    match spec {
        "fast" => Ok(DatasetSpec::fast()),
        "full" => Ok(DatasetSpec::full()),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("spec {path}: {e}")))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("spec {path}: {e}")))
        }
    }
}

fn out_root() -> PathBuf {
    std::env::var_os("MTL_OUT_DIR").map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn run(cmd: Command) -> Result<bool, Error> {
    match cmd {
        Command::Run { config, out, workers } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (dir, report) = run_experiment(&cfg, &out, workers)?;
            print!("{}", report_csv(&report));
            println!("wrote {}", dir.display());
            let failed = report.failed_seeds();
            if failed > 0 {
                eprintln!("{failed} of {} seeds failed", report.seeds.len());
            }
            Ok(failed == 0)
        }
        Command::Grid { grid, out, workers } => {
            let g = AblationGrid::load(&grid)?;
            let stem = grid.file_stem().map_or_else(|| "grid".into(), |s| s.to_os_string());
            let dir = out.unwrap_or_else(|| out_root().join(stem));
            let rows = run_grid(&g, &dir, workers)?;
            let mut ok = true;
            for r in &rows {
                match &r.report {
                    Ok(rep) if rep.failed_seeds() == 0 => println!("{}: ok", r.name),
                    Ok(rep) => {
                        ok = false;
                        println!("{}: {} seeds failed", r.name, rep.failed_seeds());
                    }
                    Err(e) => {
                        ok = false;
                        println!("{}: failed: {e}", r.name);
                    }
                }
            }
            println!("wrote {}", dir.join("grid.csv").display());
            Ok(ok)
        }
        Command::Plot { input } => {
            for p in emit_plots(&input)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::GenData {
            spec,
            out,
            seed,
            clips_per_scene,
        } => {
            let mut spec = load_spec(&spec)?;
            if let Some(n) = clips_per_scene {
                spec.clips_per_scene = n;
            }
            let data = generate_dataset(&spec, seed)?;
            let mut json = serde_json::to_value(&spec).map_err(|e| Error::Format(e.to_string()))?;
            json["seed"] = seed.into();
            data.write(&out, &json)?;
            println!("wrote {} clips to {}", data.clips.len(), out.display());
            Ok(true)
        }
        Command::Eval { input } => {
            let report = evaluate_run(&input)?;
            let fresh = report_csv(&report);
            print!("{fresh}");
            let stored = input.join("report.csv");
            match std::fs::read_to_string(&stored) {
                Ok(old) if old == fresh => println!("matches {}", stored.display()),
                Ok(_) => println!("differs from {}", stored.display()),
                Err(_) => println!("no stored {}", stored.display()),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
