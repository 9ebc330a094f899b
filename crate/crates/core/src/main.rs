use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use amtopo::cli::{run_case, sweep_file, timing_reports};
use amtopo::config::load_config;
use amtopo::io::{format_sig, sweep_csv_string, timing_table};

#[derive(Parser)]
#[command(name = "amtopo", version, about = "Layer-by-layer AM topology optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an optimization described by a TOML config.
    Run {
        config: PathBuf,
        /// Override `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override `threads` (0 = all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Print every iteration instead of every 10th.
        #[arg(long, short)]
        verbose: bool,
    },
    /// NPUP of a saved density over overhang angles.
    Sweep {
        density: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "30,45,60")]
        angles: Vec<f64>,
        /// Config giving the mesh; defaults to config.echo next to the density file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average per-phase timings of one or more iters.csv logs.
    Timing {
        #[arg(required = true)]
        runlogs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> amtopo::Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            out,
            threads,
            verbose,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            let art = run_case(&cfg, |r| {
                if verbose || r.iteration == 1 || r.iteration % 10 == 0 {
                    println!(
                        "it {:>4}  beta {:>6}  J_D {:>10}  total {:>10}  gray {:>8}  vol {:>9}  step {:>9}",
                        r.iteration,
                        format_sig(r.beta, 4),
                        format_sig(r.j_d, 6),
                        format_sig(r.total, 6),
                        format_sig(r.grayness, 4),
                        format_sig(r.vol_constraint, 3),
                        format_sig(r.step_inf_norm, 3),
                    );
                }
            })?;
            let res = &art.result;
            if let Some(c) = &res.cost {
                println!(
                    "{} after {} iterations: J_D {}, total {}, grayness {}",
                    if res.converged { "converged" } else { "stopped" },
                    res.log.records.len(),
                    format_sig(c.j_d, 6),
                    format_sig(c.total, 6),
                    format_sig(c.grayness, 4)
                );
            }
            print!("{}", sweep_csv_string(&art.overhang));
            println!("artifacts in {}", art.out_dir.display());
            Ok(if res.converged { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Sweep {
            density,
            angles,
            config,
            out,
        } => {
            let rows = sweep_file(&density, config.as_deref(), &angles)?;
            match out {
                Some(p) => amtopo::io::export_sweep(&rows, &p)?,
                None => print!("{}", sweep_csv_string(&rows)),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Timing { runlogs } => {
            print!("{}", timing_table(&timing_reports(&runlogs)?));
            Ok(ExitCode::SUCCESS)
        }
    }
}
