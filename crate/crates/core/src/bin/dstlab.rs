use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dstlab::harness::{self, OUT_ENV};

#[derive(Parser)]
#[command(
    name = "dstlab",
    version,
    about = "Self-training experiments with debiased pseudo labeling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to $DSTLAB_OUT/<config stem>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one experiment per seed and aggregate.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Overlay the metrics of several runs.
    Compare {
        #[arg(long, value_delimiter = ',', required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(explicit: Option<PathBuf>, default_name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(default_name)
    })
}

fn stem(p: &std::path::Path) -> String {
    p.file_stem()
        .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed } => {
            let out = out_dir(out, &stem(&config));
            harness::run(&config, &out, seed).map(|r| {
                println!(
                    "{}: final accuracy {:.4}, best {:.4}, worst10 {:.4} -> {}",
                    r.algorithm,
                    r.final_accuracy,
                    r.best_accuracy,
                    r.worst10,
                    out.display()
                );
            })
        }
        Command::Sweep {
            config,
            seeds,
            jobs,
            out,
        } => {
            let out = out_dir(out, &format!("{}_sweep", stem(&config)));
            harness::sweep(&config, &seeds, jobs, &out).and_then(|r| {
                for (name, m) in &r.metrics {
                    println!("{name}: {:.4} ± {:.4} (n = {})", m.mean, m.std, m.n);
                }
                for f in &r.failures {
                    eprintln!("seed {} failed: {}", f.seed, f.error);
                }
                if r.partial {
                    Err(dstlab::Error::Contract(format!(
                        "{} of {} seeds failed",
                        r.failures.len(),
                        r.seeds.len()
                    )))
                } else {
                    Ok(())
                }
            })
        }
        Command::Compare { runs, out } => {
            let out = out_dir(out, "comparison");
            harness::compare(&runs, &out).map(|rows| {
                for r in rows {
                    println!("{}", r.join(","));
                }
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
