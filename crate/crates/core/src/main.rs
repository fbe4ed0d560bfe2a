use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use bosefield::cli_runner::{execute, load_result, report, selftest, write_run, ExperimentConfig};

/// Functional-integral Monte Carlo for the Bose gas mean-field limit.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Master seed; overrides the config's `seed`.
    #[arg(long, global = true, env = "BOSEFIELD_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, env = "BOSEFIELD_WORKERS")]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "BOSEFIELD_OUT_DIR", default_value = "results")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Merge result files into grouped tables.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Also write report.txt and report.csv into the output directory.
        #[arg(long)]
        write: bool,
    },
    /// Run the built-in property checks, optionally for one module.
    Selftest { module: Option<String> },
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_TASK_ERRORS: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let cfg = match ExperimentConfig::from_path(&config, cli.seed) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let start = Instant::now();
            let output = execute(&cfg, cli.workers);
            eprintln!("wall time {:.3} s", start.elapsed().as_secs_f64());
            match write_run(&cli.out_dir, &cfg, &output) {
                Ok(files) => eprintln!("wrote {}, {}, {}", files.jsonl.display(), files.csv.display(), files.summary.display()),
                Err(e) => {
                    eprintln!("error: writing results: {e}");
                    return ExitCode::from(EXIT_FAILURE);
                }
            }
            for e in &output.errors {
                eprintln!("task error [{}]: {}", e.task, e.message);
            }
            if output.errors.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_TASK_ERRORS)
            }
        }
        Command::Report { files, write } => {
            let mut loaded = Vec::new();
            for f in &files {
                let text = match std::fs::read_to_string(f) {
                    Ok(t) => t,
                    Err(e) => {
                        eprintln!("error: {}: {e}", f.display());
                        return ExitCode::from(EXIT_FAILURE);
                    }
                };
                match load_result(&text, &f.display().to_string()) {
                    Ok(r) => loaded.push(r),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(EXIT_CONFIG);
                    }
                }
            }
            let r = report(&loaded);
            print!("{}", r.text);
            if write {
                let written = std::fs::create_dir_all(&cli.out_dir)
                    .and_then(|_| std::fs::write(cli.out_dir.join("report.txt"), &r.text))
                    .and_then(|_| std::fs::write(cli.out_dir.join("report.csv"), &r.csv));
                if let Err(e) = written {
                    eprintln!("error: writing report: {e}");
                    return ExitCode::from(EXIT_FAILURE);
                }
            }
            ExitCode::SUCCESS
        }
        Command::Selftest { module } => {
            let cases = match selftest(module.as_deref()) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let mut ok = true;
            for c in &cases {
                println!("{} {}::{} ({})", if c.passed { "PASS" } else { "FAIL" }, c.module, c.name, c.detail);
                ok &= c.passed;
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILURE)
            }
        }
    }
}
