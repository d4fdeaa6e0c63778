use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metaworld::cli::{run, verify, CliError};

#[derive(Parser)]
#[command(name = "sim", version, about = "Run and verify wavefunction/world-ensemble scenarios")]
struct Args {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, env = "METAWORLD_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its artifact directory.
    Run {
        config: PathBuf,
        /// Artifact directory (default: runs/<config file stem>).
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Re-check the invariants of an artifact directory.
    Verify { dir: PathBuf },
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(3);
        }
    }
    match args.command {
        Command::Run { config, output } => {
            let output = output.unwrap_or_else(|| {
                let stem = config.file_stem().map(|s| s.to_os_string()).unwrap_or_else(|| "run".into());
                PathBuf::from("runs").join(stem)
            });
            match run(&config, &output) {
                Ok(summary) => {
                    for line in &summary.lines {
                        println!("{line}");
                    }
                    println!("wrote {} artifacts to {}", summary.files, summary.output.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Verify { dir } => match verify(&dir) {
            Ok(report) => {
                for c in &report.checks {
                    println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                }
                if report.passed() {
                    println!("verify: all {} checks passed", report.checks.len());
                    ExitCode::SUCCESS
                } else {
                    let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
                    println!("verify: FAILED ({})", names.join(", "));
                    ExitCode::from(1)
                }
            }
            Err(e) => fail(&e),
        },
    }
}
