use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ncft::cli::oracle::{oracle_check, violation, OracleConfig, OracleMode};
use ncft::cli::sweep::{sweep, SweepConfig};
use ncft::cli::{parse_scenario, run_scenario};
use ncft::metrics::{write_csv, Variant, CSV_HEADER};

const USAGE_ERROR: u8 = 2;
const VIOLATION: u8 = 1;

#[derive(Parser)]
#[command(
    name = "ncft",
    version,
    about = "Fault-aware non-collective communicator simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exhaustive,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file and print its metrics row.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Write the event trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a grid of sizes, failure fractions and variants.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        fail_fracs: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        reps: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "adaptive", value_parser = parse_variant)]
        variants: Vec<Variant>,
        /// World size around each group; defaults to the group size.
        #[arg(long)]
        world: Option<u32>,
        /// CSV destination, `-` for standard output.
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Check agreement and accuracy over many fault plans.
    Oracle {
        #[arg(long)]
        max_size: u32,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, default_value_t = 1000)]
        trials: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "adaptive", value_parser = parse_variant)]
        variant: Variant,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(USAGE_ERROR)
}

fn open_out(path: &PathBuf) -> io::Result<Box<dyn Write>> {
    if path.as_os_str() == "-" {
        Ok(Box::new(io::stdout().lock()))
    } else {
        Ok(Box::new(BufWriter::new(File::create(path)?)))
    }
}

fn run(scenario: PathBuf, trace: Option<PathBuf>) -> ExitCode {
    let text = match std::fs::read_to_string(&scenario) {
        Ok(t) => t,
        Err(e) => return usage(format!("{}: {e}", scenario.display())),
    };
    let sc = match parse_scenario(&text) {
        Ok(sc) => sc,
        Err(e) => return usage(format!("{}: {e}", scenario.display())),
    };
    let (report, row) = match run_scenario(&sc) {
        Ok(r) => r,
        Err(e) => return usage(e),
    };
    if let Some(path) = trace {
        if let Err(e) = File::create(&path).and_then(|f| report.trace.write_to(BufWriter::new(f))) {
            return usage(format!("{}: {e}", path.display()));
        }
    }
    println!("{CSV_HEADER}");
    println!("{}", row.to_csv());
    match violation(&row) {
        Some(reason) if sc.variant.is_guarded() => {
            eprintln!("violation: {reason}");
            ExitCode::from(VIOLATION)
        }
        _ => ExitCode::SUCCESS,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, trace } => run(scenario, trace),
        Command::Sweep {
            sizes,
            fail_fracs,
            reps,
            seed,
            variants,
            world,
            out,
        } => {
            let cfg = SweepConfig {
                sizes,
                fail_fracs,
                reps,
                seed,
                variants,
                world,
            };
            let rows = match sweep(&cfg) {
                Ok(rows) => rows,
                Err(e) => return usage(e),
            };
            let written = open_out(&out).and_then(|mut w| {
                write_csv(&mut w, &rows)?;
                w.flush()
            });
            match written {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => usage(format!("{}: {e}", out.display())),
            }
        }
        Command::Oracle {
            max_size,
            mode,
            trials,
            seed,
            variant,
        } => {
            let cfg = OracleConfig {
                max_size,
                mode: match mode {
                    Mode::Exhaustive => OracleMode::Exhaustive,
                    Mode::Random => OracleMode::Random,
                },
                trials,
                seed,
                variant,
            };
            let summary = match oracle_check(&cfg) {
                Ok(s) => s,
                Err(e) => return usage(e),
            };
            for cx in &summary.counterexamples {
                println!("# counterexample: {}", cx.reason);
                print!("{}", cx.scenario.to_text());
                println!();
            }
            println!(
                "{} scenarios, {} violations: {}",
                summary.scenarios,
                summary.violations,
                if summary.passed() { "pass" } else { "fail" }
            );
            if summary.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(VIOLATION)
            }
        }
    }
}
