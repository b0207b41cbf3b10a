//! Batch command-line frontend: typecheck, run, compile, run the compiled
//! target, and drive the randomized metatheory suites.
//!
//! Exit codes: 0 success or property pass, 1 parse/type error, 2 property
//! failure or stuck evaluation, 3 internal error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use corechk::compile::compile_program;
use corechk::corec::{eval_corec, parse_corec_program, print_corec_program, CTerminal};
use corechk::machine::{eval, FaultPolicy, Terminal};
use corechk::parse::parse_program;
use corechk::print::{print_expr, print_word};
use corechk::propcheck::{run_property, GenConfig, Property, SuiteParams};
use corechk::typecheck::validate_program;

#[derive(Parser)]
#[command(name = "corechk", version, about = "Checked-C core calculus workbench")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Typecheck a program and print the main expression's type.
    Typecheck { file: PathBuf },
    /// Evaluate a program under the source semantics.
    Run(RunArgs),
    /// Compile a program to the untyped target.
    Compile {
        file: PathBuf,
        /// Output path for the compiled program.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Evaluate a compiled target program.
    Runc {
        file: PathBuf,
        #[arg(long, default_value_t = 1 << 16)]
        fuel: u64,
    },
    /// Run the randomized metatheory suites.
    Fuzz(FuzzArgs),
}

#[derive(Args)]
struct RunArgs {
    file: PathBuf,
    #[arg(long, default_value_t = 1 << 16)]
    fuel: u64,
    /// Probability that an unchecked-mode step is replaced by a recovery
    /// value.
    #[arg(long, default_value_t = 0.0)]
    crash_rate: f64,
    #[arg(long, default_value_t = 0)]
    fault_seed: u64,
    /// Print one line per evaluation step.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct FuzzArgs {
    #[arg(long, default_value_t = 100)]
    count: u64,
    #[arg(long, default_value_t = 8)]
    max_depth: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// progress | preservation | uncheckedpres | nonexposure | noncrash |
    /// simulation | all
    #[arg(long, default_value = "all")]
    check: String,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    fuel: u64,
    #[arg(long, default_value_t = 0.5)]
    crash_rate: f64,
    #[arg(long, default_value_t = 256)]
    join_budget: u64,
}

fn color_enabled() -> bool {
    std::env::var("CHKBOX_COLOR").map(|v| v != "0").unwrap_or(true)
}

fn paint(s: &str, code: &str) -> String {
    if color_enabled() {
        format!("\x1b[{code}m{s}\x1b[0m")
    } else {
        s.to_string()
    }
}

fn green(s: &str) -> String {
    paint(s, "32")
}

fn red(s: &str) -> String {
    paint(s, "31")
}

fn load(file: &PathBuf) -> Result<corechk::syntax::Program, ExitCode> {
    let text = fs::read_to_string(file).map_err(|e| {
        eprintln!("{}: {e}", file.display());
        ExitCode::from(3)
    })?;
    parse_program(&text).map_err(|e| {
        eprintln!("{}: {e}", file.display());
        ExitCode::from(1)
    })
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Typecheck { file } => {
            let prog = match load(&file) {
                Ok(p) => p,
                Err(code) => return code,
            };
            match validate_program(&prog) {
                Ok(ty) => {
                    println!("{} {}", green("ok:"), print_word(&ty));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    println!("{} {e}", red("type error:"));
                    ExitCode::from(1)
                }
            }
        }
        Cmd::Run(args) => {
            let prog = match load(&args.file) {
                Ok(p) => p,
                Err(code) => return code,
            };
            if let Err(e) = validate_program(&prog) {
                println!("{} {e}", red("type error:"));
                return ExitCode::from(1);
            }
            let policy = FaultPolicy::new(args.crash_rate, args.fault_seed);
            let out = eval(&prog, args.fuel, &policy);
            if args.trace {
                for (i, st) in out.steps.iter().enumerate() {
                    println!("{i}\t{}\t{}\t{}", st.mode, st.kind.name(), print_expr(&st.redex));
                }
            }
            println!("{}", out.result.describe());
            match out.result {
                Terminal::Stuck => ExitCode::from(2),
                _ => ExitCode::SUCCESS,
            }
        }
        Cmd::Compile { file, output } => {
            let prog = match load(&file) {
                Ok(p) => p,
                Err(code) => return code,
            };
            match compile_program(&prog) {
                Ok(target) => {
                    if let Err(e) = fs::write(&output, print_corec_program(&target)) {
                        eprintln!("{}: {e}", output.display());
                        return ExitCode::from(3);
                    }
                    println!("compiled to {}", output.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    println!("{} {e}", red("compile error:"));
                    ExitCode::from(1)
                }
            }
        }
        Cmd::Runc { file, fuel } => {
            let text = match fs::read_to_string(&file) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("{}: {e}", file.display());
                    return ExitCode::from(3);
                }
            };
            let prog = match parse_corec_program(&text) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("{}: {e}", file.display());
                    return ExitCode::from(1);
                }
            };
            let out = eval_corec(&prog, fuel);
            println!("{}", out.result.describe());
            match out.result {
                CTerminal::Stuck => ExitCode::from(2),
                _ => ExitCode::SUCCESS,
            }
        }
        Cmd::Fuzz(args) => {
            let Some(props) = Property::parse(&args.check) else {
                eprintln!("unknown check '{}'", args.check);
                return ExitCode::from(3);
            };
            let cfg = GenConfig {
                seed: args.seed,
                max_depth: args.max_depth,
                count: args.count,
                fault_rate: args.crash_rate,
                ..GenConfig::default()
            };
            let params = SuiteParams { fuel: args.fuel, join_budget: args.join_budget };
            let mut reports = Vec::new();
            let mut failed = false;
            for prop in props {
                let report = run_property(prop, &cfg, &params);
                let status = if report.passed() {
                    green("pass")
                } else {
                    failed = true;
                    red("FAIL")
                };
                println!(
                    "{:<24} {:>6} cases  {:>3} failures  {:>3} inconclusive  {:>6} ms  {status}",
                    report.property,
                    report.cases,
                    report.failures.len(),
                    report.inconclusive.len(),
                    report.wall_ms,
                );
                reports.push(report);
            }
            if let Some(path) = args.report {
                match serde_json::to_string_pretty(&reports) {
                    Ok(json) => {
                        if let Err(e) = fs::write(&path, json) {
                            eprintln!("{}: {e}", path.display());
                            return ExitCode::from(3);
                        }
                    }
                    Err(e) => {
                        eprintln!("report: {e}");
                        return ExitCode::from(3);
                    }
                }
            }
            if failed {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
