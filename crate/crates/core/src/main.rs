use clap::{Parser, Subcommand};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use friedrichs::config::parse_config;
use friedrichs::export::{emit_plot_data, write_plot_file, PlotKind};
use friedrichs::run::{run_scenario, RunReport, Status, OUTPUT_DIR_ENV, REPORT_FILE};

/// Scattering checks for discretized Friedrichs–Faddeev models.
#[derive(Parser)]
#[command(name = "friedrichs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the suites of a scenario file and write the report and CSV files.
    Run {
        config: PathBuf,
        /// Print the full JSON report to stdout.
        #[arg(long)]
        json: bool,
    },
    /// Check a scenario file without running it.
    Validate { config: PathBuf },
    /// Write CSV plot data from a report.
    Export {
        report: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Output file; stdout when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> friedrichs::Result<ExitCode> {
    match cmd {
        Command::Validate { config } => {
            let cfg = parse_config(&config)?;
            let suites: Vec<&str> = cfg.checks.iter().map(|s| s.name()).collect();
            println!(
                "{}: ok ({} kernel, sizes {:?}, suites {})",
                config.display(),
                cfg.kernel.family(),
                cfg.sizes,
                suites.join(", ")
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, json } => {
            let mut cfg = parse_config(&config)?;
            if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
                cfg.output_dir = PathBuf::from(dir);
            }
            let report = run_scenario(&cfg)?;
            if json {
                serde_json::to_writer_pretty(std::io::stdout().lock(), &report)?;
                println!();
            } else {
                print_summary(&report);
                println!("report: {}", cfg.output_dir.join(REPORT_FILE).display());
            }
            Ok(if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Export { report, kind, output } => {
            let rep = RunReport::read_json(&report)?;
            match output {
                Some(path) => write_plot_file(&rep, kind, &path)?,
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    emit_plot_data(&rep, kind, &mut lock)?;
                    lock.flush()?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn print_summary(report: &RunReport) {
    for (name, check) in &report.checks {
        let tag = match check.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        match &check.reason {
            Some(r) => println!("{tag} {name}: {r}"),
            None => println!("{tag} {name}"),
        }
        for c in &check.criteria {
            let value = c.value.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".into());
            let limit = c.limit.map(|v| format!("{v:.1e}")).unwrap_or_default();
            let rel = match c.relation {
                Some(friedrichs::run::Relation::AtMost) => "<=",
                Some(friedrichs::run::Relation::AtLeast) => ">=",
                Some(friedrichs::run::Relation::Decreasing) => "decreasing",
                None => "",
            };
            let note = match (&c.status, &c.detail) {
                (Status::Pass, _) | (_, None) => String::new(),
                (Status::Skipped, Some(d)) => format!("  (skipped: {d})"),
                (Status::Fail, Some(d)) => format!("  ({d})"),
            };
            println!("    {:<36} {value:>10} {rel} {limit}{note}", c.name);
        }
    }
}
