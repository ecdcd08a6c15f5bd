//! `prpd`: build generators, measure their error, certify samplers and run
//! the powering demo. Records go to stdout as JSON lines; a table and the
//! wall-clock time go to stderr.
//!
//! Exit status: 0 when every measurement met its bound, 1 when one did not,
//! 2 on an error.

mod commands;
mod report;

use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use commands::{BuildArgs, CertifyArgs, LedgerArgs, SzArgs, VerifyArgs};

#[derive(Parser)]
#[command(name = "prpd", version)]
struct Cli {
    /// Log2 of the largest enumeration allowed.
    #[arg(long, global = true, env = "PRPD_ENUM_LIMIT_LOG2")]
    enum_limit_log2: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a generator and print its seed ledger.
    BuildPrpd(BuildArgs),
    /// Compare the robust estimate against exact averages on sample programs.
    VerifyError(VerifyArgs),
    /// Brute-force the sampler inequality for one backend.
    CertifySampler(CertifyArgs),
    /// Snap-and-power a batch of substochastic matrices.
    SzDemo(SzArgs),
    /// Check every ledger quantity against its closed-form bound.
    LedgerCheck(LedgerArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(limit) = cli.enum_limit_log2 {
        std::env::set_var(prpd_core::capacity::LIMIT_VAR, limit.to_string());
    }
    let start = Instant::now();
    let report = match &cli.command {
        Command::BuildPrpd(a) => commands::build_prpd(a),
        Command::VerifyError(a) => commands::verify_error(a),
        Command::CertifySampler(a) => commands::certify_sampler(a),
        Command::SzDemo(a) => commands::sz_demo(a),
        Command::LedgerCheck(a) => commands::ledger_check_cmd(a),
    };
    let elapsed = start.elapsed();

    let mut out = std::io::stdout().lock();
    for r in &report.records {
        writeln!(out, "{r}").expect("stdout is writable");
    }
    let mut err = std::io::stderr().lock();
    for line in &report.table {
        let _ = writeln!(err, "{line}");
    }
    let _ = writeln!(err, "runtime {:.3}s", elapsed.as_secs_f64());

    let failed = report.records.iter().any(|r| r["record"] == "error");
    if failed {
        ExitCode::from(2)
    } else if report.ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
