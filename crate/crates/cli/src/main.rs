mod args;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use homog_core::chain::run_identity_suite;
use homog_core::sweep::{run_sweep, summarize, sweep_to_files, write_rows, write_summary};
use homog_core::{Error, Method, Result};

use args::{ChainArgs, Cli, Command, RunArgs};

const DECOMPOSITION_TOL: f64 = 1e-10;
const RESOLVENT_TOL: f64 = 1e-12;
const DISCRETE_TOL: f64 = 1e-10;

fn exit_code(err: &Error) -> u8 {
    if err.is_non_convergence() {
        3
    } else if matches!(err, Error::Parameter(_) | Error::Law { .. }) {
        2
    } else {
        1
    }
}

fn run_estimator(args: &RunArgs, method: Method) -> Result<()> {
    let cfg = args.to_config(method)?;
    let stdout = std::io::stdout();
    match &args.out {
        Some(path) => {
            let (rows, summary) = sweep_to_files(&cfg, path)?;
            eprintln!("wrote {} rows to {}", rows.len(), path.display());
            write_summary(stdout.lock(), &summary)?;
        }
        None => {
            let rows = run_sweep(&cfg)?;
            write_rows(stdout.lock(), &rows)?;
            if rows.len() > 1 {
                let summary = summarize(method, &rows, cfg.ground_truth());
                write_summary(std::io::stderr().lock(), &summary)?;
            }
        }
    }
    Ok(())
}

fn chain_verify(args: &ChainArgs) -> Result<bool> {
    if args.states < 2 || args.trials == 0 {
        return Err(Error::param(
            "--states must be at least 2 and --trials at least 1",
        ));
    }
    let r = run_identity_suite(args.states, args.trials, &args.schedule.kinds(), args.seed)?;
    let checks = [
        (
            "variance_decomposition",
            r.max_decomposition_residual,
            DECOMPOSITION_TOL,
        ),
        ("resolvent_formula", r.max_resolvent_residual, RESOLVENT_TOL),
        ("discrete_sigma2", r.max_discrete_gap, DISCRETE_TOL),
    ];
    let mut out = std::io::stdout().lock();
    writeln!(out, "check,max_residual,tolerance,status")?;
    let mut ok = true;
    for (name, value, tol) in checks {
        let pass = value <= tol;
        ok &= pass;
        writeln!(
            out,
            "{name},{value:.3e},{tol:.0e},{}",
            if pass { "PASS" } else { "FAIL" }
        )?;
    }
    writeln!(
        out,
        "# trials={} min_reversible_term={:.3e}",
        r.trials, r.min_reversible_term
    )?;
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Hier(a) => run_estimator(a, Method::Hier).map(|_| true),
        Command::Classical(a) => run_estimator(a, Method::Classical).map(|_| true),
        Command::Parabolic(a) => run_estimator(a, Method::Parabolic).map(|_| true),
        Command::Mc(a) => run_estimator(a, Method::Mc).map(|_| true),
        Command::Sweep(s) => run_estimator(&s.run, s.method.into()).map(|_| true),
        Command::ChainVerify(c) => chain_verify(c),
    }
}

fn main() -> ExitCode {
    let argv = match args::expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
