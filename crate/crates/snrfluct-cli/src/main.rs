//! `snrfluct`: config-driven driver for the equilibrium / fluctuation /
//! simulation pipeline.
//!
//! Commands: `solve`, `variance`, `simulate`, `report`. Each is a pure
//! function of (config file, seed): rerunning writes byte-identical
//! artifacts. Exit codes are stable for scripting: 0 success, 2 config
//! error, 3 solver non-convergence, 4 variance ill-posedness, 5 simulation
//! or artifact failure.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Scenario;
use snrfluct::equilibrium::{
    deterministic_snr, solve_general, solve_separable, FixedPointSolution, SeparableSolution,
};
use snrfluct::fluctuations::{fourth_moment, omega_squared, theta_squared, CltQuantities};
use snrfluct::report::{
    fmt_full, write_equilibrium_report, write_histogram_csv, write_summary, write_sweep_csv,
    write_trials_csv, write_variance_report, SimulationSummary, SweepRow,
};
use snrfluct::simulator::{empirical_moments, ks_normality, run_trials, standardize};
use snrfluct::{Error, Result, VarianceProfile};

/// Environment variable naming the default output directory.
const OUT_DIR_VAR: &str = "SNRFLUCT_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "snrfluct",
    version,
    about = "Deterministic equivalents and Gaussian fluctuation limits for \
             LMMSE output SNR under variance-profile channels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the equilibrium fixed point and write equilibrium.csv
    Solve(CommonArgs),
    /// Compute the fluctuation variance and write variance.csv
    Variance(CommonArgs),
    /// Run a Monte Carlo campaign; write trials.csv, histogram.csv, summary.json
    Simulate(CommonArgs),
    /// Sweep interferer counts and write the second-moment table sweep.csv
    Report(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario config file (TOML)
    config: PathBuf,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $SNRFLUCT_OUT_DIR, else the working directory)
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, run): (&CommonArgs, fn(&Scenario, &Path) -> Result<()>) = match &cli.command {
        Command::Solve(a) => (a, cmd_solve),
        Command::Variance(a) => (a, cmd_variance),
        Command::Simulate(a) => (a, cmd_simulate),
        Command::Report(a) => (a, cmd_report),
    };
    match drive(args, run) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::InvalidInput(_) => 2u8,
                Error::NoConvergence { .. } => 3,
                Error::IllPosed(_) => 4,
                Error::Io(_) => 5,
            })
        }
    }
}

fn drive(args: &CommonArgs, run: fn(&Scenario, &Path) -> Result<()>) -> Result<()> {
    let scenario = Scenario::load(&args.config, args.seed)?;
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    run(&scenario, &out_dir)
}

fn writer(out_dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(out_dir.join(name))?))
}

/// Solve stage shared by every command.
fn solve_scenario(
    sc: &Scenario,
    n: usize,
    k: usize,
) -> Result<(VarianceProfile, FixedPointSolution, Option<SeparableSolution>, f64)> {
    let profile = sc.build_profile(n, k, sc.seed)?;
    let sol = solve_general(&profile, sc.rho, &sc.solver)?;
    let sep = if profile.separable_factors().is_some() {
        Some(solve_separable(&profile, sc.rho, &sc.solver)?)
    } else {
        None
    };
    let beta_bar = deterministic_snr(&profile, &sol)?;
    Ok((profile, sol, sep, beta_bar))
}

fn cmd_solve(sc: &Scenario, out_dir: &Path) -> Result<()> {
    let (_, sol, sep, beta_bar) = solve_scenario(sc, sc.n, sc.k)?;
    let mut w = writer(out_dir, "equilibrium.csv")?;
    write_equilibrium_report(&mut w, &sol, sep.as_ref())?;
    w.flush()?;
    println!(
        "solve n={} k={} rho={} iterations={} residual={} beta_bar={}",
        sc.n,
        sc.k,
        fmt_full(sc.rho),
        sol.iterations,
        fmt_full(sol.residual),
        fmt_full(beta_bar)
    );
    Ok(())
}

fn variance_stage(
    sc: &Scenario,
    profile: &VarianceProfile,
    sol: &FixedPointSolution,
    sep: Option<&SeparableSolution>,
) -> Result<(CltQuantities, Option<f64>)> {
    let kappa = fourth_moment(sc.law);
    let clt = theta_squared(profile, sol, kappa)?;
    let omega2 = match sep {
        Some(s) => Some(omega_squared(s, kappa)?),
        None => None,
    };
    Ok((clt, omega2))
}

fn cmd_variance(sc: &Scenario, out_dir: &Path) -> Result<()> {
    let (profile, sol, sep, _) = solve_scenario(sc, sc.n, sc.k)?;
    let (clt, omega2) = variance_stage(sc, &profile, &sol, sep.as_ref())?;
    let mut w = writer(out_dir, "variance.csv")?;
    write_variance_report(&mut w, &clt, sep.as_ref().map(|s| (s, omega2.unwrap())))?;
    w.flush()?;
    println!(
        "variance n={} k={} law={} kappa={} theta2={} spectral_radius={}",
        sc.n,
        sc.k,
        sc.law,
        fmt_full(clt.kappa),
        fmt_full(clt.theta2),
        fmt_full(clt.spectral_radius)
    );
    Ok(())
}

fn cmd_simulate(sc: &Scenario, out_dir: &Path) -> Result<()> {
    let (profile, sol, sep, beta_bar) = solve_scenario(sc, sc.n, sc.k)?;
    let (clt, _) = variance_stage(sc, &profile, &sol, sep.as_ref())?;
    let set = run_trials(&profile, sc.rho, sc.law, sc.trials, sc.seed, sc.workers)?;
    let moments = if sc.trials >= 2 {
        Some(empirical_moments(&set, beta_bar)?)
    } else {
        None
    };
    let mean = moments.as_ref().map_or_else(
        || set.betas.iter().sum::<f64>() / sc.trials as f64,
        |m| m.mean,
    );
    // The normality test needs enough samples and a nondegenerate scale.
    let normality = if sc.trials >= 100 && clt.theta2 > 0.0 {
        let z = standardize(&set, beta_bar, clt.theta2.sqrt())?;
        Some(ks_normality(&z)?)
    } else {
        None
    };

    let mut w = writer(out_dir, "trials.csv")?;
    write_trials_csv(&mut w, &set)?;
    w.flush()?;
    if let Some(rep) = &normality {
        let mut w = writer(out_dir, "histogram.csv")?;
        write_histogram_csv(&mut w, rep)?;
        w.flush()?;
    }
    let kf = sc.k as f64;
    let summary = SimulationSummary {
        receive_dim: sc.n,
        interferers: sc.k,
        rho: sc.rho,
        law: sc.law,
        trials: sc.trials,
        seed: sc.seed,
        fingerprint: set.fingerprint.clone(),
        stream_rule: set.stream_rule.to_string(),
        beta_bar,
        theta2: clt.theta2,
        mean,
        variance: moments.as_ref().map(|m| m.variance),
        k_variance: moments.as_ref().map(|m| kf * m.variance),
        deviation_second_moment: moments.as_ref().map(|m| m.deviation_second_moment),
        k_deviation_second_moment: moments
            .as_ref()
            .map(|m| kf * m.deviation_second_moment),
        ks_statistic: normality.as_ref().map(|r| r.ks_statistic),
        ks_pvalue: normality.as_ref().map(|r| r.ks_pvalue),
    };
    let mut w = writer(out_dir, "summary.json")?;
    write_summary(&mut w, &summary)?;
    w.flush()?;

    let fmt_opt = |v: Option<f64>| v.map_or_else(|| "skipped".to_string(), fmt_full);
    println!(
        "simulate n={} k={} law={} trials={} mean={} k_var={} theta2={} ks_p={}",
        sc.n,
        sc.k,
        sc.law,
        sc.trials,
        fmt_full(mean),
        fmt_opt(summary.k_variance),
        fmt_full(clt.theta2),
        fmt_opt(summary.ks_pvalue)
    );
    Ok(())
}

fn cmd_report(sc: &Scenario, out_dir: &Path) -> Result<()> {
    let sweep = sc
        .sweep
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("report needs a [report] sweep list".into()))?;
    if sweep.is_empty() {
        return Err(Error::InvalidInput("report sweep list is empty".into()));
    }
    if sc.trials < 2 {
        return Err(Error::InvalidInput(
            "report needs at least 2 trials per sweep point".into(),
        ));
    }
    let mut rows = Vec::with_capacity(sweep.len());
    for &k in sweep {
        // Receive dimension scales with K so the sweep holds the load fixed.
        let n = (((k * sc.n) as f64 / sc.k as f64).round() as usize).max(1);
        let profile = sc.build_profile(n, k, sc.seed)?;
        let sol = solve_general(&profile, sc.rho, &sc.solver)?;
        let beta_bar = deterministic_snr(&profile, &sol)?;
        let clt = theta_squared(&profile, &sol, fourth_moment(sc.law))?;
        let set = run_trials(&profile, sc.rho, sc.law, sc.trials, sc.seed, sc.workers)?;
        let m = empirical_moments(&set, beta_bar)?;
        let kf = k as f64;
        let relative_gap = (kf * m.deviation_second_moment - clt.theta2).abs() / clt.theta2;
        let row = SweepRow {
            k,
            n,
            beta_bar,
            theta2_over_k: clt.theta2 / kf,
            deviation_second_moment: m.deviation_second_moment,
            relative_gap,
        };
        println!(
            "report k={} n={} beta_bar={} theta2_over_k={} dev2={} relative_gap={}",
            row.k,
            row.n,
            fmt_full(row.beta_bar),
            fmt_full(row.theta2_over_k),
            fmt_full(row.deviation_second_moment),
            fmt_full(row.relative_gap)
        );
        rows.push(row);
    }
    let mut w = writer(out_dir, "sweep.csv")?;
    write_sweep_csv(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}
