//! Plain-text artifacts: CSV reports, the JSON run summary, and profile
//! grid files.
//!
//! Every number is written with 17 significant digits (`{:.16e}`), which
//! round-trips `f64` exactly; rerunning a command with the same inputs must
//! produce byte-identical files, so nothing here depends on locale, hash
//! order, or wall clock.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::equilibrium::{FixedPointSolution, SeparableSolution};
use crate::fluctuations::CltQuantities;
use crate::profiles::VarianceProfile;
use crate::simulator::{EntryLaw, NormalityReport, TrialSet};
use crate::{Error, Result};

/// Full-precision decimal form of `x`; parsing it back recovers the exact
/// bits.
pub fn fmt_full(x: f64) -> String {
    format!("{x:.16e}")
}

fn row<W: Write>(w: &mut W, field: &str, index: Option<usize>, value: &str) -> Result<()> {
    match index {
        Some(i) => writeln!(w, "{field},{i},{value}")?,
        None => writeln!(w, "{field},,{value}")?,
    }
    Ok(())
}

/// Long-format CSV (`field,index,value`) with the solver outcome and the
/// full `t`, `ttilde` vectors; separable runs append their scalar system.
pub fn write_equilibrium_report<W: Write>(
    w: &mut W,
    sol: &FixedPointSolution,
    sep: Option<&SeparableSolution>,
) -> Result<()> {
    writeln!(w, "field,index,value")?;
    row(w, "rho", None, &fmt_full(sol.rho))?;
    row(w, "n", None, &sol.t.len().to_string())?;
    row(w, "k", None, &sol.ttilde.len().to_string())?;
    row(w, "iterations", None, &sol.iterations.to_string())?;
    row(w, "residual", None, &fmt_full(sol.residual))?;
    row(w, "tol", None, &fmt_full(sol.tol))?;
    row(w, "converged", None, if sol.is_converged() { "1" } else { "0" })?;
    for (i, &t) in sol.t.iter().enumerate() {
        row(w, "t", Some(i), &fmt_full(t))?;
    }
    for (i, &t) in sol.ttilde.iter().enumerate() {
        row(w, "ttilde", Some(i), &fmt_full(t))?;
    }
    if let Some(s) = sep {
        row(w, "delta", None, &fmt_full(s.delta))?;
        row(w, "deltatilde", None, &fmt_full(s.deltatilde))?;
        row(w, "gamma", None, &fmt_full(s.gamma))?;
        row(w, "gammatilde", None, &fmt_full(s.gammatilde))?;
        row(w, "separable_iterations", None, &s.iterations.to_string())?;
        row(w, "separable_residual", None, &fmt_full(s.residual))?;
    }
    Ok(())
}

/// Variance report: kappa, theta2 and its two summands, the spectral radius
/// diagnostic, and the separable-route scalars when available.
pub fn write_variance_report<W: Write>(
    w: &mut W,
    clt: &CltQuantities,
    separable: Option<(&SeparableSolution, f64)>,
) -> Result<()> {
    writeln!(w, "field,value")?;
    writeln!(w, "kappa,{}", fmt_full(clt.kappa))?;
    writeln!(w, "theta2,{}", fmt_full(clt.theta2))?;
    writeln!(w, "term_fourth,{}", fmt_full(clt.term_fourth))?;
    writeln!(w, "term_interference,{}", fmt_full(clt.term_interference))?;
    writeln!(w, "spectral_radius,{}", fmt_full(clt.spectral_radius))?;
    if let Some((s, omega2)) = separable {
        writeln!(w, "gamma,{}", fmt_full(s.gamma))?;
        writeln!(w, "gammatilde,{}", fmt_full(s.gammatilde))?;
        writeln!(w, "omega2,{}", fmt_full(omega2))?;
    }
    Ok(())
}

/// One `beta` per row under a header line.
pub fn write_trials_csv<W: Write>(w: &mut W, trials: &TrialSet) -> Result<()> {
    writeln!(w, "beta")?;
    for &b in &trials.betas {
        writeln!(w, "{}", fmt_full(b))?;
    }
    Ok(())
}

/// Histogram bins with the standard-normal overlay density at each center.
pub fn write_histogram_csv<W: Write>(w: &mut W, report: &NormalityReport) -> Result<()> {
    writeln!(w, "bin_left,bin_right,count,center,normal_density")?;
    for (bin, &(center, density)) in report.histogram.iter().zip(&report.normal_overlay) {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_full(bin.left),
            fmt_full(bin.right),
            bin.count,
            fmt_full(center),
            fmt_full(density)
        )?;
    }
    Ok(())
}

/// Everything a simulation run wants to state about itself in one place.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSummary {
    pub receive_dim: usize,
    pub interferers: usize,
    pub rho: f64,
    pub law: EntryLaw,
    pub trials: usize,
    pub seed: u64,
    pub fingerprint: String,
    pub stream_rule: String,
    pub beta_bar: f64,
    pub theta2: f64,
    pub mean: f64,
    /// `None` for single-trial runs, where a sample variance is undefined.
    pub variance: Option<f64>,
    pub k_variance: Option<f64>,
    pub deviation_second_moment: Option<f64>,
    pub k_deviation_second_moment: Option<f64>,
    /// `None` when the campaign was too small for the normality test.
    pub ks_statistic: Option<f64>,
    pub ks_pvalue: Option<f64>,
}

fn json_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), fmt_full)
}

/// JSON summary of a simulation run (stable key order).
pub fn write_summary<W: Write>(w: &mut W, s: &SimulationSummary) -> Result<()> {
    writeln!(w, "{{")?;
    writeln!(w, "  \"n\": {},", s.receive_dim)?;
    writeln!(w, "  \"k\": {},", s.interferers)?;
    writeln!(w, "  \"rho\": {},", fmt_full(s.rho))?;
    writeln!(w, "  \"law\": \"{}\",", s.law)?;
    writeln!(w, "  \"trials\": {},", s.trials)?;
    writeln!(w, "  \"seed\": {},", s.seed)?;
    writeln!(w, "  \"fingerprint\": \"{}\",", s.fingerprint)?;
    writeln!(w, "  \"stream_rule\": \"{}\",", s.stream_rule)?;
    writeln!(w, "  \"beta_bar\": {},", fmt_full(s.beta_bar))?;
    writeln!(w, "  \"theta2\": {},", fmt_full(s.theta2))?;
    writeln!(w, "  \"mean\": {},", fmt_full(s.mean))?;
    writeln!(w, "  \"variance\": {},", json_opt(s.variance))?;
    writeln!(w, "  \"k_variance\": {},", json_opt(s.k_variance))?;
    writeln!(
        w,
        "  \"deviation_second_moment\": {},",
        json_opt(s.deviation_second_moment)
    )?;
    writeln!(
        w,
        "  \"k_deviation_second_moment\": {},",
        json_opt(s.k_deviation_second_moment)
    )?;
    writeln!(w, "  \"ks_statistic\": {},", json_opt(s.ks_statistic))?;
    writeln!(w, "  \"ks_pvalue\": {}", json_opt(s.ks_pvalue))?;
    writeln!(w, "}}")?;
    Ok(())
}

/// One row of the second-moment sweep (the data behind the K-convergence
/// figure).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub n: usize,
    pub beta_bar: f64,
    pub theta2_over_k: f64,
    pub deviation_second_moment: f64,
    /// `|K dev2 - theta2| / theta2`.
    pub relative_gap: f64,
}

pub fn write_sweep_csv<W: Write>(w: &mut W, rows: &[SweepRow]) -> Result<()> {
    writeln!(
        w,
        "k,n,beta_bar,theta2_over_k,deviation_second_moment,relative_gap"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.k,
            r.n,
            fmt_full(r.beta_bar),
            fmt_full(r.theta2_over_k),
            fmt_full(r.deviation_second_moment),
            fmt_full(r.relative_gap)
        )?;
    }
    Ok(())
}

/// Writes the raw grid, one row per receive dimension, `K + 1` columns.
pub fn write_profile_csv<W: Write>(w: &mut W, profile: &VarianceProfile) -> Result<()> {
    let grid = profile.sigma2();
    for n in 0..grid.nrows() {
        let line: Vec<String> = (0..grid.ncols()).map(|k| fmt_full(grid[(n, k)])).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Reads a grid written by [`write_profile_csv`] (or by hand): `N` lines of
/// `K + 1` comma-separated variances. Diagnostics name the line and field.
pub fn read_profile_csv<R: BufRead>(r: R) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut values = Vec::new();
        for (field_no, raw) in line.split(',').enumerate() {
            let v: f64 = raw.trim().parse().map_err(|_| {
                Error::InvalidInput(format!(
                    "profile CSV line {}, field {}: '{}' is not a number",
                    line_no + 1,
                    field_no + 1,
                    raw.trim()
                ))
            })?;
            values.push(v);
        }
        if let Some(first) = rows.first() {
            if values.len() != first.len() {
                return Err(Error::InvalidInput(format!(
                    "profile CSV line {} has {} fields, expected {}",
                    line_no + 1,
                    values.len(),
                    first.len()
                )));
            }
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("profile CSV is empty".into()));
    }
    let n = rows.len();
    let cols = rows[0].len();
    Ok(DMatrix::from_fn(n, cols, |i, j| rows[i][j]))
}
