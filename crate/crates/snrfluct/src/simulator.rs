//! Direct Monte Carlo simulation of the SNR quadratic form.
//!
//! A trial draws the `N x (K+1)` entry matrix `W`, scales it by the variance
//! profile into `Sigma = (1/sqrt(K)) [sigma_nk W_nk]`, splits off the user
//! column `y` from the interference block `Y`, and evaluates
//!
//! ```text
//! beta = y^* (Y Y^* + rho I)^{-1} y
//! ```
//!
//! through a positive-definite factorization (never an explicit inverse).
//!
//! Reproducibility contract: trial `r` draws from `ChaCha8` seeded with the
//! campaign seed on stream `r`, so any worker count and any scheduling order
//! produce bit-identical trial sets. Channel realizations (see
//! [`crate::profiles::sample_rayleigh_taps`]) live on stream `u64::MAX` of
//! the same seed, far out of reach of any realistic trial index.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::profiles::VarianceProfile;
use crate::{Error, Result};

/// Entry distribution of the random matrix; both laws are circular with unit
/// variance, differing only in their fourth moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryLaw {
    /// Circular complex Gaussian: real and imaginary parts i.i.d.
    /// `N(0, 1/2)`.
    ComplexGaussian,
    /// Uniform on `{(+-1 +- i)/sqrt(2)}`, unit modulus.
    Qpsk,
}

impl EntryLaw {
    pub fn tag(&self) -> &'static str {
        match self {
            EntryLaw::ComplexGaussian => "complex-gaussian",
            EntryLaw::Qpsk => "qpsk",
        }
    }
}

impl std::fmt::Display for EntryLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for EntryLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complex-gaussian" => Ok(EntryLaw::ComplexGaussian),
            "qpsk" => Ok(EntryLaw::Qpsk),
            other => Err(Error::InvalidInput(format!(
                "unknown entry law '{other}', expected 'complex-gaussian' or 'qpsk'"
            ))),
        }
    }
}

/// How per-trial RNG streams are derived; recorded in every trial set.
pub const STREAM_RULE: &str =
    "chacha8 seed_from_u64(seed); trial r on stream r, column-major entries; \
     channel draws on stream u64::MAX";

/// One Monte Carlo campaign: the per-trial SNR values plus everything
/// needed to reproduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    pub betas: Vec<f64>,
    pub receive_dim: usize,
    pub interferers: usize,
    pub rho: f64,
    pub law: EntryLaw,
    pub seed: u64,
    /// Hash of (profile, rho, law, seed); betas are a pure function of it
    /// plus the trial count.
    pub fingerprint: String,
    pub stream_rule: &'static str,
}

impl TrialSet {
    pub fn trial_count(&self) -> usize {
        self.betas.len()
    }
}

/// Empirical summary of a trial set against a supplied deterministic SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// `(1/R) sum_r (beta_r - beta_bar)^2`.
    pub deviation_second_moment: f64,
}

/// One histogram bin over `[left, right)` (the last bin is closed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Normality check of a standardized sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalityReport {
    pub mean: f64,
    pub variance: f64,
    /// Two-sided one-sample Kolmogorov-Smirnov distance to the standard
    /// normal CDF.
    pub ks_statistic: f64,
    /// Asymptotic p-value of `sqrt(R) * ks_statistic`.
    pub ks_pvalue: f64,
    pub histogram: Vec<HistogramBin>,
    /// Standard-normal density at each bin center, for overlay plots.
    pub normal_overlay: Vec<(f64, f64)>,
}

/// Samples an `rows x cols` entry matrix from `law`, consuming `rng` in
/// column-major order.
pub fn sample_entries<R: Rng + ?Sized>(
    law: EntryLaw,
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> DMatrix<Complex64> {
    const AMP: f64 = std::f64::consts::FRAC_1_SQRT_2;
    DMatrix::from_fn(rows, cols, |_, _| match law {
        EntryLaw::ComplexGaussian => {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * AMP, im * AMP)
        }
        EntryLaw::Qpsk => {
            let bits: u8 = rng.random();
            let re = if bits & 1 == 0 { AMP } else { -AMP };
            let im = if bits & 2 == 0 { AMP } else { -AMP };
            Complex64::new(re, im)
        }
    })
}

/// Shared scaling step: both `assemble_sigma` and the trial loop go through
/// this single function so their outputs are bit-identical.
fn scale_split(
    amplitude: &DMatrix<f64>,
    w: &DMatrix<Complex64>,
    scale: f64,
) -> (DVector<Complex64>, DMatrix<Complex64>) {
    let n = amplitude.nrows();
    let k = amplitude.ncols() - 1;
    let y = DVector::from_fn(n, |i, _| w[(i, 0)] * (amplitude[(i, 0)] * scale));
    let big_y = DMatrix::from_fn(n, k, |i, j| w[(i, j + 1)] * (amplitude[(i, j + 1)] * scale));
    (y, big_y)
}

/// Scales an entry matrix by the profile and splits the user column from
/// the interference block: `Sigma_nk = sigma_nk W_nk / sqrt(K)`.
pub fn assemble_sigma(
    profile: &VarianceProfile,
    w: &DMatrix<Complex64>,
) -> Result<(DVector<Complex64>, DMatrix<Complex64>)> {
    let n = profile.receive_dim();
    let k = profile.interferers();
    if k == 0 {
        return Err(Error::InvalidInput(
            "assembling the interference block needs at least one interferer".into(),
        ));
    }
    if w.nrows() != n || w.ncols() != k + 1 {
        return Err(Error::InvalidInput(format!(
            "entry matrix is {}x{}, profile expects {n}x{}",
            w.nrows(),
            w.ncols(),
            k + 1
        )));
    }
    let amplitude = profile.sigma2().map(f64::sqrt);
    Ok(scale_split(&amplitude, w, (k as f64).sqrt().recip()))
}

/// Evaluates `beta = y^* (Y Y^* + rho I)^{-1} y` by a Cholesky solve.
///
/// The factorization cannot fail for `rho > 0` unless the inputs contain
/// non-finite values, and that is exactly how a failure is reported.
pub fn snr_quadratic_form(
    y: &DVector<Complex64>,
    big_y: &DMatrix<Complex64>,
    rho: f64,
) -> Result<f64> {
    if !rho.is_finite() || rho <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "regularization rho is {rho}, must be finite and strictly positive"
        )));
    }
    if y.len() != big_y.nrows() {
        return Err(Error::InvalidInput(format!(
            "user vector has length {}, interference block has {} rows",
            y.len(),
            big_y.nrows()
        )));
    }
    if y.iter().chain(big_y.iter()).any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::InvalidInput(
            "channel inputs contain non-finite values".into(),
        ));
    }
    let n = y.len();
    let mut gram = big_y * big_y.adjoint();
    for i in 0..n {
        gram[(i, i)] += Complex64::new(rho, 0.0);
    }
    let chol = nalgebra::linalg::Cholesky::new(gram).ok_or_else(|| {
        Error::InvalidInput("Gram matrix could not be factored".into())
    })?;
    let x = chol.solve(y);
    let form = y.dotc(&x);
    // The form is real for Hermitian positive-definite kernels; anything
    // beyond round-off means the solve went wrong.
    debug_assert!(
        form.im.abs() <= 1e-10 * form.re.abs() + 1e-300,
        "quadratic form has imaginary part {} against real part {}",
        form.im,
        form.re
    );
    debug_assert!(
        form.re <= y.norm_squared() / rho * (1.0 + 1e-9) + 1e-300,
        "quadratic form {} exceeds the resolvent bound {}",
        form.re,
        y.norm_squared() / rho
    );
    Ok(form.re)
}

/// Hash identifying a campaign scenario: profile grid, rho, entry law, seed.
pub fn scenario_fingerprint(
    profile: &VarianceProfile,
    rho: f64,
    law: EntryLaw,
    seed: u64,
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"snrfluct-trialset-v1");
    hasher.update((profile.receive_dim() as u64).to_le_bytes());
    hasher.update((profile.interferers() as u64).to_le_bytes());
    hasher.update(rho.to_le_bytes());
    hasher.update(law.tag().as_bytes());
    hasher.update([0u8]);
    hasher.update(seed.to_le_bytes());
    for &v in profile.sigma2().iter() {
        hasher.update(v.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write;
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

/// Runs `trials` independent SNR evaluations.
///
/// `workers = 0` uses the process-wide thread pool, `workers = 1` runs
/// serially, anything else builds a dedicated pool of that size. The choice
/// affects wall time only: trial `r` is a pure function of `(seed, r)`.
pub fn run_trials(
    profile: &VarianceProfile,
    rho: f64,
    law: EntryLaw,
    trials: usize,
    seed: u64,
    workers: usize,
) -> Result<TrialSet> {
    if trials == 0 {
        return Err(Error::InvalidInput("campaign needs at least one trial".into()));
    }
    if !rho.is_finite() || rho <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "regularization rho is {rho}, must be finite and strictly positive"
        )));
    }
    let n = profile.receive_dim();
    let k = profile.interferers();
    if k == 0 {
        return Err(Error::InvalidInput(
            "simulation needs at least one interferer".into(),
        ));
    }
    let amplitude = profile.sigma2().map(f64::sqrt);
    let scale = (k as f64).sqrt().recip();
    let trial = |r: usize| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let w = sample_entries(law, n, k + 1, &mut rng);
        let (y, big_y) = scale_split(&amplitude, &w, scale);
        snr_quadratic_form(&y, &big_y, rho)
    };
    let raw: Vec<Result<f64>> = match workers {
        0 => (0..trials).into_par_iter().map(trial).collect(),
        1 => (0..trials).map(trial).collect(),
        w => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::InvalidInput(format!("failed to build worker pool: {e}")))?
            .install(|| (0..trials).into_par_iter().map(trial).collect()),
    };
    let betas = raw.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(TrialSet {
        betas,
        receive_dim: n,
        interferers: k,
        rho,
        law,
        seed,
        fingerprint: scenario_fingerprint(profile, rho, law, seed),
        stream_rule: STREAM_RULE,
    })
}

/// Maps each trial to `sqrt(K) (beta - beta_bar) / theta`.
pub fn standardize(trials: &TrialSet, beta_bar: f64, theta: f64) -> Result<Vec<f64>> {
    if !theta.is_finite() || theta <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "standardization scale theta is {theta}, must be finite and strictly positive"
        )));
    }
    if !beta_bar.is_finite() {
        return Err(Error::InvalidInput("beta_bar must be finite".into()));
    }
    let root_k = (trials.interferers as f64).sqrt();
    Ok(trials
        .betas
        .iter()
        .map(|&b| root_k * (b - beta_bar) / theta)
        .collect())
}

/// Mean, unbiased variance, and second moment of `beta - beta_bar`.
pub fn empirical_moments(trials: &TrialSet, beta_bar: f64) -> Result<Moments> {
    let r = trials.trial_count();
    if r < 2 {
        return Err(Error::InvalidInput(
            "moment estimates need at least two trials".into(),
        ));
    }
    if !beta_bar.is_finite() {
        return Err(Error::InvalidInput("beta_bar must be finite".into()));
    }
    let mean = trials.betas.iter().sum::<f64>() / r as f64;
    let variance =
        trials.betas.iter().map(|&b| (b - mean) * (b - mean)).sum::<f64>() / (r - 1) as f64;
    let deviation_second_moment = trials
        .betas
        .iter()
        .map(|&b| (b - beta_bar) * (b - beta_bar))
        .sum::<f64>()
        / r as f64;
    Ok(Moments {
        mean,
        variance,
        deviation_second_moment,
    })
}

/// Standard normal CDF, `Phi(x) = erfc(-x / sqrt(2)) / 2`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Kolmogorov limiting survival function
/// `Q(lambda) = 2 sum_{j>=1} (-1)^(j-1) exp(-2 j^2 lambda^2)`,
/// summed until a term drops below 1e-12, clamped into [0, 1].
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..100_000u64 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let r = sorted.len();
    let h = (r - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= r {
        return sorted[r - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Kolmogorov-Smirnov test of a sample against the standard normal, plus a
/// Freedman-Diaconis histogram with the matching density overlay.
///
/// Requires at least 100 finite samples; the asymptotic p-value is not
/// meaningful below that.
pub fn ks_normality(samples: &[f64]) -> Result<NormalityReport> {
    let r = samples.len();
    if r < 100 {
        return Err(Error::InvalidInput(format!(
            "normality test needs at least 100 samples, got {r}"
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "normality test requires finite samples".into(),
        ));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples compare"));
    let rf = r as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = normal_cdf(x);
        d = d.max(cdf - i as f64 / rf).max((i + 1) as f64 / rf - cdf);
    }
    let pvalue = kolmogorov_survival(rf.sqrt() * d);

    let mean = sorted.iter().sum::<f64>() / rf;
    let variance = sorted.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (rf - 1.0);

    let min = sorted[0];
    let max = sorted[r - 1];
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let fd_width = 2.0 * iqr / rf.cbrt();
    let span = max - min;
    let (bins, width) = if span == 0.0 || fd_width == 0.0 {
        (1usize, 1.0)
    } else {
        let bins = (span / fd_width).ceil().min(4096.0).max(1.0) as usize;
        (bins, span / bins as f64)
    };
    let left_edge = if span == 0.0 { min - 0.5 } else { min };
    let mut counts = vec![0usize; bins];
    for &x in &sorted {
        let idx = (((x - left_edge) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let histogram: Vec<HistogramBin> = counts
        .iter()
        .enumerate()
        .map(|(i, &count)| HistogramBin {
            left: left_edge + i as f64 * width,
            right: left_edge + (i + 1) as f64 * width,
            count,
        })
        .collect();
    let normal_overlay = histogram
        .iter()
        .map(|b| {
            let center = 0.5 * (b.left + b.right);
            (center, normal_pdf(center))
        })
        .collect();
    Ok(NormalityReport {
        mean,
        variance,
        ks_statistic: d,
        ks_pvalue: pvalue,
        histogram,
        normal_overlay,
    })
}
