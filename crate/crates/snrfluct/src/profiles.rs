//! Variance profiles and the scenario builders that produce them.
//!
//! A variance profile assigns a nonnegative variance `sigma2[(n, k)]` to each
//! entry of an `N x (K+1)` random channel matrix. Column `0` is the user of
//! interest; columns `1..=K` are interferers. Every analytic and Monte Carlo
//! routine in this crate is parameterized by such a grid, so the builders
//! here are the single place where modelling assumptions (separable factors,
//! multipath power spectra, power control classes) are turned into numbers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// Separable decomposition `sigma2[(n, k)] = d[n] * dtilde[k]`.
///
/// `dtilde` has `K + 1` entries; index `0` belongs to the user of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableFactors {
    pub d: DVector<f64>,
    pub dtilde: DVector<f64>,
}

/// Variance grid of an `N x (K+1)` random matrix, column `0` being the user
/// of interest.
///
/// Entries are finite and nonnegative; `K = 0` (no interferers) is a legal
/// degenerate grid that only the purely structural operations accept.
/// Profiles built from separable factors remember them, which unlocks the
/// closed-form two-scalar equilibrium route.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceProfile {
    sigma2: DMatrix<f64>,
    separable: Option<SeparableFactors>,
}

impl VarianceProfile {
    /// Builds a profile from an explicit grid.
    ///
    /// Rejects empty grids, non-finite or negative entries (naming the
    /// offending entry), and grids whose user column is identically zero.
    pub fn general(sigma2: DMatrix<f64>) -> Result<Self> {
        if sigma2.nrows() == 0 || sigma2.ncols() == 0 {
            return Err(Error::InvalidInput(
                "variance grid must have at least one row and one column".into(),
            ));
        }
        check_grid(&sigma2)?;
        if sigma2.column(0).iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidInput(
                "user column (column 0) of the variance grid is identically zero".into(),
            ));
        }
        Ok(Self {
            sigma2,
            separable: None,
        })
    }

    /// Builds the rank-one profile `sigma2[(n, k)] = d[n] * dtilde[k]`.
    ///
    /// `d` must be nonnegative and not identically zero; `dtilde` must be
    /// nonnegative with `dtilde[0] > 0`. The factors are kept verbatim so
    /// the separable equilibrium route stays available.
    pub fn separable(d: DVector<f64>, dtilde: DVector<f64>) -> Result<Self> {
        if d.is_empty() || dtilde.is_empty() {
            return Err(Error::InvalidInput(
                "separable factors must both be non-empty".into(),
            ));
        }
        for (i, &v) in d.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "separable factor d[{i}] = {v} is not a finite nonnegative number"
                )));
            }
        }
        for (i, &v) in dtilde.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "separable factor dtilde[{i}] = {v} is not a finite nonnegative number"
                )));
            }
        }
        if d.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidInput(
                "separable factor d is identically zero".into(),
            ));
        }
        if dtilde[0] == 0.0 {
            return Err(Error::InvalidInput(
                "separable factor dtilde[0] (user of interest) must be strictly positive".into(),
            ));
        }
        let sigma2 = DMatrix::from_fn(d.len(), dtilde.len(), |n, k| d[n] * dtilde[k]);
        Ok(Self {
            sigma2,
            separable: Some(SeparableFactors { d, dtilde }),
        })
    }

    /// Samples a continuous variance surface on the grid
    /// `sigma2[(n, k)] = pi(n / N, k / (K+1))` with `n` in `1..=N` and `k` in
    /// `0..=K`, mirroring the regular-sampling regime in which the
    /// large-system limits are usually stated.
    pub fn from_surface<F>(pi: F, receive_dim: usize, interferers: usize) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64,
    {
        if receive_dim == 0 {
            return Err(Error::InvalidInput(
                "surface sampling needs at least one receive dimension".into(),
            ));
        }
        let n = receive_dim;
        let cols = interferers + 1;
        let sigma2 = DMatrix::from_fn(n, cols, |row, col| {
            pi((row + 1) as f64 / n as f64, col as f64 / cols as f64)
        });
        check_grid(&sigma2)?;
        Ok(Self {
            sigma2,
            separable: None,
        })
    }

    /// Uplink multipath profile: user `k` transmits with power `powers[k]`
    /// through its own frequency-selective channel, giving
    /// `sigma2[(n, k)] = (K * powers[k] / N) * |h_k(f_n)|^2` at the `n`-th
    /// equispaced frequency.
    ///
    /// One channel and one power per user (user `0` first). A single-user
    /// call (`K = 0`) yields the all-zero grid, which downstream operations
    /// that need interferers reject.
    pub fn mccdma_uplink(channels: &[ChannelRealization], powers: &[f64]) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidInput(
                "uplink profile needs at least the user of interest".into(),
            ));
        }
        if channels.len() != powers.len() {
            return Err(Error::InvalidInput(format!(
                "got {} channels but {} powers; need exactly one power per user",
                channels.len(),
                powers.len()
            )));
        }
        let n = channels[0].freq_response.len();
        for (k, ch) in channels.iter().enumerate() {
            if ch.freq_response.len() != n {
                return Err(Error::InvalidInput(format!(
                    "channel {k} has {} frequency points, expected {n}",
                    ch.freq_response.len()
                )));
            }
        }
        for (k, &p) in powers.iter().enumerate() {
            if !p.is_finite() || p <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "power of user {k} is {p}, must be finite and strictly positive"
                )));
            }
        }
        let interferers = channels.len() - 1;
        let sigma2 = DMatrix::from_fn(n, channels.len(), |row, k| {
            interferers as f64 * powers[k] / n as f64 * channels[k].freq_response[row].norm_sqr()
        });
        check_grid(&sigma2)?;
        Ok(Self {
            sigma2,
            separable: None,
        })
    }

    /// Number of receive dimensions `N` (grid rows).
    pub fn receive_dim(&self) -> usize {
        self.sigma2.nrows()
    }

    /// Number of interfering users `K` (grid columns minus the user column).
    pub fn interferers(&self) -> usize {
        self.sigma2.ncols() - 1
    }

    /// Full `N x (K+1)` variance grid.
    pub fn sigma2(&self) -> &DMatrix<f64> {
        &self.sigma2
    }

    /// Variance column of the user of interest.
    pub fn user_column(&self) -> DVector<f64> {
        self.sigma2.column(0).into_owned()
    }

    /// Separable factors, when the profile was built from them.
    pub fn separable_factors(&self) -> Option<&SeparableFactors> {
        self.separable.as_ref()
    }
}

fn check_grid(sigma2: &DMatrix<f64>) -> Result<()> {
    for col in 0..sigma2.ncols() {
        for row in 0..sigma2.nrows() {
            let v = sigma2[(row, col)];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "variance grid entry (row {row}, col {col}) is {v}, \
                     must be finite and nonnegative"
                )));
            }
        }
    }
    Ok(())
}

/// One power-control class: a power multiplier and the fraction of
/// interferers assigned to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerClass {
    pub multiplier: f64,
    pub proportion: f64,
}

/// Discrete power-control layout: interferers split into classes, each class
/// transmitting at `multiplier * base_power`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerClassTable {
    base_power: f64,
    classes: Vec<PowerClass>,
}

impl PowerClassTable {
    /// Validates and stores a class table. Proportions must be nonnegative
    /// and sum to one (within 1e-12), multipliers strictly positive.
    pub fn new(base_power: f64, classes: Vec<PowerClass>) -> Result<Self> {
        if !base_power.is_finite() || base_power <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "base power is {base_power}, must be finite and strictly positive"
            )));
        }
        if classes.is_empty() {
            return Err(Error::InvalidInput("power class table is empty".into()));
        }
        for (i, c) in classes.iter().enumerate() {
            if !c.multiplier.is_finite() || c.multiplier <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "class {i} multiplier is {}, must be finite and strictly positive",
                    c.multiplier
                )));
            }
            if !c.proportion.is_finite() || c.proportion < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "class {i} proportion is {}, must be finite and nonnegative",
                    c.proportion
                )));
            }
        }
        let total: f64 = classes.iter().map(|c| c.proportion).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "class proportions sum to {total}, must sum to 1"
            )));
        }
        Ok(Self {
            base_power,
            classes,
        })
    }

    pub fn base_power(&self) -> f64 {
        self.base_power
    }

    pub fn classes(&self) -> &[PowerClass] {
        &self.classes
    }

    /// Expands the table into a per-user power vector of length `K + 1`:
    /// the user of interest at `base_power` first, then each class in table
    /// order repeated by its headcount.
    ///
    /// Class `i < last` gets `round(K * proportion_i)` interferers and the
    /// last class absorbs the rounding residue. A table whose rounded
    /// headcounts already exceed `K` is rejected.
    pub fn expand(&self, interferers: usize) -> Result<Vec<f64>> {
        if interferers == 0 {
            return Err(Error::InvalidInput(
                "power expansion needs at least one interferer".into(),
            ));
        }
        let k = interferers;
        let mut counts = Vec::with_capacity(self.classes.len());
        let mut assigned = 0usize;
        for c in &self.classes[..self.classes.len() - 1] {
            let count = (k as f64 * c.proportion).round() as usize;
            counts.push(count);
            assigned += count;
        }
        if assigned > k {
            return Err(Error::InvalidInput(format!(
                "rounded class headcounts already use {assigned} of {k} interferers, \
                 leaving a negative residue for the last class"
            )));
        }
        counts.push(k - assigned);
        let mut powers = Vec::with_capacity(k + 1);
        powers.push(self.base_power);
        for (c, &count) in self.classes.iter().zip(&counts) {
            powers.extend(std::iter::repeat(c.multiplier * self.base_power).take(count));
        }
        debug_assert_eq!(powers.len(), k + 1);
        Ok(powers)
    }
}

/// Multipath channel of one user: its time-domain taps and the frequency
/// response sampled at the `N` equispaced points `e^(2 i pi j / N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    taps: Vec<Complex64>,
    freq_response: DVector<Complex64>,
}

impl ChannelRealization {
    /// Evaluates `h(z) = sum_l taps[l] z^l` at the `receive_dim` roots of
    /// unity (Horner form, one pass per frequency).
    pub fn from_taps(taps: Vec<Complex64>, receive_dim: usize) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidInput("channel needs at least one tap".into()));
        }
        if receive_dim == 0 {
            return Err(Error::InvalidInput(
                "frequency response needs at least one sample point".into(),
            ));
        }
        let n = receive_dim;
        let freq_response = DVector::from_fn(n, |j, _| {
            let z = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / n as f64);
            let mut acc = Complex64::new(0.0, 0.0);
            for &t in taps.iter().rev() {
                acc = acc * z + t;
            }
            acc
        });
        Ok(Self {
            taps,
            freq_response,
        })
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    pub fn freq_response(&self) -> &DVector<Complex64> {
        &self.freq_response
    }
}

/// Draws one multipath channel per user with `tap_count` i.i.d. circular
/// complex Gaussian taps of variance `1 / tap_count` (unit average energy)
/// and samples each response at `receive_dim` equispaced frequencies.
///
/// Channels draw from the dedicated scenario stream of `ChaCha8` under
/// `seed` (stream `u64::MAX`); Monte Carlo trials count up from stream 0,
/// so the same seed can drive both without overlap and redrawing trials
/// never perturbs the channels.
pub fn sample_rayleigh_taps(
    tap_count: usize,
    users: usize,
    receive_dim: usize,
    seed: u64,
) -> Result<Vec<ChannelRealization>> {
    if tap_count == 0 {
        return Err(Error::InvalidInput(
            "multipath channel needs at least one tap".into(),
        ));
    }
    if users == 0 {
        return Err(Error::InvalidInput(
            "channel sampling needs at least one user".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let sd = 1.0 / (2.0 * tap_count as f64).sqrt();
    (0..users)
        .map(|_| {
            let taps = (0..tap_count)
                .map(|_| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    Complex64::new(re * sd, im * sd)
                })
                .collect();
            ChannelRealization::from_taps(taps, receive_dim)
        })
        .collect()
}
