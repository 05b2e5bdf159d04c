//! Deterministic fixed-point systems attached to a variance profile.
//!
//! For regularization `rho > 0` the coupled system in the vectors `t` (length
//! `N`) and `ttilde` (length `K`, interferers only) is
//!
//! ```text
//! t_n      = 1 / (rho * (1 + (1/K) sum_k sigma2[(n, k)] ttilde_k))
//! ttilde_k = 1 / (rho * (1 + (1/K) sum_n sigma2[(n, k)] t_n))
//! ```
//!
//! with `k` ranging over `1..=K`. The user column never enters the system;
//! it only weights the SNR functional afterwards. Both solvers run a damped
//! Picard iteration from the zero-interference point `1/rho` and certify
//! convergence on the defect: the returned iterate `x` satisfies
//! `sup |F(x) - x| <= tol`, so the reported residual is a checkable
//! certificate rather than a step size.

use nalgebra::{DMatrix, DVector};

use crate::profiles::VarianceProfile;
use crate::{Error, Result};

/// Picard iteration controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Sup-norm defect at which the iterate is accepted.
    pub tol: f64,
    /// Iteration budget; one iteration is one evaluation of the full map.
    pub max_iter: usize,
    /// Initial damping in `[0, 1)`: the update keeps this fraction of the
    /// previous iterate. Left at zero, the solver switches itself to 0.5
    /// after the defect grows twice in a row.
    pub damping: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 10_000,
            damping: 0.0,
        }
    }
}

impl SolverSettings {
    fn validate(&self) -> Result<()> {
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "solver tolerance is {}, must be finite and strictly positive",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput(
                "solver needs an iteration budget of at least 1".into(),
            ));
        }
        if !self.damping.is_finite() || !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidInput(format!(
                "damping is {}, must lie in [0, 1)",
                self.damping
            )));
        }
        Ok(())
    }
}

/// Converged (or best-effort) iterate of the general fixed-point system.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointSolution {
    pub rho: f64,
    /// Receive-side equilibrium values, length `N`; `0 < t_n <= 1/rho`.
    pub t: DVector<f64>,
    /// Interferer-side equilibrium values, length `K`.
    pub ttilde: DVector<f64>,
    /// Certified defect `sup |F(x) - x|` of the returned iterate.
    pub residual: f64,
    /// Map evaluations spent.
    pub iterations: usize,
    pub tol: f64,
}

impl FixedPointSolution {
    pub fn is_converged(&self) -> bool {
        self.residual <= self.tol
    }

    /// Checks that this solution has the dimensions of `profile` and a
    /// certified defect; every functional evaluated at the solution calls
    /// this first.
    pub fn check_for(&self, profile: &VarianceProfile) -> Result<()> {
        let n = profile.receive_dim();
        let k = profile.interferers();
        if self.t.len() != n || self.ttilde.len() != k {
            return Err(Error::InvalidInput(format!(
                "solution dimensions ({}, {}) do not match the profile ({n}, {k})",
                self.t.len(),
                self.ttilde.len()
            )));
        }
        if !self.is_converged() {
            return Err(Error::InvalidInput(format!(
                "solution residual {:.3e} exceeds its tolerance {:.3e}; solve before evaluating",
                self.residual, self.tol
            )));
        }
        Ok(())
    }
}

/// Scalar equilibrium of a separable profile `sigma2 = d * dtilde^T`,
/// together with the second-order sums that drive its fluctuation formula.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableSolution {
    pub rho: f64,
    /// `delta = (1/K) sum_n d_n t_n`.
    pub delta: f64,
    /// `deltatilde = (1/K) sum_k dtilde_k ttilde_k` over interferers.
    pub deltatilde: f64,
    /// `gamma = (1/K) sum_n (d_n t_n)^2`.
    pub gamma: f64,
    /// `gammatilde = (1/K) sum_k (dtilde_k ttilde_k)^2` over interferers.
    pub gammatilde: f64,
    pub residual: f64,
    pub iterations: usize,
    pub tol: f64,
}

impl SeparableSolution {
    pub fn is_converged(&self) -> bool {
        self.residual <= self.tol
    }

    /// Receive-side vector induced by the scalar solution:
    /// `t_n = 1 / (rho (1 + deltatilde d_n))`.
    pub fn t_vector(&self, d: &DVector<f64>) -> DVector<f64> {
        d.map(|dn| 1.0 / (self.rho * (1.0 + self.deltatilde * dn)))
    }

    /// Interferer-side vector induced by the scalar solution:
    /// `ttilde_k = 1 / (rho (1 + delta dtilde_k))`.
    pub fn ttilde_vector(&self, dtilde_interferers: &DVector<f64>) -> DVector<f64> {
        dtilde_interferers.map(|dk| 1.0 / (self.rho * (1.0 + self.delta * dk)))
    }

    /// Deterministic SNR of a user with separable variance factor
    /// `dtilde_user`: equals `dtilde_user * delta`.
    pub fn snr(&self, dtilde_user: f64) -> f64 {
        dtilde_user * self.delta
    }
}

/// One evaluation of the coupled map at `(t, ttilde)`.
fn apply_map(
    sigma2: &DMatrix<f64>,
    rho: f64,
    t: &DVector<f64>,
    ttilde: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = sigma2.nrows();
    let k = sigma2.ncols() - 1;
    let s = sigma2.columns(1, k);
    let inv_k = 1.0 / k as f64;
    let down = s * ttilde;
    let ft = DVector::from_fn(n, |i, _| 1.0 / (rho * (1.0 + inv_k * down[i])));
    let up = s.tr_mul(t);
    let ftt = DVector::from_fn(k, |j, _| 1.0 / (rho * (1.0 + inv_k * up[j])));
    (ft, ftt)
}

fn sup_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Defect `sup |F(t, ttilde) - (t, ttilde)|` of a candidate point.
///
/// Panics if the vector lengths do not match the profile; that is a caller
/// bug, not a data condition.
pub fn residual(
    profile: &VarianceProfile,
    rho: f64,
    t: &DVector<f64>,
    ttilde: &DVector<f64>,
) -> f64 {
    assert_eq!(t.len(), profile.receive_dim(), "t length must equal N");
    assert_eq!(ttilde.len(), profile.interferers(), "ttilde length must equal K");
    let (ft, ftt) = apply_map(profile.sigma2(), rho, t, ttilde);
    sup_diff(&ft, t).max(sup_diff(&ftt, ttilde))
}

fn check_rho(rho: f64) -> Result<()> {
    if !rho.is_finite() || rho <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "regularization rho is {rho}, must be finite and strictly positive"
        )));
    }
    Ok(())
}

/// Solves the general fixed-point system by damped Picard iteration.
///
/// Needs `K >= 1`. Starts at `t = ttilde = 1/rho` and stops once the defect
/// of the current iterate drops to `settings.tol`; if the defect rises twice
/// in a row the damping factor is lifted to at least 0.5 for the remainder.
/// Exhausting the budget is reported as [`Error::NoConvergence`] carrying
/// the last defect.
pub fn solve_general(
    profile: &VarianceProfile,
    rho: f64,
    settings: &SolverSettings,
) -> Result<FixedPointSolution> {
    check_rho(rho)?;
    settings.validate()?;
    let n = profile.receive_dim();
    let k = profile.interferers();
    if k == 0 {
        return Err(Error::InvalidInput(
            "fixed-point system needs at least one interferer".into(),
        ));
    }
    let mut t = DVector::from_element(n, 1.0 / rho);
    let mut tt = DVector::from_element(k, 1.0 / rho);
    let mut damping = settings.damping;
    let mut prev_res = f64::INFINITY;
    let mut rises = 0u32;
    let mut last_res = f64::INFINITY;
    for m in 1..=settings.max_iter {
        let (ft, ftt) = apply_map(profile.sigma2(), rho, &t, &tt);
        let res = sup_diff(&ft, &t).max(sup_diff(&ftt, &tt));
        if res <= settings.tol {
            return Ok(FixedPointSolution {
                rho,
                t,
                ttilde: tt,
                residual: res,
                iterations: m,
                tol: settings.tol,
            });
        }
        if res > prev_res {
            rises += 1;
            if rises >= 2 {
                damping = damping.max(0.5);
            }
        } else {
            rises = 0;
        }
        prev_res = res;
        last_res = res;
        if damping == 0.0 {
            t = ft;
            tt = ftt;
        } else {
            t = ft * (1.0 - damping) + &t * damping;
            tt = ftt * (1.0 - damping) + &tt * damping;
        }
    }
    Err(Error::NoConvergence {
        residual: last_res,
        tolerance: settings.tol,
        iterations: settings.max_iter,
    })
}

/// Solves the two-scalar system of a separable profile.
///
/// The profile must carry its factors (see
/// [`VarianceProfile::separable`]); the grid alone does not qualify. On
/// convergence the second-order sums `gamma`, `gammatilde` are evaluated at
/// the solution.
pub fn solve_separable(
    profile: &VarianceProfile,
    rho: f64,
    settings: &SolverSettings,
) -> Result<SeparableSolution> {
    check_rho(rho)?;
    settings.validate()?;
    let factors = profile.separable_factors().ok_or_else(|| {
        Error::InvalidInput("profile carries no separable factors; use the general solver".into())
    })?;
    let k = profile.interferers();
    if k == 0 {
        return Err(Error::InvalidInput(
            "fixed-point system needs at least one interferer".into(),
        ));
    }
    let d = &factors.d;
    let dt = factors.dtilde.rows(1, k).into_owned();
    let inv_k = 1.0 / k as f64;
    let f_delta = |deltatilde: f64| -> f64 {
        inv_k * d.iter().map(|&dn| dn / (rho * (1.0 + deltatilde * dn))).sum::<f64>()
    };
    let f_deltatilde = |delta: f64| -> f64 {
        inv_k * dt.iter().map(|&dk| dk / (rho * (1.0 + delta * dk))).sum::<f64>()
    };
    // Zero-interference seed, matching the vector solver's start at 1/rho.
    let mut delta = inv_k * d.sum() / rho;
    let mut deltatilde = inv_k * dt.sum() / rho;
    let mut damping = settings.damping;
    let mut prev_res = f64::INFINITY;
    let mut rises = 0u32;
    let mut last_res = f64::INFINITY;
    for m in 1..=settings.max_iter {
        let fd = f_delta(deltatilde);
        let fdt = f_deltatilde(delta);
        let res = (fd - delta).abs().max((fdt - deltatilde).abs());
        if res <= settings.tol {
            let t = |dn: f64| 1.0 / (rho * (1.0 + deltatilde * dn));
            let ttilde = |dk: f64| 1.0 / (rho * (1.0 + delta * dk));
            let gamma = inv_k * d.iter().map(|&dn| (dn * t(dn)).powi(2)).sum::<f64>();
            let gammatilde = inv_k * dt.iter().map(|&dk| (dk * ttilde(dk)).powi(2)).sum::<f64>();
            return Ok(SeparableSolution {
                rho,
                delta,
                deltatilde,
                gamma,
                gammatilde,
                residual: res,
                iterations: m,
                tol: settings.tol,
            });
        }
        if res > prev_res {
            rises += 1;
            if rises >= 2 {
                damping = damping.max(0.5);
            }
        } else {
            rises = 0;
        }
        prev_res = res;
        last_res = res;
        delta = (1.0 - damping) * fd + damping * delta;
        deltatilde = (1.0 - damping) * fdt + damping * deltatilde;
    }
    Err(Error::NoConvergence {
        residual: last_res,
        tolerance: settings.tol,
        iterations: settings.max_iter,
    })
}

/// Deterministic large-system SNR of the user of interest:
/// `beta_bar = (1/K) sum_n sigma2[(n, 0)] t_n`.
///
/// Requires a converged solution for the same profile.
pub fn deterministic_snr(profile: &VarianceProfile, sol: &FixedPointSolution) -> Result<f64> {
    sol.check_for(profile)?;
    Ok(profile.user_column().dot(&sol.t) / profile.interferers() as f64)
}
