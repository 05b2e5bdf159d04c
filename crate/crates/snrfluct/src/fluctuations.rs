//! Gaussian fluctuation variance of the SNR around its deterministic limit.
//!
//! With `beta` the random SNR and `beta_bar` its deterministic equivalent,
//! `sqrt(K) (beta - beta_bar)` is asymptotically centered normal; this module
//! evaluates the limit variance
//!
//! ```text
//! theta2 = kappa * (1/K) sum_n (sigma2[(n, 0)] t_n)^2
//!        + (1/K) g^T (I - A)^{-1} Delta^{-1} g
//! ```
//!
//! where, over interferer indices `l, m` in `1..=K`,
//!
//! ```text
//! A[(l, m)]  = (1/K) * [(1/K) sum_n sigma2[(n, l)] sigma2[(n, m)] t_n^2]
//!              / (1 + (1/K) sum_n sigma2[(n, l)] t_n)^2
//! Delta[l]   = (1 + (1/K) sum_n sigma2[(n, l)] t_n)^2
//! g[l]       = (1/K) sum_n sigma2[(n, 0)] sigma2[(n, l)] t_n^2
//! ```
//!
//! and `kappa = E|W|^4 - 1` is the excess fourth moment of the unit-variance
//! matrix entries. `I - A` is invertible precisely when the spectral radius
//! of `A` stays below one, which holds at every converged solution with
//! `rho > 0`; the radius is still computed and checked so that a defective
//! input fails loudly instead of returning a meaningless number.

use nalgebra::{DMatrix, DVector};

use crate::equilibrium::{FixedPointSolution, SeparableSolution};
use crate::profiles::VarianceProfile;
use crate::simulator::EntryLaw;
use crate::{Error, Result};

/// Everything the fluctuation formula produces, kept together so reports and
/// tests can audit the intermediate objects.
#[derive(Debug, Clone, PartialEq)]
pub struct CltQuantities {
    /// Interference coupling matrix `A`, `K x K`, entrywise nonnegative.
    pub a: DMatrix<f64>,
    /// Diagonal `Delta[l] = (1 + (1/K) sum_n sigma2[(n, l)] t_n)^2`.
    pub delta: DVector<f64>,
    /// User-interferer coupling vector `g`.
    pub g: DVector<f64>,
    /// Solution `x` of `(I - A) x = Delta^{-1} g`.
    pub interference_solve: DVector<f64>,
    /// Power-iteration estimate of the spectral radius of `A`.
    pub spectral_radius: f64,
    /// Excess fourth moment of the entry law.
    pub kappa: f64,
    /// `kappa * (1/K) sum_n (sigma2[(n, 0)] t_n)^2`.
    pub term_fourth: f64,
    /// `(1/K) g^T x`, the interference chain contribution.
    pub term_interference: f64,
    /// Fluctuation variance `term_fourth + term_interference`.
    pub theta2: f64,
}

/// Excess fourth moment `kappa = E|W|^4 - 1` of a unit-variance entry law.
///
/// The circular complex Gaussian has `E|W|^4 = 2`; any unit-modulus
/// constellation has `E|W|^4 = 1` and therefore the smallest possible
/// fluctuation variance.
pub fn fourth_moment(law: EntryLaw) -> f64 {
    match law {
        EntryLaw::ComplexGaussian => 1.0,
        EntryLaw::Qpsk => 0.0,
    }
}

/// Builds the coupling objects `(A, Delta, g)` at a converged solution.
pub fn clt_matrices(
    profile: &VarianceProfile,
    sol: &FixedPointSolution,
) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    sol.check_for(profile)?;
    let k = profile.interferers();
    if k == 0 {
        return Err(Error::InvalidInput(
            "fluctuation formula needs at least one interferer".into(),
        ));
    }
    let inv_k = 1.0 / k as f64;
    let s = profile.sigma2().columns(1, k);
    // scaled[(n, l)] = sigma2[(n, l)] t_n, so scaled^T scaled collects the
    // t^2-weighted column overlaps in one pass.
    let mut scaled = s.into_owned();
    for (n, mut row) in scaled.row_iter_mut().enumerate() {
        row *= sol.t[n];
    }
    let c = scaled.tr_mul(&scaled) * inv_k;
    let col_means = s.tr_mul(&sol.t) * inv_k;
    let delta = col_means.map(|v| (1.0 + v) * (1.0 + v));
    let user_scaled = profile.user_column().component_mul(&sol.t);
    let g = scaled.tr_mul(&user_scaled) * inv_k;
    let mut a = c * inv_k;
    for (l, mut row) in a.row_iter_mut().enumerate() {
        row /= delta[l];
    }
    Ok((a, delta, g))
}

/// Spectral radius of a square nonnegative matrix by power iteration
/// (50 rounds, early exit once the estimate moves by less than 1e-10).
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    assert_eq!(a.nrows(), a.ncols(), "spectral radius needs a square matrix");
    let k = a.nrows();
    if k == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(k, 1.0 / (k as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..50 {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (norm - estimate).abs() <= 1e-10 * norm.max(1.0) {
            return norm;
        }
        estimate = norm;
    }
    estimate
}

/// Evaluates the fluctuation variance `theta2` at a converged solution.
///
/// `kappa` must be a nonnegative finite excess fourth moment. Fails with
/// [`Error::IllPosed`] when the spectral radius of `A` is not safely below
/// one (within 1e-8), since `(I - A)^{-1}` then has no stable meaning.
pub fn theta_squared(
    profile: &VarianceProfile,
    sol: &FixedPointSolution,
    kappa: f64,
) -> Result<CltQuantities> {
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(Error::InvalidInput(format!(
            "excess fourth moment kappa is {kappa}, must be finite and nonnegative"
        )));
    }
    let (a, delta, g) = clt_matrices(profile, sol)?;
    let radius = spectral_radius(&a);
    if radius >= 1.0 - 1e-8 {
        return Err(Error::IllPosed(format!(
            "interference matrix spectral radius {radius:.6} is not below 1"
        )));
    }
    let k = a.nrows();
    let rhs = g.component_div(&delta);
    let x = (DMatrix::identity(k, k) - &a)
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::IllPosed("I - A is numerically singular".into()))?;
    let inv_k = 1.0 / k as f64;
    let term_fourth = kappa
        * inv_k
        * profile
            .user_column()
            .iter()
            .zip(sol.t.iter())
            .map(|(&s0, &t)| (s0 * t) * (s0 * t))
            .sum::<f64>();
    let term_interference = inv_k * g.dot(&x);
    Ok(CltQuantities {
        a,
        delta,
        g,
        interference_solve: x,
        spectral_radius: radius,
        kappa,
        term_fourth,
        term_interference,
        theta2: term_fourth + term_interference,
    })
}

/// Fluctuation variance of the separable route, normalized by the user
/// factor: `theta2 = dtilde_0^2 * omega2` with
///
/// ```text
/// omega2 = gamma * (kappa + rho^2 gamma gammatilde / (1 - rho^2 gamma gammatilde))
/// ```
///
/// Requires `rho^2 gamma gammatilde < 1`, the separable expression of the
/// spectral-radius condition.
pub fn omega_squared(sol: &SeparableSolution, kappa: f64) -> Result<f64> {
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(Error::InvalidInput(format!(
            "excess fourth moment kappa is {kappa}, must be finite and nonnegative"
        )));
    }
    if !sol.is_converged() {
        return Err(Error::InvalidInput(format!(
            "solution residual {:.3e} exceeds its tolerance {:.3e}; solve before evaluating",
            sol.residual, sol.tol
        )));
    }
    let q = sol.rho * sol.rho * sol.gamma * sol.gammatilde;
    if q >= 1.0 {
        return Err(Error::IllPosed(format!(
            "rho^2 gamma gammatilde = {q:.6} is not below 1"
        )));
    }
    Ok(sol.gamma * (kappa + q / (1.0 - q)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_general, solve_separable, SolverSettings};
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    const GOLDEN_RECIP: f64 = 0.618033988749894848;

    fn solve(profile: &VarianceProfile, rho: f64) -> FixedPointSolution {
        solve_general(profile, rho, &SolverSettings::default()).unwrap()
    }

    #[test]
    fn unit_modulus_entries_kill_the_fourth_term() {
        assert_eq!(fourth_moment(EntryLaw::ComplexGaussian), 1.0);
        assert_eq!(fourth_moment(EntryLaw::Qpsk), 0.0);
    }

    #[test]
    fn zero_interference_variance_is_exactly_the_fourth_term() {
        let mut grid = DMatrix::zeros(2, 5);
        grid[(0, 0)] = 2.0;
        grid[(1, 0)] = 2.0;
        let profile = VarianceProfile::general(grid).unwrap();
        let sol = solve(&profile, 2.0);
        // Unit-modulus entries: no randomness survives, theta2 = 0 exactly.
        let qpsk = theta_squared(&profile, &sol, 0.0).unwrap();
        assert_eq!(qpsk.theta2, 0.0);
        assert_eq!(qpsk.term_interference, 0.0);
        // Gaussian entries: (1/K) sum (sigma2_user t)^2 = (1/4) * 2 * (2/2)^2.
        let gauss = theta_squared(&profile, &sol, 1.0).unwrap();
        assert_relative_eq!(gauss.theta2, 0.5, max_relative = 1e-15);
        assert_eq!(gauss.spectral_radius, 0.0);
    }

    #[test]
    fn constant_profile_matches_analytic_variance() {
        // At sigma2 = 1, N = K, rho = 1 the equilibrium is the golden-ratio
        // reciprocal and the variance reduces to delta^2 / (1 - delta^4),
        // splitting as kappa delta^2 + delta^6 / (1 - delta^4).
        let d = GOLDEN_RECIP;
        let profile =
            VarianceProfile::general(DMatrix::from_element(16, 17, 1.0)).unwrap();
        let sol = solve(&profile, 1.0);
        let clt = theta_squared(&profile, &sol, 1.0).unwrap();
        assert_relative_eq!(clt.term_fourth, d * d, epsilon = 1e-10);
        assert_relative_eq!(
            clt.term_interference,
            d.powi(6) / (1.0 - d.powi(4)),
            epsilon = 1e-10
        );
        assert_relative_eq!(clt.theta2, d * d / (1.0 - d.powi(4)), epsilon = 1e-10);
    }

    #[test]
    fn separable_and_general_variances_agree() {
        let d = dvector![0.5, 1.0, 2.0, 0.75, 1.25, 0.3];
        let dtilde = dvector![1.5, 0.5, 2.5, 1.0, 0.8];
        let profile = VarianceProfile::separable(d, dtilde.clone()).unwrap();
        let rho = 0.8;
        for kappa in [0.0, 1.0] {
            let gen = solve(&profile, rho);
            let clt = theta_squared(&profile, &gen, kappa).unwrap();
            let sep = solve_separable(&profile, rho, &SolverSettings::default()).unwrap();
            let omega2 = omega_squared(&sep, kappa).unwrap();
            let predicted = dtilde[0] * dtilde[0] * omega2;
            // Each route converges separately to a defect of 1e-12, so the
            // common value carries a small multiple of that.
            assert_relative_eq!(clt.theta2, predicted, epsilon = 1e-10);
        }
    }

    #[test]
    fn constant_profile_omega_matches_closed_form() {
        let n = 16;
        let profile = VarianceProfile::separable(
            DVector::from_element(n, 1.0),
            DVector::from_element(n + 1, 1.0),
        )
        .unwrap();
        let sep = solve_separable(&profile, 1.0, &SolverSettings::default()).unwrap();
        let omega2 = omega_squared(&sep, 1.0).unwrap();
        let d = GOLDEN_RECIP;
        assert_relative_eq!(omega2, d * d / (1.0 - d.powi(4)), epsilon = 1e-10);
        // gamma (kappa + q/(1-q)) at gamma = gammatilde = delta^2, rho = 1
        // collapses to delta^2 / (1 - delta^4) = 1/sqrt(5).
        assert_relative_eq!(omega2, 1.0 / 5.0f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn theta_is_invariant_under_joint_scaling() {
        let profile = VarianceProfile::from_surface(|x, y| 0.3 + x + 2.0 * y, 10, 8).unwrap();
        let scaled = VarianceProfile::general(profile.sigma2() * 3.0).unwrap();
        let a = theta_squared(&profile, &solve(&profile, 0.9), 1.0).unwrap();
        let b = theta_squared(&scaled, &solve(&scaled, 2.7), 1.0).unwrap();
        assert_relative_eq!(a.theta2, b.theta2, epsilon = 1e-10);
    }

    #[test]
    fn spectral_radius_handles_known_matrices() {
        let diag = dmatrix![0.3, 0.0; 0.0, 0.9];
        assert_relative_eq!(spectral_radius(&diag), 0.9, epsilon = 1e-9);
        // Constant K x K matrix c J has radius K c.
        let flat = DMatrix::from_element(5, 5, 0.1);
        assert_relative_eq!(spectral_radius(&flat), 0.5, epsilon = 1e-9);
        let nilpotent = dmatrix![0.0, 1.0; 0.0, 0.0];
        assert_eq!(spectral_radius(&nilpotent), 0.0);
        assert_eq!(spectral_radius(&DMatrix::<f64>::zeros(3, 3)), 0.0);
    }

    #[test]
    fn runaway_interference_chain_is_flagged() {
        // A fabricated "solution" far above the true equilibrium pushes the
        // interference matrix past radius 1; the check must fire before any
        // resolvent is formed. Here A is the constant 4 x 4 matrix with
        // entries 2500/(4 * 4 * 676), radius ~ 0.92 * 4.
        let profile =
            VarianceProfile::general(DMatrix::from_element(1, 5, 10.0)).unwrap();
        let fake = FixedPointSolution {
            rho: 1.0,
            t: dvector![10.0],
            ttilde: DVector::from_element(4, 0.01),
            residual: 0.0,
            iterations: 1,
            tol: 1e-12,
        };
        let err = theta_squared(&profile, &fake, 1.0).unwrap_err();
        match err {
            Error::IllPosed(msg) => assert!(msg.contains("spectral radius"), "got: {msg}"),
            other => panic!("expected IllPosed, got {other}"),
        }
    }

    #[test]
    fn separable_denominator_violation_is_flagged() {
        let fake = SeparableSolution {
            rho: 2.0,
            delta: 0.5,
            deltatilde: 0.5,
            gamma: 0.5,
            gammatilde: 0.5,
            residual: 0.0,
            iterations: 1,
            tol: 1e-12,
        };
        let err = omega_squared(&fake, 1.0).unwrap_err();
        assert!(matches!(err, Error::IllPosed(_)), "got: {err}");
    }

    #[test]
    fn kappa_domain_is_enforced() {
        let profile = VarianceProfile::general(DMatrix::from_element(4, 5, 1.0)).unwrap();
        let sol = solve(&profile, 1.0);
        assert!(theta_squared(&profile, &sol, -0.1).is_err());
        assert!(theta_squared(&profile, &sol, f64::NAN).is_err());
        let sep_profile = VarianceProfile::separable(
            DVector::from_element(4, 1.0),
            DVector::from_element(5, 1.0),
        )
        .unwrap();
        let sep = solve_separable(&sep_profile, 1.0, &SolverSettings::default()).unwrap();
        assert!(omega_squared(&sep, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn variance_pieces_stay_consistent(
            n in 1usize..7,
            k in 1usize..7,
            rho in 0.2f64..6.0,
            cells in proptest::collection::vec(0.0f64..4.0, 49),
            anchor in 0.1f64..3.0,
        ) {
            let mut grid = DMatrix::zeros(n, k + 1);
            for col in 0..=k {
                for row in 0..n {
                    grid[(row, col)] = cells[col * n + row];
                }
            }
            grid[(0, 0)] = anchor;
            let profile = VarianceProfile::general(grid).unwrap();
            let sol = solve_general(&profile, rho, &SolverSettings::default()).unwrap();
            let gauss = theta_squared(&profile, &sol, 1.0).unwrap();
            let qpsk = theta_squared(&profile, &sol, 0.0).unwrap();
            prop_assert!(gauss.spectral_radius < 1.0);
            prop_assert!(gauss.theta2 >= 0.0);
            // Same interference chain, so the laws differ by the fourth term.
            prop_assert!((gauss.theta2 - qpsk.theta2 - gauss.term_fourth).abs()
                <= 1e-12 * (1.0 + gauss.theta2));
            prop_assert!(qpsk.term_interference >= -1e-13 * (1.0 + gauss.g.norm()));
            // The reported solve vector really solves (I - A) x = Delta^{-1} g.
            let k_dim = gauss.a.nrows();
            let lhs = (DMatrix::identity(k_dim, k_dim) - &gauss.a) * &gauss.interference_solve;
            let rhs = gauss.g.component_div(&gauss.delta);
            let err = (lhs - &rhs).amax();
            prop_assert!(err <= 1e-12 * (1.0 + rhs.amax()));
        }
    }
}
