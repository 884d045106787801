//! Scalar fixed-point equations: the implicit regularization μ(λ, φ), the
//! edge μ₀(φ) and minimum penalty λ_min(φ), the companion ṽ, and the
//! constant-μ contours linking ridge penalties to subsample ratios.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ShiftModel, Spectrum};
use crate::roots::bisect_newton;

const RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPointSolution {
    pub lambda: f64,
    pub phi: f64,
    pub psi: f64,
    pub mu: f64,
    /// 1/μ, infinite when μ = 0.
    pub v: f64,
    pub residual: f64,
}

fn check_aspect(aspect: f64) -> Result<()> {
    if aspect > 0.0 && aspect.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "aspect ratio {aspect} must be positive and finite"
        )))
    }
}

/// φ·tr̄[Σ²(Σ+μI)⁻²] and its μ-derivative.
fn edge_terms(spectrum: &Spectrum, mu: f64, aspect: f64) -> (f64, f64) {
    let value = aspect * spectrum.mean_of(|r| (r / (r + mu)).powi(2));
    let slope = -2.0 * aspect * spectrum.mean_of(|r| r * r / (r + mu).powi(3));
    (value, slope)
}

/// λ(μ) = μ − φ·tr̄[μΣ(Σ+μI)⁻¹].
pub(crate) fn lambda_of_mu(spectrum: &Spectrum, mu: f64, aspect: f64) -> f64 {
    mu - aspect * spectrum.mean_of(|r| mu * r / (r + mu))
}

/// Edge μ₀(φ) > −r_min solving 1 = φ·tr̄[Σ²(Σ+μ₀I)⁻²].
pub fn mu_zero(spectrum: &Spectrum, phi: f64) -> Result<f64> {
    check_aspect(phi)?;
    let r_min = spectrum.r_min();
    let r_max = spectrum.r_max();
    let multiplicity = spectrum.eigenvalues().iter().filter(|&&r| r == r_min).count() as f64;
    // At this offset the smallest-eigenvalue terms alone push the sum past 1.
    let offset = 0.5 * r_min * (phi * multiplicity / spectrum.p() as f64).sqrt();
    let lo = -r_min + offset.min(0.5 * r_min);
    let hi = r_max * (phi.sqrt() - 1.0).max(0.0) + 1.0;
    let root = bisect_newton(
        |mu| {
            let (v, s) = edge_terms(spectrum, mu, phi);
            (v - 1.0, s)
        },
        lo,
        hi,
        RESIDUAL_TOL,
    )?;
    Ok(root.x)
}

/// Minimum admissible penalty λ_min(φ) = μ₀ − φ·tr̄[μ₀Σ(Σ+μ₀I)⁻¹].
pub fn lambda_min(spectrum: &Spectrum, phi: f64) -> Result<f64> {
    let mu0 = mu_zero(spectrum, phi)?;
    Ok(lambda_of_mu(spectrum, mu0, phi))
}

fn solve_branch(spectrum: &Spectrum, lambda: f64, aspect: f64, mu0: f64) -> Result<(f64, f64)> {
    let f = |mu: f64| {
        let value = lambda_of_mu(spectrum, mu, aspect) - lambda;
        let slope = 1.0 - edge_terms(spectrum, mu, aspect).0;
        (value, slope)
    };
    let mut hi = (lambda + aspect * spectrum.r_max()).max(1.0);
    while f(hi).0 <= 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::SolverFailure {
                iterations: 0,
                x: hi,
                residual: f64::INFINITY,
            });
        }
    }
    let scale = 1.0 + lambda.abs();
    let root = bisect_newton(f, mu0, hi, RESIDUAL_TOL * scale)?;
    if root.residual > 1e-10 * (scale + root.x.abs()) {
        return Err(Error::SolverFailure {
            iterations: crate::roots::MAX_BISECTION + crate::roots::MAX_NEWTON,
            x: root.x,
            residual: root.residual,
        });
    }
    Ok((root.x, root.residual))
}

/// Implicit regularization μ(λ, aspect) on the branch μ > μ₀(aspect).
pub fn solve_mu(spectrum: &Spectrum, lambda: f64, aspect: f64) -> Result<FixedPointSolution> {
    check_aspect(aspect)?;
    if !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} must be finite")));
    }
    let mu0 = mu_zero(spectrum, aspect)?;
    let lmin = lambda_of_mu(spectrum, mu0, aspect);
    if lambda <= lmin {
        return Err(Error::BelowMinimumPenalty {
            lambda,
            lambda_min: lmin,
        });
    }
    let (mu, residual) = solve_branch(spectrum, lambda, aspect, mu0)?;
    Ok(FixedPointSolution {
        lambda,
        phi: aspect,
        psi: aspect,
        mu,
        v: if mu == 0.0 { f64::INFINITY } else { 1.0 / mu },
        residual,
    })
}

/// μ(λ, aspect) allowing λ = λ_min(aspect), where it returns μ₀.
pub(crate) fn mu_at(spectrum: &Spectrum, lambda: f64, aspect: f64) -> Result<f64> {
    check_aspect(aspect)?;
    let mu0 = mu_zero(spectrum, aspect)?;
    let lmin = lambda_of_mu(spectrum, mu0, aspect);
    let tol = 1e-14 * (1.0 + lmin.abs());
    if lambda < lmin - tol {
        return Err(Error::BelowMinimumPenalty {
            lambda,
            lambda_min: lmin,
        });
    }
    if lambda <= lmin + tol {
        return Ok(mu0);
    }
    Ok(solve_branch(spectrum, lambda, aspect, mu0)?.0)
}

/// ṽ = φ·tr̄[Σ₀Σ(Σ+μI)⁻²] / (1 − φ·tr̄[Σ²(Σ+μI)⁻²]) with μ = μ(λ, ψ).
pub fn tilde_v(model: &ShiftModel, mu: f64, phi: f64, psi: f64) -> Result<f64> {
    check_aspect(phi)?;
    if !(psi >= phi) {
        return Err(Error::InvalidSubsampleRatio { psi, phi });
    }
    let spectrum = model.spectrum();
    if mu <= -spectrum.r_min() {
        return Err(Error::SingularResolvent {
            mu,
            bound: -spectrum.r_min(),
        });
    }
    let denominator = 1.0 - edge_terms(spectrum, mu, phi).0;
    if !(denominator > 0.0) {
        return Err(Error::BranchViolation { denominator });
    }
    let r = spectrum.eigenvalues();
    let numerator = phi
        * r.iter()
            .zip(model.sigma0_diag().iter())
            .map(|(&ri, s)| s * ri / (ri + mu).powi(2))
            .sum::<f64>()
        / r.len() as f64;
    Ok(numerator / denominator)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Anchor {
    /// Ridge endpoint penalty λ̄ at ψ = φ.
    Lambda(f64),
    /// Ensemble endpoint ratio ψ̄ ≥ φ, paired with λ_min(ψ̄).
    Psi(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathPoint {
    pub theta: f64,
    pub lambda: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalencePath {
    pub lambda_bar: f64,
    pub psi_bar: f64,
    pub phi: f64,
    pub mu_star: f64,
    pub points: Vec<PathPoint>,
}

/// Segment from (λ̄, φ) to (λ_min(ψ̄), ψ̄) along which μ(λ, ψ) is constant.
///
/// For fixed μ the map ψ ↦ λ(μ, ψ) is affine, so the far endpoint follows in
/// closed form from whichever end is given.
pub fn equivalence_path(spectrum: &Spectrum, phi: f64, anchor: Anchor, samples: usize) -> Result<EquivalencePath> {
    check_aspect(phi)?;
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be positive".into()));
    }
    let (lambda_bar, psi_bar, mu_star) = match anchor {
        Anchor::Psi(psi_bar) => {
            if !(psi_bar >= phi && psi_bar.is_finite()) {
                return Err(Error::InvalidAnchor(format!(
                    "psi_bar = {psi_bar} must be finite and at least phi = {phi}"
                )));
            }
            let mu = mu_zero(spectrum, psi_bar)?;
            (lambda_of_mu(spectrum, mu, phi), psi_bar, mu)
        }
        Anchor::Lambda(lambda_bar) => {
            let sol = solve_mu(spectrum, lambda_bar, phi).map_err(|e| match e {
                Error::BelowMinimumPenalty { lambda, lambda_min } => {
                    Error::InvalidAnchor(format!("lambda_bar = {lambda} is not above lambda_min = {lambda_min}"))
                }
                other => other,
            })?;
            let mu = sol.mu;
            let psi_bar = 1.0 / spectrum.mean_of(|r| (r / (r + mu)).powi(2));
            (lambda_bar, psi_bar.max(phi), mu)
        }
    };
    let lambda_far = lambda_of_mu(spectrum, mu_star, psi_bar);
    let points = (0..samples)
        .map(|j| {
            let theta = if samples == 1 {
                0.0
            } else {
                j as f64 / (samples - 1) as f64
            };
            PathPoint {
                theta,
                lambda: (1.0 - theta) * lambda_bar + theta * lambda_far,
                psi: (1.0 - theta) * phi + theta * psi_bar,
            }
        })
        .collect();
    Ok(EquivalencePath {
        lambda_bar,
        psi_bar,
        phi,
        mu_star,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn id(p: usize) -> Spectrum {
        Spectrum::identity(p)
    }

    #[test]
    fn mu_zero_identity() {
        assert_relative_eq!(mu_zero(&id(5), 4.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(mu_zero(&id(5), 1.0).unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(mu_zero(&id(5), 0.25).unwrap(), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn lambda_min_identity() {
        assert_relative_eq!(lambda_min(&id(5), 4.0).unwrap(), -1.0, epsilon = 1e-12);
        assert_relative_eq!(lambda_min(&id(5), 1.0).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn lambda_min_two_point_spectrum_matches_bisection_oracle() {
        let s = Spectrum::new(vec![1.0, 2.0]).unwrap();
        let phi = 2.0;
        // Plain bisection on the edge equation, then the closed expression.
        let g = |m: f64| phi * 0.5 * ((1.0 / (1.0 + m)).powi(2) + (2.0 / (2.0 + m)).powi(2)) - 1.0;
        let (mut lo, mut hi) = (-0.999_999, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let m = 0.5 * (lo + hi);
        let oracle = m - phi * 0.5 * (m / (1.0 + m) + 2.0 * m / (2.0 + m));
        assert_relative_eq!(lambda_min(&s, phi).unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn solve_mu_examples() {
        assert_relative_eq!(solve_mu(&id(4), 0.0, 2.0).unwrap().mu, 1.0, epsilon = 1e-12);
        let s = solve_mu(&id(4), 0.0, 0.5).unwrap();
        assert!(s.mu.abs() < 1e-12);
        assert_relative_eq!(
            solve_mu(&id(4), 1.0, 1.0).unwrap().mu,
            (1.0 + 5f64.sqrt()) / 2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn solve_mu_rejects_below_minimum() {
        assert!(matches!(
            solve_mu(&id(3), -1.0, 4.0),
            Err(Error::BelowMinimumPenalty { .. })
        ));
        assert!(matches!(
            solve_mu(&id(3), -1.5, 4.0),
            Err(Error::BelowMinimumPenalty { .. })
        ));
    }

    #[test]
    fn mu_at_edge_returns_mu_zero() {
        assert_relative_eq!(mu_at(&id(3), -1.0, 4.0).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tilde_v_examples() {
        let m = ShiftModel::in_distribution(id(3), DVector::from_element(3, 1.0), 0.0, 0.0).unwrap();
        assert_relative_eq!(tilde_v(&m, 1.0, 2.0, 2.0).unwrap(), 1.0, epsilon = 1e-14);
        assert!(tilde_v(&m, 1.0, 1e-8, 1e-8).unwrap() < 1e-7);
        let scaled = m.with_sigma0(DMatrix::identity(3, 3) * 3.0).unwrap();
        assert_relative_eq!(tilde_v(&scaled, 1.0, 2.0, 2.0).unwrap(), 3.0, epsilon = 1e-14);
        assert!(matches!(tilde_v(&m, 0.5, 4.0, 4.0), Err(Error::BranchViolation { .. })));
    }

    #[test]
    fn path_examples() {
        let p = equivalence_path(&id(2), 0.5, Anchor::Psi(4.0), 5).unwrap();
        assert_relative_eq!(p.lambda_bar, 0.75, epsilon = 1e-12);
        assert_relative_eq!(p.mu_star, 1.0, epsilon = 1e-12);
        let q = equivalence_path(&id(2), 0.5, Anchor::Lambda(0.75), 5).unwrap();
        assert_relative_eq!(q.psi_bar, 4.0, epsilon = 1e-10);
        let d = equivalence_path(&id(2), 2.0, Anchor::Psi(2.0), 3).unwrap();
        let lmin = lambda_min(&id(2), 2.0).unwrap();
        assert_relative_eq!(d.lambda_bar, lmin, epsilon = 1e-12);
        assert!(d
            .points
            .iter()
            .all(|pt| (pt.lambda - lmin).abs() < 1e-12 && pt.psi == 2.0));
        assert!(matches!(
            equivalence_path(&id(2), 2.0, Anchor::Psi(1.0), 3),
            Err(Error::InvalidAnchor(_))
        ));
    }

    #[test]
    fn lambda_min_shape() {
        let s = Spectrum::new(vec![0.5, 1.0, 1.5, 3.0]).unwrap();
        let phis: Vec<f64> = (1..=100).map(|i| i as f64 * 0.1).collect();
        let values: Vec<f64> = phis.iter().map(|&phi| lambda_min(&s, phi).unwrap()).collect();
        assert!(values.iter().all(|&v| v <= 1e-14));
        for (w, phi) in values.windows(2).zip(&phis) {
            if *phi < 0.95 {
                assert!(w[1] > w[0]);
            } else if *phi > 0.95 {
                assert!(w[1] < w[0]);
            }
        }
    }

    fn spectrum_strategy() -> impl Strategy<Value = Spectrum> {
        prop::collection::vec(0.1f64..5.0, 2..20).prop_map(|mut v| {
            v.sort_by(f64::total_cmp);
            Spectrum::new(v).unwrap()
        })
    }

    proptest! {
        #[test]
        fn mu_is_monotone_and_on_branch(s in spectrum_strategy(), phi in 0.1f64..8.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let lmin = lambda_min(&s, phi).unwrap();
            let (l1, l2) = (lmin + 1e-3 + 5.0 * a.min(b), lmin + 2e-3 + 5.0 * a.max(b));
            let m1 = solve_mu(&s, l1, phi).unwrap();
            let m2 = solve_mu(&s, l2, phi).unwrap();
            prop_assert!(m1.mu < m2.mu);
            prop_assert!(m1.mu > mu_zero(&s, phi).unwrap());
            prop_assert!(m1.residual <= 1e-10 * (1.0 + l1.abs() + m1.mu.abs()));
            if l1 >= 0.0 {
                prop_assert!(m1.mu >= l1);
            }
        }

        #[test]
        fn mu_increases_with_aspect(s in spectrum_strategy(), phi in 0.1f64..4.0, extra in 0.01f64..4.0, lam in 0.01f64..3.0) {
            let a = solve_mu(&s, lam, phi).unwrap().mu;
            let b = solve_mu(&s, lam, phi + extra).unwrap().mu;
            prop_assert!(b > a);
        }

        #[test]
        fn ratio_lambda_over_mu_increases(s in spectrum_strategy(), phi in 0.1f64..4.0, a in 0.01f64..10.0, d in 0.01f64..10.0) {
            let r1 = a / solve_mu(&s, a, phi).unwrap().mu;
            let r2 = (a + d) / solve_mu(&s, a + d, phi).unwrap().mu;
            prop_assert!(r2 > r1);
        }

        #[test]
        fn path_has_constant_mu(s in spectrum_strategy(), phi in 0.1f64..4.0, extra in 0.0f64..6.0) {
            let path = equivalence_path(&s, phi, Anchor::Psi(phi + extra), 7).unwrap();
            for pt in &path.points {
                let mu = mu_at(&s, pt.lambda, pt.psi).unwrap();
                prop_assert!((mu - path.mu_star).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn ratio_limits() {
        let s = Spectrum::new(vec![0.5, 1.0, 2.0]).unwrap();
        // Near λ = 0 the fixed point gives λ ≈ μ(1 − φ) for φ < 1, so the ratio tends to 1 − φ.
        let under = 1e-9 / solve_mu(&s, 1e-9, 0.5).unwrap().mu;
        assert!((under - 0.5).abs() < 1e-6);
        let critical = 1e-9 / solve_mu(&s, 1e-9, 1.0).unwrap().mu;
        assert!(critical < 1e-3);
        let over = 1e-9 / solve_mu(&s, 1e-9, 2.0).unwrap().mu;
        assert!(over < 1e-8);
        let big = 1e6 / solve_mu(&s, 1e6, 0.5).unwrap().mu;
        assert!((big - 1.0).abs() < 1e-5);
    }
}
