//! Deterministic equivalents of the out-of-distribution ridge risk, their
//! μ-derivatives, and optimizers over the penalty λ and subsample ratio ψ.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixed_point::{lambda_min, mu_at, mu_zero, solve_mu, tilde_v};
use crate::model::ShiftModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskDecomposition {
    pub bias: f64,
    pub variance: f64,
    /// Regression-shift cross term 2μ·β'(Σ+μI)⁻¹Σ₀(β₀−β); sign-indefinite.
    pub shift: f64,
    /// (β₀−β)'Σ₀(β₀−β) + σ₀².
    pub kappa2: f64,
    pub total: f64,
}

impl RiskDecomposition {
    fn new(bias: f64, variance: f64, shift: f64, kappa2: f64) -> Self {
        Self {
            bias,
            variance,
            shift,
            kappa2,
            total: bias + variance + shift + kappa2,
        }
    }
}

/// Risk equivalent at implicit regularization `mu` for data aspect `phi`.
///
/// Plain ridge and the full ensemble share this map; they differ only in the
/// aspect at which μ is solved. `mu = +∞` gives the null-estimator limit.
pub fn risk_at_mu(model: &ShiftModel, mu: f64, phi: f64) -> Result<RiskDecomposition> {
    let kappa2 = model.kappa2();
    if mu == f64::INFINITY {
        let ones = vec![1.0; model.p()];
        let bias = model.sigma0_quad(&ones, &ones);
        let shift = 2.0 * model.sigma0_shift(&ones);
        return Ok(RiskDecomposition::new(bias, 0.0, shift, kappa2));
    }
    let tv = tilde_v(model, mu, phi, phi)?;
    let r = model.spectrum().eigenvalues();
    let d: Vec<f64> = r.iter().map(|&ri| 1.0 / (ri + mu)).collect();
    let r_d2: Vec<f64> = r.iter().zip(&d).map(|(ri, di)| ri * di * di).collect();
    let bias = mu * mu * (tv * model.signal_quad(&r_d2) + model.sigma0_quad(&d, &d));
    let variance = model.sigma2() * tv;
    let shift = 2.0 * mu * model.sigma0_shift(&d);
    Ok(RiskDecomposition::new(bias, variance, shift, kappa2))
}

/// Ridge risk equivalent 𝓡(λ, φ).
pub fn risk_decomposition(model: &ShiftModel, lambda: f64, phi: f64) -> Result<RiskDecomposition> {
    let mu = solve_mu(model.spectrum(), lambda, phi)?.mu;
    risk_at_mu(model, mu, phi)
}

/// Full-ensemble risk equivalent 𝓡(λ; φ, ψ) for subsample ratio ψ ∈ [φ, ∞].
pub fn ensemble_risk(model: &ShiftModel, lambda: f64, phi: f64, psi: f64) -> Result<RiskDecomposition> {
    if !(psi >= phi) {
        return Err(Error::InvalidSubsampleRatio { psi, phi });
    }
    if psi == f64::INFINITY {
        return risk_at_mu(model, f64::INFINITY, phi);
    }
    let mu = if psi == phi {
        solve_mu(model.spectrum(), lambda, phi)?.mu
    } else {
        mu_at(model.spectrum(), lambda, psi)?
    };
    risk_at_mu(model, mu, phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MuDerivatives {
    pub bias: f64,
    pub variance: f64,
    pub shift: f64,
}

impl MuDerivatives {
    pub fn total(&self) -> f64 {
        self.bias + self.variance + self.shift
    }
}

/// ∂𝓑/∂μ, ∂𝓥/∂μ and ∂𝓢/∂μ at fixed aspect `phi`.
pub fn risk_mu_derivative(model: &ShiftModel, mu: f64, phi: f64) -> Result<MuDerivatives> {
    let r = model.spectrum().eigenvalues();
    let p = r.len() as f64;
    let s0 = model.sigma0_diag();
    let d: Vec<f64> = r.iter().map(|&ri| 1.0 / (ri + mu)).collect();
    let d2: Vec<f64> = d.iter().map(|x| x * x).collect();
    let mean = |f: &dyn Fn(usize) -> f64| (0..r.len()).map(f).sum::<f64>() / p;

    let qv_s0 = phi * mean(&|i| s0[i] * r[i] * d2[i]);
    let dqv_s0 = -2.0 * phi * mean(&|i| s0[i] * r[i] * d2[i] * d[i]);
    let qv_s = phi * mean(&|i| r[i] * r[i] * d2[i]);
    let dqv_s = -2.0 * phi * mean(&|i| r[i] * r[i] * d2[i] * d[i]);
    let den = 1.0 - qv_s;
    if !(den > 0.0) {
        return Err(Error::BranchViolation { denominator: den });
    }

    let r_d2: Vec<f64> = r.iter().zip(&d2).map(|(ri, x)| ri * x).collect();
    let r_d3: Vec<f64> = r_d2.iter().zip(&d).map(|(x, y)| x * y).collect();
    let qb_s = mu * mu * model.signal_quad(&r_d2);
    let dqb_s = 2.0 * mu * model.signal_quad(&r_d2) - 2.0 * mu * mu * model.signal_quad(&r_d3);
    let dqb_s0 = 2.0 * mu * model.sigma0_quad(&d, &d) - 2.0 * mu * mu * model.sigma0_quad(&d2, &d);

    let tv = qv_s0 / den;
    let dtv = (dqv_s0 * den + qv_s0 * dqv_s) / (den * den);
    let bias = dtv * qb_s + tv * dqb_s + dqb_s0;
    let variance = model.sigma2() * dtv;
    // d/dμ of 2μ·(Dβ)'Σ₀(β₀−β) collapses to 2·(ΣD²β)'Σ₀(β₀−β).
    let shift = 2.0 * model.sigma0_shift(&r_d2);
    Ok(MuDerivatives { bias, variance, shift })
}

/// dμ/dλ = 1 / (1 − φ·tr̄[Σ²(Σ+μI)⁻²]) at aspect `aspect`.
pub fn dmu_dlambda(model: &ShiftModel, mu: f64, aspect: f64) -> f64 {
    let slope = 1.0 - aspect * model.spectrum().mean_of(|r| (r / (r + mu)).powi(2));
    1.0 / slope
}

/// ∂𝓡/∂λ for plain ridge.
pub fn risk_lambda_derivative(model: &ShiftModel, lambda: f64, phi: f64) -> Result<f64> {
    let mu = solve_mu(model.spectrum(), lambda, phi)?.mu;
    Ok(risk_mu_derivative(model, mu, phi)?.total() * dmu_dlambda(model, mu, phi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    Interior,
    AtLambdaMin,
    AtInfinityNull,
    /// Minimum sits on a user-imposed lower bound for λ.
    AtFloor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalMinimum {
    pub lambda: f64,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalPoint {
    pub lambda_star: f64,
    pub risk_star: f64,
    pub mu_star: f64,
    pub boundary: Boundary,
    pub degenerate: bool,
    pub lambda_min: f64,
    pub local_minima: Vec<LocalMinimum>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// Window for t = λ − λ_min(φ), in units of (1 + |λ_min|).
    pub t_lo: f64,
    pub t_hi: f64,
    pub points: usize,
    /// Optional lower bound on λ (for example 0 for a nonnegative search).
    pub lambda_floor: Option<f64>,
    /// Golden-section stopping width in log t.
    pub log_tol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            t_lo: 1e-6,
            t_hi: 1e6,
            points: 240,
            lambda_floor: None,
            log_tol: 1e-10,
        }
    }
}

const EDGE_GUARD: f64 = 1e-8;
const MAX_REFINED: usize = 8;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn golden_min(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol * (1.0 + c.abs()) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Indices of grid local minima, best first.
fn local_minima(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n)
        .filter(|&i| {
            let v = values[i];
            if !v.is_finite() {
                return false;
            }
            let left = if i == 0 { f64::INFINITY } else { values[i - 1] };
            let right = if i + 1 == n { f64::INFINITY } else { values[i + 1] };
            v <= left && v <= right && (v < left || v < right)
        })
        .collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

/// λ* ∈ argmin over λ > λ_min(φ) of the ridge risk equivalent.
pub fn optimal_lambda(model: &ShiftModel, phi: f64, opts: &SearchOptions) -> Result<OptimalPoint> {
    if opts.points < 3 || !(opts.t_lo > 0.0 && opts.t_hi > opts.t_lo) {
        return Err(Error::InvalidParameter(
            "search window needs t_lo > 0, t_hi > t_lo and at least 3 points".into(),
        ));
    }
    let spectrum = model.spectrum();
    let lmin = lambda_min(spectrum, phi)?;
    let scale = 1.0 + lmin.abs();
    let floor = opts.lambda_floor.unwrap_or(f64::NEG_INFINITY);
    let lam_of = |u: f64| (lmin + u.exp()).max(floor);
    let eval = |u: f64| -> f64 {
        risk_decomposition(model, lam_of(u), phi)
            .map(|r| r.total)
            .ok()
            .filter(|v| v.is_finite())
            .unwrap_or(f64::INFINITY)
    };

    let floor_t = opts.lambda_floor.map(|f| f - lmin).filter(|t| *t > opts.t_lo * scale);
    let t_lo = floor_t.unwrap_or(opts.t_lo * scale);
    let t_hi = (opts.t_hi * scale).max(t_lo * 10.0);
    let grid = log_grid(t_lo, t_hi, opts.points);
    let values: Vec<f64> = grid.par_iter().map(|&u| eval(u)).collect();
    let u_guard = floor_t.unwrap_or(EDGE_GUARD * scale).ln();

    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::SolverFailure {
            iterations: opts.points,
            x: lmin,
            residual: f64::NAN,
        });
    }
    let vmax = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let vmin = finite.iter().copied().fold(f64::INFINITY, f64::min);
    if vmax - vmin <= 1e-14 * (1.0 + vmax.abs()) {
        let lambda = lam_of(grid[0]);
        return Ok(OptimalPoint {
            lambda_star: lambda,
            risk_star: values[0],
            mu_star: solve_mu(spectrum, lambda, phi)?.mu,
            boundary: if floor_t.is_some() {
                Boundary::AtFloor
            } else {
                Boundary::Interior
            },
            degenerate: true,
            lambda_min: lmin,
            local_minima: Vec::new(),
        });
    }

    let last = grid.len() - 1;
    let mut minima: Vec<LocalMinimum> = Vec::new();
    let mut best_u = f64::NAN;
    let mut best = f64::INFINITY;
    for &i in local_minima(&values).iter().take(MAX_REFINED) {
        let a = if i == 0 { u_guard } else { grid[i - 1] };
        let b = if i == last {
            grid[i] + (grid[i] - grid[i - 1])
        } else {
            grid[i + 1]
        };
        let (mut u, mut v) = golden_min(&eval, a.min(grid[i]), b, opts.log_tol);
        if values[i] < v {
            u = grid[i];
            v = values[i];
        }
        minima.push(LocalMinimum {
            lambda: lam_of(u),
            risk: v,
        });
        if v < best {
            best = v;
            best_u = u;
        }
    }

    let null = risk_at_mu(model, f64::INFINITY, phi)?.total;
    let decreasing_tail = values[last] < values[last - 1];
    if decreasing_tail && null < best {
        return Ok(OptimalPoint {
            lambda_star: f64::INFINITY,
            risk_star: null,
            mu_star: f64::INFINITY,
            boundary: Boundary::AtInfinityNull,
            degenerate: false,
            lambda_min: lmin,
            local_minima: minima,
        });
    }

    let lambda_star = lam_of(best_u);
    let near_lower = best_u - u_guard <= 1e-6 * (1.0 + u_guard.abs());
    let boundary = match (near_lower, floor_t.is_some()) {
        (true, true) => Boundary::AtFloor,
        (true, false) => Boundary::AtLambdaMin,
        _ => Boundary::Interior,
    };
    Ok(OptimalPoint {
        lambda_star,
        risk_star: best,
        mu_star: solve_mu(spectrum, lambda_star, phi)?.mu,
        boundary,
        degenerate: false,
        lambda_min: lmin,
        local_minima: minima,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiOptimum {
    pub psi_star: f64,
    pub risk_star: f64,
}

/// ψ* ∈ argmin over ψ ∈ [φ, ∞] of the ensemble risk at fixed λ.
///
/// The ensemble risk depends on ψ only through μ(λ, ψ), and for fixed λ the
/// fixed-point equation gives ψ = (μ − λ)/(μ·tr̄[Σ(Σ+μI)⁻¹]) in closed form.
/// The search therefore scans μ, keeping points whose ψ is at least φ and on
/// the admissible branch, plus the endpoints ψ = φ and ψ = ∞.
pub fn optimal_psi(model: &ShiftModel, lambda: f64, phi: f64) -> Result<PsiOptimum> {
    if !(phi > 0.0 && phi.is_finite() && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need finite lambda and positive finite phi, got {lambda}, {phi}"
        )));
    }
    let spectrum = model.spectrum();
    let mu_lo = mu_zero(spectrum, phi)?;
    let scale = 1.0 + mu_lo.abs();
    let psi_of = |mu: f64| -> Option<f64> {
        if mu == 0.0 {
            return None;
        }
        let m1 = spectrum.mean_of(|r| r / (r + mu));
        let psi = (mu - lambda) / (mu * m1);
        let branch = psi * spectrum.mean_of(|r| (r / (r + mu)).powi(2));
        (psi.is_finite() && psi >= phi && branch <= 1.0 + 1e-12).then_some(psi)
    };
    let eval_u = |u: f64| -> f64 {
        let mu = mu_lo + u.exp();
        if psi_of(mu).is_none() {
            return f64::INFINITY;
        }
        risk_at_mu(model, mu, phi)
            .map(|r| r.total)
            .ok()
            .filter(|v| v.is_finite())
            .unwrap_or(f64::INFINITY)
    };
    let grid = log_grid(1e-12 * scale, 1e8 * scale, 481);
    let values: Vec<f64> = grid.par_iter().map(|&u| eval_u(u)).collect();

    let endpoint = |psi: f64| {
        ensemble_risk(model, lambda, phi, psi)
            .map(|r| r.total)
            .ok()
            .filter(|v| v.is_finite())
            .unwrap_or(f64::INFINITY)
    };
    let mut best = PsiOptimum {
        psi_star: phi,
        risk_star: endpoint(phi),
    };
    let at_inf = endpoint(f64::INFINITY);
    if at_inf < best.risk_star {
        best = PsiOptimum {
            psi_star: f64::INFINITY,
            risk_star: at_inf,
        };
    }
    let last = grid.len() - 1;
    for &i in local_minima(&values).iter().take(MAX_REFINED) {
        let a = if i == 0 { grid[0] - 5.0 } else { grid[i - 1] };
        let b = if i == last { grid[i] } else { grid[i + 1] };
        let (mut u, mut v) = golden_min(&eval_u, a, b, 1e-12);
        if values[i] < v {
            u = grid[i];
            v = values[i];
        }
        if v < best.risk_star {
            if let Some(psi) = psi_of(mu_lo + u.exp()) {
                best = PsiOptimum {
                    psi_star: psi,
                    risk_star: v,
                };
            }
        }
    }
    if !best.risk_star.is_finite() {
        return Err(Error::SolverFailure {
            iterations: grid.len(),
            x: lambda,
            residual: f64::NAN,
        });
    }
    Ok(best)
}

/// Optimal risk for an isotropic signal: α²μ*·tr̄[Σ₀(Σ+μ*I)⁻¹] + σ₀² with μ* = μ(φ/SNR, φ).
pub fn isotropic_optimal_risk(model: &ShiftModel, phi: f64) -> Result<f64> {
    let alpha2 = match model.signal() {
        crate::model::Signal::Isotropic { alpha2 } => *alpha2,
        _ => {
            return Err(Error::InvalidModel(
                "isotropic_optimal_risk needs an isotropic signal".into(),
            ))
        }
    };
    let sigma2 = model.sigma2();
    if !(alpha2 > 0.0 && sigma2 > 0.0) {
        return Err(Error::InvalidModel("SNR must lie in (0, inf)".into()));
    }
    let mu = solve_mu(model.spectrum(), phi * sigma2 / alpha2, phi)?.mu;
    let r = model.spectrum().eigenvalues();
    let trace = r
        .iter()
        .zip(model.sigma0_diag().iter())
        .map(|(ri, s)| s / (ri + mu))
        .sum::<f64>()
        / r.len() as f64;
    Ok(alpha2 * mu * trace + model.sigma0_sq())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Signal, Spectrum};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn unit_model(p: usize, beta0_factor: f64, sigma2: f64) -> ShiftModel {
        let mut beta = DVector::zeros(p);
        beta[0] = 1.0;
        let beta0 = &beta * beta0_factor;
        ShiftModel::new(
            Spectrum::identity(p),
            DMatrix::identity(p, p),
            Signal::Deterministic { beta, beta0 },
            sigma2,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn identity_ridgeless_overparameterized() {
        let m = unit_model(4, 1.0, 0.3);
        let r = risk_decomposition(&m, 0.0, 2.0).unwrap();
        assert_relative_eq!(r.bias, 0.5, epsilon = 1e-12);
        assert_relative_eq!(r.variance, 0.3, epsilon = 1e-12);
        assert_eq!(r.shift, 0.0);
        assert_eq!(r.kappa2, 0.0);
        // Classical ridgeless risk α²(1 − 1/φ) + σ²/(φ − 1).
        assert_relative_eq!(r.total, 0.5 + 0.3, epsilon = 1e-12);
    }

    #[test]
    fn regression_shift_cross_term() {
        let m = unit_model(4, 2.0, 0.0);
        let r = risk_decomposition(&m, 0.0, 2.0).unwrap();
        assert_relative_eq!(r.shift, 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.kappa2, 1.0, epsilon = 1e-12);
        assert_eq!(r.total, r.bias + r.variance + r.shift + r.kappa2);
    }

    #[test]
    fn ensemble_reduces_to_ridge() {
        let m = unit_model(5, 2.0, 0.5);
        let a = risk_decomposition(&m, 0.3, 0.5).unwrap();
        let b = ensemble_risk(&m, 0.3, 0.5, 0.5).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            ensemble_risk(&m, 0.3, 0.5, 0.4),
            Err(Error::InvalidSubsampleRatio { .. })
        ));
    }

    #[test]
    fn ridgeless_ensemble_finds_narrow_minimum() {
        // Low noise puts the optimum at ψ slightly above 1, past the plateau μ(0, ψ) = 0.
        let m = unit_model(50, 1.0, 0.01);
        let phi = 0.3;
        let ens = optimal_psi(&m, 0.0, phi).unwrap();
        let opts = SearchOptions {
            lambda_floor: Some(0.0),
            ..SearchOptions::default()
        };
        let ridge = optimal_lambda(&m, phi, &opts).unwrap();
        assert_relative_eq!(ens.risk_star, ridge.risk_star, max_relative = 1e-9);
        assert!(ens.psi_star > 1.0);
        let at_star = ensemble_risk(&m, 0.0, phi, ens.psi_star).unwrap().total;
        assert_relative_eq!(at_star, ens.risk_star, max_relative = 1e-9);
    }

    #[test]
    fn ensemble_at_infinity_is_null_risk() {
        let m = unit_model(5, 2.0, 0.5).with_noise(0.5, 0.2).unwrap();
        let r = ensemble_risk(&m, 0.1, 0.5, f64::INFINITY).unwrap();
        assert_relative_eq!(r.total, m.null_risk(), epsilon = 1e-12);
        // β'Σ₀β − 2β'Σ₀(β−β₀) + κ².
        assert_relative_eq!(r.total, 1.0 + 2.0 + 1.0 + 0.2, epsilon = 1e-12);
    }

    #[test]
    fn contour_pair_has_equal_risk() {
        let m = unit_model(3, 1.0, 0.7);
        let lmin4 = lambda_min(m.spectrum(), 4.0).unwrap();
        let a = ensemble_risk(&m, 0.75, 0.5, 0.5).unwrap().total;
        let b = ensemble_risk(&m, lmin4, 0.5, 4.0).unwrap().total;
        assert_relative_eq!(a, b, epsilon = 1e-8);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let (spectrum, w) = crate::model::build_ar1(40, 0.5).unwrap();
        let beta = w.column(0) + w.column(39) * 0.5;
        let beta0 = &beta * 1.5 + w.column(3) * 0.2;
        let sigma0 = DMatrix::from_fn(40, 40, |i, j| 0.3f64.powi((i as i32 - j as i32).abs()));
        let m = ShiftModel::new(spectrum, sigma0, Signal::Deterministic { beta, beta0 }, 0.4, 0.1).unwrap();
        let phi = 2.0;
        let mu = solve_mu(m.spectrum(), 0.1, phi).unwrap().mu;
        let d = risk_mu_derivative(&m, mu, phi).unwrap();
        let h = 1e-5 * (1.0 + mu);
        let up = risk_at_mu(&m, mu + h, phi).unwrap();
        let dn = risk_at_mu(&m, mu - h, phi).unwrap();
        assert_relative_eq!(d.bias, (up.bias - dn.bias) / (2.0 * h), max_relative = 1e-6);
        assert_relative_eq!(d.variance, (up.variance - dn.variance) / (2.0 * h), max_relative = 1e-6);
        assert_relative_eq!(d.shift, (up.shift - dn.shift) / (2.0 * h), max_relative = 1e-6);
        assert!(d.variance < 0.0);
    }

    #[test]
    fn no_shift_has_zero_shift_derivative() {
        let m = unit_model(4, 1.0, 0.3);
        assert_eq!(risk_mu_derivative(&m, 0.7, 2.0).unwrap().shift, 0.0);
    }

    #[test]
    fn isotropic_stationary_point() {
        let m = ShiftModel::new(
            Spectrum::identity(10),
            DMatrix::identity(10, 10),
            Signal::Isotropic { alpha2: 2.0 },
            0.5,
            0.0,
        )
        .unwrap();
        let phi = 1.5;
        let g = risk_lambda_derivative(&m, phi * 0.5 / 2.0, phi).unwrap();
        assert!(g.abs() < 1e-8);
    }

    #[test]
    fn isotropic_optimal_risk_examples() {
        let m = ShiftModel::new(
            Spectrum::identity(6),
            DMatrix::identity(6, 6),
            Signal::Isotropic { alpha2: 1.0 },
            1.0,
            1.0,
        )
        .unwrap();
        let mu = (1.0 + 5f64.sqrt()) / 2.0;
        assert_relative_eq!(
            isotropic_optimal_risk(&m, 1.0).unwrap(),
            1.0 + mu / (1.0 + mu),
            epsilon = 1e-12
        );
        let opt = optimal_lambda(&m, 1.0, &SearchOptions::default()).unwrap();
        assert_relative_eq!(opt.lambda_star, 1.0, max_relative = 1e-4);
        assert_relative_eq!(
            opt.risk_star,
            isotropic_optimal_risk(&m, 1.0).unwrap(),
            max_relative = 1e-6
        );

        let low_snr = m.with_noise(1e6, 0.0).unwrap();
        assert_relative_eq!(isotropic_optimal_risk(&low_snr, 1.0).unwrap(), 1.0, max_relative = 1e-5);

        let det = unit_model(4, 1.0, 1.0);
        assert!(matches!(isotropic_optimal_risk(&det, 1.0), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn degenerate_flat_risk() {
        let m = unit_model(4, 1.0, 0.0);
        let flat = ShiftModel::new(
            m.spectrum().clone(),
            DMatrix::identity(4, 4),
            Signal::Deterministic {
                beta: DVector::zeros(4),
                beta0: DVector::zeros(4),
            },
            0.0,
            0.0,
        )
        .unwrap();
        let opt = optimal_lambda(&flat, 2.0, &SearchOptions::default()).unwrap();
        assert!(opt.degenerate);
    }

    #[test]
    fn floor_restricts_search() {
        let m = unit_model(4, 1.0, 0.0);
        let opts = SearchOptions {
            lambda_floor: Some(0.0),
            ..SearchOptions::default()
        };
        // Noiseless identity model at φ = 0.5 is minimized at λ = 0 (zero risk).
        let opt = optimal_lambda(&m, 0.5, &opts).unwrap();
        assert!(opt.lambda_star >= 0.0);
        assert!(opt.risk_star < 1e-10);
    }
}
