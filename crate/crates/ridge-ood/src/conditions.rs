//! Alignment and balance conditions that decide the sign of the optimal
//! ridge penalty, and a router that predicts that sign from a model.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixed_point::solve_mu;
use crate::model::ShiftModel;
use crate::risk::risk_mu_derivative;

const STRICT_TOL: f64 = 1e-12;

/// Log-spaced μ grid used to check "for all μ" statements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuGrid {
    pub points: usize,
    /// Upper end of the grid as a multiple of r_max.
    pub cap_factor: f64,
    /// Smallest positive μ probed.
    pub floor: f64,
}

impl Default for MuGrid {
    fn default() -> Self {
        Self {
            points: 400,
            cap_factor: 1e4,
            floor: 1e-8,
        }
    }
}

impl MuGrid {
    fn values(&self, lo: f64, hi: f64) -> Vec<f64> {
        let lo = lo.max(self.floor);
        let n = self.points.max(2);
        let (a, b) = (lo.ln(), hi.max(lo).ln());
        (0..n)
            .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionId {
    InDistAlignment,
    NoiselessForm,
    CovShiftOverparam,
    RegShiftAlignment,
    RegShiftGeneralBalance,
    StrictAlignmentImplication,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridInfo {
    pub mu_lo: f64,
    pub mu_hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub condition: ConditionId,
    pub holds: bool,
    /// Smallest LHS − RHS over the checked points.
    pub worst_margin: f64,
    /// μ at which the worst margin occurs, when the check is over μ.
    pub worst_mu: Option<f64>,
    pub grid: Option<GridInfo>,
}

impl ConditionReport {
    fn from_margins(condition: ConditionId, mus: &[f64], margins: &[f64]) -> Self {
        let (idx, worst) = margins
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((0, f64::NAN));
        Self {
            condition,
            holds: margins.iter().all(|m| *m > STRICT_TOL),
            worst_margin: worst,
            worst_mu: mus.get(idx).copied(),
            grid: Some(GridInfo {
                mu_lo: mus.first().copied().unwrap_or(f64::NAN),
                mu_hi: mus.last().copied().unwrap_or(f64::NAN),
                points: mus.len(),
            }),
        }
    }

    fn single(condition: ConditionId, margin: f64, mu: Option<f64>) -> Self {
        Self {
            condition,
            holds: margin > STRICT_TOL,
            worst_margin: margin,
            worst_mu: mu,
            grid: None,
        }
    }
}

fn mu_at_zero_penalty(model: &ShiftModel, phi: f64) -> Result<f64> {
    if phi <= 1.0 {
        return Ok(0.0);
    }
    Ok(solve_mu(model.spectrum(), 0.0, phi)?.mu)
}

fn in_dist_margin(model: &ShiftModel, mu: f64) -> f64 {
    let r = model.spectrum().eigenvalues();
    let v = 1.0 / mu;
    let w2: Vec<f64> = r.iter().map(|&ri| ri / (v * ri + 1.0).powi(2)).collect();
    let w3: Vec<f64> = r.iter().map(|&ri| ri / (v * ri + 1.0).powi(3)).collect();
    let sigma2 = model.sigma2();
    let lhs = (model.signal_quad(&w2) + sigma2) / (model.signal_quad(&w3) + sigma2);
    let rhs = w2.iter().sum::<f64>() / w3.iter().sum::<f64>();
    lhs - rhs
}

/// In-distribution alignment: for all v ∈ (0, 1/μ(0,φ)),
/// (β'Σ(vΣ+I)⁻²β + σ²)/(β'Σ(vΣ+I)⁻³β + σ²) > tr̄[Σ(vΣ+I)⁻²]/tr̄[Σ(vΣ+I)⁻³].
pub fn check_in_dist_alignment(model: &ShiftModel, phi: f64, grid: &MuGrid) -> Result<ConditionReport> {
    if !(phi > 1.0) {
        return Err(Error::WrongRegime(format!("alignment check needs phi > 1, got {phi}")));
    }
    let lo = mu_at_zero_penalty(model, phi)?;
    let mus = grid.values(lo, grid.cap_factor * model.spectrum().r_max());
    let margins: Vec<f64> = mus.iter().map(|&mu| in_dist_margin(model, mu)).collect();
    Ok(ConditionReport::from_margins(
        ConditionId::InDistAlignment,
        &mus,
        &margins,
    ))
}

/// Noiseless log-derivative form of the alignment condition.
///
/// With h(μ, M) = log tr̄[M(Σ+μI)⁻²], M ∈ {Σββ', Σ}, the condition reads
/// ∂h(Σββ')/∂v < ∂h(Σ)/∂v in v = 1/μ. Derivatives come from a five-point
/// stencil in log μ; the margin is reported per unit of log v.
pub fn check_noiseless_form(model: &ShiftModel, phi: f64, grid: &MuGrid) -> Result<ConditionReport> {
    if !(phi > 1.0) {
        return Err(Error::WrongRegime(format!("alignment check needs phi > 1, got {phi}")));
    }
    let r = model.spectrum().eigenvalues();
    let h_signal = |mu: f64| {
        let w: Vec<f64> = r.iter().map(|&ri| ri / (ri + mu).powi(2)).collect();
        model.signal_quad(&w).ln()
    };
    let h_sigma = |mu: f64| model.spectrum().mean_of(|ri| ri / (ri + mu).powi(2)).ln();
    let d_log = |h: &dyn Fn(f64) -> f64, mu: f64| {
        let step = 1e-3;
        let at = |k: f64| h(mu * (k * step).exp());
        (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * step)
    };
    let lo = mu_at_zero_penalty(model, phi)?;
    let mus = grid.values(lo, grid.cap_factor * model.spectrum().r_max());
    // ∂/∂log v = −∂/∂log μ, so RHS − LHS in v equals the log-μ slope gap below.
    let margins: Vec<f64> = mus
        .iter()
        .map(|&mu| d_log(&h_signal, mu) - d_log(&h_sigma, mu))
        .collect();
    Ok(ConditionReport::from_margins(
        ConditionId::NoiselessForm,
        &mus,
        &margins,
    ))
}

/// Covariate shift with Σ = I in the overparameterized regime:
/// β'Σ₀β > tr̄[Σ₀](‖β‖² + ((1+μ)/μ)³σ²) at μ = μ(0,φ) = φ − 1.
pub fn check_cov_shift_overparam(model: &ShiftModel, phi: f64) -> Result<ConditionReport> {
    if !model.spectrum().is_identity(1e-12) {
        return Err(Error::InvalidModel(
            "covariate-shift condition needs an identity train covariance".into(),
        ));
    }
    if !(phi > 1.0) {
        return Err(Error::WrongRegime(format!(
            "covariate-shift condition needs phi > 1, got {phi}"
        )));
    }
    let p = model.p();
    let mu = phi - 1.0;
    let ones = vec![1.0; p];
    let lhs = model.sigma0_quad(&ones, &ones);
    let tr_sigma0 = model.sigma0_diag().sum() / p as f64;
    let rhs = tr_sigma0 * (model.alpha2() + ((1.0 + mu) / mu).powi(3) * model.sigma2());
    Ok(ConditionReport::single(
        ConditionId::CovShiftOverparam,
        lhs - rhs,
        Some(mu),
    ))
}

/// Regression-shift alignment: β'Σ²(Σ+μI)⁻²β₀ > β'Σ²(Σ+μI)⁻²β for μ ∈ {0} ∪ grid.
pub fn check_reg_shift_alignment(model: &ShiftModel, grid: &MuGrid) -> Result<ConditionReport> {
    if !model.has_regression_shift() {
        return Err(Error::DegenerateShift);
    }
    let r = model.spectrum().eigenvalues();
    let mut mus = vec![0.0];
    mus.extend(grid.values(grid.floor, grid.cap_factor * model.spectrum().r_max()));
    let margins: Vec<f64> = mus
        .iter()
        .map(|&mu| {
            let w: Vec<f64> = r.iter().map(|&ri| (ri / (ri + mu)).powi(2)).collect();
            model.signal_cross(&w) - model.signal_quad(&w)
        })
        .collect();
    Ok(ConditionReport::from_margins(
        ConditionId::RegShiftAlignment,
        &mus,
        &margins,
    ))
}

fn balance_grid(model: &ShiftModel, phi: f64, grid: &MuGrid) -> Result<Vec<f64>> {
    let lo = mu_at_zero_penalty(model, phi)?;
    let mut mus = vec![lo];
    mus.extend(
        grid.values(lo, grid.cap_factor * model.spectrum().r_max())
            .into_iter()
            .filter(|&mu| mu > lo),
    );
    Ok(mus)
}

/// General balance: ∂𝓢/∂μ + ∂𝓥/∂μ > 0 for all μ ≥ μ(0,φ).
pub fn check_reg_shift_general_balance(model: &ShiftModel, phi: f64, grid: &MuGrid) -> Result<ConditionReport> {
    let mus = balance_grid(model, phi, grid)?;
    let margins = mus
        .iter()
        .map(|&mu| risk_mu_derivative(model, mu, phi).map(|d| d.shift + d.variance))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ConditionReport::from_margins(
        ConditionId::RegShiftGeneralBalance,
        &mus,
        &margins,
    ))
}

fn bias_nondecreasing(model: &ShiftModel, phi: f64, grid: &MuGrid) -> Result<bool> {
    for mu in balance_grid(model, phi, grid)? {
        if risk_mu_derivative(model, mu, phi)?.bias < 0.0 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Strict-alignment diagnostic tr̄[ΣB] − tr̄[Σ]·tr̄[B] with B = ββ'.
pub fn check_strict_alignment_implication(model: &ShiftModel) -> ConditionReport {
    let r = model.spectrum().eigenvalues();
    let p = r.len() as f64;
    let tr_sigma_b = model.signal_quad(r) / p;
    let tr_sigma = r.iter().sum::<f64>() / p;
    let tr_b = model.alpha2() / p;
    ConditionReport::single(
        ConditionId::StrictAlignmentImplication,
        tr_sigma_b - tr_sigma * tr_b,
        None,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Underparameterized,
    Overparameterized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictedSign {
    Nonnegative,
    Negative,
    Inconclusive,
}

/// Which sign rule produced the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignRule {
    IsotropicSignal,
    InDistributionUnderparameterized,
    InDistributionAlignment,
    CovariateShiftUnderparameterized,
    CovariateShiftEstimationRisk,
    CovariateShiftAlignment,
    RegressionShiftBalance,
    RegressionShiftAlignment,
    NoRuleApplies,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignPrediction {
    pub regime: Regime,
    pub predicted_sign: PredictedSign,
    pub rule: SignRule,
    /// λ* = φ/SNR when the signal is isotropic.
    pub closed_form_lambda: Option<f64>,
    pub reports: Vec<ConditionReport>,
}

/// Predicts the sign of λ* by routing the model through the known sign rules.
pub fn predict_sign(model: &ShiftModel, phi: f64) -> Result<SignPrediction> {
    predict_sign_with(model, phi, &MuGrid::default())
}

pub fn predict_sign_with(model: &ShiftModel, phi: f64, grid: &MuGrid) -> Result<SignPrediction> {
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "phi = {phi} must be positive and finite"
        )));
    }
    let regime = if phi < 1.0 {
        Regime::Underparameterized
    } else {
        Regime::Overparameterized
    };
    let mut out = SignPrediction {
        regime,
        predicted_sign: PredictedSign::Inconclusive,
        rule: SignRule::NoRuleApplies,
        closed_form_lambda: None,
        reports: Vec::new(),
    };
    let decide = |out: &mut SignPrediction, sign, rule| {
        out.predicted_sign = sign;
        out.rule = rule;
    };

    if model.is_isotropic() {
        let alpha2 = model.alpha2();
        out.closed_form_lambda = (alpha2 > 0.0).then(|| phi * model.sigma2() / alpha2);
        decide(&mut out, PredictedSign::Nonnegative, SignRule::IsotropicSignal);
        return Ok(out);
    }

    let covariate = model.has_covariate_shift();
    if !model.has_regression_shift() {
        if phi < 1.0 {
            let rule = if covariate {
                SignRule::CovariateShiftUnderparameterized
            } else {
                SignRule::InDistributionUnderparameterized
            };
            decide(&mut out, PredictedSign::Nonnegative, rule);
        } else if phi > 1.0 && !covariate {
            let report = check_in_dist_alignment(model, phi, grid)?;
            if report.holds {
                decide(&mut out, PredictedSign::Negative, SignRule::InDistributionAlignment);
            }
            out.reports.push(report);
        } else if phi > 1.0 && model.sigma0_is_identity() {
            decide(
                &mut out,
                PredictedSign::Nonnegative,
                SignRule::CovariateShiftEstimationRisk,
            );
        } else if phi > 1.0 && model.spectrum().is_identity(1e-12) {
            let report = check_cov_shift_overparam(model, phi)?;
            if report.holds {
                decide(&mut out, PredictedSign::Negative, SignRule::CovariateShiftAlignment);
            }
            out.reports.push(report);
        }
        return Ok(out);
    }

    let balance = check_reg_shift_general_balance(model, phi, grid)?;
    let balance_applies = balance.holds && (!covariate || bias_nondecreasing(model, phi, grid)?);
    out.reports.push(balance);
    if balance_applies {
        decide(&mut out, PredictedSign::Negative, SignRule::RegressionShiftBalance);
        return Ok(out);
    }
    if phi > 1.0 && !covariate {
        let alignment = check_in_dist_alignment(model, phi, grid)?;
        let shift_alignment = check_reg_shift_alignment(model, grid)?;
        if alignment.holds && shift_alignment.holds {
            decide(&mut out, PredictedSign::Negative, SignRule::RegressionShiftAlignment);
        }
        out.reports.push(alignment);
        out.reports.push(shift_alignment);
    }
    Ok(out)
}
