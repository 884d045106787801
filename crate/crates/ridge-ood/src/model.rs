//! Train/test distribution pairs expressed in the eigenbasis of the train
//! covariance, plus the configuration format used to build them.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;

/// Eigenvalues of the train covariance, ascending and strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
}

impl Spectrum {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::InvalidParameter("spectrum is empty".into()));
        }
        if let Some(bad) = eigenvalues.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "eigenvalue {bad} is not strictly positive and finite"
            )));
        }
        if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParameter("eigenvalues must be ascending".into()));
        }
        Ok(Self { eigenvalues })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            eigenvalues: vec![1.0; p],
        }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn p(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn r_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn r_max(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// Average of `f(r)` over the eigenvalues (uniform weights 1/p).
    pub fn mean_of(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.eigenvalues.iter().map(|&r| f(r)).sum::<f64>() / self.p() as f64
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        self.eigenvalues.iter().all(|r| (r - 1.0).abs() <= tol)
    }
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix.
///
/// Each eigenvector is oriented so that its largest-magnitude entry is positive.
pub fn eigh_ascending(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (j, &i) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).clone_owned();
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(j, &col);
    }
    (values, vectors)
}

pub fn ar1_matrix(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()))
}

/// Spectrum and eigenvectors of the AR(1) covariance `rho^|i-j|`.
pub fn build_ar1(p: usize, rho: f64) -> Result<(Spectrum, DMatrix<f64>)> {
    if p < 2 {
        return Err(Error::InvalidParameter(format!("p = {p} must be at least 2")));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("rho = {rho} must lie in (0, 1)")));
    }
    let (values, vectors) = eigh_ascending(ar1_matrix(p, rho));
    Ok((Spectrum::new(values)?, vectors))
}

/// Train signal and test signal.
#[derive(Debug, Clone, PartialEq)]
pub enum Signal {
    /// Fixed coefficient vectors in the eigenbasis of Σ.
    Deterministic { beta: DVector<f64>, beta0: DVector<f64> },
    /// Random β with E[ββ'] = (α²/p) I and β₀ = β, evaluated in expectation.
    Isotropic { alpha2: f64 },
}

/// Joint description of the train distribution (Σ, β, σ²) and the test
/// distribution (Σ₀, β₀, σ₀²), everything expressed in Σ's eigenbasis.
#[derive(Debug, Clone)]
pub struct ShiftModel {
    spectrum: Spectrum,
    sigma0_matrix: DMatrix<f64>,
    sigma0_diag: DVector<f64>,
    signal: Signal,
    sigma2: f64,
    sigma0_sq: f64,
    covariate_shift: bool,
    regression_shift: bool,
}

impl ShiftModel {
    pub fn new(
        spectrum: Spectrum,
        sigma0_matrix: DMatrix<f64>,
        signal: Signal,
        sigma2: f64,
        sigma0_sq: f64,
    ) -> Result<Self> {
        let p = spectrum.p();
        if sigma0_matrix.nrows() != p || sigma0_matrix.ncols() != p {
            return Err(Error::InvalidModel(format!(
                "sigma0 is {}x{}, expected {p}x{p}",
                sigma0_matrix.nrows(),
                sigma0_matrix.ncols()
            )));
        }
        if sigma0_matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel("sigma0 has non-finite entries".into()));
        }
        let scale = sigma0_matrix.amax().max(f64::MIN_POSITIVE);
        let asym = (&sigma0_matrix - sigma0_matrix.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::InvalidModel(format!(
                "sigma0 is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let sigma0_matrix = (&sigma0_matrix + sigma0_matrix.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sigma0_matrix.clone()).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if lo < -PSD_TOL * hi.max(0.0) || hi <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "sigma0 is not positive semidefinite (eigenvalues in [{lo:e}, {hi:e}])"
            )));
        }
        if !(sigma2 >= 0.0 && sigma2.is_finite() && sigma0_sq >= 0.0 && sigma0_sq.is_finite()) {
            return Err(Error::InvalidModel(
                "noise variances must be finite and nonnegative".into(),
            ));
        }
        let regression_shift = match &signal {
            Signal::Deterministic { beta, beta0 } => {
                if beta.len() != p || beta0.len() != p {
                    return Err(Error::InvalidModel(format!(
                        "signal vectors have lengths {} and {}, expected {p}",
                        beta.len(),
                        beta0.len()
                    )));
                }
                if beta.iter().chain(beta0.iter()).any(|x| !x.is_finite()) {
                    return Err(Error::InvalidModel("signal has non-finite entries".into()));
                }
                beta != beta0
            }
            Signal::Isotropic { alpha2 } => {
                if !(*alpha2 >= 0.0 && alpha2.is_finite()) {
                    return Err(Error::InvalidModel(format!("alpha2 = {alpha2} is invalid")));
                }
                false
            }
        };
        let sigma0_diag = sigma0_matrix.diagonal();
        let r = spectrum.eigenvalues();
        let covariate_shift = !close_to_diagonal(&sigma0_matrix, r);
        Ok(Self {
            spectrum,
            sigma0_matrix,
            sigma0_diag,
            signal,
            sigma2,
            sigma0_sq,
            covariate_shift,
            regression_shift,
        })
    }

    /// Model without any shift: Σ₀ = Σ and β₀ = β.
    pub fn in_distribution(spectrum: Spectrum, beta: DVector<f64>, sigma2: f64, sigma0_sq: f64) -> Result<Self> {
        let sigma0 = DMatrix::from_diagonal(&DVector::from_column_slice(spectrum.eigenvalues()));
        let beta0 = beta.clone();
        Self::new(
            spectrum,
            sigma0,
            Signal::Deterministic { beta, beta0 },
            sigma2,
            sigma0_sq,
        )
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn p(&self) -> usize {
        self.spectrum.p()
    }

    pub fn sigma0_matrix(&self) -> &DMatrix<f64> {
        &self.sigma0_matrix
    }

    pub fn sigma0_diag(&self) -> &DVector<f64> {
        &self.sigma0_diag
    }

    pub fn signal(&self) -> &Signal {
        &self.signal
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn sigma0_sq(&self) -> f64 {
        self.sigma0_sq
    }

    pub fn beta(&self) -> Option<&DVector<f64>> {
        match &self.signal {
            Signal::Deterministic { beta, .. } => Some(beta),
            Signal::Isotropic { .. } => None,
        }
    }

    pub fn beta0(&self) -> Option<&DVector<f64>> {
        match &self.signal {
            Signal::Deterministic { beta0, .. } => Some(beta0),
            Signal::Isotropic { .. } => None,
        }
    }

    pub fn is_isotropic(&self) -> bool {
        matches!(self.signal, Signal::Isotropic { .. })
    }

    /// Σ₀ differs from Σ.
    pub fn has_covariate_shift(&self) -> bool {
        self.covariate_shift
    }

    /// Σ₀ equals the identity up to round-off.
    pub fn sigma0_is_identity(&self) -> bool {
        close_to_diagonal(&self.sigma0_matrix, &vec![1.0; self.p()])
    }

    /// β₀ differs from β.
    pub fn has_regression_shift(&self) -> bool {
        self.regression_shift
    }

    /// Signal energy α² = ‖β‖².
    pub fn alpha2(&self) -> f64 {
        match &self.signal {
            Signal::Deterministic { beta, .. } => beta.norm_squared(),
            Signal::Isotropic { alpha2 } => *alpha2,
        }
    }

    pub fn snr(&self) -> f64 {
        self.alpha2() / self.sigma2
    }

    /// Copy with different noise levels.
    pub fn with_noise(&self, sigma2: f64, sigma0_sq: f64) -> Result<Self> {
        Self::new(
            self.spectrum.clone(),
            self.sigma0_matrix.clone(),
            self.signal.clone(),
            sigma2,
            sigma0_sq,
        )
    }

    /// Copy with a different test covariance.
    pub fn with_sigma0(&self, sigma0_matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.spectrum.clone(),
            sigma0_matrix,
            self.signal.clone(),
            self.sigma2,
            self.sigma0_sq,
        )
    }

    /// β' diag(f) β, or α²·mean(f) for isotropic signals.
    pub fn signal_quad(&self, f: &[f64]) -> f64 {
        match &self.signal {
            Signal::Deterministic { beta, .. } => beta.iter().zip(f).map(|(b, w)| b * b * w).sum(),
            Signal::Isotropic { alpha2 } => alpha2 * f.iter().sum::<f64>() / f.len() as f64,
        }
    }

    /// β' diag(f) β₀.
    pub fn signal_cross(&self, f: &[f64]) -> f64 {
        match &self.signal {
            Signal::Deterministic { beta, beta0 } => beta
                .iter()
                .zip(beta0.iter())
                .zip(f)
                .map(|((b, b0), w)| b * b0 * w)
                .sum(),
            Signal::Isotropic { .. } => self.signal_quad(f),
        }
    }

    /// (f∘β)' Σ₀ (g∘β) using the full test covariance.
    pub fn sigma0_quad(&self, f: &[f64], g: &[f64]) -> f64 {
        match &self.signal {
            Signal::Deterministic { beta, .. } => {
                let u = DVector::from_iterator(beta.len(), beta.iter().zip(f).map(|(b, w)| b * w));
                let w = DVector::from_iterator(beta.len(), beta.iter().zip(g).map(|(b, w)| b * w));
                w.dot(&(&self.sigma0_matrix * u))
            }
            Signal::Isotropic { alpha2 } => {
                let p = f.len() as f64;
                alpha2 / p
                    * f.iter()
                        .zip(g)
                        .zip(self.sigma0_diag.iter())
                        .map(|((a, b), s)| a * b * s)
                        .sum::<f64>()
            }
        }
    }

    /// (f∘β)' Σ₀ (β₀ − β).
    pub fn sigma0_shift(&self, f: &[f64]) -> f64 {
        match &self.signal {
            Signal::Deterministic { beta, beta0 } => {
                if !self.regression_shift {
                    return 0.0;
                }
                let u = DVector::from_iterator(beta.len(), beta.iter().zip(f).map(|(b, w)| b * w));
                let d = beta0 - beta;
                u.dot(&(&self.sigma0_matrix * d))
            }
            Signal::Isotropic { .. } => 0.0,
        }
    }

    /// κ² = (β₀−β)'Σ₀(β₀−β) + σ₀².
    pub fn kappa2(&self) -> f64 {
        let shift = match &self.signal {
            Signal::Deterministic { beta, beta0 } if self.regression_shift => {
                let d = beta0 - beta;
                d.dot(&(&self.sigma0_matrix * &d))
            }
            _ => 0.0,
        };
        shift + self.sigma0_sq
    }

    /// Risk of the zero estimator, β₀'Σ₀β₀ + σ₀².
    pub fn null_risk(&self) -> f64 {
        let energy = match &self.signal {
            Signal::Deterministic { beta0, .. } => beta0.dot(&(&self.sigma0_matrix * beta0)),
            Signal::Isotropic { alpha2 } => alpha2 * self.sigma0_diag.mean(),
        };
        energy + self.sigma0_sq
    }
}

const SHIFT_TOL: f64 = 1e-10;

/// Whether `m` equals diag(`d`) up to round-off relative to its largest entry.
fn close_to_diagonal(m: &DMatrix<f64>, d: &[f64]) -> bool {
    let scale = m.amax().max(d.iter().fold(0.0f64, |a, b| a.max(b.abs())));
    let tol = SHIFT_TOL * scale.max(f64::MIN_POSITIVE);
    (0..m.nrows()).all(|i| {
        (0..m.ncols()).all(|j| {
            let target = if i == j { d[i] } else { 0.0 };
            (m[(i, j)] - target).abs() <= tol
        })
    })
}

/// Diagonal or quadratic weight in an average resolvent trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceWeight {
    /// M = I, averaged over p.
    Identity,
    /// M = Σ₀ (its diagonal in Σ's eigenbasis), averaged over p.
    Sigma0,
    /// M = B = ββ', evaluated as the quadratic form β'(·)β.
    Signal,
    /// M = B₀ = β₀β', evaluated as β'(·)β₀.
    CrossSignal,
    /// β'(Σ+μI)^{-k/2} Σ₀ (Σ+μI)^{-k/2} β with the full Σ₀; `sigma_power` splits evenly.
    Sigma0Sandwich,
}

/// Weighted resolvent trace of `Σ^sigma_power (Σ+μI)^-power`.
///
/// Identity and Σ₀ weights are averaged over p; signal weights are the
/// quadratic forms in which B and B₀ enter the risk.
pub fn avg_trace_resolvent(
    model: &ShiftModel,
    weight: TraceWeight,
    sigma_power: i32,
    mu: f64,
    power: i32,
) -> Result<f64> {
    let r = model.spectrum.eigenvalues();
    if mu <= -model.spectrum.r_min() {
        return Err(Error::SingularResolvent {
            mu,
            bound: -model.spectrum.r_min(),
        });
    }
    let p = r.len() as f64;
    let base: Vec<f64> = r
        .iter()
        .map(|&ri| ri.powi(sigma_power) / (ri + mu).powi(power))
        .collect();
    Ok(match weight {
        TraceWeight::Identity => base.iter().sum::<f64>() / p,
        TraceWeight::Sigma0 => {
            base.iter()
                .zip(model.sigma0_diag.iter())
                .map(|(b, s)| b * s)
                .sum::<f64>()
                / p
        }
        TraceWeight::Signal => model.signal_quad(&base),
        TraceWeight::CrossSignal => model.signal_cross(&base),
        TraceWeight::Sigma0Sandwich => {
            let half: Vec<f64> = base.iter().map(|b| b.sqrt()).collect();
            model.sigma0_quad(&half, &half)
        }
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// Coordinates in the original feature basis; rotated into Σ's eigenbasis.
    #[default]
    Standard,
    /// Coordinates already in Σ's eigenbasis.
    Eigen,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenvectorSource {
    #[default]
    Sigma,
    Sigma0,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumSpec {
    Identity,
    Ar1 {
        rho: f64,
    },
    /// Diagonal Σ in the standard basis.
    Explicit {
        values: Vec<f64>,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalSpec {
    Isotropic {
        alpha2: f64,
    },
    /// Σ_j weights[j]·w_(indices[j]) with 1-based indices into the ascending eigenvectors.
    EigenvectorCombination {
        indices: Vec<usize>,
        weights: Vec<f64>,
        #[serde(default)]
        of: EigenvectorSource,
    },
    Explicit {
        values: Vec<f64>,
        #[serde(default)]
        basis: Basis,
    },
    File {
        path: PathBuf,
        #[serde(default)]
        basis: Basis,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Beta0Spec {
    /// β₀ = factor·β.
    Scaled { factor: f64 },
    EigenvectorCombination {
        indices: Vec<usize>,
        weights: Vec<f64>,
        #[serde(default)]
        of: EigenvectorSource,
    },
    Explicit {
        values: Vec<f64>,
        #[serde(default)]
        basis: Basis,
    },
    File {
        path: PathBuf,
        #[serde(default)]
        basis: Basis,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceSpec {
    Identity,
    ScaledIdentity {
        scale: f64,
    },
    Ar1 {
        rho: f64,
    },
    Diagonal {
        values: Vec<f64>,
        #[serde(default)]
        basis: Basis,
    },
    Matrix {
        rows: Vec<Vec<f64>>,
        #[serde(default)]
        basis: Basis,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftSpec {
    #[default]
    None,
    Covariate {
        sigma0: CovarianceSpec,
    },
    Regression {
        beta0: Beta0Spec,
    },
    Joint {
        sigma0: CovarianceSpec,
        beta0: Beta0Spec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub p: usize,
    pub spectrum: SpectrumSpec,
    pub signal: SignalSpec,
    #[serde(default)]
    pub shift: ShiftSpec,
    #[serde(default)]
    pub sigma2: f64,
    #[serde(default)]
    pub sigma0_sq: f64,
}

impl ModelConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Parses a JSON config; relative data-file paths resolve against its directory.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut config = Self::from_json_str(&text)?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        Ok(config)
    }

    pub fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let SpectrumSpec::File { path } = &mut self.spectrum {
            fix(path);
        }
        if let SignalSpec::File { path, .. } = &mut self.signal {
            fix(path);
        }
        match &mut self.shift {
            ShiftSpec::Regression {
                beta0: Beta0Spec::File { path, .. },
            }
            | ShiftSpec::Joint {
                beta0: Beta0Spec::File { path, .. },
                ..
            } => fix(path),
            _ => {}
        }
    }
}

/// Reads one number per line; blank lines and `#` comments are skipped.
pub fn read_values(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.trim_end_matches(',')
                .parse::<f64>()
                .map_err(|e| Error::InvalidConfig(format!("{}: cannot parse {l:?}: {e}", path.display())))
        })
        .collect()
}

struct Frame {
    spectrum: Spectrum,
    // Columns are Σ's eigenvectors in the standard basis.
    basis: DMatrix<f64>,
    sigma_std: DMatrix<f64>,
}

fn train_frame(p: usize, spec: &SpectrumSpec) -> Result<Frame> {
    match spec {
        SpectrumSpec::Identity => Ok(Frame {
            spectrum: Spectrum::identity(p),
            basis: DMatrix::identity(p, p),
            sigma_std: DMatrix::identity(p, p),
        }),
        SpectrumSpec::Ar1 { rho } => {
            let (spectrum, basis) = build_ar1(p, *rho).map_err(as_config)?;
            Ok(Frame {
                spectrum,
                basis,
                sigma_std: ar1_matrix(p, *rho),
            })
        }
        SpectrumSpec::Explicit { values } => diagonal_frame(p, values.clone()),
        SpectrumSpec::File { path } => diagonal_frame(p, read_values(path)?),
    }
}

fn diagonal_frame(p: usize, values: Vec<f64>) -> Result<Frame> {
    if values.len() != p {
        return Err(Error::InvalidConfig(format!(
            "spectrum has {} values, expected p = {p}",
            values.len()
        )));
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut basis = DMatrix::zeros(p, p);
    for (j, &i) in order.iter().enumerate() {
        basis[(i, j)] = 1.0;
    }
    let sorted = order.iter().map(|&i| values[i]).collect();
    Ok(Frame {
        spectrum: Spectrum::new(sorted).map_err(as_config)?,
        basis,
        sigma_std: DMatrix::from_diagonal(&DVector::from_vec(values)),
    })
}

fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidParameter(m) | Error::InvalidModel(m) => Error::InvalidConfig(m),
        other => other,
    }
}

fn covariance_std(p: usize, spec: &CovarianceSpec, frame: &Frame) -> Result<DMatrix<f64>> {
    let to_std = |m: DMatrix<f64>, basis: Basis| match basis {
        Basis::Standard => m,
        Basis::Eigen => &frame.basis * m * frame.basis.transpose(),
    };
    Ok(match spec {
        CovarianceSpec::Identity => DMatrix::identity(p, p),
        CovarianceSpec::ScaledIdentity { scale } => DMatrix::identity(p, p) * *scale,
        CovarianceSpec::Ar1 { rho } => {
            if !(*rho > 0.0 && *rho < 1.0) {
                return Err(Error::InvalidConfig(format!("rho = {rho} must lie in (0, 1)")));
            }
            ar1_matrix(p, *rho)
        }
        CovarianceSpec::Diagonal { values, basis } => {
            if values.len() != p {
                return Err(Error::InvalidConfig(format!(
                    "sigma0 diagonal has {} values, expected {p}",
                    values.len()
                )));
            }
            to_std(DMatrix::from_diagonal(&DVector::from_column_slice(values)), *basis)
        }
        CovarianceSpec::Matrix { rows, basis } => {
            if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                return Err(Error::InvalidConfig(format!("sigma0 matrix must be {p}x{p}")));
            }
            to_std(DMatrix::from_fn(p, p, |i, j| rows[i][j]), *basis)
        }
    })
}

fn eigenvector_combination(
    p: usize,
    indices: &[usize],
    weights: &[f64],
    vectors: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    if indices.len() != weights.len() || indices.is_empty() {
        return Err(Error::InvalidConfig(
            "indices and weights must be non-empty and of equal length".into(),
        ));
    }
    let mut beta = DVector::zeros(p);
    for (&idx, &w) in indices.iter().zip(weights) {
        if idx == 0 || idx > p {
            return Err(Error::InvalidConfig(format!("eigenvector index {idx} outside 1..={p}")));
        }
        beta += vectors.column(idx - 1) * w;
    }
    Ok(beta)
}

fn vector_in_eigenbasis(p: usize, values: Vec<f64>, basis: Basis, frame: &Frame) -> Result<DVector<f64>> {
    if values.len() != p {
        return Err(Error::InvalidConfig(format!(
            "vector has {} values, expected p = {p}",
            values.len()
        )));
    }
    let v = DVector::from_vec(values);
    Ok(match basis {
        Basis::Standard => frame.basis.transpose() * v,
        Basis::Eigen => v,
    })
}

struct Resolved<'a> {
    p: usize,
    frame: &'a Frame,
    sigma0_std: &'a Option<DMatrix<f64>>,
}

impl Resolved<'_> {
    fn eigenvectors_of(&self, source: EigenvectorSource) -> Result<DMatrix<f64>> {
        match source {
            EigenvectorSource::Sigma => Ok(self.frame.basis.clone()),
            EigenvectorSource::Sigma0 => {
                let s0 = self.sigma0_std.clone().unwrap_or_else(|| self.frame.sigma_std.clone());
                Ok(eigh_ascending(s0).1)
            }
        }
    }

    fn combination(&self, indices: &[usize], weights: &[f64], of: EigenvectorSource) -> Result<DVector<f64>> {
        let vectors = self.eigenvectors_of(of)?;
        let beta_std = eigenvector_combination(self.p, indices, weights, &vectors)?;
        Ok(self.frame.basis.transpose() * beta_std)
    }
}

/// Realizes a configuration as a [`ShiftModel`] in Σ's eigenbasis.
pub fn build_model(config: &ModelConfig) -> Result<ShiftModel> {
    let p = config.p;
    if p < 2 {
        return Err(Error::InvalidConfig(format!("p = {p} must be at least 2")));
    }
    let frame = train_frame(p, &config.spectrum)?;

    let sigma0_spec = match &config.shift {
        ShiftSpec::Covariate { sigma0 } | ShiftSpec::Joint { sigma0, .. } => Some(sigma0),
        _ => None,
    };
    let sigma0_std = sigma0_spec.map(|s| covariance_std(p, s, &frame)).transpose()?;
    let ctx = Resolved {
        p,
        frame: &frame,
        sigma0_std: &sigma0_std,
    };

    let sigma0 = match (sigma0_spec, &sigma0_std) {
        (None, _) => DMatrix::from_diagonal(&DVector::from_column_slice(frame.spectrum.eigenvalues())),
        (Some(CovarianceSpec::Identity), _) => DMatrix::identity(p, p),
        (Some(CovarianceSpec::ScaledIdentity { scale }), _) => DMatrix::identity(p, p) * *scale,
        (Some(_), Some(s)) => frame.basis.transpose() * s * &frame.basis,
        (Some(_), None) => unreachable!(),
    };

    let beta0_spec = match &config.shift {
        ShiftSpec::Regression { beta0 } | ShiftSpec::Joint { beta0, .. } => Some(beta0),
        _ => None,
    };

    let signal = match &config.signal {
        SignalSpec::Isotropic { alpha2 } => {
            if beta0_spec.is_some() {
                return Err(Error::InvalidConfig(
                    "isotropic signals support only beta0 = beta (no regression shift)".into(),
                ));
            }
            Signal::Isotropic { alpha2: *alpha2 }
        }
        spec => {
            let beta = match spec {
                SignalSpec::EigenvectorCombination { indices, weights, of } => {
                    ctx.combination(indices, weights, *of)?
                }
                SignalSpec::Explicit { values, basis } => vector_in_eigenbasis(p, values.clone(), *basis, &frame)?,
                SignalSpec::File { path, basis } => vector_in_eigenbasis(p, read_values(path)?, *basis, &frame)?,
                SignalSpec::Isotropic { .. } => unreachable!(),
            };
            let beta0 = match beta0_spec {
                None => beta.clone(),
                Some(Beta0Spec::Scaled { factor }) => &beta * *factor,
                Some(Beta0Spec::EigenvectorCombination { indices, weights, of }) => {
                    ctx.combination(indices, weights, *of)?
                }
                Some(Beta0Spec::Explicit { values, basis }) => vector_in_eigenbasis(p, values.clone(), *basis, &frame)?,
                Some(Beta0Spec::File { path, basis }) => vector_in_eigenbasis(p, read_values(path)?, *basis, &frame)?,
            };
            Signal::Deterministic { beta, beta0 }
        }
    };

    ShiftModel::new(frame.spectrum, sigma0, signal, config.sigma2, config.sigma0_sq).map_err(as_config)
}
