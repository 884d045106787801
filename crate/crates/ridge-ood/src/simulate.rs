//! Finite-sample Monte Carlo harness: linear-response data in Σ's eigenbasis,
//! ridge fits at any admissible λ (negative included), subsample ensembles,
//! and empirical risk compared against the deterministic equivalents.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed_point::lambda_min;
use crate::model::{ShiftModel, Signal};
use crate::risk::ensemble_risk;

/// Law of the standardized entries of Z and of the noise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EntryDist {
    #[default]
    Gaussian,
    Rademacher,
    /// Student-t rescaled to unit variance.
    StudentT {
        df: f64,
    },
}

impl EntryDist {
    pub const DEFAULT_DF: f64 = 8.0;

    fn validate(&self) -> Result<()> {
        match self {
            Self::StudentT { df } if !(*df > 4.0 && df.is_finite()) => Err(Error::InvalidParameter(format!(
                "student-t df = {df} must exceed 4 for bounded fourth moments"
            ))),
            _ => Ok(()),
        }
    }

    fn sampler(&self) -> Sampler {
        match *self {
            Self::Gaussian => Sampler::Gaussian,
            Self::Rademacher => Sampler::Rademacher,
            Self::StudentT { df } => Sampler::StudentT {
                dist: StudentT::new(df).expect("df validated"),
                scale: ((df - 2.0) / df).sqrt(),
            },
        }
    }
}

enum Sampler {
    Gaussian,
    Rademacher,
    StudentT { dist: StudentT<f64>, scale: f64 },
}

impl Sampler {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Gaussian => StandardNormal.sample(rng),
            Self::Rademacher => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
            Self::StudentT { dist, scale } => scale * dist.sample(rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub psi: f64,
    /// Number of subsamples averaged.
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub p: usize,
    pub phi: f64,
    #[serde(default)]
    pub z_dist: EntryDist,
    #[serde(default)]
    pub noise_dist: EntryDist,
    pub reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub ensemble: Option<EnsembleSpec>,
    /// Keep every replicate risk in the result.
    #[serde(default)]
    pub keep_replicates: bool,
    /// λ must exceed λ_min by this fraction of |λ_min|.
    #[serde(default = "default_guard")]
    pub lambda_guard: f64,
}

fn default_guard() -> f64 {
    0.05
}

impl SimConfig {
    pub fn new(p: usize, phi: f64, reps: usize, seed: u64) -> Self {
        Self {
            p,
            phi,
            z_dist: EntryDist::Gaussian,
            noise_dist: EntryDist::Gaussian,
            reps,
            seed,
            ensemble: None,
            keep_replicates: false,
            lambda_guard: default_guard(),
        }
    }

    pub fn n(&self) -> usize {
        ((self.p as f64 / self.phi).round() as usize).max(1)
    }

    pub fn subsample_size(&self, psi: f64) -> usize {
        ((self.p as f64 / psi).round() as usize).max(1)
    }
}

/// Independent stream for (master seed, cell, replicate).
pub fn replicate_rng(seed: u64, cell: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((cell << 32) ^ rep);
    rng
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Realized train coefficients (drawn per dataset for isotropic signals).
    pub beta: DVector<f64>,
    pub beta0: DVector<f64>,
}

/// Draws n samples x = Σ^{1/2}z and y = x'β + ε in Σ's eigenbasis.
pub fn generate_data<R: Rng + ?Sized>(
    model: &ShiftModel,
    n: usize,
    z_dist: EntryDist,
    noise_dist: EntryDist,
    rng: &mut R,
) -> Result<Dataset> {
    z_dist.validate()?;
    noise_dist.validate()?;
    let p = model.p();
    let (beta, beta0) = match model.signal() {
        Signal::Deterministic { beta, beta0 } => (beta.clone(), beta0.clone()),
        Signal::Isotropic { alpha2 } => {
            let sd = (alpha2 / p as f64).sqrt();
            let b = DVector::from_fn(p, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            });
            (b.clone(), b)
        }
    };
    let roots: Vec<f64> = model.spectrum().eigenvalues().iter().map(|r| r.sqrt()).collect();
    let z = z_dist.sampler();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = z.draw(rng) * roots[j];
        }
    }
    let noise = noise_dist.sampler();
    let sd = model.sigma2().sqrt();
    let mut y = &x * &beta;
    if sd > 0.0 {
        for yi in y.iter_mut() {
            *yi += sd * noise.draw(rng);
        }
    }
    Ok(Dataset { x, y, beta, beta0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub beta: DVector<f64>,
    /// The shifted Gram spectrum had condition ratio above 1e12.
    pub near_singular: bool,
}

/// Ridge fits (XᵀX/n + λI)†Xᵀy/n for many λ from one eigendecomposition.
///
/// Uses the p×p Gram matrix when p ≤ n and the n×n kernel form
/// Xᵀ(XXᵀ/n + λI)†y/n otherwise.
pub struct RidgeSolver {
    eigenvalues: DVector<f64>,
    // Primal: eigenvectors V. Dual: Xᵀ U / n.
    map: DMatrix<f64>,
    // Primal: Vᵀ Xᵀy / n. Dual: Uᵀ y.
    coords: DVector<f64>,
}

impl RidgeSolver {
    pub fn new(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let (n, p) = x.shape();
        let nf = n as f64;
        if p <= n {
            let gram = x.tr_mul(x) / nf;
            let eig = SymmetricEigen::new(gram);
            let xty = x.tr_mul(y) / nf;
            let coords = eig.eigenvectors.tr_mul(&xty);
            Self {
                eigenvalues: eig.eigenvalues,
                map: eig.eigenvectors,
                coords,
            }
        } else {
            let kernel = x * x.transpose() / nf;
            let eig = SymmetricEigen::new(kernel);
            let coords = eig.eigenvectors.tr_mul(y);
            let map = x.tr_mul(&eig.eigenvectors) / nf;
            Self {
                eigenvalues: eig.eigenvalues,
                map,
                coords,
            }
        }
    }

    pub fn fit(&self, lambda: f64) -> RidgeFit {
        let e_max = self.eigenvalues.iter().fold(0.0f64, |a, e| a.max(e.abs()));
        let zero_tol = 1e-10 * e_max.max(lambda.abs()).max(f64::MIN_POSITIVE);
        let mut kept_min = f64::INFINITY;
        let mut kept_max = 0.0f64;
        let scaled = DVector::from_iterator(
            self.coords.len(),
            self.eigenvalues.iter().zip(self.coords.iter()).map(|(&e, &c)| {
                let shifted = e + lambda;
                if shifted.abs() <= zero_tol {
                    0.0
                } else {
                    kept_min = kept_min.min(shifted.abs());
                    kept_max = kept_max.max(shifted.abs());
                    c / shifted
                }
            }),
        );
        RidgeFit {
            beta: &self.map * scaled,
            near_singular: kept_max > 1e12 * kept_min,
        }
    }
}

pub fn ridge_fit(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> RidgeFit {
    RidgeSolver::new(x, y).fit(lambda)
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// Averages ridge fits over `m` subsamples of size `k`, each drawn without
/// replacement, for every λ in `lambdas`.
pub fn ensemble_fit_many<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambdas: &[f64],
    k: usize,
    m: usize,
    rng: &mut R,
) -> Result<Vec<RidgeFit>> {
    let n = x.nrows();
    if k > n || k == 0 {
        return Err(Error::InvalidSubsample { k, n });
    }
    if m == 0 {
        return Err(Error::InvalidParameter("ensemble size must be positive".into()));
    }
    let mut sums = vec![DVector::zeros(x.ncols()); lambdas.len()];
    let mut flags = vec![false; lambdas.len()];
    for _ in 0..m {
        let mut rows = index::sample(rng, n, k).into_vec();
        rows.sort_unstable();
        let solver = RidgeSolver::new(&select_rows(x, &rows), &DVector::from_fn(k, |i, _| y[rows[i]]));
        for (j, &lambda) in lambdas.iter().enumerate() {
            let fit = solver.fit(lambda);
            sums[j] += fit.beta;
            flags[j] |= fit.near_singular;
        }
    }
    Ok(sums
        .into_iter()
        .zip(flags)
        .map(|(s, near_singular)| RidgeFit {
            beta: s / m as f64,
            near_singular,
        })
        .collect())
}

pub fn ensemble_fit(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    k: usize,
    m: usize,
    seed: u64,
) -> Result<RidgeFit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ensemble_fit_many(x, y, &[lambda], k, m, &mut rng)?.remove(0))
}

/// (β̂ − β₀)'Σ₀(β̂ − β₀) + σ₀² against an explicit test coefficient vector.
pub fn empirical_risk_against(beta_hat: &DVector<f64>, beta0: &DVector<f64>, model: &ShiftModel) -> f64 {
    let d = beta_hat - beta0;
    d.dot(&(model.sigma0_matrix() * &d)) + model.sigma0_sq()
}

/// Conditional test risk of `beta_hat` under the model's deterministic β₀.
pub fn empirical_risk(beta_hat: &DVector<f64>, model: &ShiftModel) -> Result<f64> {
    let beta0 = model.beta0().ok_or_else(|| {
        Error::InvalidModel("isotropic signals have no fixed beta0; use empirical_risk_against".into())
    })?;
    if beta_hat.len() != model.p() {
        return Err(Error::InvalidParameter(format!(
            "beta_hat has length {}, expected {}",
            beta_hat.len(),
            model.p()
        )));
    }
    Ok(empirical_risk_against(beta_hat, beta0, model))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimCell {
    pub lambda: f64,
    pub phi: f64,
    pub psi: f64,
    pub empirical_mean: f64,
    pub empirical_se: f64,
    pub theory_total: f64,
    pub rel_error: f64,
    pub replicates_used: usize,
    pub near_singular: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub cell_id: usize,
    pub lambda: f64,
    pub phi: f64,
    pub psi: f64,
    pub rep: usize,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub cells: Vec<SimCell>,
    pub replicates: Vec<ReplicateRecord>,
}

/// Floats with 17 significant digits, which round-trip exactly.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

impl SimResult {
    pub fn write_replicates_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "cell_id,lambda,phi,psi,rep,risk")?;
        for r in &self.replicates {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.cell_id,
                format_float(r.lambda),
                format_float(r.phi),
                format_float(r.psi),
                r.rep,
                format_float(r.risk)
            )?;
        }
        Ok(())
    }
}

struct ReplicateOutcome {
    risks: Vec<f64>,
    near_singular: Vec<bool>,
}

/// Runs `config.reps` replicates per (λ, ψ) cell and compares the mean
/// empirical risk with the deterministic equivalent.
///
/// Cells sharing a ψ reuse the same replicate datasets (and subsample draws),
/// so comparisons across λ use common random numbers. ψ = φ is plain ridge.
pub fn mc_experiment(
    model: &ShiftModel,
    config: &SimConfig,
    lambda_grid: &[f64],
    psi_grid: Option<&[f64]>,
) -> Result<SimResult> {
    config.z_dist.validate()?;
    config.noise_dist.validate()?;
    if config.p != model.p() {
        return Err(Error::InvalidParameter(format!(
            "config p = {} but model p = {}",
            config.p,
            model.p()
        )));
    }
    if config.reps == 0 || lambda_grid.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one replicate and one lambda".into(),
        ));
    }
    let phi = config.phi;
    let n = config.n();
    let psis: Vec<f64> = match (psi_grid, config.ensemble) {
        (Some(g), _) => g.to_vec(),
        (None, Some(e)) => vec![e.psi],
        (None, None) => vec![phi],
    };
    let m = config.ensemble.map_or(100, |e| e.m);

    for &psi in &psis {
        if !(psi >= phi) {
            return Err(Error::InvalidSubsampleRatio { psi, phi });
        }
        let aspect = if psi == phi { phi } else { psi };
        let lmin = lambda_min(model.spectrum(), aspect)?;
        let bound = lmin + config.lambda_guard * lmin.abs();
        if let Some(&bad) = lambda_grid.iter().find(|&&l| l <= lmin) {
            return Err(Error::BelowMinimumPenalty {
                lambda: bad,
                lambda_min: lmin,
            });
        }
        if let Some(&bad) = lambda_grid.iter().find(|&&l| l < bound) {
            return Err(Error::InvalidParameter(format!(
                "lambda = {bad} is within the guard band above lambda_min = {lmin}; finite samples need lambda >= {bound}"
            )));
        }
        if psi > phi && config.subsample_size(psi) > n {
            return Err(Error::InvalidSubsample {
                k: config.subsample_size(psi),
                n,
            });
        }
    }

    let jobs: Vec<(usize, usize)> = (0..psis.len())
        .flat_map(|g| (0..config.reps).map(move |r| (g, r)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(g, rep)| -> Result<ReplicateOutcome> {
            let psi = psis[g];
            let mut rng = replicate_rng(config.seed, g as u64, rep as u64);
            let data = generate_data(model, n, config.z_dist, config.noise_dist, &mut rng)?;
            let fits = if psi == phi {
                let solver = RidgeSolver::new(&data.x, &data.y);
                lambda_grid.iter().map(|&l| solver.fit(l)).collect()
            } else {
                ensemble_fit_many(&data.x, &data.y, lambda_grid, config.subsample_size(psi), m, &mut rng)?
            };
            Ok(ReplicateOutcome {
                risks: fits
                    .iter()
                    .map(|f| empirical_risk_against(&f.beta, &data.beta0, model))
                    .collect(),
                near_singular: fits.iter().map(|f| f.near_singular).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::with_capacity(psis.len() * lambda_grid.len());
    let mut replicates = Vec::new();
    for (g, &psi) in psis.iter().enumerate() {
        let group = &outcomes[g * config.reps..(g + 1) * config.reps];
        for (j, &lambda) in lambda_grid.iter().enumerate() {
            let cell_id = g * lambda_grid.len() + j;
            let risks: Vec<f64> = group.iter().map(|o| o.risks[j]).collect();
            if config.keep_replicates {
                replicates.extend(risks.iter().enumerate().map(|(rep, &risk)| ReplicateRecord {
                    cell_id,
                    lambda,
                    phi,
                    psi,
                    rep,
                    risk,
                }));
            }
            let used: Vec<f64> = risks.iter().copied().filter(|r| r.is_finite()).collect();
            let k = used.len() as f64;
            let mean = used.iter().sum::<f64>() / k;
            let var = if used.len() > 1 {
                used.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                f64::NAN
            };
            let theory = ensemble_risk(model, lambda, phi, psi)
                .map(|r| r.total)
                .unwrap_or(f64::NAN);
            cells.push(SimCell {
                lambda,
                phi,
                psi,
                empirical_mean: mean,
                empirical_se: (var / k).sqrt(),
                theory_total: theory,
                rel_error: if theory > 0.0 {
                    (mean - theory).abs() / theory
                } else {
                    f64::NAN
                },
                replicates_used: used.len(),
                near_singular: group.iter().filter(|o| o.near_singular[j]).count(),
            });
        }
    }
    Ok(SimResult { cells, replicates })
}
