#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use ridge_ood::model::{build_ar1, ShiftModel, Signal, Spectrum};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vector(rng: &mut ChaCha8Rng, p: usize) -> DVector<f64> {
    DVector::from_fn(p, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    })
}

pub fn unit_vector(rng: &mut ChaCha8Rng, p: usize) -> DVector<f64> {
    let v = normal_vector(rng, p);
    let n = v.norm();
    v / n
}

/// Eigenvalues drawn log-uniformly from [lo, hi].
pub fn random_spectrum(rng: &mut ChaCha8Rng, p: usize, lo: f64, hi: f64) -> Spectrum {
    let mut r: Vec<f64> = (0..p)
        .map(|_| (lo.ln() + rng.random::<f64>() * (hi / lo).ln()).exp())
        .collect();
    r.sort_by(f64::total_cmp);
    Spectrum::new(r).unwrap()
}

/// A Aᵀ / p + floor·I with Gaussian A.
pub fn random_psd(rng: &mut ChaCha8Rng, p: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    });
    &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * floor
}

pub fn random_orthogonal(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    });
    a.qr().q()
}

pub fn diag_of(s: &Spectrum) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(s.eigenvalues()))
}

/// Σ = AR1(ρ), β = (w₁ + w_p)/2 in Σ's eigenbasis.
pub fn ar1_extremes(p: usize, rho: f64, sigma2: f64) -> ShiftModel {
    let (spectrum, _) = build_ar1(p, rho).unwrap();
    let mut beta = DVector::zeros(p);
    beta[0] = 0.5;
    beta[p - 1] = 0.5;
    ShiftModel::in_distribution(spectrum, beta, sigma2, 0.0).unwrap()
}

pub fn deterministic(
    spectrum: Spectrum,
    sigma0: DMatrix<f64>,
    beta: DVector<f64>,
    beta0: DVector<f64>,
    sigma2: f64,
) -> ShiftModel {
    ShiftModel::new(spectrum, sigma0, Signal::Deterministic { beta, beta0 }, sigma2, 0.0).unwrap()
}

pub fn isotropic(spectrum: Spectrum, sigma0: DMatrix<f64>, alpha2: f64, sigma2: f64) -> ShiftModel {
    ShiftModel::new(spectrum, sigma0, Signal::Isotropic { alpha2 }, sigma2, 0.0).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
