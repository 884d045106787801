mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use ridge_ood::conditions::{
    check_in_dist_alignment, check_noiseless_form, predict_sign, MuGrid, PredictedSign, SignRule,
};
use ridge_ood::model::{ShiftModel, Spectrum};
use ridge_ood::risk::{optimal_lambda, SearchOptions};

const P: usize = 40;
const MODELS: usize = 50;

struct Tally {
    negative: usize,
    nonnegative: usize,
    inconclusive: usize,
}

fn agree(model: &ShiftModel, phi: f64) -> (PredictedSign, SignRule, f64) {
    let pred = predict_sign(model, phi).unwrap();
    let opt = optimal_lambda(model, phi, &SearchOptions::default()).unwrap();
    match pred.predicted_sign {
        PredictedSign::Negative => assert!(
            opt.lambda_star < 0.0,
            "{:?} predicted negative, lambda* = {}",
            pred.rule,
            opt.lambda_star
        ),
        PredictedSign::Nonnegative => {
            assert!(
                opt.lambda_star >= -1e-8,
                "{:?} predicted nonnegative, lambda* = {}",
                pred.rule,
                opt.lambda_star
            )
        }
        PredictedSign::Inconclusive => {}
    }
    (pred.predicted_sign, pred.rule, opt.lambda_star)
}

fn run_family(seed: u64, make: impl Fn(&mut rand_chacha::ChaCha8Rng) -> (ShiftModel, f64)) -> Tally {
    let mut g = rng(seed);
    let mut t = Tally {
        negative: 0,
        nonnegative: 0,
        inconclusive: 0,
    };
    for _ in 0..MODELS {
        let (model, phi) = make(&mut g);
        match agree(&model, phi).0 {
            PredictedSign::Negative => t.negative += 1,
            PredictedSign::Nonnegative => t.nonnegative += 1,
            PredictedSign::Inconclusive => t.inconclusive += 1,
        }
    }
    t
}

fn top_heavy_beta(g: &mut rand_chacha::ChaCha8Rng, p: usize) -> DVector<f64> {
    let mut beta = normal_vector(g, p) * 0.05;
    beta[p - 1] += 1.0;
    beta[0] += g.random_range(0.0..0.8);
    beta
}

#[test]
fn isotropic_signals_are_nonnegative() {
    let t = run_family(21, |g| {
        let s = random_spectrum(g, P, 0.1, 5.0);
        let sigma0 = random_psd(g, P, 0.05);
        let alpha2 = g.random_range(0.5..3.0);
        let sigma2 = g.random_range(0.05..2.0);
        (isotropic(s, sigma0, alpha2, sigma2), g.random_range(0.2..5.0))
    });
    assert_eq!(t.nonnegative, MODELS);
}

#[test]
fn in_distribution_underparameterized_is_nonnegative() {
    let t = run_family(22, |g| {
        let s = random_spectrum(g, P, 0.1, 5.0);
        let beta = normal_vector(g, P);
        let m = ShiftModel::in_distribution(s, beta, g.random_range(0.01..1.0), 0.0).unwrap();
        (m, g.random_range(0.1..0.95))
    });
    assert_eq!(t.nonnegative, MODELS);
}

#[test]
fn in_distribution_alignment_never_contradicts() {
    let t = run_family(23, |g| {
        let s = random_spectrum(g, P, 0.1, 5.0);
        let beta = top_heavy_beta(g, P);
        let m = ShiftModel::in_distribution(s, beta, g.random_range(0.0..0.05), 0.0).unwrap();
        (m, g.random_range(1.2..8.0))
    });
    assert!(t.negative > 0, "no model triggered the alignment rule");
    assert_eq!(t.nonnegative, 0);
}

#[test]
fn covariate_shift_underparameterized_is_nonnegative() {
    let t = run_family(24, |g| {
        let s = random_spectrum(g, P, 0.1, 5.0);
        let sigma0 = random_psd(g, P, 0.05);
        let beta = normal_vector(g, P);
        (
            deterministic(s, sigma0, beta.clone(), beta, g.random_range(0.01..1.0)),
            g.random_range(0.1..0.95),
        )
    });
    assert_eq!(t.nonnegative, MODELS);
}

#[test]
fn covariate_shift_to_identity_is_nonnegative() {
    let t = run_family(25, |g| {
        let s = random_spectrum(g, P, 0.1, 5.0);
        let beta = normal_vector(g, P);
        let m = deterministic(
            s,
            DMatrix::identity(P, P),
            beta.clone(),
            beta,
            g.random_range(0.01..1.0),
        );
        (m, g.random_range(1.1..6.0))
    });
    assert_eq!(t.nonnegative, MODELS);
}

#[test]
fn covariate_shift_alignment_never_contradicts() {
    let t = run_family(26, |g| {
        let q = random_orthogonal(g, P);
        let mut vals: Vec<f64> = (0..P).map(|_| g.random_range(0.1..4.0)).collect();
        vals.sort_by(f64::total_cmp);
        let sigma0 = &q * DMatrix::from_diagonal(&DVector::from_vec(vals)) * q.transpose();
        let beta = q.column(P - 1).into_owned() + q.column(0).into_owned() * g.random_range(0.0..0.5);
        let m = deterministic(
            Spectrum::identity(P),
            sigma0,
            beta.clone(),
            beta,
            g.random_range(0.0..0.02),
        );
        (m, g.random_range(1.2..5.0))
    });
    assert!(t.negative > 0, "no model triggered the covariate alignment rule");
    assert_eq!(t.nonnegative, 0);
}

#[test]
fn regression_shift_never_contradicts() {
    let t = run_family(27, |g| {
        let s = random_spectrum(g, P, 0.1, 5.0);
        let beta = top_heavy_beta(g, P);
        let beta0 = &beta * g.random_range(1.2..3.0);
        let m = deterministic(s.clone(), diag_of(&s), beta, beta0, g.random_range(0.0..0.2));
        (m, g.random_range(0.2..4.0))
    });
    assert!(t.negative > 0, "no model triggered a regression-shift rule");
    assert_eq!(t.nonnegative, 0);
}

#[test]
fn joint_shift_never_contradicts() {
    let t = run_family(28, |g| {
        let s = random_spectrum(g, P, 0.1, 5.0);
        let sigma0 = random_psd(g, P, 0.1);
        let beta = top_heavy_beta(g, P);
        let beta0 = &beta * g.random_range(1.2..3.0);
        (
            deterministic(s, sigma0, beta, beta0, g.random_range(0.0..0.2)),
            g.random_range(0.2..4.0),
        )
    });
    assert_eq!(t.negative + t.nonnegative + t.inconclusive, MODELS);
}

#[test]
fn noiseless_form_matches_alignment_verdict() {
    let mut g = rng(29);
    let grid = MuGrid::default();
    let mut both = [0usize; 2];
    for i in 0..40 {
        let s = random_spectrum(&mut g, P, 0.1, 5.0);
        let beta = if i % 2 == 0 {
            top_heavy_beta(&mut g, P)
        } else {
            normal_vector(&mut g, P)
        };
        let m = ShiftModel::in_distribution(s, beta, 0.0, 0.0).unwrap();
        let phi = g.random_range(1.2..6.0);
        let a = check_in_dist_alignment(&m, phi, &grid).unwrap();
        let b = check_noiseless_form(&m, phi, &grid).unwrap();
        if a.worst_margin.abs() > 1e-6 {
            assert_eq!(a.holds, b.holds, "margins {} vs {}", a.worst_margin, b.worst_margin);
            both[a.holds as usize] += 1;
        }
    }
    assert!(both[0] > 0 && both[1] > 0, "{both:?}");
}

#[test]
fn isotropic_signal_never_satisfies_alignment() {
    let mut g = rng(30);
    let grid = MuGrid::default();
    for _ in 0..100 {
        let p = g.random_range(5..60);
        let s = random_spectrum(&mut g, p, 0.05, 20.0);
        let m = isotropic(
            s.clone(),
            diag_of(&s),
            g.random_range(0.1..5.0),
            g.random_range(0.0..2.0),
        );
        let report = check_in_dist_alignment(&m, g.random_range(1.1..10.0), &grid).unwrap();
        assert!(!report.holds, "margin {}", report.worst_margin);
    }
}
