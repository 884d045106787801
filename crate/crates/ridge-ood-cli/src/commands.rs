use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use ridge_ood::conditions::predict_sign;
use ridge_ood::fixed_point::{equivalence_path, lambda_min, mu_zero, solve_mu, tilde_v, Anchor};
use ridge_ood::model::{build_model, ModelConfig, ShiftModel};
use ridge_ood::risk::{ensemble_risk, optimal_lambda, optimal_psi, risk_decomposition, SearchOptions};
use ridge_ood::simulate::{mc_experiment, EnsembleSpec, EntryDist, SimConfig};
use ridge_ood::Error;
use serde::Serialize;

use crate::args::{Command, Dist, SweepAxis};
use crate::error::CliError;
use crate::output::{emit, Cell, Table};

pub fn load_model(path: &Path) -> Result<ShiftModel, CliError> {
    let config = ModelConfig::from_json_file(path).map_err(|e| CliError::Config(e.to_string()))?;
    build_model(&config).map_err(|e| CliError::Config(e.to_string()))
}

fn label<T: Serialize>(value: &T) -> String {
    serde_json::to_value(value)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn check_aspect(name: &str, x: f64) -> Result<(), CliError> {
    if x > 0.0 && !x.is_nan() {
        Ok(())
    } else {
        Err(CliError::Argument(format!("--{name} = {x} must be positive")))
    }
}

fn entry_dist(d: Dist, df: f64) -> EntryDist {
    match d {
        Dist::Gaussian => EntryDist::Gaussian,
        Dist::Rademacher => EntryDist::Rademacher,
        Dist::StudentT => EntryDist::StudentT { df },
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    let (common, table) = match command {
        Command::Fixpoint {
            common,
            lambda,
            phi,
            psi,
        } => {
            let model = load_model(&common.config)?;
            let psi = psi.unwrap_or(phi);
            check_aspect("phi", phi)?;
            check_aspect("psi", psi)?;
            let cell = format!("lambda={lambda}, phi={phi}, psi={psi}");
            let sol = solve_mu(model.spectrum(), lambda, psi).map_err(CliError::numeric(&cell))?;
            let tv = tilde_v(&model, sol.mu, phi, psi).map_err(CliError::numeric(&cell))?;
            let mut t = Table::new(&["lambda", "phi", "psi", "mu", "v", "tilde_v", "residual"]);
            t.push(vec![
                lambda.into(),
                phi.into(),
                psi.into(),
                sol.mu.into(),
                sol.v.into(),
                tv.into(),
                sol.residual.into(),
            ]);
            (common, t)
        }
        Command::Lambdamin { common, grid } => {
            let model = load_model(&common.config)?;
            let s = model.spectrum();
            let mut t = Table::new(&["phi", "lambda_min", "mu_zero", "naive_bound"]);
            for phi in grid.values() {
                check_aspect("grid", phi)?;
                let cell = format!("phi={phi}");
                let lmin = lambda_min(s, phi).map_err(CliError::numeric(&cell))?;
                let mu0 = mu_zero(s, phi).map_err(CliError::numeric(&cell))?;
                let naive = -s.r_min() * (1.0 - phi.sqrt()).powi(2);
                t.push(vec![phi.into(), lmin.into(), mu0.into(), naive.into()]);
            }
            (common, t)
        }
        Command::Risk { common, phi, grid } => {
            let model = load_model(&common.config)?;
            check_aspect("phi", phi)?;
            let lambdas = grid.values();
            let rows = lambdas
                .par_iter()
                .map(|&lambda| {
                    risk_decomposition(&model, lambda, phi)
                        .map_err(CliError::numeric(format!("lambda={lambda}, phi={phi}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut t = Table::new(&["lambda", "phi", "bias", "variance", "shift", "kappa2", "total"]);
            for (lambda, r) in lambdas.into_iter().zip(rows) {
                t.push(vec![
                    lambda.into(),
                    phi.into(),
                    r.bias.into(),
                    r.variance.into(),
                    r.shift.into(),
                    r.kappa2.into(),
                    r.total.into(),
                ]);
            }
            (common, t)
        }
        Command::Optimize {
            common,
            phi,
            nonnegative,
            joint_psi,
            lambda,
        } => {
            let model = load_model(&common.config)?;
            check_aspect("phi", phi)?;
            let opts = SearchOptions {
                lambda_floor: nonnegative.then_some(0.0),
                ..SearchOptions::default()
            };
            let opt = optimal_lambda(&model, phi, &opts).map_err(CliError::numeric(format!("phi={phi}")))?;
            let naive = -model.spectrum().r_min() * (1.0 - phi.sqrt()).powi(2);
            let mut t = Table::new(&[
                "kind",
                "phi",
                "lambda",
                "psi",
                "risk",
                "mu",
                "boundary",
                "degenerate",
                "lambda_min",
                "naive_bound",
            ]);
            t.push(vec![
                "optimum".into(),
                phi.into(),
                opt.lambda_star.into(),
                phi.into(),
                opt.risk_star.into(),
                opt.mu_star.into(),
                label(&opt.boundary).into(),
                opt.degenerate.into(),
                opt.lambda_min.into(),
                naive.into(),
            ]);
            for m in &opt.local_minima {
                t.push(vec![
                    "local".into(),
                    phi.into(),
                    m.lambda.into(),
                    phi.into(),
                    m.risk.into(),
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    opt.lambda_min.into(),
                    naive.into(),
                ]);
            }
            if joint_psi {
                let p = optimal_psi(&model, lambda, phi)
                    .map_err(CliError::numeric(format!("lambda={lambda}, phi={phi}")))?;
                t.push(vec![
                    "psi-optimum".into(),
                    phi.into(),
                    lambda.into(),
                    p.psi_star.into(),
                    p.risk_star.into(),
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    opt.lambda_min.into(),
                    naive.into(),
                ]);
            }
            (common, t)
        }
        Command::Conditions { common, phi } => {
            let model = load_model(&common.config)?;
            check_aspect("phi", phi)?;
            let pred = predict_sign(&model, phi).map_err(CliError::numeric(format!("phi={phi}")))?;
            let mut t = Table::new(&[
                "condition",
                "holds",
                "worst_margin",
                "worst_mu",
                "regime",
                "predicted_sign",
                "rule",
                "closed_form_lambda",
            ]);
            let summary = |condition: Cell, holds: Cell, margin: Cell, mu: Cell| {
                vec![
                    condition,
                    holds,
                    margin,
                    mu,
                    label(&pred.regime).into(),
                    label(&pred.predicted_sign).into(),
                    label(&pred.rule).into(),
                    pred.closed_form_lambda.into(),
                ]
            };
            if pred.reports.is_empty() {
                t.push(summary(Cell::Empty, Cell::Empty, Cell::Empty, Cell::Empty));
            }
            for r in &pred.reports {
                t.push(summary(
                    label(&r.condition).into(),
                    r.holds.into(),
                    r.worst_margin.into(),
                    r.worst_mu.into(),
                ));
            }
            (common, t)
        }
        Command::Path {
            common,
            phi,
            lambda,
            psi,
            samples,
        } => {
            let model = load_model(&common.config)?;
            check_aspect("phi", phi)?;
            let anchor = match (lambda, psi) {
                (Some(l), _) => Anchor::Lambda(l),
                (None, Some(p)) => Anchor::Psi(p),
                (None, None) => return Err(CliError::Argument("one of --lambda or --psi is required".into())),
            };
            let path = equivalence_path(model.spectrum(), phi, anchor, samples).map_err(|e| match e {
                Error::InvalidAnchor(m) => CliError::Argument(m),
                other => CliError::Numeric {
                    cell: format!("phi={phi}"),
                    source: other,
                },
            })?;
            let mut t = Table::new(&["theta", "lambda", "psi", "mu", "total"]);
            for pt in &path.points {
                let r = ensemble_risk(&model, pt.lambda, phi, pt.psi)
                    .map_err(CliError::numeric(format!("lambda={}, psi={}", pt.lambda, pt.psi)))?;
                t.push(vec![
                    pt.theta.into(),
                    pt.lambda.into(),
                    pt.psi.into(),
                    path.mu_star.into(),
                    r.total.into(),
                ]);
            }
            (common, t)
        }
        Command::Simulate {
            common,
            phi,
            grid,
            psi,
            m,
            reps,
            seed,
            z_dist,
            noise_dist,
            df,
            replicates,
        } => {
            let model = load_model(&common.config)?;
            check_aspect("phi", phi)?;
            let mut cfg = SimConfig::new(model.p(), phi, reps, seed);
            cfg.z_dist = entry_dist(z_dist, df);
            cfg.noise_dist = entry_dist(noise_dist, df);
            cfg.ensemble = psi.map(|psi| EnsembleSpec { psi, m });
            cfg.keep_replicates = replicates.is_some();
            let result = mc_experiment(&model, &cfg, &grid.values(), None).map_err(|e| match e {
                Error::InvalidParameter(m) => CliError::Argument(m),
                other => CliError::Numeric {
                    cell: format!("phi={phi}, psi={}", psi.unwrap_or(phi)),
                    source: other,
                },
            })?;
            if let Some(path) = replicates {
                let io_err = |e: std::io::Error| CliError::Output {
                    path: path.display().to_string(),
                    message: e.to_string(),
                };
                let file = File::create(&path).map_err(io_err)?;
                result.write_replicates_csv(BufWriter::new(file)).map_err(io_err)?;
            }
            let mut t = Table::new(&[
                "lambda",
                "phi",
                "psi",
                "empirical_mean",
                "empirical_se",
                "theory_total",
                "rel_error",
            ]);
            for c in &result.cells {
                t.push(vec![
                    c.lambda.into(),
                    c.phi.into(),
                    c.psi.into(),
                    c.empirical_mean.into(),
                    c.empirical_se.into(),
                    c.theory_total.into(),
                    c.rel_error.into(),
                ]);
            }
            (common, t)
        }
        Command::Sweep {
            common,
            axis,
            grid,
            ygrid,
            phi,
        } => {
            let model = load_model(&common.config)?;
            let phi = match (axis, phi) {
                (SweepAxis::Psi, Some(phi)) => {
                    check_aspect("phi", phi)?;
                    phi
                }
                (SweepAxis::Psi, None) => return Err(CliError::Argument("--phi is required for psi sweeps".into())),
                (SweepAxis::Phi, _) => f64::NAN,
            };
            let ys = ygrid.values();
            for &y in &ys {
                check_aspect("ygrid", y)?;
                if axis == SweepAxis::Psi && y < phi {
                    return Err(CliError::Argument(format!("psi = {y} in --ygrid is below phi = {phi}")));
                }
            }
            let cells: Vec<(f64, f64)> = ys
                .iter()
                .flat_map(|&y| grid.values().into_iter().map(move |x| (x, y)))
                .collect();
            let totals = cells
                .par_iter()
                .map(|&(lambda, y)| {
                    let r = match axis {
                        SweepAxis::Phi => risk_decomposition(&model, lambda, y),
                        SweepAxis::Psi => ensemble_risk(&model, lambda, phi, y),
                    };
                    match r {
                        Ok(r) => Ok(r.total),
                        Err(Error::BelowMinimumPenalty { .. }) => Ok(f64::NAN),
                        Err(e) => Err(CliError::Numeric {
                            cell: format!("lambda={lambda}, y={y}"),
                            source: e,
                        }),
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut t = Table::new(&["x", "y", "total"]);
            for ((x, y), total) in cells.into_iter().zip(totals) {
                let total = if total.is_nan() { Cell::Empty } else { total.into() };
                t.push(vec![x.into(), y.into(), total]);
            }
            (common, t)
        }
    };
    emit(&table.render(common.format), common.out.as_deref())
}
