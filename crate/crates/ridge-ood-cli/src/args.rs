use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "ridge-ood",
    version,
    about = "Risk equivalents and optimal ridge penalties under distribution shift"
)]
pub struct Cli {
    /// Worker threads for parallel grids and replicates.
    #[arg(long, global = true, env = "RIDGE_OOD_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Model config (JSON).
    #[arg(long)]
    pub config: PathBuf,

    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
pub enum SweepAxis {
    Phi,
    Psi,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
pub enum Dist {
    Gaussian,
    Rademacher,
    StudentT,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// μ, v, ṽ and residual at (λ, φ, ψ).
    Fixpoint {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        lambda: f64,
        #[arg(long)]
        phi: f64,
        /// Subsample aspect ratio; defaults to φ.
        #[arg(long)]
        psi: Option<f64>,
    },
    /// λ_min(φ) and μ₀(φ) over a φ-grid.
    Lambdamin {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        grid: Grid,
    },
    /// Risk decomposition over a λ-grid.
    Risk {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        phi: f64,
        #[arg(long, allow_hyphen_values = true)]
        grid: Grid,
    },
    /// Optimal λ with all local minima, optionally the optimal ψ at fixed λ.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        phi: f64,
        /// Restrict the search to λ ≥ 0.
        #[arg(long)]
        nonnegative: bool,
        /// Also minimize the ensemble risk over ψ ∈ [φ, ∞] at this λ.
        #[arg(long)]
        joint_psi: bool,
        /// Penalty for the ψ search.
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
        lambda: f64,
    },
    /// Condition reports and the predicted sign of λ*.
    Conditions {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        phi: f64,
    },
    /// Samples of the ridge/ensemble equivalence path.
    Path {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        phi: f64,
        /// Ridge endpoint λ̄ (exclusive with --psi).
        #[arg(
            long,
            allow_hyphen_values = true,
            conflicts_with = "psi",
            required_unless_present = "psi"
        )]
        lambda: Option<f64>,
        /// Ensemble endpoint ψ̄.
        #[arg(long)]
        psi: Option<f64>,
        #[arg(long, default_value_t = 11)]
        samples: usize,
    },
    /// Monte Carlo comparison of empirical and theoretical risk.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        phi: f64,
        #[arg(long, allow_hyphen_values = true)]
        grid: Grid,
        /// Subsample aspect ratio for the ensemble; plain ridge when omitted.
        #[arg(long)]
        psi: Option<f64>,
        /// Ensemble size.
        #[arg(long, default_value_t = 100)]
        m: usize,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Dist::Gaussian)]
        z_dist: Dist,
        #[arg(long, value_enum, default_value_t = Dist::Gaussian)]
        noise_dist: Dist,
        /// Degrees of freedom for student-t entries.
        #[arg(long, default_value_t = 8.0)]
        df: f64,
        /// Also write every replicate risk to this CSV file.
        #[arg(long)]
        replicates: Option<PathBuf>,
    },
    /// Theory totals over λ × φ or λ × ψ, long format.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Second axis.
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// λ-grid (x).
        #[arg(long, allow_hyphen_values = true)]
        grid: Grid,
        /// Grid for the second axis (y).
        #[arg(long)]
        ygrid: Grid,
        /// Data aspect ratio for λ × ψ sweeps.
        #[arg(long)]
        phi: Option<f64>,
    },
}

/// `start:stop:count[:log]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    pub log: bool,
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(format!("grid '{s}' must be start:stop:count[:log]"));
        }
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad grid bound '{t}': {e}"))
        };
        let start = num(parts[0])?;
        let stop = num(parts[1])?;
        let count: usize = parts[2]
            .trim()
            .parse()
            .map_err(|e| format!("bad grid count '{}': {e}", parts[2]))?;
        let log = match parts.get(3).map(|t| t.trim()) {
            None | Some("lin") => false,
            Some("log") => true,
            Some(other) => return Err(format!("grid spacing '{other}' must be 'log' or 'lin'")),
        };
        if count == 0 {
            return Err("grid count must be positive".into());
        }
        if !(start.is_finite() && stop.is_finite()) {
            return Err("grid bounds must be finite".into());
        }
        if log && !(start > 0.0 && stop > 0.0) {
            return Err("log grids need positive bounds".into());
        }
        Ok(Self {
            start,
            stop,
            count,
            log,
        })
    }
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let (a, b) = if self.log {
            (self.start.ln(), self.stop.ln())
        } else {
            (self.start, self.stop)
        };
        let step = (b - a) / (self.count - 1) as f64;
        let mut out: Vec<f64> = (0..self.count)
            .map(|i| {
                let t = a + step * i as f64;
                if self.log {
                    t.exp()
                } else {
                    t
                }
            })
            .collect();
        out[0] = self.start;
        out[self.count - 1] = self.stop;
        out
    }
}
