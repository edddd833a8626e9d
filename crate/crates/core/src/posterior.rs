//! Dirichlet posterior of one contingency-table slice.
//!
//! Densities are normalized and handled in log space. The log-density is
//! split as `log_norm_const + log_kernel(θ)` with
//! `log_kernel(θ) = Σ (a_yz − 1) ln θ_yz`; downstream code works with the
//! kernel so that a change of normalization constant cannot perturb any
//! e-value.
//!
//! Every per-cell reduction (normalizer, kernel, draws) runs over the cells
//! in ascending order of concentration. The result therefore depends only on
//! the multiset of concentrations, which makes e-values bitwise invariant
//! under relabeling rows/columns and under transposition.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Result};
use crate::tables::ContingencyTable;

/// Prior hyperparameters: one value broadcast to every cell, or a full
/// row-major grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Alpha {
    Scalar(f64),
    Grid(Vec<f64>),
}

impl Default for Alpha {
    fn default() -> Self {
        Alpha::Scalar(1.0)
    }
}

impl Alpha {
    fn expand(&self, cells: usize) -> Result<Vec<f64>> {
        let v = match self {
            Alpha::Scalar(a) => vec![*a; cells],
            Alpha::Grid(g) if g.len() == cells => g.clone(),
            Alpha::Grid(g) => {
                return Err(domain(format!(
                    "alpha grid has {} entries, table has {cells} cells",
                    g.len()
                )))
            }
        };
        if v.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(domain("alpha must be positive and finite"));
        }
        Ok(v)
    }

    /// Keeps the listed rows and columns of a grid.
    pub(crate) fn restrict(&self, cols: usize, keep_rows: &[usize], keep_cols: &[usize]) -> Alpha {
        self.permute(cols, keep_rows, keep_cols)
    }

    /// Applies the same row/column reordering as [`ContingencyTable::permute`].
    pub fn permute(&self, cols: usize, row_perm: &[usize], col_perm: &[usize]) -> Alpha {
        match self {
            Alpha::Scalar(a) => Alpha::Scalar(*a),
            Alpha::Grid(g) => Alpha::Grid(
                row_perm
                    .iter()
                    .flat_map(|&y| col_perm.iter().map(move |&z| g[y * cols + z]))
                    .collect(),
            ),
        }
    }
}

/// A point of the `r×c` probability simplex, row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimplexPoint {
    rows: usize,
    cols: usize,
    theta: Vec<f64>,
}

const SIMPLEX_TOL: f64 = 1e-12;

impl SimplexPoint {
    pub fn new(rows: usize, cols: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != rows * cols {
            return Err(domain("simplex point has the wrong number of cells"));
        }
        if theta.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(domain("simplex coordinates must be finite and nonnegative"));
        }
        let s: f64 = theta.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL * theta.len() as f64 {
            return Err(domain(format!("simplex coordinates sum to {s}")));
        }
        Ok(SimplexPoint { rows, cols, theta })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row_marginals(&self) -> Vec<f64> {
        self.theta
            .chunks(self.cols)
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_marginals(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|z| (0..self.rows).map(|y| self.theta[y * self.cols + z]).sum())
            .collect()
    }
}

/// Dirichlet law over one slice's cell probabilities.
#[derive(Debug, Clone)]
pub struct DirichletPosterior {
    rows: usize,
    cols: usize,
    conc: Vec<f64>,
    /// Cell indices by ascending concentration.
    order: Vec<usize>,
    log_norm_const: f64,
    gammas: Vec<Gamma<f64>>,
}

impl DirichletPosterior {
    pub fn new(rows: usize, cols: usize, conc: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || conc.len() != rows * cols {
            return Err(domain("concentration grid does not match its dimensions"));
        }
        if conc.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(domain("concentrations must be positive and finite"));
        }
        let mut order: Vec<usize> = (0..conc.len()).collect();
        order.sort_by(|&i, &j| conc[i].total_cmp(&conc[j]));
        let total: f64 = order.iter().map(|&i| conc[i]).sum();
        let log_norm_const =
            ln_gamma(total) - order.iter().map(|&i| ln_gamma(conc[i])).sum::<f64>();
        // Shapes below one are drawn as Gamma(a + 1)·U^(1/a).
        let gammas = order
            .iter()
            .map(|&i| {
                let a = conc[i];
                Gamma::new(if a < 1.0 { a + 1.0 } else { a }, 1.0).expect("positive shape")
            })
            .collect();
        Ok(DirichletPosterior {
            rows,
            cols,
            conc,
            order,
            log_norm_const,
            gammas,
        })
    }

    /// Concentrations `counts + alpha`.
    pub fn from_table(table: &ContingencyTable, alpha: &Alpha) -> Result<Self> {
        let alpha = alpha.expand(table.rows() * table.cols())?;
        let conc = table
            .counts()
            .iter()
            .zip(&alpha)
            .map(|(&n, &a)| n as f64 + a)
            .collect();
        Self::new(table.rows(), table.cols(), conc)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn concentrations(&self) -> &[f64] {
        &self.conc
    }

    pub fn log_norm_const(&self) -> f64 {
        self.log_norm_const
    }

    /// Every concentration equals one: the density is constant.
    pub fn is_flat(&self) -> bool {
        self.conc.iter().all(|&a| a == 1.0)
    }

    /// Same law with `delta` added to the normalization constant. Every
    /// log-density moves by `delta`; kernels and e-values must not.
    pub fn with_shifted_norm(&self, delta: f64) -> Self {
        DirichletPosterior {
            log_norm_const: self.log_norm_const + delta,
            ..self.clone()
        }
    }

    /// Bit patterns of the sorted concentrations. Two posteriors with equal
    /// keys have identically distributed log-densities.
    pub(crate) fn canonical_key(&self) -> Vec<u64> {
        self.order.iter().map(|&i| self.conc[i].to_bits()).collect()
    }

    /// `Σ (a − 1) ln θ` with `0 · ln 0 = 0`. A zero coordinate under a
    /// positive exponent gives `−∞`; under a negative exponent, `+∞`.
    pub fn log_kernel(&self, point: &SimplexPoint) -> Result<f64> {
        if point.dims() != self.dims() {
            return Err(domain("simplex point and posterior dimensions differ"));
        }
        Ok(self
            .order
            .iter()
            .map(|&i| xlogy(self.conc[i] - 1.0, point.theta[i]))
            .sum())
    }

    /// Normalized posterior log-density.
    pub fn log_density(&self, point: &SimplexPoint) -> Result<f64> {
        Ok(self.log_norm_const + self.log_kernel(point)?)
    }

    /// Fills `log_theta` (canonical order) with the logs of one Dirichlet draw.
    fn draw_log_theta<R: Rng + ?Sized>(&self, rng: &mut R, log_theta: &mut [f64]) {
        for ((slot, g), &i) in log_theta.iter_mut().zip(&self.gammas).zip(&self.order) {
            let a = self.conc[i];
            let mut lg = g.sample(rng).ln();
            if a < 1.0 {
                let u: f64 = 1.0 - rng.random::<f64>();
                lg += u.ln() / a;
            }
            *slot = lg;
        }
        let max = log_theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = max + log_theta.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        for l in log_theta.iter_mut() {
            *l -= log_sum;
        }
    }

    /// Log-kernel of one posterior draw.
    pub(crate) fn draw_log_kernel<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut [f64]) -> f64 {
        self.draw_log_theta(rng, scratch);
        scratch
            .iter()
            .zip(&self.order)
            .map(|(l, &i)| (self.conc[i] - 1.0) * l)
            .sum()
    }

    /// One exact Dirichlet draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SimplexPoint {
        let mut logs = vec![0.0; self.conc.len()];
        self.draw_log_theta(rng, &mut logs);
        let mut theta = vec![0.0; self.conc.len()];
        for (l, &i) in logs.iter().zip(&self.order) {
            theta[i] = l.exp();
        }
        SimplexPoint {
            rows: self.rows,
            cols: self.cols,
            theta,
        }
    }

    /// Maximum of the posterior over `θ_yz = p_y · q_z`.
    ///
    /// With `w = a − 1` the objective separates into
    /// `Σ_y R_y ln p_y + Σ_z C_z ln q_z` (`R`, `C` the row and column sums of
    /// `w`), so `p = R / S`, `q = C / S` with `S = Σ w`.
    pub fn constrained_map(&self) -> Result<ConstrainedMap> {
        let (r, c) = (self.rows, self.cols);
        let w: Vec<f64> = self.conc.iter().map(|a| a - 1.0).collect();
        let row_w: Vec<f64> = (0..r)
            .map(|y| sorted_sum((0..c).map(|z| w[y * c + z])))
            .collect();
        let col_w: Vec<f64> = (0..c)
            .map(|z| sorted_sum((0..r).map(|y| w[y * c + z])))
            .collect();
        if row_w.iter().chain(&col_w).any(|&s| s < 0.0) {
            return Err(domain(
                "constrained density is unbounded: a row or column of (counts + alpha − 1) sums below zero",
            ));
        }
        let total = sorted_sum(w.iter().copied());

        let (p, q, status) = if total <= 0.0 {
            (
                vec![1.0 / r as f64; r],
                vec![1.0 / c as f64; c],
                MapStatus::Flat,
            )
        } else {
            let p: Vec<f64> = row_w.iter().map(|s| s / total).collect();
            let q: Vec<f64> = col_w.iter().map(|s| s / total).collect();
            let status = if p.iter().chain(&q).any(|&v| v == 0.0) {
                MapStatus::Boundary
            } else {
                MapStatus::Interior
            };
            (p, q, status)
        };
        let log_kernel_star = sorted_sum(
            row_w
                .iter()
                .zip(&p)
                .chain(col_w.iter().zip(&q))
                .map(|(&s, &m)| xlogy(s, m)),
        );
        let theta = p
            .iter()
            .flat_map(|&py| q.iter().map(move |&qz| py * qz))
            .collect();
        Ok(ConstrainedMap {
            theta_star: SimplexPoint {
                rows: r,
                cols: c,
                theta,
            },
            log_kernel_star,
            log_f_star: self.log_norm_const + log_kernel_star,
            status,
        })
    }
}

/// `a · ln b` with `0 · ln b = 0` for every `b`.
fn xlogy(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * b.ln()
    }
}

/// Sum in ascending order; independent of the order of the inputs.
fn sorted_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Where the constrained maximum sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MapStatus {
    /// All marginals strictly positive.
    Interior,
    /// Some marginal is zero; `θ*` is the limit point on the simplex boundary.
    Boundary,
    /// The constrained density is constant; `θ*` is the uniform point.
    Flat,
}

/// Constrained maximum a posteriori point under independence.
#[derive(Debug, Clone, Serialize)]
pub struct ConstrainedMap {
    pub theta_star: SimplexPoint,
    /// Log-density at `θ*` minus the normalization constant.
    pub log_kernel_star: f64,
    pub log_f_star: f64,
    pub status: MapStatus,
}

/// [`DirichletPosterior::from_table`] followed by
/// [`DirichletPosterior::constrained_map`].
pub fn constrained_map(table: &ContingencyTable, alpha: &Alpha) -> Result<ConstrainedMap> {
    DirichletPosterior::from_table(table, alpha)?.constrained_map()
}
