//! Truth functions: the CDF of the posterior log-density, viewed as a random
//! variable under the posterior, and the e-values read from it.
//!
//! A [`TruthFunction`] stores its bins in *relative* coordinates, i.e.
//! `log f − shift` where `shift` is the posterior's normalization constant
//! (or a sum of them after convolution). Absolute log-densities are only
//! formed at the edges of the API.
//!
//! Each bin records
//! - `left`/`right`: the bin's extent on the log-density axis,
//! - `mass`,
//! - `cdf_lower`/`cdf_upper`: bounds on the CDF anywhere in `[left, right]`,
//! - `repr`: the point the bin's mass is placed at when convolving,
//! - `support_lo`/`support_hi`: an interval guaranteed to contain the bin's
//!   mass. It equals `[left, right]` for estimated bins and can be wider after
//!   horizontal condensation.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Result};
use crate::posterior::DirichletPosterior;
use crate::streams;

/// How bins are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisMode {
    /// Equal-width bins on the log-density axis; e-values are intervals.
    Horizontal,
    /// Equal-probability bins; e-values are points.
    Vertical,
}

impl AxisMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AxisMode::Horizontal => "horizontal",
            AxisMode::Vertical => "vertical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bin {
    pub left: f64,
    pub right: f64,
    pub mass: f64,
    pub cdf_lower: f64,
    pub cdf_upper: f64,
    pub repr: f64,
    pub support_lo: f64,
    pub support_hi: f64,
}

/// An e-value: an interval `[lower, upper] ⊂ [0, 1]`, degenerate to a point
/// in vertical mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evalue {
    pub lower: f64,
    pub upper: f64,
}

impl Evalue {
    pub fn point(v: f64) -> Self {
        Evalue { lower: v, upper: v }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthFunction {
    mode: AxisMode,
    shift: f64,
    bins: Vec<Bin>,
    n_samples: usize,
    label: String,
    degenerate: bool,
    uneven_last_bin: bool,
}

impl TruthFunction {
    pub(crate) fn from_parts(
        mode: AxisMode,
        shift: f64,
        bins: Vec<Bin>,
        label: String,
        uneven_last_bin: bool,
    ) -> Self {
        TruthFunction {
            mode,
            shift,
            bins,
            n_samples: 0,
            label,
            degenerate: false,
            uneven_last_bin,
        }
    }

    /// All mass at relative coordinate `at`.
    pub fn point_mass(mode: AxisMode, shift: f64, at: f64, label: impl Into<String>) -> Self {
        TruthFunction {
            mode,
            shift,
            bins: vec![Bin {
                left: at,
                right: at,
                mass: 1.0,
                cdf_lower: 1.0,
                cdf_upper: 1.0,
                repr: at,
                support_lo: at,
                support_hi: at,
            }],
            n_samples: 0,
            label: label.into(),
            degenerate: true,
            uneven_last_bin: false,
        }
    }

    /// Discretizes the empirical distribution of `values` (relative
    /// log-densities) into `n_bins` bins.
    ///
    /// Horizontal bins split `[min, max]` into equal widths. Vertical bins
    /// hold `⌊N / n_bins⌋` consecutive order statistics each, the last bin
    /// taking any remainder. If all values coincide the result is a flagged
    /// point mass.
    pub fn from_log_kernels(
        values: &[f64],
        shift: f64,
        n_bins: usize,
        mode: AxisMode,
        label: impl Into<String>,
    ) -> Result<Self> {
        let n = values.len();
        if n_bins < 1 || n < n_bins {
            return Err(domain(format!("need at least {n_bins} samples, got {n}")));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(domain("NaN log-density sample"));
        }
        let label = label.into();
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if min == max {
            let mut tf = Self::point_mass(mode, shift, min, label);
            tf.n_samples = n;
            return Ok(tf);
        }
        let total = n as f64;
        let (bins, uneven) = match mode {
            AxisMode::Horizontal => {
                let width = (max - min) / n_bins as f64;
                let mut counts = vec![0usize; n_bins];
                for &v in values {
                    let i = (((v - min) / width) as usize).min(n_bins - 1);
                    counts[i] += 1;
                }
                let edge = |i: usize| {
                    if i == n_bins {
                        max
                    } else {
                        min + i as f64 * width
                    }
                };
                let mut seen = 0usize;
                let bins = counts
                    .iter()
                    .enumerate()
                    .map(|(i, &cnt)| {
                        let (left, right) = (edge(i), edge(i + 1));
                        let before = seen as f64 / total;
                        seen += cnt;
                        Bin {
                            left,
                            right,
                            mass: cnt as f64 / total,
                            cdf_lower: before,
                            cdf_upper: seen as f64 / total,
                            repr: 0.5 * (left + right),
                            support_lo: left,
                            support_hi: right,
                        }
                    })
                    .collect();
                (bins, false)
            }
            AxisMode::Vertical => {
                let mut sorted = values.to_vec();
                sorted.sort_by(f64::total_cmp);
                let per = n / n_bins;
                let bins = (0..n_bins)
                    .map(|i| {
                        let start = i * per;
                        let end = if i + 1 == n_bins { n } else { start + per };
                        let chunk = &sorted[start..end];
                        let (left, right) = (chunk[0], chunk[chunk.len() - 1]);
                        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
                        Bin {
                            left,
                            right,
                            mass: chunk.len() as f64 / total,
                            cdf_lower: start as f64 / total,
                            cdf_upper: end as f64 / total,
                            repr: mean.clamp(left, right),
                            support_lo: left,
                            support_hi: right,
                        }
                    })
                    .collect();
                (bins, !n.is_multiple_of(n_bins))
            }
        };
        Ok(TruthFunction {
            mode,
            shift,
            bins,
            n_samples: n,
            label,
            degenerate: false,
            uneven_last_bin: uneven,
        })
    }

    pub fn mode(&self) -> AxisMode {
        self.mode
    }

    /// Offset between stored coordinates and absolute log-densities.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn bins(&self) -> &[Bin] {
        &self.bins
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Last bin holds a different share of the mass than the others.
    pub fn has_uneven_last_bin(&self) -> bool {
        self.uneven_last_bin
    }

    pub(crate) fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// The truth function at relative log-density `x`.
    ///
    /// Horizontal: the tightest interval implied by the per-bin bounds and
    /// supports. Vertical: linear interpolation inside the bin containing
    /// `x`, constant across gaps. Below every bin gives `[0, 0]`, above every
    /// bin `[1, 1]`.
    pub fn evaluate(&self, x: f64) -> Evalue {
        let first = &self.bins[0];
        let last = &self.bins[self.bins.len() - 1];
        if x < first.left.min(first.support_lo) {
            return Evalue::point(0.0);
        }
        let top = self
            .bins
            .iter()
            .map(|b| b.support_hi.max(b.right))
            .fold(f64::NEG_INFINITY, f64::max);
        match self.mode {
            AxisMode::Horizontal => {
                if x >= top {
                    return Evalue::point(1.0);
                }
                let mut lower = 0.0f64;
                let mut upper = 1.0f64;
                let mut below_hi = 0.0;
                let mut below_lo = 0.0;
                for b in &self.bins {
                    if b.left <= x {
                        lower = lower.max(b.cdf_lower);
                    }
                    if b.right >= x {
                        upper = upper.min(b.cdf_upper);
                    }
                    if b.support_hi <= x {
                        below_hi += b.mass;
                    }
                    if b.support_lo <= x {
                        below_lo += b.mass;
                    }
                }
                let lower = lower.max(below_hi).clamp(0.0, 1.0);
                let upper = upper.min(below_lo).clamp(0.0, 1.0);
                Evalue {
                    lower: lower.min(upper),
                    upper,
                }
            }
            AxisMode::Vertical => {
                if x >= last.right {
                    return Evalue::point(1.0);
                }
                let g = self.bins.partition_point(|b| b.right <= x);
                let base = if g == 0 {
                    0.0
                } else {
                    self.bins[g - 1].cdf_upper
                };
                let b = &self.bins[g];
                let v = if b.left <= x && x < b.right {
                    let t = (x - b.left) / (b.right - b.left);
                    b.cdf_lower + t * (b.cdf_upper - b.cdf_lower)
                } else {
                    base
                };
                Evalue::point(v.max(base).clamp(0.0, 1.0))
            }
        }
    }

    /// Writes `log_f_left  log_f_right  mass  cdf_lower  cdf_upper`, one row
    /// per bin, in absolute log-density.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# log_f_left\tlog_f_right\tmass\tcdf_lower\tcdf_upper")?;
        for b in &self.bins {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                self.shift + b.left,
                self.shift + b.right,
                b.mass,
                b.cdf_lower,
                b.cdf_upper
            )?;
        }
        Ok(())
    }
}

/// `n` posterior draws of the log-kernel, split over a fixed number of
/// lanes. The output depends on `(post, n, seed)` only.
pub fn sample_log_kernels(post: &DirichletPosterior, n: usize, seed: u64) -> Vec<f64> {
    let sizes: Vec<usize> = streams::lane_sizes(n).collect();
    let cells = post.concentrations().len();
    let lanes: Vec<Vec<f64>> = sizes
        .par_iter()
        .enumerate()
        .map(|(lane, &len)| {
            let mut rng = streams::lane_rng(seed, lane);
            let mut scratch = vec![0.0; cells];
            (0..len)
                .map(|_| post.draw_log_kernel(&mut rng, &mut scratch))
                .collect()
        })
        .collect();
    lanes.concat()
}

/// Monte Carlo truth function of `post`.
///
/// A posterior with constant density yields a flagged point mass.
pub fn estimate_truth_function(
    post: &DirichletPosterior,
    n_samples: usize,
    n_bins: usize,
    mode: AxisMode,
    seed: u64,
) -> Result<TruthFunction> {
    if n_bins < 2 || n_samples < n_bins {
        return Err(domain(format!(
            "need n_samples >= n_bins >= 2 (got {n_samples} samples, {n_bins} bins)"
        )));
    }
    let shift = post.log_norm_const();
    if post.is_flat() {
        let mut tf = TruthFunction::point_mass(mode, shift, 0.0, "flat posterior");
        tf.n_samples = n_samples;
        return Ok(tf);
    }
    let draws = sample_log_kernels(post, n_samples, seed);
    TruthFunction::from_log_kernels(&draws, shift, n_bins, mode, "posterior")
}

/// `W(f*)` for an absolute log-density threshold.
pub fn elementary_evalue(w: &TruthFunction, log_f_star: f64) -> Evalue {
    w.evaluate(log_f_star - w.shift())
}
