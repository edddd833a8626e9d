//! Convolution of truth functions and condensation back to a bin budget.
//!
//! The distribution of a product of independent positive variables is the
//! additive convolution of their logarithms, so truth functions are combined
//! by summing log-density atoms pairwise (`n_a · n_b` atoms) and multiplying
//! their masses. Condensation then reduces the atom list to `n` bins:
//!
//! - horizontally, by grouping consecutive atoms into equal-count groups and
//!   bounding the CDF over each group;
//! - vertically, by cutting the CDF at `1/n, 2/n, …, 1` and splitting the
//!   atom a cut falls in.
//!
//! Atoms carry the support interval of the bins they came from. Horizontal
//! bounds are computed against those supports, so for exactly represented
//! inputs they reduce to the first/last cumulative value of each group, and
//! for binned inputs they still bracket every distribution consistent with
//! the bins.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{domain, Result};
use crate::truthfn::{AxisMode, Bin, Evalue, TruthFunction};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    /// Relative log-density.
    pub log_f: f64,
    pub mass: f64,
    pub support_lo: f64,
    pub support_hi: f64,
}

/// Atoms of one pairwise convolution, sorted by position, before condensation.
#[derive(Debug, Clone)]
pub struct RawConvolution {
    atoms: Vec<Atom>,
    cumulative: Vec<f64>,
    shift: f64,
}

impl RawConvolution {
    /// Builds from arbitrary atoms (sorted here, ties kept in input order).
    pub fn from_atoms(mut atoms: Vec<Atom>, shift: f64) -> Result<Self> {
        if atoms.is_empty() {
            return Err(domain("no atoms"));
        }
        if atoms.iter().any(|a| a.log_f.is_nan() || !(a.mass >= 0.0)) {
            return Err(domain("atoms need a position and a nonnegative mass"));
        }
        atoms.sort_by(|a, b| a.log_f.total_cmp(&b.log_f));
        let cumulative = atoms
            .iter()
            .scan(0.0, |acc, a| {
                *acc += a.mass;
                Some(*acc)
            })
            .collect();
        Ok(RawConvolution {
            atoms,
            cumulative,
            shift,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// All pairwise sums of the inputs' representative points.
pub fn convolve(wa: &TruthFunction, wb: &TruthFunction) -> RawConvolution {
    let atoms = wa
        .bins()
        .iter()
        .flat_map(|a| {
            wb.bins().iter().map(move |b| Atom {
                log_f: a.repr + b.repr,
                mass: a.mass * b.mass,
                support_lo: a.support_lo + b.support_lo,
                support_hi: a.support_hi + b.support_hi,
            })
        })
        .collect();
    RawConvolution::from_atoms(atoms, wa.shift() + wb.shift()).expect("inputs have bins")
}

/// Step CDF evaluated from a list sorted by some key, with prefix masses.
struct Prefix {
    keys: Vec<f64>,
    mass: Vec<f64>,
}

impl Prefix {
    fn new(atoms: &[Atom], key: impl Fn(&Atom) -> f64) -> Self {
        let mut pairs: Vec<(f64, f64)> = atoms.iter().map(|a| (key(a), a.mass)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        let mass = pairs
            .iter()
            .map(|p| {
                acc += p.1;
                acc
            })
            .collect();
        Prefix {
            keys: pairs.into_iter().map(|p| p.0).collect(),
            mass,
        }
    }

    /// Total mass with key `<= x`.
    fn at(&self, x: f64) -> f64 {
        match self.keys.partition_point(|&k| k <= x) {
            0 => 0.0,
            i => self.mass[i - 1],
        }
    }
}

/// Groups the sorted atoms into `n_bins` runs of equal atom count (the last
/// run takes the remainder) and bounds the CDF over each run.
pub fn condense_horizontal(raw: &RawConvolution, n_bins: usize) -> Result<TruthFunction> {
    let len = raw.len();
    if n_bins == 0 || len < n_bins {
        return Err(domain(format!(
            "cannot condense {len} atoms into {n_bins} bins"
        )));
    }
    // Lower CDF: mass certainly at or below x. Upper: mass possibly there.
    let certain = Prefix::new(&raw.atoms, |a| a.support_hi);
    let possible = Prefix::new(&raw.atoms, |a| a.support_lo);
    let per = len / n_bins;
    let bins = (0..n_bins)
        .map(|i| {
            let start = i * per;
            let end = if i + 1 == n_bins { len } else { start + per };
            let group = &raw.atoms[start..end];
            let (left, right) = (group[0].log_f, group[group.len() - 1].log_f);
            Bin {
                left,
                right,
                mass: group.iter().map(|a| a.mass).sum(),
                cdf_lower: certain.at(left),
                cdf_upper: possible.at(right),
                repr: 0.5 * (left + right),
                support_lo: group
                    .iter()
                    .map(|a| a.support_lo)
                    .fold(f64::INFINITY, f64::min),
                support_hi: group
                    .iter()
                    .map(|a| a.support_hi)
                    .fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    Ok(TruthFunction::from_parts(
        AxisMode::Horizontal,
        raw.shift,
        bins,
        "condensed".into(),
        !len.is_multiple_of(n_bins),
    ))
}

/// Cuts the CDF at `1/n, …, 1`. An atom straddling a cut is split in
/// proportion to the mass on each side; each bin's representative is the
/// mass-weighted mean of what it received.
pub fn condense_vertical(raw: &RawConvolution, n_bins: usize) -> Result<TruthFunction> {
    let len = raw.len();
    if n_bins == 0 || len < n_bins {
        return Err(domain(format!(
            "cannot condense {len} atoms into {n_bins} bins"
        )));
    }
    let atoms = &raw.atoms;
    let cum = &raw.cumulative;
    let total = cum[len - 1];
    if !(total > 0.0) {
        return Err(domain("cannot condense a distribution with no mass"));
    }
    let last_positive = atoms
        .iter()
        .rposition(|a| a.mass > 0.0)
        .expect("positive total");

    let mut bins = Vec::with_capacity(n_bins);
    // Current atom and the fraction of its mass already assigned.
    let mut atom = 0usize;
    let mut used = 0.0f64;
    let mut cdf = 0.0f64;
    for i in 0..n_bins {
        while atom < last_positive && (atoms[atom].mass == 0.0 || used >= 1.0) {
            atom += 1;
            used = 0.0;
        }
        let (end_atom, end_frac) = if i + 1 == n_bins {
            (last_positive, 1.0)
        } else {
            let cut = total * (i + 1) as f64 / n_bins as f64;
            let w = cum.partition_point(|&c| c < cut).min(last_positive);
            let before = if w == 0 { 0.0 } else { cum[w - 1] };
            let frac = if atoms[w].mass > 0.0 {
                ((cut - before) / atoms[w].mass).clamp(0.0, 1.0)
            } else {
                1.0
            };
            if w == atom {
                (w, frac.max(used))
            } else {
                (w, frac)
            }
        };

        let mut mass = 0.0;
        let mut moment = 0.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut left = atoms[atom].log_f;
        let mut first = true;
        for j in atom..=end_atom {
            let from = if j == atom { used } else { 0.0 };
            let to = if j == end_atom { end_frac } else { 1.0 };
            let m = (to - from).max(0.0) * atoms[j].mass;
            if m > 0.0 {
                if first {
                    left = atoms[j].log_f;
                    first = false;
                }
                mass += m;
                moment += m * atoms[j].log_f;
                lo = lo.min(atoms[j].support_lo);
                hi = hi.max(atoms[j].support_hi);
            }
        }
        let right = atoms[end_atom].log_f;
        if first {
            // Nothing left to assign; happens only through rounding at the top.
            lo = left;
            hi = right;
        }
        let repr = if mass > 0.0 {
            (moment / mass).clamp(left, right)
        } else {
            right
        };
        let lower = cdf;
        cdf += mass;
        bins.push(Bin {
            left,
            right,
            mass: mass / total,
            cdf_lower: lower / total,
            cdf_upper: if i + 1 == n_bins {
                1.0
            } else {
                (cdf / total).min(1.0)
            },
            repr,
            support_lo: lo,
            support_hi: hi,
        });
        atom = end_atom;
        used = end_frac;
    }
    Ok(TruthFunction::from_parts(
        AxisMode::Vertical,
        raw.shift,
        bins,
        "condensed".into(),
        false,
    ))
}

fn condense(raw: &RawConvolution, n_bins: usize, mode: AxisMode) -> Result<TruthFunction> {
    match mode {
        AxisMode::Horizontal => condense_horizontal(raw, n_bins),
        AxisMode::Vertical => condense_vertical(raw, n_bins),
    }
}

/// Left fold of convolve-then-condense over `ws`, condensing to the largest
/// input bin count after every step.
pub fn composite_truth_function(ws: &[&TruthFunction], mode: AxisMode) -> Result<TruthFunction> {
    let (first, rest) = ws
        .split_first()
        .ok_or_else(|| domain("composite needs at least one truth function"))?;
    if let Some(w) = ws.iter().find(|w| w.mode() != mode) {
        return Err(domain(format!(
            "mixed axis modes: expected {}, got {} ({})",
            mode.as_str(),
            w.mode().as_str(),
            w.label()
        )));
    }
    let budget = ws.iter().map(|w| w.bins().len()).max().unwrap_or(1);
    let mut acc = (*first).clone();
    for w in rest {
        let raw = convolve(&acc, w);
        let label = format!("{} * {}", acc.label(), w.label());
        acc = condense(&raw, budget.min(raw.len()), mode)?.with_label(label);
    }
    Ok(acc)
}

/// Composite e-value with thresholds given relative to each input's shift.
pub fn composite_evalue_relative(
    ws: &[&TruthFunction],
    relative_stars: &[f64],
    mode: AxisMode,
) -> Result<Evalue> {
    if ws.len() != relative_stars.len() {
        return Err(domain("one threshold per truth function is required"));
    }
    let combined = composite_truth_function(ws, mode)?;
    let target: f64 = relative_stars.iter().sum();
    Ok(combined.evaluate(target))
}

/// Composite e-value at the product of the thresholds, i.e. at
/// `Σ log_f_stars` in log space. With one input this is the elementary
/// e-value.
pub fn composite_evalue(
    ws: &[&TruthFunction],
    log_f_stars: &[f64],
    mode: AxisMode,
) -> Result<Evalue> {
    let rel: Vec<f64> = ws
        .iter()
        .zip(log_f_stars)
        .map(|(w, s)| s - w.shift())
        .collect();
    if rel.len() != ws.len() || ws.len() != log_f_stars.len() {
        return Err(domain("one threshold per truth function is required"));
    }
    composite_evalue_relative(ws, &rel, mode)
}

/// Half-width of the log-normal reference in standard deviations.
pub const LOGNORMAL_TRUNCATION: f64 = 6.0;

/// Discretized law of `ln Y` for `Y ~ lnN(mu, sigma²)`, i.e. `N(mu, sigma²)`
/// truncated to `mu ± 6 sigma`.
pub fn lognormal_reference(
    mu: f64,
    sigma: f64,
    n_bins: usize,
    mode: AxisMode,
) -> Result<TruthFunction> {
    if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
        return Err(domain("log-normal reference needs finite mu and sigma > 0"));
    }
    if n_bins == 0 {
        return Err(domain("need at least one bin"));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let t = LOGNORMAL_TRUNCATION;
    let (p_lo, p_hi) = (std.cdf(-t), std.cdf(t));
    let span = p_hi - p_lo;
    let n = n_bins as f64;
    // Edges in standard units and their truncated CDF values.
    let (z, cdf): (Vec<f64>, Vec<f64>) = match mode {
        AxisMode::Horizontal => (0..=n_bins)
            .map(|i| {
                let z = if i == n_bins {
                    t
                } else {
                    -t + 2.0 * t * i as f64 / n
                };
                let c = if i == n_bins {
                    1.0
                } else {
                    (std.cdf(z) - p_lo) / span
                };
                (z, c)
            })
            .unzip(),
        AxisMode::Vertical => (0..=n_bins)
            .map(|i| {
                let c = i as f64 / n;
                let z = match i {
                    0 => -t,
                    i if i == n_bins => t,
                    _ => std.inverse_cdf(p_lo + c * span),
                };
                (z, c)
            })
            .unzip(),
    };
    let bins = (0..n_bins)
        .map(|i| {
            let (za, zb) = (z[i], z[i + 1]);
            let mass = cdf[i + 1] - cdf[i];
            let (left, right) = (mu + sigma * za, mu + sigma * zb);
            let repr = match mode {
                AxisMode::Horizontal => 0.5 * (left + right),
                AxisMode::Vertical => {
                    let m = (std.cdf(zb) - std.cdf(za)).max(f64::MIN_POSITIVE);
                    (mu + sigma * (std.pdf(za) - std.pdf(zb)) / m).clamp(left, right)
                }
            };
            Bin {
                left,
                right,
                mass,
                cdf_lower: cdf[i],
                cdf_upper: cdf[i + 1],
                repr,
                support_lo: left,
                support_hi: right,
            }
        })
        .collect();
    Ok(TruthFunction::from_parts(
        mode,
        0.0,
        bins,
        format!("lognormal({mu}, {sigma})"),
        false,
    ))
}
