//! The end-to-end conditional-independence test.
//!
//! For each observed category of the conditioning variable the test builds a
//! Dirichlet posterior over the `Y×Z` table, finds the constrained maximum
//! under independence, estimates the truth function and reads the elementary
//! e-value. The composite e-value for the whole hypothesis is the convolution
//! of the per-slice truth functions evaluated at the sum of the thresholds.
//!
//! Reproducibility: each slice's generator seed is derived from the user seed
//! and the slice's sorted concentrations, not from its position or label.
//! Relabeling categories of any variable therefore leaves the report
//! unchanged apart from labels.

use serde::Serialize;

use crate::convolution::composite_truth_function;
use crate::error::{domain, Error, Result};
use crate::posterior::{Alpha, DirichletPosterior, MapStatus};
use crate::streams;
use crate::tables::{contingency_slices, ContingencyTable, Dataset};
use crate::truthfn::{sample_log_kernels, AxisMode, Evalue, TruthFunction};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSelection {
    Horizontal,
    Vertical,
    #[default]
    Both,
}

impl ModeSelection {
    pub fn modes(self) -> &'static [AxisMode] {
        match self {
            ModeSelection::Horizontal => &[AxisMode::Horizontal],
            ModeSelection::Vertical => &[AxisMode::Vertical],
            ModeSelection::Both => &[AxisMode::Horizontal, AxisMode::Vertical],
        }
    }
}

/// Test settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiTestSpec {
    pub alpha: Alpha,
    pub n_samples: usize,
    pub n_bins: usize,
    pub mode: ModeSelection,
    pub seed: u64,
}

impl CiTestSpec {
    pub fn new(seed: u64) -> Self {
        CiTestSpec {
            alpha: Alpha::default(),
            n_samples: 1_000_000,
            n_bins: 100,
            mode: ModeSelection::Both,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 {
            return Err(domain("n_bins must be at least 2"));
        }
        if self.n_samples < self.n_bins {
            return Err(domain("n_samples must be at least n_bins"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Columns {
    pub y: String,
    pub z: String,
    pub given: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceReport {
    pub label: String,
    pub total: u64,
    pub log_norm_const: f64,
    pub log_kernel_star: f64,
    pub log_f_star: f64,
    pub theta_star: Vec<f64>,
    pub map_status: MapStatus,
    /// Constant posterior density: every point ties with the maximum.
    pub degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizontal: Option<Evalue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vertical: Option<Evalue>,
}

impl SliceReport {
    pub fn evalue(&self, mode: AxisMode) -> Option<Evalue> {
        match mode {
            AxisMode::Horizontal => self.horizontal,
            AxisMode::Vertical => self.vertical,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CompositeReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizontal: Option<Evalue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vertical: Option<Evalue>,
}

impl CompositeReport {
    pub fn get(&self, mode: AxisMode) -> Option<Evalue> {
        match mode {
            AxisMode::Horizontal => self.horizontal,
            AxisMode::Vertical => self.vertical,
        }
    }
}

/// Everything the test computed. Serializes to the JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct EvalueReport {
    pub schema_version: u32,
    pub software_version: String,
    pub spec: CiTestSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub columns: Option<Columns>,
    /// `Y` and `Z` categories that entered the tables.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_categories: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_categories: Option<Vec<String>>,
    pub slices: Vec<SliceReport>,
    pub composite: CompositeReport,
    /// Per-slice truth functions, in slice order, one list per mode run.
    #[serde(skip)]
    pub truth_functions: Vec<(AxisMode, Vec<TruthFunction>)>,
    /// Convolved truth function per mode; absent when every slice is
    /// degenerate.
    #[serde(skip)]
    pub composite_truth_functions: Vec<(AxisMode, TruthFunction)>,
}

impl EvalueReport {
    pub fn truth_functions(&self, mode: AxisMode) -> Option<&[TruthFunction]> {
        self.truth_functions
            .iter()
            .find(|(m, _)| *m == mode)
            .map(|(_, v)| v.as_slice())
    }

    pub fn composite_truth_function(&self, mode: AxisMode) -> Option<&TruthFunction> {
        self.composite_truth_functions
            .iter()
            .find(|(m, _)| *m == mode)
            .map(|(_, w)| w)
    }
}

/// Tests `y ⊥ z | given` on a dataset.
///
/// Categories of `given` with no records are left out. `Y` and `Z` are
/// reduced to the categories that occur at least once; each needs two.
pub fn ci_test(
    dataset: &Dataset,
    y: &str,
    z: &str,
    given: &str,
    spec: &CiTestSpec,
) -> Result<EvalueReport> {
    spec.validate()?;
    if y == z || y == given || z == given {
        return Err(domain(
            "Y, Z and the conditioning variable must be three different columns",
        ));
    }
    if dataset.is_empty() {
        return Err(domain("dataset has no records"));
    }
    let slices = contingency_slices(dataset, y, z, given)?;
    let (r, c) = (slices[0].rows(), slices[0].cols());
    let observed = |n: usize, totals: &dyn Fn(&ContingencyTable) -> Vec<u64>| -> Vec<usize> {
        (0..n)
            .filter(|&i| slices.iter().any(|t| totals(t)[i] > 0))
            .collect()
    };
    let keep_rows = observed(r, &|t| t.row_totals().to_vec());
    let keep_cols = observed(c, &|t| t.col_totals().to_vec());
    for (keep, name) in [(&keep_rows, y), (&keep_cols, z)] {
        if keep.len() < 2 {
            return Err(domain(format!(
                "column {name:?} takes fewer than two distinct values; independence is trivially true"
            )));
        }
    }
    let alpha = spec.alpha.restrict(c, &keep_rows, &keep_cols);
    let tables: Vec<ContingencyTable> = slices
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| t.restrict(&keep_rows, &keep_cols))
        .collect();

    let vars = dataset.variables();
    let labels = |name: &str, keep: &[usize]| -> Result<Vec<String>> {
        let v = &vars[dataset.position(name)?];
        Ok(keep.iter().map(|&i| v.labels[i].clone()).collect())
    };
    let mut report = run(
        &tables,
        &CiTestSpec {
            alpha,
            ..spec.clone()
        },
    )?;
    report.spec.alpha = spec.alpha.clone();
    report.columns = Some(Columns {
        y: y.into(),
        z: z.into(),
        given: given.into(),
    });
    report.y_categories = Some(labels(y, &keep_rows)?);
    report.z_categories = Some(labels(z, &keep_cols)?);
    Ok(report)
}

/// Tests conditional independence from ready-made tables, one per category
/// of the conditioning variable. All tables must share their shape.
pub fn ci_test_from_tables(tables: &[ContingencyTable], spec: &CiTestSpec) -> Result<EvalueReport> {
    spec.validate()?;
    let first = tables.first().ok_or_else(|| domain("no tables given"))?;
    let (r, c) = (first.rows(), first.cols());
    if r < 2 || c < 2 {
        return Err(domain("tables need at least two rows and two columns"));
    }
    if let Some(t) = tables.iter().find(|t| (t.rows(), t.cols()) != (r, c)) {
        return Err(domain(format!(
            "table {:?} is {}x{}, expected {r}x{c}",
            t.slice_label(),
            t.rows(),
            t.cols()
        )));
    }
    run(tables, spec)
}

struct Slice {
    post: DirichletPosterior,
    report: SliceReport,
    seed: u64,
}

fn with_context(label: &str, e: Error) -> Error {
    match e {
        Error::Domain(m) => Error::Domain(format!("slice {label:?}: {m}")),
        other => other,
    }
}

fn run(tables: &[ContingencyTable], spec: &CiTestSpec) -> Result<EvalueReport> {
    let mut slices = tables
        .iter()
        .map(|t| {
            let label = t.slice_label().to_string();
            let post = DirichletPosterior::from_table(t, &spec.alpha)
                .map_err(|e| with_context(&label, e))?;
            let map = post
                .constrained_map()
                .map_err(|e| with_context(&label, e))?;
            Ok(Slice {
                report: SliceReport {
                    label,
                    total: t.total(),
                    log_norm_const: post.log_norm_const(),
                    log_kernel_star: map.log_kernel_star,
                    log_f_star: map.log_f_star,
                    theta_star: map.theta_star.theta().to_vec(),
                    map_status: map.status,
                    degenerate: post.is_flat(),
                    horizontal: None,
                    vertical: None,
                },
                post,
                seed: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // Canonical order: by concentration key, ties by threshold. Seeds come
    // from the key and the rank among equal keys.
    let mut order: Vec<usize> = (0..slices.len()).collect();
    let keys: Vec<Vec<u64>> = slices.iter().map(|s| s.post.canonical_key()).collect();
    order.sort_by(|&i, &j| {
        keys[i].cmp(&keys[j]).then(
            slices[i]
                .report
                .log_kernel_star
                .total_cmp(&slices[j].report.log_kernel_star),
        )
    });
    let mut rank = 0u64;
    for (pos, &i) in order.iter().enumerate() {
        rank = if pos > 0 && keys[order[pos - 1]] == keys[i] {
            rank + 1
        } else {
            0
        };
        slices[i].seed =
            streams::derive(spec.seed, keys[i].iter().copied().chain([u64::MAX, rank]));
    }

    let modes = spec.mode.modes();
    let mut per_mode: Vec<Vec<TruthFunction>> = vec![Vec::with_capacity(slices.len()); modes.len()];
    for s in &mut slices {
        let label = s.report.label.clone();
        let shift = s.post.log_norm_const();
        let draws = if s.report.degenerate {
            Vec::new()
        } else {
            sample_log_kernels(&s.post, spec.n_samples, s.seed)
        };
        for (m, &mode) in modes.iter().enumerate() {
            let tf = if s.report.degenerate {
                TruthFunction::point_mass(mode, shift, s.report.log_kernel_star, label.clone())
            } else {
                TruthFunction::from_log_kernels(&draws, shift, spec.n_bins, mode, label.clone())
                    .map_err(|e| with_context(&label, e))?
            };
            let ev = if s.report.degenerate {
                Evalue::point(1.0)
            } else {
                tf.evaluate(s.report.log_kernel_star)
            };
            match mode {
                AxisMode::Horizontal => s.report.horizontal = Some(ev),
                AxisMode::Vertical => s.report.vertical = Some(ev),
            }
            per_mode[m].push(tf);
        }
    }

    let mut composite = CompositeReport::default();
    let mut composite_tfs = Vec::new();
    for (m, &mode) in modes.iter().enumerate() {
        // A degenerate slice is a point mass at its own threshold; convolving
        // with it is an exact shift, so it drops out.
        let live: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| !slices[i].report.degenerate)
            .collect();
        let ev = if live.is_empty() {
            Evalue::point(1.0)
        } else {
            let ws: Vec<&TruthFunction> = live.iter().map(|&i| &per_mode[m][i]).collect();
            let stars: Vec<f64> = live
                .iter()
                .map(|&i| slices[i].report.log_kernel_star)
                .collect();
            let combined = composite_truth_function(&ws, mode)?;
            let ev = combined.evaluate(stars.iter().sum());
            composite_tfs.push((mode, combined));
            ev
        };
        match mode {
            AxisMode::Horizontal => composite.horizontal = Some(ev),
            AxisMode::Vertical => composite.vertical = Some(ev),
        }
    }

    Ok(EvalueReport {
        schema_version: SCHEMA_VERSION,
        software_version: crate::VERSION.to_string(),
        spec: spec.clone(),
        columns: None,
        y_categories: None,
        z_categories: None,
        slices: slices.into_iter().map(|s| s.report).collect(),
        composite,
        truth_functions: modes.iter().copied().zip(per_mode).collect(),
        composite_truth_functions: composite_tfs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[Vec<u64>], label: &str) -> ContingencyTable {
        ContingencyTable::from_rows(rows, label).unwrap()
    }

    fn small_spec() -> CiTestSpec {
        CiTestSpec {
            n_samples: 20_000,
            n_bins: 50,
            ..CiTestSpec::new(7)
        }
    }

    #[test]
    fn empty_slice_is_degenerate() {
        let t = [
            table(&[vec![0, 0], vec![0, 0]], "a"),
            table(&[vec![10, 2], vec![3, 12]], "b"),
        ];
        let rep = ci_test_from_tables(&t, &small_spec()).unwrap();
        assert!(rep.slices[0].degenerate);
        assert_eq!(rep.slices[0].vertical, Some(Evalue::point(1.0)));
        assert_eq!(rep.slices[0].horizontal, Some(Evalue::point(1.0)));
        // composite equals the other slice's e-value: point mass at its threshold
        assert_eq!(rep.composite.vertical, rep.slices[1].vertical);
    }

    #[test]
    fn slice_order_does_not_matter() {
        let a = table(&[vec![30, 5], vec![4, 28]], "a");
        let b = table(&[vec![12, 11], vec![9, 14]], "b");
        let c = table(&[vec![3, 9], vec![8, 2]], "c");
        let spec = small_spec();
        let r1 = ci_test_from_tables(&[a.clone(), b.clone(), c.clone()], &spec).unwrap();
        let r2 = ci_test_from_tables(&[c, a, b], &spec).unwrap();
        assert_eq!(r1.composite, r2.composite);
        assert_eq!(r1.slices[0].vertical, r2.slices[1].vertical);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = table(&[vec![1, 2], vec![3, 4]], "a");
        let b = table(&[vec![1, 2, 3], vec![3, 4, 5]], "b");
        assert!(ci_test_from_tables(&[a, b], &small_spec()).is_err());
        assert!(ci_test_from_tables(&[], &small_spec()).is_err());
    }

    #[test]
    fn bad_spec_is_rejected() {
        let a = table(&[vec![1, 2], vec![3, 4]], "a");
        let spec = CiTestSpec {
            n_bins: 1,
            ..small_spec()
        };
        assert!(ci_test_from_tables(&[a], &spec).is_err());
    }
}
