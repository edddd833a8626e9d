//! Raw records, CPT models and per-slice contingency tables.
//!
//! Category values are stored as dense 1-based indices. A CSV column whose
//! values are all positive integers uses those integers directly (the
//! cardinality is the largest value seen); any other column is mapped to
//! indices in first-appearance order. The label of every index is kept so
//! reports can be traced back to the input.

use std::io::{Read, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, schema, Error, Result};

/// One categorical variable: its column name and the label of each index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Variable {
    pub name: String,
    /// `labels[i]` is the label of category index `i + 1`.
    pub labels: Vec<String>,
}

impl Variable {
    pub fn cardinality(&self) -> usize {
        self.labels.len()
    }

    fn numbered(name: &str, n: usize) -> Self {
        Variable {
            name: name.to_string(),
            labels: (1..=n).map(|i| i.to_string()).collect(),
        }
    }
}

/// Raw observations of three categorical variables, stored in `(x, y, z)`
/// order with 1-based indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    vars: [Variable; 3],
    records: Vec<[u32; 3]>,
}

impl Dataset {
    /// Builds a dataset, checking that every index lies in `1..=cardinality`.
    pub fn new(vars: [Variable; 3], records: Vec<[u32; 3]>) -> Result<Self> {
        for v in &vars {
            if v.cardinality() == 0 {
                return Err(schema(format!("variable {} has no categories", v.name)));
            }
        }
        for (i, rec) in records.iter().enumerate() {
            for (j, &idx) in rec.iter().enumerate() {
                if idx == 0 || idx as usize > vars[j].cardinality() {
                    return Err(domain(format!(
                        "record {i}: index {idx} of {} outside 1..={}",
                        vars[j].name,
                        vars[j].cardinality()
                    )));
                }
            }
        }
        Ok(Dataset { vars, records })
    }

    pub fn records(&self) -> &[[u32; 3]] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn variables(&self) -> &[Variable; 3] {
        &self.vars
    }

    /// `(k, r, c)`: cardinalities of X, Y and Z.
    pub fn cardinalities(&self) -> (usize, usize, usize) {
        (
            self.vars[0].cardinality(),
            self.vars[1].cardinality(),
            self.vars[2].cardinality(),
        )
    }

    /// Position of the variable called `name`.
    pub fn position(&self, name: &str) -> Result<usize> {
        self.vars
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| schema(format!("unknown column {name:?}")))
    }

    /// Writes the dataset as CSV with a header row, using category labels.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(self.vars.iter().map(|v| v.name.as_str()))
            .map_err(csv_err)?;
        for rec in &self.records {
            w.write_record(
                rec.iter()
                    .zip(&self.vars)
                    .map(|(&i, v)| v.labels[i as usize - 1].as_str()),
            )
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a CSV stream with a header row and keeps the three named columns,
/// in `[x, y, z]` order.
pub fn ingest_csv<R: Read>(source: R, columns: [&str; 3]) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| schema(format!("unreadable header: {e}")))?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(schema("empty input: no header row"));
    }
    let mut picks = [0usize; 3];
    for (slot, name) in picks.iter_mut().zip(columns) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| schema(format!("missing column {name:?}")))?;
    }

    let mut raw: Vec<[String; 3]> = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let mut vals: [String; 3] = Default::default();
        for (v, &col) in vals.iter_mut().zip(&picks) {
            let cell = row.get(col).unwrap_or("");
            if cell.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: format!("empty value in column {:?}", &headers[col]),
                });
            }
            *v = cell.to_string();
        }
        raw.push(vals);
    }

    let mut vars: Vec<Variable> = Vec::with_capacity(3);
    let mut indexed: Vec<Vec<u32>> = Vec::with_capacity(3);
    for (j, name) in columns.iter().enumerate() {
        let (var, idx) = encode_column(name, raw.iter().map(|r| r[j].as_str()));
        vars.push(var);
        indexed.push(idx);
    }
    let records = (0..raw.len())
        .map(|i| [indexed[0][i], indexed[1][i], indexed[2][i]])
        .collect();
    let vars: [Variable; 3] = vars.try_into().expect("three columns");
    Dataset::new(vars, records)
}

fn encode_column<'a>(
    name: &str,
    values: impl Iterator<Item = &'a str> + Clone,
) -> (Variable, Vec<u32>) {
    let as_ints: Option<Vec<u32>> = values
        .clone()
        .map(|v| v.parse::<u32>().ok().filter(|&i| i >= 1))
        .collect();
    if let Some(ints) = as_ints {
        let max = ints.iter().copied().max().unwrap_or(1) as usize;
        return (Variable::numbered(name, max), ints);
    }
    let mut labels: Vec<String> = Vec::new();
    let idx = values
        .map(|v| match labels.iter().position(|l| l == v) {
            Some(p) => p as u32 + 1,
            None => {
                labels.push(v.to_string());
                labels.len() as u32
            }
        })
        .collect();
    (
        Variable {
            name: name.to_string(),
            labels,
        },
        idx,
    )
}

/// Counts `n_yz` of one conditioning slice, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContingencyTable {
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
    slice_label: String,
    row_totals: Vec<u64>,
    col_totals: Vec<u64>,
    total: u64,
}

impl ContingencyTable {
    pub fn new(
        rows: usize,
        cols: usize,
        counts: Vec<u64>,
        slice_label: impl Into<String>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(domain(
                "contingency table needs at least one row and one column",
            ));
        }
        if counts.len() != rows * cols {
            return Err(domain(format!(
                "{} counts do not fill a {rows}x{cols} table",
                counts.len()
            )));
        }
        let row_totals = (0..rows)
            .map(|y| counts[y * cols..(y + 1) * cols].iter().sum())
            .collect();
        let col_totals = (0..cols)
            .map(|z| (0..rows).map(|y| counts[y * cols + z]).sum())
            .collect();
        let total = counts.iter().sum();
        Ok(ContingencyTable {
            rows,
            cols,
            counts,
            slice_label: slice_label.into(),
            row_totals,
            col_totals,
            total,
        })
    }

    pub fn from_rows(grid: &[Vec<u64>], slice_label: impl Into<String>) -> Result<Self> {
        let rows = grid.len();
        let cols = grid.first().map_or(0, Vec::len);
        if grid.iter().any(|r| r.len() != cols) {
            return Err(domain("ragged contingency table"));
        }
        Self::new(rows, cols, grid.concat(), slice_label)
    }

    /// Reads one count grid: comma-separated nonnegative integers, one row per
    /// line. Blank lines and lines starting with `#` are skipped.
    pub fn read_grid<R: Read>(mut source: R, slice_label: impl Into<String>) -> Result<Self> {
        let mut text = String::new();
        source.read_to_string(&mut text)?;
        let mut grid = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .map(|c| {
                    c.trim().parse::<u64>().map_err(|e| Error::Parse {
                        line: i as u64 + 1,
                        message: format!("bad count {:?}: {e}", c.trim()),
                    })
                })
                .collect::<Result<Vec<u64>>>()?;
            grid.push(row);
        }
        if grid.is_empty() {
            return Err(schema("count grid is empty"));
        }
        Self::from_rows(&grid, slice_label)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, y: usize, z: usize) -> u64 {
        self.counts[y * self.cols + z]
    }

    pub fn slice_label(&self) -> &str {
        &self.slice_label
    }

    pub fn row_totals(&self) -> &[u64] {
        &self.row_totals
    }

    pub fn col_totals(&self) -> &[u64] {
        &self.col_totals
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// A slice with no observations.
    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn transpose(&self) -> Self {
        let counts = (0..self.cols)
            .flat_map(|z| (0..self.rows).map(move |y| (y, z)))
            .map(|(y, z)| self.get(y, z))
            .collect();
        Self::new(self.cols, self.rows, counts, self.slice_label.clone()).expect("same cell count")
    }

    /// Reorders rows so that new row `i` is old row `perm[i]`, and likewise
    /// for columns.
    pub fn permute(&self, row_perm: &[usize], col_perm: &[usize]) -> Result<Self> {
        if !is_permutation(row_perm, self.rows) || !is_permutation(col_perm, self.cols) {
            return Err(domain("not a permutation of the table's rows/columns"));
        }
        let counts = row_perm
            .iter()
            .flat_map(|&y| col_perm.iter().map(move |&z| (y, z)))
            .map(|(y, z)| self.get(y, z))
            .collect();
        Self::new(self.rows, self.cols, counts, self.slice_label.clone())
    }

    /// Drops the listed rows and columns (by 0-based index).
    pub(crate) fn restrict(&self, keep_rows: &[usize], keep_cols: &[usize]) -> Self {
        let counts = keep_rows
            .iter()
            .flat_map(|&y| keep_cols.iter().map(move |&z| (y, z)))
            .map(|(y, z)| self.get(y, z))
            .collect();
        Self::new(
            keep_rows.len(),
            keep_cols.len(),
            counts,
            self.slice_label.clone(),
        )
        .expect("restricted table is nonempty")
    }
}

fn is_permutation(p: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    p.len() == n
        && p.iter()
            .all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}

/// Aggregates `dataset` into one `rows × cols` table per category of `given`.
///
/// Every declared category of `given` gets a table, including ones with no
/// records (check [`ContingencyTable::is_empty`]).
pub fn contingency_slices(
    dataset: &Dataset,
    rows: &str,
    cols: &str,
    given: &str,
) -> Result<Vec<ContingencyTable>> {
    let (ry, cz, gx) = (
        dataset.position(rows)?,
        dataset.position(cols)?,
        dataset.position(given)?,
    );
    if ry == cz || ry == gx || cz == gx {
        return Err(domain(
            "row, column and conditioning variables must be distinct",
        ));
    }
    let vars = dataset.variables();
    let (r, c, k) = (
        vars[ry].cardinality(),
        vars[cz].cardinality(),
        vars[gx].cardinality(),
    );
    let mut counts = vec![vec![0u64; r * c]; k];
    for rec in dataset.records() {
        let (x, y, z) = (
            rec[gx] as usize - 1,
            rec[ry] as usize - 1,
            rec[cz] as usize - 1,
        );
        counts[x][y * c + z] += 1;
    }
    counts
        .into_iter()
        .zip(&vars[gx].labels)
        .map(|(cells, label)| ContingencyTable::new(r, c, cells, label.clone()))
        .collect()
}

/// How Z is generated.
#[derive(Debug, Clone, PartialEq)]
pub enum ZSpec {
    /// `k` vectors over `c` states.
    GivenX(Vec<Vec<f64>>),
    /// `k·r` vectors over `c` states, x-major.
    GivenXY(Vec<Vec<f64>>),
}

/// Generative model `p(X) p(Y|X) p(Z|X[,Y])`.
#[derive(Debug, Clone, PartialEq)]
pub struct CptModel {
    pub px: Vec<f64>,
    pub py_given_x: Vec<Vec<f64>>,
    pub z: ZSpec,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct CptDocument {
    k: usize,
    r: usize,
    c: usize,
    mode: String,
    px: Vec<f64>,
    py_given_x: Vec<Vec<f64>>,
    pz: Vec<Vec<f64>>,
}

const PROB_TOL: f64 = 1e-9;

impl CptModel {
    pub fn new(px: Vec<f64>, py_given_x: Vec<Vec<f64>>, z: ZSpec) -> Result<Self> {
        let m = CptModel { px, py_given_x, z };
        m.validate()?;
        Ok(m)
    }

    /// `(k, r, c)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let c = match &self.z {
            ZSpec::GivenX(v) | ZSpec::GivenXY(v) => v.first().map_or(0, Vec::len),
        };
        (
            self.px.len(),
            self.py_given_x.first().map_or(0, Vec::len),
            c,
        )
    }

    fn validate(&self) -> Result<()> {
        let (k, r, c) = self.dims();
        if k == 0 || r == 0 || c == 0 {
            return Err(schema("CPT dimensions must be at least 1"));
        }
        let check = |what: &str, v: &[f64], len: usize| -> Result<()> {
            if v.len() != len {
                return Err(schema(format!(
                    "{what}: expected {len} probabilities, got {}",
                    v.len()
                )));
            }
            if v.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(domain(format!(
                    "{what}: probabilities must be finite and nonnegative"
                )));
            }
            let s: f64 = v.iter().sum();
            if (s - 1.0).abs() > PROB_TOL {
                return Err(domain(format!("{what}: probabilities sum to {s}, not 1")));
            }
            Ok(())
        };
        check("px", &self.px, k)?;
        if self.py_given_x.len() != k {
            return Err(schema(format!("py_given_x: expected {k} rows")));
        }
        for (x, v) in self.py_given_x.iter().enumerate() {
            check(&format!("py_given_x[{}]", x + 1), v, r)?;
        }
        let (rows, expect) = match &self.z {
            ZSpec::GivenX(v) => (v, k),
            ZSpec::GivenXY(v) => (v, k * r),
        };
        if rows.len() != expect {
            return Err(schema(format!(
                "pz: expected {expect} rows, got {}",
                rows.len()
            )));
        }
        for (i, v) in rows.iter().enumerate() {
            check(&format!("pz[{}]", i + 1), v, c)?;
        }
        Ok(())
    }

    /// Parses the TOML model document (`k, r, c, mode, px, py_given_x, pz`).
    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: CptDocument =
            toml::from_str(text).map_err(|e| schema(format!("CPT document: {e}")))?;
        let z = match doc.mode.as_str() {
            "z_given_x" => ZSpec::GivenX(doc.pz),
            "z_given_xy" => ZSpec::GivenXY(doc.pz),
            other => {
                return Err(schema(format!(
                    "mode must be \"z_given_x\" or \"z_given_xy\", got {other:?}"
                )))
            }
        };
        let m = CptModel::new(doc.px, doc.py_given_x, z)?;
        if m.dims() != (doc.k, doc.r, doc.c) {
            return Err(schema(format!(
                "declared dimensions ({}, {}, {}) disagree with tables {:?}",
                doc.k,
                doc.r,
                doc.c,
                m.dims()
            )));
        }
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        let (k, r, c) = self.dims();
        let (mode, pz) = match &self.z {
            ZSpec::GivenX(v) => ("z_given_x", v.clone()),
            ZSpec::GivenXY(v) => ("z_given_xy", v.clone()),
        };
        let doc = CptDocument {
            k,
            r,
            c,
            mode: mode.to_string(),
            px: self.px.clone(),
            py_given_x: self.py_given_x.clone(),
            pz,
        };
        toml::to_string(&doc).expect("model serializes")
    }
}

fn weighted(p: &[f64]) -> WeightedIndex<f64> {
    WeightedIndex::new(p).expect("validated probability vector")
}

/// Draws `n` i.i.d. records from `model`. Same `(model, n, seed)` gives the
/// same dataset.
pub fn sample_dataset(model: &CptModel, n: usize, seed: u64) -> Dataset {
    let (k, r, c) = model.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dx = weighted(&model.px);
    let dy: Vec<_> = model.py_given_x.iter().map(|p| weighted(p)).collect();
    let dz: Vec<_> = match &model.z {
        ZSpec::GivenX(v) | ZSpec::GivenXY(v) => v.iter().map(|p| weighted(p)).collect(),
    };
    let records = (0..n)
        .map(|_| {
            let x = dx.sample(&mut rng);
            let y = dy[x].sample(&mut rng);
            let z = match model.z {
                ZSpec::GivenX(_) => dz[x].sample(&mut rng),
                ZSpec::GivenXY(_) => dz[x * r + y].sample(&mut rng),
            };
            [x as u32 + 1, y as u32 + 1, z as u32 + 1]
        })
        .collect();
    Dataset::new(
        [
            Variable::numbered("X", k),
            Variable::numbered("Y", r),
            Variable::numbered("Z", c),
        ],
        records,
    )
    .expect("sampled indices are in range")
}
