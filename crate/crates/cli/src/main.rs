//! `fbst`: conditional-independence testing from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure (I/O, parse, domain), 2 usage
//! error, 3 when `--threshold` is given and the composite e-value falls
//! below it.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use fbst_core::{
    ci_test, ci_test_from_tables, composite_truth_function, ingest_csv, lognormal_reference,
    sample_dataset, Alpha, AxisMode, CiTestSpec, ContingencyTable, CptModel, EvalueReport,
    ModeSelection,
};
use statrs::distribution::{ContinuousCDF, Normal};

const EXIT_BELOW_THRESHOLD: u8 = 3;

#[derive(Parser)]
#[command(
    name = "fbst",
    version,
    about = "Full Bayesian Significance Test for conditional independence"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic dataset from a CPT model.
    Gen {
        /// TOML model file.
        #[arg(long)]
        cpt: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        /// Output CSV (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test Y ⊥ Z | X on a CSV dataset.
    Test {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        y: String,
        #[arg(long)]
        z: String,
        #[arg(long)]
        given: String,
        #[command(flatten)]
        opts: TestOpts,
    },
    /// Test conditional independence from one CSV grid per conditioning category.
    TestTables {
        #[arg(long, num_args = 1.., required = true)]
        tables: Vec<PathBuf>,
        #[command(flatten)]
        opts: TestOpts,
    },
    /// Convolve two discretized log-normals and compare with the exact law.
    DemoLognormal {
        #[arg(long, allow_hyphen_values = true)]
        mu1: f64,
        #[arg(long)]
        sigma1: f64,
        #[arg(long, allow_hyphen_values = true)]
        mu2: f64,
        #[arg(long)]
        sigma2: f64,
        #[arg(long, default_value_t = 100)]
        bins: usize,
        #[arg(long, value_enum, default_value_t = Mode::V)]
        mode: Mode,
        /// Output TSV (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TestOpts {
    /// Prior: one positive number, or a comma-separated row-major grid.
    #[arg(long, default_value = "1")]
    alpha: String,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 100)]
    bins: usize,
    #[arg(long, value_enum, default_value_t = Mode::Both)]
    mode: Mode,
    #[arg(long)]
    seed: u64,
    /// JSON report (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-slice and composite truth-function TSV files.
    #[arg(long)]
    emit_truth: Option<PathBuf>,
    /// Exit with status 3 if the composite e-value is below this value.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    H,
    V,
    Both,
}

impl Mode {
    fn selection(self) -> ModeSelection {
        match self {
            Mode::H => ModeSelection::Horizontal,
            Mode::V => ModeSelection::Vertical,
            Mode::Both => ModeSelection::Both,
        }
    }
}

fn parse_alpha(s: &str) -> Result<Alpha> {
    let values = s
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("invalid alpha value {v:?}"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(match values.as_slice() {
        [a] => Alpha::Scalar(*a),
        _ => Alpha::Grid(values),
    })
}

impl TestOpts {
    fn spec(&self) -> Result<CiTestSpec> {
        Ok(CiTestSpec {
            alpha: parse_alpha(&self.alpha)?,
            n_samples: self.samples,
            n_bins: self.bins,
            mode: self.mode.selection(),
            seed: self.seed,
        })
    }

    /// Writes the outputs; returns whether the threshold check failed.
    fn finish(&self, report: &EvalueReport) -> Result<bool> {
        let json = serde_json::to_string_pretty(report)?;
        write_text(self.out.as_deref(), &json)?;
        if let Some(dir) = &self.emit_truth {
            emit_truth(dir, report)?;
        }
        Ok(match self.threshold {
            Some(t) => below_threshold(report, t),
            None => false,
        })
    }
}

/// Below when the highest composite upper bound across the computed modes
/// is under `t`.
fn below_threshold(report: &EvalueReport, t: f64) -> bool {
    [AxisMode::Horizontal, AxisMode::Vertical]
        .into_iter()
        .filter_map(|m| report.composite.get(m))
        .map(|e| e.upper)
        .fold(f64::NEG_INFINITY, f64::max)
        < t
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            fs::write(p, format!("{text}\n")).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            let mut out = io::stdout().lock();
            writeln!(out, "{text}")?;
            Ok(())
        }
    }
}

fn file_stem_safe(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn emit_truth(dir: &Path, report: &EvalueReport) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (mode, tfs) in &report.truth_functions {
        for (slice, tf) in report.slices.iter().zip(tfs) {
            let path = dir.join(format!(
                "{}_slice_{}.tsv",
                mode.as_str(),
                file_stem_safe(&slice.label)
            ));
            tf.write_tsv(BufWriter::new(File::create(&path)?))
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    for (mode, tf) in &report.composite_truth_functions {
        let path = dir.join(format!("{}_composite.tsv", mode.as_str()));
        tf.write_tsv(BufWriter::new(File::create(&path)?))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn demo_lognormal(mu: [f64; 2], sigma: [f64; 2], bins: usize, mode: Mode) -> Result<String> {
    let axis = match mode {
        Mode::H => AxisMode::Horizontal,
        Mode::V => AxisMode::Vertical,
        Mode::Both => bail!("demo-lognormal takes a single mode (h or v)"),
    };
    let a = lognormal_reference(mu[0], sigma[0], bins, axis)?;
    let b = lognormal_reference(mu[1], sigma[1], bins, axis)?;
    let w = composite_truth_function(&[&a, &b], axis)?;
    let exact = Normal::new(mu[0] + mu[1], sigma[0].hypot(sigma[1]))?;
    let mut out = String::from("# log_y\tlower\tupper\texact\n");
    let mut edges: Vec<f64> = w.bins().iter().flat_map(|b| [b.left, b.right]).collect();
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    for x in edges {
        let e = w.evaluate(x);
        out.push_str(&format!(
            "{x}\t{}\t{}\t{}\n",
            e.lower,
            e.upper,
            exact.cdf(x)
        ));
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen { cpt, n, seed, out } => {
            let text =
                fs::read_to_string(&cpt).with_context(|| format!("reading {}", cpt.display()))?;
            let model = CptModel::from_toml(&text)?;
            let data = sample_dataset(&model, n, seed);
            match out {
                Some(p) => data.write_csv(BufWriter::new(
                    File::create(&p).with_context(|| format!("creating {}", p.display()))?,
                ))?,
                None => data.write_csv(io::stdout().lock())?,
            }
        }
        Command::Test {
            data,
            y,
            z,
            given,
            opts,
        } => {
            if y == z || y == given || z == given {
                let mut cmd = Cli::command();
                cmd.error(
                    clap::error::ErrorKind::ArgumentConflict,
                    "--y, --z and --given must name three different columns",
                )
                .exit();
            }
            let spec = opts.spec()?;
            let file = File::open(&data).with_context(|| format!("opening {}", data.display()))?;
            let dataset = ingest_csv(
                BufReader::new(file),
                [given.as_str(), y.as_str(), z.as_str()],
            )?;
            let report = ci_test(&dataset, &y, &z, &given, &spec)?;
            if opts.finish(&report)? {
                return Ok(ExitCode::from(EXIT_BELOW_THRESHOLD));
            }
        }
        Command::TestTables { tables, opts } => {
            let spec = opts.spec()?;
            let grids = tables
                .iter()
                .map(|p| {
                    let label = p.file_stem().map_or_else(
                        || p.display().to_string(),
                        |s| s.to_string_lossy().into_owned(),
                    );
                    let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
                    ContingencyTable::read_grid(BufReader::new(file), label)
                        .with_context(|| format!("reading {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            let report = ci_test_from_tables(&grids, &spec)?;
            if opts.finish(&report)? {
                return Ok(ExitCode::from(EXIT_BELOW_THRESHOLD));
            }
        }
        Command::DemoLognormal {
            mu1,
            sigma1,
            mu2,
            sigma2,
            bins,
            mode,
            out,
        } => {
            let text = demo_lognormal([mu1, mu2], [sigma1, sigma2], bins, mode)?;
            write_text(out.as_deref(), text.trim_end())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
