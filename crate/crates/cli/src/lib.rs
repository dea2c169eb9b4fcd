// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command implementations behind the `hdcusum` binary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use hdcusum::bootstrap::Mode;
use hdcusum::experiment::{run_grid, write_results, Calibration, Grid, Method};
use hdcusum::lrv::{LrvConfig, VarianceKind, Weight};
use hdcusum::panel::{load_csv, CsvOptions, TimeAxis};
use hdcusum::report::{build_report, DetectionReport, ReportOptions};
use hdcusum::{Error, Execution};

pub const SCHEMA: u32 = 1;

pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const INGEST: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const DEGENERATE: i32 = 4;
}

/// Block bootstrap settings, present exactly when a block method is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSettings {
    pub blocks: usize,
    /// Block length requested with `--blocks LxK`; checked against `n / L`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_len: Option<usize>,
    pub mode: Mode,
    pub trim: f64,
    pub unit_multiplier_variance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub input: PathBuf,
    pub has_header: bool,
    pub delimiter: char,
    pub time_axis: TimeAxis,
    pub method: Method,
    pub alpha: f64,
    pub conservative: bool,
    pub replicates: usize,
    pub seed: u64,
    pub variance: VarianceKind,
    pub weight: Weight,
    pub bandwidth: Option<usize>,
    pub b_tau: f64,
    pub trim: f64,
    pub bootstrap: Option<BlockSettings>,
    /// Path prefix of the `.json` and `.csv` outputs.
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantilesConfig {
    pub n: Vec<usize>,
    pub d: Vec<usize>,
    pub alpha: Vec<f64>,
    pub method: Method,
    pub conservative: bool,
    pub replicates: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub grid: PathBuf,
    pub out: PathBuf,
}

/// Fully resolved run configuration, embedded in every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Detect(DetectConfig),
    Quantiles(QuantilesConfig),
    Simulate(SimulateConfig),
}

/// Errors tagged with the exit code they map to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    fn config(e: impl Into<anyhow::Error>) -> Self {
        Self {
            code: exit::CONFIG,
            error: e.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Ingest { .. } | Error::Ragged { .. } | Error::TooShort { .. } => exit::INGEST,
            Error::InvalidConfig(_)
            | Error::InvalidLevel(_)
            | Error::InvalidLayout(_)
            | Error::InvalidTrim { .. }
            | Error::InvalidBandwidth { .. }
            | Error::InsufficientReplicates { .. }
            | Error::InvalidPlan(_)
            | Error::Dimension(_) => exit::CONFIG,
            Error::DegenerateVariance { .. }
            | Error::DegenerateFiltering { .. }
            | Error::DegenerateConditionalVariance => exit::DEGENERATE,
            _ => exit::FAILURE,
        };
        Self { code, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        match error.downcast::<Error>() {
            Ok(e) => e.into(),
            Err(error) => Self {
                code: exit::FAILURE,
                error,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hdcusum", version, about = "Mean-change detection for high-dimensional panels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Flag coordinates whose mean changes and estimate when.
    Detect(DetectArgs),
    /// Tabulate critical values.
    Quantiles(QuantilesArgs),
    /// Run a simulation grid.
    Simulate(SimulateArgs),
    /// Re-run the configuration embedded in an output file.
    Replay {
        file: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CliMethod {
    Asymptotic,
    ParametricA,
    ParametricB,
    BlockI,
    BlockIi,
    BlockIii,
}

impl From<CliMethod> for Method {
    fn from(m: CliMethod) -> Self {
        match m {
            CliMethod::Asymptotic => Method::Asymptotic,
            CliMethod::ParametricA => Method::ParametricA,
            CliMethod::ParametricB => Method::ParametricB,
            CliMethod::BlockI => Method::BlockI,
            CliMethod::BlockIi => Method::BlockII,
            CliMethod::BlockIii => Method::BlockIII,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CliMode {
    M,
    Sr,
    Snr,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CliAxis {
    Rows,
    Columns,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "parametric-b")]
    pub method: CliMethod,
    #[arg(long, default_value = "star")]
    pub variance: String,
    /// Block layout as `LxK` (number of blocks by block length).
    #[arg(long, conflicts_with = "l")]
    pub blocks: Option<String>,
    /// Number of blocks; the block length is `floor(n / L)`.
    #[arg(long = "L", id = "l")]
    pub l: Option<usize>,
    #[arg(long, value_enum, default_value = "m")]
    pub mode: CliMode,
    /// Monte Carlo size (default 100000 for parametric, 1000 for block methods).
    #[arg(long)]
    pub mc: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub trim: f64,
    #[arg(long, default_value_t = 0.0)]
    pub bootstrap_trim: f64,
    #[arg(long, default_value_t = 0.8)]
    pub b_tau: f64,
    #[arg(long)]
    pub bandwidth: Option<usize>,
    #[arg(long)]
    pub bartlett: bool,
    #[arg(long)]
    pub conservative: bool,
    #[arg(long)]
    pub unit_multiplier_variance: bool,
    /// Output prefix; defaults to the input path without extension plus `.report`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub no_header: bool,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    #[arg(long, value_enum, default_value = "rows")]
    pub time_axis: CliAxis,
}

#[derive(Debug, Args)]
pub struct QuantilesArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub d: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.025,0.01")]
    pub alpha: Vec<f64>,
    #[arg(long, value_enum, default_value = "parametric-b")]
    pub method: CliMethod,
    #[arg(long, default_value_t = 100_000)]
    pub mc: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub conservative: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_blocks(s: &str) -> anyhow::Result<(usize, usize)> {
    let (l, k) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("--blocks expects LxK, got {s:?}"))?;
    Ok((l.trim().parse()?, k.trim().parse()?))
}

impl DetectArgs {
    pub fn resolve(&self) -> Result<DetectConfig, Failure> {
        let method: Method = self.method.into();
        let variance: VarianceKind = self.variance.parse().map_err(Failure::config)?;
        let layout = match (&self.blocks, self.l) {
            (Some(b), _) => Some(parse_blocks(b).map_err(Failure::config)?),
            (None, Some(l)) => Some((l, 0)),
            (None, None) => None,
        };
        let bootstrap = match (method.algorithm(), layout) {
            (Some(_), Some((blocks, k))) => Some(BlockSettings {
                blocks,
                block_len: (k > 0).then_some(k),
                mode: match self.mode {
                    CliMode::M => Mode::Multiplier,
                    CliMode::Sr => Mode::WithReplacement,
                    CliMode::Snr => Mode::WithoutReplacement,
                },
                trim: self.bootstrap_trim,
                unit_multiplier_variance: self.unit_multiplier_variance,
            }),
            (Some(_), None) => {
                return Err(Failure::config(anyhow::anyhow!(
                    "{} needs a block layout (--blocks LxK or --L)",
                    method.name()
                )))
            }
            (None, Some(_)) => {
                return Err(Failure::config(anyhow::anyhow!(
                    "--blocks/--L only apply to block bootstrap methods"
                )))
            }
            (None, None) => None,
        };
        let replicates = self.mc.unwrap_or(match method {
            Method::Asymptotic => 0,
            Method::ParametricA | Method::ParametricB => 100_000,
            _ => 1000,
        });
        let out = self.out.clone().unwrap_or_else(|| self.input.with_extension("report"));
        Ok(DetectConfig {
            input: self.input.clone(),
            has_header: !self.no_header,
            delimiter: self.delimiter,
            time_axis: match self.time_axis {
                CliAxis::Rows => TimeAxis::Rows,
                CliAxis::Columns => TimeAxis::Columns,
            },
            method,
            alpha: self.alpha,
            conservative: self.conservative,
            replicates,
            seed: self.seed,
            variance,
            weight: if self.bartlett { Weight::Bartlett } else { Weight::Plain },
            bandwidth: self.bandwidth,
            b_tau: self.b_tau,
            trim: self.trim,
            bootstrap,
            out,
        })
    }
}

impl QuantilesArgs {
    pub fn resolve(&self) -> Result<QuantilesConfig, Failure> {
        let method: Method = self.method.into();
        if method.algorithm().is_some() {
            return Err(Failure::config(anyhow::anyhow!(
                "block bootstrap quantiles depend on data; use detect or simulate"
            )));
        }
        Ok(QuantilesConfig {
            n: self.n.clone(),
            d: self.d.clone(),
            alpha: self.alpha.clone(),
            method,
            conservative: self.conservative,
            replicates: self.mc,
            seed: self.seed,
            out: self.out.clone(),
        })
    }
}

impl Command {
    pub fn resolve(&self) -> Result<RunConfig, Failure> {
        Ok(match self {
            Command::Detect(a) => RunConfig::Detect(a.resolve()?),
            Command::Quantiles(a) => RunConfig::Quantiles(a.resolve()?),
            Command::Simulate(a) => RunConfig::Simulate(SimulateConfig {
                grid: a.grid.clone(),
                out: a.out.clone(),
            }),
            Command::Replay { file } => read_embedded_config(file)?,
        })
    }
}

/// Pulls the configuration out of a report JSON or a `#`-headed CSV.
pub fn read_embedded_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(Error::from)?;
    let json = match text.strip_prefix("# ") {
        Some(rest) => rest.lines().next().unwrap_or_default().to_owned(),
        None => text,
    };
    let value: serde_json::Value = serde_json::from_str(&json).map_err(Failure::config)?;
    let config = value
        .get("config")
        .cloned()
        .ok_or_else(|| Failure::config(anyhow::anyhow!("no embedded config in {}", path.display())))?;
    serde_json::from_value(config).map_err(Failure::config)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportEnvelope {
    pub schema: u32,
    pub config: RunConfig,
    pub threshold: hdcusum::quantiles::Threshold,
    pub report: DetectionReport,
}

/// Outcome of a command: exit code plus the lines printed to stdout.
pub struct Outcome {
    pub code: i32,
    pub summary: Vec<String>,
}

pub fn run(config: &RunConfig, exec: Execution) -> Result<Outcome, Failure> {
    match config {
        RunConfig::Detect(c) => detect(config, c, exec),
        RunConfig::Quantiles(c) => quantiles(config, c, exec),
        RunConfig::Simulate(c) => simulate(config, c, exec),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::from(Error::from(e)))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure {
            code: exit::FAILURE,
            error: anyhow::Error::new(e).context(format!("cannot write {}", path.display())),
        })
}

fn header_line(config: &RunConfig) -> String {
    serde_json::json!({ "schema": SCHEMA, "config": config }).to_string()
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn detect(config: &RunConfig, c: &DetectConfig, exec: Execution) -> Result<Outcome, Failure> {
    if !c.delimiter.is_ascii() {
        return Err(Failure::config(anyhow::anyhow!("delimiter must be a single ASCII character")));
    }
    hdcusum::quantiles::check_level(c.alpha)?;
    let csv = CsvOptions {
        has_header: c.has_header,
        delimiter: c.delimiter as u8,
        time_axis: c.time_axis,
    };
    let panel = load_csv(&c.input, &csv).map_err(|e| {
        let f = Failure::from(e);
        Failure {
            code: f.code,
            error: f.error.context(format!("cannot load {}", c.input.display())),
        }
    })?;
    let (n, d) = (panel.n(), panel.d());
    if let Some(b) = &c.bootstrap {
        if let Some(k) = b.block_len {
            if k != n / b.blocks.max(1) {
                return Err(Failure::config(anyhow::anyhow!(
                    "--blocks {}x{k} does not match n = {n}: the block length is floor(n / L) = {}",
                    b.blocks,
                    n / b.blocks.max(1)
                )));
            }
        }
    }
    let calibration = Calibration {
        method: c.method,
        alpha: c.alpha,
        conservative: c.conservative,
        replicates: c.replicates,
        seed: c.seed,
        blocks: c.bootstrap.map_or(0, |b| b.blocks),
        mode: c.bootstrap.map_or(Mode::Multiplier, |b| b.mode),
        bootstrap_trim: c.bootstrap.map_or(0.0, |b| b.trim),
        unit_multiplier_variance: c.bootstrap.is_some_and(|b| b.unit_multiplier_variance),
    };
    let threshold = calibration.threshold(n, d, Some(&panel), exec)?;
    let options = ReportOptions {
        variance: c.variance,
        lrv: LrvConfig {
            bandwidth: c.bandwidth,
            weight: c.weight,
            ..LrvConfig::default()
        },
        b_tau: c.b_tau,
        trim: c.trim,
        exec,
    };
    let report = build_report(&panel, &threshold, &options)?;

    let json_path = with_suffix(&c.out, "json");
    let csv_path = with_suffix(&c.out, "csv");
    let envelope = ReportEnvelope {
        schema: SCHEMA,
        config: config.clone(),
        threshold: threshold.clone(),
        report,
    };
    let mut w = create(&json_path)?;
    serde_json::to_writer_pretty(&mut w, &envelope).map_err(|e| Failure::from(anyhow::Error::new(e)))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Failure::from(Error::from(e)))?;
    let mut w = create(&csv_path)?;
    writeln!(w, "# {}", header_line(config))
        .and_then(|_| envelope.report.write_csv(&mut w))
        .and_then(|_| w.flush())
        .map_err(|e| Failure::from(Error::from(e)))?;

    let report = &envelope.report;
    let mut summary = vec![
        format!(
            "method {} threshold {:.4} (alpha {}, n {n}, d {d})",
            c.method.name(),
            threshold.value,
            c.alpha
        ),
        format!("unstable coordinates: {} of {d}", report.unstable_count()),
    ];
    for r in report.coordinates.iter().filter(|r| r.tau_hat.is_some()) {
        summary.push(format!(
            "  {} statistic {:.4} tau_hat {:.4}",
            r.label.clone().unwrap_or_else(|| r.coordinate.to_string()),
            r.statistic,
            r.tau_hat.unwrap_or_default()
        ));
    }
    for w in &report.warnings {
        summary.push(format!("warning: {w}"));
    }
    summary.push(format!("wrote {} and {}", json_path.display(), csv_path.display()));
    let code = if 2 * report.degenerate_count() > d {
        summary.push(format!(
            "degenerate variance on {} of {d} coordinates",
            report.degenerate_count()
        ));
        exit::DEGENERATE
    } else {
        exit::OK
    };
    Ok(Outcome { code, summary })
}

fn quantiles(config: &RunConfig, c: &QuantilesConfig, exec: Execution) -> Result<Outcome, Failure> {
    if c.n.is_empty() || c.d.is_empty() || c.alpha.is_empty() {
        return Err(Failure::config(anyhow::anyhow!("empty grid")));
    }
    for &a in &c.alpha {
        hdcusum::quantiles::check_level(a)?;
    }
    let mut cells = Vec::new();
    for &n in &c.n {
        for &d in &c.d {
            if n < hdcusum::panel::MIN_TIME_POINTS || d == 0 {
                return Err(Failure::config(anyhow::anyhow!("invalid cell n = {n}, d = {d}")));
            }
            let mut col = Vec::with_capacity(c.alpha.len());
            // one simulation per cell, read off at every level
            let sorted = match c.method {
                Method::ParametricA | Method::ParametricB => {
                    let cfg = parametric_config(c, n, d, exec);
                    Some(hdcusum::quantiles::parametric_draws(&cfg)?)
                }
                _ => None,
            };
            for &alpha in &c.alpha {
                let t = match &sorted {
                    Some(s) => {
                        let level = if c.conservative {
                            hdcusum::quantiles::conservative_level(alpha)?
                        } else {
                            alpha
                        };
                        hdcusum::quantiles::threshold_from_draws(
                            &parametric_config(c, n, d, exec),
                            s,
                            alpha,
                            level,
                            c.conservative,
                        )
                    }
                    None => hdcusum::quantiles::asymptotic_threshold(n, d, alpha, c.conservative)?,
                };
                col.push(t);
            }
            cells.push((n, d, col));
        }
    }
    let mut summary = vec![format!(
        "{:>8}{}",
        "level",
        cells
            .iter()
            .map(|(n, d, _)| format!("{:>14}", format!("n={n} d={d}")))
            .collect::<String>()
    )];
    for (i, &alpha) in c.alpha.iter().enumerate() {
        let label = format!("q{}", 1.0 - alpha);
        let mut line = format!("{label:>8}");
        for (_, _, col) in &cells {
            line.push_str(&format!("{:>14.4}", col[i].value));
        }
        summary.push(line);
    }
    if let Some(out) = &c.out {
        let mut w = create(out)?;
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(w, "# {}", header_line(config))?;
            writeln!(w, "n,d,alpha,level,method,value,replicates,seed")?;
            for (n, d, col) in &cells {
                for t in col {
                    writeln!(
                        w,
                        "{n},{d},{},{},{},{},{},{}",
                        t.alpha,
                        t.level,
                        c.method.name(),
                        t.value,
                        t.replicates,
                        t.seed.map(|s| s.to_string()).unwrap_or_default()
                    )?;
                }
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Failure::from(Error::from(e)))?;
        summary.push(format!("wrote {}", out.display()));
    }
    Ok(Outcome {
        code: exit::OK,
        summary,
    })
}

fn parametric_config(c: &QuantilesConfig, n: usize, d: usize, exec: Execution) -> hdcusum::quantiles::ParametricConfig {
    hdcusum::quantiles::ParametricConfig {
        n,
        d,
        replicates: c.replicates,
        method: if c.method == Method::ParametricA {
            hdcusum::quantiles::ThresholdMethod::ParametricA
        } else {
            hdcusum::quantiles::ThresholdMethod::ParametricB
        },
        seed: c.seed,
        exec,
    }
}

fn simulate(config: &RunConfig, c: &SimulateConfig, exec: Execution) -> Result<Outcome, Failure> {
    let text = std::fs::read_to_string(&c.grid)
        .with_context(|| format!("cannot read grid {}", c.grid.display()))
        .map_err(Failure::config)?;
    let grid = Grid::parse(&text)?;
    let rows = run_grid(&grid, exec)?;
    let header = serde_json::json!({ "schema": SCHEMA, "config": config, "grid": grid }).to_string();
    let mut w = create(&c.out)?;
    write_results(&rows, Some(&header), &mut w)?;
    w.flush().map_err(|e| Failure::from(Error::from(e)))?;
    Ok(Outcome {
        code: exit::OK,
        summary: vec![format!(
            "{} experiments, {} rows written to {}",
            grid.experiment.len(),
            rows.len(),
            c.out.display()
        )],
    })
}
