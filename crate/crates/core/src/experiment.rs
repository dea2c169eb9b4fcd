// SPDX-License-Identifier: MIT OR Apache-2.0

//! Declarative simulation grids: detection accuracy tables and bootstrap
//! quantile tables.
//!
//! A grid is a TOML document with one `[[experiment]]` table per cell group:
//!
//! ```toml
//! [[experiment]]
//! name = "arma-n100"
//! kind = "detection"
//! model = "arma22"
//! n = 100
//! d = 100
//! deltas = [0.0, 0.05, 0.1]
//! mc_runs = 200
//! ```

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_quantile, bootstrap_quantiles, run_bootstrap, Algorithm, BootstrapConfig, Mode};
use crate::error::{Error, Result};
use crate::exec::{try_map_range, Execution};
use crate::lrv::{LrvConfig, VarianceKind};
use crate::quantiles::{asymptotic_threshold, parametric_quantile, ParametricConfig, Threshold, ThresholdMethod};
use crate::report::{build_report, ReportOptions};
use crate::rng::derive_seed;
use crate::simgen::{default_per_quintile, inject_changes, ArmaParams, ChangePlan, EvalCounts, MaParams, ModelSpec};

/// Critical value used for detection experiments and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Asymptotic,
    ParametricA,
    #[default]
    ParametricB,
    BlockI,
    #[serde(rename = "block-ii")]
    BlockII,
    #[serde(rename = "block-iii")]
    BlockIII,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Asymptotic,
        Method::ParametricA,
        Method::ParametricB,
        Method::BlockI,
        Method::BlockII,
        Method::BlockIII,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Asymptotic => "asymptotic",
            Method::ParametricA => "parametric-a",
            Method::ParametricB => "parametric-b",
            Method::BlockI => "block-i",
            Method::BlockII => "block-ii",
            Method::BlockIII => "block-iii",
        }
    }

    pub fn algorithm(self) -> Option<Algorithm> {
        match self {
            Method::BlockI => Some(Algorithm::I),
            Method::BlockII => Some(Algorithm::II),
            Method::BlockIII => Some(Algorithm::III),
            _ => None,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

/// Everything needed to turn a panel into a critical value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub method: Method,
    pub alpha: f64,
    pub conservative: bool,
    /// Monte Carlo size of the parametric or block bootstrap.
    pub replicates: usize,
    pub seed: u64,
    /// Number of blocks `L` for the block bootstrap.
    pub blocks: usize,
    pub mode: Mode,
    pub bootstrap_trim: f64,
    pub unit_multiplier_variance: bool,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            method: Method::ParametricB,
            alpha: 0.05,
            conservative: false,
            replicates: 100_000,
            seed: 0,
            blocks: 25,
            mode: Mode::Multiplier,
            bootstrap_trim: 0.0,
            unit_multiplier_variance: false,
        }
    }
}

impl Calibration {
    /// Critical value for an `n x d` problem. The block bootstrap needs the
    /// panel itself; the other methods ignore it.
    pub fn threshold(&self, n: usize, d: usize, panel: Option<&crate::Panel>, exec: Execution) -> Result<Threshold> {
        let level = if self.conservative {
            crate::quantiles::conservative_level(self.alpha)?
        } else {
            self.alpha
        };
        match self.method {
            Method::Asymptotic => asymptotic_threshold(n, d, self.alpha, self.conservative),
            Method::ParametricA | Method::ParametricB => {
                let cfg = ParametricConfig {
                    n,
                    d,
                    replicates: self.replicates,
                    method: if self.method == Method::ParametricA {
                        ThresholdMethod::ParametricA
                    } else {
                        ThresholdMethod::ParametricB
                    },
                    seed: self.seed,
                    exec,
                };
                parametric_quantile(&cfg, self.alpha, self.conservative)
            }
            Method::BlockI | Method::BlockII | Method::BlockIII => {
                let panel =
                    panel.ok_or_else(|| Error::InvalidConfig("the block bootstrap needs the data".into()))?;
                let cfg = BootstrapConfig {
                    algorithm: self.method.algorithm().expect("block method"),
                    mode: self.mode,
                    blocks: self.blocks,
                    trim: self.bootstrap_trim,
                    replicates: self.replicates,
                    seed: self.seed,
                    unit_multiplier_variance: self.unit_multiplier_variance,
                    exec,
                };
                let draws = run_bootstrap(panel, &cfg)?;
                let mut t = bootstrap_quantile(&draws, level, n, d)?;
                t.alpha = self.alpha;
                t.conservative = self.conservative;
                Ok(t)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Detection accuracy `r_1..r_5` and false positive rate per change size.
    Detection,
    /// Quantiles of block bootstrap draws, averaged over simulated panels.
    BootstrapQuantiles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    Ma100,
    Arma22,
    Factor,
}

fn default_alpha() -> f64 {
    0.05
}
fn default_mc_runs() -> usize {
    100
}
fn default_threshold_mc() -> usize {
    100_000
}
fn default_bootstrap_mc() -> usize {
    1000
}
fn default_blocks() -> Vec<usize> {
    vec![25]
}
fn default_trim() -> f64 {
    0.05
}
fn default_b_tau() -> f64 {
    0.8
}
fn default_panels() -> usize {
    10
}
fn default_levels() -> Vec<f64> {
    vec![0.1, 0.05, 0.025, 0.01]
}
fn default_algorithms() -> Vec<Method> {
    vec![Method::BlockII, Method::BlockIII]
}

/// One `[[experiment]]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub name: String,
    pub kind: ExperimentKind,
    pub model: ModelName,
    pub n: usize,
    pub d: usize,
    #[serde(default)]
    pub alpha_f: f64,
    /// Mean shift sizes; each gives one output row.
    #[serde(default)]
    pub deltas: Vec<f64>,
    /// Changes per quintile block; defaults to 10, or 15 once `d >= 250`.
    #[serde(default)]
    pub per_quintile: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub variance: VarianceKind,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_mc_runs")]
    pub mc_runs: usize,
    #[serde(default = "default_threshold_mc")]
    pub threshold_mc: usize,
    /// Block counts `L`; the block length is `floor(n / L)`.
    #[serde(default = "default_blocks")]
    pub blocks: Vec<usize>,
    #[serde(default = "default_bootstrap_mc")]
    pub bootstrap_mc: usize,
    #[serde(default)]
    pub seed: u64,
    /// Trim of the change-time estimate used for detection.
    #[serde(default = "default_trim")]
    pub trim: f64,
    /// Trim inside the block bootstrap.
    #[serde(default)]
    pub bootstrap_trim: f64,
    #[serde(default = "default_b_tau")]
    pub b_tau: f64,
    #[serde(default)]
    pub bandwidth: Option<usize>,
    /// Panels whose conditional quantiles are averaged (quantile experiments).
    #[serde(default = "default_panels")]
    pub panels: usize,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    /// Bootstrap variants tabulated by quantile experiments.
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Method>,
    /// Overrides of the spatial moving-average driver.
    #[serde(default)]
    pub driver: Option<MaParams>,
    #[serde(default)]
    pub burn_in: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    #[serde(default)]
    pub experiment: Vec<Experiment>,
}

impl Grid {
    pub fn parse(text: &str) -> Result<Self> {
        let grid: Grid = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for e in &grid.experiment {
            e.validate()?;
        }
        Ok(grid)
    }
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("experiment {:?}: {m}", self.name)));
        if self.n < crate::panel::MIN_TIME_POINTS || self.d == 0 {
            return bad(format!("invalid dimensions n = {}, d = {}", self.n, self.d));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} must lie in (0, 1)", self.alpha));
        }
        if self.deltas.iter().any(|d| !d.is_finite()) {
            return bad("change sizes must be finite".into());
        }
        if self.levels.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return bad("quantile levels must lie in (0, 1)".into());
        }
        if self.kind == ExperimentKind::BootstrapQuantiles {
            if self.algorithms.iter().any(|m| m.algorithm().is_none()) {
                return bad("quantile experiments tabulate block bootstrap methods only".into());
            }
            if self.panels == 0 {
                return bad("need at least one panel".into());
            }
        }
        if self.mc_runs == 0 {
            return bad("mc_runs must be positive".into());
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        let mut params = ArmaParams::default();
        if let Some(driver) = self.driver {
            params.driver = driver;
        }
        if let Some(b) = self.burn_in {
            params.burn_in = b;
        }
        match self.model {
            ModelName::Ma100 => ModelSpec::Ma100 { params: params.driver },
            ModelName::Arma22 => ModelSpec::Arma22 { params },
            ModelName::Factor => ModelSpec::Factor {
                alpha_f: self.alpha_f,
                params,
            },
        }
    }

    fn plan(&self, delta: f64) -> Result<ChangePlan> {
        if delta == 0.0 {
            return Ok(ChangePlan::default());
        }
        let per = self.per_quintile.unwrap_or_else(|| default_per_quintile(self.d));
        ChangePlan::quintile_grid(self.d, delta, per)
    }

    fn calibration(&self, method: Method, blocks: usize, replicates: usize, seed: u64) -> Calibration {
        Calibration {
            method,
            alpha: self.alpha,
            conservative: false,
            replicates,
            seed,
            blocks,
            mode: Mode::Multiplier,
            bootstrap_trim: self.bootstrap_trim,
            unit_multiplier_variance: false,
        }
    }

    fn report_options(&self) -> ReportOptions {
        ReportOptions {
            variance: self.variance,
            lrv: LrvConfig {
                bandwidth: self.bandwidth,
                ..LrvConfig::default()
            },
            b_tau: self.b_tau,
            trim: self.trim,
            exec: Execution::Sequential,
        }
    }
}

/// One output line. Columns that do not apply to the experiment kind are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub kind: ExperimentKind,
    pub model: ModelName,
    pub n: usize,
    pub d: usize,
    pub alpha_f: f64,
    pub delta: f64,
    pub method: Method,
    pub variance: Option<VarianceKind>,
    #[serde(rename = "K")]
    pub block_len: Option<usize>,
    #[serde(rename = "L")]
    pub blocks: Option<usize>,
    pub r1: Option<f64>,
    pub r2: Option<f64>,
    pub r3: Option<f64>,
    pub r4: Option<f64>,
    pub r5: Option<f64>,
    pub ti_star: Option<f64>,
    pub q90: Option<f64>,
    pub q95: Option<f64>,
    pub q975: Option<f64>,
    pub q99: Option<f64>,
    pub runs: usize,
    pub seed: u64,
}

pub const RESULT_COLUMNS: [&str; 23] = [
    "experiment",
    "kind",
    "model",
    "n",
    "d",
    "alpha_f",
    "delta",
    "method",
    "variance",
    "K",
    "L",
    "r1",
    "r2",
    "r3",
    "r4",
    "r5",
    "ti_star",
    "q90",
    "q95",
    "q975",
    "q99",
    "runs",
    "seed",
];

/// Aggregated detection counts of one `(experiment, delta)` cell.
pub fn detection_counts(exp: &Experiment, delta: f64, exec: Execution) -> Result<EvalCounts> {
    let model = exp.model_spec();
    let plan = exp.plan(delta)?;
    let options = exp.report_options();
    let fixed = match exp.method {
        Method::Asymptotic | Method::ParametricA | Method::ParametricB => Some(
            exp.calibration(exp.method, exp.blocks[0], exp.threshold_mc, exp.seed)
                .threshold(exp.n, exp.d, None, exec)?,
        ),
        _ => None,
    };
    let per_run = try_map_range(exec, exp.mc_runs, |r| {
        // same panels for every delta
        let seed = derive_seed(exp.seed, r as u64);
        let panel = model.generate(exp.n, exp.d, seed)?;
        let (panel, truth) = inject_changes(&panel, &plan)?;
        let threshold = match &fixed {
            Some(t) => t.clone(),
            None => exp
                .calibration(exp.method, exp.blocks[0], exp.bootstrap_mc, seed)
                .threshold(exp.n, exp.d, Some(&panel), Execution::Sequential)?,
        };
        let report = build_report(&panel, &threshold, &options)?;
        crate::simgen::evaluation_counts(&report, &truth)
    })?;
    Ok(per_run.iter().fold(EvalCounts::default(), |acc, c| acc.merge(c)))
}

/// Bootstrap quantiles at `levels`, averaged over `exp.panels` simulated panels.
pub fn averaged_bootstrap_quantiles(
    exp: &Experiment,
    method: Method,
    blocks: usize,
    delta: f64,
    exec: Execution,
) -> Result<Vec<f64>> {
    let model = exp.model_spec();
    let plan = exp.plan(delta)?;
    let algorithm = method
        .algorithm()
        .ok_or_else(|| Error::InvalidConfig(format!("{} is not a block bootstrap", method.name())))?;
    let per_panel = try_map_range(exec, exp.panels, |p| {
        let seed = derive_seed(exp.seed, p as u64);
        let panel = model.generate(exp.n, exp.d, seed)?;
        let (panel, _) = inject_changes(&panel, &plan)?;
        let cfg = BootstrapConfig {
            algorithm,
            mode: Mode::Multiplier,
            blocks,
            trim: exp.bootstrap_trim,
            replicates: exp.bootstrap_mc,
            seed,
            unit_multiplier_variance: false,
            exec: Execution::Sequential,
        };
        Ok::<_, Error>(bootstrap_quantiles(&run_bootstrap(&panel, &cfg)?, &exp.levels))
    })?;
    let k = exp.levels.len();
    let mut mean = vec![0.0; k];
    for q in &per_panel {
        for (m, v) in mean.iter_mut().zip(q) {
            *m += v;
        }
    }
    Ok(mean.into_iter().map(|m| m / per_panel.len() as f64).collect())
}

fn level_column(levels: &[f64], q: &[f64], alpha: f64) -> Option<f64> {
    levels
        .iter()
        .position(|&a| (a - alpha).abs() < 1e-12)
        .map(|i| q[i])
}

pub fn run_experiment(exp: &Experiment, exec: Execution) -> Result<Vec<ResultRow>> {
    exp.validate()?;
    let mut rows = Vec::new();
    let deltas = if exp.deltas.is_empty() { vec![0.0] } else { exp.deltas.clone() };
    let base = |delta: f64, method: Method| ResultRow {
        experiment: exp.name.clone(),
        kind: exp.kind,
        model: exp.model,
        n: exp.n,
        d: exp.d,
        alpha_f: exp.alpha_f,
        delta,
        method,
        variance: None,
        block_len: None,
        blocks: None,
        r1: None,
        r2: None,
        r3: None,
        r4: None,
        r5: None,
        ti_star: None,
        q90: None,
        q95: None,
        q975: None,
        q99: None,
        runs: 0,
        seed: exp.seed,
    };
    match exp.kind {
        ExperimentKind::Detection => {
            for &delta in &deltas {
                let m = detection_counts(exp, delta, exec)?.metrics();
                let mut row = base(delta, exp.method);
                row.variance = Some(exp.variance);
                if exp.method.algorithm().is_some() {
                    row.blocks = Some(exp.blocks[0]);
                    row.block_len = Some(exp.n / exp.blocks[0]);
                }
                [row.r1, row.r2, row.r3, row.r4, row.r5] = m.r;
                row.ti_star = Some(m.ti_star);
                row.runs = exp.mc_runs;
                rows.push(row);
            }
        }
        ExperimentKind::BootstrapQuantiles => {
            for &delta in &deltas {
                for &blocks in &exp.blocks {
                    for &method in &exp.algorithms {
                        let q = averaged_bootstrap_quantiles(exp, method, blocks, delta, exec)?;
                        let mut row = base(delta, method);
                        row.blocks = Some(blocks);
                        row.block_len = Some(exp.n / blocks);
                        row.q90 = level_column(&exp.levels, &q, 0.1);
                        row.q95 = level_column(&exp.levels, &q, 0.05);
                        row.q975 = level_column(&exp.levels, &q, 0.025);
                        row.q99 = level_column(&exp.levels, &q, 0.01);
                        row.runs = exp.panels;
                        rows.push(row);
                    }
                }
            }
        }
    }
    Ok(rows)
}

pub fn run_grid(grid: &Grid, exec: Execution) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for exp in &grid.experiment {
        rows.extend(run_experiment(exp, exec)?);
    }
    Ok(rows)
}

/// Writes a `#` line carrying `header_json`, the column header and the rows.
pub fn write_results<W: std::io::Write>(rows: &[ResultRow], header_json: Option<&str>, mut w: W) -> Result<()> {
    if let Some(h) = header_json {
        writeln!(w, "# {h}")?;
    }
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(RESULT_COLUMNS)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    for r in rows {
        out.serialize(r).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: &str = r#"
[[experiment]]
name = "small"
kind = "detection"
model = "arma22"
n = 60
d = 10
deltas = [0.0, 5.0]
per_quintile = 1
method = "asymptotic"
mc_runs = 3
seed = 4

[[experiment]]
name = "quant"
kind = "bootstrap-quantiles"
model = "factor"
alpha_f = 0.1
n = 40
d = 5
blocks = [4]
bootstrap_mc = 200
panels = 2
"#;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
            assert_eq!(serde_json::from_str::<Method>(&json).unwrap(), m);
        }
    }

    #[test]
    fn grid_parses_and_runs() {
        let grid = Grid::parse(GRID).unwrap();
        assert_eq!(grid.experiment.len(), 2);
        let rows = run_grid(&grid, Execution::Sequential).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[0].r1.is_none());
        assert!(rows[1].r3.is_some());
        assert!(rows[2].q95.unwrap() > 0.0);
        let par = run_grid(&grid, Execution::Parallel).unwrap();
        assert_eq!(rows, par);

        let mut out = Vec::new();
        write_results(&rows, Some("{}"), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("# {}\nexperiment,kind,model,n,d,alpha_f,delta,method,variance,K,L,r1"));
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn empty_grid_has_header_only() {
        let grid = Grid::parse("").unwrap();
        let mut out = Vec::new();
        write_results(&run_grid(&grid, Execution::Sequential).unwrap(), None, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 1);
    }

    #[test]
    fn malformed_grid_is_a_config_error() {
        assert!(matches!(Grid::parse("[[experiment]]\nname = 1"), Err(Error::InvalidConfig(_))));
        let bad = GRID.replace("alpha_f = 0.1", "alpha = 1.5");
        assert!(matches!(Grid::parse(&bad), Err(Error::InvalidConfig(_))));
    }
}
