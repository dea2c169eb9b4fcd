// SPDX-License-Identifier: MIT OR Apache-2.0

//! Panel generators, change injection and detection metrics for simulation
//! studies.
//!
//! Every generator draws coordinate `h` from its own random stream, so a
//! panel is a pure function of `(n, d, seed)` and the model parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;
use crate::report::{DetectionReport, Verdict};
use crate::rng::{self, Domain};

pub const DEFAULT_BURN_IN: usize = 500;

/// Spatial moving average `Y_{k,h} = sum_{i<order} a_i eps_{k,h-i}` with
/// `a_i = coef_scale * max(i, 1)^{-3}` and `eps ~ N(0, innovation_sd^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaParams {
    pub order: usize,
    pub coef_scale: f64,
    pub innovation_sd: f64,
}

impl Default for MaParams {
    fn default() -> Self {
        Self {
            order: 100,
            coef_scale: 0.1,
            innovation_sd: 0.1,
        }
    }
}

impl MaParams {
    pub fn coefficients(&self) -> Vec<f64> {
        (0..self.order)
            .map(|i| self.coef_scale * (i.max(1) as f64).powi(-3))
            .collect()
    }

    /// `Var(Y_{k,h})`.
    pub fn variance(&self) -> f64 {
        let s2 = self.innovation_sd * self.innovation_sd;
        self.coefficients().iter().map(|a| a * a * s2).sum()
    }
}

/// `n x d` draw of the spatial moving average. Coordinate `h` uses
/// innovation columns `h .. h + order`, each column its own stream.
pub fn gen_ma_panel(n: usize, d: usize, seed: u64, params: &MaParams) -> Result<Panel> {
    if params.order == 0 {
        return Err(Error::DegenerateModel("moving average of order 0".into()));
    }
    let a = params.coefficients();
    let width = d + params.order - 1;
    let mut eps = vec![0.0; width * n];
    for (c, col) in eps.chunks_exact_mut(n).enumerate() {
        let mut r = rng::stream(seed, Domain::Innovation, c as u64);
        rng::fill_gaussian(&mut r, col);
        for v in col.iter_mut() {
            *v *= params.innovation_sd;
        }
    }
    let mut data = vec![0.0; n * d];
    let last = params.order - 1;
    for (h, out) in data.chunks_exact_mut(n).enumerate() {
        // eps_{k,h-i} lives in column h + last - i
        for (i, &ai) in a.iter().enumerate() {
            let col = &eps[(h + last - i) * n..(h + last - i + 1) * n];
            for (o, &e) in out.iter_mut().zip(col) {
                *o += ai * e;
            }
        }
    }
    Panel::from_coordinate_major(n, d, data)
}

/// ARMA(2,2) filter driven by a spatial moving average, optionally with a
/// common factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmaParams {
    pub ar: [f64; 2],
    /// Coefficients on `Y_k` and `Y_{k-1}`.
    pub ma: [f64; 2],
    pub burn_in: usize,
    pub driver: MaParams,
}

impl Default for ArmaParams {
    fn default() -> Self {
        Self {
            ar: [0.2, -0.3],
            ma: [-0.1, 0.2],
            burn_in: DEFAULT_BURN_IN,
            driver: MaParams::default(),
        }
    }
}

impl ArmaParams {
    fn check(&self) -> Result<()> {
        let [p1, p2] = self.ar;
        // stationarity triangle of an AR(2)
        if !(p2.abs() < 1.0 && p2 + p1 < 1.0 && p2 - p1 < 1.0) {
            return Err(Error::UnstableModel(format!("AR coefficients {:?}", self.ar)));
        }
        Ok(())
    }
}

/// `X_k = ar1 X_{k-1} + ar2 X_{k-2} + ma0 Y_k + ma1 Y_{k-1} (+ alpha_f F_k)`
/// started at zero; the first `burn_in` values are discarded.
pub fn arma_filter(y: &Panel, params: &ArmaParams, factor: Option<(f64, &[f64])>) -> Result<Panel> {
    params.check()?;
    let total = y.n();
    if total < params.burn_in + crate::panel::MIN_TIME_POINTS {
        return Err(Error::TooShort {
            n: total.saturating_sub(params.burn_in),
        });
    }
    if let Some((_, f)) = factor {
        if f.len() != total {
            return Err(Error::Dimension(format!("factor of length {} for {total} steps", f.len())));
        }
    }
    let n = total - params.burn_in;
    let [p1, p2] = params.ar;
    let [m0, m1] = params.ma;
    let mut data = Vec::with_capacity(n * y.d());
    for h in 0..y.d() {
        let yh = y.series(h);
        let (mut x1, mut x2, mut y1) = (0.0, 0.0, 0.0);
        for k in 0..total {
            let mut x = p1 * x1 + p2 * x2 + m0 * yh[k] + m1 * y1;
            if let Some((alpha_f, f)) = factor {
                if alpha_f != 0.0 {
                    x += alpha_f * f[k];
                }
            }
            if k >= params.burn_in {
                data.push(x);
            }
            x2 = x1;
            x1 = x;
            y1 = yh[k];
        }
    }
    Panel::from_coordinate_major(n, y.d(), data)
}

pub fn gen_arma_panel(n: usize, d: usize, seed: u64, params: &ArmaParams) -> Result<Panel> {
    let y = gen_ma_panel(n + params.burn_in, d, seed, &params.driver)?;
    arma_filter(&y, params, None)
}

/// ARMA(2,2) panel plus `alpha_f F_k` with one standard Gaussian factor
/// shared by all coordinates. `alpha_f = 0` reproduces [`gen_arma_panel`].
pub fn gen_factor_panel(alpha_f: f64, n: usize, d: usize, seed: u64, params: &ArmaParams) -> Result<Panel> {
    if !(alpha_f >= 0.0) || !alpha_f.is_finite() {
        return Err(Error::InvalidConfig(format!("factor loading {alpha_f} must be >= 0")));
    }
    let total = n + params.burn_in;
    let y = gen_ma_panel(total, d, seed, &params.driver)?;
    let mut f = vec![0.0; total];
    rng::fill_gaussian(&mut rng::stream(seed, Domain::Factor, 0), &mut f);
    arma_filter(&y, params, Some((alpha_f, &f)))
}

/// `X = eps * s`, `s_k^2 = eta + sum_i alpha_i s_{k-i}^2 + sum_i beta_i X_{k-i}^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub eta: f64,
    /// Weights on lagged conditional variances.
    pub alpha: Vec<f64>,
    /// Weights on lagged squared observations.
    pub beta: Vec<f64>,
    pub burn_in: usize,
}

impl GarchParams {
    pub fn persistence(&self) -> f64 {
        self.alpha.iter().chain(&self.beta).sum()
    }

    pub fn unconditional_variance(&self) -> f64 {
        self.eta / (1.0 - self.persistence())
    }
}

pub fn gen_garch_panel(params: &GarchParams, n: usize, d: usize, seed: u64) -> Result<Panel> {
    if !(params.eta > 0.0) {
        return Err(Error::UnstableModel(format!("eta = {} must be positive", params.eta)));
    }
    if params.alpha.iter().chain(&params.beta).any(|c| !(*c >= 0.0)) {
        return Err(Error::UnstableModel("GARCH coefficients must be non-negative".into()));
    }
    if !(params.persistence() < 1.0) {
        return Err(Error::UnstableModel(format!(
            "sum of GARCH coefficients {} is not below 1",
            params.persistence()
        )));
    }
    let total = n + params.burn_in;
    let p = params.alpha.len();
    let q = params.beta.len();
    let lags = p.max(q).max(1);
    let v0 = params.unconditional_variance();
    let mut data = Vec::with_capacity(n * d);
    let mut eps = vec![0.0; total];
    for h in 0..d {
        rng::fill_gaussian(&mut rng::stream(seed, Domain::Innovation, h as u64), &mut eps);
        // rings of past s^2 and X^2, most recent first
        let mut s2 = vec![v0; lags];
        let mut x2 = vec![v0; lags];
        for (k, &e) in eps.iter().enumerate() {
            let mut v = params.eta;
            for (a, s) in params.alpha.iter().zip(&s2) {
                v += a * s;
            }
            for (b, x) in params.beta.iter().zip(&x2) {
                v += b * x;
            }
            let x = e * v.sqrt();
            if k >= params.burn_in {
                data.push(x);
            }
            s2.rotate_right(1);
            x2.rotate_right(1);
            s2[0] = v;
            x2[0] = x * x;
        }
    }
    Panel::from_coordinate_major(n, d, data)
}

/// `X_k = sum_{l <= lags} R_l Z_{k-l}` with banded Toeplitz `R_l`,
/// `(R_l)_{ij} = coeffs[l][|i - j|]` inside the band and zero outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMatrixParams {
    pub coeffs: Vec<Vec<f64>>,
    pub innovation_sd: f64,
}

impl LinearMatrixParams {
    /// `r_{ij}^{(l)} = c (l+1)^{-q} (|i-j|+1)^{-p}` truncated at `max_lag` and `band`.
    pub fn polynomial(c: f64, p: f64, q: f64, max_lag: usize, band: usize) -> Self {
        let coeffs = (0..=max_lag)
            .map(|l| {
                (0..=band)
                    .map(|o| c * ((l + 1) as f64).powf(-q) * ((o + 1) as f64).powf(-p))
                    .collect()
            })
            .collect();
        Self {
            coeffs,
            innovation_sd: 1.0,
        }
    }

    /// Diagonal `R_l = r_l I`.
    pub fn diagonal(weights: &[f64]) -> Self {
        Self {
            coeffs: weights.iter().map(|&w| vec![w]).collect(),
            innovation_sd: 1.0,
        }
    }
}

pub fn gen_linear_matrix_panel(params: &LinearMatrixParams, n: usize, d: usize, seed: u64) -> Result<Panel> {
    if params.coeffs.is_empty() || params.coeffs.iter().flatten().all(|&c| c == 0.0) {
        return Err(Error::DegenerateModel("all filter weights are zero".into()));
    }
    let lags = params.coeffs.len() - 1;
    let total = n + lags;
    let mut z = vec![0.0; total * d];
    for (j, col) in z.chunks_exact_mut(total).enumerate() {
        rng::fill_gaussian(&mut rng::stream(seed, Domain::Innovation, j as u64), col);
        for v in col.iter_mut() {
            *v *= params.innovation_sd;
        }
    }
    let mut data = vec![0.0; n * d];
    for (i, out) in data.chunks_exact_mut(n).enumerate() {
        for (l, row) in params.coeffs.iter().enumerate() {
            for (o, &r) in row.iter().enumerate() {
                if r == 0.0 {
                    continue;
                }
                let mut add = |j: usize| {
                    let zj = &z[j * total..(j + 1) * total];
                    // X_k uses Z_{k-l}: shifted by the lag inside the padded column
                    for (k, v) in out.iter_mut().enumerate() {
                        *v += r * zj[k + lags - l];
                    }
                };
                if o == 0 {
                    add(i);
                } else {
                    if i >= o {
                        add(i - o);
                    }
                    if i + o < d {
                        add(i + o);
                    }
                }
            }
        }
    }
    Panel::from_coordinate_major(n, d, data)
}

/// Models that can be named in an experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Ma100 {
        #[serde(default)]
        params: MaParams,
    },
    Arma22 {
        #[serde(default)]
        params: ArmaParams,
    },
    Factor {
        alpha_f: f64,
        #[serde(default)]
        params: ArmaParams,
    },
    Garch(GarchParams),
    LinearMatrix(LinearMatrixParams),
}

impl ModelSpec {
    pub fn generate(&self, n: usize, d: usize, seed: u64) -> Result<Panel> {
        match self {
            ModelSpec::Ma100 { params } => gen_ma_panel(n, d, seed, params),
            ModelSpec::Arma22 { params } => gen_arma_panel(n, d, seed, params),
            ModelSpec::Factor { alpha_f, params } => gen_factor_panel(*alpha_f, n, d, seed, params),
            ModelSpec::Garch(p) => gen_garch_panel(p, n, d, seed),
            ModelSpec::LinearMatrix(p) => gen_linear_matrix_panel(p, n, d, seed),
        }
    }
}

/// A mean shift of size `delta` after time `floor(tau n)` in one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Change {
    /// 0-based.
    pub coordinate: usize,
    pub tau: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChangePlan {
    pub changes: Vec<Change>,
}

/// Changes per quintile block used in the standard grid: 10, or 15 once
/// `d >= 250`, never more than the block holds.
pub fn default_per_quintile(d: usize) -> usize {
    let per = if d >= 250 { 15 } else { 10 };
    per.min(d / 5)
}

impl ChangePlan {
    /// The first `per_quintile` coordinates of the `i`-th fifth of the panel
    /// change at `tau = (2i - 1) / 10`.
    pub fn quintile_grid(d: usize, delta: f64, per_quintile: usize) -> Result<Self> {
        let block = d / 5;
        if per_quintile > block {
            return Err(Error::InvalidPlan(format!(
                "{per_quintile} changes per quintile do not fit d = {d}"
            )));
        }
        let mut changes = Vec::with_capacity(5 * per_quintile);
        for i in 0..5 {
            let tau = (2 * i + 1) as f64 / 10.0;
            for j in 0..per_quintile {
                changes.push(Change {
                    coordinate: i * block + j,
                    tau,
                    delta,
                });
            }
        }
        Ok(Self { changes })
    }
}

/// Where the changes really are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub n: usize,
    pub d: usize,
    /// `(coordinate, tau)`, 0-based coordinates.
    pub changed: Vec<(usize, f64)>,
}

impl Truth {
    pub fn is_changed(&self, h: usize) -> bool {
        self.changed.iter().any(|&(c, _)| c == h)
    }
}

/// Adds each shift to `X_{k,h}` for `k > floor(tau n)`.
pub fn inject_changes(panel: &Panel, plan: &ChangePlan) -> Result<(Panel, Truth)> {
    let (n, d) = (panel.n(), panel.d());
    let mut seen = vec![false; d];
    for c in &plan.changes {
        if c.coordinate >= d {
            return Err(Error::InvalidPlan(format!(
                "coordinate {} outside d = {d}",
                c.coordinate + 1
            )));
        }
        if std::mem::replace(&mut seen[c.coordinate], true) {
            return Err(Error::InvalidPlan(format!("coordinate {} changes twice", c.coordinate + 1)));
        }
        if !(0.0..=1.0).contains(&c.tau) || !c.delta.is_finite() {
            return Err(Error::InvalidPlan(format!("bad change {c:?}")));
        }
    }
    let mut out = panel.clone();
    let mut changed = Vec::with_capacity(plan.changes.len());
    for c in &plan.changes {
        let start = change_index(c.tau, n);
        for v in &mut out.series_mut(c.coordinate)[start..] {
            *v += c.delta;
        }
        if c.delta != 0.0 {
            changed.push((c.coordinate, c.tau));
        }
    }
    changed.sort_by_key(|&(h, _)| h);
    Ok((out, Truth { n, d, changed }))
}

fn change_index(tau: f64, n: usize) -> usize {
    ((tau * n as f64 + 1e-9).floor() as usize).min(n)
}

/// Quintile `i` in `1..=5` with `k / n` in `[(i-1)/5, i/5)`.
pub fn quintile(k: usize, n: usize) -> usize {
    (5 * k / n + 1).min(5)
}

/// Counts behind the detection metrics; add them up across runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    /// Changed coordinates flagged with a change time in the right quintile.
    pub hits: [usize; 5],
    /// Changed coordinates per true quintile.
    pub changed: [usize; 5],
    /// Unchanged coordinates flagged.
    pub false_flags: usize,
    pub unchanged: usize,
}

impl EvalCounts {
    pub fn merge(mut self, other: &EvalCounts) -> Self {
        for i in 0..5 {
            self.hits[i] += other.hits[i];
            self.changed[i] += other.changed[i];
        }
        self.false_flags += other.false_flags;
        self.unchanged += other.unchanged;
        self
    }

    pub fn metrics(&self) -> EvalMetrics {
        let pct = |a: usize, b: usize| (b > 0).then(|| 100.0 * a as f64 / b as f64);
        EvalMetrics {
            r: std::array::from_fn(|i| pct(self.hits[i], self.changed[i])),
            ti_star: pct(self.false_flags, self.unchanged).unwrap_or(0.0),
            counts: *self,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Per-quintile accuracy in percent; `None` when no change falls there.
    pub r: [Option<f64>; 5],
    /// Coordinatewise false positive rate in percent.
    pub ti_star: f64,
    pub counts: EvalCounts,
}

pub fn evaluation_counts(report: &DetectionReport, truth: &Truth) -> Result<EvalCounts> {
    if report.n != truth.n || report.d != truth.d {
        return Err(Error::Dimension("report and truth describe different panels".into()));
    }
    let mut true_quintile = vec![None; truth.d];
    let mut counts = EvalCounts::default();
    for &(h, tau) in &truth.changed {
        let q = quintile(change_index(tau, truth.n), truth.n);
        true_quintile[h] = Some(q);
        counts.changed[q - 1] += 1;
    }
    for c in &report.coordinates {
        let h = c.coordinate - 1;
        let flagged = c.verdict == Verdict::Unstable;
        match true_quintile[h] {
            None => {
                counts.unchanged += 1;
                if flagged {
                    counts.false_flags += 1;
                }
            }
            Some(q) => {
                if flagged && c.k_star.map(|k| quintile(k, truth.n)) == Some(q) {
                    counts.hits[q - 1] += 1;
                }
            }
        }
    }
    Ok(counts)
}

pub fn evaluate_detection(report: &DetectionReport, truth: &Truth) -> Result<EvalMetrics> {
    Ok(evaluation_counts(report, truth)?.metrics())
}
