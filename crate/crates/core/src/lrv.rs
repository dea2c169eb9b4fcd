// SPDX-License-Identifier: MIT OR Apache-2.0

//! Long-run variance estimation: the windowed autocovariance estimator and the
//! split-sample family that stays consistent when the mean shifts once.

use serde::{Deserialize, Serialize};

use crate::cusum::change_time;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weight {
    /// `w(x) = 1`.
    #[default]
    Plain,
    /// `w(x) = 1 - |x|`.
    Bartlett,
}

impl Weight {
    #[inline]
    fn at(self, x: f64) -> f64 {
        match self {
            Weight::Plain => 1.0,
            Weight::Bartlett => (1.0 - x.abs()).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrvConfig {
    /// Fixed bandwidth; `None` means `floor(n^{1/3})` of the full sample.
    pub bandwidth: Option<usize>,
    pub weight: Weight,
    /// Variance estimates below `floor^2` are clamped and flagged.
    pub floor: f64,
}

impl Default for LrvConfig {
    fn default() -> Self {
        Self {
            bandwidth: None,
            weight: Weight::Plain,
            floor: 1e-6,
        }
    }
}

impl LrvConfig {
    pub fn bandwidth_for(&self, n: usize) -> usize {
        self.bandwidth.unwrap_or_else(|| default_bandwidth(n))
    }
}

/// `floor(n^{1/3})`, computed in integers.
pub fn default_bandwidth(n: usize) -> usize {
    let mut b = (n as f64).cbrt() as usize;
    while (b + 1).pow(3) <= n {
        b += 1;
    }
    while b > 0 && b.pow(3) > n {
        b -= 1;
    }
    b
}

/// Lag-`j` sample autocovariance, `(m - j)^{-1} sum_{k>j} (x_k - xbar)(x_{k-j} - xbar)`.
pub fn autocovariance(series: &[f64], lag: usize) -> Result<f64> {
    let m = series.len();
    if lag >= m {
        return Err(Error::InvalidLag { lag, len: m });
    }
    let mean = series.iter().sum::<f64>() / m as f64;
    Ok(autocov_centered(series, mean, lag))
}

#[inline]
fn autocov_centered(series: &[f64], mean: f64, lag: usize) -> f64 {
    let m = series.len();
    let s: f64 = series[lag..]
        .iter()
        .zip(series)
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum();
    s / (m - lag) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrvEstimate {
    /// Estimated long-run variance after clamping.
    pub variance: f64,
    /// Value before clamping.
    pub raw: f64,
    pub clamped: bool,
}

impl LrvEstimate {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// `phi_0 + 2 sum_{k=1..b} w(k/b) phi_k` with the given bandwidth.
pub fn lrv_with_bandwidth(series: &[f64], bandwidth: usize, config: &LrvConfig) -> Result<LrvEstimate> {
    let m = series.len();
    if bandwidth >= m {
        return Err(Error::InvalidBandwidth {
            bandwidth,
            len: m,
        });
    }
    let mean = series.iter().sum::<f64>() / m as f64;
    let mut raw = autocov_centered(series, mean, 0);
    for k in 1..=bandwidth {
        let w = config.weight.at(k as f64 / bandwidth as f64);
        if w != 0.0 {
            raw += 2.0 * w * autocov_centered(series, mean, k);
        }
    }
    let floor = config.floor * config.floor;
    let clamped = !(raw >= floor);
    Ok(LrvEstimate {
        variance: if clamped { floor } else { raw },
        raw,
        clamped,
    })
}

/// Windowed estimate on the whole series, bandwidth resolved from its length.
pub fn plain_lrv(series: &[f64], config: &LrvConfig) -> Result<LrvEstimate> {
    lrv_with_bandwidth(series, config.bandwidth_for(series.len()), config)
}

/// Which member of the variance family scales the statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceKind {
    /// Full-sample estimate, no split.
    Plain,
    #[default]
    Star,
    Min,
    Max,
    Mean,
    Diamond,
    Minus,
    Plus,
}

impl VarianceKind {
    pub const ALL: [VarianceKind; 8] = [
        VarianceKind::Plain,
        VarianceKind::Star,
        VarianceKind::Min,
        VarianceKind::Max,
        VarianceKind::Mean,
        VarianceKind::Diamond,
        VarianceKind::Minus,
        VarianceKind::Plus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VarianceKind::Plain => "plain",
            VarianceKind::Star => "star",
            VarianceKind::Min => "min",
            VarianceKind::Max => "max",
            VarianceKind::Mean => "mean",
            VarianceKind::Diamond => "diamond",
            VarianceKind::Minus => "minus",
            VarianceKind::Plus => "plus",
        }
    }

    pub fn needs_split(self) -> bool {
        self != VarianceKind::Plain
    }
}

impl std::str::FromStr for VarianceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VarianceKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variance kind {s:?}")))
    }
}

/// The split-sample standard deviations of one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitVariance {
    pub minus: f64,
    pub plus: f64,
    pub star: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub diamond: f64,
    pub tau_hat: f64,
    pub b_tau: f64,
    /// Sizes of the leading and trailing subsamples.
    pub n_minus: usize,
    pub n_plus: usize,
    /// A side estimate hit the variance floor.
    pub clamped: bool,
}

impl SplitVariance {
    pub fn get(&self, kind: VarianceKind) -> Option<f64> {
        Some(match kind {
            VarianceKind::Plain => return None,
            VarianceKind::Star => self.star,
            VarianceKind::Min => self.min,
            VarianceKind::Max => self.max,
            VarianceKind::Mean => self.mean,
            VarianceKind::Diamond => self.diamond,
            VarianceKind::Minus => self.minus,
            VarianceKind::Plus => self.plus,
        })
    }
}

/// Sizes of `{k <= B tau n}` and `{n - B (1 - tau) n < k <= n}`.
pub fn split_sizes(n: usize, tau_hat: f64, b_tau: f64) -> (usize, usize) {
    const EPS: f64 = 1e-9;
    let nf = n as f64;
    let lead = (b_tau * tau_hat * nf + EPS).floor().max(0.0) as usize;
    let cut = (nf - b_tau * (1.0 - tau_hat) * nf + EPS).floor().max(0.0) as usize;
    (lead.min(n), n - cut.min(n))
}

/// Split-sample estimators around `tau_hat`.
///
/// `bandwidth` is shared by both sides; each side needs more than
/// `bandwidth + 1` points.
pub fn split_lrv(
    series: &[f64],
    tau_hat: f64,
    b_tau: f64,
    bandwidth: usize,
    config: &LrvConfig,
    coordinate: usize,
) -> Result<SplitVariance> {
    if !(b_tau > 0.0 && b_tau < 1.0) {
        return Err(Error::InvalidConfig(format!("B_tau = {b_tau} must lie in (0, 1)")));
    }
    let n = series.len();
    let (n_minus, n_plus) = split_sizes(n, tau_hat, b_tau);
    if n_minus <= bandwidth + 1 || n_plus <= bandwidth + 1 {
        return Err(Error::SplitTooShort {
            coordinate: coordinate + 1,
        });
    }
    let lo = lrv_with_bandwidth(&series[..n_minus], bandwidth, config)?;
    let hi = lrv_with_bandwidth(&series[n - n_plus..], bandwidth, config)?;
    let (vm, vp) = (lo.variance, hi.variance);
    let minus = vm.sqrt();
    let plus = vp.sqrt();
    Ok(SplitVariance {
        minus,
        plus,
        star: (tau_hat * vm + (1.0 - tau_hat) * vp).sqrt(),
        min: minus.min(plus),
        max: minus.max(plus),
        mean: (0.5 * (vm + vp)).sqrt(),
        diamond: if n_minus >= n_plus { minus } else { plus },
        tau_hat,
        b_tau,
        n_minus,
        n_plus,
        clamped: lo.clamped || hi.clamped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaChoice {
    pub sigma: f64,
    /// Change time estimate used for the split (absent for `Plain`).
    pub tau_hat: Option<f64>,
    pub k_star: Option<usize>,
    /// The split was too short and the full-sample estimate was used instead.
    pub fell_back: bool,
    pub clamped: bool,
}

/// Resolves the scale of one coordinate for the requested estimator.
pub fn coordinate_sigma(
    series: &[f64],
    kind: VarianceKind,
    trim: f64,
    b_tau: f64,
    config: &LrvConfig,
    coordinate: usize,
) -> Result<SigmaChoice> {
    let n = series.len();
    let bandwidth = config.bandwidth_for(n);
    let full = |fell_back, tau: Option<(f64, usize)>| -> Result<SigmaChoice> {
        let est = lrv_with_bandwidth(series, bandwidth, config)?;
        Ok(SigmaChoice {
            sigma: est.sd(),
            tau_hat: tau.map(|t| t.0),
            k_star: tau.map(|t| t.1),
            fell_back,
            clamped: est.clamped,
        })
    };
    if !kind.needs_split() {
        return full(false, None);
    }
    let est = change_time(series, trim)?;
    match split_lrv(series, est.tau_hat, b_tau, bandwidth, config, coordinate) {
        Ok(split) => Ok(SigmaChoice {
            sigma: split.get(kind).expect("split kind"),
            tau_hat: Some(est.tau_hat),
            k_star: Some(est.k_star),
            fell_back: false,
            clamped: split.clamped,
        }),
        Err(Error::SplitTooShort { .. }) => full(true, Some((est.tau_hat, est.k_star))),
        Err(e) => Err(e),
    }
}
