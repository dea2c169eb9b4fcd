// SPDX-License-Identifier: MIT OR Apache-2.0

//! Simultaneous critical values for the maximum CUSUM statistic.
//!
//! Three calibrations are offered: the closed-form Gumbel normalization, a
//! parametric bootstrap over i.i.d. Gaussian panels, and (in
//! [`crate::bootstrap`]) the block multiplier bootstrap. All of them end up as
//! a [`Threshold`].

use serde::{Deserialize, Serialize};

use crate::cusum::cusum_max;
use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::rng::{self, Domain};

/// Smallest Monte Carlo size accepted by the simulation-based calibrations.
pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMethod {
    Asymptotic,
    /// Simulates the maximum over `d` Gaussian coordinates directly.
    ParametricA,
    /// Simulates one coordinate and solves `F(z)^d = 1 - alpha`.
    ParametricB,
    BlockBootstrap,
}

/// A calibrated critical value and how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub method: ThresholdMethod,
    /// Nominal level requested by the caller.
    pub alpha: f64,
    /// Level actually plugged into the quantile (differs when conservative).
    pub level: f64,
    pub conservative: bool,
    pub d: usize,
    pub n: usize,
    /// Monte Carlo size, 0 for the closed form.
    pub replicates: usize,
    pub seed: Option<u64>,
    /// Extra provenance, e.g. the bootstrap algorithm and block layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub fn check_level(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLevel(alpha))
    }
}

/// `e_d = 2 sqrt(2 log(2d))`.
pub fn gumbel_scale(d: usize) -> f64 {
    2.0 * (2.0 * (2.0 * d as f64).ln()).sqrt()
}

/// `x_alpha = -log(-log(1 - alpha))`.
pub fn gumbel_level(alpha: f64) -> f64 {
    -(-(-alpha).ln_1p()).ln()
}

/// `x_alpha / e_d + f_d` with `f_d = e_d / 4`.
pub fn gumbel_quantile(d: usize, alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    if d == 0 {
        return Err(Error::Dimension("d must be at least 1".into()));
    }
    let e = gumbel_scale(d);
    Ok(gumbel_level(alpha) / e + e / 4.0)
}

/// `a = 1 - exp(-alpha)`; using `a` in place of `alpha` keeps the Type I
/// error below `alpha` without any spatial decay assumption.
pub fn conservative_level(alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    Ok(-(-alpha).exp_m1())
}

/// `z_alpha = d (1 - (1 - alpha)^{1/d})`.
pub fn per_coordinate_level(d: usize, alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    if d == 0 {
        return Err(Error::Dimension("d must be at least 1".into()));
    }
    let df = d as f64;
    Ok(-df * ((-alpha).ln_1p() / df).exp_m1())
}

pub fn asymptotic_threshold(n: usize, d: usize, alpha: f64, conservative: bool) -> Result<Threshold> {
    let level = if conservative {
        conservative_level(alpha)?
    } else {
        check_level(alpha)?;
        alpha
    };
    Ok(Threshold {
        value: gumbel_quantile(d, level)?,
        method: ThresholdMethod::Asymptotic,
        alpha,
        level,
        conservative,
        d,
        n,
        replicates: 0,
        seed: None,
        detail: None,
        warnings: Vec::new(),
    })
}

/// 1-based rank `ceil(p * m)`, robust to `p * m` landing a hair above an integer.
pub fn upper_rank(p: f64, m: usize) -> usize {
    let x = p * m as f64;
    let r = x.round();
    let rank = if (x - r).abs() <= 1e-9 * (m as f64).max(1.0) {
        r
    } else {
        x.ceil()
    };
    (rank as usize).clamp(1, m)
}

/// Order statistic at rank `ceil((1 - alpha) m)` of an ascending sample.
pub fn sorted_quantile(sorted: &[f64], alpha: f64) -> f64 {
    sorted[upper_rank(1.0 - alpha, sorted.len()) - 1]
}

pub fn empirical_quantile(sample: &[f64], alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    if sample.is_empty() {
        return Err(Error::InsufficientReplicates {
            required: 1,
            got: 0,
        });
    }
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(sorted_quantile(&v, alpha))
}

/// Smallest sample value `z` with `F_m(z)^d >= 1 - alpha`, where `F_m` is the
/// empirical CDF of the ascending sample.
pub fn power_quantile(sorted: &[f64], d: usize, alpha: f64) -> f64 {
    let m = sorted.len();
    let target = 1.0 - alpha;
    let ok = |i: usize| (i as f64 / m as f64).powi(d as i32) >= target;
    let guess = upper_rank(target.powf(1.0 / d as f64), m);
    let mut i = guess;
    while i > 1 && ok(i - 1) {
        i -= 1;
    }
    while i < m && !ok(i) {
        i += 1;
    }
    // the empirical CDF at a tied value counts every copy
    sorted[i - 1]
}

/// One replicate of `B^Z_{n}`: the CUSUM maximum of `n` i.i.d. N(0, 1) draws.
pub fn gaussian_cusum_draw<R: rand::Rng + ?Sized>(rng: &mut R, buf: &mut [f64]) -> f64 {
    rng::fill_gaussian(rng, buf);
    cusum_max(buf)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParametricConfig {
    pub n: usize,
    pub d: usize,
    pub replicates: usize,
    pub method: ThresholdMethod,
    pub seed: u64,
    #[serde(default)]
    pub exec: Execution,
}

/// Simulated replicates for the parametric bootstrap, ascending.
///
/// Method A yields `max_h B^Z_{n,h}` per replicate, method B one `B^Z_{n,1}`.
/// Replicate `m` always draws from stream `m` of the seed.
pub fn parametric_draws(config: &ParametricConfig) -> Result<Vec<f64>> {
    if config.replicates < MIN_REPLICATES {
        return Err(Error::InsufficientReplicates {
            required: MIN_REPLICATES,
            got: config.replicates,
        });
    }
    if config.n < crate::panel::MIN_TIME_POINTS {
        return Err(Error::TooShort { n: config.n });
    }
    if config.d == 0 {
        return Err(Error::Dimension("d must be at least 1".into()));
    }
    let (n, d) = (config.n, config.d);
    let per_replicate = |m: usize| {
        let mut rng = rng::stream(config.seed, Domain::Parametric, m as u64);
        let mut buf = vec![0.0; n];
        match config.method {
            ThresholdMethod::ParametricA => (0..d)
                .map(|_| gaussian_cusum_draw(&mut rng, &mut buf))
                .fold(f64::NEG_INFINITY, f64::max),
            _ => gaussian_cusum_draw(&mut rng, &mut buf),
        }
    };
    let mut draws = map_range(config.exec, config.replicates, per_replicate);
    draws.sort_by(f64::total_cmp);
    Ok(draws)
}

/// Parametric bootstrap critical value at level `alpha`.
pub fn parametric_quantile(config: &ParametricConfig, alpha: f64, conservative: bool) -> Result<Threshold> {
    let level = if conservative {
        conservative_level(alpha)?
    } else {
        check_level(alpha)?;
        alpha
    };
    if !matches!(
        config.method,
        ThresholdMethod::ParametricA | ThresholdMethod::ParametricB
    ) {
        return Err(Error::InvalidConfig(format!(
            "{:?} is not a parametric method",
            config.method
        )));
    }
    let draws = parametric_draws(config)?;
    Ok(threshold_from_draws(config, &draws, alpha, level, conservative))
}

/// Packages the quantile of already simulated, ascending draws.
pub fn threshold_from_draws(
    config: &ParametricConfig,
    sorted: &[f64],
    alpha: f64,
    level: f64,
    conservative: bool,
) -> Threshold {
    let value = match config.method {
        ThresholdMethod::ParametricA => sorted_quantile(sorted, level),
        _ => power_quantile(sorted, config.d, level),
    };
    Threshold {
        value,
        method: config.method,
        alpha,
        level,
        conservative,
        d: config.d,
        n: config.n,
        replicates: config.replicates,
        seed: Some(config.seed),
        detail: None,
        warnings: Vec::new(),
    }
}
