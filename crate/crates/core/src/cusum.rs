// SPDX-License-Identifier: MIT OR Apache-2.0

//! Centered partial-sum profiles, the self-normalized CUSUM statistic and the
//! change-time estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::panel::Panel;

/// `values[k-1] = n^{-1/2} |S_k - (k/n) S_n|` for `k = 1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CusumProfile {
    pub coordinate: usize,
    pub values: Vec<f64>,
    /// 1-based time index of the first maximum.
    pub argmax: usize,
    pub max_value: f64,
}

/// Writes `S_k - (k/n) S_n` for `k = 1..=n` into `out`.
///
/// The last entry is exactly zero because `k/n` evaluates to `1.0` there.
pub fn centered_partial_sums(series: &[f64], out: &mut Vec<f64>) {
    let n = series.len();
    out.clear();
    out.reserve(n);
    let mut s = 0.0;
    for &x in series {
        s += x;
        out.push(s);
    }
    let total = s;
    let nf = n as f64;
    for (i, v) in out.iter_mut().enumerate() {
        *v -= ((i + 1) as f64 / nf) * total;
    }
}

/// Position (0-based) and value of the first maximum of `|v|` over `range`.
#[inline]
fn first_abs_max(values: &[f64], range: std::ops::Range<usize>) -> (usize, f64) {
    let mut best = (range.start, f64::NEG_INFINITY);
    for i in range {
        let a = values[i].abs();
        if a > best.1 {
            best = (i, a);
        }
    }
    best
}

/// `max_k |S_k - (k/n) S_n| / sqrt(n)` in one pass, without storing the profile.
pub fn cusum_max(series: &[f64]) -> f64 {
    let n = series.len();
    let total: f64 = series.iter().sum();
    let nf = n as f64;
    let mut s = 0.0;
    let mut best = 0.0f64;
    for (i, &x) in series.iter().enumerate() {
        s += x;
        let c = (s - ((i + 1) as f64 / nf) * total).abs();
        if c > best {
            best = c;
        }
    }
    best * nf.sqrt().recip()
}

pub fn profile_of(series: &[f64], coordinate: usize) -> CusumProfile {
    let n = series.len();
    let mut values = Vec::new();
    centered_partial_sums(series, &mut values);
    let scale = (n as f64).sqrt().recip();
    for v in values.iter_mut() {
        *v = v.abs() * scale;
    }
    let (pos, max_value) = first_abs_max(&values, 0..n);
    CusumProfile {
        coordinate,
        values,
        argmax: pos + 1,
        max_value,
    }
}

pub fn cusum_profile(panel: &Panel, h: usize) -> Result<CusumProfile> {
    Ok(profile_of(panel.checked_series(h)?, h))
}

/// `B_{n,h} = max_value / sigma`.
pub fn cusum_stat(profile: &CusumProfile, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::DegenerateVariance {
            coordinate: profile.coordinate + 1,
        });
    }
    Ok(profile.max_value / sigma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelMax {
    pub value: f64,
    /// 0-based coordinate of the first maximum.
    pub argmax: usize,
    pub per_coordinate: Vec<f64>,
}

/// `T = max_h B_{n,h}` with per-coordinate scales `sigmas`.
pub fn panel_max_stat(panel: &Panel, sigmas: &[f64], exec: Execution) -> Result<PanelMax> {
    if sigmas.len() != panel.d() {
        return Err(Error::Dimension(format!(
            "{} scales for {} coordinates",
            sigmas.len(),
            panel.d()
        )));
    }
    if let Some(h) = sigmas.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::DegenerateVariance { coordinate: h + 1 });
    }
    let per_coordinate = map_range(exec, panel.d(), |h| cusum_max(panel.series(h)) / sigmas[h]);
    let (argmax, value) = per_coordinate
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (h, &b)| {
            if b > best.1 {
                (h, b)
            } else {
                best
            }
        });
    Ok(PanelMax {
        value,
        argmax,
        per_coordinate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeTimeEstimate {
    /// `k_star / n`.
    pub tau_hat: f64,
    pub trim: f64,
    /// 1-based time index after which the mean is estimated to shift.
    pub k_star: usize,
}

/// Indices `k` (1-based) with `trim < k/n < 1 - trim`, as a half-open range.
pub fn trimmed_range(n: usize, trim: f64) -> Result<std::ops::Range<usize>> {
    if !(0.0..=0.5).contains(&trim) {
        return Err(Error::InvalidTrim { n, trim });
    }
    let nf = n as f64;
    let lo = (1..n).find(|&k| k as f64 / nf > trim);
    let hi = (1..n).rev().find(|&k| (k as f64 / nf) < 1.0 - trim);
    match (lo, hi) {
        (Some(lo), Some(hi)) if lo <= hi => Ok(lo..hi + 1),
        _ => Err(Error::InvalidTrim { n, trim }),
    }
}

/// Smallest maximizer of the unnormalized CUSUM over the trimmed grid.
pub fn change_time(series: &[f64], trim: f64) -> Result<ChangeTimeEstimate> {
    let n = series.len();
    let range = trimmed_range(n, trim)?;
    let mut centered = Vec::new();
    centered_partial_sums(series, &mut centered);
    let (pos, _) = first_abs_max(&centered, range.start - 1..range.end - 1);
    let k_star = pos + 1;
    Ok(ChangeTimeEstimate {
        tau_hat: k_star as f64 / n as f64,
        trim,
        k_star,
    })
}

pub fn estimate_change_time(panel: &Panel, h: usize, trim: f64) -> Result<ChangeTimeEstimate> {
    change_time(panel.checked_series(h)?, trim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(cols: &[&[f64]]) -> Panel {
        Panel::from_columns(cols.iter().map(|c| c.to_vec()).collect()).unwrap()
    }

    #[test]
    fn constant_series_has_zero_profile() {
        let p = profile_of(&[0.0; 4], 0);
        assert_eq!(p.values, vec![0.0; 4]);
        assert_eq!(p.max_value, 0.0);
        assert_eq!(p.argmax, 1);
    }

    #[test]
    fn linear_ramp_profile() {
        let p = profile_of(&[1.0, 2.0, 3.0, 4.0], 0);
        assert_eq!(p.values, vec![0.75, 1.0, 0.75, 0.0]);
        assert_eq!((p.argmax, p.max_value), (2, 1.0));
        assert_eq!(cusum_stat(&p, 1.0).unwrap(), 1.0);
        assert_eq!(cusum_stat(&p, 2.0).unwrap(), 0.5);
        assert_eq!(cusum_stat(&p, 0.5).unwrap(), 2.0);
        assert!(matches!(
            cusum_stat(&p, 0.0),
            Err(Error::DegenerateVariance { coordinate: 1 })
        ));
    }

    #[test]
    fn step_series_peaks_at_break() {
        let x = [0.0, 0.0, 0.0, 10.0, 10.0, 10.0];
        let p = profile_of(&x, 0);
        assert_eq!(p.argmax, 3);
        assert!((p.max_value - 15.0 / 6f64.sqrt()).abs() < 1e-12);
        assert_eq!(*p.values.last().unwrap(), 0.0);
    }

    #[test]
    fn panel_maximum_and_tie_break() {
        let b = [1.0, 2.0, 3.0, 4.0];
        let single = panel(&[&b]);
        let m = panel_max_stat(&single, &[1.0], Execution::Sequential).unwrap();
        assert_eq!((m.value, m.argmax), (1.0, 0));

        let twins = panel(&[&b, &b]);
        let m = panel_max_stat(&twins, &[1.0, 1.0], Execution::Parallel).unwrap();
        assert_eq!(m.per_coordinate[0], m.per_coordinate[1]);
        assert_eq!(m.argmax, 0);

        assert!(matches!(
            panel_max_stat(&twins, &[1.0, -1.0], Execution::Sequential),
            Err(Error::DegenerateVariance { coordinate: 2 })
        ));
    }

    #[test]
    fn panel_of_three_examples() {
        let p = panel(&[
            &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            &[0.0, 0.0, 0.0, 10.0, 10.0, 10.0],
        ]);
        let m = panel_max_stat(&p, &[1.0; 3], Execution::Sequential).unwrap();
        assert_eq!(m.argmax, 2);
        assert!((m.value - 6.123_724_356_957_945).abs() < 1e-12);
    }

    #[test]
    fn change_time_on_grid() {
        let x = [0.0, 0.0, 0.0, 10.0, 10.0, 10.0];
        let est = change_time(&x, 0.1).unwrap();
        assert_eq!((est.k_star, est.tau_hat), (3, 0.5));
        // all-zero profile: first admissible index wins
        let est = change_time(&[2.0; 10], 0.25).unwrap();
        assert_eq!(est.k_star, 3);
        assert!(change_time(&[1.0; 4], 0.5).is_err());
        assert!(change_time(&[1.0; 4], 0.6).is_err());
    }

    #[test]
    fn trimmed_range_excludes_endpoints() {
        assert_eq!(trimmed_range(10, 0.1).unwrap(), 2..9);
        assert_eq!(trimmed_range(10, 0.0).unwrap(), 1..10);
        assert_eq!(trimmed_range(6, 0.1).unwrap(), 1..6);
    }
}
