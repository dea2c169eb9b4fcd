// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-coordinate verdicts against a simultaneous critical value.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cusum::{change_time, cusum_max};
use crate::error::{Error, Result};
use crate::exec::{try_map_range, Execution};
use crate::lrv::{coordinate_sigma, LrvConfig, VarianceKind};
use crate::panel::Panel;
use crate::quantiles::Threshold;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Stable,
    Unstable,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateResult {
    /// 1-based.
    pub coordinate: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub statistic: f64,
    pub verdict: Verdict,
    /// Estimated change time, present for unstable coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_star: Option<usize>,
    pub sigma: f64,
    /// The split estimate was unavailable and the full-sample one was used.
    #[serde(default)]
    pub fell_back: bool,
    /// Some variance estimate behind `sigma` hit the floor.
    #[serde(default)]
    pub clamped: bool,
    /// `sigma` itself sits at the floor, so the statistic is meaningless.
    #[serde(default)]
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub variance: VarianceKind,
    pub lrv: LrvConfig,
    pub b_tau: f64,
    pub trim: f64,
    #[serde(default)]
    pub exec: Execution,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            variance: VarianceKind::Star,
            lrv: LrvConfig::default(),
            b_tau: 0.8,
            trim: 0.05,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub n: usize,
    pub d: usize,
    pub threshold: Threshold,
    pub variance: VarianceKind,
    pub trim: f64,
    pub b_tau: f64,
    pub bandwidth: usize,
    pub coordinates: Vec<CoordinateResult>,
    pub warnings: Vec<String>,
}

impl DetectionReport {
    /// 1-based coordinates flagged unstable.
    pub fn unstable(&self) -> Vec<usize> {
        self.coordinates
            .iter()
            .filter(|c| c.verdict == Verdict::Unstable)
            .map(|c| c.coordinate)
            .collect()
    }

    pub fn unstable_count(&self) -> usize {
        self.coordinates
            .iter()
            .filter(|c| c.verdict == Verdict::Unstable)
            .count()
    }

    /// Coordinates whose scale sits at the variance floor.
    pub fn degenerate_count(&self) -> usize {
        self.coordinates.iter().filter(|c| c.degenerate).count()
    }

    pub fn max_statistic(&self) -> f64 {
        self.coordinates
            .iter()
            .map(|c| c.statistic)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Flat table `coordinate,statistic,verdict,tau_hat,sigma_hat`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "coordinate,statistic,verdict,tau_hat,sigma_hat")?;
        for c in &self.coordinates {
            let tau = c.tau_hat.map(|t| t.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{}",
                c.coordinate,
                c.statistic,
                c.verdict.name(),
                tau,
                c.sigma
            )?;
        }
        Ok(())
    }
}

/// Scales every coordinate, computes `B_{n,h}` and compares with the threshold.
pub fn build_report(panel: &Panel, threshold: &Threshold, options: &ReportOptions) -> Result<DetectionReport> {
    if threshold.n != panel.n() || threshold.d != panel.d() {
        return Err(Error::Dimension(format!(
            "threshold computed for n = {}, d = {} but the panel is {} x {}",
            threshold.n,
            threshold.d,
            panel.n(),
            panel.d()
        )));
    }
    let opts = *options;
    let coordinates = try_map_range(opts.exec, panel.d(), |h| {
        let x = panel.series(h);
        let choice = coordinate_sigma(x, opts.variance, opts.trim, opts.b_tau, &opts.lrv, h)?;
        let statistic = cusum_max(x) / choice.sigma;
        let verdict = if statistic > threshold.value {
            Verdict::Unstable
        } else {
            Verdict::Stable
        };
        let (tau_hat, k_star) = match verdict {
            Verdict::Stable => (None, None),
            Verdict::Unstable => match (choice.tau_hat, choice.k_star) {
                (Some(t), Some(k)) => (Some(t), Some(k)),
                _ => {
                    let est = change_time(x, opts.trim)?;
                    (Some(est.tau_hat), Some(est.k_star))
                }
            },
        };
        Ok::<_, Error>(CoordinateResult {
            coordinate: h + 1,
            label: panel.label(h).map(str::to_owned),
            statistic,
            verdict,
            tau_hat,
            k_star,
            sigma: choice.sigma,
            fell_back: choice.fell_back,
            clamped: choice.clamped,
            degenerate: choice.sigma <= opts.lrv.floor,
        })
    })?;

    let mut warnings = threshold.warnings.clone();
    let fell_back = coordinates.iter().filter(|c| c.fell_back).count();
    if fell_back > 0 {
        warnings.push(format!(
            "{fell_back} coordinates used the full-sample variance because a split side was too short"
        ));
    }
    let listed = |pick: fn(&CoordinateResult) -> bool| -> Vec<String> {
        coordinates
            .iter()
            .filter(|c| pick(c))
            .map(|c| c.coordinate.to_string())
            .collect()
    };
    let degenerate = listed(|c| c.degenerate);
    if !degenerate.is_empty() {
        warnings.push(format!("degenerate variance for coordinates {}", degenerate.join(" ")));
    }
    let clamped = listed(|c| c.clamped && !c.degenerate);
    if !clamped.is_empty() {
        warnings.push(format!(
            "a split-sample variance hit the floor for coordinates {}",
            clamped.join(" ")
        ));
    }
    Ok(DetectionReport {
        n: panel.n(),
        d: panel.d(),
        threshold: threshold.clone(),
        variance: opts.variance,
        trim: opts.trim,
        b_tau: opts.b_tau,
        bandwidth: opts.lrv.bandwidth_for(panel.n()),
        coordinates,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantiles::asymptotic_threshold;

    fn wiggle(n: usize, phase: f64) -> Vec<f64> {
        (0..n).map(|k| (k as f64 * 1.7 + phase).sin() * 0.5).collect()
    }

    #[test]
    fn large_break_is_flagged_with_change_time() {
        let n = 200;
        let mut cols: Vec<Vec<f64>> = (0..5).map(|h| wiggle(n, h as f64)).collect();
        for v in &mut cols[2][n / 2..] {
            *v += 10.0;
        }
        let p = Panel::from_columns(cols).unwrap();
        let t = asymptotic_threshold(n, 5, 0.05, false).unwrap();
        let r = build_report(&p, &t, &ReportOptions::default()).unwrap();
        assert_eq!(r.unstable(), vec![3]);
        let c = &r.coordinates[2];
        assert!((c.tau_hat.unwrap() - 0.5).abs() <= 0.05);
        assert!(r.coordinates.iter().all(|c| (c.verdict == Verdict::Unstable) == c.tau_hat.is_some()));
    }

    #[test]
    fn singleton_panel_has_one_verdict() {
        let p = Panel::from_columns(vec![wiggle(50, 0.3)]).unwrap();
        let t = asymptotic_threshold(50, 1, 0.05, false).unwrap();
        let r = build_report(&p, &t, &ReportOptions::default()).unwrap();
        assert_eq!(r.coordinates.len(), 1);
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 2);
    }

    #[test]
    fn mismatched_threshold_is_rejected() {
        let p = Panel::from_columns(vec![wiggle(50, 0.3)]).unwrap();
        let t = asymptotic_threshold(60, 1, 0.05, false).unwrap();
        assert!(matches!(
            build_report(&p, &t, &ReportOptions::default()),
            Err(Error::Dimension(_))
        ));
    }
}
