// SPDX-License-Identifier: MIT OR Apache-2.0

//! Checks shared by the property suite and the acceptance run. Each returns
//! `Err` with a description of the first violation.

#![allow(dead_code)]

use hdcusum::bootstrap::{boot_stat_i, boot_stat_ii, boot_stat_iii, build_centered_blocks, build_filtered_blocks};
use hdcusum::cusum::{centered_partial_sums, cusum_max, profile_of};
use hdcusum::lrv::{autocovariance, split_lrv, LrvConfig, SplitVariance};
use hdcusum::panel::{partition_blocks, BlockLayout};
use hdcusum::Panel;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Check = Result<(), String>;

pub fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Noise with a random scale, offset and (sometimes) a level shift.
pub fn random_series(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let scale = 10f64.powf(rng.random_range(-3.0..3.0));
    let offset = rng.random_range(-50.0..50.0);
    let mut x: Vec<f64> = normals(rng, n).into_iter().map(|v| offset + scale * v).collect();
    if rng.random_bool(0.3) {
        let at = rng.random_range(0..n);
        let jump = scale * rng.random_range(-5.0..5.0);
        for v in &mut x[at..] {
            *v += jump;
        }
    }
    x
}

pub fn random_panel(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Panel {
    Panel::from_columns((0..d).map(|_| random_series(rng, n)).collect()).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// `D_k(a x + b) = |a| D_k(x)`, `D_k(rev x) = D_{n-k}(x)` and `D_n = 0`.
pub fn cusum_invariants(x: &[f64], a: f64, b: f64) -> Check {
    let n = x.len();
    let p = profile_of(x, 0);
    if p.values[n - 1] != 0.0 {
        return Err(format!("D_n = {} for n = {n}", p.values[n - 1]));
    }
    if p.max_value != cusum_max(x) {
        return Err(format!("profile max {} vs streaming max {}", p.max_value, cusum_max(x)));
    }
    let mag = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let nf = n as f64;
    let tol = 8.0 * nf * nf.sqrt() * f64::EPSILON * (a.abs() * mag + b.abs());

    let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
    let q = profile_of(&y, 0);
    for k in 0..n {
        if !close(q.values[k], a.abs() * p.values[k], tol) {
            return Err(format!(
                "affine: k = {}, {} vs {} (a = {a}, b = {b})",
                k + 1,
                q.values[k],
                a.abs() * p.values[k]
            ));
        }
    }

    let rev: Vec<f64> = x.iter().rev().copied().collect();
    let r = profile_of(&rev, 0);
    let tol = 8.0 * nf * nf.sqrt() * f64::EPSILON * mag;
    for k in 1..n {
        if !close(r.values[k - 1], p.values[n - k - 1], tol) {
            return Err(format!(
                "reversal: k = {k}, {} vs {}",
                r.values[k - 1],
                p.values[n - k - 1]
            ));
        }
    }
    Ok(())
}

/// Ordering of the split estimators and the convex-combination identities.
/// Returns `Ok(false)` when the split was too short to evaluate.
pub fn split_identities(x: &[f64], tau: f64, b_tau: f64, config: &LrvConfig) -> Result<bool, String> {
    let bw = config.bandwidth_for(x.len());
    let s: SplitVariance = match split_lrv(x, tau, b_tau, bw, config, 0) {
        Ok(s) => s,
        Err(hdcusum::Error::SplitTooShort { .. }) => return Ok(false),
        Err(e) => return Err(e.to_string()),
    };
    let rel = 1e-12;
    let le = |a: f64, b: f64| a <= b * (1.0 + rel);
    for (name, v) in [("star", s.star), ("mean", s.mean), ("minus", s.minus), ("plus", s.plus), ("diamond", s.diamond)] {
        if !(le(s.min, v) && le(v, s.max)) {
            return Err(format!("{name} = {v} outside [{}, {}]", s.min, s.max));
        }
    }
    let (vm, vp) = (s.minus * s.minus, s.plus * s.plus);
    let star2 = tau * vm + (1.0 - tau) * vp;
    if !close(s.star * s.star, star2, rel * star2) {
        return Err(format!("star^2 = {} vs {star2}", s.star * s.star));
    }
    let mean2 = 0.5 * (vm + vp);
    if !close(s.mean * s.mean, mean2, rel * mean2) {
        return Err(format!("mean^2 = {} vs {mean2}", s.mean * s.mean));
    }
    let want = if s.n_minus >= s.n_plus { s.minus } else { s.plus };
    if s.diamond != want {
        return Err(format!("diamond {} does not pick the longer side", s.diamond));
    }
    Ok(true)
}

/// `T(c xi) = T(xi)` to `1e-10` relative and `T(-xi) = T(xi)` exactly, for
/// Algorithms II and III (and I with the identity selection).
pub fn multiplier_invariances(panel: &Panel, blocks: usize, xi: &[f64], c: f64) -> Check {
    let layout = partition_blocks(panel.n(), blocks).map_err(|e| e.to_string())?;
    let taus: Vec<f64> = panel
        .columns()
        .map(|x| hdcusum::cusum::change_time(x, 0.0).map(|e| e.tau_hat))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    // filtering can leave nothing when a single change sits in the middle block
    let filtered = match build_filtered_blocks(panel, &taus, &layout) {
        Ok(f) => Some(f),
        Err(hdcusum::Error::DegenerateFiltering { .. }) => None,
        Err(e) => return Err(e.to_string()),
    };
    let centered = build_centered_blocks(panel, &layout).map_err(|e| e.to_string())?;
    let scaled: Vec<f64> = xi.iter().map(|v| c * v).collect();
    let flipped: Vec<f64> = xi.iter().map(|v| -v).collect();
    type Stat<'a> = Box<dyn Fn(&[f64]) -> hdcusum::Result<f64> + 'a>;
    let mut stats: Vec<(&str, Stat)> = vec![("III", Box::new(|w| boot_stat_iii(&centered, w, 0.0, false)))];
    if let Some(f) = &filtered {
        stats.push(("I", Box::new(move |w| boot_stat_i(f, w, None, 0.0, false))));
        stats.push(("II", Box::new(|w| boot_stat_ii(f, &centered, w, 0.0, false))));
    }
    for (name, stat) in &stats {
        let base = match stat(xi) {
            Ok(v) => v,
            // all-zero conditional variance: nothing to compare
            Err(hdcusum::Error::DegenerateConditionalVariance) => continue,
            Err(e) => return Err(e.to_string()),
        };
        let s = stat(&scaled).map_err(|e| e.to_string())?;
        if !close(s, base, 1e-10 * base.abs()) {
            return Err(format!("{name}: scale {c} changed {base} to {s}"));
        }
        let f = stat(&flipped).map_err(|e| e.to_string())?;
        if f != base {
            return Err(format!("{name}: sign flip changed {base} to {f}"));
        }
    }
    Ok(())
}

/// Prefix-sum CUSUM profile against recomputing every partial sum from scratch.
pub fn brute_cusum(x: &[f64]) -> Check {
    let n = x.len();
    let nf = n as f64;
    let direct_sum = |k: usize| {
        let mut s = 0.0;
        for v in &x[..k] {
            s += *v;
        }
        s
    };
    let total = direct_sum(n);
    let mut centered = Vec::new();
    centered_partial_sums(x, &mut centered);
    let p = profile_of(x, 0);
    let mut best = 0.0f64;
    for k in 1..=n {
        let c = direct_sum(k) - (k as f64 / nf) * total;
        if centered[k - 1] != c {
            return Err(format!("S_k - k/n S_n at k = {k}: {} vs {c}", centered[k - 1]));
        }
        let v = c.abs() * nf.sqrt().recip();
        if p.values[k - 1] != v {
            return Err(format!("D_k at k = {k}: {} vs {v}", p.values[k - 1]));
        }
        best = best.max(v);
    }
    if p.max_value != best || cusum_max(x) != best {
        return Err(format!("max {} / {} vs {best}", p.max_value, cusum_max(x)));
    }
    Ok(())
}

/// Sample autocovariances against a direct double loop.
pub fn brute_autocov(x: &[f64]) -> Check {
    let m = x.len();
    let mut total = 0.0;
    for v in x {
        total += *v;
    }
    let mean = total / m as f64;
    for lag in 0..m {
        let mut s = 0.0;
        for k in lag..m {
            s += (x[k] - mean) * (x[k - lag] - mean);
        }
        let want = s / (m - lag) as f64;
        let got = autocovariance(x, lag).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("lag {lag} of {x:?}: {got} vs {want}"));
        }
    }
    if autocovariance(x, m).is_ok() {
        return Err(format!("lag {m} accepted for length {m}"));
    }
    Ok(())
}

/// Centered block values, partial sums and totals against direct loops.
pub fn brute_blocks(panel: &Panel, layout: &BlockLayout) -> Check {
    let centered = build_centered_blocks(panel, layout).map_err(|e| e.to_string())?;
    let k = layout.block_len;
    for h in 0..panel.d() {
        let x = panel.series(h);
        let mut total = 0.0;
        for v in x {
            total += *v;
        }
        let mean = total / x.len() as f64;
        let vals = centered.values(h);
        for j in 0..layout.used_n {
            if vals[j] != x[j] - mean {
                return Err(format!("centered value {j}: {} vs {}", vals[j], x[j] - mean));
            }
        }
        for l in 0..layout.blocks {
            for t in 0..=layout.used_n {
                let mut s = 0.0;
                for (j, v) in vals[..t].iter().enumerate() {
                    if j / k == l {
                        s += *v;
                    }
                }
                let got = centered.partial(h, l, t);
                if got != s {
                    return Err(format!("V_{l}({t}) of coordinate {h}: {got} vs {s}"));
                }
                if t == layout.used_n && centered.totals(h)[l] != s {
                    return Err(format!("total of block {l}: {} vs {s}", centered.totals(h)[l]));
                }
            }
        }
    }
    Ok(())
}

/// Multiplier statistic from its defining double sum over blocks, for
/// already transformed coordinate values and any block selection.
pub fn direct_stat(values: &[&[f64]], layout: &BlockLayout, xi: &[f64], selection: &[usize], trim: f64) -> Option<f64> {
    let nn = layout.used_n;
    let nf = nn as f64;
    let k_len = layout.block_len;
    let cut = (nf * trim).floor() as usize;
    let mut best = f64::NEG_INFINITY;
    for x in values {
        let v = |b: usize, t: usize| -> f64 { (b * k_len..((b + 1) * k_len).min(t)).map(|j| x[j]).sum() };
        let var: f64 = (0..layout.blocks)
            .map(|l| xi[l] * xi[l] * v(selection[l], nn).powi(2))
            .sum::<f64>()
            / nf;
        if var == 0.0 {
            continue;
        }
        for t in cut..=nn - cut {
            let num: f64 = (0..layout.blocks)
                .map(|l| xi[l] * (v(selection[l], t) - t as f64 / nf * v(selection[l], nn)))
                .sum();
            best = best.max(num.abs() / (var.sqrt() * nf.sqrt()));
        }
    }
    (best > f64::NEG_INFINITY).then_some(best)
}
