// SPDX-License-Identifier: MIT OR Apache-2.0

//! Block multiplier bootstrap for the maximum CUSUM statistic.
//!
//! The sample is cut into `L` blocks of length `K`. Each bootstrap replicate
//! multiplies block partial sums by i.i.d. Gaussian weights and recomputes a
//! self-normalized CUSUM maximum over all coordinates. Three variants exist:
//!
//! * Algorithm I filters the blocks around each coordinate's estimated change
//!   time, demeans the two sides separately and normalizes by the conditional
//!   variance of the filtered blocks. Blocks may additionally be resampled
//!   (with or without replacement).
//! * Algorithm II keeps the filtered numerator but normalizes by the
//!   conditional variance of the naively centered blocks. That variance blows
//!   up for coordinates with a change, so they drop out of the maximum.
//! * Algorithm III uses the naively centered blocks everywhere and needs no
//!   change-time estimate at all.
//!
//! Within the bootstrap, "n" means the number of time points covered by
//! blocks (`K * L`); a trailing remainder is ignored.
//!
//! The conditional variance of coordinate `h` uses the squared block sums of
//! that same coordinate, `(KL)^{-1} sum_l xi_l^2 V_{pi(l),h}(n)^2`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cusum::change_time;
use crate::error::{Error, Result};
use crate::exec::{map_range, try_map_range, Execution};
use crate::panel::{BlockLayout, Panel};
use crate::quantiles::{check_level, sorted_quantile, Threshold, ThresholdMethod, MIN_REPLICATES};
use crate::rng::{self, Domain};

/// Resampling attempts for a replicate whose conditional variance vanished.
pub const MAX_RESAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    I,
    II,
    III,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::I => "I",
            Algorithm::II => "II",
            Algorithm::III => "III",
        }
    }

    fn needs_change_times(self) -> bool {
        self != Algorithm::III
    }
}

/// How blocks are selected in Algorithm I.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// `pi(l) = l`.
    #[default]
    Multiplier,
    /// `pi(l)` i.i.d. uniform over the blocks.
    WithReplacement,
    /// `pi` a uniform random permutation.
    WithoutReplacement,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Multiplier => "M",
            Mode::WithReplacement => "SR",
            Mode::WithoutReplacement => "SNR",
        }
    }
}

/// `(L-, L+)`: the last block ending clear of the change and the first block
/// starting clear of it.
///
/// `L- = sup{l >= 1 : lK + K/2 <= tau n}` (0 if empty) and
/// `L+ = inf{l >= 1 : lK - K/2 >= tau n}`, clamped to `L`. `tau n` is taken
/// to the nearest half-integer so the comparisons are exact.
pub fn block_bounds(tau_hat: f64, n: usize, layout: &BlockLayout) -> (usize, usize) {
    let k = layout.block_len as i64;
    let blocks = layout.blocks as i64;
    let twice = (2.0 * tau_hat * n as f64).round() as i64;
    let lower = (twice - k).div_euclid(2 * k).clamp(0, blocks);
    let upper = (twice + k + 2 * k - 1).div_euclid(2 * k).clamp(1, blocks);
    (lower as usize, upper.max(lower) as usize)
}

/// Coordinate-major block data: values per covered time point, cumulative
/// sums restarted at each block boundary, and block totals.
#[derive(Debug, Clone)]
struct BlockData {
    layout: BlockLayout,
    d: usize,
    values: Vec<f64>,
    within: Vec<f64>,
    totals: Vec<f64>,
}

impl BlockData {
    fn build(layout: BlockLayout, columns: Vec<Vec<f64>>) -> Self {
        let d = columns.len();
        let n = layout.used_n;
        let mut values = Vec::with_capacity(n * d);
        let mut within = Vec::with_capacity(n * d);
        let mut totals = Vec::with_capacity(layout.blocks * d);
        for col in columns {
            debug_assert_eq!(col.len(), n);
            for l in 0..layout.blocks {
                let mut acc = 0.0;
                for &x in &col[layout.range(l)] {
                    acc += x;
                    within.push(acc);
                }
                totals.push(acc);
            }
            values.extend(col);
        }
        Self {
            layout,
            d,
            values,
            within,
            totals,
        }
    }

    #[inline]
    fn values(&self, h: usize) -> &[f64] {
        let n = self.layout.used_n;
        &self.values[h * n..(h + 1) * n]
    }

    #[inline]
    fn totals(&self, h: usize) -> &[f64] {
        let l = self.layout.blocks;
        &self.totals[h * l..(h + 1) * l]
    }

    /// `V_{l,h}(k) = sum_{j in block l, j <= k} x_{j,h}` with `l` 0-based, `k` 1-based.
    fn partial(&self, h: usize, l: usize, k: usize) -> f64 {
        let r = self.layout.range(l);
        if k <= r.start {
            0.0
        } else {
            let last = k.min(r.end) - 1;
            self.within[h * self.layout.used_n + last]
        }
    }

    fn degenerate(&self, h: usize) -> bool {
        self.totals(h).iter().all(|&v| v == 0.0)
    }
}

/// Blocks with the segments around each estimated change zeroed out and each
/// side demeaned by its own mean.
#[derive(Debug, Clone)]
pub struct FilteredBlocks {
    data: BlockData,
    /// `(L-, L+)` per coordinate.
    pub bounds: Vec<(usize, usize)>,
    pub tau_hats: Vec<f64>,
}

impl FilteredBlocks {
    pub fn layout(&self) -> &BlockLayout {
        &self.data.layout
    }

    pub fn d(&self) -> usize {
        self.data.d
    }

    /// Filtered values `X^_{j,h}` for the covered time points.
    pub fn values(&self, h: usize) -> &[f64] {
        self.data.values(h)
    }

    /// Block totals `V^_{l,h}(n)`.
    pub fn totals(&self, h: usize) -> &[f64] {
        self.data.totals(h)
    }

    /// `V^_{l,h}(k)`; `l` is 0-based, `k` 1-based.
    pub fn partial(&self, h: usize, l: usize, k: usize) -> f64 {
        self.data.partial(h, l, k)
    }
}

pub fn build_filtered_blocks(panel: &Panel, tau_hats: &[f64], layout: &BlockLayout) -> Result<FilteredBlocks> {
    if tau_hats.len() != panel.d() {
        return Err(Error::Dimension(format!(
            "{} change times for {} coordinates",
            tau_hats.len(),
            panel.d()
        )));
    }
    check_layout(panel.n(), layout)?;
    let k = layout.block_len;
    let used = layout.used_n;
    let mut bounds = Vec::with_capacity(panel.d());
    let mut columns = Vec::with_capacity(panel.d());
    for (h, &tau) in tau_hats.iter().enumerate() {
        let (lo, hi) = block_bounds(tau, panel.n(), layout);
        let x = &panel.series(h)[..used];
        let head = &x[..k * lo];
        let tail = &x[k * hi..];
        if head.is_empty() && tail.is_empty() {
            return Err(Error::DegenerateFiltering { coordinate: h + 1 });
        }
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
        let (m_head, m_tail) = (mean(head), mean(tail));
        let mut col = vec![0.0; used];
        for (c, &v) in col[..k * lo].iter_mut().zip(head) {
            *c = v - m_head;
        }
        for (c, &v) in col[k * hi..].iter_mut().zip(tail) {
            *c = v - m_tail;
        }
        bounds.push((lo, hi));
        columns.push(col);
    }
    Ok(FilteredBlocks {
        data: BlockData::build(*layout, columns),
        bounds,
        tau_hats: tau_hats.to_vec(),
    })
}

/// Blocks of the series centered by the full-sample mean.
#[derive(Debug, Clone)]
pub struct CenteredBlocks {
    data: BlockData,
}

impl CenteredBlocks {
    pub fn layout(&self) -> &BlockLayout {
        &self.data.layout
    }

    pub fn d(&self) -> usize {
        self.data.d
    }

    pub fn values(&self, h: usize) -> &[f64] {
        self.data.values(h)
    }

    pub fn totals(&self, h: usize) -> &[f64] {
        self.data.totals(h)
    }

    pub fn partial(&self, h: usize, l: usize, k: usize) -> f64 {
        self.data.partial(h, l, k)
    }
}

pub fn build_centered_blocks(panel: &Panel, layout: &BlockLayout) -> Result<CenteredBlocks> {
    check_layout(panel.n(), layout)?;
    let columns = panel
        .columns()
        .map(|x| {
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            x[..layout.used_n].iter().map(|v| v - mean).collect()
        })
        .collect();
    Ok(CenteredBlocks {
        data: BlockData::build(*layout, columns),
    })
}

fn check_layout(n: usize, layout: &BlockLayout) -> Result<()> {
    if layout.blocks < 2 {
        return Err(Error::InvalidLayout(format!(
            "the bootstrap needs at least 2 blocks, got {}",
            layout.blocks
        )));
    }
    if layout.block_len == 0 || layout.used_n != layout.block_len * layout.blocks || layout.used_n > n {
        return Err(Error::InvalidLayout(format!("{layout:?} does not fit n = {n}")));
    }
    Ok(())
}

/// Per-block weights after folding the block selection into the multipliers:
/// `w_b = sum_{l: pi(l) = b} xi_l` and `q_b = sum_{l: pi(l) = b} xi_l^2`
/// (or the selection count when multiplier variances are fixed at one).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub linear: Vec<f64>,
    pub squared: Vec<f64>,
}

impl BlockWeights {
    pub fn new(xi: &[f64], selection: Option<&[usize]>, unit_variance: bool) -> Self {
        let l = xi.len();
        let mut linear = vec![0.0; l];
        let mut squared = vec![0.0; l];
        for (i, &x) in xi.iter().enumerate() {
            let b = selection.map_or(i, |p| p[i]);
            linear[b] += x;
            squared[b] += if unit_variance { 1.0 } else { x * x };
        }
        Self { linear, squared }
    }
}

/// Trimmed time range `floor(n t) <= k <= n - floor(n t)` (inclusive, k = 0 allowed).
fn boot_range(n: usize, trim: f64) -> Result<(usize, usize)> {
    if !(0.0..=0.5).contains(&trim) {
        return Err(Error::InvalidTrim { n, trim });
    }
    let cut = (n as f64 * trim).floor() as usize;
    Ok((cut, n - cut))
}

/// Self-normalized multiplier CUSUM of one coordinate, or `None` when the
/// conditional variance is zero.
fn coordinate_stat(
    numerator: &BlockData,
    denominator: &BlockData,
    h: usize,
    weights: &BlockWeights,
    (lo, hi): (usize, usize),
) -> Option<f64> {
    let layout = &numerator.layout;
    let n = layout.used_n;
    let nf = n as f64;
    let var: f64 = denominator
        .totals(h)
        .iter()
        .zip(&weights.squared)
        .map(|(v, q)| q * v * v)
        .sum::<f64>()
        / nf;
    if !(var > 0.0) {
        return None;
    }
    let total: f64 = numerator
        .totals(h)
        .iter()
        .zip(&weights.linear)
        .map(|(v, w)| w * v)
        .sum();
    let xs = numerator.values(h);
    let mut acc = 0.0;
    let mut best = 0.0f64;
    let k_len = layout.block_len;
    for (b, chunk) in xs.chunks_exact(k_len).enumerate() {
        let w = weights.linear[b];
        for (r, &x) in chunk.iter().enumerate() {
            acc += w * x;
            let k = b * k_len + r + 1;
            if k >= lo && k <= hi {
                let c = (acc - (k as f64 / nf) * total).abs();
                if c > best {
                    best = c;
                }
            }
        }
    }
    Some(best / (var.sqrt() * nf.sqrt()))
}

fn panel_stat(
    numerator: &BlockData,
    denominator: &BlockData,
    skip: &[bool],
    weights: &BlockWeights,
    trim: f64,
) -> Result<f64> {
    let range = boot_range(numerator.layout.used_n, trim)?;
    let mut best = f64::NEG_INFINITY;
    for (h, _) in skip.iter().enumerate().filter(|(_, s)| !**s) {
        match coordinate_stat(numerator, denominator, h, weights, range) {
            Some(v) => best = best.max(v),
            None => return Err(Error::DegenerateConditionalVariance),
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(Error::DegenerateConditionalVariance);
    }
    Ok(best)
}

fn degenerate_mask(data: &BlockData) -> Vec<bool> {
    (0..data.d).map(|h| data.degenerate(h)).collect()
}

fn check_multipliers(xi: &[f64], layout: &BlockLayout) -> Result<()> {
    if xi.len() != layout.blocks {
        return Err(Error::Dimension(format!(
            "{} multipliers for {} blocks",
            xi.len(),
            layout.blocks
        )));
    }
    Ok(())
}

/// Algorithm I statistic for given multipliers and block selection.
///
/// `selection[l]` is the 0-based block drawn at position `l`; `None` is the
/// identity. Coordinates whose filtered block totals are all zero are left
/// out of the maximum.
pub fn boot_stat_i(
    blocks: &FilteredBlocks,
    xi: &[f64],
    selection: Option<&[usize]>,
    trim: f64,
    unit_variance: bool,
) -> Result<f64> {
    check_multipliers(xi, blocks.layout())?;
    let weights = BlockWeights::new(xi, selection, unit_variance);
    let skip = degenerate_mask(&blocks.data);
    panel_stat(&blocks.data, &blocks.data, &skip, &weights, trim)
}

/// Algorithm II statistic: filtered numerator, naive conditional variance.
pub fn boot_stat_ii(
    filtered: &FilteredBlocks,
    centered: &CenteredBlocks,
    xi: &[f64],
    trim: f64,
    unit_variance: bool,
) -> Result<f64> {
    check_multipliers(xi, filtered.layout())?;
    if filtered.layout() != centered.layout() || filtered.d() != centered.d() {
        return Err(Error::Dimension("filtered and centered blocks disagree".into()));
    }
    let weights = BlockWeights::new(xi, None, unit_variance);
    let skip = degenerate_mask(&centered.data);
    panel_stat(&filtered.data, &centered.data, &skip, &weights, trim)
}

/// Algorithm III statistic: naive centering throughout.
pub fn boot_stat_iii(centered: &CenteredBlocks, xi: &[f64], trim: f64, unit_variance: bool) -> Result<f64> {
    check_multipliers(xi, centered.layout())?;
    let weights = BlockWeights::new(xi, None, unit_variance);
    let skip = degenerate_mask(&centered.data);
    panel_stat(&centered.data, &centered.data, &skip, &weights, trim)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub mode: Mode,
    /// Number of blocks `L`; the block length is `floor(n / L)`.
    pub blocks: usize,
    #[serde(default)]
    pub trim: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Use `xi_l^2 = 1` in the conditional variance.
    #[serde(default)]
    pub unit_multiplier_variance: bool,
    #[serde(default)]
    pub exec: Execution,
}

/// Replicate statistics in replicate order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDraws {
    pub values: Vec<f64>,
    pub algorithm: Algorithm,
    pub mode: Mode,
    pub layout: BlockLayout,
    pub trim: f64,
    pub seed: u64,
    /// Replicates redrawn because a conditional variance vanished.
    pub resampled: usize,
    /// Replicates that stayed degenerate and were recorded as `+inf`.
    pub infinite: usize,
    /// 0-based coordinates left out because their block totals are all zero.
    pub skipped_coordinates: Vec<usize>,
}

impl BootstrapDraws {
    /// Writes `replicate,value` rows (1-based replicate index).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "replicate,value")?;
        for (m, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", m + 1, v)?;
        }
        Ok(())
    }
}

struct Prepared {
    filtered: Option<FilteredBlocks>,
    centered: Option<CenteredBlocks>,
    skip: Vec<bool>,
}

fn prepare(panel: &Panel, config: &BootstrapConfig, layout: &BlockLayout) -> Result<Prepared> {
    let filtered = if config.algorithm.needs_change_times() {
        let taus = try_map_range(config.exec, panel.d(), |h| {
            change_time(panel.series(h), config.trim).map(|e| e.tau_hat)
        })?;
        Some(build_filtered_blocks(panel, &taus, layout)?)
    } else {
        None
    };
    let centered = if config.algorithm == Algorithm::I {
        None
    } else {
        Some(build_centered_blocks(panel, layout)?)
    };
    let skip = match (&filtered, &centered, config.algorithm) {
        (Some(f), _, Algorithm::I) => degenerate_mask(&f.data),
        (_, Some(c), _) => degenerate_mask(&c.data),
        _ => unreachable!("blocks prepared for every algorithm"),
    };
    if skip.iter().all(|&s| s) {
        return Err(Error::DegenerateConditionalVariance);
    }
    Ok(Prepared {
        filtered,
        centered,
        skip,
    })
}

fn draw_selection<R: Rng + ?Sized>(rng: &mut R, mode: Mode, blocks: usize, out: &mut Vec<usize>) {
    out.clear();
    match mode {
        Mode::Multiplier => out.extend(0..blocks),
        Mode::WithReplacement => out.extend((0..blocks).map(|_| rng.random_range(0..blocks))),
        Mode::WithoutReplacement => {
            out.extend(0..blocks);
            out.shuffle(rng);
        }
    }
}

/// Runs `replicates` bootstrap iterations of the chosen algorithm.
///
/// Replicate `m` draws its block selection (Algorithm I) and then its
/// multipliers from stream `m` of the seed, so the draws do not depend on
/// the execution schedule.
pub fn run_bootstrap(panel: &Panel, config: &BootstrapConfig) -> Result<BootstrapDraws> {
    if config.replicates < MIN_REPLICATES {
        return Err(Error::InsufficientReplicates {
            required: MIN_REPLICATES,
            got: config.replicates,
        });
    }
    let layout = crate::panel::partition_blocks(panel.n(), config.blocks)?;
    check_layout(panel.n(), &layout)?;
    boot_range(layout.used_n, config.trim)?;
    let prep = prepare(panel, config, &layout)?;
    let (numerator, denominator) = match config.algorithm {
        Algorithm::I => {
            let f = &prep.filtered.as_ref().expect("filtered").data;
            (f, f)
        }
        Algorithm::II => (
            &prep.filtered.as_ref().expect("filtered").data,
            &prep.centered.as_ref().expect("centered").data,
        ),
        Algorithm::III => {
            let c = &prep.centered.as_ref().expect("centered").data;
            (c, c)
        }
    };
    let l = layout.blocks;
    let one = |m: usize| -> Result<(f64, usize)> {
        let mut rng = rng::stream(config.seed, Domain::Bootstrap, m as u64);
        let mut selection = Vec::with_capacity(l);
        let mut xi = vec![0.0; l];
        for attempt in 0..=MAX_RESAMPLES {
            let mode = if config.algorithm == Algorithm::I {
                config.mode
            } else {
                Mode::Multiplier
            };
            draw_selection(&mut rng, mode, l, &mut selection);
            rng::fill_gaussian(&mut rng, &mut xi);
            let sel = (mode != Mode::Multiplier).then_some(selection.as_slice());
            let weights = BlockWeights::new(&xi, sel, config.unit_multiplier_variance);
            match panel_stat(numerator, denominator, &prep.skip, &weights, config.trim) {
                Ok(v) => return Ok((v, attempt)),
                Err(Error::DegenerateConditionalVariance) => continue,
                Err(e) => return Err(e),
            }
        }
        Ok((f64::INFINITY, MAX_RESAMPLES + 1))
    };
    let results = try_map_range(config.exec, config.replicates, one)?;
    let mut values = Vec::with_capacity(results.len());
    let mut resampled = 0;
    let mut infinite = 0;
    for (v, attempts) in results {
        if v.is_infinite() {
            infinite += 1;
            resampled += MAX_RESAMPLES;
        } else {
            resampled += attempts;
        }
        values.push(v);
    }
    Ok(BootstrapDraws {
        values,
        algorithm: config.algorithm,
        mode: if config.algorithm == Algorithm::I {
            config.mode
        } else {
            Mode::Multiplier
        },
        layout,
        trim: config.trim,
        seed: config.seed,
        resampled,
        infinite,
        skipped_coordinates: prep
            .skip
            .iter()
            .enumerate()
            .filter_map(|(h, &s)| s.then_some(h))
            .collect(),
    })
}

/// `(1 - alpha)` quantile of the bootstrap draws as a critical value.
pub fn bootstrap_quantile(draws: &BootstrapDraws, alpha: f64, n: usize, d: usize) -> Result<Threshold> {
    check_level(alpha)?;
    if draws.values.is_empty() {
        return Err(Error::InsufficientReplicates {
            required: MIN_REPLICATES,
            got: 0,
        });
    }
    let mut sorted = draws.values.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let mut warnings = Vec::new();
    if (m as f64) * alpha < 10.0 {
        warnings.push(format!(
            "under-resolved tail: {m} replicates leave fewer than 10 beyond the {alpha} quantile"
        ));
    }
    if draws.infinite > 0 {
        warnings.push(format!(
            "{} replicates had a vanishing conditional variance",
            draws.infinite
        ));
    }
    if !draws.skipped_coordinates.is_empty() {
        warnings.push(format!(
            "{} coordinates with zero block sums were left out",
            draws.skipped_coordinates.len()
        ));
    }
    Ok(Threshold {
        value: sorted_quantile(&sorted, alpha),
        method: ThresholdMethod::BlockBootstrap,
        alpha,
        level: alpha,
        conservative: false,
        d,
        n,
        replicates: m,
        seed: Some(draws.seed),
        detail: Some(format!(
            "algorithm={} mode={} K={} L={} trim={}",
            draws.algorithm.name(),
            draws.mode.name(),
            draws.layout.block_len,
            draws.layout.blocks,
            draws.trim
        )),
        warnings,
    })
}

/// Several quantiles of the same draws, e.g. for a table row.
pub fn bootstrap_quantiles(draws: &BootstrapDraws, levels: &[f64]) -> Vec<f64> {
    let mut sorted = draws.values.clone();
    sorted.sort_by(f64::total_cmp);
    levels.iter().map(|&a| sorted_quantile(&sorted, a)).collect()
}

/// Replicate statistics for a batch of multiplier vectors, used by tests and
/// benches that want to bypass the random draws.
pub fn stats_for_multipliers(
    filtered: Option<&FilteredBlocks>,
    centered: Option<&CenteredBlocks>,
    algorithm: Algorithm,
    multipliers: &[Vec<f64>],
    trim: f64,
    exec: Execution,
) -> Vec<Result<f64>> {
    map_range(exec, multipliers.len(), |m| {
        let xi = &multipliers[m];
        match algorithm {
            Algorithm::I => boot_stat_i(filtered.expect("filtered blocks"), xi, None, trim, false),
            Algorithm::II => boot_stat_ii(
                filtered.expect("filtered blocks"),
                centered.expect("centered blocks"),
                xi,
                trim,
                false,
            ),
            Algorithm::III => boot_stat_iii(centered.expect("centered blocks"), xi, trim, false),
        }
    })
}
