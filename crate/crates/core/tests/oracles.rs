// SPDX-License-Identifier: MIT OR Apache-2.0

//! Monte Carlo checks against closed-form moments, and determinism.

mod common;

use hdcusum::bootstrap::{run_bootstrap, Algorithm, BootstrapConfig, Mode};
use hdcusum::lrv::{autocovariance, plain_lrv, LrvConfig, Weight};
use hdcusum::quantiles::{asymptotic_threshold, parametric_draws, parametric_quantile, ParametricConfig, ThresholdMethod};
use hdcusum::report::{build_report, ReportOptions};
use hdcusum::simgen::{
    evaluate_detection, gen_arma_panel, gen_factor_panel, gen_garch_panel, gen_linear_matrix_panel, gen_ma_panel,
    inject_changes, ArmaParams, ChangePlan, GarchParams, LinearMatrixParams, MaParams,
};
use hdcusum::{Execution, Panel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    autocovariance(x, 0).unwrap()
}

fn acf(x: &[f64], lag: usize) -> f64 {
    autocovariance(x, lag).unwrap() / autocovariance(x, 0).unwrap()
}

/// Standard error of the mean of a dependent series from 100 batch means.
fn batch_se(x: &[f64]) -> f64 {
    let means: Vec<f64> = x.chunks_exact(x.len() / 100).map(mean).collect();
    (sample_var(&means) / means.len() as f64).sqrt()
}

#[test]
fn ar1_long_run_variance() {
    let phi: f64 = 0.5;
    let (n, reps) = (5000, 200);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut plain = Vec::new();
    let mut bartlett = Vec::new();
    for _ in 0..reps {
        let e = common::normals(&mut rng, n + 200);
        let mut x = Vec::with_capacity(n);
        let mut prev = 0.0;
        for (k, v) in e.iter().enumerate() {
            prev = phi * prev + v;
            if k >= 200 {
                x.push(prev);
            }
        }
        plain.push(plain_lrv(&x, &LrvConfig::default()).unwrap().variance);
        let cfg = LrvConfig {
            weight: Weight::Bartlett,
            ..LrvConfig::default()
        };
        bartlett.push(plain_lrv(&x, &cfg).unwrap().variance);
    }
    let truth = 1.0 / (1.0 - phi).powi(2);
    let p = mean(&plain);
    assert!((p - truth).abs() < 0.05 * truth, "plain {p} vs {truth}");

    // Bartlett target: gamma_0 + 2 sum (1 - k/b) gamma_k with gamma_k = phi^k / (1 - phi^2)
    let b = hdcusum::lrv::default_bandwidth(n);
    let g = |k: usize| phi.powi(k as i32) / (1.0 - phi * phi);
    let target = g(0) + 2.0 * (1..=b).map(|k| (1.0 - k as f64 / b as f64) * g(k)).sum::<f64>();
    let q = mean(&bartlett);
    assert!((q - target).abs() < 0.05 * target, "bartlett {q} vs {target}");
}

#[test]
fn spatial_moving_average_moments() {
    let params = MaParams::default();
    let (n, d) = (100_000, 4);
    let p = gen_ma_panel(n, d, 5, &params).unwrap();
    // a_0 = a_1 = 0.1, a_i = 0.1 i^-3
    let a: Vec<f64> = (0..100).map(|i| 0.1 * (i.max(1) as f64).powi(-3)).collect();
    let var: f64 = a.iter().map(|v| v * v * 0.01).sum();
    assert!((params.variance() - var).abs() < 1e-18);
    let se = var * (2.0 / n as f64).sqrt();
    for h in 0..d {
        let v = sample_var(p.series(h));
        assert!((v - var).abs() < 4.0 * se, "coordinate {h}: {v} vs {var}");
        assert!(acf(p.series(h), 1).abs() < 4.0 / (n as f64).sqrt());
    }
    // neighbours share all but one innovation
    let cross: f64 = a.windows(2).map(|w| w[0] * w[1] * 0.01).sum::<f64>() / var;
    let (x, y) = (p.series(1), p.series(2));
    let (mx, my) = (mean(x), mean(y));
    let c = x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum::<f64>() / n as f64;
    let r = c / (sample_var(x) * sample_var(y)).sqrt();
    assert!((r - cross).abs() < 0.02, "cross correlation {r} vs {cross}");
}

#[test]
fn arma_autocorrelation() {
    let params = ArmaParams::default();
    let p = gen_arma_panel(4000, 40, 8, &params).unwrap();
    // psi weights of (1 - 0.2B + 0.3B^2) X = (-0.1 + 0.2B) Y
    let mut psi = vec![params.ma[0], params.ma[1] + params.ar[0] * params.ma[0]];
    for j in 2..200 {
        psi.push(params.ar[0] * psi[j - 1] + params.ar[1] * psi[j - 2]);
    }
    let gamma = |k: usize| psi.iter().zip(&psi[k..]).map(|(a, b)| a * b).sum::<f64>();
    for lag in 1..=3 {
        let want = gamma(lag) / gamma(0);
        let got = mean(&p.columns().map(|x| acf(x, lag)).collect::<Vec<_>>());
        assert!((got - want).abs() < 0.02, "lag {lag}: {got} vs {want}");
    }
    let sd = (gamma(0) * params.driver.variance()).sqrt();
    let got = mean(&p.columns().map(|x| sample_var(x).sqrt()).collect::<Vec<_>>());
    assert!((got - sd).abs() < 0.05 * sd, "sd {got} vs {sd}");
}

#[test]
fn garch_unconditional_variance() {
    let params = GarchParams {
        eta: 0.1,
        alpha: vec![0.2],
        beta: vec![0.3],
        burn_in: 500,
    };
    assert_eq!(params.unconditional_variance(), 0.2);
    let p = gen_garch_panel(&params, 200_000, 2, 17).unwrap();
    for x in p.columns() {
        let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
        let (m, se) = (mean(&sq), batch_se(&sq));
        assert!(se < 0.01);
        assert!((m - 0.2).abs() < 4.0 * se, "E X^2 = {m} +- {se}");
        assert!(acf(x, 1).abs() < 0.02);
        // squares are autocorrelated
        assert!(acf(&sq, 1) > 0.1);
    }
}

#[test]
fn linear_matrix_autocorrelation() {
    let w: Vec<f64> = (0..=20).map(|l| 0.5f64.powi(l)).collect();
    let p = gen_linear_matrix_panel(&LinearMatrixParams::diagonal(&w), 100_000, 3, 2).unwrap();
    let want = w.windows(2).map(|v| v[0] * v[1]).sum::<f64>() / w.iter().map(|v| v * v).sum::<f64>();
    for x in p.columns() {
        let got = acf(x, 1);
        assert!((got - want).abs() < 0.02, "{got} vs {want}");
    }

    let banded = LinearMatrixParams::polynomial(1.0, 2.0, 2.0, 3, 1);
    let p = gen_linear_matrix_panel(&banded, 100_000, 6, 4).unwrap();
    let corr = |a: &[f64], b: &[f64]| {
        let (ma, mb) = (mean(a), mean(b));
        let c = a.iter().zip(b).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / a.len() as f64;
        c / (sample_var(a) * sample_var(b)).sqrt()
    };
    // band 1: coordinates 0 and 4 share no innovation
    assert!(corr(p.series(0), p.series(4)).abs() < 5.0 / (1e5f64).sqrt());
    assert!(corr(p.series(0), p.series(1)) > 0.1);
}

fn leading_eigenvalue(p: &Panel) -> f64 {
    let (n, d) = (p.n(), p.d());
    let z: Vec<Vec<f64>> = p
        .columns()
        .map(|x| {
            let (m, s) = (mean(x), sample_var(x).sqrt());
            x.iter().map(|v| (v - m) / s).collect()
        })
        .collect();
    let corr = nalgebra::DMatrix::from_fn(d, d, |i, j| {
        z[i].iter().zip(&z[j]).map(|(a, b)| a * b).sum::<f64>() / n as f64
    });
    let eig = nalgebra::SymmetricEigen::new(corr);
    eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn factor_dominates_spectrum() {
    let params = ArmaParams::default();
    let plain = leading_eigenvalue(&gen_factor_panel(0.0, 250, 100, 3, &params).unwrap());
    let factor = leading_eigenvalue(&gen_factor_panel(0.3, 250, 100, 3, &params).unwrap());
    assert!(factor >= 5.0 * plain, "{factor} vs {plain}");
}

#[test]
fn methods_a_and_b_agree() {
    let base = ParametricConfig {
        n: 100,
        d: 20,
        replicates: 40_000,
        method: ThresholdMethod::ParametricA,
        seed: 3,
        exec: Execution::Parallel,
    };
    let a = parametric_quantile(&base, 0.05, false).unwrap().value;
    let b = parametric_quantile(
        &ParametricConfig {
            method: ThresholdMethod::ParametricB,
            ..base
        },
        0.05,
        false,
    )
    .unwrap()
    .value;
    assert!((a - b).abs() < 0.03, "A {a} vs B {b}");
}

#[test]
fn gumbel_is_conservative_for_moderate_d() {
    for d in [100, 250, 500] {
        let g = asymptotic_threshold(100, d, 0.05, false).unwrap().value;
        let cfg = ParametricConfig {
            n: 100,
            d,
            replicates: 20_000,
            method: ThresholdMethod::ParametricB,
            seed: 1,
            exec: Execution::Parallel,
        };
        assert!(g >= parametric_quantile(&cfg, 0.05, false).unwrap().value);
    }
}

#[test]
fn pure_noise_and_planted_break() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (n, d) = (200, 50);
    let noise = Panel::from_columns((0..d).map(|_| common::normals(&mut rng, n)).collect()).unwrap();
    let t = asymptotic_threshold(n, d, 0.05, false).unwrap();
    let r = build_report(&noise, &t, &ReportOptions::default()).unwrap();
    assert!(r.unstable_count() <= 2, "{} flagged", r.unstable_count());

    let plan = ChangePlan {
        changes: vec![hdcusum::simgen::Change {
            coordinate: 7,
            tau: 0.3,
            delta: 10.0,
        }],
    };
    let (p, truth) = inject_changes(&noise, &plan).unwrap();
    let r = build_report(&p, &t, &ReportOptions::default()).unwrap();
    assert!(r.unstable().contains(&8));
    assert!((r.coordinates[7].tau_hat.unwrap() - 0.3).abs() <= 0.05);
    let m = evaluate_detection(&r, &truth).unwrap();
    assert_eq!(m.r[1], Some(100.0));
}

#[test]
fn noiseless_oracle_detector_is_perfect() {
    let (n, d) = (100, 25);
    let zero = Panel::from_columns(vec![vec![0.0; n]; d]).unwrap();
    let plan = ChangePlan::quintile_grid(d, 1.0, 2).unwrap();
    let (p, truth) = inject_changes(&zero, &plan).unwrap();
    let t = asymptotic_threshold(n, d, 0.05, false).unwrap();
    let mut r = build_report(&p, &t, &ReportOptions::default()).unwrap();
    // flag exactly the coordinates whose mean moves, at the first jump
    for c in &mut r.coordinates {
        let x = p.series(c.coordinate - 1);
        let jump = x.windows(2).position(|w| w[0] != w[1]);
        c.verdict = if jump.is_some() {
            hdcusum::report::Verdict::Unstable
        } else {
            hdcusum::report::Verdict::Stable
        };
        c.k_star = jump.map(|k| k + 1);
        c.tau_hat = jump.map(|k| (k + 1) as f64 / n as f64);
    }
    let m = evaluate_detection(&r, &truth).unwrap();
    assert_eq!(m.r, [Some(100.0); 5]);
    assert_eq!(m.ti_star, 0.0);
}

#[test]
fn schedules_agree_bit_for_bit() {
    let cfg = ParametricConfig {
        n: 50,
        d: 10,
        replicates: 3000,
        method: ThresholdMethod::ParametricA,
        seed: 11,
        exec: Execution::Sequential,
    };
    let seq = parametric_draws(&cfg).unwrap();
    let par = parametric_draws(&ParametricConfig {
        exec: Execution::Parallel,
        ..cfg
    })
    .unwrap();
    assert_eq!(seq, par);

    let panel = gen_factor_panel(0.1, 100, 20, 6, &ArmaParams::default()).unwrap();
    for algorithm in [Algorithm::I, Algorithm::II, Algorithm::III] {
        for mode in [Mode::Multiplier, Mode::WithReplacement, Mode::WithoutReplacement] {
            let cfg = BootstrapConfig {
                algorithm,
                mode,
                blocks: 20,
                trim: 0.0,
                replicates: 300,
                seed: 4,
                unit_multiplier_variance: false,
                exec: Execution::Sequential,
            };
            let seq = run_bootstrap(&panel, &cfg).unwrap();
            let par = run_bootstrap(
                &panel,
                &BootstrapConfig {
                    exec: Execution::Parallel,
                    ..cfg
                },
            )
            .unwrap();
            assert_eq!(seq.values, par.values, "{algorithm:?} {mode:?}");
        }
    }

    let t = asymptotic_threshold(100, 20, 0.05, false).unwrap();
    let opts = ReportOptions {
        exec: Execution::Sequential,
        ..ReportOptions::default()
    };
    let seq = build_report(&panel, &t, &opts).unwrap();
    let par = build_report(
        &panel,
        &t,
        &ReportOptions {
            exec: Execution::Parallel,
            ..opts
        },
    )
    .unwrap();
    assert_eq!(seq, par);
}

#[test]
fn resampling_modes_share_the_null_law() {
    // under the null, reordering blocks leaves the law nearly unchanged
    let panel = gen_arma_panel(200, 30, 21, &ArmaParams::default()).unwrap();
    let q = |mode| {
        let cfg = BootstrapConfig {
            algorithm: Algorithm::I,
            mode,
            blocks: 40,
            trim: 0.0,
            replicates: 4000,
            seed: 2,
            unit_multiplier_variance: false,
            exec: Execution::Parallel,
        };
        let draws = run_bootstrap(&panel, &cfg).unwrap();
        hdcusum::bootstrap::bootstrap_quantiles(&draws, &[0.1])[0]
    };
    let (m, snr) = (q(Mode::Multiplier), q(Mode::WithoutReplacement));
    assert!((m - snr).abs() < 0.1, "M {m} vs SNR {snr}");
}
