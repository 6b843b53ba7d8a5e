//! Acceptance checks for the whole pipeline, printed as one numbered
//! PASS/FAIL/SKIP line per criterion.
//!
//! Runs without the standard test harness so the report stays ordered and
//! visible; the process exits nonzero when any criterion fails. Numeric
//! criteria are checked against independent oracles built here from scratch
//! (finite differences, a one-sided Jacobi SVD, the masked influence
//! recursion), not against the library's own internals.

use std::collections::HashMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{arr1, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

use cinepred::flow::{flow_grid_errors, lucas_kanade_dense, FlowParams};
use cinepred::forecast::rnn::{RnnCore, RnnDims};
use cinepred::forecast::rtrl::RtrlTrainer;
use cinepred::forecast::snap1::Snap1Trainer;
use cinepred::forecast::uoro::UoroTrainer;
use cinepred::forecast::{NormalizationStats, Normalizer};
use cinepred::metrics::{cross_correlation, dvf_endpoint_errors, ssim, weight_nrmse};
use cinepred::pca::{build_data_matrix, fit_motion_model};
use cinepred::pipeline::{DataSource, ExperimentConfig};
use cinepred::synth::{generate_synthetic_sequence, ModeShape, ModeSpec, SyntheticSpec};
use cinepred::{DisplacementField, Image};

enum Verdict {
    Pass(String),
    Skip(String),
}

type CriterionResult = Result<Verdict, String>;

fn main() {
    let mut failures = 0u32;
    run_criterion(
        1,
        "rtrl gradient matches central finite differences",
        &mut failures,
        exact_gradient_against_finite_differences,
    );
    run_criterion(
        2,
        "uoro single-step estimates are unbiased",
        &mut failures,
        uoro_estimates_average_to_the_exact_gradient,
    );
    run_criterion(
        3,
        "snap1 influence equals the diagonal-masked recursion",
        &mut failures,
        snap1_matches_masked_influence_recursion,
    );
    run_criterion(
        4,
        "pca reproduces the truncated svd",
        &mut failures,
        pca_matches_jacobi_svd_oracle,
    );
    run_criterion(
        5,
        "pyramidal flow recovers large shifts",
        &mut failures,
        flow_recovers_six_pixel_shifts,
    );
    let desk = DeskRuns::create();
    run_criterion(
        6,
        "every trained forecaster beats the previous-weight hold",
        &mut failures,
        || desk_methods_beat_the_naive_baseline(&desk),
    );
    run_criterion(
        7,
        "component count selection finds both modes",
        &mut failures,
        || component_selection_keeps_two_modes(&desk),
    );
    run_criterion(
        8,
        "full-protocol reproduction on a prepared dataset",
        &mut failures,
        full_protocol_reproduction,
    );
    run_criterion(
        9,
        "image and weight metrics satisfy their identities",
        &mut failures,
        metric_identities_hold,
    );
    run_criterion(
        10,
        "repeated desk runs are byte-identical",
        &mut failures,
        || desk_reruns_are_byte_identical(&desk),
    );
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn run_criterion<F>(n: u32, what: &str, failures: &mut u32, body: F)
where
    F: FnOnce() -> CriterionResult,
{
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(Verdict::Pass(detail))) => println!("acceptance {n:02} PASS  {what}: {detail}"),
        Ok(Ok(Verdict::Skip(detail))) => println!("acceptance {n:02} SKIP  {what}: {detail}"),
        Ok(Err(detail)) => {
            println!("acceptance {n:02} FAIL  {what}: {detail}");
            *failures += 1;
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            println!("acceptance {n:02} FAIL  {what}: {msg}");
            *failures += 1;
        }
    }
}

fn ensure(cond: bool, detail: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(detail)
    }
}

fn es(e: cinepred::Error) -> String {
    e.to_string()
}

fn identity_norm(m1: usize, p: usize) -> Normalizer {
    Normalizer::new(NormalizationStats::identity(m1), p).expect("identity stats")
}

fn rand_vec(rng: &mut ChaCha8Rng, len: usize) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| rng.gen_range(-1.0..1.0))
}

/// The one online trainer with an exact gradient, pitted against central
/// finite differences of the step-15 loss under frozen weights.
fn exact_gradient_against_finite_differences() -> CriterionResult {
    let started = Instant::now();
    let dims = RnnDims { q: 3, m1: 3, p: 2 };
    let steps = 15;
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    let us: Vec<Array1<f64>> = (0..steps).map(|_| rand_vec(&mut rng, dims.m1)).collect();
    let ts: Vec<Array1<f64>> = (0..steps).map(|_| rand_vec(&mut rng, dims.p)).collect();

    let mut rtrl =
        RtrlTrainer::new(dims, 0.01, identity_norm(dims.m1, dims.p), 301).map_err(es)?;
    let core0 = rtrl.core().clone();
    let theta = core0.params_flat();
    let mut last = None;
    for (u, t) in us.iter().zip(&ts) {
        let (g, _) = rtrl.gradient_step(u.view(), t.view()).map_err(es)?;
        last = Some(g);
    }
    let grad = last.expect("at least one step").to_flat();

    // Loss of the final step after running the whole sequence from a zero
    // hidden state with the given parameters.
    let final_loss = |theta: &Array1<f64>| -> Result<f64, String> {
        let mut core: RnnCore = core0.clone();
        core.set_params_flat(theta.view()).map_err(es)?;
        core.x = Array1::zeros(dims.q);
        let mut loss = 0.0;
        for (u, t) in us.iter().zip(&ts) {
            let (x_new, y) = core.forward(u.view()).map_err(es)?;
            core.x = x_new;
            loss = y.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        }
        Ok(loss)
    };

    let eps = 1e-5;
    let mut max_rel = 0.0f64;
    for k in 0..dims.n_params() {
        let mut plus = theta.clone();
        plus[k] += eps;
        let mut minus = theta.clone();
        minus[k] -= eps;
        let fd = (final_loss(&plus)? - final_loss(&minus)?) / (2.0 * eps);
        let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(
        max_rel < 1e-4,
        format!("max relative error {max_rel:.3e} exceeds 1e-4"),
    )?;
    ensure(secs < 10.0, format!("took {secs:.2} s, limit 10 s"))?;
    Ok(Verdict::Pass(format!(
        "max relative error {max_rel:.3e} over {} parameters after {steps} steps ({secs:.2} s)",
        dims.n_params()
    )))
}

/// 1e5 single-step stochastic estimates from a pristine rank-one state,
/// coordinate means within three standard errors of the exact gradient.
fn uoro_estimates_average_to_the_exact_gradient() -> CriterionResult {
    let started = Instant::now();
    let dims = RnnDims { q: 3, m1: 3, p: 2 };
    let mut rtrl = RtrlTrainer::new(dims, 0.01, identity_norm(3, 2), 77).map_err(es)?;
    let x0 = arr1(&[0.3, -0.5, 0.8]);
    rtrl.core_mut().x = x0.clone();
    let u = arr1(&[1.0, 0.6, -0.4]);
    let t = arr1(&[0.3, -0.2]);
    let (exact, _) = rtrl.gradient_step(u.view(), t.view()).map_err(es)?;
    let exact_flat = exact.to_flat();

    let base = UoroTrainer::new(dims, 0.01, identity_norm(3, 2), 77).map_err(es)?;
    let n_draws = 100_000usize;
    let n_params = dims.n_params();
    let mut sum = Array1::<f64>::zeros(n_params);
    let mut sum_sq = Array1::<f64>::zeros(n_params);
    for i in 0..n_draws {
        let mut trainer = base.clone();
        trainer.core_mut().x = x0.clone();
        trainer.reseed_noise(10_000 + i as u64);
        let (g, _) = trainer.gradient_step(u.view(), t.view()).map_err(es)?;
        let flat = g.to_flat();
        sum += &flat;
        sum_sq += &flat.mapv(|v| v * v);
    }

    let n = n_draws as f64;
    let mut worst_z = 0.0f64;
    for k in 0..n_params {
        let mean = sum[k] / n;
        let var = (sum_sq[k] / n - mean * mean).max(0.0) * n / (n - 1.0);
        let se = (var / n).sqrt();
        let dev = (mean - exact_flat[k]).abs();
        ensure(
            dev <= 3.0 * se + 1e-9,
            format!(
                "parameter {k}: mean {mean:.6e} is {dev:.3e} from exact {:.6e} (se {se:.3e})",
                exact_flat[k]
            ),
        )?;
        if se > 0.0 {
            worst_z = worst_z.max(dev / se);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("took {secs:.2} s, limit 60 s"))?;
    Ok(Verdict::Pass(format!(
        "{n_draws} estimates, worst coordinate at {worst_z:.2} standard errors ({secs:.2} s)"
    )))
}

/// The sparse trainer's stored influence re-derived from the full recursion
/// with off-owner entries zeroed each step; at one hidden unit nothing is
/// masked, so sparse and exact trainers must coincide.
fn snap1_matches_masked_influence_recursion() -> CriterionResult {
    let dims = RnnDims { q: 4, m1: 3, p: 2 };
    let mut snap = Snap1Trainer::new(dims, 0.01, identity_norm(3, 2), 11).map_err(es)?;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let n_rec = dims.n_rec();
    let owner = |col: usize| {
        if col < dims.q * dims.q {
            col / dims.q
        } else {
            (col - dims.q * dims.q) / dims.m1
        }
    };
    let mut masked = Array2::<f64>::zeros((dims.q, n_rec));
    let mut max_diff = 0.0f64;
    for _ in 0..20 {
        let u = rand_vec(&mut rng, dims.m1);
        let t = rand_vec(&mut rng, dims.p);
        let x_prev = snap.core().x.clone();
        let w_a = snap.core().w_a.clone();
        snap.gradient_step(u.view(), t.view()).map_err(es)?;
        let x_new = &snap.core().x;

        let mut next = w_a.dot(&masked);
        for i in 0..dims.q {
            for j in 0..dims.q {
                next[[i, dims.idx_wa(i, j)]] += x_prev[j];
            }
            for j in 0..dims.m1 {
                next[[i, dims.idx_wb(i, j)]] += u[j];
            }
            let di = 1.0 - x_new[i] * x_new[i];
            for v in next.row_mut(i).iter_mut() {
                *v *= di;
            }
            for col in 0..n_rec {
                if owner(col) != i {
                    next[[i, col]] = 0.0;
                }
            }
        }
        masked = next;

        let wa = snap.influence_wa();
        let wb = snap.influence_wb();
        for i in 0..dims.q {
            for j in 0..dims.q {
                max_diff = max_diff.max((masked[[i, dims.idx_wa(i, j)]] - wa[[i, j]]).abs());
            }
            for j in 0..dims.m1 {
                max_diff = max_diff.max((masked[[i, dims.idx_wb(i, j)]] - wb[[i, j]]).abs());
            }
        }
    }
    ensure(
        max_diff < 1e-10,
        format!("masked recursion deviates by {max_diff:.3e} at q=4"),
    )?;

    let dims1 = RnnDims { q: 1, m1: 3, p: 2 };
    let mut rtrl = RtrlTrainer::new(dims1, 0.01, identity_norm(3, 2), 23).map_err(es)?;
    let mut snap1 = Snap1Trainer::new(dims1, 0.01, identity_norm(3, 2), 23).map_err(es)?;
    *snap1.core_mut() = rtrl.core().clone();
    let mut max_q1 = 0.0f64;
    for _ in 0..20 {
        let u = rand_vec(&mut rng, dims1.m1);
        let t = rand_vec(&mut rng, dims1.p);
        let (gs, ys) = snap1.gradient_step(u.view(), t.view()).map_err(es)?;
        let (gr, yr) = rtrl.gradient_step(u.view(), t.view()).map_err(es)?;
        ensure(ys == yr, "q=1 predictions diverged".into())?;
        for (a, b) in gs.to_flat().iter().zip(gr.to_flat().iter()) {
            max_q1 = max_q1.max((a - b).abs());
        }
        let full = rtrl.influence();
        max_q1 = max_q1.max((snap1.influence_wa()[[0, 0]] - full[[0, dims1.idx_wa(0, 0)]]).abs());
        for j in 0..dims1.m1 {
            max_q1 = max_q1.max((snap1.influence_wb()[[0, j]] - full[[0, dims1.idx_wb(0, j)]]).abs());
        }
    }
    ensure(
        max_q1 <= 1e-12,
        format!("q=1 trainers deviate by {max_q1:.3e}"),
    )?;
    Ok(Verdict::Pass(format!(
        "max deviation {max_diff:.2e} at q=4 over 20 steps; q=1 coincides with the exact trainer ({max_q1:.1e})"
    )))
}

/// Hestenes one-sided Jacobi: rotate column pairs of the transpose until
/// mutually orthogonal; singular values are the column norms.
fn jacobi_singular_values(a: &Array2<f64>) -> Vec<f64> {
    let mut b = a.t().to_owned();
    let n = b.ncols();
    for _ in 0..100 {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let mut p = 0.0;
                let mut qi = 0.0;
                let mut qj = 0.0;
                for r in 0..b.nrows() {
                    p += b[[r, i]] * b[[r, j]];
                    qi += b[[r, i]] * b[[r, i]];
                    qj += b[[r, j]] * b[[r, j]];
                }
                if p.abs() <= 1e-15 * (qi * qj).sqrt().max(1e-300) {
                    continue;
                }
                rotated = true;
                let tau = (qj - qi) / (2.0 * p);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..b.nrows() {
                    let vi = b[[r, i]];
                    let vj = b[[r, j]];
                    b[[r, i]] = c * vi - s * vj;
                    b[[r, j]] = s * vi + c * vj;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..n)
        .map(|j| (0..b.nrows()).map(|r| b[[r, j]] * b[[r, j]]).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Random 6x10 data matrices: the rank-3 fit must leave exactly the
/// trailing singular value energy, with orthonormal components and the
/// sign rule applied in every case.
fn pca_matches_jacobi_svd_oracle() -> CriterionResult {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (frames, fh, fw, n_cp) = (6usize, 1usize, 5usize, 3usize);
    let mut sign_ok = 0usize;
    let mut sign_total = 0usize;
    let mut worst_resid = 0.0f64;
    let mut worst_ortho = 0.0f64;
    for case in 0..25 {
        let fields: Vec<DisplacementField> = (0..frames)
            .map(|_| {
                let data: Vec<f64> = (0..2 * fh * fw).map(|_| rng.gen_range(-1.0..1.0)).collect();
                DisplacementField::from_interleaved(&data, fh, fw).expect("field shape")
            })
            .collect();
        let data = build_data_matrix(&fields, frames).map_err(es)?;
        let model = fit_motion_model(&data, n_cp).map_err(es)?;

        let sv = jacobi_singular_values(&data.xc);
        let expected = sv.iter().skip(n_cp).map(|s| s * s).sum::<f64>().sqrt();

        let u_cols: Vec<Vec<f64>> = model.components.iter().map(|c| c.to_interleaved()).collect();
        let mut resid2 = 0.0;
        for k in 0..frames {
            for c in 0..2 * fh * fw {
                let mut approx = 0.0;
                for j in 0..n_cp {
                    approx += model.train_weights[[k, j]] * u_cols[j][c];
                }
                let d = data.xc[[k, c]] - approx;
                resid2 += d * d;
            }
        }
        let frob = data.xc.iter().map(|v| v * v).sum::<f64>().sqrt();
        let gap = (resid2.sqrt() - expected).abs();
        ensure(
            gap <= 1e-8 * (1.0 + frob),
            format!(
                "case {case}: rank-{n_cp} residual {:.9} vs svd tail {expected:.9}",
                resid2.sqrt()
            ),
        )?;
        worst_resid = worst_resid.max(gap);

        for a in 0..n_cp {
            for b in 0..n_cp {
                let dot: f64 = u_cols[a].iter().zip(&u_cols[b]).map(|(x, y)| x * y).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                let dev = (dot - target).abs();
                ensure(
                    dev <= 1e-8,
                    format!("case {case}: component gram [{a},{b}] off by {dev:.2e}"),
                )?;
                worst_ortho = worst_ortho.max(dev);
            }
        }

        for j in 0..n_cp {
            sign_total += 1;
            let col = model.train_weights.column(j);
            if let Some(first) = col.iter().find(|v| v.abs() > 1e-12) {
                if *first > 0.0 {
                    sign_ok += 1;
                }
            }
        }
    }
    ensure(
        sign_ok == sign_total,
        format!("sign rule held for {sign_ok}/{sign_total} weight columns"),
    )?;
    Ok(Verdict::Pass(format!(
        "25 matrices: residual gap <= {worst_resid:.2e}, orthonormality gap <= {worst_ortho:.2e}, sign rule {sign_ok}/{sign_total}"
    )))
}

/// Smooth band-limited test image: long-wavelength waves plus two blobs.
fn smooth_image(h: usize, w: usize) -> Image {
    Array2::from_shape_fn((h, w), |(r, c)| {
        let (x, y) = (c as f64, r as f64);
        let tau = std::f64::consts::TAU;
        let waves = 25.0 * (tau * x / 23.0).sin() * (tau * y / 19.0).sin()
            + 15.0 * (tau * (x + y) / 31.0).cos()
            + 12.0 * (tau * (2.0 * x - y) / 43.0).cos();
        let blob = |cx: f64, cy: f64, s: f64, a: f64| {
            a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp()
        };
        120.0 + waves
            + blob(w as f64 * 0.4, h as f64 * 0.45, 9.0, 70.0)
            + blob(w as f64 * 0.65, h as f64 * 0.6, 7.0, -50.0)
    })
}

fn shift_image(img: &Image, dx: i64, dy: i64) -> Image {
    let (h, w) = img.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        let sr = (r as i64 - dy).clamp(0, h as i64 - 1) as usize;
        let sc = (c as i64 - dx).clamp(0, w as i64 - 1) as usize;
        img[[sr, sc]]
    })
}

fn interior_mean_epe(
    field: &DisplacementField,
    truth: impl Fn(usize, usize) -> (f64, f64),
    margin: usize,
) -> f64 {
    let (h, w) = field.dim();
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in margin..h - margin {
        for c in margin..w - margin {
            let (tx, ty) = truth(r, c);
            let dx = field.u_x[[r, c]] - tx;
            let dy = field.u_y[[r, c]] - ty;
            sum += (dx * dx + dy * dy).sqrt();
            n += 1;
        }
    }
    sum / n as f64
}

/// Integer shifts up to 6 px must come back through the pyramid, and a
/// single pyramid layer must lose to three layers on 6 px of motion.
fn flow_recovers_six_pixel_shifts() -> CriterionResult {
    let img = smooth_image(96, 96);
    let params = FlowParams {
        sigma_init: 0.0,
        sigma_sub: 1.0,
        sigma_lk: 3.0,
        n_layers: 3,
        n_iter: 1,
    };
    let mut worst = 0.0f64;
    for (dx, dy) in [(6i64, 0i64), (0, 6), (4, -5)] {
        let target = shift_image(&img, dx, dy);
        let field = lucas_kanade_dense(&img, &target, &params).map_err(es)?;
        let epe = interior_mean_epe(&field, |_, _| (dx as f64, dy as f64), 14);
        ensure(
            epe < 0.15,
            format!("mean endpoint error {epe:.4} px for shift ({dx},{dy})"),
        )?;
        worst = worst.max(epe);
    }

    let spec = SyntheticSpec {
        h: 64,
        w: 64,
        frames: 24,
        sampling_hz: 3.2,
        modes: vec![ModeSpec {
            shape: ModeShape::Translation { dx: 0.8, dy: 0.6 },
            amplitude: 6.0,
            frequency_hz: 0.3,
            phase: 0.0,
            modulation_depth: 0.0,
            modulation_hz: 0.0,
        }],
        noise_std: 0.0,
        seed: 505,
        name: "large-shift".into(),
    };
    let gt = generate_synthetic_sequence(&spec).map_err(es)?;
    let grid = [
        FlowParams {
            sigma_init: 0.5,
            sigma_sub: 0.5,
            sigma_lk: 2.0,
            n_layers: 1,
            n_iter: 2,
        },
        FlowParams {
            sigma_init: 0.5,
            sigma_sub: 0.5,
            sigma_lk: 2.0,
            n_layers: 3,
            n_iter: 2,
        },
    ];
    let errors = flow_grid_errors(&gt.sequence, &grid, 20).map_err(es)?;
    ensure(
        errors[0] > errors[1],
        format!(
            "single-layer registration error {:.4} is not above the three-layer error {:.4}",
            errors[0], errors[1]
        ),
    )?;
    Ok(Verdict::Pass(format!(
        "worst shift recovery error {worst:.3} px; 6 px sequence registers at {:.4} with one layer vs {:.4} with three",
        errors[0], errors[1]
    )))
}

struct DeskRuns {
    _tmp: TempDir,
    dir_a: PathBuf,
    dir_b: PathBuf,
    elapsed_a: Duration,
    summary: Value,
}

impl DeskRuns {
    /// Two full desk-profile executions of the installed binary with the
    /// same seed, kept side by side for the end-to-end criteria.
    fn create() -> Result<DeskRuns, String> {
        let tmp = TempDir::new().map_err(|e| format!("creating a temp dir: {e}"))?;
        let dir_a = tmp.path().join("a");
        let dir_b = tmp.path().join("b");
        let started = Instant::now();
        run_cli(&[
            "experiment",
            "--profile",
            "desk",
            "--seed",
            "42",
            "--out-dir",
            dir_a.to_str().expect("utf-8 temp path"),
        ])?;
        let elapsed_a = started.elapsed();
        run_cli(&[
            "experiment",
            "--profile",
            "desk",
            "--seed",
            "42",
            "--out-dir",
            dir_b.to_str().expect("utf-8 temp path"),
        ])?;
        let text = fs::read_to_string(dir_a.join("summary.json"))
            .map_err(|e| format!("reading summary.json: {e}"))?;
        let summary =
            serde_json::from_str(&text).map_err(|e| format!("parsing summary.json: {e}"))?;
        Ok(DeskRuns {
            _tmp: tmp,
            dir_a,
            dir_b,
            elapsed_a,
            summary,
        })
    }
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cinepred"))
        .args(args)
        .output()
        .map_err(|e| format!("launching the cli: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "cli {} exited with {}: {} {}",
            args.first().unwrap_or(&""),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim(),
            String::from_utf8_lossy(&out.stdout).trim(),
        ))
    }
}

fn method_metric_table(summary: &Value, metric: &str) -> Result<HashMap<(String, u64), f64>, String> {
    let methods = summary["methods"]
        .as_array()
        .ok_or("summary.json has no methods array")?;
    let mut table = HashMap::new();
    for m in methods {
        let name = m["method"]
            .as_str()
            .ok_or("method entry without a name")?
            .to_string();
        let h = m["h"].as_u64().ok_or("method entry without a horizon")?;
        let v = m[metric]
            .as_f64()
            .ok_or_else(|| format!("method entry without {metric}"))?;
        table.insert((name, h), v);
    }
    Ok(table)
}

/// Every RNN trainer and the adaptive linear filter must forecast the held
/// out weights strictly better than repeating the last seen weight, at all
/// three configured horizons, within the 15 minute budget.
fn desk_methods_beat_the_naive_baseline(desk: &Result<DeskRuns, String>) -> CriterionResult {
    let desk = desk.as_ref().map_err(|e| e.clone())?;
    let table = method_metric_table(&desk.summary, "test_weight_nrmse")?;
    let mut tightest: Option<(String, u64, f64, f64)> = None;
    for h in [1u64, 3, 6] {
        let base = *table
            .get(&("previous_weight".to_string(), h))
            .ok_or_else(|| format!("missing previous_weight at h={h}"))?;
        for name in ["rtrl", "uoro", "snap1", "dni", "lms"] {
            let v = *table
                .get(&(name.to_string(), h))
                .ok_or_else(|| format!("missing {name} at h={h}"))?;
            ensure(
                v < base,
                format!("{name} at h={h}: weight nrmse {v:.4} is not below the hold baseline {base:.4}"),
            )?;
            let margin = base / v;
            if tightest.as_ref().map_or(true, |t| margin < t.3) {
                tightest = Some((name.to_string(), h, v, margin));
            }
        }
    }
    let secs = desk.elapsed_a.as_secs_f64();
    ensure(secs < 900.0, format!("desk run took {secs:.0} s, limit 900 s"))?;
    let (name, h, v, margin) = tightest.expect("at least one comparison");
    Ok(Verdict::Pass(format!(
        "15 method/horizon pairs beat the hold baseline; tightest is {name} at h={h} ({v:.4}, {margin:.1}x better); desk run {secs:.1} s"
    )))
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), String> {
    let text = fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| format!("{} is empty", path.display()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

/// On a sequence driven by exactly two deformation modes plus noise, the
/// predicted-image score must pick two components for the adaptive linear
/// filter at the longest horizon, with a sharp drop from one to two.
fn component_selection_keeps_two_modes(desk: &Result<DeskRuns, String>) -> CriterionResult {
    let desk = desk.as_ref().map_err(|e| e.clone())?;
    let path = desk.dir_a.join("ncp_selection.csv");
    let (header, rows) = read_csv(&path)?;
    let col = |name: &str| {
        header
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| format!("ncp_selection.csv lacks a {name} column"))
    };
    let (c_method, c_h, c_ncp, c_pred, c_sel) = (
        col("method")?,
        col("h")?,
        col("n_cp")?,
        col("e_pred")?,
        col("selected")?,
    );
    let mut selected = None;
    let mut e_pred: HashMap<usize, f64> = HashMap::new();
    for row in &rows {
        if row[c_method] != "lms" || row[c_h] != "6" {
            continue;
        }
        let n_cp: usize = row[c_ncp]
            .parse()
            .map_err(|_| format!("bad n_cp value {}", row[c_ncp]))?;
        if !row[c_pred].is_empty() {
            let v: f64 = row[c_pred]
                .parse()
                .map_err(|_| format!("bad e_pred value {}", row[c_pred]))?;
            e_pred.insert(n_cp, v);
        }
        if row[c_sel] == "1" {
            selected = Some(n_cp);
        }
    }
    let selected = selected.ok_or("no selected row for lms at h=6")?;
    ensure(
        selected == 2,
        format!("lms at h=6 selected {selected} components instead of 2"),
    )?;
    let e1 = *e_pred.get(&1).ok_or("no e_pred for one component")?;
    let e2 = *e_pred.get(&2).ok_or("no e_pred for two components")?;
    ensure(
        e1 > 1.2 * e2,
        format!("one-component error {e1:.6} is not 20% above the two-component error {e2:.6}"),
    )?;
    Ok(Verdict::Pass(format!(
        "lms at h=6 keeps 2 components; predicted-image error falls from {e1:.6} to {e2:.6} ({:.1}x)",
        e1 / e2
    )))
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap_or_else(|_| Path::new(env!("CARGO_MANIFEST_DIR")).join("../.."))
}

/// Full-protocol reproduction against the published aggregate numbers;
/// needs a prepared dataset under data/, otherwise reports SKIP.
fn full_protocol_reproduction() -> CriterionResult {
    let root = workspace_root();
    let mut manifests = Vec::new();
    let direct = root.join("data/manifest.json");
    if direct.is_file() {
        manifests.push(direct);
    } else if root.join("data").is_dir() {
        let entries = fs::read_dir(root.join("data"))
            .map_err(|e| format!("listing data/: {e}"))?;
        for entry in entries.flatten() {
            let m = entry.path().join("manifest.json");
            if m.is_file() {
                manifests.push(m);
            }
        }
        manifests.sort();
    }
    if manifests.is_empty() {
        return Ok(Verdict::Skip(
            "no prepared sequences under data/; the synthetic criteria stand alone".into(),
        ));
    }

    let tmp = TempDir::new().map_err(|e| format!("creating a temp dir: {e}"))?;
    let mut snap_sums = [0.0f64; 3];
    let mut snap_n = 0usize;
    let mut dvf_h1: HashMap<String, (f64, usize)> = HashMap::new();
    for (i, manifest) in manifests.iter().enumerate() {
        let mut cfg = ExperimentConfig::paper();
        cfg.data = DataSource::Manifest {
            path: manifest.clone(),
        };
        let cfg_path = tmp.path().join(format!("seq{i}.json"));
        cfg.to_json_file(&cfg_path).map_err(es)?;
        let out = tmp.path().join(format!("seq{i}"));
        run_cli(&[
            "experiment",
            "--config",
            cfg_path.to_str().expect("utf-8 temp path"),
            "--out-dir",
            out.to_str().expect("utf-8 temp path"),
        ])?;
        let text = fs::read_to_string(out.join("summary.json"))
            .map_err(|e| format!("reading summary.json: {e}"))?;
        let summary: Value =
            serde_json::from_str(&text).map_err(|e| format!("parsing summary.json: {e}"))?;
        let methods = summary["methods"]
            .as_array()
            .ok_or("summary.json has no methods array")?;
        for m in methods {
            let name = m["method"].as_str().unwrap_or_default();
            if name == "snap1" {
                snap_sums[0] += m["test_image_nrmse"].as_f64().unwrap_or(f64::NAN);
                snap_sums[1] += m["test_ssim"].as_f64().unwrap_or(f64::NAN);
                snap_sums[2] += m["test_mean_dvf_error_mm"].as_f64().unwrap_or(f64::NAN);
                snap_n += 1;
            }
            if m["h"].as_u64() == Some(1) {
                let e = dvf_h1.entry(name.to_string()).or_insert((0.0, 0));
                e.0 += m["test_mean_dvf_error_mm"].as_f64().unwrap_or(f64::NAN);
                e.1 += 1;
            }
        }
    }
    ensure(snap_n > 0, "no snap1 rows in the summaries".into())?;
    let nrmse = snap_sums[0] / snap_n as f64;
    let ssim_avg = snap_sums[1] / snap_n as f64;
    let dvf = snap_sums[2] / snap_n as f64;
    for (label, got, want) in [
        ("nrmse", nrmse, 0.2115),
        ("ssim", ssim_avg, 0.8990),
        ("mean dvf error", dvf, 1.405),
    ] {
        ensure(
            (got - want).abs() <= 0.10 * want,
            format!("snap1 aggregate {label} {got:.4} outside 10% of {want}"),
        )?;
    }
    let averages: HashMap<String, f64> = dvf_h1
        .into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect();
    let linreg = *averages
        .get("linreg")
        .ok_or("no linear-regression rows at h=1")?;
    for (name, v) in &averages {
        if name != "linreg" {
            ensure(
                linreg <= *v,
                format!("linreg mean dvf error {linreg:.4} at h=1 is not the lowest ({name} has {v:.4})"),
            )?;
        }
    }
    ensure(
        (linreg - 1.297).abs() <= 0.1297,
        format!("linreg mean dvf error {linreg:.4} at h=1 outside 10% of 1.297"),
    )?;
    Ok(Verdict::Pass(format!(
        "{} sequences: snap1 nrmse {nrmse:.4}, ssim {ssim_avg:.4}, mean dvf {dvf:.3} mm; linreg lowest at h=1 ({linreg:.3} mm)",
        manifests.len()
    )))
}

/// Closed-form identities every metric must satisfy.
fn metric_identities_hold() -> CriterionResult {
    let started = Instant::now();
    let img = smooth_image(48, 48);
    let s = ssim(&img, &img).map_err(es)?;
    ensure((s - 1.0).abs() <= 1e-12, format!("ssim(a,a) = {s}"))?;

    let affine = img.mapv(|v| 2.0 * v + 5.0);
    let cc = cross_correlation(&img, &affine).map_err(es)?;
    ensure(
        (cc - 1.0).abs() <= 1e-12,
        format!("cross-correlation against an affine copy is {cc}"),
    )?;
    let other = shift_image(&img, 3, 1);
    let cc_raw = cross_correlation(&img, &other).map_err(es)?;
    let cc_scaled = cross_correlation(&img, &other.mapv(|v| 0.7 * v + 3.0)).map_err(es)?;
    ensure(
        (cc_raw - cc_scaled).abs() <= 1e-9,
        format!("affine rescaling moved the correlation by {:.2e}", (cc_raw - cc_scaled).abs()),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let truth = Array2::from_shape_fn((20, 3), |_| rng.gen_range(-2.0..2.0));
    let mut pred = Array2::zeros((20, 3));
    for j in 0..3 {
        let mean = truth.column(j).sum() / 20.0;
        for k in 0..20 {
            pred[[k, j]] = mean;
        }
    }
    let nrmse = weight_nrmse(pred.view(), truth.view()).map_err(es)?;
    ensure(
        (nrmse - 1.0).abs() <= 1e-12,
        format!("column-mean prediction scores {nrmse}"),
    )?;

    let mut moved = DisplacementField::zeros(4, 4);
    moved.u_x.fill(3.0);
    moved.u_y.fill(4.0);
    let still = DisplacementField::zeros(4, 4);
    let (mean, max) = dvf_endpoint_errors(&moved, &still, [1.0, 1.0]).map_err(es)?;
    ensure(
        (mean - 5.0).abs() <= 1e-12 && (max - 5.0).abs() <= 1e-12,
        format!("uniform (3,4) px field scores mean {mean}, max {max}"),
    )?;
    let expected = (1.5f64 * 1.5 + 8.0 * 8.0).sqrt();
    let (mean_mm, _) = dvf_endpoint_errors(&moved, &still, [2.0, 0.5]).map_err(es)?;
    ensure(
        (mean_mm - expected).abs() <= 1e-12,
        format!("anisotropic spacing gives {mean_mm} instead of {expected}"),
    )?;
    let mut spike = DisplacementField::zeros(4, 4);
    spike.u_x[[0, 0]] = 3.0;
    let (mean_s, max_s) = dvf_endpoint_errors(&spike, &still, [1.0, 1.0]).map_err(es)?;
    ensure(
        (mean_s - 3.0 / 16.0).abs() <= 1e-12 && (max_s - 3.0).abs() <= 1e-12,
        format!("single-pixel error scores mean {mean_s}, max {max_s}"),
    )?;

    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 5.0, format!("took {secs:.2} s, limit 5 s"))?;
    Ok(Verdict::Pass(format!(
        "ssim, correlation, nrmse and endpoint identities all hold ({secs:.2} s)"
    )))
}

fn collect_csvs(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), String> {
    let entries = fs::read_dir(dir).map_err(|e| format!("listing {}: {e}", dir.display()))?;
    for entry in entries.flatten() {
        let path = entry.path();
        if path.is_dir() {
            collect_csvs(root, &path, out)?;
        } else if path.extension().is_some_and(|e| e == "csv") {
            let rel = path
                .strip_prefix(root)
                .map_err(|e| format!("relativizing {}: {e}", path.display()))?;
            out.push(rel.to_path_buf());
        }
    }
    Ok(())
}

/// Same binary, same seed, twice: every emitted CSV must match byte for
/// byte.
fn desk_reruns_are_byte_identical(desk: &Result<DeskRuns, String>) -> CriterionResult {
    let desk = desk.as_ref().map_err(|e| e.clone())?;
    let mut a_files = Vec::new();
    let mut b_files = Vec::new();
    collect_csvs(&desk.dir_a, &desk.dir_a, &mut a_files)?;
    collect_csvs(&desk.dir_b, &desk.dir_b, &mut b_files)?;
    a_files.sort();
    b_files.sort();
    ensure(
        a_files == b_files,
        format!(
            "the runs emitted different csv sets ({} vs {} files)",
            a_files.len(),
            b_files.len()
        ),
    )?;
    ensure(!a_files.is_empty(), "no csv outputs found".into())?;
    for rel in &a_files {
        let a = fs::read(desk.dir_a.join(rel))
            .map_err(|e| format!("reading {}: {e}", rel.display()))?;
        let b = fs::read(desk.dir_b.join(rel))
            .map_err(|e| format!("reading {}: {e}", rel.display()))?;
        ensure(
            a == b,
            format!("{} differs between the two runs", rel.display()),
        )?;
    }
    Ok(Verdict::Pass(format!(
        "{} csv files byte-identical across independent runs",
        a_files.len()
    )))
}
