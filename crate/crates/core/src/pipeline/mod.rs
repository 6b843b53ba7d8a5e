//! Experiment orchestration. One call runs the whole chain on a sequence:
//! flow optimization, motion model fit, per-method hyper-parameter search,
//! component-count selection, test evaluation with image warping, weight
//! forecast scoring at a fixed component count, reference rules, and
//! deterministic report emission.

pub mod config;
pub mod evaluate;
pub mod report;
pub mod search;
pub mod seed;

pub use config::{DataSource, ExperimentConfig, LinRegGrid, LmsGrid, RnnGrid, RunCounts};
pub use evaluate::{
    evaluate_test, evaluate_weight_forecast, original_dvf_bound, previous_image_baseline,
    Aggregate, ImageBaseline, MetricSet, TestArtifacts, TestEvaluation, TestRun, WeightEval,
};
pub use report::{fmt_f64, ExperimentSummary};
pub use search::{
    choose_min_error, method_grid, reconstruct_padded, run_grid_search, select_n_cp, GridCell,
    GridOutcome, NcpCandidate, NcpScore, NcpSelection,
};
pub use seed::run_seed;

use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array2};

use crate::dvf::DisplacementField;
use crate::error::{Error, Result};
use crate::flow::{flow_grid_errors, register_sequence, FlowParams};
use crate::forecast::{HyperParams, Method};
use crate::io::write_pgm;
use crate::pca::{build_data_matrix, fit_motion_model, project, save_model, MotionModel};
use crate::sequence::ImageSequence;
use crate::synth::generate_synthetic_sequence;

use report::{
    AggregateRow, BaselineSummary, FlowSummary, GridRow, MethodSummary, NcpRow, PcaSummary,
    TestRunRow, WeightEvalRow, WeightEvalSummary,
};

/// Splits the 0-based frame indices of an m-frame sequence into training,
/// cross-validation, and test ranges.
pub fn split_indices(
    m: usize,
    m_train: usize,
    m_cv: usize,
) -> Result<(Range<usize>, Range<usize>, Range<usize>)> {
    if m_train < 2 || m_train >= m_cv || m_cv >= m {
        return Err(Error::InvalidInput(format!(
            "split 2 <= m_train < m_cv < m violated: m_train={m_train}, m_cv={m_cv}, m={m}"
        )));
    }
    Ok((0..m_train, m_train..m_cv, m_cv..m))
}

/// One motion model and the weight series of the whole sequence under it.
struct Flavor {
    model: MotionModel,
    /// frames x model.n_cp projections of the registered fields.
    weights: Array2<f64>,
    m_train: usize,
}

/// Fits the model at the requested count, falling back to the data rank
/// when the spectrum runs out early.
fn fit_flavor(
    fields: &[DisplacementField],
    m_train: usize,
    n_cp_max: usize,
) -> Result<MotionModel> {
    let data = build_data_matrix(fields, m_train)?;
    match fit_motion_model(&data, n_cp_max) {
        Err(Error::RankExceeded { rank, .. }) if rank >= 1 => fit_motion_model(&data, rank),
        other => other,
    }
}

fn project_all(model: &MotionModel, fields: &[DisplacementField]) -> Result<Array2<f64>> {
    let mut weights = Array2::zeros((fields.len(), model.n_cp));
    for (k, field) in fields.iter().enumerate() {
        weights.row_mut(k).assign(&project(model, field)?);
    }
    Ok(weights)
}

fn load_data(cfg: &ExperimentConfig) -> Result<ImageSequence> {
    match &cfg.data {
        DataSource::Synthetic { spec } => Ok(generate_synthetic_sequence(spec)?.sequence),
        DataSource::Manifest { path } => crate::io::load_sequence(path),
    }
}

/// The chosen configuration of one method at one horizon.
#[derive(Debug, Clone)]
struct Chosen {
    n_cp: usize,
    hp: HyperParams,
    grid_index: usize,
    cv_nrmse: f64,
    e_pred: f64,
}

/// Runs the full experiment and writes every report file under `out_dir`.
/// Rerunning with the same configuration reproduces every byte.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    cfg.to_json_file(&out_dir.join("config.json"))?;

    let seq = load_data(cfg)?;
    let m = seq.len();
    split_indices(m, cfg.m_train, cfg.m_cv)?;
    let uses_linreg = cfg.methods.contains(&Method::Linreg);
    if uses_linreg {
        split_indices(m, cfg.m_train_linreg, cfg.m_cv)?;
    }

    // Stage 1: flow hyper-parameters by pooled registration error over the
    // training frames, then registration of the whole sequence.
    let flow_grid = cfg.flow_grid.expand();
    let flow_errors = flow_grid_errors(&seq, &flow_grid, cfg.m_train)?;
    let wrapped: Vec<Option<f64>> = flow_errors.iter().copied().map(Some).collect();
    let best_flow = choose_min_error(&wrapped)
        .ok_or_else(|| Error::InvalidInput("flow grid produced no finite error".into()))?;
    report::write_flow_grid_csv(
        &out_dir.join("flow_grid.csv"),
        &flow_grid,
        &flow_errors,
        best_flow,
    )?;
    let flow_params: FlowParams = flow_grid[best_flow].clone();
    let dvfs = register_sequence(&seq, &flow_params)?;

    // Stage 2: motion models. Every method shares one fit; linear
    // regression gets a second fit with its longer training range.
    let n_cp_max = *cfg.n_cp_range.last().expect("validated nonempty");
    let standard = {
        let model = fit_flavor(&dvfs.fields, cfg.m_train, n_cp_max)?;
        let weights = project_all(&model, &dvfs.fields)?;
        Flavor {
            model,
            weights,
            m_train: cfg.m_train,
        }
    };
    save_model(&standard.model, &out_dir.join("pca/standard"))?;
    report::write_weights_csv(
        &out_dir.join("pca/standard/weights.csv"),
        standard.weights.view(),
    )?;
    let linreg_flavor = if uses_linreg {
        let model = fit_flavor(&dvfs.fields, cfg.m_train_linreg, n_cp_max)?;
        let weights = project_all(&model, &dvfs.fields)?;
        let flavor = Flavor {
            model,
            weights,
            m_train: cfg.m_train_linreg,
        };
        save_model(&flavor.model, &out_dir.join("pca/linreg"))?;
        report::write_weights_csv(
            &out_dir.join("pca/linreg/weights.csv"),
            flavor.weights.view(),
        )?;
        Some(flavor)
    } else {
        None
    };

    // Stages 3 to 5 per method and horizon: grid search at each component
    // count, count selection by reconstructed-field error, test evaluation.
    let mut grid_rows: Vec<GridRow> = Vec::new();
    let mut ncp_rows: Vec<NcpRow> = Vec::new();
    let mut test_run_rows: Vec<TestRunRow> = Vec::new();
    let mut aggregate_rows: Vec<AggregateRow> = Vec::new();
    let mut weight_eval_rows: Vec<WeightEvalRow> = Vec::new();
    let mut method_summaries: Vec<MethodSummary> = Vec::new();
    let mut weight_eval_summaries: Vec<WeightEvalSummary> = Vec::new();

    for &method in &cfg.methods {
        let flavor = match (method, &linreg_flavor) {
            (Method::Linreg, Some(f)) => f,
            _ => &standard,
        };
        let grid = method_grid(cfg, method);
        let counts = &cfg.runs;
        // Counts clamped by the model rank when the spectrum ran out.
        let usable: Vec<usize> = cfg
            .n_cp_range
            .iter()
            .copied()
            .filter(|&c| c <= flavor.model.n_cp)
            .collect();
        if usable.is_empty() {
            return Err(Error::InvalidInput(format!(
                "model rank {} below every requested component count",
                flavor.model.n_cp
            )));
        }

        for &h in &cfg.horizons {
            let mut candidates: Vec<NcpCandidate> = Vec::new();
            let mut candidate_cv: Vec<f64> = Vec::new();
            for &n_cp in &usable {
                let outcome = run_grid_search(
                    flavor.weights.slice(s![.., ..n_cp]),
                    method,
                    h,
                    n_cp,
                    &grid,
                    counts.grid_runs(method),
                    flavor.m_train,
                    cfg.m_cv,
                    cfg.seed,
                )?;
                for (g, cell) in outcome.cells.iter().enumerate() {
                    grid_rows.push(GridRow {
                        method,
                        h,
                        n_cp,
                        cell: cell.clone(),
                        selected: outcome.best == Some(g),
                    });
                }
                if let Ok((g, cell)) = outcome.best_cell() {
                    candidates.push(NcpCandidate {
                        n_cp,
                        hp: cell.hp,
                        grid_index: g,
                    });
                    candidate_cv.push(cell.cv_nrmse.expect("best cell is valid"));
                }
            }
            if candidates.is_empty() {
                return Err(Error::Divergence {
                    context: format!(
                        "{} at horizon {h}: every grid combination diverged at every \
                         component count",
                        method.label()
                    ),
                });
            }

            let selection = select_n_cp(
                &seq,
                &flavor.model,
                flavor.weights.view(),
                method,
                h,
                &candidates,
                counts.warp_runs(method),
                flavor.m_train,
                cfg.m_cv,
                cfg.seed,
            )?;
            for (i, score) in selection.scores.iter().enumerate() {
                ncp_rows.push(NcpRow {
                    method,
                    h,
                    score: score.clone(),
                    selected: i == selection.chosen,
                });
            }
            let winner = &selection.scores[selection.chosen];
            let chosen = Chosen {
                n_cp: winner.candidate.n_cp,
                hp: winner.candidate.hp,
                grid_index: winner.candidate.grid_index,
                cv_nrmse: candidate_cv[selection.chosen],
                e_pred: winner.e_pred.expect("chosen candidate is valid"),
            };

            let test = evaluate_test(
                &seq,
                &flavor.model,
                flavor.weights.view(),
                &dvfs.fields,
                method,
                h,
                chosen.n_cp,
                chosen.hp,
                chosen.grid_index,
                counts.warp_runs(method),
                flavor.m_train,
                cfg.m_cv,
                cfg.seed,
                &cfg.warp,
                cfg.dump_frames,
            )?;
            for run in &test.runs {
                test_run_rows.push(TestRunRow {
                    method,
                    h,
                    n_cp: chosen.n_cp,
                    hp: chosen.hp,
                    run: TestRun {
                        run_index: run.run_index,
                        seed: run.seed,
                        metrics: run.metrics,
                    },
                });
            }
            aggregate_rows.push(AggregateRow::from_method(
                method,
                h,
                chosen.n_cp,
                &test.aggregate,
            ));
            if let Some(artifacts) = &test.artifacts {
                let stem = format!("{}_h{h}", method.label());
                report::write_predicted_weights_csv(
                    &out_dir.join(format!("weights/{stem}.csv")),
                    artifacts,
                )?;
                if cfg.dump_frames {
                    let frame_dir = out_dir.join(format!("frames/{stem}"));
                    std::fs::create_dir_all(&frame_dir).map_err(|e| Error::io(&frame_dir, e))?;
                    for (k, img) in artifacts
                        .target_frames
                        .iter()
                        .zip(&artifacts.predicted_frames)
                    {
                        write_pgm(img, &frame_dir.join(format!("frame_{k:03}.pgm")))?;
                    }
                }
            }

            let mean = test.aggregate.mean;
            method_summaries.push(MethodSummary {
                method,
                h,
                n_cp: chosen.n_cp,
                eta: chosen.hp.eta,
                l: chosen.hp.l,
                q: chosen.hp.q,
                cv_weight_nrmse: chosen.cv_nrmse,
                e_pred: chosen.e_pred,
                n_valid_runs: test.aggregate.n_valid,
                divergent_runs: test.aggregate.divergent_runs,
                test_weight_nrmse: mean.weight_nrmse,
                test_image_nrmse: mean.image_nrmse,
                test_cross_correlation: mean.cross_correlation,
                test_ssim: mean.ssim,
                test_mean_dvf_error_mm: mean.mean_dvf_error_mm,
                test_max_dvf_error_mm: mean.max_dvf_error_mm,
            });

            // Weight forecasting scored on the shared weight series at one
            // fixed count; linear regression keeps its longer training
            // range but reads the same series as everyone else.
            if let Some(pos) = candidates
                .iter()
                .position(|c| c.n_cp == cfg.weight_eval_n_cp)
            {
                let cand = &candidates[pos];
                let m_train_eval = if method == Method::Linreg {
                    cfg.m_train_linreg
                } else {
                    cfg.m_train
                };
                let eval = evaluate_weight_forecast(
                    standard.weights.view(),
                    method,
                    h,
                    cand.n_cp,
                    cand.hp,
                    cand.grid_index,
                    counts.weight_eval_runs(method),
                    m_train_eval,
                    cfg.m_cv,
                    cfg.seed,
                )?;
                weight_eval_summaries.push(WeightEvalSummary {
                    method,
                    h,
                    n_cp: cand.n_cp,
                    test_weight_nrmse: eval.mean,
                });
                weight_eval_rows.push(WeightEvalRow {
                    method,
                    h,
                    n_cp: cand.n_cp,
                    hp: cand.hp,
                    eval,
                });
            }
        }
    }

    // Reference rules: repeating an earlier frame per horizon, and the
    // registration bound of warping with the measured field itself.
    let mut baseline_summaries: Vec<BaselineSummary> = Vec::new();
    for &h in &cfg.horizons {
        let row = previous_image_baseline(&seq, h, cfg.m_cv)?;
        aggregate_rows.push(AggregateRow::from_image_baseline(
            "previous_image",
            Some(h),
            &row,
        ));
        baseline_summaries.push(BaselineSummary {
            label: "previous_image".into(),
            h: Some(h),
            image_nrmse: row.image_nrmse,
            cross_correlation: row.cross_correlation,
            ssim: row.ssim,
        });
    }
    let bound = original_dvf_bound(&seq, &dvfs.fields, cfg.m_cv, &cfg.warp)?;
    aggregate_rows.push(AggregateRow::from_image_baseline(
        "original_dvf",
        None,
        &bound,
    ));
    baseline_summaries.push(BaselineSummary {
        label: "original_dvf".into(),
        h: None,
        image_nrmse: bound.image_nrmse,
        cross_correlation: bound.cross_correlation,
        ssim: bound.ssim,
    });

    report::write_grid_search_csv(&out_dir.join("grid_search.csv"), &grid_rows)?;
    report::write_ncp_selection_csv(&out_dir.join("ncp_selection.csv"), &ncp_rows)?;
    report::write_test_runs_csv(&out_dir.join("test_metrics.csv"), &test_run_rows)?;
    report::write_aggregate_csv(&out_dir.join("test_aggregate.csv"), &aggregate_rows)?;
    report::write_weight_eval_csv(&out_dir.join("weights_eval.csv"), &weight_eval_rows)?;

    let mut pca_summaries = vec![PcaSummary {
        flavor: "standard".into(),
        m_train: standard.m_train,
        n_cp_max: standard.model.n_cp,
        eigenvalues: standard.model.eigenvalues.clone(),
    }];
    if let Some(f) = &linreg_flavor {
        pca_summaries.push(PcaSummary {
            flavor: "linreg".into(),
            m_train: f.m_train,
            n_cp_max: f.model.n_cp,
            eigenvalues: f.model.eigenvalues.clone(),
        });
    }
    let (height, width) = seq.dim();
    let summary = ExperimentSummary {
        name: cfg.name.clone(),
        seed: cfg.seed,
        frames: m,
        height,
        width,
        flow: FlowSummary {
            params: flow_params,
            e_gt: flow_errors[best_flow],
        },
        pca: pca_summaries,
        methods: method_summaries,
        weight_eval: weight_eval_summaries,
        baselines: baseline_summaries,
    };
    report::write_summary_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}
