//! Test-range evaluation: run the chosen configuration through the whole
//! sequence (online methods keep adapting through cross-validation and
//! test), reconstruct the predicted fields, warp the first frame, and score
//! everything; plus the three reference rows (previous image, previous
//! weight by way of the method table, warping with the registered field).

use ndarray::{s, Array2, ArrayView2};

use crate::dvf::DisplacementField;
use crate::error::{Error, Result};
use crate::forecast::runner::{build_forecaster, run_forecaster, PairSplit};
use crate::forecast::{HyperParams, Method};
use crate::image::Image;
use crate::metrics::{
    confidence_half_range, cross_correlation, dvf_endpoint_errors, image_nrmse, ssim,
    weight_nrmse,
};
use crate::pca::MotionModel;
use crate::sequence::ImageSequence;
use crate::warp::{warp_image, WarpParams};

use super::search::reconstruct_padded;
use super::seed::run_seed;

/// The scalar metrics of one evaluation run, each averaged over the test
/// frames (max_dvf_error_mm takes the maximum instead).
#[derive(Debug, Clone, Copy)]
pub struct MetricSet {
    pub weight_nrmse: f64,
    pub image_nrmse: f64,
    pub cross_correlation: f64,
    pub ssim: f64,
    pub mean_dvf_error_mm: f64,
    pub max_dvf_error_mm: f64,
}

impl MetricSet {
    fn as_array(&self) -> [f64; 6] {
        [
            self.weight_nrmse,
            self.image_nrmse,
            self.cross_correlation,
            self.ssim,
            self.mean_dvf_error_mm,
            self.max_dvf_error_mm,
        ]
    }

    fn from_array(v: [f64; 6]) -> Self {
        MetricSet {
            weight_nrmse: v[0],
            image_nrmse: v[1],
            cross_correlation: v[2],
            ssim: v[3],
            mean_dvf_error_mm: v[4],
            max_dvf_error_mm: v[5],
        }
    }
}

#[derive(Debug, Clone)]
pub struct TestRun {
    pub run_index: usize,
    pub seed: u64,
    pub metrics: MetricSet,
}

/// Run-averaged metrics with 95% half-ranges (absent below two runs).
#[derive(Debug, Clone)]
pub struct Aggregate {
    pub n_valid: usize,
    pub divergent_runs: usize,
    pub mean: MetricSet,
    pub half_range: Option<MetricSet>,
}

fn aggregate_runs(runs: &[TestRun], divergent: usize) -> Result<Aggregate> {
    if runs.is_empty() {
        return Err(Error::Divergence {
            context: "every test evaluation run diverged".into(),
        });
    }
    let n = runs.len();
    let mut means = [0.0; 6];
    for run in runs {
        for (acc, v) in means.iter_mut().zip(run.metrics.as_array()) {
            *acc += v;
        }
    }
    for acc in means.iter_mut() {
        *acc /= n as f64;
    }
    let half_range = if n >= 2 {
        let mut hr = [0.0; 6];
        for (i, slot) in hr.iter_mut().enumerate() {
            let samples: Vec<f64> = runs.iter().map(|r| r.metrics.as_array()[i]).collect();
            *slot = confidence_half_range(&samples)?;
        }
        Some(MetricSet::from_array(hr))
    } else {
        None
    };
    Ok(Aggregate {
        n_valid: n,
        divergent_runs: divergent,
        mean: MetricSet::from_array(means),
        half_range,
    })
}

/// Per-frame artifacts of the first valid run, for reporting.
#[derive(Debug, Clone)]
pub struct TestArtifacts {
    /// 1-based frame index of each test pair target.
    pub target_frames: Vec<usize>,
    pub truth_weights: Array2<f64>,
    pub predicted_weights: Array2<f64>,
    /// Warped frames, present only when requested.
    pub predicted_frames: Vec<Image>,
}

#[derive(Debug, Clone)]
pub struct TestEvaluation {
    pub runs: Vec<TestRun>,
    pub aggregate: Aggregate,
    pub artifacts: Option<TestArtifacts>,
}

/// Evaluates the chosen (hyper-parameters, n_cp) of one method and horizon
/// on the test range. `lk_fields` are the registered fields serving as the
/// displacement reference.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_test(
    seq: &ImageSequence,
    model: &MotionModel,
    weights_full: ArrayView2<f64>,
    lk_fields: &[DisplacementField],
    method: Method,
    h: usize,
    n_cp: usize,
    hp: HyperParams,
    grid_index: usize,
    runs: usize,
    m_train: usize,
    m_cv: usize,
    global_seed: u64,
    warp_params: &WarpParams,
    collect_frames: bool,
) -> Result<TestEvaluation> {
    let weights = weights_full.slice(s![.., ..n_cp]);
    let split = PairSplit::new(weights, hp.l, h, m_train, m_cv)?;
    let test_range = split.cv_end..split.pairs.len();
    if test_range.is_empty() {
        return Err(Error::InvalidInput(
            "no test pairs for this window and horizon".into(),
        ));
    }
    let reference = &seq.frames[0];
    let spacing = seq.pixel_spacing_mm;

    let mut test_runs = Vec::new();
    let mut divergent = 0usize;
    let mut artifacts: Option<TestArtifacts> = None;

    for r in 0..runs {
        let seed = run_seed(global_seed, method, h, n_cp, grid_index, r);
        let mut forecaster = build_forecaster(method, hp, n_cp, split.train_pairs(), seed)?;
        let outcome = run_forecaster(forecaster.as_mut(), &split.pairs)?;
        if !outcome.is_valid() {
            divergent += 1;
            continue;
        }

        let truth = split.targets(test_range.clone());
        let pred = outcome.predictions.slice(s![test_range.clone(), ..]);
        let w_nrmse = weight_nrmse(pred, truth.view())?;

        let mut sums = [0.0f64; 4];
        let mut max_dvf = 0.0f64;
        let mut frames = Vec::new();
        let mut frame_ids = Vec::new();
        for (i, n) in test_range.clone().enumerate() {
            let k = PairSplit::target_frame(n, hp.l, h);
            let field = reconstruct_padded(model, pred.row(i).as_slice().unwrap())?;
            let predicted = warp_image(reference, &field, warp_params)?;
            let truth_img = &seq.frames[k - 1];
            sums[0] += image_nrmse(&predicted, truth_img)?;
            sums[1] += cross_correlation(&predicted, truth_img)?;
            sums[2] += ssim(&predicted, truth_img)?;
            let (mean_mm, max_mm) = dvf_endpoint_errors(&field, &lk_fields[k - 1], spacing)?;
            sums[3] += mean_mm;
            max_dvf = max_dvf.max(max_mm);
            if artifacts.is_none() {
                frame_ids.push(k);
                if collect_frames {
                    frames.push(predicted);
                }
            }
        }
        let n_frames = test_range.len() as f64;
        let metrics = MetricSet {
            weight_nrmse: w_nrmse,
            image_nrmse: sums[0] / n_frames,
            cross_correlation: sums[1] / n_frames,
            ssim: sums[2] / n_frames,
            mean_dvf_error_mm: sums[3] / n_frames,
            max_dvf_error_mm: max_dvf,
        };
        if artifacts.is_none() {
            artifacts = Some(TestArtifacts {
                target_frames: frame_ids,
                truth_weights: truth,
                predicted_weights: pred.to_owned(),
                predicted_frames: frames,
            });
        }
        test_runs.push(TestRun {
            run_index: r,
            seed,
            metrics,
        });
    }

    let aggregate = aggregate_runs(&test_runs, divergent)?;
    Ok(TestEvaluation {
        runs: test_runs,
        aggregate,
        artifacts,
    })
}

/// Image-only reference row: means over the test frames of one
/// deterministic prediction rule.
#[derive(Debug, Clone)]
pub struct ImageBaseline {
    pub image_nrmse: f64,
    pub cross_correlation: f64,
    pub ssim: f64,
}

fn image_baseline<F>(seq: &ImageSequence, m_cv: usize, mut predict: F) -> Result<ImageBaseline>
where
    F: FnMut(usize) -> Result<Image>,
{
    let m = seq.len();
    if m_cv >= m {
        return Err(Error::InvalidInput(format!(
            "no test frames beyond m_cv {m_cv} in a {m}-frame sequence"
        )));
    }
    let mut sums = [0.0f64; 3];
    let mut count = 0.0;
    for k in (m_cv + 1)..=m {
        let predicted = predict(k)?;
        let truth = &seq.frames[k - 1];
        sums[0] += image_nrmse(&predicted, truth)?;
        sums[1] += cross_correlation(&predicted, truth)?;
        sums[2] += ssim(&predicted, truth)?;
        count += 1.0;
    }
    Ok(ImageBaseline {
        image_nrmse: sums[0] / count,
        cross_correlation: sums[1] / count,
        ssim: sums[2] / count,
    })
}

/// The frame h steps before the target stands in as the prediction.
pub fn previous_image_baseline(
    seq: &ImageSequence,
    h: usize,
    m_cv: usize,
) -> Result<ImageBaseline> {
    if h == 0 || h >= m_cv {
        return Err(Error::InvalidInput(format!("horizon {h} unusable")));
    }
    image_baseline(seq, m_cv, |k| Ok(seq.frames[k - 1 - h].clone()))
}

/// Warping the first frame with the registered field of the target frame
/// itself: the registration-quality bound on any forecaster.
pub fn original_dvf_bound(
    seq: &ImageSequence,
    lk_fields: &[DisplacementField],
    m_cv: usize,
    warp_params: &WarpParams,
) -> Result<ImageBaseline> {
    if lk_fields.len() != seq.len() {
        return Err(Error::InvalidInput(format!(
            "{} fields for {} frames",
            lk_fields.len(),
            seq.len()
        )));
    }
    let reference = seq.frames[0].clone();
    image_baseline(seq, m_cv, |k| {
        warp_image(&reference, &lk_fields[k - 1], warp_params)
    })
}

/// Test weight nRMSE at a fixed component count, averaged over runs.
#[derive(Debug, Clone)]
pub struct WeightEval {
    pub n_valid: usize,
    pub divergent_runs: usize,
    pub mean: f64,
    pub half_range: Option<f64>,
}

/// Runs the winning configuration over the full pair sequence and scores
/// only the test weight nRMSE; all methods see the same weight series.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_weight_forecast(
    weights_full: ArrayView2<f64>,
    method: Method,
    h: usize,
    n_cp: usize,
    hp: HyperParams,
    grid_index: usize,
    runs: usize,
    m_train: usize,
    m_cv: usize,
    global_seed: u64,
) -> Result<WeightEval> {
    let weights = weights_full.slice(s![.., ..n_cp]);
    let split = PairSplit::new(weights, hp.l, h, m_train, m_cv)?;
    let test_range = split.cv_end..split.pairs.len();
    let mut scores = Vec::with_capacity(runs);
    let mut divergent = 0usize;
    for r in 0..runs {
        let seed = run_seed(global_seed, method, h, n_cp, grid_index, r);
        let mut forecaster = build_forecaster(method, hp, n_cp, split.train_pairs(), seed)?;
        let outcome = run_forecaster(forecaster.as_mut(), &split.pairs)?;
        if !outcome.is_valid() {
            divergent += 1;
            continue;
        }
        let truth = split.targets(test_range.clone());
        let pred = outcome.predictions.slice(s![test_range.clone(), ..]);
        scores.push(weight_nrmse(pred, truth.view())?);
    }
    if scores.is_empty() {
        return Err(Error::Divergence {
            context: format!(
                "every weight evaluation run diverged ({} h={h})",
                method.label()
            ),
        });
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let half_range = if scores.len() >= 2 {
        Some(confidence_half_range(&scores)?)
    } else {
        None
    };
    Ok(WeightEval {
        n_valid: scores.len(),
        divergent_runs: divergent,
        mean,
        half_range,
    })
}
