//! Hyper-parameter grid search on the cross-validation weight nRMSE and
//! component-count selection on the mean predicted registration error.

use std::collections::HashMap;

use ndarray::{s, ArrayView2};

use crate::error::{Error, Result};
use crate::forecast::runner::{build_forecaster, run_forecaster, PairSplit};
use crate::forecast::{HyperParams, Method};
use crate::metrics::{instant_nrmse_frame, weight_nrmse};
use crate::pca::{reconstruct, MotionModel};
use crate::sequence::ImageSequence;

use super::config::ExperimentConfig;
use super::seed::run_seed;

/// Expands the configured grid of one method, in grid order (ties in later
/// searches resolve to the earliest entry). Methods without a learning rate
/// or hidden state get placeholder zeros in the unused fields.
pub fn method_grid(cfg: &ExperimentConfig, method: Method) -> Vec<HyperParams> {
    let mut out = Vec::new();
    if method.uses_hidden_units() {
        for &eta in &cfg.rnn_grid.etas {
            for &l in &cfg.rnn_grid.signal_lengths {
                for &q in &cfg.rnn_grid.hidden_units {
                    out.push(HyperParams { eta, l, q });
                }
            }
        }
    } else {
        match method {
            Method::Lms => {
                for &eta in &cfg.lms_grid.etas {
                    for &l in &cfg.lms_grid.signal_lengths {
                        out.push(HyperParams { eta, l, q: 0 });
                    }
                }
            }
            Method::Linreg => {
                for &l in &cfg.linreg_grid.signal_lengths {
                    out.push(HyperParams { eta: 0.0, l, q: 0 });
                }
            }
            Method::PreviousWeight => out.push(HyperParams {
                eta: 0.0,
                l: 1,
                q: 0,
            }),
            _ => unreachable!("hidden-unit methods handled above"),
        }
    }
    out
}

/// One grid cell: its cross-validation score averaged over the runs that
/// stayed finite, or None when every run diverged.
#[derive(Debug, Clone)]
pub struct GridCell {
    pub hp: HyperParams,
    pub cv_nrmse: Option<f64>,
    pub divergent_runs: usize,
    pub total_runs: usize,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub cells: Vec<GridCell>,
    /// Index of the best valid cell; None when the whole grid diverged.
    pub best: Option<usize>,
}

impl GridOutcome {
    pub fn best_cell(&self) -> Result<(usize, &GridCell)> {
        match self.best {
            Some(i) => Ok((i, &self.cells[i])),
            None => Err(Error::Divergence {
                context: "every grid combination diverged on all runs".into(),
            }),
        }
    }
}

/// Shared split cache: pair construction depends only on the window length
/// once (weights, h, m_train, m_cv) are fixed.
pub struct SplitCache<'a> {
    weights: ArrayView2<'a, f64>,
    h: usize,
    m_train: usize,
    m_cv: usize,
    by_l: HashMap<usize, PairSplit>,
}

impl<'a> SplitCache<'a> {
    pub fn new(weights: ArrayView2<'a, f64>, h: usize, m_train: usize, m_cv: usize) -> Self {
        SplitCache {
            weights,
            h,
            m_train,
            m_cv,
            by_l: HashMap::new(),
        }
    }

    pub fn get(&mut self, l: usize) -> Result<&PairSplit> {
        if !self.by_l.contains_key(&l) {
            let split = PairSplit::new(self.weights, l, self.h, self.m_train, self.m_cv)?;
            self.by_l.insert(l, split);
        }
        Ok(&self.by_l[&l])
    }
}

/// Score of one finished (or diverged) pass over the train+cv prefix.
fn cv_score(split: &PairSplit, predictions: &ndarray::Array2<f64>) -> Result<f64> {
    let truth = split.targets(split.train_end..split.cv_end);
    let pred = predictions.slice(s![split.train_end..split.cv_end, ..]);
    weight_nrmse(pred, truth.view())
}

/// Runs every grid combination `runs` times over the training and
/// cross-validation ranges and scores it by the run-averaged cv weight
/// nRMSE. `weights` must hold exactly the first n_cp components.
#[allow(clippy::too_many_arguments)]
pub fn run_grid_search(
    weights: ArrayView2<f64>,
    method: Method,
    h: usize,
    n_cp: usize,
    grid: &[HyperParams],
    runs: usize,
    m_train: usize,
    m_cv: usize,
    global_seed: u64,
) -> Result<GridOutcome> {
    if grid.is_empty() {
        return Err(Error::Config("empty hyper-parameter grid".into()));
    }
    if weights.ncols() != n_cp {
        return Err(Error::ShapeMismatch {
            expected: format!("{n_cp} weight columns"),
            got: format!("{}", weights.ncols()),
        });
    }
    let mut cache = SplitCache::new(weights, h, m_train, m_cv);
    let mut cells = Vec::with_capacity(grid.len());
    for (g, hp) in grid.iter().enumerate() {
        let split = cache.get(hp.l)?;
        let mut scores = Vec::with_capacity(runs);
        let mut divergent = 0usize;
        for r in 0..runs {
            let seed = run_seed(global_seed, method, h, n_cp, g, r);
            let mut forecaster = build_forecaster(method, *hp, n_cp, split.train_pairs(), seed)?;
            let outcome = run_forecaster(forecaster.as_mut(), &split.pairs[..split.cv_end])?;
            if outcome.is_valid() {
                scores.push(cv_score(split, &outcome.predictions)?);
            } else {
                divergent += 1;
            }
        }
        let cv_nrmse = if scores.is_empty() {
            None
        } else {
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        };
        cells.push(GridCell {
            hp: *hp,
            cv_nrmse,
            divergent_runs: divergent,
            total_runs: runs,
        });
    }
    let ranked: Vec<Option<f64>> = cells.iter().map(|c| c.cv_nrmse).collect();
    let best = choose_min_error(&ranked);
    Ok(GridOutcome { cells, best })
}

/// One component count competing in the selection, carrying its grid-search
/// winner.
#[derive(Debug, Clone)]
pub struct NcpCandidate {
    pub n_cp: usize,
    pub hp: HyperParams,
    pub grid_index: usize,
}

#[derive(Debug, Clone)]
pub struct NcpScore {
    pub candidate: NcpCandidate,
    pub e_pred: Option<f64>,
    pub divergent_runs: usize,
    pub total_runs: usize,
}

#[derive(Debug, Clone)]
pub struct NcpSelection {
    pub scores: Vec<NcpScore>,
    /// Index into `scores` of the chosen component count.
    pub chosen: usize,
}

/// Scores each candidate component count by the mean normalized
/// registration RMSE of the reconstructed predicted fields over the
/// cross-validation range, averaged over `runs` reruns of the grid-search
/// winner (same seeds as the first `runs` search runs), and picks the
/// minimum; ties go to the smaller count.
#[allow(clippy::too_many_arguments)]
pub fn select_n_cp(
    seq: &ImageSequence,
    model: &MotionModel,
    weights_full: ArrayView2<f64>,
    method: Method,
    h: usize,
    candidates: &[NcpCandidate],
    runs: usize,
    m_train: usize,
    m_cv: usize,
    global_seed: u64,
) -> Result<NcpSelection> {
    if candidates.is_empty() {
        return Err(Error::Config("no component counts to select from".into()));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let weights = weights_full.slice(s![.., ..cand.n_cp]);
        let split = PairSplit::new(weights, cand.hp.l, h, m_train, m_cv)?;
        let mut run_means = Vec::with_capacity(runs);
        let mut divergent = 0usize;
        for r in 0..runs {
            let seed = run_seed(global_seed, method, h, cand.n_cp, cand.grid_index, r);
            let mut forecaster =
                build_forecaster(method, cand.hp, cand.n_cp, split.train_pairs(), seed)?;
            let outcome = run_forecaster(forecaster.as_mut(), &split.pairs[..split.cv_end])?;
            if !outcome.is_valid() {
                divergent += 1;
                continue;
            }
            let mut sum = 0.0;
            let mut count = 0usize;
            for n in split.train_end..split.cv_end {
                let k = PairSplit::target_frame(n, cand.hp.l, h);
                let field = reconstruct_padded(
                    model,
                    outcome.predictions.row(n).as_slice().unwrap(),
                )?;
                sum += instant_nrmse_frame(&field, seq, k - 1)?;
                count += 1;
            }
            run_means.push(sum / count as f64);
        }
        let e_pred = if run_means.is_empty() {
            None
        } else {
            Some(run_means.iter().sum::<f64>() / run_means.len() as f64)
        };
        scores.push(NcpScore {
            candidate: cand.clone(),
            e_pred,
            divergent_runs: divergent,
            total_runs: runs,
        });
    }
    let ranked: Vec<Option<f64>> = scores.iter().map(|s| s.e_pred).collect();
    match choose_min_error(&ranked) {
        Some(chosen) => Ok(NcpSelection { scores, chosen }),
        None => Err(Error::Divergence {
            context: format!(
                "all runs diverged for every candidate n_cp ({} h={h})",
                method.label()
            ),
        }),
    }
}

/// Index of the smallest present error; ties resolve to the earliest entry,
/// which is the smallest n_cp when entries are in ascending order.
pub fn choose_min_error(errors: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in errors.iter().enumerate() {
        if let Some(e) = e {
            if best.map_or(true, |b| *e < errors[b].unwrap()) {
                best = Some(i);
            }
        }
    }
    best
}

/// Reconstructs a field from the first `weights.len()` components of a
/// model that may hold more, treating the remaining weights as zero.
pub fn reconstruct_padded(
    model: &MotionModel,
    weights: &[f64],
) -> Result<crate::dvf::DisplacementField> {
    if weights.len() > model.n_cp {
        return Err(Error::InvalidInput(format!(
            "{} weights exceed the model's {} components",
            weights.len(),
            model.n_cp
        )));
    }
    let mut padded = vec![0.0; model.n_cp];
    padded[..weights.len()].copy_from_slice(weights);
    reconstruct(model, &padded)
}
