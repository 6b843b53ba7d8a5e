//! Streaming execution of one forecaster over a pair sequence: predict,
//! then adapt, in time order. Divergent runs are flagged and cut short
//! rather than silently averaged into statistics.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

use super::baseline::{FrozenRnnTrainer, PreviousWeight};
use super::dni::DniTrainer;
use super::linreg::LinRegPredictor;
use super::lms::LmsFilter;
use super::rnn::RnnDims;
use super::rtrl::RtrlTrainer;
use super::snap1::Snap1Trainer;
use super::uoro::UoroTrainer;
use super::{
    Forecaster, HyperParams, Method, NormalizationStats, Normalizer, SupervisedPair,
};

/// The predictions of one pass over the pairs, in the original space.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// One row per pair; rows from the divergence point on are NaN.
    pub predictions: Array2<f64>,
    /// Index of the pair whose step diverged, if any.
    pub diverged_at: Option<usize>,
}

impl RunOutcome {
    pub fn is_valid(&self) -> bool {
        self.diverged_at.is_none()
    }
}

/// Runs `forecaster` over all pairs in order.
pub fn run_forecaster(
    forecaster: &mut dyn Forecaster,
    pairs: &[SupervisedPair],
) -> Result<RunOutcome> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no pairs to forecast".into()));
    }
    let p = pairs[0].target.len();
    let mut predictions = Array2::from_elem((pairs.len(), p), f64::NAN);
    let mut diverged_at = None;
    for (n, pair) in pairs.iter().enumerate() {
        match forecaster.step(pair.input.view(), pair.target.view()) {
            Ok(y) if y.iter().all(|v| v.is_finite()) => {
                predictions.row_mut(n).assign(&y);
            }
            Ok(_) | Err(Error::Divergence { .. }) => {
                diverged_at = Some(n);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(RunOutcome {
        predictions,
        diverged_at,
    })
}

/// Builds a ready-to-run forecaster. `train_pairs` is the training slice in
/// the original space: it supplies the normalization stats and, for linear
/// regression, the fit itself. `seed` only matters for stochastic methods.
pub fn build_forecaster(
    method: Method,
    hp: HyperParams,
    n_cp: usize,
    train_pairs: &[SupervisedPair],
    seed: u64,
) -> Result<Box<dyn Forecaster>> {
    let stats = NormalizationStats::from_training_inputs(train_pairs)?;
    let norm = Normalizer::new(stats, n_cp)?;
    let dims = RnnDims {
        q: hp.q,
        m1: norm.input_len(),
        p: n_cp,
    };
    Ok(match method {
        Method::Rtrl => Box::new(RtrlTrainer::new(dims, hp.eta, norm, seed)?),
        Method::Uoro => Box::new(UoroTrainer::new(dims, hp.eta, norm, seed)?),
        Method::Snap1 => Box::new(Snap1Trainer::new(dims, hp.eta, norm, seed)?),
        Method::Dni => Box::new(DniTrainer::new(dims, hp.eta, norm, seed)?),
        Method::Lms => Box::new(LmsFilter::new(n_cp, hp.eta, norm)?),
        Method::Linreg => Box::new(LinRegPredictor::fit(train_pairs, norm)?),
        Method::PreviousWeight => Box::new(PreviousWeight::new(n_cp)),
        Method::FrozenRnn => Box::new(FrozenRnnTrainer::new(dims, hp.eta, norm, seed)?),
    })
}

/// Pair bookkeeping for one (L, h) choice over an M-step weight series:
/// all pairs in time order plus the boundaries of the train and
/// cross-validation prefixes (pairs are classified by the frame their
/// target lands on).
#[derive(Debug, Clone)]
pub struct PairSplit {
    pub pairs: Vec<SupervisedPair>,
    pub train_end: usize,
    pub cv_end: usize,
}

impl PairSplit {
    /// `m_train` and `m_cv` are 1-based frame counts as in the protocol.
    pub fn new(
        weights: ArrayView2<f64>,
        l: usize,
        h: usize,
        m_train: usize,
        m_cv: usize,
    ) -> Result<Self> {
        let m = weights.nrows();
        if !(2 <= m_train && m_train < m_cv && m_cv < m) {
            return Err(Error::InvalidInput(format!(
                "split 2 <= {m_train} < {m_cv} < {m} violated"
            )));
        }
        let n_pairs = m
            .checked_sub(l + h)
            .map(|v| v + 1)
            .ok_or_else(|| Error::InvalidInput("series shorter than window".into()))?;
        let pairs = super::make_supervised_pairs(weights, l, h, 0..n_pairs)?;
        // Pair n targets frame n+l+h (1-based); it trains while that frame
        // is still inside the training range.
        let train_end = m_train.saturating_sub(l + h - 1).min(n_pairs);
        let cv_end = m_cv.saturating_sub(l + h - 1).min(n_pairs);
        if train_end == 0 {
            return Err(Error::InvalidInput(format!(
                "no training pairs: window {l} + horizon {h} exhausts the first {m_train} frames"
            )));
        }
        if cv_end <= train_end {
            return Err(Error::InvalidInput(
                "no cross-validation pairs for this window and horizon".into(),
            ));
        }
        Ok(PairSplit {
            pairs,
            train_end,
            cv_end,
        })
    }

    pub fn train_pairs(&self) -> &[SupervisedPair] {
        &self.pairs[..self.train_end]
    }

    /// 1-based frame index targeted by pair `n`, given (l, h).
    pub fn target_frame(n: usize, l: usize, h: usize) -> usize {
        n + l + h
    }

    /// Truth matrix for a pair range, one row per pair.
    pub fn targets(&self, range: std::ops::Range<usize>) -> Array2<f64> {
        let p = self.pairs[0].target.len();
        let mut out = Array2::zeros((range.len(), p));
        for (i, n) in range.enumerate() {
            out.row_mut(i).assign(&self.pairs[n].target);
        }
        out
    }
}
