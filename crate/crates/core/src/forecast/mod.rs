//! Online forecasting of the PCA weight series.
//!
//! The series w(t_1..t_M) is turned into supervised pairs: the input u_n
//! concatenates a leading bias 1 with the weights of L successive steps
//! (all components of t_n, then all of t_{n+1}, ...), the target is the
//! weight vector h steps after the end of the window, at t_{n+L+h-1}.
//! Trainers consume the pairs in time order, predicting before adapting.

pub mod baseline;
pub mod dni;
pub mod linreg;
pub mod lms;
pub mod rnn;
pub mod rtrl;
pub mod runner;
pub mod snap1;
pub mod uoro;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gradient clip threshold for the RNN trainers.
pub const TAU_RNN: f64 = 100.0;
/// Gradient clip threshold for LMS (Frobenius norm of the update).
pub const TAU_LMS: f64 = 2.0;
/// Std of the Gaussian RNN weight initialization.
pub const SIGMA_INIT: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedPair {
    /// Length n_cp * L + 1, leading bias 1.
    pub input: Array1<f64>,
    /// Length n_cp: the weights at t_{n+L+h-1}.
    pub target: Array1<f64>,
}

/// Builds one pair per window start in `range` (0-based, start n maps to
/// input steps n..n+L-1 and target step n+L+h-1).
pub fn make_supervised_pairs(
    weights: ArrayView2<f64>,
    l: usize,
    h: usize,
    range: std::ops::Range<usize>,
) -> Result<Vec<SupervisedPair>> {
    let m = weights.nrows();
    let n_cp = weights.ncols();
    if l < 1 {
        return Err(Error::InvalidInput("signal history length must be >= 1".into()));
    }
    if !(1..=7).contains(&h) {
        return Err(Error::InvalidInput(format!("horizon must be in 1..=7, got {h}")));
    }
    if l + h > m {
        return Err(Error::InvalidInput(format!(
            "window of {l} steps plus horizon {h} does not fit in {m} samples"
        )));
    }
    let last_start = m - l - h;
    if range.is_empty() || range.end > last_start + 1 {
        return Err(Error::InvalidInput(format!(
            "pair range {range:?} outside the valid starts 0..={last_start}"
        )));
    }
    let mut pairs = Vec::with_capacity(range.len());
    for n in range {
        let mut input = Array1::zeros(n_cp * l + 1);
        input[0] = 1.0;
        for step in 0..l {
            for j in 0..n_cp {
                input[1 + step * n_cp + j] = weights[[n + step, j]];
            }
        }
        let target = weights.row(n + l + h - 1).to_owned();
        pairs.push(SupervisedPair { input, target });
    }
    Ok(pairs)
}

#[derive(Debug, Clone)]
pub struct NormalizationStats {
    pub mu: Array1<f64>,
    pub sigma: Array1<f64>,
}

impl NormalizationStats {
    /// Identity stats: normalization becomes a no-op.
    pub fn identity(len: usize) -> Self {
        NormalizationStats {
            mu: Array1::zeros(len),
            sigma: Array1::ones(len),
        }
    }

    /// Per-coordinate mean and population std of the training inputs.
    /// Coordinates with zero variance (the bias among them) are left
    /// untouched by normalization: mu 0, sigma 1.
    pub fn from_training_inputs(pairs: &[SupervisedPair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput(
                "normalization stats need at least one training pair".into(),
            ));
        }
        let len = pairs[0].input.len();
        let n = pairs.len() as f64;
        let mut mu = Array1::zeros(len);
        for p in pairs {
            if p.input.len() != len {
                return Err(Error::ShapeMismatch {
                    expected: format!("input length {len}"),
                    got: format!("{}", p.input.len()),
                });
            }
            mu += &p.input;
        }
        mu /= n;
        let mut sigma = Array1::<f64>::zeros(len);
        for p in pairs {
            for (s, (v, m)) in sigma.iter_mut().zip(p.input.iter().zip(mu.iter())) {
                *s += (v - m) * (v - m);
            }
        }
        sigma.mapv_inplace(|v| (v / n).sqrt());
        for (s, m) in sigma.iter_mut().zip(mu.iter_mut()) {
            if *s <= 1e-12 * (1.0 + m.abs()) {
                *s = 1.0;
                *m = 0.0;
            }
        }
        Ok(NormalizationStats { mu, sigma })
    }
}

/// Applies input normalization and output rescaling for one forecaster.
/// Targets and outputs use the stats of the first-step weight entries
/// (input coordinates 1..=p), which carry the same signals.
#[derive(Debug, Clone)]
pub struct Normalizer {
    stats: NormalizationStats,
    p: usize,
}

impl Normalizer {
    pub fn new(stats: NormalizationStats, p: usize) -> Result<Self> {
        if stats.mu.len() != stats.sigma.len() || stats.mu.len() < p + 1 {
            return Err(Error::InvalidInput(format!(
                "stats of length {} cannot serve {p} outputs",
                stats.mu.len()
            )));
        }
        Ok(Normalizer { stats, p })
    }

    pub fn input_len(&self) -> usize {
        self.stats.mu.len()
    }

    pub fn stats(&self) -> &NormalizationStats {
        &self.stats
    }

    pub fn input(&self, u: ArrayView1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(u.len());
        for (o, ((v, m), s)) in out
            .iter_mut()
            .zip(u.iter().zip(self.stats.mu.iter()).zip(self.stats.sigma.iter()))
        {
            *o = (v - m) / s;
        }
        out
    }

    pub fn target(&self, y: ArrayView1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.p);
        for j in 0..self.p {
            out[j] = (y[j] - self.stats.mu[1 + j]) / self.stats.sigma[1 + j];
        }
        out
    }

    /// Exact inverse of `target`.
    pub fn output(&self, y: ArrayView1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.p);
        for j in 0..self.p {
            out[j] = self.stats.sigma[1 + j] * y[j] + self.stats.mu[1 + j];
        }
        out
    }
}

/// Scales `g` to norm `tau` when it exceeds it.
pub fn clip_gradient(g: &ArrayView1<f64>, tau: f64) -> Array1<f64> {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= tau {
        g.to_owned()
    } else {
        g.mapv(|v| v * tau / norm)
    }
}

/// Scale factor that caps a gradient of norm `norm` at `tau`.
pub(crate) fn clip_scale(norm: f64, tau: f64) -> f64 {
    if norm <= tau || norm == 0.0 {
        1.0
    } else {
        tau / norm
    }
}

/// The forecasting methods under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rtrl,
    Uoro,
    Snap1,
    Dni,
    Lms,
    Linreg,
    PreviousWeight,
    FrozenRnn,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Rtrl,
        Method::Uoro,
        Method::Snap1,
        Method::Dni,
        Method::Lms,
        Method::Linreg,
        Method::PreviousWeight,
        Method::FrozenRnn,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Rtrl => "rtrl",
            Method::Uoro => "uoro",
            Method::Snap1 => "snap1",
            Method::Dni => "dni",
            Method::Lms => "lms",
            Method::Linreg => "linreg",
            Method::PreviousWeight => "previous_weight",
            Method::FrozenRnn => "frozen_rnn",
        }
    }

    /// Methods whose runs depend on the seed; the others are run once.
    pub fn is_stochastic(&self) -> bool {
        matches!(
            self,
            Method::Rtrl | Method::Uoro | Method::Snap1 | Method::Dni | Method::FrozenRnn
        )
    }

    pub fn uses_hidden_units(&self) -> bool {
        matches!(
            self,
            Method::Rtrl | Method::Uoro | Method::Snap1 | Method::Dni | Method::FrozenRnn
        )
    }

    pub fn uses_learning_rate(&self) -> bool {
        self.uses_hidden_units() || matches!(self, Method::Lms)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method '{s}'")))
    }
}

/// One hyper-parameter combination; fields irrelevant to a method are
/// simply ignored by it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub eta: f64,
    pub l: usize,
    pub q: usize,
}

/// An online predictor of the next weight vector. `step` predicts the
/// target of one pair in the original (denormalized) space, then adapts
/// whatever internal state the method keeps.
pub trait Forecaster {
    fn step(&mut self, input: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<Array1<f64>>;
}
