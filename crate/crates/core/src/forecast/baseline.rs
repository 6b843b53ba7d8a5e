//! Reference baselines: repeating the last observed weight vector, and an
//! RNN whose hidden layer stays frozen at its random initialization with
//! only the readout W_c trained.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::rnn::{apply_sgd, loss_dy, wc_gradient, RnnCore, RnnDims, RnnGradient};
use super::{Forecaster, Normalizer, SIGMA_INIT, TAU_RNN};

/// Shifted-series form of the previous-weight baseline: row i of the output
/// predicts w(t_{i+h}) as w(t_i), so it aligns with truth rows i+h.
pub fn predict_baseline_previous(weights: ArrayView2<f64>, h: usize) -> Result<Array2<f64>> {
    let m = weights.nrows();
    if h > m {
        return Err(Error::InvalidInput(format!(
            "horizon {h} exceeds the {m} available steps"
        )));
    }
    Ok(weights.slice(ndarray::s![..m - h, ..]).to_owned())
}

/// Pair-level previous-weight baseline: the prediction is the most recent
/// weight vector in the input window, w(t_{n+L-1}).
#[derive(Debug, Clone)]
pub struct PreviousWeight {
    p: usize,
}

impl PreviousWeight {
    pub fn new(p: usize) -> Self {
        PreviousWeight { p }
    }
}

impl Forecaster for PreviousWeight {
    fn step(&mut self, input: ArrayView1<f64>, _target: ArrayView1<f64>) -> Result<Array1<f64>> {
        let len = input.len();
        if len < self.p + 1 {
            return Err(Error::ShapeMismatch {
                expected: format!("input of at least {} entries", self.p + 1),
                got: format!("{len}"),
            });
        }
        Ok(input.slice(ndarray::s![len - self.p..]).to_owned())
    }
}

/// RNN with a frozen hidden layer: W_a and W_b keep their initial draw,
/// only W_c is trained by clipped SGD on the instantaneous loss.
#[derive(Debug, Clone)]
pub struct FrozenRnnTrainer {
    core: RnnCore,
    eta: f64,
    norm: Normalizer,
}

impl FrozenRnnTrainer {
    pub fn new(dims: RnnDims, eta: f64, norm: Normalizer, seed: u64) -> Result<Self> {
        if norm.input_len() != dims.m1 {
            return Err(Error::ShapeMismatch {
                expected: format!("stats of length {}", dims.m1),
                got: format!("{}", norm.input_len()),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(FrozenRnnTrainer {
            core: RnnCore::init(dims, SIGMA_INIT, &mut rng),
            eta,
            norm,
        })
    }

    pub fn core(&self) -> &RnnCore {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut RnnCore {
        &mut self.core
    }

    /// Forward pass plus the exact W_c gradient; weights untouched.
    pub fn gradient_step(
        &mut self,
        u: ArrayView1<f64>,
        target: ArrayView1<f64>,
    ) -> Result<(RnnGradient, Array1<f64>)> {
        let (x_new, y) = self.core.forward(u)?;
        let dl_dy = loss_dy(&y, target);
        let grad = RnnGradient {
            d_wa: Array2::zeros((self.core.dims.q, self.core.dims.q)),
            d_wb: Array2::zeros((self.core.dims.q, self.core.dims.m1)),
            d_wc: wc_gradient(&dl_dy, &x_new),
        };
        self.core.x = x_new;
        Ok((grad, y))
    }
}

impl Forecaster for FrozenRnnTrainer {
    fn step(&mut self, input: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<Array1<f64>> {
        let u = self.norm.input(input);
        let t = self.norm.target(target);
        let (grad, y) = self.gradient_step(u.view(), t.view())?;
        apply_sgd(&mut self.core, &grad, self.eta, TAU_RNN);
        if !self.core.is_finite() {
            return Err(Error::Divergence {
                context: "frozen rnn state became non-finite".into(),
            });
        }
        Ok(self.norm.output(y.view()))
    }
}
