//! SnAp-1: sparse one-step approximation of the influence matrix. Each
//! recurrent parameter (i, j) only tracks its effect on its owning hidden
//! unit i, so the influence reduces to one scalar per parameter and the
//! recursion only involves the diagonal of the state Jacobian:
//! s'(i,j) = d_i (W_a[i,i] s(i,j) + immediate partial).

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::rnn::{apply_sgd, loss_dy, wc_gradient, RnnCore, RnnDims, RnnGradient};
use super::{Forecaster, Normalizer, SIGMA_INIT, TAU_RNN};

#[derive(Debug, Clone)]
pub struct Snap1Trainer {
    core: RnnCore,
    /// s_wa[i][j] = dx_i/dW_a[i,j] under the diagonal approximation.
    s_wa: Array2<f64>,
    /// s_wb[i][j] = dx_i/dW_b[i,j].
    s_wb: Array2<f64>,
    eta: f64,
    norm: Normalizer,
}

impl Snap1Trainer {
    pub fn new(dims: RnnDims, eta: f64, norm: Normalizer, seed: u64) -> Result<Self> {
        if norm.input_len() != dims.m1 {
            return Err(Error::ShapeMismatch {
                expected: format!("stats of length {}", dims.m1),
                got: format!("{}", norm.input_len()),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Snap1Trainer {
            core: RnnCore::init(dims, SIGMA_INIT, &mut rng),
            s_wa: Array2::zeros((dims.q, dims.q)),
            s_wb: Array2::zeros((dims.q, dims.m1)),
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

    pub fn influence_wa(&self) -> &Array2<f64> {
        &self.s_wa
    }

    pub fn influence_wb(&self) -> &Array2<f64> {
        &self.s_wb
    }

    pub fn gradient_step(
        &mut self,
        u: ArrayView1<f64>,
        target: ArrayView1<f64>,
    ) -> Result<(RnnGradient, Array1<f64>)> {
        let dims = self.core.dims;
        let (x_new, y) = self.core.forward(u)?;
        let d = x_new.mapv(|v| 1.0 - v * v);

        for i in 0..dims.q {
            let fii = d[i] * self.core.w_a[[i, i]];
            for j in 0..dims.q {
                self.s_wa[[i, j]] = fii * self.s_wa[[i, j]] + d[i] * self.core.x[j];
            }
            for j in 0..dims.m1 {
                self.s_wb[[i, j]] = fii * self.s_wb[[i, j]] + d[i] * u[j];
            }
        }

        let dl_dy = loss_dy(&y, target);
        let dl_dx = self.core.w_c.t().dot(&dl_dy);
        let mut d_wa = Array2::zeros((dims.q, dims.q));
        let mut d_wb = Array2::zeros((dims.q, dims.m1));
        for i in 0..dims.q {
            for j in 0..dims.q {
                d_wa[[i, j]] = dl_dx[i] * self.s_wa[[i, j]];
            }
            for j in 0..dims.m1 {
                d_wb[[i, j]] = dl_dx[i] * self.s_wb[[i, j]];
            }
        }
        let grad = RnnGradient {
            d_wa,
            d_wb,
            d_wc: wc_gradient(&dl_dy, &x_new),
        };
        self.core.x = x_new;
        Ok((grad, y))
    }

    fn check_finite(&self) -> Result<()> {
        if self.core.is_finite()
            && self.s_wa.iter().all(|v| v.is_finite())
            && self.s_wb.iter().all(|v| v.is_finite())
        {
            Ok(())
        } else {
            Err(Error::Divergence {
                context: "snap1 state became non-finite".into(),
            })
        }
    }
}

impl Forecaster for Snap1Trainer {
    fn step(&mut self, input: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<Array1<f64>> {
        let u = self.norm.input(input);
        let t = self.norm.target(target);
        let (grad, y) = self.gradient_step(u.view(), t.view())?;
        apply_sgd(&mut self.core, &grad, self.eta, TAU_RNN);
        self.check_finite()?;
        Ok(self.norm.output(y.view()))
    }
}
