//! Decoupled neural interfaces: the future part of the gradient is replaced
//! by a learned linear synthetic credit c(x) = A [x; 1] estimating
//! dL_future/dx. The recurrent weights are trained by backpropagating the
//! sum of the instantaneous and synthetic credits through one step; A is
//! trained toward a one-step bootstrap target. Biased but cheap: O(q^2).

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::rnn::{apply_sgd, loss_dy, wc_gradient, RnnCore, RnnDims, RnnGradient};
use super::{clip_scale, Forecaster, Normalizer, SIGMA_INIT, TAU_RNN};

#[derive(Debug, Clone)]
pub struct DniTrainer {
    core: RnnCore,
    /// Synthetic-credit coefficients, q x (q+1); column q multiplies the 1.
    a_mat: Array2<f64>,
    eta: f64,
    norm: Normalizer,
}

impl DniTrainer {
    pub fn new(dims: RnnDims, eta: f64, norm: Normalizer, seed: u64) -> Result<Self> {
        if norm.input_len() != dims.m1 {
            return Err(Error::ShapeMismatch {
                expected: format!("stats of length {}", dims.m1),
                got: format!("{}", norm.input_len()),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let core = RnnCore::init(dims, SIGMA_INIT, &mut rng);
        // A is randomly initialized like the synaptic weights.
        let dist = rand_distr::Normal::new(0.0, SIGMA_INIT).expect("finite init std");
        let a_mat = Array2::from_shape_fn((dims.q, dims.q + 1), |_| {
            rand_distr::Distribution::sample(&dist, &mut rng)
        });
        Ok(DniTrainer {
            core,
            a_mat,
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

    pub fn synthetic_coefficients(&self) -> &Array2<f64> {
        &self.a_mat
    }

    pub fn synthetic_coefficients_mut(&mut self) -> &mut Array2<f64> {
        &mut self.a_mat
    }

    /// c(x) = A [x; 1].
    fn credit(&self, x: &Array1<f64>) -> Array1<f64> {
        let q = self.core.dims.q;
        let mut c = Array1::zeros(q);
        for i in 0..q {
            let mut acc = self.a_mat[[i, q]];
            for j in 0..q {
                acc += self.a_mat[[i, j]] * x[j];
            }
            c[i] = acc;
        }
        c
    }

    fn check_finite(&self) -> Result<()> {
        if self.core.is_finite() && self.a_mat.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Divergence {
                context: "dni state became non-finite".into(),
            })
        }
    }
}

impl Forecaster for DniTrainer {
    fn step(&mut self, input: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<Array1<f64>> {
        let dims = self.core.dims;
        let u = self.norm.input(input);
        let t = self.norm.target(target);
        let x_old = self.core.x.clone();
        let (x_new, y) = self.core.forward(u.view())?;
        let d = x_new.mapv(|v| 1.0 - v * v);

        let dl_dy = loss_dy(&y, t.view());
        let dl_dx1 = self.core.w_c.t().dot(&dl_dy);
        // Total credit at x_{n+1}: instantaneous plus synthetic future part.
        let mut g_x = dl_dx1.clone();
        g_x += &self.credit(&x_new);
        // Back through the tanh.
        let da = &d * &g_x;

        let grad = RnnGradient {
            d_wa: Array2::from_shape_fn((dims.q, dims.q), |(i, j)| da[i] * x_old[j]),
            d_wb: Array2::from_shape_fn((dims.q, dims.m1), |(i, j)| da[i] * u[j]),
            d_wc: wc_gradient(&dl_dy, &x_new),
        };

        // Bootstrap target for c(x_n): credit flowing back through the step
        // Jacobian, T = W_a^T diag(d) (dl/dx_{n+1} + c(x_{n+1})) = W_a^T da.
        let boot = self.core.w_a.t().dot(&da);
        let pred_credit = self.credit(&x_old);
        let mut d_a = Array2::zeros((dims.q, dims.q + 1));
        for i in 0..dims.q {
            let r = 2.0 * (pred_credit[i] - boot[i]);
            for j in 0..dims.q {
                d_a[[i, j]] = r * x_old[j];
            }
            d_a[[i, dims.q]] = r;
        }

        apply_sgd(&mut self.core, &grad, self.eta, TAU_RNN);
        let a_norm = d_a.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.a_mat.scaled_add(-self.eta * clip_scale(a_norm, TAU_RNN), &d_a);
        self.core.x = x_new;
        self.check_finite()?;
        Ok(self.norm.output(y.view()))
    }
}
