//! Unbiased online recurrent optimization: keeps a rank-one stochastic
//! approximation x_tilde theta_tilde^T of the influence matrix, refreshed
//! each step with a random sign vector and variance-balancing mixing
//! coefficients. O(q^2 + q n_rec) per step, unbiased in expectation.

use ndarray::{Array1, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::rnn::{apply_sgd, loss_dy, wc_gradient, RnnCore, RnnDims, RnnGradient};
use super::{Forecaster, Normalizer, SIGMA_INIT, TAU_RNN};

/// Floor under the norms entering the mixing ratios.
const RHO_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct UoroTrainer {
    core: RnnCore,
    x_tilde: Array1<f64>,
    theta_tilde: Array1<f64>,
    eta: f64,
    norm: Normalizer,
    rng: ChaCha8Rng,
}

impl UoroTrainer {
    pub fn new(dims: RnnDims, eta: f64, norm: Normalizer, seed: u64) -> Result<Self> {
        if norm.input_len() != dims.m1 {
            return Err(Error::ShapeMismatch {
                expected: format!("stats of length {}", dims.m1),
                got: format!("{}", norm.input_len()),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(UoroTrainer {
            core: RnnCore::init(dims, SIGMA_INIT, &mut rng),
            x_tilde: Array1::zeros(dims.q),
            theta_tilde: Array1::zeros(dims.n_rec()),
            eta,
            norm,
            rng,
        })
    }

    pub fn core(&self) -> &RnnCore {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut RnnCore {
        &mut self.core
    }

    /// Replaces the noise stream; initialization is untouched.
    pub fn reseed_noise(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// One forward pass plus the rank-one recursion; returns the stochastic
    /// gradient estimate without applying it.
    pub fn gradient_step(
        &mut self,
        u: ArrayView1<f64>,
        target: ArrayView1<f64>,
    ) -> Result<(RnnGradient, Array1<f64>)> {
        let dims = self.core.dims;
        let (x_new, y) = self.core.forward(u)?;
        let d = x_new.mapv(|v| 1.0 - v * v);

        // State Jacobian applied to x_tilde: diag(d) W_a x_tilde.
        let mut fx = self.core.w_a.dot(&self.x_tilde);
        for (f, di) in fx.iter_mut().zip(d.iter()) {
            *f *= di;
        }

        // Sign probe and its projection through the immediate partials:
        // delta_theta[col(i,j)] = nu_i d_i x_j (W_a) or nu_i d_i u_j (W_b).
        let nu = Array1::from_shape_fn(dims.q, |_| {
            if self.rng.gen::<bool>() {
                1.0
            } else {
                -1.0
            }
        });
        let mut delta_theta = Array1::zeros(dims.n_rec());
        for i in 0..dims.q {
            let ndi = nu[i] * d[i];
            for j in 0..dims.q {
                delta_theta[dims.idx_wa(i, j)] = ndi * self.core.x[j];
            }
            for j in 0..dims.m1 {
                delta_theta[dims.idx_wb(i, j)] = ndi * u[j];
            }
        }

        let norm2 = |v: &Array1<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rho0 = (norm2(&self.theta_tilde).max(RHO_FLOOR) / norm2(&fx).max(RHO_FLOOR)).sqrt();
        let rho1 = (norm2(&delta_theta).max(RHO_FLOOR) / norm2(&nu).max(RHO_FLOOR)).sqrt();

        let x_tilde_new = &fx * rho0 + &nu * rho1;
        let theta_tilde_new = &self.theta_tilde / rho0 + &delta_theta / rho1;

        let dl_dy = loss_dy(&y, target);
        let dl_dx = self.core.w_c.t().dot(&dl_dy);
        let scal: f64 = dl_dx
            .iter()
            .zip(x_tilde_new.iter())
            .map(|(a, b)| a * b)
            .sum();
        let g_rec = theta_tilde_new.mapv(|v| scal * v);

        let q = dims.q;
        let grad = RnnGradient {
            d_wa: g_rec
                .slice(ndarray::s![..q * q])
                .to_owned()
                .into_shape_with_order((q, q))
                .expect("wa block"),
            d_wb: g_rec
                .slice(ndarray::s![q * q..])
                .to_owned()
                .into_shape_with_order((q, dims.m1))
                .expect("wb block"),
            d_wc: wc_gradient(&dl_dy, &x_new),
        };

        self.core.x = x_new;
        self.x_tilde = x_tilde_new;
        self.theta_tilde = theta_tilde_new;
        Ok((grad, y))
    }

    fn check_finite(&self) -> Result<()> {
        if self.core.is_finite()
            && self.x_tilde.iter().all(|v| v.is_finite())
            && self.theta_tilde.iter().all(|v| v.is_finite())
        {
            Ok(())
        } else {
            Err(Error::Divergence {
                context: "uoro state became non-finite".into(),
            })
        }
    }
}

impl Forecaster for UoroTrainer {
    fn step(&mut self, input: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<Array1<f64>> {
        let u = self.norm.input(input);
        let t = self.norm.target(target);
        let (grad, y) = self.gradient_step(u.view(), t.view())?;
        apply_sgd(&mut self.core, &grad, self.eta, TAU_RNN);
        self.check_finite()?;
        Ok(self.norm.output(y.view()))
    }
}
