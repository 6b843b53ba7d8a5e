//! Real-time recurrent learning: the exact online gradient, maintained
//! through the influence matrix dx_n/dtheta over the recurrent parameters
//! (W_a, W_b). Cost is O(q^2 n_rec) per step.

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::rnn::{apply_sgd, loss_dy, wc_gradient, RnnCore, RnnDims, RnnGradient};
use super::{Forecaster, Normalizer, SIGMA_INIT, TAU_RNN};

#[derive(Debug, Clone)]
pub struct RtrlTrainer {
    core: RnnCore,
    /// dx_n/dtheta, q x n_rec, zero at start.
    influence: Array2<f64>,
    eta: f64,
    norm: Normalizer,
}

impl RtrlTrainer {
    pub fn new(dims: RnnDims, eta: f64, norm: Normalizer, seed: u64) -> Result<Self> {
        if norm.input_len() != dims.m1 {
            return Err(Error::ShapeMismatch {
                expected: format!("stats of length {}", dims.m1),
                got: format!("{}", norm.input_len()),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(RtrlTrainer {
            core: RnnCore::init(dims, SIGMA_INIT, &mut rng),
            influence: Array2::zeros((dims.q, dims.n_rec())),
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

    pub fn influence(&self) -> &Array2<f64> {
        &self.influence
    }

    #[cfg(test)]
    pub(crate) fn influence_mut(&mut self) -> &mut Array2<f64> {
        &mut self.influence
    }

    /// Forward pass, influence recursion, and loss gradient for one
    /// normalized pair. Advances the hidden state and the influence but
    /// leaves the weights untouched.
    pub fn gradient_step(
        &mut self,
        u: ArrayView1<f64>,
        target: ArrayView1<f64>,
    ) -> Result<(RnnGradient, Array1<f64>)> {
        let dims = self.core.dims;
        let (x_new, y) = self.core.forward(u)?;
        let d = x_new.mapv(|v| 1.0 - v * v);

        // J' = diag(d) (W_a J + P); P holds the immediate partials.
        let mut j_new = self.core.w_a.dot(&self.influence);
        for i in 0..dims.q {
            for j in 0..dims.q {
                j_new[[i, dims.idx_wa(i, j)]] += self.core.x[j];
            }
            for j in 0..dims.m1 {
                j_new[[i, dims.idx_wb(i, j)]] += u[j];
            }
            let di = d[i];
            for v in j_new.row_mut(i).iter_mut() {
                *v *= di;
            }
        }

        let dl_dy = loss_dy(&y, target);
        let dl_dx = self.core.w_c.t().dot(&dl_dy);
        let g_rec = j_new.t().dot(&dl_dx);

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
        self.influence = j_new;
        Ok((grad, y))
    }

    fn check_finite(&self) -> Result<()> {
        if self.core.is_finite() && self.influence.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Divergence {
                context: "rtrl state became non-finite".into(),
            })
        }
    }
}

impl Forecaster for RtrlTrainer {
    fn step(&mut self, input: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<Array1<f64>> {
        let u = self.norm.input(input);
        let t = self.norm.target(target);
        let (grad, y) = self.gradient_step(u.view(), t.view())?;
        apply_sgd(&mut self.core, &grad, self.eta, TAU_RNN);
        self.check_finite()?;
        Ok(self.norm.output(y.view()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::NormalizationStats;
    use ndarray::arr1;

    fn identity_norm(m1: usize, p: usize) -> Normalizer {
        Normalizer::new(NormalizationStats::identity(m1), p).unwrap()
    }

    fn test_stream(m1: usize, p: usize, steps: usize) -> Vec<(Array1<f64>, Array1<f64>)> {
        (0..steps)
            .map(|k| {
                let mut u = Array1::zeros(m1);
                u[0] = 1.0;
                for j in 1..m1 {
                    u[j] = ((k * 7 + j * 3) as f64 * 0.31).sin();
                }
                let t = Array1::from_shape_fn(p, |j| ((k * 5 + j) as f64 * 0.17).cos());
                (u, t)
            })
            .collect()
    }

    /// Unrolled loss over the stream with frozen parameters.
    fn unrolled_loss(proto: &RnnCore, params: ArrayView1<f64>, stream: &[(Array1<f64>, Array1<f64>)]) -> f64 {
        let mut core = proto.clone();
        core.set_params_flat(params).unwrap();
        core.x.fill(0.0);
        let mut loss = 0.0;
        for (u, t) in stream {
            let (x, y) = core.forward(u.view()).unwrap();
            core.x = x;
            for (yi, ti) in y.iter().zip(t.iter()) {
                loss += (yi - ti) * (yi - ti);
            }
        }
        loss
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let dims = RnnDims { q: 3, m1: 3, p: 2 };
        let mut trainer = RtrlTrainer::new(dims, 0.01, identity_norm(3, 2), 42).unwrap();
        let stream = test_stream(3, 2, 15);
        let mut total = RnnGradient::zeros(dims);
        for (u, t) in &stream {
            let (g, _) = trainer.gradient_step(u.view(), t.view()).unwrap();
            total.add(&g);
        }
        let flat = total.to_flat();

        let proto = trainer.core().clone();
        let theta = proto.params_flat();
        let eps = 1e-5;
        for k in 0..dims.n_params() {
            let mut tp = theta.clone();
            tp[k] += eps;
            let lp = unrolled_loss(&proto, tp.view(), &stream);
            let mut tm = theta.clone();
            tm[k] -= eps;
            let lm = unrolled_loss(&proto, tm.view(), &stream);
            let fd = (lp - lm) / (2.0 * eps);
            let denom = fd.abs().max(flat[k].abs()).max(1e-8);
            assert!(
                (flat[k] - fd).abs() / denom < 1e-4,
                "param {k}: rtrl {} vs fd {fd}",
                flat[k]
            );
        }
    }

    #[test]
    fn zero_loss_leaves_weights_unchanged() {
        let dims = RnnDims { q: 4, m1: 3, p: 2 };
        let mut trainer = RtrlTrainer::new(dims, 0.05, identity_norm(3, 2), 1).unwrap();
        let u = arr1(&[1.0, 0.4, -0.2]);
        // Probe the prediction without changing the trainer.
        let (_, y) = trainer.clone().gradient_step(u.view(), arr1(&[0.0, 0.0]).view()).unwrap();
        let before = trainer.core().params_flat();
        trainer.step(u.view(), y.view()).unwrap();
        let after = trainer.core().params_flat();
        assert_eq!(before, after);
    }

    #[test]
    fn identical_seeds_give_identical_trajectories() {
        let dims = RnnDims { q: 3, m1: 2, p: 1 };
        let mut a = RtrlTrainer::new(dims, 0.02, identity_norm(2, 1), 9).unwrap();
        let mut b = RtrlTrainer::new(dims, 0.02, identity_norm(2, 1), 9).unwrap();
        for (u, t) in test_stream(2, 1, 30) {
            let ya = a.step(u.view(), t.view()).unwrap();
            let yb = b.step(u.view(), t.view()).unwrap();
            assert_eq!(ya, yb);
        }
        assert_eq!(a.core().params_flat(), b.core().params_flat());
    }

    #[test]
    fn update_norm_is_bounded_by_eta_tau() {
        let dims = RnnDims { q: 3, m1: 3, p: 2 };
        let eta = 0.5;
        let mut trainer = RtrlTrainer::new(dims, eta, identity_norm(3, 2), 4).unwrap();
        for (u, t) in test_stream(3, 2, 20) {
            // Huge targets force clipping.
            let big = t.mapv(|v| v * 1e6);
            let before = trainer.core().params_flat();
            trainer.step(u.view(), big.view()).unwrap();
            let after = trainer.core().params_flat();
            let norm: f64 = (&after - &before).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= eta * TAU_RNN + 1e-9);
        }
    }
}
