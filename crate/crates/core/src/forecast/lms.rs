//! Least mean squares: a linear filter y = W_n u updated by the
//! instantaneous error, W_{n+1} = W_n + eta clip(e u^T), with the update
//! clipped at tau_LMS in Frobenius norm. Deterministic.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

use super::{clip_scale, Forecaster, Normalizer, TAU_LMS};

#[derive(Debug, Clone)]
pub struct LmsFilter {
    w: Array2<f64>,
    eta: f64,
    norm: Normalizer,
}

impl LmsFilter {
    pub fn new(p: usize, eta: f64, norm: Normalizer) -> Result<Self> {
        let m1 = norm.input_len();
        if m1 < p + 1 {
            return Err(Error::InvalidInput(format!(
                "input length {m1} too short for {p} outputs"
            )));
        }
        Ok(LmsFilter {
            w: Array2::zeros((p, m1)),
            eta,
            norm,
        })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.w
    }
}

impl Forecaster for LmsFilter {
    fn step(&mut self, input: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<Array1<f64>> {
        let u = self.norm.input(input);
        let t = self.norm.target(target);
        let y = self.w.dot(&u);
        let e = &t - &y;
        let mut norm2 = 0.0;
        for ei in e.iter() {
            for uj in u.iter() {
                norm2 += (ei * uj) * (ei * uj);
            }
        }
        let scale = self.eta * clip_scale(norm2.sqrt(), TAU_LMS);
        for (i, ei) in e.iter().enumerate() {
            for (j, uj) in u.iter().enumerate() {
                self.w[[i, j]] += scale * ei * uj;
            }
        }
        if !self.w.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                context: "lms weights became non-finite".into(),
            });
        }
        Ok(self.norm.output(y.view()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::NormalizationStats;
    use ndarray::arr1;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn identity_norm(m1: usize, p: usize) -> Normalizer {
        Normalizer::new(NormalizationStats::identity(m1), p).unwrap()
    }

    #[test]
    fn zero_error_leaves_weights_unchanged() {
        let mut f = LmsFilter::new(1, 0.1, identity_norm(2, 1)).unwrap();
        f.w[[0, 0]] = 0.3;
        f.w[[0, 1]] = -0.2;
        let u = arr1(&[1.0, 2.0]);
        let y = f.w.dot(&u);
        let before = f.w.clone();
        f.step(u.view(), y.view()).unwrap();
        assert_eq!(before, f.w);
    }

    #[test]
    fn hand_update_case() {
        let mut f = LmsFilter::new(1, 0.1, identity_norm(2, 1)).unwrap();
        let y = f.step(arr1(&[1.0, 1.0]).view(), arr1(&[1.0]).view()).unwrap();
        assert_eq!(y[0], 0.0);
        // e = 1, e u^T = [1, 1], Frobenius sqrt(2) <= 2: unclipped.
        assert!((f.w[[0, 0]] - 0.1).abs() < 1e-15);
        assert!((f.w[[0, 1]] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn update_norm_is_bounded() {
        let mut f = LmsFilter::new(1, 0.1, identity_norm(2, 1)).unwrap();
        let before = f.w.clone();
        f.step(arr1(&[1.0, 100.0]).view(), arr1(&[1000.0]).view()).unwrap();
        let delta: f64 = (&f.w - &before).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((delta - 0.1 * TAU_LMS).abs() < 1e-12);
    }

    #[test]
    fn converges_on_noiseless_linear_stream() {
        let mut rng = StdRng::seed_from_u64(6);
        let w_true = [0.4, -0.7, 0.2];
        let mut f = LmsFilter::new(1, 0.1, identity_norm(3, 1)).unwrap();
        let mut last_sq = f64::INFINITY;
        for k in 0..200 {
            let u = arr1(&[1.0, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let t = arr1(&[w_true.iter().zip(u.iter()).map(|(a, b)| a * b).sum::<f64>()]);
            let y = f.step(u.view(), t.view()).unwrap();
            if k >= 199 {
                last_sq = (y[0] - t[0]) * (y[0] - t[0]);
            }
        }
        assert!(last_sq < 1e-3, "final squared error {last_sq}");
    }
}
