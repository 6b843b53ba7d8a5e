//! Shared single-hidden-layer RNN machinery for the online trainers.
//!
//! x_{n+1} = tanh(W_a x_n + W_b u_n), y_{n+1} = W_c x_{n+1}, with W_a of
//! shape q x q, W_b of shape q x (m+1) (the first input is the bias), and
//! W_c of shape p x q. The flat parameter order is W_a, W_b, W_c, each
//! row-major; the recurrent block (W_a, W_b) comes first so influence
//! structures can index it directly.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::clip_scale;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RnnDims {
    /// Hidden units.
    pub q: usize,
    /// Input length m+1 (bias included).
    pub m1: usize,
    /// Output length p.
    pub p: usize,
}

impl RnnDims {
    /// Parameters of the recurrent block (W_a, W_b).
    pub fn n_rec(&self) -> usize {
        self.q * self.q + self.q * self.m1
    }

    pub fn n_params(&self) -> usize {
        self.n_rec() + self.p * self.q
    }

    /// Flat index of W_a[i][j].
    pub fn idx_wa(&self, i: usize, j: usize) -> usize {
        i * self.q + j
    }

    /// Flat index of W_b[i][j].
    pub fn idx_wb(&self, i: usize, j: usize) -> usize {
        self.q * self.q + i * self.m1 + j
    }
}

#[derive(Debug, Clone)]
pub struct RnnCore {
    pub dims: RnnDims,
    pub w_a: Array2<f64>,
    pub w_b: Array2<f64>,
    pub w_c: Array2<f64>,
    /// Hidden state x_n, zero at sequence start.
    pub x: Array1<f64>,
}

impl RnnCore {
    pub fn init(dims: RnnDims, sigma_init: f64, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0, sigma_init).expect("finite init std");
        let mut draw = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
        };
        RnnCore {
            dims,
            w_a: draw(dims.q, dims.q),
            w_b: draw(dims.q, dims.m1),
            w_c: draw(dims.p, dims.q),
            x: Array1::zeros(dims.q),
        }
    }

    /// One forward evaluation: (x_{n+1}, y_{n+1}). Does not advance `x`.
    pub fn forward(&self, u: ArrayView1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        if u.len() != self.dims.m1 {
            return Err(Error::ShapeMismatch {
                expected: format!("input of length {}", self.dims.m1),
                got: format!("{}", u.len()),
            });
        }
        let mut a = self.w_a.dot(&self.x);
        a += &self.w_b.dot(&u);
        let x_new = a.mapv(f64::tanh);
        let y = self.w_c.dot(&x_new);
        Ok((x_new, y))
    }

    pub fn params_flat(&self) -> Array1<f64> {
        let mut out = Array1::zeros(self.dims.n_params());
        let mut k = 0;
        for block in [&self.w_a, &self.w_b, &self.w_c] {
            for v in block.iter() {
                out[k] = *v;
                k += 1;
            }
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: ArrayView1<f64>) -> Result<()> {
        if flat.len() != self.dims.n_params() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.dims.n_params()),
                got: format!("{}", flat.len()),
            });
        }
        let mut k = 0;
        for block in [&mut self.w_a, &mut self.w_b, &mut self.w_c] {
            for v in block.iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.w_a.iter().all(|v| v.is_finite())
            && self.w_b.iter().all(|v| v.is_finite())
            && self.w_c.iter().all(|v| v.is_finite())
            && self.x.iter().all(|v| v.is_finite())
    }
}

/// Loss gradient for one step, split by weight block.
#[derive(Debug, Clone)]
pub struct RnnGradient {
    pub d_wa: Array2<f64>,
    pub d_wb: Array2<f64>,
    pub d_wc: Array2<f64>,
}

impl RnnGradient {
    pub fn zeros(dims: RnnDims) -> Self {
        RnnGradient {
            d_wa: Array2::zeros((dims.q, dims.q)),
            d_wb: Array2::zeros((dims.q, dims.m1)),
            d_wc: Array2::zeros((dims.p, dims.q)),
        }
    }

    pub fn norm(&self) -> f64 {
        let mut s = 0.0;
        for block in [&self.d_wa, &self.d_wb, &self.d_wc] {
            for v in block.iter() {
                s += v * v;
            }
        }
        s.sqrt()
    }

    pub fn add(&mut self, other: &RnnGradient) {
        self.d_wa += &other.d_wa;
        self.d_wb += &other.d_wb;
        self.d_wc += &other.d_wc;
    }

    /// Flat layout matching `RnnCore::params_flat`.
    pub fn to_flat(&self) -> Array1<f64> {
        let n = self.d_wa.len() + self.d_wb.len() + self.d_wc.len();
        let mut out = Array1::zeros(n);
        let mut k = 0;
        for block in [&self.d_wa, &self.d_wb, &self.d_wc] {
            for v in block.iter() {
                out[k] = *v;
                k += 1;
            }
        }
        out
    }
}

/// SGD step with the gradient clipped once over all blocks.
pub fn apply_sgd(core: &mut RnnCore, grad: &RnnGradient, eta: f64, tau: f64) {
    let scale = eta * clip_scale(grad.norm(), tau);
    core.w_a.scaled_add(-scale, &grad.d_wa);
    core.w_b.scaled_add(-scale, &grad.d_wb);
    core.w_c.scaled_add(-scale, &grad.d_wc);
}

/// dL/dy for the squared-error loss ||y - target||^2.
pub(super) fn loss_dy(y: &Array1<f64>, target: ArrayView1<f64>) -> Array1<f64> {
    let mut e = y.clone();
    for (ei, t) in e.iter_mut().zip(target.iter()) {
        *ei = 2.0 * (*ei - t);
    }
    e
}

/// Exact W_c gradient: dL/dW_c = dL/dy x_{n+1}^T.
pub(super) fn wc_gradient(dl_dy: &Array1<f64>, x_new: &Array1<f64>) -> Array2<f64> {
    let p = dl_dy.len();
    let q = x_new.len();
    Array2::from_shape_fn((p, q), |(i, j)| dl_dy[i] * x_new[j])
}
