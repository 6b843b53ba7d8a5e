//! Dense displacement vector fields.
//!
//! A field maps the reference frame onto a later frame: the intensity at
//! pixel `x` of the reference is found at `x + u(x)` in the target. The two
//! components are stored as planes; `u_x` displaces along columns, `u_y`
//! along rows.

use crate::error::{Error, Result};
use ndarray::Array2;

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub u_x: Array2<f64>,
    pub u_y: Array2<f64>,
}

impl DisplacementField {
    pub fn zeros(h: usize, w: usize) -> Self {
        DisplacementField {
            u_x: Array2::zeros((h, w)),
            u_y: Array2::zeros((h, w)),
        }
    }

    pub fn new(u_x: Array2<f64>, u_y: Array2<f64>) -> Result<Self> {
        if u_x.dim() != u_y.dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", u_x.dim()),
                got: format!("{:?}", u_y.dim()),
            });
        }
        Ok(DisplacementField { u_x, u_y })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.u_x.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.u_x.iter().all(|v| v.is_finite()) && self.u_y.iter().all(|v| v.is_finite())
    }

    /// Flattens to the interleaved vector `u_x(x1), u_y(x1), u_x(x2), ...`
    /// with pixels in row-major order. This is the layout of one row of the
    /// motion data matrix.
    pub fn to_interleaved(&self) -> Vec<f64> {
        let (h, w) = self.dim();
        let mut out = Vec::with_capacity(2 * h * w);
        for r in 0..h {
            for c in 0..w {
                out.push(self.u_x[[r, c]]);
                out.push(self.u_y[[r, c]]);
            }
        }
        out
    }

    /// Inverse of [`to_interleaved`](Self::to_interleaved).
    pub fn from_interleaved(data: &[f64], h: usize, w: usize) -> Result<Self> {
        if data.len() != 2 * h * w {
            return Err(Error::ShapeMismatch {
                expected: format!("{} interleaved components", 2 * h * w),
                got: format!("{}", data.len()),
            });
        }
        let mut f = DisplacementField::zeros(h, w);
        for r in 0..h {
            for c in 0..w {
                let i = 2 * (r * w + c);
                f.u_x[[r, c]] = data[i];
                f.u_y[[r, c]] = data[i + 1];
            }
        }
        Ok(f)
    }
}
