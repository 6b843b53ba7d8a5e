//! Small dense routines: a cyclic Jacobi eigensolver for symmetric matrices
//! and a pseudo-inverse built on it. Sized for the Gram matrices appearing
//! here (at most a few hundred rows), deterministic across platforms.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns. The input is symmetrized to guard against round-off asymmetry.
pub fn jacobi_eigh(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let (n, m) = a.dim();
    if n != m {
        return Err(Error::InvalidInput(format!(
            "eigendecomposition needs a square matrix, got {n}x{m}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let mut mat = Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (a[[i, j]] + a[[j, i]]));
    let mut vecs = Array2::eye(n);
    let frob: f64 = mat.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tol = 1e-14 * frob.max(f64::MIN_POSITIVE);

    for _sweep in 0..60 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += mat[[i, j]] * mat[[i, j]];
            }
        }
        if (2.0 * off).sqrt() <= tol {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = mat[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = mat[[p, p]];
                let aqq = mat[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = mat[[k, p]];
                    let akq = mat[[k, q]];
                    mat[[k, p]] = c * akp - s * akq;
                    mat[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = mat[[p, k]];
                    let aqk = mat[[q, k]];
                    mat[[p, k]] = c * apk - s * aqk;
                    mat[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = vecs[[k, p]];
                    let vkq = vecs[[k, q]];
                    vecs[[k, p]] = c * vkp - s * vkq;
                    vecs[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| mat[[j, j]].total_cmp(&mat[[i, i]]));
    let values = Array1::from_iter(order.iter().map(|&i| mat[[i, i]]));
    let mut sorted = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            sorted[[k, dst]] = vecs[[k, src]];
        }
    }
    Ok((values, sorted))
}

/// Moore-Penrose pseudo-inverse of a symmetric positive semi-definite
/// matrix; eigenvalues at or below `rel_cutoff` times the largest are
/// treated as zero.
pub fn psd_pinv(a: &Array2<f64>, rel_cutoff: f64) -> Result<Array2<f64>> {
    let (vals, vecs) = jacobi_eigh(a)?;
    let n = vals.len();
    let vmax = vals[0].max(0.0);
    let mut out = Array2::zeros((n, n));
    for k in 0..n {
        let lambda = vals[k];
        if lambda <= rel_cutoff * vmax || lambda <= 0.0 {
            continue;
        }
        let inv = 1.0 / lambda;
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] += inv * vecs[[i, k]] * vecs[[j, k]];
            }
        }
    }
    Ok(out)
}
