//! Dense pyramidal, iterative Lucas-Kanade registration of every frame onto
//! the first one, plus the grid search over its hyper-parameters.
//!
//! At each pyramid level the current flow warps the target toward the
//! reference and a Gauss-Newton step solves the classical LK normal
//! equations per pixel, with a Gaussian window of std `sigma_lk` weighting
//! the structure matrix and mismatch vector. The flow is upsampled (bilinear,
//! values doubled) between levels. Moment matrices are regularized by
//! `1e-6 * trace / 2` on the diagonal; a zero-trace (textureless) pixel gets
//! a zero update.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dvf::DisplacementField;
use crate::error::{Error, Result};
use crate::image::{bilinear_sample, gaussian_blur, gaussian_kernel, Image};
use crate::metrics::ground_truth_registration_error;
use crate::sequence::ImageSequence;

const MIN_COARSE_DIM: usize = 8;
const MOMENT_REG: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    /// Pre-filter std applied to both input images (0 disables).
    pub sigma_init: f64,
    /// Gaussian std used for downsampling between pyramid levels.
    pub sigma_sub: f64,
    /// Std of the Gaussian window weighting the moment matrix.
    pub sigma_lk: f64,
    pub n_layers: usize,
    pub n_iter: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            sigma_init: 0.1,
            sigma_sub: 0.5,
            sigma_lk: 2.0,
            n_layers: 2,
            n_iter: 1,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_init < 0.0 || !self.sigma_init.is_finite() {
            return Err(Error::InvalidInput("sigma_init must be >= 0".into()));
        }
        if !(self.sigma_sub > 0.0) || !(self.sigma_lk > 0.0) {
            return Err(Error::InvalidInput(
                "sigma_sub and sigma_lk must be positive".into(),
            ));
        }
        if self.n_layers == 0 || self.n_iter == 0 {
            return Err(Error::InvalidInput(
                "n_layers and n_iter must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Registered fields for a whole sequence; `fields[0]` is the zero field.
#[derive(Debug, Clone)]
pub struct DvfSeries {
    pub fields: Vec<DisplacementField>,
    pub params: FlowParams,
}

fn decimate(img: &Image) -> Image {
    let (h, w) = img.dim();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    Array2::from_shape_fn((oh, ow), |(r, c)| img[[2 * r, 2 * c]])
}

/// Coarse-to-fine stack: level 0 is the input, each next level is smoothed
/// with `sigma_sub` and decimated by 2 with ceiling dimensions.
pub fn gaussian_pyramid(image: &Image, n_layers: usize, sigma_sub: f64) -> Result<Vec<Image>> {
    if n_layers == 0 {
        return Err(Error::InvalidInput("n_layers must be at least 1".into()));
    }
    let mut levels = Vec::with_capacity(n_layers);
    levels.push(image.clone());
    for _ in 1..n_layers {
        let smoothed = gaussian_blur(levels.last().unwrap(), sigma_sub);
        levels.push(decimate(&smoothed));
    }
    let (ch, cw) = levels.last().unwrap().dim();
    if ch < MIN_COARSE_DIM || cw < MIN_COARSE_DIM {
        return Err(Error::InvalidInput(format!(
            "coarsest pyramid level {ch}x{cw} is below {MIN_COARSE_DIM}x{MIN_COARSE_DIM}"
        )));
    }
    Ok(levels)
}

/// Central differences with border replication: (d/dx, d/dy).
fn central_gradients(img: &Image) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = img.dim();
    let gx = Array2::from_shape_fn((h, w), |(r, c)| {
        let right = img[[r, (c + 1).min(w - 1)]];
        let left = img[[r, c.saturating_sub(1)]];
        (right - left) / 2.0
    });
    let gy = Array2::from_shape_fn((h, w), |(r, c)| {
        let down = img[[(r + 1).min(h - 1), c]];
        let up = img[[r.saturating_sub(1), c]];
        (down - up) / 2.0
    });
    (gx, gy)
}

/// Windowed sums of the LK products via a normalized Gaussian (the
/// normalization cancels in the per-pixel solve).
fn window_blur(img: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    let radius = (kernel.len() / 2) as i64;
    let (h, w) = img.dim();
    let mut tmp = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                let cc = (c as i64 + i as i64 - radius).clamp(0, w as i64 - 1) as usize;
                acc += kv * img[[r, cc]];
            }
            tmp[[r, c]] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                let rr = (r as i64 + i as i64 - radius).clamp(0, h as i64 - 1) as usize;
                acc += kv * tmp[[rr, c]];
            }
            out[[r, c]] = acc;
        }
    }
    out
}

fn upsample_doubled(plane: &Array2<f64>, oh: usize, ow: usize) -> Array2<f64> {
    Array2::from_shape_fn((oh, ow), |(r, c)| {
        2.0 * bilinear_sample(plane, c as f64 / 2.0, r as f64 / 2.0)
    })
}

fn refine_level(
    reference: &Image,
    target: &Image,
    u: &mut DisplacementField,
    kernel: &[f64],
    n_iter: usize,
) {
    let (h, w) = reference.dim();
    for _ in 0..n_iter {
        let warped = Array2::from_shape_fn((h, w), |(r, c)| {
            bilinear_sample(
                target,
                c as f64 + u.u_x[[r, c]],
                r as f64 + u.u_y[[r, c]],
            )
        });
        let (gx, gy) = central_gradients(&warped);
        let mut gxx = Array2::zeros((h, w));
        let mut gxy = Array2::zeros((h, w));
        let mut gyy = Array2::zeros((h, w));
        let mut bx = Array2::zeros((h, w));
        let mut by = Array2::zeros((h, w));
        for r in 0..h {
            for c in 0..w {
                let (x, y) = (gx[[r, c]], gy[[r, c]]);
                let res = warped[[r, c]] - reference[[r, c]];
                gxx[[r, c]] = x * x;
                gxy[[r, c]] = x * y;
                gyy[[r, c]] = y * y;
                bx[[r, c]] = x * res;
                by[[r, c]] = y * res;
            }
        }
        let sxx = window_blur(&gxx, kernel);
        let sxy = window_blur(&gxy, kernel);
        let syy = window_blur(&gyy, kernel);
        let sbx = window_blur(&bx, kernel);
        let sby = window_blur(&by, kernel);
        for r in 0..h {
            for c in 0..w {
                let trace = sxx[[r, c]] + syy[[r, c]];
                if trace <= 0.0 {
                    continue;
                }
                let eps = MOMENT_REG * trace / 2.0;
                let a11 = sxx[[r, c]] + eps;
                let a12 = sxy[[r, c]];
                let a22 = syy[[r, c]] + eps;
                let det = a11 * a22 - a12 * a12;
                if det == 0.0 {
                    continue;
                }
                let rx = sbx[[r, c]];
                let ry = sby[[r, c]];
                u.u_x[[r, c]] += (a12 * ry - a22 * rx) / det;
                u.u_y[[r, c]] += (a12 * rx - a11 * ry) / det;
            }
        }
    }
}

/// Dense flow `u` such that `reference(x) ~ target(x + u(x))`.
pub fn lucas_kanade_dense(
    reference: &Image,
    target: &Image,
    params: &FlowParams,
) -> Result<DisplacementField> {
    params.validate()?;
    if reference.dim() != target.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", reference.dim()),
            got: format!("{:?}", target.dim()),
        });
    }
    let (reference, target) = if params.sigma_init > 0.0 {
        (
            gaussian_blur(reference, params.sigma_init),
            gaussian_blur(target, params.sigma_init),
        )
    } else {
        (reference.clone(), target.clone())
    };
    let pyr_ref = gaussian_pyramid(&reference, params.n_layers, params.sigma_sub)?;
    let pyr_tgt = gaussian_pyramid(&target, params.n_layers, params.sigma_sub)?;
    let kernel = gaussian_kernel(params.sigma_lk);

    let coarsest = pyr_ref.len() - 1;
    let (ch, cw) = pyr_ref[coarsest].dim();
    let mut u = DisplacementField::zeros(ch, cw);
    for level in (0..pyr_ref.len()).rev() {
        refine_level(
            &pyr_ref[level],
            &pyr_tgt[level],
            &mut u,
            &kernel,
            params.n_iter,
        );
        if level > 0 {
            let (oh, ow) = pyr_ref[level - 1].dim();
            u = DisplacementField {
                u_x: upsample_doubled(&u.u_x, oh, ow),
                u_y: upsample_doubled(&u.u_y, oh, ow),
            };
        }
    }
    Ok(u)
}

/// Registers frames 2..=M onto frame 1; `fields[0]` is the zero field.
pub fn register_sequence(seq: &ImageSequence, params: &FlowParams) -> Result<DvfSeries> {
    seq.validate()?;
    let (h, w) = seq.dim();
    let mut fields = Vec::with_capacity(seq.len());
    fields.push(DisplacementField::zeros(h, w));
    for k in 1..seq.len() {
        fields.push(lucas_kanade_dense(
            &seq.frames[0],
            &seq.frames[k],
            params,
        )?);
    }
    Ok(DvfSeries {
        fields,
        params: params.clone(),
    })
}

/// Hyper-parameter ranges for the flow grid search; expanded as a cartesian
/// product in field order with `n_iter` varying fastest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowGrid {
    pub sigma_init: Vec<f64>,
    pub sigma_sub: Vec<f64>,
    pub sigma_lk: Vec<f64>,
    pub n_layers: Vec<usize>,
    pub n_iter: Vec<usize>,
}

impl FlowGrid {
    pub fn expand(&self) -> Vec<FlowParams> {
        let mut out = Vec::new();
        for &sigma_init in &self.sigma_init {
            for &sigma_sub in &self.sigma_sub {
                for &sigma_lk in &self.sigma_lk {
                    for &n_layers in &self.n_layers {
                        for &n_iter in &self.n_iter {
                            out.push(FlowParams {
                                sigma_init,
                                sigma_sub,
                                sigma_lk,
                                n_layers,
                                n_iter,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Ground-truth registration error of each grid point, computed over frames
/// 2..=m_train.
pub fn flow_grid_errors(
    seq: &ImageSequence,
    grid: &[FlowParams],
    m_train: usize,
) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty flow parameter grid".into()));
    }
    if m_train < 2 || m_train > seq.len() {
        return Err(Error::InvalidInput(format!(
            "m_train {m_train} outside 2..={}",
            seq.len()
        )));
    }
    let (h, w) = seq.dim();
    let mut errors = Vec::with_capacity(grid.len());
    for params in grid {
        let mut fields = Vec::with_capacity(m_train);
        fields.push(DisplacementField::zeros(h, w));
        for k in 1..m_train {
            fields.push(lucas_kanade_dense(
                &seq.frames[0],
                &seq.frames[k],
                params,
            )?);
        }
        errors.push(ground_truth_registration_error(&fields, seq, m_train)?);
    }
    Ok(errors)
}

/// Returns the grid point minimizing the ground-truth registration error
/// and that error; ties go to the earlier grid entry.
pub fn optimize_flow_params(
    seq: &ImageSequence,
    grid: &[FlowParams],
    m_train: usize,
) -> Result<(FlowParams, f64)> {
    let errors = flow_grid_errors(seq, grid, m_train)?;
    let mut best = 0;
    for (i, e) in errors.iter().enumerate() {
        if *e < errors[best] {
            best = i;
        }
    }
    Ok((grid[best].clone(), errors[best]))
}
