//! Evaluation quantities: weight nRMSE, registration errors, image nRMSE,
//! cross-correlation, SSIM, endpoint errors, and confidence half-ranges.

use ndarray::{Array2, ArrayView2};

use crate::dvf::DisplacementField;
use crate::error::{Error, Result};
use crate::image::{bilinear_sample, Image};
use crate::sequence::ImageSequence;

/// nRMSE between predicted and true weight series (rows = time steps,
/// columns = components): pooled squared error over all entries divided by
/// the pooled squared deviation of the truth from its per-component mean.
pub fn weight_nrmse(pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<f64> {
    if pred.dim() != truth.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", truth.dim()),
            got: format!("{:?}", pred.dim()),
        });
    }
    let (n, p) = truth.dim();
    if n == 0 || p == 0 {
        return Err(Error::InvalidInput("empty weight series".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..p {
        let col = truth.column(j);
        let mean = col.sum() / n as f64;
        for k in 0..n {
            let d = pred[[k, j]] - truth[[k, j]];
            num += d * d;
            let e = truth[[k, j]] - mean;
            den += e * e;
        }
    }
    if den == 0.0 {
        return Err(Error::DegenerateMetric(
            "weight nRMSE undefined for constant truth".into(),
        ));
    }
    Ok((num / den).sqrt())
}

/// Per-pixel absolute registration error
/// `|I(x + u(x), target) - reference(x)|` with bilinear sampling and border
/// clamping.
pub fn delta_image(field: &DisplacementField, reference: &Image, target: &Image) -> Image {
    let (h, w) = reference.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        let x = c as f64 + field.u_x[[r, c]];
        let y = r as f64 + field.u_y[[r, c]];
        (bilinear_sample(target, x, y) - reference[[r, c]]).abs()
    })
}

fn rms_deviation_from_mean(img: &Image) -> f64 {
    let mean = img.mean().unwrap();
    let ss: f64 = img.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / img.len() as f64).sqrt()
}

/// Instantaneous normalized registration RMSE: RMS of the per-pixel error
/// divided by the RMS deviation of the reference from its mean intensity.
pub fn instant_nrmse(field: &DisplacementField, reference: &Image, target: &Image) -> Result<f64> {
    if field.dim() != reference.dim() || reference.dim() != target.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", reference.dim()),
            got: format!("field {:?}, target {:?}", field.dim(), target.dim()),
        });
    }
    let denom = rms_deviation_from_mean(reference);
    if denom == 0.0 {
        return Err(Error::DegenerateMetric(
            "instant nRMSE undefined for a constant reference frame".into(),
        ));
    }
    let delta = delta_image(field, reference, target);
    let ss: f64 = delta.iter().map(|v| v * v).sum();
    Ok((ss / delta.len() as f64).sqrt() / denom)
}

/// Instantaneous normalized registration RMSE of frame `k` (0-based, k >= 1)
/// against frame 1 of the sequence.
pub fn instant_nrmse_frame(field: &DisplacementField, seq: &ImageSequence, k: usize) -> Result<f64> {
    if k == 0 || k >= seq.len() {
        return Err(Error::InvalidInput(format!(
            "frame index {k} outside 1..{}",
            seq.len()
        )));
    }
    instant_nrmse(field, &seq.frames[0], &seq.frames[k])
}

/// Mean of the instantaneous nRMSE over (frame, field) pairs, i.e. the
/// registration error of predicted fields averaged over cross-validation
/// steps and evaluation runs. Items are (0-based frame index, field).
pub fn mean_registration_nrmse<'a, I>(seq: &ImageSequence, items: I) -> Result<f64>
where
    I: IntoIterator<Item = (usize, &'a DisplacementField)>,
{
    let mut sum = 0.0;
    let mut n = 0usize;
    for (k, field) in items {
        sum += instant_nrmse_frame(field, seq, k)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidInput(
            "mean registration nRMSE needs at least one field".into(),
        ));
    }
    Ok(sum / n as f64)
}

/// Ground-truth registration error: RMS of the per-pixel error pooled over
/// all pixels of frames 2..=m_train (1-based), i.e.
/// `sqrt( sum_k sum_x delta^2 / ((m_train - 1) |I|) )`.
pub fn ground_truth_registration_error(
    fields: &[DisplacementField],
    seq: &ImageSequence,
    m_train: usize,
) -> Result<f64> {
    if m_train < 2 || m_train > seq.len() || m_train > fields.len() {
        return Err(Error::InvalidInput(format!(
            "m_train {m_train} outside 2..={} (fields: {})",
            seq.len(),
            fields.len()
        )));
    }
    let reference = &seq.frames[0];
    let (h, w) = reference.dim();
    let mut ss = 0.0;
    for k in 1..m_train {
        let delta = delta_image(&fields[k], reference, &seq.frames[k]);
        ss += delta.iter().map(|v| v * v).sum::<f64>();
    }
    Ok((ss / ((m_train - 1) * h * w) as f64).sqrt())
}

/// Image nRMSE: pooled squared intensity error divided by the truth image's
/// squared deviation from its own mean.
pub fn image_nrmse(pred: &Image, truth: &Image) -> Result<f64> {
    if pred.dim() != truth.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", truth.dim()),
            got: format!("{:?}", pred.dim()),
        });
    }
    let denom = rms_deviation_from_mean(truth);
    if denom == 0.0 {
        return Err(Error::DegenerateMetric(
            "image nRMSE undefined for a constant truth image".into(),
        ));
    }
    let ss: f64 = pred
        .iter()
        .zip(truth.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((ss / truth.len() as f64).sqrt() / denom)
}

/// Pearson correlation of the flattened intensities.
pub fn cross_correlation(a: &Image, b: &Image) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", a.dim()),
            got: format!("{:?}", b.dim()),
        });
    }
    let ma = a.mean().unwrap();
    let mb = b.mean().unwrap();
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        saa += dx * dx;
        sbb += dy * dy;
        sab += dx * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateMetric(
            "cross-correlation undefined for a constant image".into(),
        ));
    }
    Ok(sab / (saa.sqrt() * sbb.sqrt()))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_L: f64 = 255.0;

fn ssim_window_kernel() -> Vec<f64> {
    // 11 Gaussian taps at sigma 1.5 (radius 5 exceeds the 3-sigma cut of
    // gaussian_kernel, so build it directly).
    let radius = (SSIM_WINDOW / 2) as i64;
    let inv = -0.5 / (SSIM_SIGMA * SSIM_SIGMA);
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| ((i * i) as f64 * inv).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable windowed filtering keeping only positions where the window
/// fits entirely inside the image.
fn valid_filter(img: &Image, k: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let r = k.len() / 2;
    let mut horiz = Array2::zeros((h, w - 2 * r));
    for row in 0..h {
        for col in 0..w - 2 * r {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * img[[row, col + i]];
            }
            horiz[[row, col]] = acc;
        }
    }
    let mut out = Array2::zeros((h - 2 * r, w - 2 * r));
    for row in 0..h - 2 * r {
        for col in 0..w - 2 * r {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * horiz[[row + i, col]];
            }
            out[[row, col]] = acc;
        }
    }
    out
}

/// Mean structural similarity over all positions where the 11x11 Gaussian
/// window (sigma 1.5) fits; K1 = 0.01, K2 = 0.03, dynamic range 255.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", a.dim()),
            got: format!("{:?}", b.dim()),
        });
    }
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}"
        )));
    }
    let k = ssim_window_kernel();
    let mu_a = valid_filter(a, &k);
    let mu_b = valid_filter(b, &k);
    let aa = valid_filter(&(a * a), &k);
    let bb = valid_filter(&(b * b), &k);
    let ab = valid_filter(&(a * b), &k);
    let c1 = (SSIM_K1 * SSIM_L).powi(2);
    let c2 = (SSIM_K2 * SSIM_L).powi(2);
    let mut sum = 0.0;
    for idx in 0..mu_a.len() {
        let (ma, mb) = (mu_a.as_slice().unwrap()[idx], mu_b.as_slice().unwrap()[idx]);
        let va = aa.as_slice().unwrap()[idx] - ma * ma;
        let vb = bb.as_slice().unwrap()[idx] - mb * mb;
        let cov = ab.as_slice().unwrap()[idx] - ma * mb;
        sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(sum / mu_a.len() as f64)
}

/// Mean and maximum Euclidean endpoint error in millimeters between
/// predicted and reference fields. `spacing_mm` is (row axis, column axis);
/// the x component displaces columns and the y component rows.
pub fn dvf_endpoint_errors(
    pred: &DisplacementField,
    truth: &DisplacementField,
    spacing_mm: [f64; 2],
) -> Result<(f64, f64)> {
    if pred.dim() != truth.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", truth.dim()),
            got: format!("{:?}", pred.dim()),
        });
    }
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for ((px, tx), (py, ty)) in pred
        .u_x
        .iter()
        .zip(truth.u_x.iter())
        .zip(pred.u_y.iter().zip(truth.u_y.iter()))
    {
        let dx = (px - tx) * spacing_mm[1];
        let dy = (py - ty) * spacing_mm[0];
        let e = (dx * dx + dy * dy).sqrt();
        sum += e;
        max = max.max(e);
    }
    Ok((sum / pred.u_x.len() as f64, max))
}

/// Half-range of the 95% confidence interval under a Gaussian assumption:
/// `1.96 * s / sqrt(n)` with the n-1 sample standard deviation.
pub fn confidence_half_range(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidInput(
            "confidence half-range needs at least 2 samples".into(),
        ));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(1.96 * var.sqrt() / (n as f64).sqrt())
}
