//! 2D intensity grids and the interpolation/filtering primitives shared by
//! the registration, warping, and synthesis code.
//!
//! Images are row-major `Array2<f64>` with shape `(h, w)` and intensities in
//! `[0, 255]`. A pixel at row `r`, column `c` sits at continuous coordinates
//! `x = c`, `y = r`.

use ndarray::Array2;

pub type Image = Array2<f64>;

/// Samples `img` at `(x, y)` with bilinear interpolation, clamping the
/// sampling position to the image border.
pub fn bilinear_sample(img: &Image, x: f64, y: f64) -> f64 {
    let (h, w) = img.dim();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = img[[y0, x0]] * (1.0 - fx) + img[[y0, x1]] * fx;
    let bot = img[[y1, x0]] * (1.0 - fx) + img[[y1, x1]] * fx;
    top * (1.0 - fy) + bot * fy
}

fn cubic_weight(t: f64) -> f64 {
    // Keys kernel with a = -0.5 (the common bicubic convolution spline).
    let t = t.abs();
    if t < 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// Samples `img` at `(x, y)` with bicubic interpolation over the 4x4
/// neighborhood, replicating border pixels for out-of-range taps.
pub fn bicubic_sample(img: &Image, x: f64, y: f64) -> f64 {
    let (h, w) = img.dim();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor();
    let y0 = y.floor();
    let mut acc = 0.0;
    let mut wsum = 0.0;
    for dy in -1i64..=2 {
        let yy = y0 as i64 + dy;
        let wy = cubic_weight(y - (y0 + dy as f64));
        if wy == 0.0 {
            continue;
        }
        let yc = yy.clamp(0, h as i64 - 1) as usize;
        for dx in -1i64..=2 {
            let xx = x0 as i64 + dx;
            let wx = cubic_weight(x - (x0 + dx as f64));
            if wx == 0.0 {
                continue;
            }
            let xc = xx.clamp(0, w as i64 - 1) as usize;
            acc += wy * wx * img[[yc, xc]];
            wsum += wy * wx;
        }
    }
    acc / wsum
}

/// One-dimensional Gaussian taps truncated at three standard deviations and
/// normalized to sum 1. `sigma = 0` degenerates to the identity kernel.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma >= 0.0, "gaussian_kernel: sigma must be nonnegative");
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let inv = -0.5 / (sigma * sigma);
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| ((i * i) as f64 * inv).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian smoothing with border replication.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let k = gaussian_kernel(sigma);
    if k.len() == 1 {
        return img.clone();
    }
    let radius = (k.len() / 2) as i64;
    let (h, w) = img.dim();
    let mut tmp = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
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
            for (i, &kv) in k.iter().enumerate() {
                let rr = (r as i64 + i as i64 - radius).clamp(0, h as i64 - 1) as usize;
                acc += kv * tmp[[rr, c]];
            }
            out[[r, c]] = acc;
        }
    }
    out
}
