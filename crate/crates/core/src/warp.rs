//! Forward warping by Nadaraya-Watson regression: every source pixel
//! scatters its intensity to its displaced position, and each output pixel
//! takes the Gaussian-weighted mean of the scattered samples within a
//! cutoff radius. Pixels no sample reaches fall back to a configurable
//! value.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dvf::DisplacementField;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpFallback {
    /// Intensity of the scattered sample nearest to the empty pixel.
    NearestSource,
    /// Intensity of the reference image at the empty pixel.
    ReferenceIntensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarpParams {
    /// Gaussian kernel std in pixels.
    pub sigma_warp: f64,
    /// Samples beyond this distance (pixels) do not contribute.
    pub cutoff_radius: f64,
    pub fallback: WarpFallback,
}

impl Default for WarpParams {
    fn default() -> Self {
        WarpParams {
            sigma_warp: 0.5,
            cutoff_radius: 2.0,
            fallback: WarpFallback::ReferenceIntensity,
        }
    }
}

impl WarpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_warp > 0.0) || !self.sigma_warp.is_finite() {
            return Err(Error::InvalidInput(format!(
                "sigma_warp must be positive, got {}",
                self.sigma_warp
            )));
        }
        if !(self.cutoff_radius >= self.sigma_warp) || !self.cutoff_radius.is_finite() {
            return Err(Error::InvalidInput(format!(
                "cutoff_radius {} must be at least sigma_warp {}",
                self.cutoff_radius, self.sigma_warp
            )));
        }
        Ok(())
    }
}

/// Warps `reference` forward along `field`. The output pixel (r, c)
/// averages the intensities scattered near (c, r), clamped to [0, 255].
pub fn warp_image(
    reference: &Image,
    field: &DisplacementField,
    params: &WarpParams,
) -> Result<Image> {
    params.validate()?;
    let (h, w) = reference.dim();
    if field.dim() != (h, w) {
        return Err(Error::ShapeMismatch {
            expected: format!("{h}x{w} field"),
            got: format!("{:?}", field.dim()),
        });
    }
    if !field.is_finite() {
        return Err(Error::InvalidInput(
            "displacement field contains non-finite entries".into(),
        ));
    }

    let r_cut = params.cutoff_radius;
    let r2_cut = r_cut * r_cut;
    let inv_two_sigma2 = 1.0 / (2.0 * params.sigma_warp * params.sigma_warp);

    let mut weight_sum = Array2::<f64>::zeros((h, w));
    let mut value_sum = Array2::<f64>::zeros((h, w));
    // Per-cell nearest scattered sample (squared distance to the cell
    // center, intensity), kept for the nearest-source fallback.
    let mut nearest: Vec<(f64, f64)> = vec![(f64::INFINITY, 0.0); h * w];

    for r in 0..h {
        for c in 0..w {
            let intensity = reference[[r, c]];
            let sx = c as f64 + field.u_x[[r, c]];
            let sy = r as f64 + field.u_y[[r, c]];
            let c_lo = ((sx - r_cut).ceil().max(0.0)) as isize;
            let c_hi = ((sx + r_cut).floor().min(w as f64 - 1.0)) as isize;
            let r_lo = ((sy - r_cut).ceil().max(0.0)) as isize;
            let r_hi = ((sy + r_cut).floor().min(h as f64 - 1.0)) as isize;
            for tr in r_lo..=r_hi {
                let dy = tr as f64 - sy;
                for tc in c_lo..=c_hi {
                    let dx = tc as f64 - sx;
                    let d2 = dx * dx + dy * dy;
                    if d2 <= r2_cut {
                        let wgt = (-d2 * inv_two_sigma2).exp();
                        weight_sum[[tr as usize, tc as usize]] += wgt;
                        value_sum[[tr as usize, tc as usize]] += wgt * intensity;
                    }
                }
            }
            // Nearest-sample bookkeeping uses the cell the sample lands in.
            let br = sy.round();
            let bc = sx.round();
            if br >= 0.0 && br < h as f64 && bc >= 0.0 && bc < w as f64 {
                let cell = br as usize * w + bc as usize;
                let dx = bc - sx;
                let dy = br - sy;
                let d2 = dx * dx + dy * dy;
                if d2 < nearest[cell].0 {
                    nearest[cell] = (d2, intensity);
                }
            }
        }
    }

    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let v = if weight_sum[[r, c]] > 0.0 {
                value_sum[[r, c]] / weight_sum[[r, c]]
            } else {
                match params.fallback {
                    WarpFallback::ReferenceIntensity => reference[[r, c]],
                    WarpFallback::NearestSource => {
                        nearest_sample_intensity(&nearest, h, w, r, c)
                            .unwrap_or(reference[[r, c]])
                    }
                }
            };
            out[[r, c]] = v.clamp(0.0, 255.0);
        }
    }
    Ok(out)
}

/// Expanding ring search over the per-cell nearest samples. Returns the
/// intensity of the closest occupied cell, one extra ring searched to
/// settle Chebyshev/Euclidean discrepancies.
fn nearest_sample_intensity(
    nearest: &[(f64, f64)],
    h: usize,
    w: usize,
    r: usize,
    c: usize,
) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    let max_radius = h.max(w) as isize;
    let mut found_at: Option<isize> = None;
    for radius in 0..=max_radius {
        if let Some(hit) = found_at {
            if radius > hit + 1 {
                break;
            }
        }
        let r0 = r as isize;
        let c0 = c as isize;
        let mut visit = |rr: isize, cc: isize| {
            if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                return;
            }
            let (d2_cell, val) = nearest[rr as usize * w + cc as usize];
            if d2_cell.is_finite() {
                let dr = (rr - r0) as f64;
                let dc = (cc - c0) as f64;
                // Distance from the query pixel to the cell center stands
                // in for the exact sample distance.
                let d2 = dr * dr + dc * dc + d2_cell;
                if best.map_or(true, |(b, _)| d2 < b) {
                    best = Some((d2, val));
                }
            }
        };
        if radius == 0 {
            visit(r0, c0);
        } else {
            for k in -radius..=radius {
                visit(r0 - radius, c0 + k);
                visit(r0 + radius, c0 + k);
            }
            for k in (-radius + 1)..radius {
                visit(r0 + k, c0 - radius);
                visit(r0 + k, c0 + radius);
            }
        }
        if best.is_some() && found_at.is_none() {
            found_at = Some(radius);
        }
    }
    best.map(|(_, v)| v)
}
