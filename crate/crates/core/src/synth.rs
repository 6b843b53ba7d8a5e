//! Synthetic cine sequences with analytically known deformation.
//!
//! A smooth reference image is driven by a deformation that is a linear
//! combination of fixed smooth vector fields weighted by quasi-periodic
//! signals. Weight signals are offset so the field at the first frame is
//! identically zero; every later frame then relates to frame 1 by exactly
//! the analytic field, which the generator records as ground truth.
//!
//! Frames are produced by sampling the reference at the inverse of the
//! push-forward map `T(x) = x + u(x)` (fixed-point inversion, bicubic
//! sampling), so brightness constancy holds up to interpolation error.
//! Frames stay real-valued in memory; 8-bit quantization happens only when
//! they are written as PGM.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dvf::DisplacementField;
use crate::error::{Error, Result};
use crate::image::{bicubic_sample, Image};
use crate::sequence::ImageSequence;

/// Spatial pattern of one deformation mode, evaluated analytically at
/// continuous positions. Patterns have unit peak magnitude; the mode's
/// weight signal carries the scale in pixels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModeShape {
    /// Uniform displacement in direction (dx, dy).
    Translation { dx: f64, dy: f64 },
    /// Gaussian-localized displacement centered at (cx, cy) in pixels.
    Bump {
        cx: f64,
        cy: f64,
        sigma_x: f64,
        sigma_y: f64,
        dx: f64,
        dy: f64,
    },
}

impl ModeShape {
    fn eval(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            ModeShape::Translation { dx, dy } => (dx, dy),
            ModeShape::Bump {
                cx,
                cy,
                sigma_x,
                sigma_y,
                dx,
                dy,
            } => {
                let gx = (x - cx) / sigma_x;
                let gy = (y - cy) / sigma_y;
                let g = (-0.5 * (gx * gx + gy * gy)).exp();
                (g * dx, g * dy)
            }
        }
    }

    fn max_abs(&self) -> (f64, f64) {
        match *self {
            ModeShape::Translation { dx, dy } => (dx.abs(), dy.abs()),
            ModeShape::Bump { dx, dy, .. } => (dx.abs(), dy.abs()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeSpec {
    pub shape: ModeShape,
    /// Peak weight in pixels.
    pub amplitude: f64,
    pub frequency_hz: f64,
    pub phase: f64,
    /// Depth of the slow sinusoidal amplitude modulation (0 disables).
    pub modulation_depth: f64,
    pub modulation_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub h: usize,
    pub w: usize,
    pub frames: usize,
    pub sampling_hz: f64,
    pub modes: Vec<ModeSpec>,
    /// Std of the Gaussian noise added to each weight sample.
    pub noise_std: f64,
    pub seed: u64,
    pub name: String,
}

impl Default for SyntheticSpec {
    /// Two respiratory-like modes on a 64x64 grid, 200 frames at 3.2 Hz.
    fn default() -> Self {
        let (h, w) = (64.0, 64.0);
        SyntheticSpec {
            h: 64,
            w: 64,
            frames: 200,
            sampling_hz: 3.2,
            modes: vec![
                ModeSpec {
                    shape: ModeShape::Bump {
                        cx: 0.50 * w,
                        cy: 0.60 * h,
                        sigma_x: 0.26 * w,
                        sigma_y: 0.22 * h,
                        dx: 0.35,
                        dy: 1.0,
                    },
                    amplitude: 2.6,
                    frequency_hz: 0.225,
                    phase: 0.4,
                    modulation_depth: 0.12,
                    modulation_hz: 0.031,
                },
                ModeSpec {
                    shape: ModeShape::Bump {
                        cx: 0.32 * w,
                        cy: 0.30 * h,
                        sigma_x: 0.14 * w,
                        sigma_y: 0.12 * h,
                        dx: 1.0,
                        dy: -0.45,
                    },
                    amplitude: 1.1,
                    frequency_hz: 0.56,
                    phase: 2.0,
                    modulation_depth: 0.10,
                    modulation_hz: 0.043,
                },
            ],
            noise_std: 0.02,
            seed: 7,
            name: "synthetic".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticGroundTruth {
    pub sequence: ImageSequence,
    /// Analytic field per frame, relative to frame 1; entry 0 is zero.
    pub true_dvfs: Vec<DisplacementField>,
    /// frames x n_modes weight samples that drove the deformation.
    pub weight_signals: Array2<f64>,
}

/// Smooth reference image: gentle background gradient, three blobs, and a
/// low-amplitude wavy texture that gives the registration signal everywhere.
fn reference_image(h: usize, w: usize) -> Image {
    let (hf, wf) = (h as f64, w as f64);
    let s = hf.min(wf);
    let blob = |x: f64, y: f64, cx: f64, cy: f64, sg: f64, a: f64| {
        let dx = (x - cx) / sg;
        let dy = (y - cy) / sg;
        a * (-0.5 * (dx * dx + dy * dy)).exp()
    };
    Array2::from_shape_fn((h, w), |(r, c)| {
        let (x, y) = (c as f64, r as f64);
        let base = 40.0 + 30.0 * y / hf + 22.0 * x / wf;
        let texture = 6.0
            * (2.0 * std::f64::consts::PI * x / 17.0).sin()
            * (2.0 * std::f64::consts::PI * y / 13.0).sin();
        base + texture
            + blob(x, y, 0.50 * wf, 0.62 * hf, 0.16 * s, 120.0)
            + blob(x, y, 0.30 * wf, 0.30 * hf, 0.09 * s, 80.0)
            + blob(x, y, 0.72 * wf, 0.35 * hf, 0.09 * s, 60.0)
    })
}

fn clamp_intensity(img: &mut Image) {
    img.mapv_inplace(|v| v.clamp(0.0, 255.0));
}

pub fn generate_synthetic_sequence(spec: &SyntheticSpec) -> Result<SyntheticGroundTruth> {
    if spec.frames < 2 {
        return Err(Error::InvalidInput(
            "sequence requires at least 2 frames".into(),
        ));
    }
    if spec.modes.is_empty() {
        return Err(Error::InvalidInput(
            "synthetic spec needs at least one mode".into(),
        ));
    }
    if spec.h < 16 || spec.w < 16 {
        return Err(Error::InvalidInput("synthetic frames below 16x16".into()));
    }

    let m = spec.frames;
    let n_modes = spec.modes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std.max(0.0))
        .map_err(|e| Error::InvalidInput(format!("noise_std: {e}")))?;

    // Raw quasi-periodic samples, then offset each mode so its weight at
    // the first frame is exactly zero (frame 1 is the undeformed reference).
    let mut signals = Array2::zeros((m, n_modes));
    for (j, mode) in spec.modes.iter().enumerate() {
        let mut raw = Vec::with_capacity(m);
        for k in 0..m {
            let t = k as f64 / spec.sampling_hz;
            let carrier =
                (2.0 * std::f64::consts::PI * mode.frequency_hz * t + mode.phase).sin();
            let envelope = 1.0
                + mode.modulation_depth
                    * (2.0 * std::f64::consts::PI * mode.modulation_hz * t).sin();
            let n = if spec.noise_std > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            raw.push(mode.amplitude * carrier * envelope + n);
        }
        for k in 0..m {
            signals[[k, j]] = raw[k] - raw[0];
        }
    }

    // Displacement bound keeps deformed content away from the border.
    let margin = spec.h.min(spec.w) as f64 / 6.0;
    let mut max_disp = 0.0f64;
    for k in 0..m {
        let (mut bx, mut by) = (0.0, 0.0);
        for (j, mode) in spec.modes.iter().enumerate() {
            let (mx, my) = mode.shape.max_abs();
            bx += signals[[k, j]].abs() * mx;
            by += signals[[k, j]].abs() * my;
        }
        max_disp = max_disp.max(bx.max(by));
    }
    if max_disp > margin {
        return Err(Error::InvalidInput(format!(
            "deformation amplitude {max_disp:.2} px exceeds the {margin:.2} px interior margin"
        )));
    }

    let reference = reference_image(spec.h, spec.w);
    let field_at = |x: f64, y: f64, weights: &[f64]| -> (f64, f64) {
        let mut u = (0.0, 0.0);
        for (mode, &wj) in spec.modes.iter().zip(weights) {
            let (fx, fy) = mode.shape.eval(x, y);
            u.0 += wj * fx;
            u.1 += wj * fy;
        }
        u
    };

    let mut frames = Vec::with_capacity(m);
    let mut true_dvfs = Vec::with_capacity(m);
    let mut first = reference.clone();
    clamp_intensity(&mut first);
    frames.push(first);
    true_dvfs.push(DisplacementField::zeros(spec.h, spec.w));

    for k in 1..m {
        let weights: Vec<f64> = (0..n_modes).map(|j| signals[[k, j]]).collect();
        let mut frame = Array2::zeros((spec.h, spec.w));
        let mut dvf = DisplacementField::zeros(spec.h, spec.w);
        for r in 0..spec.h {
            for c in 0..spec.w {
                let (px, py) = (c as f64, r as f64);
                // Invert p = x + u(x) by fixed-point iteration; the
                // amplitude precondition keeps the map contractive.
                let (mut x, mut y) = (px, py);
                for _ in 0..12 {
                    let (ux, uy) = field_at(x, y, &weights);
                    x = px - ux;
                    y = py - uy;
                }
                frame[[r, c]] = bicubic_sample(&reference, x, y);
                let (ux, uy) = field_at(px, py, &weights);
                dvf.u_x[[r, c]] = ux;
                dvf.u_y[[r, c]] = uy;
            }
        }
        clamp_intensity(&mut frame);
        frames.push(frame);
        true_dvfs.push(dvf);
    }

    let sequence = ImageSequence::new(frames, [1.0, 1.0], spec.sampling_hz, spec.name.clone())?;
    Ok(SyntheticGroundTruth {
        sequence,
        true_dvfs,
        weight_signals: signals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::bilinear_sample;

    fn tiny_spec() -> SyntheticSpec {
        SyntheticSpec {
            h: 48,
            w: 48,
            frames: 12,
            sampling_hz: 4.0,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn zero_amplitude_gives_static_sequence_and_zero_fields() {
        let mut spec = tiny_spec();
        spec.noise_std = 0.0;
        for m in &mut spec.modes {
            m.amplitude = 0.0;
        }
        let gt = generate_synthetic_sequence(&spec).unwrap();
        for k in 1..spec.frames {
            assert_eq!(gt.sequence.frames[k], gt.sequence.frames[0]);
            assert!(gt.true_dvfs[k].u_x.iter().all(|&v| v == 0.0));
            assert!(gt.true_dvfs[k].u_y.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn first_dvf_is_zero_and_lengths_match() {
        let spec = tiny_spec();
        let gt = generate_synthetic_sequence(&spec).unwrap();
        assert_eq!(gt.true_dvfs.len(), spec.frames);
        assert_eq!(gt.weight_signals.dim(), (spec.frames, 2));
        assert!(gt.true_dvfs[0].u_x.iter().all(|&v| v == 0.0));
        for j in 0..2 {
            assert_eq!(gt.weight_signals[[0, j]], 0.0);
        }
    }

    #[test]
    fn pure_translation_peak_is_exact() {
        // Quarter period lands exactly on sample k=2, so the offset signal
        // peaks at exactly the configured amplitude there.
        let spec = SyntheticSpec {
            h: 48,
            w: 48,
            frames: 9,
            sampling_hz: 4.0,
            modes: vec![ModeSpec {
                shape: ModeShape::Translation { dx: 0.0, dy: 1.0 },
                amplitude: 2.0,
                frequency_hz: 0.5,
                phase: 0.0,
                modulation_depth: 0.0,
                modulation_hz: 0.0,
            }],
            noise_std: 0.0,
            seed: 1,
            name: "t".into(),
        };
        let gt = generate_synthetic_sequence(&spec).unwrap();
        let dvf = &gt.true_dvfs[2];
        for r in 4..44 {
            for c in 4..44 {
                assert_eq!(dvf.u_x[[r, c]], 0.0);
                assert!((dvf.u_y[[r, c]] - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn excessive_amplitude_is_rejected() {
        let mut spec = tiny_spec();
        spec.modes[0].amplitude = 30.0;
        let err = generate_synthetic_sequence(&spec).unwrap_err();
        assert!(err.to_string().contains("margin"));
    }

    #[test]
    fn brightness_constancy_holds_at_interior_pixels() {
        let spec = SyntheticSpec {
            frames: 40,
            ..SyntheticSpec::default()
        };
        let gt = generate_synthetic_sequence(&spec).unwrap();
        let first = &gt.sequence.frames[0];
        let mut worst = 0.0f64;
        for k in 1..spec.frames {
            let frame = &gt.sequence.frames[k];
            let dvf = &gt.true_dvfs[k];
            for r in 8..spec.h - 8 {
                for c in 8..spec.w - 8 {
                    let x = c as f64 + dvf.u_x[[r, c]];
                    let y = r as f64 + dvf.u_y[[r, c]];
                    let moved = bilinear_sample(frame, x, y);
                    worst = worst.max((moved - first[[r, c]]).abs());
                }
            }
        }
        assert!(
            worst <= 1.0,
            "interior brightness constancy violated: max |diff| = {worst}"
        );
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let spec = tiny_spec();
        let a = generate_synthetic_sequence(&spec).unwrap();
        let b = generate_synthetic_sequence(&spec).unwrap();
        assert_eq!(a.sequence.frames, b.sequence.frames);
        assert_eq!(a.weight_signals, b.weight_signals);
    }
}
