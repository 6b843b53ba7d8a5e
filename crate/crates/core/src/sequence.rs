//! Ordered 2D+t frame sequences with acquisition metadata.

use crate::error::{Error, Result};
use crate::image::Image;

/// A cine sequence: M frames of identical size, physical pixel spacing in mm
/// (row axis, column axis) and the acquisition rate in Hz.
#[derive(Debug, Clone)]
pub struct ImageSequence {
    pub frames: Vec<Image>,
    pub pixel_spacing_mm: [f64; 2],
    pub sampling_hz: f64,
    pub name: String,
}

impl ImageSequence {
    pub fn new(
        frames: Vec<Image>,
        pixel_spacing_mm: [f64; 2],
        sampling_hz: f64,
        name: impl Into<String>,
    ) -> Result<Self> {
        let seq = ImageSequence {
            frames,
            pixel_spacing_mm,
            sampling_hz,
            name: name.into(),
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::InvalidInput(
                "sequence requires at least 2 frames".into(),
            ));
        }
        let dim = self.frames[0].dim();
        for (k, f) in self.frames.iter().enumerate() {
            if f.dim() != dim {
                return Err(Error::ShapeMismatch {
                    expected: format!("{}x{}", dim.0, dim.1),
                    got: format!("{}x{} (frame {})", f.dim().0, f.dim().1, k + 1),
                });
            }
        }
        if !(self.sampling_hz > 0.0) {
            return Err(Error::InvalidInput("sampling_hz must be positive".into()));
        }
        if !(self.pixel_spacing_mm[0] > 0.0 && self.pixel_spacing_mm[1] > 0.0) {
            return Err(Error::InvalidInput(
                "pixel_spacing_mm must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Number of frames M.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frame dimensions (h, w).
    pub fn dim(&self) -> (usize, usize) {
        self.frames[0].dim()
    }
}
