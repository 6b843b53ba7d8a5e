//! File formats: 8-bit binary PGM frames, JSON sequence manifests, and the
//! "DVF1" binary displacement-field format.
//!
//! DVF1 layout: magic bytes `DVF1`, then `h` and `w` as little-endian u32,
//! then the full x-displacement plane and the full y-displacement plane,
//! each row-major little-endian f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dvf::DisplacementField;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::sequence::ImageSequence;

/// Reads an 8-bit binary PGM (P5) file.
pub fn read_pgm(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format(path, "not a binary PGM (missing P5 magic)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        *field = next_pnm_token(&bytes, &mut pos)
            .ok_or_else(|| Error::format(path, "truncated PGM header"))?;
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(Error::format(path, "zero PGM dimensions"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(path, format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    if bytes.len() < pos + w * h {
        return Err(Error::format(path, "truncated PGM raster"));
    }
    let raster = &bytes[pos..pos + w * h];
    Ok(Array2::from_shape_fn((h, w), |(r, c)| {
        raster[r * w + c] as f64
    }))
}

fn next_pnm_token(bytes: &[u8], pos: &mut usize) -> Option<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return None;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok()?.parse().ok()
}

/// Writes an image as 8-bit binary PGM, rounding and clamping intensities
/// to `0..=255`.
pub fn write_pgm(img: &Image, path: &Path) -> Result<()> {
    let (h, w) = img.dim();
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        write!(out, "P5\n{w} {h}\n255\n")?;
        let mut raster = Vec::with_capacity(h * w);
        for v in img.iter() {
            raster.push(v.round().clamp(0.0, 255.0) as u8);
        }
        out.write_all(&raster)
    };
    write(&mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Spacing {
    Isotropic(f64),
    PerAxis([f64; 2]),
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    frames: Vec<String>,
    pixel_spacing_mm: Spacing,
    sampling_hz: f64,
    name: String,
}

/// Loads a sequence from a JSON manifest; frame paths are resolved relative
/// to the manifest's directory.
pub fn load_sequence(manifest_path: &Path) -> Result<ImageSequence> {
    let file = File::open(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::format(manifest_path, e.to_string()))?;
    if manifest.frames.len() < 2 {
        return Err(Error::InvalidInput(
            "sequence requires at least 2 frames".into(),
        ));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for rel in &manifest.frames {
        frames.push(read_pgm(&base.join(rel))?);
    }
    let spacing = match manifest.pixel_spacing_mm {
        Spacing::Isotropic(s) => [s, s],
        Spacing::PerAxis(p) => p,
    };
    ImageSequence::new(frames, spacing, manifest.sampling_hz, manifest.name)
}

/// Writes all frames as `frame_###.pgm` plus a `manifest.json` into `dir`
/// and returns the manifest path.
pub fn save_sequence(seq: &ImageSequence, dir: &Path) -> Result<PathBuf> {
    seq.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rel_paths = Vec::with_capacity(seq.len());
    for (k, frame) in seq.frames.iter().enumerate() {
        let rel = format!("frame_{k:03}.pgm");
        write_pgm(frame, &dir.join(&rel))?;
        rel_paths.push(rel);
    }
    let manifest = Manifest {
        frames: rel_paths,
        pixel_spacing_mm: Spacing::PerAxis(seq.pixel_spacing_mm),
        sampling_hz: seq.sampling_hz,
        name: seq.name.clone(),
    };
    let path = dir.join("manifest.json");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &manifest)
        .map_err(|e| Error::format(&path, e.to_string()))?;
    Ok(path)
}

const DVF_MAGIC: &[u8; 4] = b"DVF1";

pub fn read_dvf(path: &Path) -> Result<DisplacementField> {
    let mut rd = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut magic = [0u8; 4];
    rd.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != DVF_MAGIC {
        return Err(Error::format(path, "missing DVF1 magic"));
    }
    let h = rd
        .read_u32::<LittleEndian>()
        .map_err(|e| Error::io(path, e))? as usize;
    let w = rd
        .read_u32::<LittleEndian>()
        .map_err(|e| Error::io(path, e))? as usize;
    if h == 0 || w == 0 {
        return Err(Error::format(path, "zero DVF dimensions"));
    }
    let mut read_plane = || -> Result<Array2<f64>> {
        let mut plane = Array2::zeros((h, w));
        for r in 0..h {
            for c in 0..w {
                let v = rd
                    .read_f32::<LittleEndian>()
                    .map_err(|e| Error::io(path, e))?;
                plane[[r, c]] = v as f64;
            }
        }
        Ok(plane)
    };
    let u_x = read_plane()?;
    let u_y = read_plane()?;
    DisplacementField::new(u_x, u_y)
}

/// Writes a field in DVF1 format. Components are stored as f32.
pub fn write_dvf(field: &DisplacementField, path: &Path) -> Result<()> {
    let (h, w) = field.dim();
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        out.write_all(DVF_MAGIC)?;
        out.write_u32::<LittleEndian>(h as u32)?;
        out.write_u32::<LittleEndian>(w as u32)?;
        for plane in [&field.u_x, &field.u_y] {
            for v in plane.iter() {
                out.write_f32::<LittleEndian>(*v as f32)?;
            }
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use tempfile::tempdir;

    #[test]
    fn pgm_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let img = Array2::from_shape_fn((7, 5), |(r, c)| ((r * 41 + c * 17) % 256) as f64);
        let path = dir.path().join("a.pgm");
        write_pgm(&img, &path).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        std::fs::write(&path, b"P5\n# generated\n3 2\n255\n\x00\x01\x02\x03\x04\x05").unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!(img.dim(), (2, 3));
        assert_eq!(img[[1, 2]], 5.0);
    }

    #[test]
    fn pgm_rejects_wide_maxval() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("w.pgm");
        std::fs::write(&path, b"P5\n2 2\n65535\n\x00\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(read_pgm(&path).is_err());
    }

    #[test]
    fn sequence_round_trip_preserves_frames_and_metadata() {
        let dir = tempdir().unwrap();
        let frames = vec![
            Array2::from_shape_fn((4, 6), |(r, c)| ((r + 2 * c) % 256) as f64),
            Array2::from_shape_fn((4, 6), |(r, c)| ((3 * r + c) % 256) as f64),
        ];
        let seq = ImageSequence::new(frames, [1.0, 1.5], 3.22, "trip").unwrap();
        let manifest = save_sequence(&seq, dir.path()).unwrap();
        let back = load_sequence(&manifest).unwrap();
        assert_eq!(back.frames, seq.frames);
        assert_eq!(back.pixel_spacing_mm, seq.pixel_spacing_mm);
        assert_eq!(back.sampling_hz, seq.sampling_hz);
        assert_eq!(back.name, seq.name);
    }

    #[test]
    fn manifest_with_missing_frame_file_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(
            &path,
            r#"{"frames":["a.pgm","b.pgm"],"pixel_spacing_mm":1.0,"sampling_hz":3.0,"name":"x"}"#,
        )
        .unwrap();
        assert!(load_sequence(&path).is_err());
    }

    #[test]
    fn manifest_with_one_frame_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(
            &path,
            r#"{"frames":["a.pgm"],"pixel_spacing_mm":1.0,"sampling_hz":3.0,"name":"x"}"#,
        )
        .unwrap();
        let err = load_sequence(&path).unwrap_err();
        assert!(err.to_string().contains("at least 2 frames"));
    }

    #[test]
    fn manifest_accepts_scalar_spacing() {
        let dir = tempdir().unwrap();
        let img = Array2::from_elem((3, 3), 7.0);
        write_pgm(&img, &dir.path().join("a.pgm")).unwrap();
        write_pgm(&img, &dir.path().join("b.pgm")).unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(
            &path,
            r#"{"frames":["a.pgm","b.pgm"],"pixel_spacing_mm":2.0,"sampling_hz":3.0,"name":"x"}"#,
        )
        .unwrap();
        let seq = load_sequence(&path).unwrap();
        assert_eq!(seq.pixel_spacing_mm, [2.0, 2.0]);
    }

    #[test]
    fn dvf_round_trip_preserves_f32_values() {
        let dir = tempdir().unwrap();
        let mut f = DisplacementField::zeros(3, 4);
        for r in 0..3 {
            for c in 0..4 {
                f.u_x[[r, c]] = (r as f64 - 1.25) * 0.5 + c as f64;
                f.u_y[[r, c]] = (c as f64) * -0.125;
            }
        }
        let path = dir.path().join("f.dvf");
        write_dvf(&f, &path).unwrap();
        let back = read_dvf(&path).unwrap();
        // Chosen values are exactly representable as f32.
        assert_eq!(f, back);
    }

    #[test]
    fn dvf_rejects_bad_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.dvf");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00").unwrap();
        assert!(read_dvf(&path).is_err());
    }
}
