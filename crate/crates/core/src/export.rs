//! 8-bit PGM export of magnitude frames.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::tensor::ComplexVolume;

#[derive(Clone, Debug, PartialEq)]
pub struct ExportReport {
    pub files: Vec<PathBuf>,
    /// Magnitude mapped to gray level 0.
    pub min: f64,
    /// Magnitude mapped to gray level 255.
    pub max: f64,
}

/// Binary PGM (P5) bytes for a row-major 8-bit image.
pub fn pgm_bytes(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Min-max scaling to `0..=255`; a constant input maps to 0.
pub fn scale_to_u8(values: &[f64], min: f64, max: f64) -> Vec<u8> {
    let span = max - min;
    values
        .iter()
        .map(|&v| if span > 0.0 { ((v - min) / span * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 })
        .collect()
}

/// Writes `frame_XXX.pgm` for every frame and `profile_xt.pgm` (the centre
/// row over time, one image row per frame) into `dir`, all scaled with the
/// global magnitude range, plus `scale.txt` recording that range.
pub fn export_frames(v: &ComplexVolume, dir: &Path) -> Result<ExportReport> {
    fs::create_dir_all(dir)?;
    let d = v.dims();
    let mag = v.magnitude();
    let min = mag.iter().copied().fold(f64::INFINITY, f64::min);
    let max = mag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut files = Vec::with_capacity(d.nt + 1);
    for t in 0..d.nt {
        let px = scale_to_u8(&mag[t * d.frame_len()..(t + 1) * d.frame_len()], min, max);
        let path = dir.join(format!("frame_{t:03}.pgm"));
        fs::write(&path, pgm_bytes(d.nx, d.ny, &px))?;
        files.push(path);
    }
    let row = d.ny / 2;
    let profile: Vec<f64> = (0..d.nt)
        .flat_map(|t| (0..d.nx).map(move |x| (t, x)))
        .map(|(t, x)| mag[t * d.frame_len() + row * d.nx + x])
        .collect();
    let path = dir.join("profile_xt.pgm");
    fs::write(&path, pgm_bytes(d.nx, d.nt, &scale_to_u8(&profile, min, max)))?;
    files.push(path);
    let mut log = fs::File::create(dir.join("scale.txt"))?;
    writeln!(log, "min_magnitude={min:e}\nmax_magnitude={max:e}")?;
    Ok(ExportReport { files, min, max })
}
