//! Binary volume and k-space files.
//!
//! Volume file: `b"ALNEVOL1"`, then `nx`, `ny`, `nt` as little-endian `u32`,
//! then `nx*ny*nt` interleaved `(re, im)` little-endian `f32` pairs in
//! storage order.
//!
//! K-space file: `b"ALNEKSP1"`, then little-endian `u32` fields `nx`, `ny`,
//! `nt`, `n_coils`, `kind` (0 Cartesian, 1 radial), `samples_per_spoke`
//! (0 for Cartesian), then `nt` per-frame sample counts as `u32`, then the
//! samples as interleaved `(re, im)` little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use super::{ComplexVolume, Dims, KSpaceData, SampleLayout, SamplingKind};
use crate::error::{Error, Result};

pub const VOLUME_MAGIC: &[u8; 8] = b"ALNEVOL1";
pub const KSPACE_MAGIC: &[u8; 8] = b"ALNEKSP1";

/// Refuse headers describing more than this many samples.
const MAX_SAMPLES: u64 = 1 << 31;

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

fn read_exact_or_format<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_format(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => format_err("trailing bytes after payload"),
    }
}

pub fn write_volume<W: Write>(w: &mut W, v: &ComplexVolume) -> Result<()> {
    let d = v.dims();
    w.write_all(VOLUME_MAGIC)?;
    for n in d.as_array() {
        let n = u32::try_from(n).map_err(|_| Error::Format(format!("dimension {n} exceeds u32")))?;
        w.write_all(&n.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(d.len() * 8);
    for z in v.as_slice() {
        buf.extend_from_slice(&(z.re as f32).to_le_bytes());
        buf.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_volume<R: Read>(r: &mut R) -> Result<ComplexVolume> {
    let mut magic = [0u8; 8];
    read_exact_or_format(r, &mut magic, "header")?;
    if &magic != VOLUME_MAGIC {
        return format_err("bad volume magic");
    }
    let nx = read_u32(r, "header")? as u64;
    let ny = read_u32(r, "header")? as u64;
    let nt = read_u32(r, "header")? as u64;
    let total = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nt))
        .filter(|&n| n > 0 && n <= MAX_SAMPLES)
        .ok_or_else(|| Error::Format(format!("unsupported dims {nx}x{ny}x{nt}")))?;
    let mut payload = vec![0u8; total as usize * 8];
    read_exact_or_format(r, &mut payload, "payload")?;
    expect_eof(r)?;
    let data: Vec<Complex64> = payload
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    let dims = Dims::new(nx as usize, ny as usize, nt as usize);
    ComplexVolume::from_vec(dims, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_volume(path: impl AsRef<Path>, v: &ComplexVolume) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_volume(&mut w, v)?;
    w.flush()?;
    Ok(())
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<ComplexVolume> {
    let mut r = BufReader::new(File::open(path)?);
    read_volume(&mut r)
}

pub fn write_kspace<W: Write>(w: &mut W, y: &KSpaceData) -> Result<()> {
    let l = &y.layout;
    w.write_all(KSPACE_MAGIC)?;
    let (kind, sps) = match l.kind {
        SamplingKind::Cartesian => (0u32, 0usize),
        SamplingKind::Radial { samples_per_spoke } => (1u32, samples_per_spoke),
    };
    let header = [l.dims.nx, l.dims.ny, l.dims.nt, l.n_coils, kind as usize, sps];
    for n in header.iter().chain(l.frame_counts.iter()) {
        let n = u32::try_from(*n).map_err(|_| Error::Format(format!("field {n} exceeds u32")))?;
        w.write_all(&n.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(y.samples.len() * 16);
    for z in &y.samples {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_kspace<R: Read>(r: &mut R) -> Result<KSpaceData> {
    let mut magic = [0u8; 8];
    read_exact_or_format(r, &mut magic, "header")?;
    if &magic != KSPACE_MAGIC {
        return format_err("bad k-space magic");
    }
    let mut h = [0u64; 6];
    for v in h.iter_mut() {
        *v = read_u32(r, "header")? as u64;
    }
    let [nx, ny, nt, n_coils, kind, sps] = h;
    if nx == 0 || ny == 0 || nt == 0 || n_coils == 0 || nt > MAX_SAMPLES {
        return format_err("degenerate k-space header");
    }
    let kind = match kind {
        0 => SamplingKind::Cartesian,
        1 if sps > 0 => SamplingKind::Radial { samples_per_spoke: sps as usize },
        _ => return format_err(format!("unknown sampling kind {kind}")),
    };
    let mut frame_counts = Vec::with_capacity(nt as usize);
    for _ in 0..nt {
        frame_counts.push(read_u32(r, "frame counts")? as usize);
    }
    let total = frame_counts.iter().map(|&c| c as u64).sum::<u64>() * n_coils;
    if total > MAX_SAMPLES {
        return format_err("k-space too large");
    }
    let mut payload = vec![0u8; total as usize * 16];
    read_exact_or_format(r, &mut payload, "payload")?;
    expect_eof(r)?;
    let samples = payload
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect();
    let layout = SampleLayout {
        dims: Dims::new(nx as usize, ny as usize, nt as usize),
        n_coils: n_coils as usize,
        frame_counts,
        kind,
    };
    KSpaceData::new(samples, layout)
}

pub fn save_kspace(path: impl AsRef<Path>, y: &KSpaceData) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_kspace(&mut w, y)?;
    w.flush()?;
    Ok(())
}

pub fn load_kspace(path: impl AsRef<Path>) -> Result<KSpaceData> {
    let mut r = BufReader::new(File::open(path)?);
    read_kspace(&mut r)
}

/// Magnitude frames as CSV rows `t,y,|v(0,y,t)|,...,|v(nx-1,y,t)|`.
pub fn write_magnitude_csv<W: Write>(w: &mut W, v: &ComplexVolume) -> Result<()> {
    let d = v.dims();
    write!(w, "t,y")?;
    for x in 0..d.nx {
        write!(w, ",x{x}")?;
    }
    writeln!(w)?;
    for t in 0..d.nt {
        for y in 0..d.ny {
            write!(w, "{t},{y}")?;
            for x in 0..d.nx {
                write!(w, ",{}", v.get(x, y, t).norm())?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}
