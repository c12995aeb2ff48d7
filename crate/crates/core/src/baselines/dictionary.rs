use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::omp::omp_sparse_code;
use crate::error::{Error, Result};
use crate::exec;

pub const DICTIONARY_MAGIC: &[u8; 8] = b"ALNEDIC1";

const UNIT_TOL: f64 = 1e-10;

/// Real dictionary `D` of `atoms` unit-norm columns of length `dim`, stored
/// atom by atom.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    dim: usize,
    atoms: usize,
    data: Vec<f64>,
}

impl Dictionary {
    /// Takes atoms as given; each must have unit norm.
    pub fn new(dim: usize, atoms: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || atoms == 0 || data.len() != dim * atoms {
            return Err(Error::Dimension(format!("{} values for a {dim}x{atoms} dictionary", data.len())));
        }
        let d = Dictionary { dim, atoms, data };
        if let Some(k) = (0..atoms).find(|&k| (norm(d.atom(k)) - 1.0).abs() > UNIT_TOL) {
            return Err(Error::Precondition(format!("atom {k} is not unit norm")));
        }
        Ok(d)
    }

    /// Normalizes each column; zero columns are rejected.
    pub fn from_columns(dim: usize, atoms: usize, mut data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * atoms {
            return Err(Error::Dimension("dictionary size mismatch".into()));
        }
        for col in data.chunks_mut(dim) {
            let n = norm(col);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::Precondition("zero or non-finite dictionary column".into()));
            }
            col.iter_mut().for_each(|v| *v /= n);
        }
        Dictionary::new(dim, atoms, data)
    }

    /// Seeded Gaussian atoms, normalized.
    pub fn random(dim: usize, atoms: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..dim * atoms).map(|_| StandardNormal.sample(&mut rng)).collect();
        Dictionary::from_columns(dim, atoms, data)
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for k in 0..dim {
            data[k * dim + k] = 1.0;
        }
        Dictionary { dim, atoms: dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> usize {
        self.atoms
    }

    pub fn atom(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_norm_defect(&self) -> f64 {
        (0..self.atoms).map(|k| (norm(self.atom(k)) - 1.0).abs()).fold(0.0, f64::max)
    }

    /// `D^T v`.
    pub fn correlate(&self, v: &[f64], out: &mut [f64]) {
        for (o, atom) in out.iter_mut().zip(self.data.chunks_exact(self.dim)) {
            *o = crate::tensor::dot_real(atom, v);
        }
    }

    /// `sum_k c_k d_k` for sparse `(k, c_k)` pairs.
    pub fn synthesize(&self, coeffs: &[(usize, f64)]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(k, c) in coeffs {
            for (o, a) in out.iter_mut().zip(self.atom(k)) {
                *o += c * a;
            }
        }
        out
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(DICTIONARY_MAGIC)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.atoms as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let trunc = |e: std::io::Error| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("truncated dictionary file".into()),
            _ => Error::Io(e),
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(trunc)?;
        if &magic != DICTIONARY_MAGIC {
            return Err(Error::Format("not a dictionary file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(trunc)?;
        let dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4).map_err(trunc)?;
        let atoms = u32::from_le_bytes(b4) as usize;
        if dim == 0 || atoms == 0 || dim.saturating_mul(atoms) > 1 << 28 {
            return Err(Error::Format(format!("implausible dictionary shape {dim}x{atoms}")));
        }
        let mut data = vec![0.0; dim * atoms];
        let mut b8 = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut b8).map_err(trunc)?;
            *v = f64::from_le_bytes(b8);
        }
        Dictionary::new(dim, atoms, data).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean over training vectors (rows of length `dim`) of the OMP residual
/// norm with sparsity `s`.
pub fn mean_approximation_error(dict: &Dictionary, vectors: &[f64], s: usize) -> Result<f64> {
    let d = dict.dim();
    if vectors.is_empty() || !vectors.len().is_multiple_of(d) {
        return Err(Error::Dimension("training vectors do not match the dictionary dimension".into()));
    }
    let rows: Vec<&[f64]> = vectors.chunks_exact(d).collect();
    let errs = exec::map_slice(&rows, |v| omp_sparse_code(dict, v, s).map(|c| c.residual_norm));
    let mut total = 0.0;
    for e in errs {
        total += e?;
    }
    Ok(total / rows.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_atoms_are_unit_norm() {
        let d = Dictionary::random(64, 64, 1).unwrap();
        assert!(d.max_norm_defect() < 1e-12);
        assert!(Dictionary::new(2, 1, vec![1.0, 1.0]).is_err());
        assert!(Dictionary::from_columns(2, 1, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn round_trip() {
        let d = Dictionary::random(8, 5, 2).unwrap();
        let mut buf = Vec::new();
        d.write(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 8 * 40);
        assert_eq!(Dictionary::read(&mut buf.as_slice()).unwrap(), d);
        assert!(matches!(Dictionary::read(&mut &buf[..20]), Err(Error::Format(_))));
    }
}
