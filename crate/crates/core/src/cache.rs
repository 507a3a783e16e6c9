//! On-disk cache for spectral decompositions.
//!
//! Layout of a basis file: an 8-byte magic, `u64` row and component counts,
//! the vector block column-major as little-endian `f64`, the value vector,
//! then an FNV-1a 64 checksum of everything before the trailer. Feature
//! spectra use a different magic and carry one extra header word for the
//! rank-deficiency flag.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::spectral::{FeatureSpectral, SpectralBasis};

const BASIS_MAGIC: &[u8; 8] = b"SPADBAS1";
const FEATURE_MAGIC: &[u8; 8] = b"SPADFEA1";

/// FNV-1a 64-bit hash; used for cache checksums and input fingerprints.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hash a file's contents; used to key cache entries by input content.
pub fn hash_file(path: &Path) -> Result<u64> {
    let mut f = fs::File::open(path)?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf)?;
    Ok(fnv1a64(&buf))
}

fn push_f64_column_major(buf: &mut Vec<u8>, m: &Array2<f64>) {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            buf.extend_from_slice(&m[[i, j]].to_le_bytes());
        }
    }
}

fn encode(magic: &[u8; 8], extra_header: Option<u64>, u: &Array2<f64>, vals: &Array1<f64>) -> Vec<u8> {
    let (n, d) = (u.nrows(), u.ncols());
    let mut buf = Vec::with_capacity(32 + 8 * (n * d + d));
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(d as u64).to_le_bytes());
    if let Some(w) = extra_header {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    push_f64_column_major(&mut buf, u);
    for &v in vals.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let sum = fnv1a64(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    buf
}

struct Decoded {
    extra_header: Option<u64>,
    u: Array2<f64>,
    vals: Array1<f64>,
}

fn decode(bytes: &[u8], magic: &[u8; 8], has_extra: bool, what: &str) -> Result<Decoded> {
    let header = 24 + if has_extra { 8 } else { 0 };
    if bytes.len() < header + 8 {
        return Err(Error::data(format!("{what} cache file truncated")));
    }
    if &bytes[..8] != magic {
        return Err(Error::data(format!("{what} cache file has wrong magic")));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(trailer.try_into().unwrap());
    if fnv1a64(body) != stored {
        return Err(Error::data(format!("{what} cache file checksum mismatch")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let extra_header = if has_extra {
        Some(u64::from_le_bytes(bytes[24..32].try_into().unwrap()))
    } else {
        None
    };
    let expected = header + 8 * (n * d + d) + 8;
    if bytes.len() != expected {
        return Err(Error::data(format!(
            "{what} cache file length {} does not match header ({n} x {d})",
            bytes.len()
        )));
    }
    let mut off = header;
    let read_f64 = |bytes: &[u8], off: &mut usize| {
        let v = f64::from_le_bytes(bytes[*off..*off + 8].try_into().unwrap());
        *off += 8;
        v
    };
    let mut u = Array2::<f64>::zeros((n, d));
    for j in 0..d {
        for i in 0..n {
            u[[i, j]] = read_f64(body, &mut off);
        }
    }
    let mut vals = Array1::<f64>::zeros(d);
    for j in 0..d {
        vals[j] = read_f64(body, &mut off);
    }
    if u.iter().chain(vals.iter()).any(|x| !x.is_finite()) {
        return Err(Error::data(format!("{what} cache file holds non-finite values")));
    }
    Ok(Decoded { extra_header, u, vals })
}

pub fn write_basis(path: &Path, basis: &SpectralBasis) -> Result<()> {
    let buf = encode(BASIS_MAGIC, None, &basis.u, &basis.sigma);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_basis(path: &Path) -> Result<SpectralBasis> {
    let bytes = fs::read(path)?;
    let dec = decode(&bytes, BASIS_MAGIC, false, "basis")?;
    Ok(SpectralBasis { u: dec.u, sigma: dec.vals })
}

pub fn write_feature_spectral(path: &Path, fs_: &FeatureSpectral) -> Result<()> {
    let buf = encode(FEATURE_MAGIC, Some(fs_.rank_deficient as u64), &fs_.q, &fs_.sigma_x);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_feature_spectral(path: &Path) -> Result<FeatureSpectral> {
    let bytes = fs::read(path)?;
    let dec = decode(&bytes, FEATURE_MAGIC, true, "feature spectrum")?;
    Ok(FeatureSpectral {
        q: dec.u,
        sigma_x: dec.vals,
        rank_deficient: dec.extra_header == Some(1),
    })
}
