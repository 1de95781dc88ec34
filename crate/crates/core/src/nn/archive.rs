//! Binary parameter archive. All integers are little-endian `u64` unless
//! noted, floats are little-endian IEEE-754 `f64`.
//!
//! ```text
//! network := "HGNET" version:u32
//!            role:str assets hist_len future_len latent_dim seed
//!            n_layers:u32 { kind:u8 in_dim out_dim param:f64 }*
//!            n_tensors:u32 { rows cols data:f64* }*
//! str     := len:u64 utf8-bytes
//! ```
//!
//! Layer kinds: 0 affine, 1 leaky relu, 2 tanh, 3 dropout, 4 scale. Unused
//! fields are written as zero. Writing then reading is bit-exact.

use std::io::{Read, Write};

use super::{LayerSpec, MlpNetwork, NetDims, Role};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const NETWORK_MAGIC: &[u8; 5] = b"HGNET";
pub const FORMAT_VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::Archive(e.to_string())
}

pub(crate) fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

pub(crate) fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

pub(crate) fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

pub(crate) fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes()).map_err(io_err)
}

pub(crate) fn get_bytes<R: Read, const K: usize>(r: &mut R) -> Result<[u8; K]> {
    let mut buf = [0u8; K];
    r.read_exact(&mut buf).map_err(io_err)?;
    Ok(buf)
}

pub(crate) fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(get_bytes(r)?))
}

pub(crate) fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(get_bytes(r)?))
}

pub(crate) fn get_usize<R: Read>(r: &mut R) -> Result<usize> {
    usize::try_from(get_u64(r)?).map_err(|e| Error::Archive(e.to_string()))
}

pub(crate) fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(get_bytes(r)?))
}

pub(crate) fn get_str<R: Read>(r: &mut R) -> Result<String> {
    let len = get_usize(r)?;
    if len > 1 << 24 {
        return Err(Error::Archive(format!("string length {len} is implausible")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(io_err)?;
    String::from_utf8(buf).map_err(|e| Error::Archive(e.to_string()))
}

pub fn write_network<W: Write>(w: &mut W, net: &MlpNetwork) -> Result<()> {
    w.write_all(NETWORK_MAGIC).map_err(io_err)?;
    put_u32(w, FORMAT_VERSION)?;
    put_str(w, net.role().as_str())?;
    let d = net.dims();
    for v in [d.assets, d.hist_len, d.future_len, d.latent_dim] {
        put_u64(w, v as u64)?;
    }
    put_u64(w, net.seed())?;
    put_u32(w, net.layers().len() as u32)?;
    for layer in net.layers() {
        let (kind, i, o, p) = match *layer {
            LayerSpec::Affine { in_dim, out_dim } => (0u8, in_dim, out_dim, 0.0),
            LayerSpec::LeakyRelu(p) => (1, 0, 0, p),
            LayerSpec::Tanh => (2, 0, 0, 0.0),
            LayerSpec::Dropout(p) => (3, 0, 0, p),
            LayerSpec::Scale(p) => (4, 0, 0, p),
        };
        w.write_all(&[kind]).map_err(io_err)?;
        put_u64(w, i as u64)?;
        put_u64(w, o as u64)?;
        put_f64(w, p)?;
    }
    put_u32(w, net.params().len() as u32)?;
    for t in net.tensors() {
        put_u64(w, t.nrows() as u64)?;
        put_u64(w, t.ncols() as u64)?;
        for &v in t.iter() {
            put_f64(w, v)?;
        }
    }
    Ok(())
}

pub fn read_network<R: Read>(r: &mut R) -> Result<MlpNetwork> {
    let magic: [u8; 5] = get_bytes(r)?;
    if &magic != NETWORK_MAGIC {
        return Err(Error::Archive("not a network archive (bad magic)".into()));
    }
    let version = get_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Archive(format!("unsupported network format version {version}")));
    }
    let role: Role = get_str(r)?.parse()?;
    let dims = NetDims {
        assets: get_usize(r)?,
        hist_len: get_usize(r)?,
        future_len: get_usize(r)?,
        latent_dim: get_usize(r)?,
    };
    let seed = get_u64(r)?;
    let n_layers = get_u32(r)?;
    let mut layers = Vec::with_capacity(n_layers as usize);
    for _ in 0..n_layers {
        let [kind]: [u8; 1] = get_bytes(r)?;
        let in_dim = get_usize(r)?;
        let out_dim = get_usize(r)?;
        let p = get_f64(r)?;
        layers.push(match kind {
            0 => LayerSpec::Affine { in_dim, out_dim },
            1 => LayerSpec::LeakyRelu(p),
            2 => LayerSpec::Tanh,
            3 => LayerSpec::Dropout(p),
            4 => LayerSpec::Scale(p),
            other => return Err(Error::Archive(format!("unknown layer kind {other}"))),
        });
    }
    let mut net = MlpNetwork::from_layers(role, dims, layers)?;
    net.seed = seed;
    let n_tensors = get_u32(r)? as usize;
    if n_tensors != net.params.len() {
        return Err(Error::Archive(format!(
            "archive has {n_tensors} tensors, layer stack needs {}",
            net.params.len()
        )));
    }
    for slot in net.params.iter_mut() {
        let rows = get_usize(r)?;
        let cols = get_usize(r)?;
        if (rows, cols) != slot.dim() {
            return Err(Error::Archive(format!(
                "tensor shape {rows}x{cols} does not match layer shape {:?}",
                slot.dim()
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(get_f64(r)?);
        }
        *slot = std::sync::Arc::new(Matrix::from_shape_vec((rows, cols), data).map_err(|e| Error::Archive(e.to_string()))?);
    }
    Ok(net)
}
