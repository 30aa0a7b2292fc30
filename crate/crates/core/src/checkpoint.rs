//! Flat binary network checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    4 bytes  "NPCK"
//! version  u32      1
//! layers   u32      L
//! L times:
//!   rows   u32
//!   cols   u32
//!   act    u8       0 linear, 1 relu, 2 leaky relu
//!   slope  f64      leaky slope, 0 otherwise
//!   has_r  u8       0 or 1
//!   W      rows*cols f64, row-major
//!   R      cols*cols f64, row-major, present when has_r = 1
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Activation, Layer, NetworkState};
use crate::numerics::Matrix;

pub const MAGIC: &[u8; 4] = b"NPCK";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(net: &NetworkState, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for (l, layer) in net.layers().iter().enumerate() {
        let (rows, cols) = layer.weights.shape();
        w.write_all(&(rows as u32).to_le_bytes())?;
        w.write_all(&(cols as u32).to_le_bytes())?;
        let (tag, slope) = match layer.activation {
            Activation::Linear => (0u8, 0.0),
            Activation::Relu => (1, 0.0),
            Activation::LeakyRelu { slope } => (2, slope),
        };
        w.write_all(&[tag])?;
        w.write_all(&slope.to_le_bytes())?;
        let r = net.decorrelator(l);
        w.write_all(&[u8::from(r.is_some())])?;
        write_f64s(&mut w, layer.weights.as_slice())?;
        if let Some(r) = r {
            write_f64s(&mut w, r.as_slice())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Parse("checkpoint truncated".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(f64::from_le_bytes(a))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Parse("checkpoint dims overflow".into()))?;
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Parse("checkpoint dims overflow".into()))?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<NetworkState> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, at: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Parse("not a network checkpoint (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != VERSION as usize {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let count = c.u32()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    let mut rs = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rows = c.u32()?;
        let cols = c.u32()?;
        let tag = c.u8()?;
        let slope = c.f64()?;
        let activation = match tag {
            0 => Activation::Linear,
            1 => Activation::Relu,
            2 => Activation::LeakyRelu { slope },
            t => return Err(Error::Parse(format!("unknown activation tag {t}"))),
        };
        let has_r = match c.u8()? {
            0 => false,
            1 => true,
            f => return Err(Error::Parse(format!("bad decorrelator flag {f}"))),
        };
        let weights = c.matrix(rows, cols)?;
        rs.push(if has_r { Some(c.matrix(cols, cols)?) } else { None });
        layers.push(Layer { weights, activation });
    }
    if c.at != bytes.len() {
        return Err(Error::Parse("trailing bytes after checkpoint".into()));
    }
    let mut net = NetworkState::new(layers)?;
    for (l, r) in rs.into_iter().enumerate() {
        net.set_decorrelator(l, r)?;
    }
    Ok(net)
}

pub fn save(net: &NetworkState, path: &Path) -> Result<()> {
    write_checkpoint(net, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load(path: &Path) -> Result<NetworkState> {
    read_checkpoint(std::fs::File::open(path)?)
}
