//! On-disk tensor container: magic "PNPT", version, dtype, dims, then the
//! row-major little-endian payload — the same layout as the denoiser wire
//! protocol's tensor body. Round-trips are bit-exact.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Dtype, Tensor};

pub const MAGIC: [u8; 4] = *b"PNPT";
pub const VERSION: u32 = 1;

const MAX_NDIM: u32 = 16;
const MAX_ELEMENTS: u64 = 1 << 30;

pub fn save(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    w.write_all(&MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u8(match t.dtype() {
        Dtype::Real64 => 0,
        Dtype::Complex128 => 1,
    })?;
    w.write_u32::<LittleEndian>(t.shape().len() as u32)?;
    for &d in t.shape() {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    match t.dtype() {
        Dtype::Real64 => {
            for &x in t.as_real()? {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
        Dtype::Complex128 => {
            for c in t.as_complex()? {
                w.write_f64::<LittleEndian>(c.re)?;
                w.write_f64::<LittleEndian>(c.im)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Config(format!(
            "{}: not a tensor file (bad magic)",
            path.display()
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Config(format!(
            "{}: unsupported tensor file version {version}",
            path.display()
        )));
    }
    let dtype = match r.read_u8()? {
        0 => Dtype::Real64,
        1 => Dtype::Complex128,
        other => {
            return Err(Error::Config(format!(
                "{}: unknown dtype code {other}",
                path.display()
            )))
        }
    };
    let ndim = r.read_u32::<LittleEndian>()?;
    if ndim > MAX_NDIM {
        return Err(Error::Config(format!("{}: ndim {ndim} too large", path.display())));
    }
    let mut dims = Vec::with_capacity(ndim as usize);
    let mut total: u64 = 1;
    for _ in 0..ndim {
        let d = r.read_u64::<LittleEndian>()?;
        total = total.saturating_mul(d.max(1));
        if total > MAX_ELEMENTS {
            return Err(Error::Config(format!(
                "{}: tensor too large ({total}+ elements)",
                path.display()
            )));
        }
        dims.push(d as usize);
    }
    let n: usize = dims.iter().product();
    match dtype {
        Dtype::Real64 => {
            let mut data = vec![0.0f64; n];
            r.read_f64_into::<LittleEndian>(&mut data)?;
            Tensor::from_real(&dims, data)
        }
        Dtype::Complex128 => {
            let mut raw = vec![0.0f64; 2 * n];
            r.read_f64_into::<LittleEndian>(&mut raw)?;
            Tensor::from_complex(
                &dims,
                raw.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect(),
            )
        }
    }
}
