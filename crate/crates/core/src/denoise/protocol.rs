//! Wire protocol (version 1) for external denoisers, over any byte stream.
//!
//! ```text
//! request  := "PNPD" | u32 version=1 | u8 dtype (0=real64, 1=complex128)
//!             | u32 ndim | u64 dims[ndim] | f64 t | payload
//! response := "PNPD" | u32 status (0=ok, 1=error)
//!             | ok:    u8 dtype | u32 ndim | u64 dims[ndim] | payload
//!             | error: u32 message_len | utf-8 message
//! ```
//!
//! All integers and floats are little-endian. The payload is the row-major
//! scalar buffer; complex elements are interleaved (re, im) f64 pairs.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::{Dtype, Tensor};

pub const MAGIC: [u8; 4] = *b"PNPD";
pub const VERSION: u32 = 1;

const MAX_NDIM: u32 = 16;
const MAX_ELEMENTS: u64 = 1 << 28;
const MAX_MESSAGE: u32 = 1 << 20;

fn dtype_code(dtype: Dtype) -> u8 {
    match dtype {
        Dtype::Real64 => 0,
        Dtype::Complex128 => 1,
    }
}

fn dtype_from_code(code: u8) -> Result<Dtype> {
    match code {
        0 => Ok(Dtype::Real64),
        1 => Ok(Dtype::Complex128),
        other => Err(Error::Protocol(format!("unknown dtype code {other}"))),
    }
}

fn write_tensor_header(w: &mut impl Write, v: &Tensor) -> Result<()> {
    w.write_u8(dtype_code(v.dtype()))?;
    w.write_u32::<LittleEndian>(v.shape().len() as u32)?;
    for &d in v.shape() {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    Ok(())
}

fn write_payload(w: &mut impl Write, v: &Tensor) -> Result<()> {
    match v.dtype() {
        Dtype::Real64 => {
            for &x in v.as_real()? {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
        Dtype::Complex128 => {
            for c in v.as_complex()? {
                w.write_f64::<LittleEndian>(c.re)?;
                w.write_f64::<LittleEndian>(c.im)?;
            }
        }
    }
    Ok(())
}

fn read_tensor_header(r: &mut impl Read) -> Result<(Dtype, Vec<usize>)> {
    let dtype = dtype_from_code(r.read_u8()?)?;
    let ndim = r.read_u32::<LittleEndian>()?;
    if ndim > MAX_NDIM {
        return Err(Error::Protocol(format!("ndim {ndim} exceeds limit {MAX_NDIM}")));
    }
    let mut dims = Vec::with_capacity(ndim as usize);
    let mut total: u64 = 1;
    for _ in 0..ndim {
        let d = r.read_u64::<LittleEndian>()?;
        total = total.saturating_mul(d.max(1));
        if total > MAX_ELEMENTS {
            return Err(Error::Protocol(format!(
                "tensor of {total}+ elements exceeds limit {MAX_ELEMENTS}"
            )));
        }
        dims.push(d as usize);
    }
    Ok((dtype, dims))
}

fn read_payload(r: &mut impl Read, dtype: Dtype, dims: &[usize]) -> Result<Tensor> {
    let n: usize = dims.iter().product();
    match dtype {
        Dtype::Real64 => {
            let mut data = vec![0.0f64; n];
            r.read_f64_into::<LittleEndian>(&mut data)?;
            Tensor::from_real(dims, data)
        }
        Dtype::Complex128 => {
            let mut raw = vec![0.0f64; 2 * n];
            r.read_f64_into::<LittleEndian>(&mut raw)?;
            let data = raw
                .chunks_exact(2)
                .map(|p| Complex64::new(p[0], p[1]))
                .collect();
            Tensor::from_complex(dims, data)
        }
    }
}

fn expect_magic(r: &mut impl Read) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Protocol(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    Ok(())
}

pub fn write_request(w: &mut impl Write, v: &Tensor, t: f64) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    write_tensor_header(w, v)?;
    w.write_f64::<LittleEndian>(t)?;
    write_payload(w, v)?;
    w.flush()?;
    Ok(())
}

pub fn read_request(r: &mut impl Read) -> Result<(Tensor, f64)> {
    expect_magic(r)?;
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Protocol(format!(
            "unsupported protocol version {version}"
        )));
    }
    let (dtype, dims) = read_tensor_header(r)?;
    let t = r.read_f64::<LittleEndian>()?;
    let tensor = read_payload(r, dtype, &dims)?;
    Ok((tensor, t))
}

pub fn write_response_ok(w: &mut impl Write, v: &Tensor) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_u32::<LittleEndian>(0)?;
    write_tensor_header(w, v)?;
    write_payload(w, v)?;
    w.flush()?;
    Ok(())
}

pub fn write_response_err(w: &mut impl Write, message: &str) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_u32::<LittleEndian>(1)?;
    let bytes = message.as_bytes();
    w.write_u32::<LittleEndian>(bytes.len() as u32)?;
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_response(r: &mut impl Read) -> Result<Tensor> {
    expect_magic(r)?;
    let status = r.read_u32::<LittleEndian>()?;
    match status {
        0 => {
            let (dtype, dims) = read_tensor_header(r)?;
            read_payload(r, dtype, &dims)
        }
        1 => {
            let len = r.read_u32::<LittleEndian>()?;
            if len > MAX_MESSAGE {
                return Err(Error::Protocol(format!(
                    "error message of {len} bytes exceeds limit"
                )));
            }
            let mut buf = vec![0u8; len as usize];
            r.read_exact(&mut buf)?;
            let msg = String::from_utf8_lossy(&buf).into_owned();
            Err(Error::Protocol(format!("server error: {msg}")))
        }
        other => Err(Error::Protocol(format!("unknown response status {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{standard_normal, RngSeed};
    use std::io::Cursor;

    #[test]
    fn request_round_trip_real() {
        let v = standard_normal(&[3, 5], Dtype::Real64, &mut RngSeed(1).rng());
        let mut buf = Vec::new();
        write_request(&mut buf, &v, 0.75).unwrap();
        let (back, t) = read_request(&mut Cursor::new(buf)).unwrap();
        assert_eq!(back, v);
        assert_eq!(t, 0.75);
    }

    #[test]
    fn response_round_trip_complex() {
        let v = standard_normal(&[4, 2, 2], Dtype::Complex128, &mut RngSeed(2).rng());
        let mut buf = Vec::new();
        write_response_ok(&mut buf, &v).unwrap();
        let back = read_response(&mut Cursor::new(buf)).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn error_response_carries_message() {
        let mut buf = Vec::new();
        write_response_err(&mut buf, "strength out of range").unwrap();
        let err = read_response(&mut Cursor::new(buf)).unwrap_err();
        match err {
            Error::Protocol(m) => assert!(m.contains("strength out of range")),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_protocol_error() {
        let buf = b"XXXX\x01\x00\x00\x00".to_vec();
        assert!(matches!(
            read_response(&mut Cursor::new(buf)),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn oversized_dims_are_rejected() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&0u32.to_le_bytes()); // status ok
        buf.push(0); // real64
        buf.extend_from_slice(&2u32.to_le_bytes()); // ndim
        buf.extend_from_slice(&(1u64 << 32).to_le_bytes());
        buf.extend_from_slice(&(1u64 << 32).to_le_bytes());
        assert!(matches!(
            read_response(&mut Cursor::new(buf)),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn truncated_payload_is_io_error() {
        let v = standard_normal(&[8], Dtype::Real64, &mut RngSeed(3).rng());
        let mut buf = Vec::new();
        write_response_ok(&mut buf, &v).unwrap();
        buf.truncate(buf.len() - 9);
        assert!(read_response(&mut Cursor::new(buf)).is_err());
    }
}
