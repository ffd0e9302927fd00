//! Dense real/complex tensor values shared by every other module.
//!
//! Tensors are immutable once handed to the solver; arithmetic requires
//! exactly matching shape and dtype (no broadcasting, ever). Complex data is
//! stored as interleaved (re, im) pairs, which is also the on-disk and wire
//! layout.

pub use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fmt;

use crate::error::{Error, Result};

/// Element type of a tensor. All solver math runs in 64-bit floats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    Real64,
    Complex128,
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dtype::Real64 => write!(f, "real64"),
            Dtype::Complex128 => write!(f, "complex128"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Data {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

/// Dense row-major tensor of `f64` or `Complex64` scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Data,
}

/// Seed for reproducible random draws. The same seed with the same call
/// sequence yields bit-identical results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Generator on the default stream.
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Generator on a named sub-stream, so independent consumers (measurement
    /// noise, injected noise, sampling probes) never share draws.
    pub fn stream(self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(stream);
        rng
    }
}

fn shape_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn zeros(shape: &[usize], dtype: Dtype) -> Tensor {
        let n = shape_len(shape);
        let data = match dtype {
            Dtype::Real64 => Data::Real(vec![0.0; n]),
            Dtype::Complex128 => Data::Complex(vec![Complex64::new(0.0, 0.0); n]),
        };
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_real(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if data.len() != shape_len(shape) {
            return Err(Error::InvalidParameter(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Data::Real(data),
        })
    }

    pub fn from_complex(shape: &[usize], data: Vec<Complex64>) -> Result<Tensor> {
        if data.len() != shape_len(shape) {
            return Err(Error::InvalidParameter(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Data::Complex(data),
        })
    }

    /// 1-D real tensor, mostly for tests and small fixtures.
    pub fn vector(data: &[f64]) -> Tensor {
        Tensor {
            shape: vec![data.len()],
            data: Data::Real(data.to_vec()),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> Dtype {
        match self.data {
            Data::Real(_) => Dtype::Real64,
            Data::Complex(_) => Dtype::Complex128,
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self.data, Data::Complex(_))
    }

    /// Number of elements (a complex element counts once).
    pub fn len(&self) -> usize {
        match &self.data {
            Data::Real(v) => v.len(),
            Data::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of real scalar components: `len` for real, `2·len` for complex.
    pub fn scalar_count(&self) -> usize {
        match &self.data {
            Data::Real(v) => v.len(),
            Data::Complex(v) => 2 * v.len(),
        }
    }

    pub fn as_real(&self) -> Result<&[f64]> {
        match &self.data {
            Data::Real(v) => Ok(v),
            Data::Complex(_) => Err(Error::DtypeMismatch {
                expected: Dtype::Real64.to_string(),
                got: Dtype::Complex128.to_string(),
            }),
        }
    }

    pub fn as_complex(&self) -> Result<&[Complex64]> {
        match &self.data {
            Data::Complex(v) => Ok(v),
            Data::Real(_) => Err(Error::DtypeMismatch {
                expected: Dtype::Complex128.to_string(),
                got: Dtype::Real64.to_string(),
            }),
        }
    }

    pub fn as_real_mut(&mut self) -> Result<&mut [f64]> {
        match &mut self.data {
            Data::Real(v) => Ok(v),
            Data::Complex(_) => Err(Error::DtypeMismatch {
                expected: Dtype::Real64.to_string(),
                got: Dtype::Complex128.to_string(),
            }),
        }
    }

    pub fn as_complex_mut(&mut self) -> Result<&mut [Complex64]> {
        match &mut self.data {
            Data::Complex(v) => Ok(v),
            Data::Real(_) => Err(Error::DtypeMismatch {
                expected: Dtype::Complex128.to_string(),
                got: Dtype::Real64.to_string(),
            }),
        }
    }

    /// Element as a complex number regardless of dtype (real gets im = 0).
    pub fn get(&self, idx: usize) -> Complex64 {
        match &self.data {
            Data::Real(v) => Complex64::new(v[idx], 0.0),
            Data::Complex(v) => v[idx],
        }
    }

    fn check_same(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        if self.dtype() != other.dtype() {
            return Err(Error::DtypeMismatch {
                expected: self.dtype().to_string(),
                got: other.dtype().to_string(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same(other)?;
        let data = match (&self.data, &other.data) {
            (Data::Real(a), Data::Real(b)) => {
                Data::Real(a.iter().zip(b).map(|(x, y)| x + y).collect())
            }
            (Data::Complex(a), Data::Complex(b)) => {
                Data::Complex(a.iter().zip(b).map(|(x, y)| x + y).collect())
            }
            _ => unreachable!(),
        };
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same(other)?;
        let data = match (&self.data, &other.data) {
            (Data::Real(a), Data::Real(b)) => {
                Data::Real(a.iter().zip(b).map(|(x, y)| x - y).collect())
            }
            (Data::Complex(a), Data::Complex(b)) => {
                Data::Complex(a.iter().zip(b).map(|(x, y)| x - y).collect())
            }
            _ => unreachable!(),
        };
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        let data = match &self.data {
            Data::Real(a) => Data::Real(a.iter().map(|x| alpha * x).collect()),
            Data::Complex(a) => Data::Complex(a.iter().map(|x| alpha * x).collect()),
        };
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Hadamard (elementwise) product.
    pub fn mul_elem(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same(other)?;
        let data = match (&self.data, &other.data) {
            (Data::Real(a), Data::Real(b)) => {
                Data::Real(a.iter().zip(b).map(|(x, y)| x * y).collect())
            }
            (Data::Complex(a), Data::Complex(b)) => {
                Data::Complex(a.iter().zip(b).map(|(x, y)| x * y).collect())
            }
            _ => unreachable!(),
        };
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn conj(&self) -> Tensor {
        let data = match &self.data {
            Data::Real(a) => Data::Real(a.clone()),
            Data::Complex(a) => Data::Complex(a.iter().map(|x| x.conj()).collect()),
        };
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Promote a real tensor to complex (im = 0); complex tensors pass through.
    pub fn to_complex(&self) -> Tensor {
        match &self.data {
            Data::Real(a) => Tensor {
                shape: self.shape.clone(),
                data: Data::Complex(a.iter().map(|&x| Complex64::new(x, 0.0)).collect()),
            },
            Data::Complex(_) => self.clone(),
        }
    }

    /// Real part as a real tensor.
    pub fn real_part(&self) -> Tensor {
        match &self.data {
            Data::Real(_) => self.clone(),
            Data::Complex(a) => Tensor {
                shape: self.shape.clone(),
                data: Data::Real(a.iter().map(|x| x.re).collect()),
            },
        }
    }

    pub fn all_finite(&self) -> bool {
        match &self.data {
            Data::Real(v) => v.iter().all(|x| x.is_finite()),
            Data::Complex(v) => v.iter().all(|x| x.re.is_finite() && x.im.is_finite()),
        }
    }

    /// Reinterpret the flat buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape_len(shape) != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                got: shape.to_vec(),
            });
        }
        let mut out = self.clone();
        out.shape = shape.to_vec();
        Ok(out)
    }
}

/// alpha·x + y, elementwise. Shapes and dtypes must match exactly.
pub fn axpy(alpha: f64, x: &Tensor, y: &Tensor) -> Result<Tensor> {
    x.check_same(y)?;
    let data = match (&x.data, &y.data) {
        (Data::Real(a), Data::Real(b)) => {
            Data::Real(a.iter().zip(b).map(|(p, q)| alpha * p + q).collect())
        }
        (Data::Complex(a), Data::Complex(b)) => {
            Data::Complex(a.iter().zip(b).map(|(p, q)| alpha * p + q).collect())
        }
        _ => unreachable!(),
    };
    Ok(Tensor {
        shape: x.shape.clone(),
        data,
    })
}

/// Inner product ⟨x, y⟩ = Σ conj(x_i)·y_i. Real dtype gives the ordinary dot
/// product (imaginary part zero); ⟨x, x⟩ is always real and nonnegative.
pub fn inner(x: &Tensor, y: &Tensor) -> Result<Complex64> {
    x.check_same(y)?;
    let acc = match (&x.data, &y.data) {
        (Data::Real(a), Data::Real(b)) => Complex64::new(
            a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>(),
            0.0,
        ),
        (Data::Complex(a), Data::Complex(b)) => a
            .iter()
            .zip(b)
            .map(|(p, q)| p.conj() * q)
            .sum::<Complex64>(),
        _ => unreachable!(),
    };
    Ok(acc)
}

/// Euclidean norm sqrt(⟨x, x⟩). Complex elements contribute |x_i|².
pub fn norm2(x: &Tensor) -> f64 {
    let s = match &x.data {
        Data::Real(a) => a.iter().map(|p| p * p).sum::<f64>(),
        Data::Complex(a) => a.iter().map(|p| p.norm_sqr()).sum::<f64>(),
    };
    s.sqrt()
}

/// Draw mean + std·ε with ε i.i.d. standard normal per scalar component.
/// Complex dtype gets independent noise on real and imaginary parts, each
/// with standard deviation `std`. `std == 0` returns the mean unchanged.
pub fn gaussian_sample(mean: &Tensor, std: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if std < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "negative standard deviation {std}"
        )));
    }
    if std == 0.0 {
        return Ok(mean.clone());
    }
    let data = match &mean.data {
        Data::Real(a) => Data::Real(
            a.iter()
                .map(|m| m + std * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        ),
        Data::Complex(a) => Data::Complex(
            a.iter()
                .map(|m| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    m + Complex64::new(std * re, std * im)
                })
                .collect(),
        ),
    };
    Ok(Tensor {
        shape: mean.shape.clone(),
        data,
    })
}

/// Seeded one-shot variant of [`gaussian_sample`].
pub fn gaussian_sample_seeded(mean: &Tensor, std: f64, seed: RngSeed) -> Result<Tensor> {
    gaussian_sample(mean, std, &mut seed.rng())
}

/// Tensor filled with i.i.d. standard normal entries (complex: per component).
pub fn standard_normal(shape: &[usize], dtype: Dtype, rng: &mut ChaCha8Rng) -> Tensor {
    gaussian_sample(&Tensor::zeros(shape, dtype), 1.0, rng).expect("std 1.0 is valid")
}
