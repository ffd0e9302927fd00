//! Linear forward operators `A` with apply/adjoint/gram, covering masking
//! (inpainting), separable blur, block-average downsampling, subsampled
//! Fourier maps (single- and multi-coil), explicit dense matrices, and
//! compositions.
//!
//! Every kind satisfies the adjoint identity ⟨Ax, y⟩ = ⟨x, Aᴴy⟩; the test
//! suite checks it against random pairs and dense materializations.

pub(crate) mod conv;
mod fft;

pub use conv::Boundary;
pub use fft::{centered_to_freq, Fft2};

use num_complex::Complex64;
use rand::seq::index::sample as sample_indices;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{gaussian_sample, Dtype, RngSeed, Tensor};

/// Refuse to materialize dense matrices above this many input elements.
pub const DENSE_SIZE_LIMIT: usize = 4096;

/// Pixel-keep mask for inpainting-style measurements (zero-fill convention:
/// the measurement lives on the full grid with zeros at dropped pixels).
#[derive(Debug, Clone)]
pub struct MaskOp {
    shape: Vec<usize>,
    dtype: Dtype,
    keep: Vec<bool>,
}

impl MaskOp {
    pub fn new(shape: &[usize], dtype: Dtype, keep: Vec<bool>) -> Result<MaskOp> {
        let n: usize = shape.iter().product();
        if keep.len() != n {
            return Err(Error::InvalidParameter(format!(
                "mask length {} does not match shape {:?}",
                keep.len(),
                shape
            )));
        }
        Ok(MaskOp {
            shape: shape.to_vec(),
            dtype,
            keep,
        })
    }

    /// Keep everything (identity operator).
    pub fn all_true(shape: &[usize], dtype: Dtype) -> MaskOp {
        let n: usize = shape.iter().product();
        MaskOp {
            shape: shape.to_vec(),
            dtype,
            keep: vec![true; n],
        }
    }

    /// Randomly keep `keep_fraction` of the pixels. For an `[H, W, C]` shape
    /// whole pixels are kept or dropped across all channels together.
    pub fn random(
        shape: &[usize],
        dtype: Dtype,
        keep_fraction: f64,
        seed: RngSeed,
    ) -> Result<MaskOp> {
        if !(0.0..=1.0).contains(&keep_fraction) {
            return Err(Error::InvalidParameter(format!(
                "keep_fraction {keep_fraction} outside [0, 1]"
            )));
        }
        let (pixels, channels) = match shape.len() {
            2 => (shape[0] * shape[1], 1),
            3 => (shape[0] * shape[1], shape[2]),
            _ => (shape.iter().product(), 1),
        };
        let n_keep = (keep_fraction * pixels as f64).round() as usize;
        let mut rng = seed.stream(STREAM_MASK);
        let chosen = sample_indices(&mut rng, pixels, n_keep.min(pixels));
        let mut pixel_keep = vec![false; pixels];
        for i in chosen {
            pixel_keep[i] = true;
        }
        let keep = if channels == 1 {
            pixel_keep
        } else {
            let mut full = vec![false; pixels * channels];
            for (p, &k) in pixel_keep.iter().enumerate() {
                for c in 0..channels {
                    full[p * channels + c] = k;
                }
            }
            full
        };
        MaskOp::new(shape, dtype, keep)
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    /// Fraction of kept entries.
    pub fn keep_fraction(&self) -> f64 {
        let kept = self.keep.iter().filter(|&&k| k).count();
        kept as f64 / self.keep.len().max(1) as f64
    }
}

/// Separable convolution along the first two axes with a shared 1-D kernel.
#[derive(Debug, Clone)]
pub struct BlurOp {
    shape: Vec<usize>,
    dtype: Dtype,
    taps: Vec<f64>,
    boundary: Boundary,
}

impl BlurOp {
    pub fn new(shape: &[usize], dtype: Dtype, taps: Vec<f64>, boundary: Boundary) -> Result<BlurOp> {
        if taps.is_empty() || taps.len() % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "blur kernel length {} must be odd",
                taps.len()
            )));
        }
        let sum: f64 = taps.iter().sum();
        if sum.abs() < 1e-12 {
            return Err(Error::InvalidParameter(
                "blur kernel sums to zero; cannot normalize".into(),
            ));
        }
        let taps = taps.iter().map(|t| t / sum).collect();
        if shape.len() < 2 {
            return Err(Error::InvalidParameter(
                "blur requires at least two axes".into(),
            ));
        }
        Ok(BlurOp {
            shape: shape.to_vec(),
            dtype,
            taps,
            boundary,
        })
    }

    /// Gaussian taps exp(−i²/2σ²) sampled at offsets −r..r and normalized.
    pub fn gaussian(
        shape: &[usize],
        dtype: Dtype,
        size: usize,
        sigma: f64,
        boundary: Boundary,
    ) -> Result<BlurOp> {
        if size % 2 == 0 || size == 0 {
            return Err(Error::InvalidParameter(format!(
                "gaussian kernel size {size} must be odd"
            )));
        }
        if sigma <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "gaussian kernel sigma {sigma} must be positive"
            )));
        }
        let r = (size / 2) as isize;
        let taps: Vec<f64> = (-r..=r)
            .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        BlurOp::new(shape, dtype, taps, boundary)
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }
}

/// Block-average downsampling by an integer factor on the first two axes.
#[derive(Debug, Clone)]
pub struct DownsampleOp {
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    dtype: Dtype,
    factor: usize,
}

impl DownsampleOp {
    pub fn new(in_shape: &[usize], dtype: Dtype, factor: usize) -> Result<DownsampleOp> {
        if factor == 0 {
            return Err(Error::InvalidParameter("downsample factor must be ≥ 1".into()));
        }
        if in_shape.len() < 2 {
            return Err(Error::InvalidParameter(
                "downsample requires at least two axes".into(),
            ));
        }
        let (h, w) = (in_shape[0], in_shape[1]);
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::InvalidParameter(format!(
                "dimensions {h}x{w} not divisible by factor {factor}"
            )));
        }
        let mut out_shape = in_shape.to_vec();
        out_shape[0] = h / factor;
        out_shape[1] = w / factor;
        Ok(DownsampleOp {
            in_shape: in_shape.to_vec(),
            out_shape,
            dtype,
            factor,
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }
}

/// Per-coil modulation, unitary 2-D FFT, and k-space line subsampling.
/// Lines run along the last axis (columns); the line mask uses the centered
/// convention with DC at index `w/2`. Single-coil means a uniform coil of 1.
#[derive(Debug, Clone)]
pub struct FourierOp {
    h: usize,
    w: usize,
    /// Line-keep mask in centered indexing.
    mask_centered: Vec<bool>,
    /// Same mask permuted to unshifted frequency indices.
    freq_keep: Vec<bool>,
    acs_lines: usize,
    acceleration: usize,
    coils: Option<Vec<Tensor>>,
    fft: Fft2,
}

impl FourierOp {
    pub fn new(
        h: usize,
        w: usize,
        mask_centered: Vec<bool>,
        acs_lines: usize,
        acceleration: usize,
        coils: Option<Vec<Tensor>>,
    ) -> Result<FourierOp> {
        if mask_centered.len() != w {
            return Err(Error::InvalidParameter(format!(
                "line mask length {} does not match width {w}",
                mask_centered.len()
            )));
        }
        // The declared ACS block must be fully sampled.
        let start = w / 2 - acs_lines / 2;
        for c in start..start + acs_lines {
            if !mask_centered[c] {
                return Err(Error::InvalidParameter(format!(
                    "central line {c} not sampled but inside the {acs_lines}-line ACS block"
                )));
            }
        }
        if let Some(maps) = &coils {
            if maps.is_empty() {
                return Err(Error::InvalidParameter("empty coil list".into()));
            }
            for m in maps {
                if m.shape() != [h, w] || !m.is_complex() {
                    return Err(Error::InvalidParameter(
                        "coil maps must be complex H×W tensors".into(),
                    ));
                }
            }
            // Σ_c |S_c|² = 1 at every pixel, tolerance 1e-6.
            for p in 0..h * w {
                let s: f64 = maps.iter().map(|m| m.get(p).norm_sqr()).sum();
                if (s - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidParameter(format!(
                        "coil sensitivities not normalized at pixel {p}: Σ|S|² = {s}"
                    )));
                }
            }
        }
        let mut freq_keep = vec![false; w];
        for (c, &k) in mask_centered.iter().enumerate() {
            freq_keep[centered_to_freq(c, w)] = k;
        }
        Ok(FourierOp {
            h,
            w,
            mask_centered,
            freq_keep,
            acs_lines,
            acceleration,
            coils,
            fft: Fft2::new(h, w),
        })
    }

    /// 1-D random line subsampling: keep round(w/R) lines total, always
    /// including the `acs_lines` central ones; the rest drawn uniformly
    /// without replacement from the remaining lines.
    pub fn random_lines(
        h: usize,
        w: usize,
        acceleration: usize,
        acs_lines: usize,
        coils: Option<Vec<Tensor>>,
        seed: RngSeed,
    ) -> Result<FourierOp> {
        if acceleration == 0 {
            return Err(Error::InvalidParameter("acceleration must be ≥ 1".into()));
        }
        if acs_lines > w {
            return Err(Error::InvalidParameter(format!(
                "ACS lines {acs_lines} exceed width {w}"
            )));
        }
        let total_keep = ((w as f64) / (acceleration as f64)).round() as usize;
        let total_keep = total_keep.clamp(acs_lines, w);
        let mut mask = vec![false; w];
        let start = w / 2 - acs_lines / 2;
        for c in start..start + acs_lines {
            mask[c] = true;
        }
        let others: Vec<usize> = (0..w).filter(|c| !mask[*c]).collect();
        let extra = total_keep - acs_lines;
        let mut rng = seed.stream(STREAM_KSPACE);
        for idx in sample_indices(&mut rng, others.len(), extra.min(others.len())) {
            mask[others[idx]] = true;
        }
        FourierOp::new(h, w, mask, acs_lines, acceleration, coils)
    }

    pub fn line_mask_centered(&self) -> &[bool] {
        &self.mask_centered
    }

    pub fn acs_lines(&self) -> usize {
        self.acs_lines
    }

    pub fn acceleration(&self) -> usize {
        self.acceleration
    }

    pub fn num_coils(&self) -> usize {
        self.coils.as_ref().map_or(1, |c| c.len())
    }

    fn mask_kspace(&self, data: &mut [Complex64]) {
        for i in 0..self.h {
            for j in 0..self.w {
                if !self.freq_keep[j] {
                    data[i * self.w + j] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }
}

/// Normalized synthetic coil sensitivities: smooth Gaussian magnitude
/// profiles centered at distinct positions, each with a mild linear phase,
/// scaled so Σ_c |S_c|² = 1 at every pixel.
pub fn synthetic_coil_maps(h: usize, w: usize, ncoils: usize) -> Vec<Tensor> {
    assert!(ncoils >= 1);
    let mut maps: Vec<Vec<Complex64>> = Vec::with_capacity(ncoils);
    for c in 0..ncoils {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / ncoils as f64;
        let cy = 0.5 * h as f64 + 0.35 * h as f64 * angle.sin();
        let cx = 0.5 * w as f64 + 0.35 * w as f64 * angle.cos();
        let width = 0.6 * (h.max(w)) as f64;
        let mut m = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                let d2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
                let mag = (-d2 / (2.0 * width * width)).exp() + 0.05;
                let phase = 0.3 * (c as f64 + 1.0) * (i as f64 / h as f64 - j as f64 / w as f64);
                m.push(Complex64::from_polar(mag, phase));
            }
        }
        maps.push(m);
    }
    for p in 0..h * w {
        let norm: f64 = maps.iter().map(|m| m[p].norm_sqr()).sum::<f64>().sqrt();
        for m in maps.iter_mut() {
            m[p] /= norm;
        }
    }
    maps.into_iter()
        .map(|m| Tensor::from_complex(&[h, w], m).expect("sized above"))
        .collect()
}

/// Explicit matrix operator mapping a flattened input to a flattened output.
#[derive(Debug, Clone)]
pub struct DenseOp {
    matrix: Tensor,
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
}

impl DenseOp {
    pub fn new(matrix: Tensor, in_shape: &[usize], out_shape: &[usize]) -> Result<DenseOp> {
        let n: usize = in_shape.iter().product();
        let m: usize = out_shape.iter().product();
        if matrix.shape() != [m, n] {
            return Err(Error::ShapeMismatch {
                expected: vec![m, n],
                got: matrix.shape().to_vec(),
            });
        }
        Ok(DenseOp {
            matrix,
            in_shape: in_shape.to_vec(),
            out_shape: out_shape.to_vec(),
        })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }
}

/// A linear forward operator with apply, adjoint, and gram actions.
#[derive(Debug, Clone)]
pub enum LinearOp {
    Mask(MaskOp),
    Blur(BlurOp),
    Downsample(DownsampleOp),
    FourierSubsample(FourierOp),
    Dense(DenseOp),
    /// Stages applied left to right: `Composite([B, C])` is `x ↦ C(B(x))`.
    Composite(Vec<LinearOp>),
}

use crate::streams::{KSPACE as STREAM_KSPACE, MASK as STREAM_MASK, MEASUREMENT as STREAM_MEASUREMENT};

impl LinearOp {
    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            LinearOp::Mask(m) => m.shape.clone(),
            LinearOp::Blur(b) => b.shape.clone(),
            LinearOp::Downsample(d) => d.in_shape.clone(),
            LinearOp::FourierSubsample(f) => vec![f.h, f.w],
            LinearOp::Dense(d) => d.in_shape.clone(),
            LinearOp::Composite(stages) => stages[0].input_shape(),
        }
    }

    pub fn output_shape(&self) -> Vec<usize> {
        match self {
            LinearOp::Mask(m) => m.shape.clone(),
            LinearOp::Blur(b) => b.shape.clone(),
            LinearOp::Downsample(d) => d.out_shape.clone(),
            LinearOp::FourierSubsample(f) => {
                if f.num_coils() > 1 {
                    vec![f.num_coils(), f.h, f.w]
                } else {
                    vec![f.h, f.w]
                }
            }
            LinearOp::Dense(d) => d.out_shape.clone(),
            LinearOp::Composite(stages) => stages.last().unwrap().output_shape(),
        }
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            LinearOp::Mask(m) => m.dtype,
            LinearOp::Blur(b) => b.dtype,
            LinearOp::Downsample(d) => d.dtype,
            LinearOp::FourierSubsample(_) => Dtype::Complex128,
            LinearOp::Dense(d) => d.matrix.dtype(),
            LinearOp::Composite(stages) => stages[0].dtype(),
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape() {
            return Err(Error::ShapeMismatch {
                expected: self.input_shape(),
                got: x.shape().to_vec(),
            });
        }
        if x.dtype() != self.dtype() {
            return Err(Error::DtypeMismatch {
                expected: self.dtype().to_string(),
                got: x.dtype().to_string(),
            });
        }
        Ok(())
    }

    fn check_output(&self, y: &Tensor) -> Result<()> {
        if y.shape() != self.output_shape() {
            return Err(Error::ShapeMismatch {
                expected: self.output_shape(),
                got: y.shape().to_vec(),
            });
        }
        if y.dtype() != self.dtype() {
            return Err(Error::DtypeMismatch {
                expected: self.dtype().to_string(),
                got: y.dtype().to_string(),
            });
        }
        Ok(())
    }

    /// Forward action `Ax`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        match self {
            LinearOp::Mask(m) => Ok(mask_multiply(x, &m.keep)),
            LinearOp::Blur(b) => Ok(blur_action(x, b, false)),
            LinearOp::Downsample(d) => Ok(downsample_apply(x, d)),
            LinearOp::FourierSubsample(f) => fourier_apply(x, f),
            LinearOp::Dense(d) => dense_matvec(&d.matrix, x, &d.out_shape, false),
            LinearOp::Composite(stages) => {
                let mut cur = x.clone();
                for s in stages {
                    cur = s.apply(&cur)?;
                }
                Ok(cur)
            }
        }
    }

    /// Adjoint action `Aᴴy` (conjugate transpose for complex kinds).
    pub fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        self.check_output(y)?;
        match self {
            LinearOp::Mask(m) => Ok(mask_multiply(y, &m.keep)),
            LinearOp::Blur(b) => Ok(blur_action(y, b, true)),
            LinearOp::Downsample(d) => Ok(downsample_adjoint(y, d)),
            LinearOp::FourierSubsample(f) => fourier_adjoint(y, f),
            LinearOp::Dense(d) => dense_matvec(&d.matrix, y, &d.in_shape, true),
            LinearOp::Composite(stages) => {
                let mut cur = y.clone();
                for s in stages.iter().rev() {
                    cur = s.adjoint(&cur)?;
                }
                Ok(cur)
            }
        }
    }

    /// Gram action `AᴴAx`. Fused where the structure allows it; always equal
    /// to `adjoint(apply(x))` up to roundoff.
    pub fn gram_apply(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        match self {
            // MᴴM = M for a 0/1 projection.
            LinearOp::Mask(m) => Ok(mask_multiply(x, &m.keep)),
            // Single uniform coil: FFT → line mask → IFFT, one mask instead of two.
            LinearOp::FourierSubsample(f) if f.coils.is_none() => {
                let mut data = x.as_complex()?.to_vec();
                f.fft.forward_unitary(&mut data);
                f.mask_kspace(&mut data);
                f.fft.inverse_unitary(&mut data);
                Tensor::from_complex(&[f.h, f.w], data)
            }
            _ => self.adjoint(&self.apply(x)?),
        }
    }

    /// Materialize the explicit matrix by applying the operator to every
    /// standard basis vector. Guarded to inputs of at most
    /// [`DENSE_SIZE_LIMIT`] elements.
    pub fn to_dense(&self) -> Result<Tensor> {
        let in_shape = self.input_shape();
        let n: usize = in_shape.iter().product();
        if n > DENSE_SIZE_LIMIT {
            return Err(Error::SizeGuard {
                limit: DENSE_SIZE_LIMIT,
                got: n,
            });
        }
        let m: usize = self.output_shape().iter().product();
        match self.dtype() {
            Dtype::Real64 => {
                let mut out = vec![0.0; m * n];
                for j in 0..n {
                    let mut e = vec![0.0; n];
                    e[j] = 1.0;
                    let col = self.apply(&Tensor::from_real(&in_shape, e)?)?;
                    let col = col.as_real()?;
                    for i in 0..m {
                        out[i * n + j] = col[i];
                    }
                }
                Tensor::from_real(&[m, n], out)
            }
            Dtype::Complex128 => {
                let mut out = vec![Complex64::new(0.0, 0.0); m * n];
                for j in 0..n {
                    let mut e = vec![Complex64::new(0.0, 0.0); n];
                    e[j] = Complex64::new(1.0, 0.0);
                    let col = self.apply(&Tensor::from_complex(&in_shape, e)?)?;
                    let col = col.as_complex()?;
                    for i in 0..m {
                        out[i * n + j] = col[i];
                    }
                }
                Tensor::from_complex(&[m, n], out)
            }
        }
    }

    /// Dense matrix of the adjoint map (for conjugate-transpose checks).
    pub fn adjoint_to_dense(&self) -> Result<Tensor> {
        let out_shape = self.output_shape();
        let m: usize = out_shape.iter().product();
        if m > DENSE_SIZE_LIMIT {
            return Err(Error::SizeGuard {
                limit: DENSE_SIZE_LIMIT,
                got: m,
            });
        }
        let n: usize = self.input_shape().iter().product();
        match self.dtype() {
            Dtype::Real64 => {
                let mut out = vec![0.0; n * m];
                for j in 0..m {
                    let mut e = vec![0.0; m];
                    e[j] = 1.0;
                    let col = self.adjoint(&Tensor::from_real(&out_shape, e)?)?;
                    let col = col.as_real()?;
                    for i in 0..n {
                        out[i * m + j] = col[i];
                    }
                }
                Tensor::from_real(&[n, m], out)
            }
            Dtype::Complex128 => {
                let mut out = vec![Complex64::new(0.0, 0.0); n * m];
                for j in 0..m {
                    let mut e = vec![Complex64::new(0.0, 0.0); m];
                    e[j] = Complex64::new(1.0, 0.0);
                    let col = self.adjoint(&Tensor::from_complex(&out_shape, e)?)?;
                    let col = col.as_complex()?;
                    for i in 0..n {
                        out[i * m + j] = col[i];
                    }
                }
                Tensor::from_complex(&[n, m], out)
            }
        }
    }
}

/// `apply(op, x_true) + σ_y·ε` with ε standard normal on the measurement
/// domain (complex: independent per component).
pub fn synthesize_measurement(
    op: &LinearOp,
    x_true: &Tensor,
    sigma_y: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    if sigma_y < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "negative measurement noise level {sigma_y}"
        )));
    }
    let clean = op.apply(x_true)?;
    gaussian_sample(&clean, sigma_y, rng)
}

/// Seeded convenience wrapper around [`synthesize_measurement`].
pub fn synthesize_measurement_seeded(
    op: &LinearOp,
    x_true: &Tensor,
    sigma_y: f64,
    seed: RngSeed,
) -> Result<Tensor> {
    synthesize_measurement(op, x_true, sigma_y, &mut seed.stream(STREAM_MEASUREMENT))
}

fn mask_multiply(x: &Tensor, keep: &[bool]) -> Tensor {
    match x.dtype() {
        Dtype::Real64 => {
            let v = x.as_real().expect("checked");
            let out: Vec<f64> = v
                .iter()
                .zip(keep)
                .map(|(a, &k)| if k { *a } else { 0.0 })
                .collect();
            Tensor::from_real(x.shape(), out).expect("same length")
        }
        Dtype::Complex128 => {
            let v = x.as_complex().expect("checked");
            let out: Vec<Complex64> = v
                .iter()
                .zip(keep)
                .map(|(a, &k)| if k { *a } else { Complex64::new(0.0, 0.0) })
                .collect();
            Tensor::from_complex(x.shape(), out).expect("same length")
        }
    }
}

fn blur_action(x: &Tensor, b: &BlurOp, adjoint: bool) -> Tensor {
    // Separable: convolve along axis 0 then axis 1 (order is immaterial; the
    // adjoint of the product is the product of adjoints in either order
    // because the two stages commute).
    match x.dtype() {
        Dtype::Real64 => {
            let v = x.as_real().expect("checked");
            let tmp = conv::convolve_axis(v, x.shape(), 0, &b.taps, b.boundary, adjoint);
            let out = conv::convolve_axis(&tmp, x.shape(), 1, &b.taps, b.boundary, adjoint);
            Tensor::from_real(x.shape(), out).expect("same length")
        }
        Dtype::Complex128 => {
            let v = x.as_complex().expect("checked");
            let tmp = conv::convolve_axis(v, x.shape(), 0, &b.taps, b.boundary, adjoint);
            let out = conv::convolve_axis(&tmp, x.shape(), 1, &b.taps, b.boundary, adjoint);
            Tensor::from_complex(x.shape(), out).expect("same length")
        }
    }
}

fn block_indices(shape: &[usize]) -> (usize, usize, usize) {
    let h = shape[0];
    let w = shape[1];
    let c = shape[2..].iter().product::<usize>().max(1);
    (h, w, c)
}

fn downsample_apply(x: &Tensor, d: &DownsampleOp) -> Tensor {
    let (h, w, ch) = block_indices(&d.in_shape);
    let f = d.factor;
    let (oh, ow) = (h / f, w / f);
    let scale = 1.0 / (f * f) as f64;
    match x.dtype() {
        Dtype::Real64 => {
            let v = x.as_real().expect("checked");
            let mut out = vec![0.0; oh * ow * ch];
            for i in 0..h {
                for j in 0..w {
                    for c in 0..ch {
                        out[((i / f) * ow + j / f) * ch + c] += v[(i * w + j) * ch + c] * scale;
                    }
                }
            }
            Tensor::from_real(&d.out_shape, out).expect("sized")
        }
        Dtype::Complex128 => {
            let v = x.as_complex().expect("checked");
            let mut out = vec![Complex64::new(0.0, 0.0); oh * ow * ch];
            for i in 0..h {
                for j in 0..w {
                    for c in 0..ch {
                        out[((i / f) * ow + j / f) * ch + c] += v[(i * w + j) * ch + c] * scale;
                    }
                }
            }
            Tensor::from_complex(&d.out_shape, out).expect("sized")
        }
    }
}

fn downsample_adjoint(y: &Tensor, d: &DownsampleOp) -> Tensor {
    let (h, w, ch) = block_indices(&d.in_shape);
    let f = d.factor;
    let ow = w / f;
    let scale = 1.0 / (f * f) as f64;
    match y.dtype() {
        Dtype::Real64 => {
            let v = y.as_real().expect("checked");
            let mut out = vec![0.0; h * w * ch];
            for i in 0..h {
                for j in 0..w {
                    for c in 0..ch {
                        out[(i * w + j) * ch + c] = v[((i / f) * ow + j / f) * ch + c] * scale;
                    }
                }
            }
            Tensor::from_real(&d.in_shape, out).expect("sized")
        }
        Dtype::Complex128 => {
            let v = y.as_complex().expect("checked");
            let mut out = vec![Complex64::new(0.0, 0.0); h * w * ch];
            for i in 0..h {
                for j in 0..w {
                    for c in 0..ch {
                        out[(i * w + j) * ch + c] = v[((i / f) * ow + j / f) * ch + c] * scale;
                    }
                }
            }
            Tensor::from_complex(&d.in_shape, out).expect("sized")
        }
    }
}

fn fourier_apply(x: &Tensor, f: &FourierOp) -> Result<Tensor> {
    let x = x.as_complex()?;
    match &f.coils {
        None => {
            let mut data = x.to_vec();
            f.fft.forward_unitary(&mut data);
            f.mask_kspace(&mut data);
            Tensor::from_complex(&[f.h, f.w], data)
        }
        Some(maps) => {
            let mut out = Vec::with_capacity(maps.len() * f.h * f.w);
            for map in maps {
                let s = map.as_complex()?;
                let mut data: Vec<Complex64> =
                    x.iter().zip(s).map(|(a, b)| a * b).collect();
                f.fft.forward_unitary(&mut data);
                f.mask_kspace(&mut data);
                out.extend_from_slice(&data);
            }
            Tensor::from_complex(&[maps.len(), f.h, f.w], out)
        }
    }
}

fn fourier_adjoint(y: &Tensor, f: &FourierOp) -> Result<Tensor> {
    let yv = y.as_complex()?;
    match &f.coils {
        None => {
            let mut data = yv.to_vec();
            f.mask_kspace(&mut data);
            f.fft.inverse_unitary(&mut data);
            Tensor::from_complex(&[f.h, f.w], data)
        }
        Some(maps) => {
            let plane = f.h * f.w;
            let mut acc = vec![Complex64::new(0.0, 0.0); plane];
            for (c, map) in maps.iter().enumerate() {
                let s = map.as_complex()?;
                let mut data = yv[c * plane..(c + 1) * plane].to_vec();
                f.mask_kspace(&mut data);
                f.fft.inverse_unitary(&mut data);
                for (a, (d, m)) in acc.iter_mut().zip(data.iter().zip(s)) {
                    *a += m.conj() * d;
                }
            }
            Tensor::from_complex(&[f.h, f.w], acc)
        }
    }
}

fn dense_matvec(matrix: &Tensor, x: &Tensor, out_shape: &[usize], adjoint: bool) -> Result<Tensor> {
    let m = matrix.shape()[0];
    let n = matrix.shape()[1];
    match matrix.dtype() {
        Dtype::Real64 => {
            let a = matrix.as_real()?;
            let v = x.as_real()?;
            let out = if adjoint {
                (0..n)
                    .map(|j| (0..m).map(|i| a[i * n + j] * v[i]).sum())
                    .collect::<Vec<f64>>()
            } else {
                (0..m)
                    .map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum())
                    .collect::<Vec<f64>>()
            };
            Tensor::from_real(out_shape, out)
        }
        Dtype::Complex128 => {
            let a = matrix.as_complex()?;
            let v = x.as_complex()?;
            let out = if adjoint {
                (0..n)
                    .map(|j| (0..m).map(|i| a[i * n + j].conj() * v[i]).sum())
                    .collect::<Vec<Complex64>>()
            } else {
                (0..m)
                    .map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum())
                    .collect::<Vec<Complex64>>()
            };
            Tensor::from_complex(out_shape, out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{inner, norm2, standard_normal};

    fn rng(seed: u64) -> ChaCha8Rng {
        RngSeed(seed).rng()
    }

    /// One adjoint-identity trial: |⟨Ax,y⟩ − ⟨x,Aᴴy⟩| against the spec scale.
    fn adjoint_defect(op: &LinearOp, r: &mut ChaCha8Rng) -> f64 {
        let x = standard_normal(&op.input_shape(), op.dtype(), r);
        let y = standard_normal(&op.output_shape(), op.dtype(), r);
        let ax = op.apply(&x).unwrap();
        let aty = op.adjoint(&y).unwrap();
        let lhs = inner(&ax, &y).unwrap();
        let rhs = inner(&x, &aty).unwrap();
        (lhs - rhs).norm() / (norm2(&ax) * norm2(&y) + 1.0)
    }

    fn sample_ops(seed: u64) -> Vec<(&'static str, LinearOp)> {
        vec![
            (
                "mask",
                LinearOp::Mask(
                    MaskOp::random(&[8, 8], Dtype::Real64, 0.3, RngSeed(seed)).unwrap(),
                ),
            ),
            (
                "blur-circular",
                LinearOp::Blur(
                    BlurOp::gaussian(&[8, 8], Dtype::Real64, 5, 10.0, Boundary::Circular).unwrap(),
                ),
            ),
            (
                "blur-reflect",
                LinearOp::Blur(
                    BlurOp::gaussian(&[8, 8], Dtype::Real64, 5, 2.0, Boundary::Reflect).unwrap(),
                ),
            ),
            (
                "downsample",
                LinearOp::Downsample(DownsampleOp::new(&[8, 8], Dtype::Real64, 2).unwrap()),
            ),
            (
                "fourier-single",
                LinearOp::FourierSubsample(
                    FourierOp::random_lines(8, 8, 2, 2, None, RngSeed(seed)).unwrap(),
                ),
            ),
            (
                "fourier-3coil",
                LinearOp::FourierSubsample(
                    FourierOp::random_lines(
                        8,
                        8,
                        2,
                        2,
                        Some(synthetic_coil_maps(8, 8, 3)),
                        RngSeed(seed),
                    )
                    .unwrap(),
                ),
            ),
        ]
    }

    #[test]
    fn adjoint_identity_all_kinds() {
        let mut r = rng(11);
        for (name, op) in sample_ops(5) {
            for _ in 0..20 {
                let d = adjoint_defect(&op, &mut r);
                assert!(d <= 1e-10, "{name}: adjoint defect {d}");
            }
        }
    }

    #[test]
    fn identity_mask_is_identity() {
        let op = LinearOp::Mask(MaskOp::all_true(&[4, 4], Dtype::Real64));
        let x = standard_normal(&[4, 4], Dtype::Real64, &mut rng(1));
        assert_eq!(op.apply(&x).unwrap(), x);
    }

    #[test]
    fn delta_blur_is_identity() {
        let op = LinearOp::Blur(
            BlurOp::new(&[4, 4], Dtype::Real64, vec![1.0], Boundary::Circular).unwrap(),
        );
        let x = standard_normal(&[4, 4], Dtype::Real64, &mut rng(2));
        let y = op.apply(&x).unwrap();
        let diff = norm2(&y.sub(&x).unwrap());
        assert!(diff < 1e-14);
    }

    #[test]
    fn downsample_block_mean() {
        let op = LinearOp::Downsample(DownsampleOp::new(&[2, 2], Dtype::Real64, 2).unwrap());
        let x = Tensor::from_real(&[2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let y = op.apply(&x).unwrap();
        assert_eq!(y.as_real().unwrap(), &[4.0]);
        // Adjoint of [[4]] replicates 4·(1/4) into each cell.
        let adj = op
            .adjoint(&Tensor::from_real(&[1, 1], vec![4.0]).unwrap())
            .unwrap();
        assert_eq!(adj.as_real().unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn mask_adjoint_of_zero_is_zero() {
        let op = LinearOp::Mask(MaskOp::random(&[4, 4], Dtype::Real64, 0.5, RngSeed(3)).unwrap());
        let z = Tensor::zeros(&[4, 4], Dtype::Real64);
        assert_eq!(op.adjoint(&z).unwrap(), z);
    }

    #[test]
    fn gram_matches_adjoint_apply_composition() {
        let mut r = rng(17);
        for (name, op) in sample_ops(9) {
            let x = standard_normal(&op.input_shape(), op.dtype(), &mut r);
            let fused = op.gram_apply(&x).unwrap();
            let composed = op.adjoint(&op.apply(&x).unwrap()).unwrap();
            let d = norm2(&fused.sub(&composed).unwrap());
            assert!(d <= 1e-12 * (1.0 + norm2(&composed)), "{name}: {d}");
        }
    }

    #[test]
    fn mask_gram_is_idempotent() {
        let op = LinearOp::Mask(MaskOp::random(&[8, 8], Dtype::Real64, 0.4, RngSeed(21)).unwrap());
        let x = standard_normal(&[8, 8], Dtype::Real64, &mut rng(22));
        let once = op.gram_apply(&x).unwrap();
        let twice = op.gram_apply(&once).unwrap();
        assert!(norm2(&twice.sub(&once).unwrap()) <= 1e-12);
    }

    #[test]
    fn to_dense_identity_mask() {
        let op = LinearOp::Mask(MaskOp::all_true(&[2, 2], Dtype::Real64));
        let m = op.to_dense().unwrap();
        let v = m.as_real().unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(v[i * 4 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn to_dense_partial_mask_zero_fill() {
        let op = LinearOp::Mask(MaskOp::new(&[2], Dtype::Real64, vec![true, false]).unwrap());
        let m = op.to_dense().unwrap();
        assert_eq!(m.as_real().unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn to_dense_circulant_blur_rows() {
        // 1-D circular blur as a [4,1] image; every row of the dense matrix
        // must match the operator applied to the matching basis vector.
        let op = LinearOp::Blur(
            BlurOp::new(&[4, 1], Dtype::Real64, vec![0.25, 0.5, 0.25], Boundary::Circular).unwrap(),
        );
        let m = op.to_dense().unwrap();
        let mv = m.as_real().unwrap();
        for j in 0..4 {
            let mut e = vec![0.0; 4];
            e[j] = 1.0;
            let col = op.apply(&Tensor::from_real(&[4, 1], e).unwrap()).unwrap();
            let col = col.as_real().unwrap();
            for i in 0..4 {
                assert!((mv[i * 4 + j] - col[i]).abs() < 1e-15);
            }
        }
        // Circulant structure: row i+1 is row i rotated by one.
        for i in 0..3 {
            for j in 0..4 {
                assert!((mv[i * 4 + j] - mv[(i + 1) * 4 + (j + 1) % 4]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn adjoint_dense_is_conjugate_transpose() {
        let mut r = rng(31);
        for (name, op) in sample_ops(13) {
            let a = op.to_dense().unwrap();
            let at = op.adjoint_to_dense().unwrap();
            let (m, n) = (a.shape()[0], a.shape()[1]);
            for i in 0..m {
                for j in 0..n {
                    let fwd = a.get(i * n + j);
                    let adj = at.get(j * m + i);
                    assert!(
                        (fwd - adj.conj()).norm() < 1e-12,
                        "{name}: entry ({i},{j})"
                    );
                }
            }
            // keep rng linked to silence unused warnings across iterations
            let _ = standard_normal(&[1], Dtype::Real64, &mut r);
        }
    }

    #[test]
    fn fully_sampled_single_coil_fourier_is_unitary() {
        let op = LinearOp::FourierSubsample(
            FourierOp::new(8, 8, vec![true; 8], 8, 1, None).unwrap(),
        );
        let x = standard_normal(&[8, 8], Dtype::Complex128, &mut rng(41));
        let ax = op.apply(&x).unwrap();
        assert!((norm2(&ax) - norm2(&x)).abs() <= 1e-10 * norm2(&x));
        // Gram of the fully sampled map is the identity.
        let g = op.gram_apply(&x).unwrap();
        assert!(norm2(&g.sub(&x).unwrap()) <= 1e-10);
    }

    #[test]
    fn kspace_line_budget_matches_acceleration() {
        let op = FourierOp::random_lines(320, 320, 4, 24, None, RngSeed(7)).unwrap();
        let mask = op.line_mask_centered();
        let kept = mask.iter().filter(|&&k| k).count();
        assert_eq!(kept, 80); // 320/4
        let start = 320 / 2 - 12;
        for c in start..start + 24 {
            assert!(mask[c], "central line {c} must be kept");
        }
    }

    #[test]
    fn coil_maps_are_normalized() {
        let maps = synthetic_coil_maps(16, 16, 3);
        for p in 0..256 {
            let s: f64 = maps.iter().map(|m| m.get(p).norm_sqr()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn measurement_noise_level_is_respected() {
        let op = LinearOp::Mask(MaskOp::all_true(&[64, 64], Dtype::Real64));
        let x = Tensor::zeros(&[64, 64], Dtype::Real64);
        let y = synthesize_measurement_seeded(&op, &x, 0.05, RngSeed(100)).unwrap();
        let v = y.as_real().unwrap();
        let std = (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
        assert!((std - 0.05).abs() < 0.05 * 0.05, "empirical std {std}");
    }

    #[test]
    fn zero_noise_measurement_is_exact_apply() {
        let op = LinearOp::Mask(MaskOp::random(&[8, 8], Dtype::Real64, 0.3, RngSeed(5)).unwrap());
        let x = standard_normal(&[8, 8], Dtype::Real64, &mut rng(6));
        let y = synthesize_measurement_seeded(&op, &x, 0.0, RngSeed(5)).unwrap();
        assert_eq!(y, op.apply(&x).unwrap());
    }

    #[test]
    fn dense_size_guard_trips() {
        let op = LinearOp::Mask(MaskOp::all_true(&[65, 64], Dtype::Real64));
        assert!(matches!(op.to_dense(), Err(Error::SizeGuard { .. })));
    }

    #[test]
    fn composite_chains_shapes() {
        let blur = LinearOp::Blur(
            BlurOp::gaussian(&[8, 8], Dtype::Real64, 3, 1.0, Boundary::Circular).unwrap(),
        );
        let down = LinearOp::Downsample(DownsampleOp::new(&[8, 8], Dtype::Real64, 2).unwrap());
        let op = LinearOp::Composite(vec![blur, down]);
        assert_eq!(op.input_shape(), vec![8, 8]);
        assert_eq!(op.output_shape(), vec![4, 4]);
        let mut r = rng(55);
        for _ in 0..10 {
            let d = adjoint_defect(&op, &mut r);
            assert!(d <= 1e-10, "composite adjoint defect {d}");
        }
    }
}
