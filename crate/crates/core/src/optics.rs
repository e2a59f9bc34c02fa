//! Scalar wave optics: complex fields, angular-spectrum propagation and
//! inline amplitude holograms with a unit plane-wave reference.
//!
//! Conventions:
//! - fields are stored row-major, `data[row * width + col]`;
//! - the forward DFT is unnormalized and the inverse carries the `1/(H·W)` factor,
//!   so `inverse(forward(x)) == x`;
//! - spatial frequencies follow the usual DFT layout `f_k = k / (N·pitch)` with the
//!   negative frequencies in the upper half of each axis;
//! - no zero padding: propagation is a circular convolution over the grid.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::scalar::FftScalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("grid must be at least 2x2, got {height}x{width}")]
    GridTooSmall { height: usize, width: usize },
    #[error("data length {len} does not match {height}x{width} grid")]
    LengthMismatch { len: usize, height: usize, width: usize },
    #[error("sampling pitch must be positive and finite, got {0}")]
    InvalidPitch(f64),
    #[error("wavelength must be positive and finite, got {0}")]
    InvalidWavelength(f64),
    #[error("propagation distance must be finite, got {0}")]
    InvalidDistance(f64),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("negative intensity {value} at index {index}")]
    NegativeIntensity { index: usize, value: f64 },
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
}

pub type Result<T> = std::result::Result<T, OpticsError>;

/// Physical sampling shared by the object and hologram planes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling<T> {
    pitch: T,
    wavelength: T,
}

impl<T: FftScalar> Sampling<T> {
    pub fn new(pitch: T, wavelength: T) -> Result<Self> {
        if !(pitch.is_finite() && pitch > T::zero()) {
            return Err(OpticsError::InvalidPitch(pitch.to_f64_lossy()));
        }
        if !(wavelength.is_finite() && wavelength > T::zero()) {
            return Err(OpticsError::InvalidWavelength(wavelength.to_f64_lossy()));
        }
        Ok(Self { pitch, wavelength })
    }

    /// 633 nm light on a 4 µm pixel grid.
    pub fn helium_neon_4um() -> Self {
        Self::new(T::lit(4e-6), T::lit(633e-9)).expect("constant sampling is valid")
    }

    pub fn pitch(&self) -> T {
        self.pitch
    }

    pub fn wavelength(&self) -> T {
        self.wavelength
    }
}

fn check_grid(height: usize, width: usize, len: usize) -> Result<()> {
    if height < 2 || width < 2 {
        return Err(OpticsError::GridTooSmall { height, width });
    }
    if len != height * width {
        return Err(OpticsError::LengthMismatch { len, height, width });
    }
    Ok(())
}

/// Two-dimensional complex amplitude with its physical sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField<T> {
    data: Vec<Complex<T>>,
    height: usize,
    width: usize,
    sampling: Sampling<T>,
}

impl<T: FftScalar> ComplexField<T> {
    pub fn new(
        data: Vec<Complex<T>>,
        height: usize,
        width: usize,
        sampling: Sampling<T>,
    ) -> Result<Self> {
        check_grid(height, width, data.len())?;
        if let Some(i) = data.iter().position(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(OpticsError::NonFinite(i));
        }
        Ok(Self { data, height, width, sampling })
    }

    pub fn zeros(height: usize, width: usize, sampling: Sampling<T>) -> Result<Self> {
        Self::new(vec![Complex::new(T::zero(), T::zero()); height * width], height, width, sampling)
    }

    pub fn constant(
        value: Complex<T>,
        height: usize,
        width: usize,
        sampling: Sampling<T>,
    ) -> Result<Self> {
        Self::new(vec![value; height * width], height, width, sampling)
    }

    /// Lifts an image to a real-valued amplitude field (pixel value → `v + 0i`).
    pub fn from_amplitude(image: &IntensityImage<T>, sampling: Sampling<T>) -> Result<Self> {
        let data = image.data.iter().map(|&v| Complex::new(v, T::zero())).collect();
        Self::new(data, image.height, image.width, sampling)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn sampling(&self) -> Sampling<T> {
        self.sampling
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex<T> {
        self.data[row * self.width + col]
    }

    /// Sum of squared moduli.
    pub fn energy(&self) -> T {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Squared modulus at every pixel.
    pub fn intensity(&self) -> IntensityImage<T> {
        IntensityImage {
            data: self.data.iter().map(|c| c.norm_sqr()).collect(),
            height: self.height,
            width: self.width,
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().map(|c| c.norm()).fold(T::zero(), T::max)
    }

    /// `max |self - other| / max |other|`.
    pub fn relative_linf(&self, other: &Self) -> T {
        let num = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).norm())
            .fold(T::zero(), T::max);
        num / other.max_abs()
    }

    fn same_geometry(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.sampling == other.sampling
    }

    /// `a·self + b·other`.
    pub fn linear_combination(&self, a: Complex<T>, other: &Self, b: Complex<T>) -> Result<Self> {
        if !self.same_geometry(other) {
            return Err(OpticsError::GeometryMismatch("linear combination".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * *x + b * *y).collect();
        Self::new(data, self.height, self.width, self.sampling)
    }
}

/// Non-negative real image.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage<T> {
    data: Vec<T>,
    height: usize,
    width: usize,
}

impl<T: FftScalar> IntensityImage<T> {
    pub fn new(data: Vec<T>, height: usize, width: usize) -> Result<Self> {
        if data.len() != height * width {
            return Err(OpticsError::LengthMismatch { len: data.len(), height, width });
        }
        for (index, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(OpticsError::NonFinite(index));
            }
            if v < T::zero() {
                return Err(OpticsError::NegativeIntensity { index, value: v.to_f64_lossy() });
            }
        }
        Ok(Self { data, height, width })
    }

    pub fn filled(value: T, height: usize, width: usize) -> Result<Self> {
        Self::new(vec![value; height * width], height, width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    pub fn min_max(&self) -> (T, T) {
        self.data
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Row-major index of the largest value (first one on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// Pearson correlation coefficient between two equally sized images.
    /// Zero when either image is constant.
    pub fn pearson(&self, other: &Self) -> Result<T> {
        if self.height != other.height || self.width != other.width {
            return Err(OpticsError::GeometryMismatch(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let n = T::from_usize_lossy(self.data.len());
        let ma = self.data.iter().copied().sum::<T>() / n;
        let mb = other.data.iter().copied().sum::<T>() / n;
        let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
        for (&a, &b) in self.data.iter().zip(&other.data) {
            let (da, db) = (a - ma, b - mb);
            sab += da * db;
            saa += da * da;
            sbb += db * db;
        }
        if saa == T::zero() || sbb == T::zero() {
            return Ok(T::zero());
        }
        Ok(sab / (saa.sqrt() * sbb.sqrt()))
    }
}

/// Angular-spectrum propagator with FFT plans cached for one grid size.
pub struct Propagator<T: FftScalar> {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: FftScalar> Propagator<T> {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    /// Band-limited angular-spectrum transfer function on the DFT grid, stored
    /// row-major like the spectrum. Evanescent components are exactly zero.
    pub fn transfer_function(&self, sampling: Sampling<T>, distance: T) -> Vec<Complex<T>> {
        let fy = dft_frequencies(self.height, sampling.pitch);
        let fx = dft_frequencies(self.width, sampling.pitch);
        let inv_lambda_sq = (T::one() / sampling.wavelength).powi(2);
        let two_pi_z = T::lit(2.0) * T::PI() * distance;
        let mut h = Vec::with_capacity(self.height * self.width);
        for &v in &fy {
            for &u in &fx {
                let arg = inv_lambda_sq - u * u - v * v;
                if arg >= T::zero() {
                    let phase = two_pi_z * arg.sqrt();
                    h.push(Complex::new(phase.cos(), phase.sin()));
                } else {
                    h.push(Complex::new(T::zero(), T::zero()));
                }
            }
        }
        h
    }

    pub fn propagate(&self, field: &ComplexField<T>, distance: T) -> Result<ComplexField<T>> {
        if !distance.is_finite() {
            return Err(OpticsError::InvalidDistance(distance.to_f64_lossy()));
        }
        if field.height != self.height || field.width != self.width {
            return Err(OpticsError::GeometryMismatch(format!(
                "propagator planned for {}x{}, field is {}x{}",
                self.height, self.width, field.height, field.width
            )));
        }
        let mut spectrum = field.data.clone();
        self.fft2(&mut spectrum, false);
        let h = self.transfer_function(field.sampling, distance);
        for (s, t) in spectrum.iter_mut().zip(&h) {
            *s = *s * *t;
        }
        self.fft2(&mut spectrum, true);
        ComplexField::new(spectrum, self.height, self.width, field.sampling)
    }

    /// In-place 2-D DFT; the inverse is normalized by `1/(H·W)`.
    fn fft2(&self, data: &mut [Complex<T>], inverse: bool) {
        let (h, w) = (self.height, self.width);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(data);
        let mut t = transpose(data, h, w);
        col.process(&mut t);
        let back = transpose(&t, w, h);
        data.copy_from_slice(&back);
        if inverse {
            let scale = T::one() / T::from_usize_lossy(h * w);
            for c in data.iter_mut() {
                *c = *c * scale;
            }
        }
    }
}

fn transpose<T: Copy>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for c in 0..cols {
        for r in 0..rows {
            out.push(data[r * cols + c]);
        }
    }
    out
}

/// DFT sample frequencies `k / (n·pitch)`, negative frequencies in the upper half.
pub fn dft_frequencies<T: FftScalar>(n: usize, pitch: T) -> Vec<T> {
    let span = T::from_usize_lossy(n) * pitch;
    (0..n)
        .map(|k| {
            let signed = if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 };
            T::lit(signed) / span
        })
        .collect()
}

/// Propagates `field` over `distance` meters (negative distances back-propagate).
pub fn propagate<T: FftScalar>(field: &ComplexField<T>, distance: T) -> Result<ComplexField<T>> {
    Propagator::new(field.height, field.width).propagate(field, distance)
}

/// Inline hologram with a unit plane-wave reference: `|O + 1|²`.
pub fn record_hologram<T: FftScalar>(object: &ComplexField<T>) -> IntensityImage<T> {
    let one = Complex::new(T::one(), T::zero());
    IntensityImage {
        data: object.data.iter().map(|o| (*o + one).norm_sqr()).collect(),
        height: object.height,
        width: object.width,
    }
}

/// `|P_{-z}[I]|²`. Direct-light and conjugate-image terms are left in place.
pub fn reconstruct<T: FftScalar>(
    hologram: &IntensityImage<T>,
    sampling: Sampling<T>,
    distance: T,
) -> Result<IntensityImage<T>> {
    reconstruct_with(&Propagator::new(hologram.height, hologram.width), hologram, sampling, distance)
}

pub fn reconstruct_with<T: FftScalar>(
    propagator: &Propagator<T>,
    hologram: &IntensityImage<T>,
    sampling: Sampling<T>,
    distance: T,
) -> Result<IntensityImage<T>> {
    let field = ComplexField::from_amplitude(hologram, sampling)?;
    Ok(propagator.propagate(&field, -distance)?.intensity())
}
