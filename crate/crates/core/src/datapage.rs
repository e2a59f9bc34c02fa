//! 4-bit fragment codec, page assembly and slicing, and the sensor channel
//! (min-max normalization, Gaussian noise, whole-page lateral misalignment).
//!
//! A fragment is a 2×2 grid of square bit cells. Bits map to cells as
//! MSB = top-left, then top-right, bottom-left, LSB = bottom-right.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optics::IntensityImage;
use crate::scalar::{FftScalar, Scalar};

/// Number of distinct fragment symbols.
pub const NUM_SYMBOLS: usize = 16;

/// Full-scale value of the simulated 8-bit sensor.
pub const SENSOR_FULL_SCALE: f64 = 255.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PageError {
    #[error("invalid page geometry: {0}")]
    Geometry(String),
    #[error("symbol {value} at index {index} is outside 0..16")]
    SymbolOutOfRange { index: usize, value: u8 },
    #[error("expected {expected} symbols, got {got}")]
    SymbolCount { expected: usize, got: usize },
    #[error("image is {height}x{width}, page needs {side}x{side}")]
    ImageSize { height: usize, width: usize, side: usize },
    #[error("fragment has {got} pixels, expected {expected}")]
    FragmentSize { expected: usize, got: usize },
    #[error("invalid channel config: {0}")]
    Channel(String),
}

pub type Result<T> = std::result::Result<T, PageError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageGeometry {
    pub fragments_per_side: usize,
    pub cell_px: usize,
}

impl PageGeometry {
    pub fn new(fragments_per_side: usize, cell_px: usize) -> Result<Self> {
        let g = Self { fragments_per_side, cell_px };
        g.validate()?;
        Ok(g)
    }

    /// 50×50 fragments of 20 px: 1000×1000 px pages, 2,500 fragments each.
    pub fn paper() -> Self {
        Self { fragments_per_side: 50, cell_px: 10 }
    }

    /// 20×20 fragments of 20 px: 400×400 px pages, 400 fragments each.
    pub fn desk() -> Self {
        Self { fragments_per_side: 20, cell_px: 10 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fragments_per_side == 0 || self.cell_px == 0 {
            return Err(PageError::Geometry(format!(
                "fragments_per_side={} cell_px={} must both be positive",
                self.fragments_per_side, self.cell_px
            )));
        }
        Ok(())
    }

    pub fn fragment_px(&self) -> usize {
        2 * self.cell_px
    }

    pub fn side_px(&self) -> usize {
        self.fragments_per_side * self.fragment_px()
    }

    pub fn fragment_count(&self) -> usize {
        self.fragments_per_side * self.fragments_per_side
    }
}

impl Default for PageGeometry {
    fn default() -> Self {
        Self::desk()
    }
}

/// One 4-bit symbol per fragment position, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPage {
    symbols: Vec<u8>,
    geometry: PageGeometry,
}

impl DataPage {
    pub fn new(symbols: Vec<u8>, geometry: PageGeometry) -> Result<Self> {
        geometry.validate()?;
        if symbols.len() != geometry.fragment_count() {
            return Err(PageError::SymbolCount {
                expected: geometry.fragment_count(),
                got: symbols.len(),
            });
        }
        if let Some((index, &value)) =
            symbols.iter().enumerate().find(|(_, &s)| s as usize >= NUM_SYMBOLS)
        {
            return Err(PageError::SymbolOutOfRange { index, value });
        }
        Ok(Self { symbols, geometry })
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    pub fn geometry(&self) -> PageGeometry {
        self.geometry
    }

    pub fn symbol(&self, row: usize, col: usize) -> u8 {
        self.symbols[row * self.geometry.fragments_per_side + col]
    }
}

/// A fragment image with its ground-truth symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment<T> {
    pub pixels: Vec<T>,
    pub label: u8,
}

/// Cell states of `symbol` in the order top-left, top-right, bottom-left, bottom-right.
pub fn symbol_cells(symbol: u8) -> [bool; 4] {
    [symbol & 8 != 0, symbol & 4 != 0, symbol & 2 != 0, symbol & 1 != 0]
}

/// Canonical 0/1 rendering of one fragment, row-major.
pub fn canonical_fragment<T: Scalar>(symbol: u8, cell_px: usize) -> Vec<T> {
    let cells = symbol_cells(symbol);
    let side = 2 * cell_px;
    let mut out = vec![T::zero(); side * side];
    for r in 0..side {
        for c in 0..side {
            if cells[2 * (r / cell_px) + c / cell_px] {
                out[r * side + c] = T::one();
            }
        }
    }
    out
}

/// Paints every fragment as its 2×2 grid of bit cells (on = 1, off = 0).
pub fn render_page<T: FftScalar>(page: &DataPage) -> IntensityImage<T> {
    let g = page.geometry;
    let side = g.side_px();
    let fpx = g.fragment_px();
    let mut data = vec![T::zero(); side * side];
    for fr in 0..g.fragments_per_side {
        for fc in 0..g.fragments_per_side {
            let pattern = canonical_fragment::<T>(page.symbol(fr, fc), g.cell_px);
            for r in 0..fpx {
                let dst = (fr * fpx + r) * side + fc * fpx;
                data[dst..dst + fpx].copy_from_slice(&pattern[r * fpx..(r + 1) * fpx]);
            }
        }
    }
    IntensityImage::new(data, side, side).expect("rendered page is valid")
}

/// Uniform i.i.d. symbols from a ChaCha8 stream seeded with `seed`.
pub fn random_page(geometry: PageGeometry, seed: u64) -> Result<DataPage> {
    geometry.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let symbols = (0..geometry.fragment_count())
        .map(|_| rng.random_range(0..NUM_SYMBOLS as u8))
        .collect();
    DataPage::new(symbols, geometry)
}

/// How integer shifts are drawn for a maximum magnitude `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftSpan {
    /// `{-s, ..., s-1}`, 2s values.
    #[default]
    HalfOpen,
    /// `{-s, ..., s}`, 2s+1 values.
    Closed,
}

impl ShiftSpan {
    pub fn range(self, max_shift: i64) -> std::ops::RangeInclusive<i64> {
        match self {
            ShiftSpan::HalfOpen => -max_shift..=max_shift - 1,
            ShiftSpan::Closed => -max_shift..=max_shift,
        }
    }
}

/// One simulated read channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Propagation distance in meters.
    pub z: f64,
    /// Gaussian noise standard deviation on the 0-255 sensor scale.
    pub noise_sigma: f64,
    pub max_shift_px: u32,
    #[serde(default)]
    pub shift_span: ShiftSpan,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.z.is_finite() && self.z > 0.0) {
            return Err(PageError::Channel(format!("z must be positive, got {}", self.z)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(PageError::Channel(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { z: 0.05, noise_sigma: 2.5, max_shift_px: 5, shift_span: ShiftSpan::HalfOpen, seed: 0 }
    }
}

/// Integer page translation in pixels; positive `dx` moves content right,
/// positive `dy` moves it down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Shift {
    pub dx: i64,
    pub dy: i64,
}

/// Maps the image onto `[0, 255]`. A constant image maps to all zeros.
pub fn normalize_min_max<T: FftScalar>(image: &IntensityImage<T>) -> IntensityImage<T> {
    let (lo, hi) = image.min_max();
    let full = T::lit(SENSOR_FULL_SCALE);
    let data = if hi > lo {
        let scale = full / (hi - lo);
        image.data().iter().map(|&v| ((v - lo) * scale).min(full)).collect()
    } else {
        vec![T::zero(); image.data().len()]
    };
    IntensityImage::new(data, image.height(), image.width()).expect("normalized image is valid")
}

/// Translates the image by `shift`, filling vacated pixels with zeros.
pub fn translate<T: FftScalar>(image: &IntensityImage<T>, shift: Shift) -> IntensityImage<T> {
    let out = translate_raw(image.data(), image.height(), image.width(), shift);
    IntensityImage::new(out, image.height(), image.width()).expect("translated image is valid")
}

fn translate_raw<T: Scalar>(src: &[T], height: usize, width: usize, shift: Shift) -> Vec<T> {
    let (h, w) = (height as i64, width as i64);
    let mut out = vec![T::zero(); src.len()];
    for r in 0..h {
        let sr = r - shift.dy;
        if sr < 0 || sr >= h {
            continue;
        }
        for c in 0..w {
            let sc = c - shift.dx;
            if sc >= 0 && sc < w {
                out[(r * w + c) as usize] = src[(sr * w + sc) as usize];
            }
        }
    }
    out
}

/// Sensor model: normalize to `[0,255]`, add N(0, σ²) per pixel, translate the
/// whole page by a random integer shift, clamp to `[0,255]`.
///
/// The shift is drawn before the noise field. With `noise_sigma == 0` no noise
/// samples are drawn.
pub fn apply_channel<T: FftScalar, R: Rng + ?Sized>(
    reconstruction: &IntensityImage<T>,
    config: &ChannelConfig,
    rng: &mut R,
) -> Result<(IntensityImage<T>, Shift)> {
    if !(config.noise_sigma.is_finite() && config.noise_sigma >= 0.0) {
        return Err(PageError::Channel(format!(
            "noise_sigma must be >= 0, got {}",
            config.noise_sigma
        )));
    }
    let mut shift = Shift::default();
    if config.max_shift_px > 0 {
        let range = config.shift_span.range(config.max_shift_px as i64);
        shift.dx = rng.random_range(range.clone());
        shift.dy = rng.random_range(range);
    }
    let normalized = normalize_min_max(reconstruction);
    let (h, w) = (normalized.height(), normalized.width());
    // noisy values may leave [0, 255] until the final clamp
    let mut signal = normalized.into_data();
    if config.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, config.noise_sigma)
            .map_err(|e| PageError::Channel(e.to_string()))?;
        for v in signal.iter_mut() {
            *v += T::lit(normal.sample(rng));
        }
    }
    let full = T::lit(SENSOR_FULL_SCALE);
    let clamped = translate_raw(&signal, h, w, shift)
        .into_iter()
        .map(|v| v.max(T::zero()).min(full))
        .collect();
    let out = IntensityImage::new(clamped, h, w).expect("clamped channel output is valid");
    Ok((out, shift))
}

/// Cuts the image along the nominal fragment grid, row-major, labeling each
/// fragment with the page's symbol at that position.
pub fn slice_fragments<T: FftScalar>(
    image: &IntensityImage<T>,
    page: &DataPage,
) -> Result<Vec<Fragment<T>>> {
    let g = page.geometry;
    let side = g.side_px();
    if image.height() != side || image.width() != side {
        return Err(PageError::ImageSize { height: image.height(), width: image.width(), side });
    }
    let fpx = g.fragment_px();
    let data = image.data();
    let mut out = Vec::with_capacity(g.fragment_count());
    for fr in 0..g.fragments_per_side {
        for fc in 0..g.fragments_per_side {
            let mut pixels = Vec::with_capacity(fpx * fpx);
            for r in 0..fpx {
                let start = (fr * fpx + r) * side + fc * fpx;
                pixels.extend_from_slice(&data[start..start + fpx]);
            }
            out.push(Fragment { pixels, label: page.symbol(fr, fc) });
        }
    }
    Ok(out)
}

/// Matched-filter decoder against the 16 canonical patterns.
///
/// Each pattern is used in bipolar form (+1 on cells, -1 off cells) and
/// correlated with the fragment measured about `reference`, the level that
/// separates dark from bright pixels:
///
/// `score_k = Σ (f - r)·s_k / (‖f - r‖·‖s_k‖)`
///
/// The result is invariant to positive scaling of `f - r`. When the fragment
/// equals the reference everywhere every score is 0 and class 0 wins the
/// lowest-index tie-break.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemplateDecoder {
    pub cell_px: usize,
    pub reference: f64,
}

impl TemplateDecoder {
    pub fn new(cell_px: usize, reference: f64) -> Self {
        Self { cell_px, reference }
    }

    /// All 16 normalized correlation scores.
    pub fn scores<T: Scalar>(&self, pixels: &[T]) -> Result<[f64; NUM_SYMBOLS]> {
        let side = 2 * self.cell_px;
        if pixels.len() != side * side {
            return Err(PageError::FragmentSize { expected: side * side, got: pixels.len() });
        }
        let mut cell_sums = [0.0f64; 4];
        let mut norm_sq = 0.0f64;
        for (i, &p) in pixels.iter().enumerate() {
            let v = p.to_f64_lossy() - self.reference;
            let (r, c) = (i / side, i % side);
            cell_sums[2 * (r / self.cell_px) + c / self.cell_px] += v;
            norm_sq += v * v;
        }
        let mut scores = [0.0f64; NUM_SYMBOLS];
        if norm_sq == 0.0 {
            return Ok(scores);
        }
        let denom = norm_sq.sqrt() * side as f64;
        for (k, score) in scores.iter_mut().enumerate() {
            let cells = symbol_cells(k as u8);
            let raw: f64 = cells
                .iter()
                .zip(&cell_sums)
                .map(|(&on, &s)| if on { s } else { -s })
                .sum();
            *score = raw / denom;
        }
        Ok(scores)
    }

    pub fn decode<T: Scalar>(&self, pixels: &[T]) -> Result<u8> {
        let scores = self.scores(pixels)?;
        let mut best = 0usize;
        for k in 1..NUM_SYMBOLS {
            if scores[k] > scores[best] {
                best = k;
            }
        }
        Ok(best as u8)
    }
}

/// Decodes one fragment with the given dark/bright reference level.
pub fn template_decode<T: Scalar>(pixels: &[T], cell_px: usize, reference: f64) -> Result<u8> {
    TemplateDecoder::new(cell_px, reference).decode(pixels)
}
