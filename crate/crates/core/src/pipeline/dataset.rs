//! Fragment datasets and the HMFRAG1 file format.
//!
//! Layout, all little-endian: `"HMFRAG1\0"`, u32 fragment side in pixels,
//! u32 record count, then per record a u8 label followed by side² f32 pixel
//! values in `[0, 1]`, row-major.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{page_seed, ExperimentConfig, Split};
use super::{PipelineError, Result};
use crate::datapage::{
    apply_channel, random_page, render_page, slice_fragments, DataPage, Fragment, NUM_SYMBOLS,
    SENSOR_FULL_SCALE,
};
use crate::nn::Tensor;
use crate::optics::{record_hologram, reconstruct_with, ComplexField, IntensityImage, Propagator, Sampling};

pub const DATASET_MAGIC: &[u8; 8] = b"HMFRAG1\0";

/// Labeled fragments stored as `f32` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    fragment_px: usize,
    labels: Vec<u8>,
    pixels: Vec<f32>,
}

fn bad(msg: impl Into<String>) -> PipelineError {
    PipelineError::Dataset(msg.into())
}

impl Dataset {
    pub fn new(fragment_px: usize, labels: Vec<u8>, pixels: Vec<f32>) -> Result<Self> {
        if fragment_px == 0 {
            return Err(bad("fragment side must be positive"));
        }
        if pixels.len() != labels.len() * fragment_px * fragment_px {
            return Err(bad(format!(
                "{} pixels for {} fragments of {fragment_px}x{fragment_px}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= NUM_SYMBOLS) {
            return Err(bad(format!("label {l} out of range")));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(bad("pixel values must lie in [0, 1]"));
        }
        Ok(Self { fragment_px, labels, pixels })
    }

    /// Scales 0-255 sensor fragments into `[0, 1]`.
    pub fn from_fragments(fragment_px: usize, fragments: &[Fragment<f64>]) -> Result<Self> {
        let labels = fragments.iter().map(|f| f.label).collect();
        let pixels = fragments
            .iter()
            .flat_map(|f| f.pixels.iter().map(|&v| (v / SENSOR_FULL_SCALE) as f32))
            .collect();
        Self::new(fragment_px, labels, pixels)
    }

    pub fn fragment_px(&self) -> usize {
        self.fragment_px
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn fragment(&self, i: usize) -> &[f32] {
        let n = self.fragment_px * self.fragment_px;
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn mean_pixel(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len() as f64
    }

    /// `[B, 1, side, side]` tensor of the fragments at `indices`.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f64> {
        let p = self.fragment_px;
        let data = indices.iter().flat_map(|&i| self.fragment(i).iter().map(|&v| v as f64)).collect();
        Tensor::new(vec![indices.len(), 1, p, p], data).expect("batch shape")
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// Per-class counts.
    pub fn class_counts(&self) -> [u64; NUM_SYMBOLS] {
        let mut c = [0; NUM_SYMBOLS];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }
}

pub fn write_dataset<W: Write>(dataset: &Dataset, w: &mut W) -> Result<()> {
    let px = u32::try_from(dataset.fragment_px).map_err(|_| bad("fragment side too large"))?;
    let count = u32::try_from(dataset.len()).map_err(|_| bad("too many fragments"))?;
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&px.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    let mut record = Vec::with_capacity(1 + 4 * dataset.fragment_px * dataset.fragment_px);
    for i in 0..dataset.len() {
        record.clear();
        record.push(dataset.labels[i]);
        for v in dataset.fragment(i) {
            record.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&record)?;
    }
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => bad("truncated file"),
        _ => PipelineError::Io(e),
    })
}

/// Reads a whole HMFRAG1 stream; trailing bytes are an error.
pub fn read_dataset<R: Read>(r: &mut R) -> Result<Dataset> {
    let mut header = [0u8; 16];
    read_exact_or(r, &mut header)?;
    if &header[..8] != DATASET_MAGIC {
        return Err(bad("bad magic"));
    }
    let px = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    if px == 0 || px > 4096 {
        return Err(bad(format!("implausible fragment side {px}")));
    }
    let n = px * px;
    let mut labels = Vec::with_capacity(count.min(1 << 20));
    let mut pixels = Vec::with_capacity((count * n).min(1 << 26));
    let mut record = vec![0u8; 1 + 4 * n];
    for _ in 0..count {
        read_exact_or(r, &mut record)?;
        labels.push(record[0]);
        pixels.extend(record[1..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())));
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(bad("trailing bytes after last record"));
    }
    Dataset::new(px, labels, pixels)
}

/// render → unit-amplitude object field → propagate(z) → inline hologram →
/// back-propagated intensity.
pub fn reconstruct_page(
    propagator: &Propagator<f64>,
    page: &DataPage,
    z: f64,
) -> Result<IntensityImage<f64>> {
    let sampling = Sampling::helium_neon_4um();
    let rendered = render_page::<f64>(page);
    let object = ComplexField::from_amplitude(&rendered, sampling)?;
    let hologram = record_hologram(&propagator.propagate(&object, z)?);
    Ok(reconstruct_with(propagator, &hologram, sampling, z)?)
}

fn page_fragments(
    config: &ExperimentConfig,
    propagator: &Propagator<f64>,
    split: Split,
    index: usize,
) -> Result<Vec<Fragment<f64>>> {
    let seed = page_seed(config.channel.seed, split, index as u64);
    let page = random_page(config.geometry, seed)?;
    let recon = reconstruct_page(propagator, &page, config.channel.z)?;
    // stream 0 of this seed produced the symbols
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (sensed, _) = apply_channel(&recon, &config.channel, &mut rng)?;
    Ok(slice_fragments(&sensed, &page)?)
}

/// Fragments of every page in `split`, page-major then row-major. Pages are
/// generated in parallel from independent sub-seeds.
pub fn generate_split(config: &ExperimentConfig, split: Split) -> Result<Dataset> {
    config.validate()?;
    let pages = match split {
        Split::Train => config.train_pages,
        Split::Test => config.test_pages,
    };
    let side = config.geometry.side_px();
    let propagator = Propagator::new(side, side);
    let per_page: Vec<Vec<Fragment<f64>>> = (0..pages)
        .into_par_iter()
        .map(|i| page_fragments(config, &propagator, split, i))
        .collect::<Result<_>>()?;
    Dataset::from_fragments(config.geometry.fragment_px(), &per_page.concat())
}

/// `(train, test)` datasets for `config`.
pub fn generate_dataset(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    Ok((generate_split(config, Split::Train)?, generate_split(config, Split::Test)?))
}
