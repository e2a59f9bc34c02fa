//! Binary 8-bit PGM (P5) images.

use std::io::{Read, Write};

use super::{PipelineError, Result};
use crate::optics::IntensityImage;

/// Writes `image` min-max stretched to 0-255; a constant image is written black.
pub fn write_pgm<W: Write>(image: &IntensityImage<f64>, w: &mut W) -> Result<()> {
    let (lo, hi) = image.min_max();
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    write!(w, "P5\n{} {}\n255\n", image.width(), image.height())?;
    let bytes: Vec<u8> = image.data().iter().map(|&v| ((v - lo) * scale).round().clamp(0.0, 255.0) as u8).collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Reads a P5 image with maxval 255 as `(width, height, pixels)`.
pub fn read_pgm<R: Read>(r: &mut R) -> Result<(usize, usize, Vec<u8>)> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let bad = |m: &str| PipelineError::Dataset(format!("PGM: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("only 8-bit P5 is supported"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad dimension"));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let data = buf.get(pos + 1..).unwrap_or(&[]);
    if data.len() != w * h {
        return Err(bad("pixel count mismatch"));
    }
    Ok((w, h, data.to_vec()))
}
