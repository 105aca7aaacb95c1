use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use image::{GrayImage, ImageBuffer, Luma};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ImageFormat {
    Png,
    Pgm,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Pgm => "pgm",
        }
    }

    fn format(self) -> image::ImageFormat {
        match self {
            ImageFormat::Png => image::ImageFormat::Png,
            ImageFormat::Pgm => image::ImageFormat::Pnm,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_csv<const N: usize>(path: &Path, header: [&str; N], rows: &[[f64; N]]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// 16-bit grayscale, `values` in `[0, 1]` row-major; row `j` of the file
/// is row `j` of the data.
pub fn write_gray16(
    path: &Path,
    width: usize,
    height: usize,
    values: &[f64],
    format: ImageFormat,
) -> Result<()> {
    let data: Vec<u16> = values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, data)
            .context("image buffer size mismatch")?;
    img.save_with_format(path, format.format())
        .with_context(|| format!("writing {}", path.display()))
}

pub fn write_mask(
    path: &Path,
    width: usize,
    height: usize,
    mask: &[bool],
    format: ImageFormat,
) -> Result<()> {
    let data: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(width as u32, height as u32, data)
        .context("mask buffer size mismatch")?;
    img.save_with_format(path, format.format())
        .with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_rows() {
        let dir = tempfile::TempDir::new().unwrap();
        let p = dir.path().join("a.csv");
        write_csv(&p, ["t", "u"], &[[0.5, 1.0], [2.0, -0.25]]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "t,u\n0.5,1\n2,-0.25\n");
    }

    #[test]
    fn gray16_round_trips_in_both_formats() {
        let dir = tempfile::TempDir::new().unwrap();
        let values = [0.0, 0.25, 1.0, 2.0, -1.0, 0.5];
        for fmt in [ImageFormat::Png, ImageFormat::Pgm] {
            let p = dir.path().join(format!("g.{}", fmt.extension()));
            write_gray16(&p, 3, 2, &values, fmt).unwrap();
            let img = image::open(&p).unwrap().to_luma16();
            assert_eq!(img.dimensions(), (3, 2));
            let px: Vec<u16> = img.pixels().map(|p| p[0]).collect();
            assert_eq!(px, [0, 16384, 65535, 65535, 0, 32768]);
        }
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let dir = tempfile::TempDir::new().unwrap();
        let p = dir.path().join("m.png");
        assert!(write_mask(&p, 2, 2, &[true], ImageFormat::Png).is_err());
    }
}
