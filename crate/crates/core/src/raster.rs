//! Dense images and their on-disk forms (8-bit PNG, little-endian PFM).

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};

/// Row-major image with interleaved channels, top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape(
                "raster",
                format!(
                    "{width}x{height}x{channels} needs {} values, got {}",
                    width * height * channels,
                    data.len()
                ),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn pixel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn same_dims(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Per-pixel channel mean as a one-channel image.
    pub fn channel_mean(&self) -> Raster {
        let c = self.channels as f64;
        let data = self
            .data
            .chunks(self.channels)
            .map(|px| px.iter().sum::<f64>() / c)
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }
}

/// Nearest 8-bit level of a value in `[0, 1]` (clamped).
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png(path: &Path, img: &Raster) -> Result<()> {
    let to_err = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    let (w, h) = (img.width as u32, img.height as u32);
    match img.channels {
        3 => {
            let buf: Vec<u8> = img.data.iter().map(|v| quantize_u8(*v)).collect();
            let out: ImageBuffer<Rgb<u8>, _> =
                ImageBuffer::from_raw(w, h, buf).expect("buffer matches dims");
            out.save(path).map_err(to_err)
        }
        1 => {
            let buf: Vec<u8> = img.data.iter().map(|v| quantize_u8(*v)).collect();
            let out: ImageBuffer<image::Luma<u8>, _> =
                ImageBuffer::from_raw(w, h, buf).expect("buffer matches dims");
            out.save(path).map_err(to_err)
        }
        c => Err(Error::invalid(format!(
            "PNG output needs 1 or 3 channels, got {c}"
        ))),
    }
}

/// Read an 8-bit RGB PNG into `[0, 1]` values.
pub fn read_png_rgb(path: &Path) -> Result<Raster> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|b| f64::from(b) / 255.0)
        .collect();
    Raster::from_data(w as usize, h as usize, 3, data)
}

/// Encode as PFM: `Pf` (one channel) or `PF` (three), little-endian,
/// rows stored bottom to top.
pub fn encode_pfm(img: &Raster) -> Result<Vec<u8>> {
    let tag = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => {
            return Err(Error::invalid(format!(
                "PFM needs 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = img.width * img.channels;
    for y in (0..img.height).rev() {
        for v in &img.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_pfm(path: &Path, img: &Raster) -> Result<()> {
    fs::write(path, encode_pfm(img)?).map_err(|e| Error::io(path, e))
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Raster> {
    let corrupt = |d: &str| Error::corrupt(path, d.to_string());
    // header: three whitespace-terminated lines
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(corrupt("truncated PFM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| corrupt("bad header"))?);
    }
    pos += 1;
    let channels = match fields[0] {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(corrupt("not a PFM file")),
    };
    let width: usize = fields[1].parse().map_err(|_| corrupt("bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| corrupt("bad height"))?;
    let scale: f64 = fields[3].parse().map_err(|_| corrupt("bad scale"))?;
    if scale >= 0.0 {
        return Err(corrupt("big-endian PFM is not supported"));
    }
    let row = width * channels;
    let need = row * height * 4;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() != need {
        return Err(corrupt(&format!(
            "expected {need} payload bytes, found {}",
            payload.len()
        )));
    }
    let mut data = vec![0.0; row * height];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        let (stored_row, col) = (i / row, i % row);
        let y = height - 1 - stored_row;
        data[y * row + col] = f64::from(v);
    }
    Raster::from_data(width, height, channels, data)
}

pub fn read_pfm(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}
