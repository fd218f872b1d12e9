//! Hole masks that mimic dis-occlusions left by depth-image-based rendering.
//!
//! Three families are produced:
//! * type I: dilated object boundaries of a segmentation map,
//! * type II: a type I mask shifted by a fixed offset,
//! * type III: whole superpixels of a size class, picked at random.

mod masks;
mod slic;

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

pub use masks::{
    boundary_pixels, component_areas, dilate, disk_offsets, mask_type1, mask_type2, mask_type3,
    punch_holes, SizeClass,
};
pub use slic::{rgb_to_lab, slic_segment};

use crate::error::{Error, Result};

/// Per-pixel {0,1} map; 1 marks a missing pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    /// Any nonzero input value becomes 1.
    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimMismatch(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data: data.into_iter().map(|v| u8::from(v != 0)).collect(),
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(u8::from(f(r, c)));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.width + c] != 0
    }

    pub fn set(&mut self, r: usize, c: usize, on: bool) {
        self.data[r * self.width + c] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    /// True where `self` is set implies `other` is set.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| a == 0 || b != 0)
    }

    pub fn rotate(&self, degrees: u32) -> Result<Self> {
        let quarter = |m: &BinaryMask| {
            let (h, w) = (m.height, m.width);
            let mut out = BinaryMask::zeros(w, h);
            for r in 0..h {
                for c in 0..w {
                    out.data[(w - 1 - c) * h + r] = m.data[r * w + c];
                }
            }
            out
        };
        match degrees {
            0 => Ok(self.clone()),
            90 => Ok(quarter(self)),
            180 => Ok(quarter(&quarter(self))),
            270 => Ok(quarter(&quarter(&quarter(self)))),
            d => Err(Error::InvalidParam(format!("rotation {d} is not a quarter turn"))),
        }
    }

    /// Persists as a 1-bit grayscale PNG (white = missing).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(File::create(path)?);
        let mut enc = png::Encoder::new(file, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
        let stride = self.width.div_ceil(8);
        let mut packed = vec![0u8; stride * self.height];
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    packed[r * stride + c / 8] |= 0x80 >> (c % 8);
                }
            }
        }
        writer.write_image_data(&packed).map_err(|e| png_err(path, e))?;
        writer.finish().map_err(|e| png_err(path, e))?;
        Ok(())
    }

    /// Loads a grayscale or indexed PNG; any nonzero sample marks a hole.
    pub fn load_png(path: &Path) -> Result<Self> {
        let (h, w, values) = read_index_png(path)?;
        Self::from_vec(h, w, values.into_iter().map(|v| u8::from(v != 0)).collect())
    }
}

/// Per-pixel object class, 0 = background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMap {
    height: usize,
    width: usize,
    data: Vec<u32>,
}

impl SegmentationMap {
    pub fn new(height: usize, width: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimMismatch(format!(
                "segmentation {height}x{width} needs {} labels, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> u32 {
        self.data[r * self.width + c]
    }

    /// Reads palette indices or gray levels of an 8-bit (or lower) PNG as class ids.
    pub fn load_png(path: &Path) -> Result<Self> {
        let (h, w, values) = read_index_png(path)?;
        Self::new(h, w, values.into_iter().map(u32::from).collect())
    }

    /// Writes class ids as 8-bit grayscale; ids above 255 are rejected.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw = self
            .data
            .iter()
            .map(|&v| {
                u8::try_from(v).map_err(|_| Error::InvalidParam(format!("class id {v} exceeds 255")))
            })
            .collect::<Result<Vec<u8>>>()?;
        let file = std::io::BufWriter::new(File::create(path)?);
        let mut enc = png::Encoder::new(file, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
        writer.write_image_data(&raw).map_err(|e| png_err(path, e))?;
        writer.finish().map_err(|e| png_err(path, e))?;
        Ok(())
    }
}

/// Superpixel partition; every label's pixel set is 4-connected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuperpixelLabels {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    n_segments: usize,
}

impl SuperpixelLabels {
    /// Labels must already be compact (`0..n_segments`).
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width || labels.is_empty() {
            return Err(Error::DimMismatch(format!(
                "labels {height}x{width} need {} entries, got {}",
                height * width,
                labels.len()
            )));
        }
        let n_segments = *labels.iter().max().expect("non-empty") as usize + 1;
        Ok(Self {
            height,
            width,
            labels,
            n_segments,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn get(&self, r: usize, c: usize) -> u32 {
        self.labels[r * self.width + c]
    }

    /// Pixel count per label.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_segments];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Raw sample values of a single-channel PNG (grayscale or indexed, ≤ 8 bits).
fn read_index_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut dec = png::Decoder::new(BufReader::new(File::open(path)?));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| png_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    if !matches!(
        info.color_type,
        png::ColorType::Grayscale | png::ColorType::Indexed
    ) {
        return Err(png_err(path, "expected a grayscale or palette PNG"));
    }
    let bits = match info.bit_depth {
        png::BitDepth::One => 1,
        png::BitDepth::Two => 2,
        png::BitDepth::Four => 4,
        png::BitDepth::Eight => 8,
        png::BitDepth::Sixteen => return Err(png_err(path, "16-bit label maps are unsupported")),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut out = Vec::with_capacity(w * h);
    let per_byte = 8 / bits;
    let max = (1u16 << bits) - 1;
    for r in 0..h {
        let row = &buf[r * info.line_size..(r + 1) * info.line_size];
        for c in 0..w {
            let byte = row[c / per_byte];
            let shift = 8 - bits * (c % per_byte + 1);
            out.push(((u16::from(byte) >> shift) & max) as u8);
        }
    }
    Ok((h, w, out))
}
