//! RGB raster type with values in `[0, 1]`, plus file I/O and rotations.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};

use crate::error::{Error, Result};

/// Height × width × 3 raster, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRGB {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageRGB {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParam(format!(
                "image must be at least 1x1, got {height}x{width}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::DimMismatch(format!(
                "{height}x{width}x3 needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParam(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0);
        Self {
            height,
            width,
            data: vec![value.clamp(0.0, 1.0); height * width * 3],
        }
    }

    /// Builds an image from a per-pixel function returning RGB values; results are clamped.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        assert!(height > 0 && width > 0);
        let mut data = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                data.extend(f(r, c).iter().map(|v| v.clamp(0.0, 1.0)));
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, r: usize, c: usize) -> [f64; 3] {
        let i = (r * self.width + c) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, r: usize, c: usize, rgb: [f64; 3]) {
        let i = (r * self.width + c) * 3;
        for (k, v) in rgb.iter().enumerate() {
            self.data[i + k] = v.clamp(0.0, 1.0);
        }
    }

    /// Copies a `size`×`size` window anchored at `(row, col)` into planar CHW order.
    pub fn crop_chw(&self, row: usize, col: usize, size: usize, out: &mut [f64]) {
        debug_assert!(row + size <= self.height && col + size <= self.width);
        debug_assert_eq!(out.len(), 3 * size * size);
        let plane = size * size;
        for r in 0..size {
            for c in 0..size {
                let src = ((row + r) * self.width + col + c) * 3;
                let dst = r * size + c;
                out[dst] = self.data[src];
                out[plane + dst] = self.data[src + 1];
                out[2 * plane + dst] = self.data[src + 2];
            }
        }
    }

    /// Whole image in planar CHW order.
    pub fn to_chw(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; 3 * plane];
        for p in 0..plane {
            for k in 0..3 {
                out[k * plane + p] = self.data[p * 3 + k];
            }
        }
        out
    }

    /// Inverse of [`ImageRGB::to_chw`]; values are clamped into `[0, 1]`.
    pub fn from_chw(height: usize, width: usize, chw: &[f64]) -> Result<Self> {
        let plane = height * width;
        if chw.len() != 3 * plane {
            return Err(Error::DimMismatch(format!(
                "expected {} planar values, got {}",
                3 * plane,
                chw.len()
            )));
        }
        let mut data = vec![0.0; 3 * plane];
        for p in 0..plane {
            for k in 0..3 {
                data[p * 3 + k] = chw[k * plane + p].clamp(0.0, 1.0);
            }
        }
        Self::new(height, width, data)
    }

    /// Rotation by 90° counterclockwise: pixel `(r, c)` moves to `(W-1-c, r)`.
    pub fn rotate90_ccw(&self) -> Self {
        let (h, w) = (self.height, self.width);
        let mut data = vec![0.0; self.data.len()];
        for r in 0..h {
            for c in 0..w {
                let src = (r * w + c) * 3;
                // output is w rows by h columns
                let dst = ((w - 1 - c) * h + r) * 3;
                data[dst..dst + 3].copy_from_slice(&self.data[src..src + 3]);
            }
        }
        Self {
            height: w,
            width: h,
            data,
        }
    }

    /// Counterclockwise rotation by a multiple of 90 degrees.
    pub fn rotate(&self, degrees: u32) -> Result<Self> {
        match degrees {
            0 => Ok(self.clone()),
            90 => Ok(self.rotate90_ccw()),
            180 => Ok(self.rotate90_ccw().rotate90_ccw()),
            270 => Ok(self.rotate90_ccw().rotate90_ccw().rotate90_ccw()),
            d => Err(Error::InvalidParam(format!(
                "rotation must be one of 0/90/180/270, got {d}"
            ))),
        }
    }
}

/// The three rotated copies (90°, 180°, 270° counterclockwise) used for augmentation.
pub fn augment_rotations(img: &ImageRGB) -> [ImageRGB; 3] {
    let r90 = img.rotate90_ccw();
    let r180 = r90.rotate90_ccw();
    let r270 = r180.rotate90_ccw();
    [r90, r180, r270]
}

/// Loads an 8- or 16-bit raster and rescales it into `[0, 1]`.
pub fn load_image(path: &Path) -> Result<ImageRGB> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let decoded = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let sixteen_bit = matches!(
        decoded,
        DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
    );
    let (height, width, data) = if sixteen_bit {
        let buf = decoded.to_rgb16();
        let (w, h) = buf.dimensions();
        let data = buf.as_raw().iter().map(|&v| f64::from(v) / 65535.0).collect();
        (h as usize, w as usize, data)
    } else {
        let buf = decoded.to_rgb8();
        let (w, h) = buf.dimensions();
        let data = buf.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
        (h as usize, w as usize, data)
    };
    ImageRGB::new(height, width, data)
}

/// Saves as 8-bit RGB; the format follows the file extension (PNG or BMP).
pub fn save_image(img: &ImageRGB, path: &Path) -> Result<()> {
    let raw: Vec<u8> = img.data.iter().map(|&v| quantize_u8(v)).collect();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, raw)
            .expect("buffer length matches dimensions");
    buf.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub(crate) fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(h: usize, w: usize) -> ImageRGB {
        let n = (h * w) as f64;
        ImageRGB::from_fn(h, w, |r, c| {
            let v = (r * w + c) as f64 / n;
            [v, 1.0 - v, 0.5]
        })
    }

    #[test]
    fn png_endpoints_scale_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two.png");
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_raw(2, 2, vec![0, 0, 0, 255, 255, 255, 0, 255, 0, 255, 0, 255]).unwrap();
        buf.save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.height(), img.width()), (2, 2));
        assert!(img.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(img.pixel(0, 1), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn sixteen_bit_png_is_rescaled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.png");
        let buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
            ImageBuffer::from_raw(1, 1, vec![0, 65535, 32768]).unwrap();
        buf.save(&path).unwrap();
        let img = load_image(&path).unwrap();
        let p = img.pixel(0, 0);
        assert_eq!(p[0], 0.0);
        assert_eq!(p[1], 1.0);
        assert!((p[2] - 32768.0 / 65535.0).abs() < 1e-12);
    }

    #[test]
    fn missing_file_is_reported() {
        let err = load_image(Path::new("/definitely/not/here.png")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }

    #[test]
    fn corrupt_file_is_a_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        std::fs::write(&path, b"\x89PNG\r\n\x1a\nnot really").unwrap();
        assert!(matches!(load_image(&path).unwrap_err(), Error::Decode { .. }));
    }

    #[test]
    fn save_load_round_trip_within_one_level() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let img = ImageRGB::from_fn(16, 16, |_, _| [rng.random(), rng.random(), rng.random()]);
        let dir = tempfile::tempdir().unwrap();
        for name in ["rt.png", "rt.bmp"] {
            let path = dir.path().join(name);
            save_image(&img, &path).unwrap();
            let back = load_image(&path).unwrap();
            let worst = img
                .data()
                .iter()
                .zip(back.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 1.0 / 255.0, "{name}: {worst}");
        }
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let img = labeled(3, 5);
        let back = img.rotate90_ccw().rotate90_ccw().rotate90_ccw().rotate90_ccw();
        assert_eq!(img, back);
    }

    #[test]
    fn quarter_turn_transposes_shape() {
        let img = labeled(2, 1);
        let r = img.rotate90_ccw();
        assert_eq!((r.height(), r.width()), (1, 2));
    }

    #[test]
    fn quarter_turn_matches_index_permutation() {
        // independent oracle: enumerate the 12 positions of a 3x4 grid
        let (h, w) = (3, 4);
        let img = labeled(h, w);
        let r = img.rotate90_ccw();
        let mut seen = 0;
        for row in 0..h {
            for col in 0..w {
                let (nr, nc) = (w - 1 - col, row);
                assert_eq!(img.pixel(row, col), r.pixel(nr, nc));
                seen += 1;
            }
        }
        assert_eq!(seen, 12);
    }

    #[test]
    fn augment_produces_three_rotations() {
        let img = labeled(4, 6);
        let [a, b, c] = augment_rotations(&img);
        assert_eq!((a.height(), a.width()), (6, 4));
        assert_eq!((b.height(), b.width()), (4, 6));
        assert_eq!((c.height(), c.width()), (6, 4));
        assert_eq!(b, img.rotate(180).unwrap());
        assert!(img.rotate(45).is_err());
    }

    #[test]
    fn chw_round_trip() {
        let img = labeled(3, 4);
        let chw = img.to_chw();
        assert_eq!(ImageRGB::from_chw(3, 4, &chw).unwrap(), img);
        let mut crop = vec![0.0; 3 * 4];
        img.crop_chw(1, 2, 2, &mut crop);
        assert_eq!(crop[0], img.pixel(1, 2)[0]);
        assert_eq!(crop[4 + 3], img.pixel(2, 3)[1]);
    }

    #[test]
    fn rejects_out_of_range_values() {
        assert!(ImageRGB::new(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(ImageRGB::new(0, 1, vec![]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rotation_preserves_pixel_multiset(h in 1usize..7, w in 1usize..7, seed in any::<u64>()) {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let img = ImageRGB::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()]);
                let mut before = img.data().to_vec();
                before.sort_by(f64::total_cmp);
                for rotated in augment_rotations(&img) {
                    let mut after = rotated.data().to_vec();
                    after.sort_by(f64::total_cmp);
                    prop_assert_eq!(&before, &after);
                }
            }
        }
    }
}
