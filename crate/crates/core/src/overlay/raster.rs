use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use sha2::{Digest, Sha256};

use super::OverlayError;

pub type Rgb = [u8; 3];

/// Row-major RGB8 pixel buffer.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    pub fn filled(width: u32, height: u32, color: Rgb) -> Result<Self, OverlayError> {
        if width == 0 || height == 0 {
            return Err(OverlayError::Degenerate(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        let pixels = color
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, OverlayError> {
        if width == 0 || height == 0 {
            return Err(OverlayError::Degenerate(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(OverlayError::Degenerate(format!(
                "pixel buffer holds {} bytes, {width}x{height} RGB needs {expected}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        let i = self.offset(x, y);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, c: Rgb) {
        let i = self.offset(x, y);
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    /// Fills the clipped half-open rectangle `[x0, x1) x [y0, y1)`.
    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb) {
        let x0 = x0.clamp(0, i64::from(self.width)) as u32;
        let x1 = x1.clamp(0, i64::from(self.width)) as u32;
        let y0 = y0.clamp(0, i64::from(self.height)) as u32;
        let y1 = y1.clamp(0, i64::from(self.height)) as u32;
        for y in y0..y1 {
            for x in x0..x1 {
                self.set(x, y, c);
            }
        }
    }

    /// Copies the half-open region `[x, x+w) x [y, y+h)`; caller guarantees bounds.
    pub(crate) fn sub_image(&self, x: u32, y: u32, w: u32, h: u32) -> RasterImage {
        let mut pixels = Vec::with_capacity(w as usize * h as usize * 3);
        for row in y..y + h {
            let start = self.offset(x, row);
            pixels.extend_from_slice(&self.pixels[start..start + w as usize * 3]);
        }
        RasterImage {
            width: w,
            height: h,
            pixels,
        }
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length checked at construction")
    }

    pub fn from_rgb_image(img: RgbImage) -> Self {
        let (width, height) = img.dimensions();
        Self {
            width,
            height,
            pixels: img.into_raw(),
        }
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, OverlayError> {
        let img = image::load_from_memory(bytes)?;
        Ok(Self::from_rgb_image(img.to_rgb8()))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, OverlayError> {
        let mut buf = Cursor::new(Vec::new());
        self.to_rgb_image().write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OverlayError> {
        let img = image::open(path.as_ref())?;
        Ok(Self::from_rgb_image(img.to_rgb8()))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), OverlayError> {
        self.to_rgb_image()
            .save_with_format(path.as_ref(), ImageFormat::Png)?;
        Ok(())
    }

    /// Hex SHA-256 over dimensions and pixel bytes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        h.update(&self.pixels);
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffer_length_enforced() {
        assert!(RasterImage::from_raw(2, 2, vec![0; 12]).is_ok());
        assert!(RasterImage::from_raw(2, 2, vec![0; 11]).is_err());
        assert!(RasterImage::filled(0, 5, [0, 0, 0]).is_err());
    }

    #[test]
    fn png_round_trip_preserves_pixels() {
        let mut img = RasterImage::filled(7, 3, [10, 20, 30]).unwrap();
        img.set(6, 2, [255, 0, 1]);
        let back = RasterImage::decode_png(&img.encode_png().unwrap()).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.digest(), img.digest());
    }

    #[test]
    fn fill_rect_clips() {
        let mut img = RasterImage::filled(4, 4, [0, 0, 0]).unwrap();
        img.fill_rect(-3, 2, 10, 9, [1, 1, 1]);
        assert_eq!(img.get(0, 2), [1, 1, 1]);
        assert_eq!(img.get(3, 3), [1, 1, 1]);
        assert_eq!(img.get(3, 1), [0, 0, 0]);
    }
}
