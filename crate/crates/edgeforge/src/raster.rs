//! Binary edge images: the raw input of the pipeline.
//!
//! Accepted formats are binary PBM (`P4`, set bits are edge pixels), 8-bit
//! PGM (`P5`, values >= 128 are edge pixels) and 8-bit grayscale PNG (same
//! threshold). Upstream edge detection is out of scope; whatever detector is
//! used just has to emit one of these.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("i/o error reading edge image: {0}")]
    Io(#[from] io::Error),
    #[error("malformed edge image: {0}")]
    Malformed(String),
    #[error("unsupported edge image format (expected P4/P5 PNM or PNG)")]
    UnsupportedFormat,
}

/// Row-major binary occupancy of edge pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeImage {
    width: u32,
    height: u32,
    mask: Vec<bool>,
}

impl EdgeImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            mask: vec![false; (width * height) as usize],
        }
    }

    pub fn from_mask(width: u32, height: u32, mask: Vec<bool>) -> Result<Self, RasterError> {
        if mask.len() != (width as usize) * (height as usize) {
            return Err(RasterError::Malformed(format!(
                "mask has {} entries for a {width}x{height} image",
                mask.len()
            )));
        }
        Ok(Self {
            width,
            height,
            mask,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.mask[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        if x < self.width && y < self.height {
            self.mask[(y * self.width + x) as usize] = on;
        }
    }

    pub fn edge_pixel_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Iterates edge pixels in scanline order.
    pub fn edge_pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &on)| on)
            .map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }

    pub fn load(path: &Path) -> Result<Self, RasterError> {
        let data = fs::read(path)?;
        Self::from_bytes(&data)
    }

    /// Decodes from raw bytes, sniffing the format from the magic number.
    pub fn from_bytes(data: &[u8]) -> Result<Self, RasterError> {
        match data {
            [b'P', b'4', ..] | [b'P', b'5', ..] => Self::from_pnm(data),
            [0x89, b'P', b'N', b'G', ..] => Self::from_png(data),
            _ => Err(RasterError::UnsupportedFormat),
        }
    }

    fn from_png(data: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory_with_format(data, image::ImageFormat::Png)
            .map_err(|e| RasterError::Malformed(e.to_string()))?
            .into_luma8();
        let (w, h) = (img.width(), img.height());
        let mask = img.pixels().map(|p| p.0[0] >= 128).collect();
        Self::from_mask(w, h, mask)
    }

    fn from_pnm(data: &[u8]) -> Result<Self, RasterError> {
        let bitmap = data[1] == b'4';
        let mut pos = 2;
        let mut fields = Vec::new();
        let wanted = if bitmap { 2 } else { 3 };
        while fields.len() < wanted {
            // skip whitespace and '#' comments
            while pos < data.len() && (data[pos].is_ascii_whitespace() || data[pos] == b'#') {
                if data[pos] == b'#' {
                    while pos < data.len() && data[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < data.len() && data[pos].is_ascii_digit() {
                pos += 1;
            }
            if start == pos {
                return Err(RasterError::Malformed("truncated PNM header".into()));
            }
            let text = std::str::from_utf8(&data[start..pos]).expect("digits are ascii");
            fields.push(
                text.parse::<u32>()
                    .map_err(|_| RasterError::Malformed("bad PNM header field".into()))?,
            );
        }
        // exactly one whitespace byte separates header and raster
        if pos >= data.len() || !data[pos].is_ascii_whitespace() {
            return Err(RasterError::Malformed("missing PNM raster".into()));
        }
        pos += 1;

        let (width, height) = (fields[0], fields[1]);
        if width == 0 || height == 0 {
            return Err(RasterError::Malformed("empty PNM image".into()));
        }
        let body = &data[pos..];
        let mut mask = Vec::with_capacity((width * height) as usize);
        if bitmap {
            let row_bytes = width.div_ceil(8) as usize;
            if body.len() < row_bytes * height as usize {
                return Err(RasterError::Malformed("truncated P4 raster".into()));
            }
            for y in 0..height as usize {
                let row = &body[y * row_bytes..(y + 1) * row_bytes];
                for x in 0..width as usize {
                    // PBM: most significant bit first, 1 = set pixel
                    mask.push(row[x / 8] & (0x80 >> (x % 8)) != 0);
                }
            }
        } else {
            let maxval = fields[2];
            if maxval == 0 || maxval > 255 {
                return Err(RasterError::Malformed(format!(
                    "unsupported P5 maxval {maxval}"
                )));
            }
            if body.len() < (width * height) as usize {
                return Err(RasterError::Malformed("truncated P5 raster".into()));
            }
            mask.extend(body[..(width * height) as usize].iter().map(|&b| b >= 128));
        }
        Self::from_mask(width, height, mask)
    }

    /// Encodes as binary PGM (`P5`), edge pixels as 255.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.mask.iter().map(|&on| if on { 255u8 } else { 0 }));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let mut img = EdgeImage::new(5, 3);
        img.set(0, 0, true);
        img.set(4, 2, true);
        img.set(2, 1, true);
        let back = EdgeImage::from_bytes(&img.to_pgm_bytes()).unwrap();
        assert_eq!(img, back);
        assert_eq!(back.edge_pixel_count(), 3);
    }

    #[test]
    fn p4_bitmap_decodes_msb_first() {
        // 9x2 bitmap: row stride is 2 bytes. First row sets pixels 0 and 8,
        // second row sets pixel 1.
        let data = b"P4\n9 2\n\x80\x80\x40\x00";
        let img = EdgeImage::from_bytes(data).unwrap();
        assert!(img.get(0, 0));
        assert!(img.get(8, 0));
        assert!(img.get(1, 1));
        assert_eq!(img.edge_pixel_count(), 3);
    }

    #[test]
    fn p5_threshold_at_128() {
        let data = b"P5\n# a comment\n2 1\n255\n\x7f\x80";
        let img = EdgeImage::from_bytes(data).unwrap();
        assert!(!img.get(0, 0));
        assert!(img.get(1, 0));
    }

    #[test]
    fn png_grayscale_decodes() {
        let mut luma = image::GrayImage::new(4, 4);
        luma.put_pixel(1, 2, image::Luma([200]));
        luma.put_pixel(3, 3, image::Luma([127]));
        let mut bytes = Vec::new();
        image::ImageEncoder::write_image(
            image::codecs::png::PngEncoder::new(&mut bytes),
            luma.as_raw(),
            4,
            4,
            image::ExtendedColorType::L8,
        )
        .unwrap();
        let img = EdgeImage::from_bytes(&bytes).unwrap();
        assert!(img.get(1, 2));
        assert!(!img.get(3, 3));
        assert_eq!(img.edge_pixel_count(), 1);
    }

    #[test]
    fn rejects_unknown_format() {
        assert!(matches!(
            EdgeImage::from_bytes(b"BM....."),
            Err(RasterError::UnsupportedFormat)
        ));
    }
}
