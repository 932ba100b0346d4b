//! Grayscale image buffer and file I/O.
//!
//! Pixels are stored row-major as `f64` in `[0, 1]`. Conversion to 8-bit
//! only happens when writing files or handing planes to a codec.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for a {}x{} image",
                data.len(),
                width,
                height
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn clipped(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<GrayImage> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::ShapeMismatch(format!(
                "crop {}x{}+{}+{} outside {}x{}",
                width, height, x0, y0, self.width, self.height
            )));
        }
        Ok(GrayImage::from_fn(width, height, |x, y| {
            self.get(x0 + x, y0 + y)
        }))
    }

    /// Reflect-pads the right and bottom edges up to the next multiple.
    pub fn reflect_pad_to_multiple(&self, multiple: usize) -> GrayImage {
        let w = self.width.div_ceil(multiple) * multiple;
        let h = self.height.div_ceil(multiple) * multiple;
        let reflect = |i: usize, n: usize| -> usize {
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let m = i % period;
            if m < n {
                m
            } else {
                period - m
            }
        };
        GrayImage::from_fn(w, h, |x, y| {
            self.get(reflect(x, self.width), reflect(y, self.height))
        })
    }

    /// Center crop to the largest size that is a multiple of `multiple` on both axes.
    pub fn center_crop_to_multiple(&self, multiple: usize) -> Result<GrayImage> {
        let w = self.width / multiple * multiple;
        let h = self.height / multiple * multiple;
        if w == 0 || h == 0 {
            return Err(Error::BadDimensions {
                width: self.width,
                height: self.height,
                multiple,
            });
        }
        self.crop((self.width - w) / 2, (self.height - h) / 2, w, h)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        GrayImage::new(
            width,
            height,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    pub fn load(path: &Path) -> Result<GrayImage> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(b"P5") {
            let (w, h, px) = parse_pgm(&bytes)?;
            return GrayImage::from_u8(w, h, &px);
        }
        let img = image::load_from_memory(&bytes)
            .map_err(|e| Error::ImageFormat(format!("{}: {e}", path.display())))?;
        let rgb = img.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let data = rgb
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0;
                (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)) / 255.0
            })
            .collect();
        GrayImage::new(w, h, data)
    }

    /// Writes an 8-bit PGM or PNG depending on the extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        let bytes = self.to_u8();
        match ext.as_deref() {
            Some("png") => {
                let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
                    .ok_or_else(|| Error::ImageFormat("buffer size".into()))?;
                buf.save(path)
                    .map_err(|e| Error::ImageFormat(format!("{}: {e}", path.display())))
            }
            _ => fs::write(path, encode_pgm(self.width, self.height, &bytes))
                .map_err(|e| Error::io(path, e)),
        }
    }
}

#[inline]
pub fn to_u8(v: f64) -> u8 {
    // f64::round rounds half away from zero
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary 8-bit PGM (P5), returning `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::ImageFormat(format!("pgm: {m}"));
    if !bytes.starts_with(b"P5") {
        return Err(bad("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while let Some(&c) = bytes.get(pos) {
                        pos += 1;
                        if c == b'\n' {
                            break;
                        }
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header number"))?;
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit maxval supported"));
    }
    // single whitespace byte before raster
    pos += 1;
    let n = w * h;
    if bytes.len() < pos + n {
        return Err(bad("truncated raster"));
    }
    let mut px = bytes[pos..pos + n].to_vec();
    if maxval != 255 {
        for p in &mut px {
            *p = ((u32::from(*p) * 255 + maxval as u32 / 2) / maxval as u32) as u8;
        }
    }
    Ok((w, h, px))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let px: Vec<u8> = (0..12).map(|i| i * 20).collect();
        let enc = encode_pgm(4, 3, &px);
        let (w, h, dec) = parse_pgm(&enc).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(dec, px);
    }

    #[test]
    fn pgm_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 9]);
        assert_eq!(parse_pgm(&bytes).unwrap(), (2, 1, vec![7, 9]));
    }

    #[test]
    fn truncated_pgm_rejected() {
        let bytes = b"P5\n4 4\n255\n\x01\x02".to_vec();
        assert!(parse_pgm(&bytes).is_err());
    }

    #[test]
    fn reflect_pad_mirrors_edges() {
        let img = GrayImage::from_fn(3, 2, |x, y| (x + 10 * y) as f64);
        let p = img.reflect_pad_to_multiple(4);
        assert_eq!((p.width(), p.height()), (4, 4));
        assert_eq!(p.get(3, 0), img.get(1, 0));
        assert_eq!(p.get(0, 2), img.get(0, 0));
        assert_eq!(p.crop(0, 0, 3, 2).unwrap(), img);
    }

    #[test]
    fn u8_conversion_rounds_half_up() {
        assert_eq!(to_u8(0.5), 128);
        assert_eq!(to_u8(-0.2), 0);
        assert_eq!(to_u8(1.7), 255);
    }
}
