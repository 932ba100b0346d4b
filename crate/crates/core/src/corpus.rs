//! Image collections: directories of PGM/PNG files and a procedural
//! generator for self-contained experiments.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusImage {
    pub id: String,
    pub image: GrayImage,
}

/// How images whose size is not a multiple of the block size are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fit {
    #[default]
    AsIs,
    CenterCrop(usize),
    ReflectPad(usize),
}

impl Fit {
    pub fn apply(self, img: GrayImage) -> Result<GrayImage> {
        match self {
            Fit::AsIs => Ok(img),
            Fit::CenterCrop(m) => img.center_crop_to_multiple(m),
            Fit::ReflectPad(m) => Ok(img.reflect_pad_to_multiple(m)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub items: Vec<CorpusImage>,
}

const EXTENSIONS: [&str; 5] = ["pgm", "png", "jpg", "jpeg", "bmp"];

impl Corpus {
    /// Loads every image file in `dir` (sorted by file name), or a single file.
    pub fn load(path: &Path, fit: Fit) -> Result<Corpus> {
        let mut files = Vec::new();
        if path.is_dir() {
            for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
                let p = entry.map_err(|e| Error::io(path, e))?.path();
                let ext = p
                    .extension()
                    .and_then(|e| e.to_str())
                    .map(str::to_ascii_lowercase);
                if ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
                    files.push(p);
                }
            }
            files.sort();
        } else {
            files.push(path.to_path_buf());
        }
        let items = files
            .into_iter()
            .map(|p| {
                let id = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                Ok(CorpusImage {
                    id,
                    image: fit.apply(GrayImage::load(&p)?)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus { items })
    }

    /// Deterministic procedural images: smooth shading, a few flat shapes with
    /// soft edges and stripes, plus mild noise.
    pub fn synthetic(count: usize, width: usize, height: usize, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items = (0..count)
            .map(|i| CorpusImage {
                id: format!("synthetic_{i:03}"),
                image: synthetic_image(width, height, &mut rng),
            })
            .collect();
        Corpus { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn images(&self) -> Vec<GrayImage> {
        self.items.iter().map(|c| c.image.clone()).collect()
    }
}

enum Shape {
    Disc { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Stripes { angle: f64, period: f64 },
}

fn synthetic_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> GrayImage {
    let (wf, hf) = (w as f64, h as f64);
    let base = rng.gen_range(0.2..0.8);
    let (gx, gy) = (rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4));
    let wave_f = rng.gen_range(1.0..3.0) * std::f64::consts::TAU / wf.max(hf);
    let wave_a = rng.gen_range(0.0..0.1);
    let n_shapes = rng.gen_range(3..7);
    let shapes: Vec<(Shape, f64, f64)> = (0..n_shapes)
        .map(|_| {
            let shape = match rng.gen_range(0..3) {
                0 => Shape::Disc {
                    cx: rng.gen_range(0.0..wf),
                    cy: rng.gen_range(0.0..hf),
                    r: rng.gen_range(0.08..0.3) * wf.min(hf),
                },
                1 => {
                    let (x0, y0) = (rng.gen_range(0.0..wf), rng.gen_range(0.0..hf));
                    Shape::Rect {
                        x0,
                        y0,
                        x1: x0 + rng.gen_range(0.1..0.5) * wf,
                        y1: y0 + rng.gen_range(0.1..0.5) * hf,
                    }
                }
                _ => Shape::Stripes {
                    angle: rng.gen_range(0.0..std::f64::consts::PI),
                    period: rng.gen_range(6.0..24.0),
                },
            };
            (shape, rng.gen_range(0.0..1.0), rng.gen_range(0.4..0.9))
        })
        .collect();
    let noise: Vec<f64> = (0..w * h).map(|_| rng.gen_range(-0.02..0.02)).collect();
    GrayImage::from_fn(w, h, |x, y| {
        let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut v = base + gx * (xf / wf - 0.5) + gy * (yf / hf - 0.5)
            + wave_a * (wave_f * (xf + 0.7 * yf)).sin();
        for (shape, level, alpha) in &shapes {
            let cover = match shape {
                Shape::Disc { cx, cy, r } => {
                    let d = ((xf - cx).powi(2) + (yf - cy).powi(2)).sqrt();
                    (r - d + 0.5).clamp(0.0, 1.0)
                }
                Shape::Rect { x0, y0, x1, y1 } => {
                    let inside = (xf - x0).min(x1 - xf).min(yf - y0).min(y1 - yf);
                    (inside + 0.5).clamp(0.0, 1.0)
                }
                Shape::Stripes { angle, period } => {
                    let t = xf * angle.cos() + yf * angle.sin();
                    0.5 + 0.5 * (std::f64::consts::TAU * t / period).sin()
                }
            };
            v += alpha * cover * (level - v);
        }
        (v + noise[y * w + x]).clamp(0.0, 1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic_and_in_range() {
        let a = Corpus::synthetic(3, 40, 32, 9);
        let b = Corpus::synthetic(3, 40, 32, 9);
        assert_eq!(a, b);
        assert_ne!(a.items[0].image, a.items[1].image);
        for c in &a.items {
            assert_eq!((c.image.width(), c.image.height()), (40, 32));
            assert!(c.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn loads_sorted_directory() {
        let dir = tempfile::tempdir().unwrap();
        let c = Corpus::synthetic(2, 20, 18, 1);
        c.items[1].image.save(&dir.path().join("b.pgm")).unwrap();
        c.items[0].image.save(&dir.path().join("a.png")).unwrap();
        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let loaded = Corpus::load(dir.path(), Fit::CenterCrop(8)).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.items[0].id, "a");
        assert_eq!((loaded.items[1].image.width(), loaded.items[1].image.height()), (16, 16));
    }
}
