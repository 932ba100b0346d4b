//! Rate-distortion harness: quality bisection to a target bpp, per-image RD
//! points, averages, CSV/SVG output and ablation tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusImage};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::measurement::{
    dpcm_rate_estimate, roundtrip_plane, untile_measurements, CodecBackend, CodecId,
    CodecRegistry, MeasurementPlane, RatePoint,
};
use crate::metrics::{psnr, ssim};
use crate::nn::resize_bilinear;
use crate::reconstruction::reconstruct;
use crate::training::{CsModel, TrainConfig, Trainer};

pub const DEFAULT_TARGETS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
/// Relative tolerance on the achieved bpp.
pub const RATE_TOLERANCE: f64 = 0.02;
pub const MAX_PROBES: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RDPoint {
    pub image_id: String,
    pub ratio: f64,
    pub codec: CodecId,
    pub quality: f64,
    pub target_bpp: Option<f64>,
    pub bpp: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// A coded plane at one quality setting.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub quality: f64,
    pub plane: MeasurementPlane,
    pub rate: RatePoint,
}

fn code(
    model: &CsModel,
    y_hat: &MeasurementPlane,
    size: (usize, usize),
    backend: CodecBackend,
    registry: &CodecRegistry,
) -> Result<Probe> {
    let (plane, rate) = roundtrip_plane(y_hat, &backend, model.sampling.config(), size, registry)?;
    Ok(Probe {
        quality: backend.quality,
        plane,
        rate,
    })
}

/// Measures and codes `image` at a fixed quality.
pub fn code_image(
    model: &CsModel,
    image: &GrayImage,
    backend: CodecBackend,
    registry: &CodecRegistry,
) -> Result<Probe> {
    let y_hat = model.measure(image)?;
    code(model, &y_hat, (image.width(), image.height()), backend, registry)
}

fn within(bpp: f64, target: f64) -> bool {
    (bpp - target).abs() <= RATE_TOLERANCE * target
}

/// Searches the codec's quality range for a setting whose bpp is within 2%
/// of `target_bpp`, using at most [`MAX_PROBES`] encodes. Larger quality
/// values give smaller payloads for every parametrized codec.
pub fn bisect_quality(
    model: &CsModel,
    image: &GrayImage,
    codec: CodecId,
    target_bpp: f64,
    registry: &CodecRegistry,
) -> Result<Probe> {
    let y_hat = model.measure(image)?;
    let size = (image.width(), image.height());
    let probe = |q: f64| code(model, &y_hat, size, CodecBackend::new(codec, q)?, registry);
    let unreachable = |closest: &Probe| Error::UnreachableRate {
        target_bpp,
        closest_bpp: closest.rate.bpp(),
    };
    let (q_hi_rate, q_lo_rate) = CodecBackend::quality_bounds(codec);
    let first = probe(q_hi_rate)?;
    if within(first.rate.bpp(), target_bpp) {
        return Ok(first);
    }
    if codec == CodecId::Quant8Raw || target_bpp > first.rate.bpp() {
        return Err(unreachable(&first));
    }
    let last = probe(q_lo_rate)?;
    if within(last.rate.bpp(), target_bpp) {
        return Ok(last);
    }
    if target_bpp < last.rate.bpp() {
        return Err(unreachable(&last));
    }
    let integer = codec == CodecId::ExternalBpg;
    let (mut lo, mut hi) = (q_hi_rate, q_lo_rate);
    let mut best = if (first.rate.bpp() - target_bpp).abs() < (last.rate.bpp() - target_bpp).abs() {
        first
    } else {
        last
    };
    for _ in 2..MAX_PROBES {
        let mid = if integer {
            ((lo + hi) / 2.0).round()
        } else {
            (lo * hi).sqrt()
        };
        if mid == lo || mid == hi {
            break;
        }
        let p = probe(mid)?;
        let bpp = p.rate.bpp();
        if within(bpp, target_bpp) {
            return Ok(p);
        }
        if bpp > target_bpp {
            lo = mid;
        } else {
            hi = mid;
        }
        if (bpp - target_bpp).abs() < (best.rate.bpp() - target_bpp).abs() {
            best = p;
        }
    }
    Err(unreachable(&best))
}

/// Rounds to 8 bits as written to disk.
fn as_8bit(img: &GrayImage) -> GrayImage {
    GrayImage::from_u8(img.width(), img.height(), &img.to_u8()).expect("same size")
}

/// PSNR and SSIM of the network reconstruction from a decoded plane.
pub fn score(model: &CsModel, original: &GrayImage, plane: &MeasurementPlane) -> Result<(f64, f64)> {
    let recon = as_8bit(&reconstruct(plane, &model.network)?);
    Ok((psnr(original, &recon)?, ssim(original, &recon)?))
}

/// Bilinear upsampling of the plane itself to the image size, clipped.
pub fn bilinear_baseline(plane: &MeasurementPlane, width: usize, height: usize) -> Result<GrayImage> {
    let out = resize_bilinear(plane.values(), plane.height(), plane.width(), height, width);
    Ok(GrayImage::new(width, height, out)?.clipped())
}

fn point(
    model: &CsModel,
    item: &CorpusImage,
    codec: CodecId,
    target_bpp: Option<f64>,
    probe: &Probe,
) -> Result<RDPoint> {
    let (psnr_db, ssim) = score(model, &item.image, &probe.plane)?;
    Ok(RDPoint {
        image_id: item.id.clone(),
        ratio: model.sampling.config().ratio,
        codec,
        quality: probe.quality,
        target_bpp,
        bpp: probe.rate.bpp(),
        psnr_db,
        ssim,
    })
}

/// One RD point at a fixed quality.
pub fn evaluate_image(
    model: &CsModel,
    item: &CorpusImage,
    backend: CodecBackend,
    registry: &CodecRegistry,
) -> Result<RDPoint> {
    let probe = code_image(model, &item.image, backend, registry)?;
    point(model, item, backend.codec, None, &probe)
}

/// A target the codec could not reach for an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingCell {
    pub image_id: String,
    pub target_bpp: f64,
    pub closest_bpp: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RdCurve {
    pub points: Vec<RDPoint>,
    pub missing: Vec<MissingCell>,
}

/// Bisects every `(image, target)` pair; results are ordered by image then
/// target regardless of scheduling.
pub fn rd_curve(
    model: &CsModel,
    corpus: &Corpus,
    codec: CodecId,
    targets: &[f64],
    registry: &CodecRegistry,
) -> Result<RdCurve> {
    let jobs: Vec<(&CorpusImage, f64)> = corpus
        .items
        .iter()
        .flat_map(|item| targets.iter().map(move |&t| (item, t)))
        .collect();
    let results: Vec<Result<std::result::Result<RDPoint, MissingCell>>> = jobs
        .par_iter()
        .map(|&(item, t)| match bisect_quality(model, &item.image, codec, t, registry) {
            Ok(p) => Ok(Ok(point(model, item, codec, Some(t), &p)?)),
            Err(Error::UnreachableRate { closest_bpp, .. }) => Ok(Err(MissingCell {
                image_id: item.id.clone(),
                target_bpp: t,
                closest_bpp,
            })),
            Err(e) => Err(e),
        })
        .collect();
    let mut curve = RdCurve::default();
    for r in results {
        match r? {
            Ok(p) => curve.points.push(p),
            Err(m) => curve.missing.push(m),
        }
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BppAverage {
    pub target_bpp: f64,
    pub count: usize,
    pub bpp: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-target means over the reached points; targets with no points are
/// left out.
pub fn averages(points: &[RDPoint], targets: &[f64]) -> Vec<BppAverage> {
    targets
        .iter()
        .filter_map(|&t| {
            let sel: Vec<&RDPoint> = points.iter().filter(|p| p.target_bpp == Some(t)).collect();
            if sel.is_empty() {
                return None;
            }
            let n = sel.len() as f64;
            Some(BppAverage {
                target_bpp: t,
                count: sel.len(),
                bpp: sel.iter().map(|p| p.bpp).sum::<f64>() / n,
                psnr_db: sel.iter().map(|p| p.psnr_db).sum::<f64>() / n,
                ssim: sel.iter().map(|p| p.ssim).sum::<f64>() / n,
            })
        })
        .collect()
}

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One line of an RD plot.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(hi > lo) {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

/// Line chart as a standalone SVG document.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 160.0, 40.0, 50.0);
    let finite: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let fold = |f: fn(&(f64, f64)) -> f64, init: f64, pick: fn(f64, f64) -> f64| {
        finite.iter().map(f).fold(init, pick)
    };
    let (x0, x1) = nice_range(fold(|p| p.0, f64::INFINITY, f64::min), fold(|p| p.0, f64::NEG_INFINITY, f64::max));
    let (y0, y1) = nice_range(fold(|p| p.1, f64::INFINITY, f64::min), fold(|p| p.1, f64::NEG_INFINITY, f64::max));
    let (x0, x1, y0, y1) = if finite.is_empty() {
        (0.0, 1.0, 0.0, 1.0)
    } else {
        (x0, x1, y0, y1)
    };
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let fx = x0 + (x1 - x0) * i as f64 / 5.0;
        let fy = y0 + (y1 - y0) * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{0:.1}" y1="{1}" x2="{0:.1}" y2="{2}" stroke="#ddd"/><text x="{0:.1}" y="{3}" text-anchor="middle">{4:.2}</text>"##,
            sx(fx),
            top,
            top + ph,
            top + ph + 16.0,
            fx
        );
        let _ = writeln!(
            s,
            r##"<line x1="{1}" y1="{0:.1}" x2="{2}" y2="{0:.1}" stroke="#ddd"/><text x="{3}" y="{0:.1}" text-anchor="end" dy="4">{4:.2}</text>"##,
            sy(fy),
            left,
            left + pw,
            left - 6.0,
            fy
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (cx, cy) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `<stem>_psnr.svg` and `<stem>_ssim.svg` next to `stem`.
pub fn write_rd_plots(stem: &Path, title: &str, series: &[(String, Vec<BppAverage>)]) -> Result<()> {
    for (suffix, label, pick) in [
        ("psnr", "PSNR (dB)", (|a: &BppAverage| a.psnr_db) as fn(&BppAverage) -> f64),
        ("ssim", "SSIM", |a: &BppAverage| a.ssim),
    ] {
        let lines: Vec<Series> = series
            .iter()
            .map(|(name, avg)| Series {
                label: name.clone(),
                points: avg.iter().map(|a| (a.bpp, pick(a))).collect(),
            })
            .collect();
        let path = stem.with_file_name(format!(
            "{}_{suffix}.svg",
            stem.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
        ));
        fs::write(&path, line_chart_svg(title, "bpp", label, &lines)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Rate of a codec and of the DPCM baseline at matched measurement distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodingComparison {
    pub codec_bpp: f64,
    pub codec_mse: f64,
    pub dpcm_bpp: f64,
    pub dpcm_mse: f64,
    pub dpcm_step: f64,
}

fn plane_mse(a: &MeasurementPlane, b: &MeasurementPlane) -> f64 {
    let n = a.values().len() as f64;
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// Codes the plane of `image` with `backend`, then searches the DPCM step
/// whose measurement-domain MSE matches. The DPCM step used is the largest
/// one found whose distortion does not exceed the codec's.
pub fn compare_with_dpcm(
    model: &CsModel,
    image: &GrayImage,
    backend: CodecBackend,
    registry: &CodecRegistry,
) -> Result<CodingComparison> {
    let y_hat = model.measure(image)?;
    let size = (image.width(), image.height());
    let coded = code(model, &y_hat, size, backend, registry)?;
    let target = plane_mse(&y_hat, &coded.plane);
    let bm = untile_measurements(&y_hat)?;
    let pixels = (size.0 * size.1) as u64;
    let dpcm = |step: f64| -> Result<(f64, f64)> {
        let out = dpcm_rate_estimate(&bm, step, pixels)?;
        let m = bm
            .values
            .iter()
            .zip(&out.decoded.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / bm.values.len() as f64;
        Ok((out.rate.bpp(), m))
    };
    let (step_min, step_max) = CodecBackend::quality_bounds(CodecId::DpcmEstimate);
    let (mut lo, mut hi) = (step_min, step_max);
    let (mut best_step, mut best) = (lo, dpcm(lo)?);
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        let r = dpcm(mid)?;
        if r.1 <= target {
            lo = mid;
            if mid > best_step {
                best_step = mid;
                best = r;
            }
        } else {
            hi = mid;
        }
    }
    Ok(CodingComparison {
        codec_bpp: coded.rate.bpp(),
        codec_mse: target,
        dpcm_bpp: best.0,
        dpcm_mse: best.1,
        dpcm_step: best_step,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingChoice {
    LearnedLocal,
    FixedRandomLocal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodingChoice {
    CodecBackend,
    DpcmBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionChoice {
    Pyramid,
    SingleScale,
}

/// One variant: exactly one choice on each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationConfig {
    pub sampling: SamplingChoice,
    pub coding: CodingChoice,
    pub reconstruction: ReconstructionChoice,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            sampling: SamplingChoice::LearnedLocal,
            coding: CodingChoice::CodecBackend,
            reconstruction: ReconstructionChoice::Pyramid,
        }
    }
}

impl AblationConfig {
    pub fn label(&self) -> String {
        let s = match self.sampling {
            SamplingChoice::LearnedLocal => "learned_local",
            SamplingChoice::FixedRandomLocal => "fixed_random_local",
        };
        let c = match self.coding {
            CodingChoice::CodecBackend => "codec_backend",
            CodingChoice::DpcmBaseline => "dpcm_baseline",
        };
        let r = match self.reconstruction {
            ReconstructionChoice::Pyramid => "pyramid",
            ReconstructionChoice::SingleScale => "single_scale",
        };
        format!("{s}+{c}+{r}")
    }

    /// Applies the training-side switches to a config.
    pub fn configure(&self, cfg: &mut TrainConfig) {
        cfg.train_sampling = self.sampling == SamplingChoice::LearnedLocal;
        cfg.network.single_scale = self.reconstruction == ReconstructionChoice::SingleScale;
    }

    /// Codec used to code measurements at evaluation time.
    pub fn eval_codec(&self, backend_codec: CodecId) -> CodecId {
        match self.coding {
            CodingChoice::CodecBackend => backend_codec,
            CodingChoice::DpcmBaseline => CodecId::DpcmEstimate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub target_bpp: f64,
    pub count: usize,
    pub bpp: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Trains each variant for `steps` steps under the same seed and data order,
/// then evaluates it on `test` at each target bpp.
#[allow(clippy::too_many_arguments)]
pub fn ablate(
    variants: &[AblationConfig],
    base: &TrainConfig,
    train: &[GrayImage],
    test: &Corpus,
    steps: u64,
    backend_codec: CodecId,
    targets: &[f64],
    registry: &CodecRegistry,
) -> Result<Vec<AblationRow>> {
    let mut trained: Vec<((bool, bool), CsModel)> = Vec::new();
    let mut rows = Vec::new();
    for v in variants {
        let mut cfg = base.clone();
        v.configure(&mut cfg);
        let key = (cfg.train_sampling, cfg.network.single_scale);
        let model = match trained.iter().find(|(k, _)| *k == key) {
            Some((_, m)) => m.clone(),
            None => {
                let mut t = Trainer::new(cfg, registry.clone())?;
                for _ in 0..steps {
                    t.step_on(train)?;
                }
                let m = t.into_model();
                trained.push((key, m.clone()));
                m
            }
        };
        let curve = rd_curve(&model, test, v.eval_codec(backend_codec), targets, registry)?;
        for a in averages(&curve.points, targets) {
            rows.push(AblationRow {
                variant: v.label(),
                target_bpp: a.target_bpp,
                count: a.count,
                bpp: a.bpp,
                psnr_db: a.psnr_db,
                ssim: a.ssim,
            });
        }
    }
    Ok(rows)
}

/// Plain-text table of ablation rows, one line per variant and target.
pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mut s = format!(
        "{:<45} {:>8} {:>8} {:>9} {:>7}\n",
        "variant", "target", "bpp", "psnr_db", "ssim"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<45} {:>8.3} {:>8.4} {:>9.3} {:>7.4}",
            r.variant, r.target_bpp, r.bpp, r.psnr_db, r.ssim
        );
    }
    s
}
