//! `cscodec` command-line front end.

mod exit;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use cscodec::checkpoint;
use cscodec::corpus::{Corpus, Fit};
use cscodec::eval::{
    ablate, averages, bilinear_baseline, evaluate_image, format_ablation_table, rd_curve,
    write_csv, write_rd_plots, AblationConfig, CodingChoice, ReconstructionChoice,
    SamplingChoice, DEFAULT_TARGETS,
};
use cscodec::measurement::{
    decode_container, encode_plane, BitstreamContainer, CodecBackend, CodecId, CodecRegistry,
};
use cscodec::metrics::{psnr, ssim};
use cscodec::reconstruction::reconstruct;
use cscodec::sampling::{SamplingConfig, SamplingOperator};
use cscodec::training::{CsModel, TrainConfig, Trainer};
use cscodec::GrayImage;

#[derive(Parser, Debug)]
#[command(name = "cscodec", version, about = "Compressed-sensing image codec")]
#[command(after_help = exit::EXIT_HELP)]
struct Cli {
    /// TOML training/model configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Measurement codec.
    #[arg(long, global = true, value_enum)]
    codec: Option<CodecArg>,
    /// Sampling ratio R in (0, 1].
    #[arg(long, global = true)]
    ratio: Option<f64>,
    #[arg(long = "block-size", global = true)]
    block_size: Option<usize>,
    #[arg(long, global = true)]
    window: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum CodecArg {
    Quant8,
    J2k,
    Bpg,
    Dpcm,
}

impl From<CodecArg> for CodecId {
    fn from(c: CodecArg) -> Self {
        match c {
            CodecArg::Quant8 => CodecId::Quant8Raw,
            CodecArg::J2k => CodecId::ExternalJ2k,
            CodecArg::Bpg => CodecId::ExternalBpg,
            CodecArg::Dpcm => CodecId::DpcmEstimate,
        }
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, ValueEnum)]
enum FitArg {
    /// Use images as they are.
    #[default]
    None,
    /// Center-crop to a multiple of the block size.
    Crop,
    /// Reflect-pad to a multiple of the block size.
    Pad,
}

#[derive(Args, Debug)]
struct ModelArg {
    /// Trained model file (safetensors).
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Image file or directory of images.
    corpus: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    fit: FitArg,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample and code an image into a CSC1 container; prints bpp.
    Encode {
        image: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Model whose sampling operator is used. Without it a fresh operator
        /// is built from --ratio/--block-size/--window/--seed.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Codec quality (compression ratio for j2k, QP for bpg, step for dpcm).
        #[arg(long)]
        quality: Option<f64>,
    },
    /// Decode a container to an image: network reconstruction with --model,
    /// bilinear upsampling of the plane otherwise.
    Decode {
        container: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Also write the decoded measurement plane.
        #[arg(long)]
        plane: Option<PathBuf>,
    },
    /// Encode, decode and reconstruct an image; prints bpp, PSNR and SSIM.
    Reconstruct {
        image: PathBuf,
        #[command(flatten)]
        model: ModelArg,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        quality: Option<f64>,
    },
    /// Train a model from a TOML config (see --config).
    Train {
        /// Training image directories; added to the config's corpus list.
        #[arg(long)]
        corpus: Vec<PathBuf>,
        /// Train on N procedurally generated images instead of files.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(short, long)]
        output: PathBuf,
        /// Per-epoch metrics CSV.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Resumable trainer state written after every epoch.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Continue from a state file.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<u64>,
        #[arg(long)]
        iterations_per_epoch: Option<u64>,
    },
    /// Evaluate a model at one quality setting over a corpus.
    Eval {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        quality: Option<f64>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rate-distortion curve: bisect quality to each target bpp.
    RdCurve {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        model: ModelArg,
        /// Comma-separated target bpps.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_TARGETS.to_vec())]
        targets: Vec<f64>,
        /// Output stem: writes <stem>.csv, <stem>_avg.csv, <stem>_psnr.svg, <stem>_ssim.svg.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train and compare ablation variants under one toy budget.
    Ablate {
        /// Training images.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Held-out images.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Use N procedural training images (and N/5 held-out) when no directories are given.
        #[arg(long, default_value_t = 50)]
        synthetic: usize,
        #[arg(long, default_value_t = 500)]
        steps: u64,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [SamplingArg::LearnedLocal])]
        sampling: Vec<SamplingArg>,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [CodingArg::CodecBackend, CodingArg::DpcmBaseline])]
        coding: Vec<CodingArg>,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ReconArg::Pyramid])]
        reconstruction: Vec<ReconArg>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_TARGETS.to_vec())]
        targets: Vec<f64>,
        /// Table CSV.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SamplingArg {
    LearnedLocal,
    FixedRandomLocal,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum CodingArg {
    CodecBackend,
    DpcmBaseline,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ReconArg {
    Pyramid,
    SingleScale,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_target(false)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let registry = CodecRegistry::from_env();
    let codec: CodecId = cli.codec.map(Into::into).unwrap_or(CodecId::Quant8Raw);
    match &cli.command {
        Command::Encode {
            image,
            output,
            model,
            quality,
        } => {
            let op = match model {
                Some(path) => checkpoint::load(path)?.sampling,
                None => SamplingOperator::new(sampling_config(&cli)?)?,
            };
            let img = GrayImage::load(image)?;
            let backend = backend(codec, *quality)?;
            let c = encode_image(&img, &op, backend, &registry)?;
            fs::write(output, c.to_bytes()).with_context(|| format!("writing {}", output.display()))?;
            println!("bpp {:.6}", c.rate().bpp());
        }
        Command::Decode {
            container,
            output,
            model,
            plane,
        } => {
            let bytes = fs::read(container).with_context(|| format!("reading {}", container.display()))?;
            let c = BitstreamContainer::from_bytes(&bytes)?;
            let decoded = decode_container(&c, &registry)?;
            if let Some(p) = plane {
                let g = decoded.geometry();
                GrayImage::new(g.width(), g.height(), decoded.values().to_vec())?.save(p)?;
            }
            let b = c.block_size as usize;
            let (pw, ph) = (c.width as usize, c.height as usize);
            let (gw, gh) = (pw.div_ceil(b) * b, ph.div_ceil(b) * b);
            let full = match model {
                Some(path) => {
                    let m = checkpoint::load(path)?;
                    check_model_matches(&m, &c)?;
                    reconstruct(&decoded, &m.network)?
                }
                None => bilinear_baseline(&decoded, gw, gh)?,
            };
            full.crop(0, 0, pw, ph)?.save(output)?;
            println!("{}x{} bpp {:.6}", pw, ph, c.rate().bpp());
        }
        Command::Reconstruct {
            image,
            model,
            output,
            quality,
        } => {
            let m = checkpoint::load(&model.model)?;
            let img = GrayImage::load(image)?;
            let c = encode_image(&img, &m.sampling, backend(codec, *quality)?, &registry)?;
            let decoded = decode_container(&c, &registry)?;
            let recon = reconstruct(&decoded, &m.network)?.crop(0, 0, img.width(), img.height())?;
            let recon = GrayImage::from_u8(recon.width(), recon.height(), &recon.to_u8())?;
            println!(
                "bpp {:.6} psnr {:.4} ssim {:.6}",
                c.rate().bpp(),
                psnr(&img, &recon)?,
                ssim(&img, &recon)?
            );
            if let Some(o) = output {
                recon.save(o)?;
            }
        }
        Command::Train {
            corpus,
            synthetic,
            output,
            log,
            state,
            resume,
            epochs,
            iterations_per_epoch,
        } => {
            let mut trainer = match resume {
                Some(p) => Trainer::load_state(p, registry.clone())?,
                None => {
                    let mut cfg = train_config(&cli)?;
                    cfg.corpus.extend(corpus.iter().cloned());
                    if let Some(n) = iterations_per_epoch {
                        cfg.schedule.iterations_per_epoch = *n;
                    }
                    if let Some(n) = epochs {
                        cfg.schedule.epochs = *n;
                    }
                    Trainer::new(cfg, registry.clone())?
                }
            };
            let cfg = trainer.config().clone();
            let images = match synthetic {
                Some(n) => {
                    let side = cfg.schedule.crop_size + cfg.block_size;
                    Corpus::synthetic(*n, side, side, cfg.seed).images()
                }
                None => {
                    let mut all = Vec::new();
                    for dir in &cfg.corpus {
                        all.extend(Corpus::load(dir, Fit::AsIs)?.images());
                    }
                    all
                }
            };
            if images.is_empty() {
                bail!(cscodec::Error::InvalidConfig(
                    "no training images (use --corpus, a corpus list in the config, or --synthetic)".into()
                ));
            }
            info!("training on {} images", images.len());
            let total = epochs.unwrap_or(cfg.schedule.epochs);
            let mut log_writer = match log {
                Some(p) => Some(open_log(p)?),
                None => None,
            };
            while cfg.schedule.epoch_of(trainer.step()) < total {
                let summary = trainer.run_epoch(&images)?;
                info!(
                    "epoch {} step {} lr {:.2e} loss {:.6} (rec {:.6} rate {:.6})",
                    summary.epoch,
                    summary.step,
                    summary.learning_rate,
                    summary.loss,
                    summary.reconstruction_loss,
                    summary.rate_loss
                );
                if let Some(w) = log_writer.as_mut() {
                    w.serialize(summary)?;
                    w.flush()?;
                }
                if let Some(p) = state {
                    trainer.save_state(p)?;
                }
                checkpoint::save(trainer.model(), output)?;
            }
            checkpoint::save(trainer.model(), output)?;
            println!("saved {}", output.display());
        }
        Command::Eval {
            corpus,
            model,
            quality,
            csv,
        } => {
            let m = checkpoint::load(&model.model)?;
            let data = load_corpus(corpus, m.sampling.config().block_size)?;
            let b = backend(codec, *quality)?;
            let mut points = Vec::new();
            for item in &data.items {
                let p = evaluate_image(&m, item, b, &registry)?;
                println!(
                    "{} bpp {:.6} psnr {:.4} ssim {:.6}",
                    p.image_id, p.bpp, p.psnr_db, p.ssim
                );
                points.push(p);
            }
            let n = points.len().max(1) as f64;
            println!(
                "mean bpp {:.6} psnr {:.4} ssim {:.6}",
                points.iter().map(|p| p.bpp).sum::<f64>() / n,
                points.iter().map(|p| p.psnr_db).sum::<f64>() / n,
                points.iter().map(|p| p.ssim).sum::<f64>() / n
            );
            if let Some(path) = csv {
                write_csv(&points, path)?;
            }
        }
        Command::RdCurve {
            corpus,
            model,
            targets,
            output,
        } => {
            let m = checkpoint::load(&model.model)?;
            let data = load_corpus(corpus, m.sampling.config().block_size)?;
            let curve = rd_curve(&m, &data, codec, targets, &registry)?;
            for miss in &curve.missing {
                log::warn!(
                    "{}: target {} bpp unreachable (closest {:.4})",
                    miss.image_id,
                    miss.target_bpp,
                    miss.closest_bpp
                );
            }
            let avg = averages(&curve.points, targets);
            write_csv(&curve.points, &with_suffix(output, ".csv"))?;
            write_csv(&avg, &with_suffix(output, "_avg.csv"))?;
            write_rd_plots(output, &format!("R = {}", m.sampling.config().ratio), &[(codec.to_string(), avg.clone())])?;
            for a in &avg {
                println!(
                    "target {:.3} n {} bpp {:.4} psnr {:.4} ssim {:.5}",
                    a.target_bpp, a.count, a.bpp, a.psnr_db, a.ssim
                );
            }
        }
        Command::Ablate {
            train,
            test,
            synthetic,
            steps,
            sampling,
            coding,
            reconstruction,
            targets,
            output,
        } => {
            let cfg = train_config(&cli)?;
            let b = cfg.block_size;
            let side = cfg.schedule.crop_size;
            let train_images = match train {
                Some(p) => Corpus::load(p, Fit::AsIs)?.images(),
                None => Corpus::synthetic(*synthetic, side + b, side + b, cfg.seed).images(),
            };
            let test_corpus = match test {
                Some(p) => Corpus::load(p, Fit::CenterCrop(b))?,
                None => Corpus::synthetic((*synthetic / 5).max(1), side, side, cfg.seed + 1),
            };
            let mut variants = Vec::new();
            for s in sampling {
                for c in coding {
                    for r in reconstruction {
                        variants.push(AblationConfig {
                            sampling: match s {
                                SamplingArg::LearnedLocal => SamplingChoice::LearnedLocal,
                                SamplingArg::FixedRandomLocal => SamplingChoice::FixedRandomLocal,
                            },
                            coding: match c {
                                CodingArg::CodecBackend => CodingChoice::CodecBackend,
                                CodingArg::DpcmBaseline => CodingChoice::DpcmBaseline,
                            },
                            reconstruction: match r {
                                ReconArg::Pyramid => ReconstructionChoice::Pyramid,
                                ReconArg::SingleScale => ReconstructionChoice::SingleScale,
                            },
                        });
                    }
                }
            }
            let eval_codec = if codec == CodecId::Quant8Raw && cli.codec.is_none() {
                CodecId::ExternalJ2k
            } else {
                codec
            };
            let rows = ablate(
                &variants,
                &cfg,
                &train_images,
                &test_corpus,
                *steps,
                eval_codec,
                targets,
                &registry,
            )?;
            print!("{}", format_ablation_table(&rows));
            if let Some(p) = output {
                write_csv(&rows, p)?;
            }
        }
    }
    Ok(())
}

fn backend(codec: CodecId, quality: Option<f64>) -> Result<CodecBackend> {
    let q = quality.unwrap_or_else(|| CodecBackend::default_quality(codec));
    Ok(CodecBackend::new(codec, q)?)
}

/// Reflect-pads to whole blocks, samples, tiles and codes.
fn encode_image(
    img: &GrayImage,
    op: &SamplingOperator,
    backend: CodecBackend,
    registry: &CodecRegistry,
) -> Result<BitstreamContainer> {
    let padded = img.reflect_pad_to_multiple(op.config().block_size);
    let plane = cscodec::measurement::tile_measurements(&op.sample(&padded)?)?;
    Ok(encode_plane(
        &plane,
        &backend,
        op.config(),
        (img.width(), img.height()),
        registry,
    )?)
}

fn check_model_matches(m: &CsModel, c: &BitstreamContainer) -> Result<()> {
    let s = m.sampling.config();
    if s.block_size != c.block_size as usize
        || s.window_size != c.window_size as usize
        || s.measurement_count()? != c.n_b as usize
    {
        bail!(cscodec::Error::GeometryMismatch(format!(
            "container (B={}, L={}, n_B={}) does not match the model (B={}, L={}, n_B={})",
            c.block_size,
            c.window_size,
            c.n_b,
            s.block_size,
            s.window_size,
            s.measurement_count()?
        )));
    }
    Ok(())
}

fn train_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<TrainConfig>(&text)
                .map_err(|e| cscodec::Error::InvalidConfig(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::new(cli.ratio.unwrap_or(0.1)),
    };
    if let Some(r) = cli.ratio {
        cfg.ratio = r;
    }
    if let Some(b) = cli.block_size {
        cfg.block_size = b;
    }
    if let Some(l) = cli.window {
        cfg.window_size = l;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(c) = cli.codec {
        cfg.in_loop.codec = Some(c.into());
        cfg.in_loop.quality = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sampling_config(cli: &Cli) -> Result<SamplingConfig> {
    let base = match &cli.config {
        Some(_) => train_config(cli)?.sampling_config()?,
        None => SamplingConfig::with_ratio(cli.ratio.unwrap_or(0.1))?,
    };
    Ok(SamplingConfig::new(
        cli.ratio.unwrap_or(base.ratio),
        cli.block_size.unwrap_or(base.block_size),
        cli.window.unwrap_or(base.window_size),
        cli.seed.unwrap_or(base.seed),
    )?)
}

fn load_corpus(args: &CorpusArgs, block_size: usize) -> Result<Corpus> {
    let fit = match args.fit {
        FitArg::None => Fit::AsIs,
        FitArg::Crop => Fit::CenterCrop(block_size),
        FitArg::Pad => Fit::ReflectPad(block_size),
    };
    Ok(Corpus::load(&args.corpus, fit)?)
}

fn open_log(path: &Path) -> Result<csv::Writer<fs::File>> {
    let exists = path.exists() && fs::metadata(path)?.len() > 0;
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    Ok(csv::WriterBuilder::new().has_headers(!exists).from_writer(file))
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
