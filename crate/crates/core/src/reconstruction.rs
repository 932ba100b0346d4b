//! Laplacian-pyramid reconstruction network.
//!
//! The decoded plane is bilinearly resized to `(w/S) x (h/S)`, lifted to `q`
//! channels, pushed through `log2 S` levels (residual blocks followed by a
//! 4x4 stride-2 transposed convolution), refined by `d` residual blocks at
//! full resolution and projected back to one channel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::measurement::MeasurementPlane;
use crate::nn::{
    relu_backward, resize_bilinear, resize_bilinear_backward, Conv2d, ConvTranspose2d, Param,
    Tensor,
};
use crate::sampling::derive_measurement_count;

/// Largest power of two `j` with `2^-j > R`, or 1 when none qualifies.
pub fn compute_scale_factor(ratio: f64) -> usize {
    let mut s = 1;
    let mut j: usize = 1;
    while j <= 1 << 20 {
        if 2f64.powi(-(j as i32)) > ratio {
            s = j;
        } else {
            break;
        }
        j *= 2;
    }
    s
}

fn default_channels() -> usize {
    64
}
fn default_tail_blocks() -> usize {
    6
}
fn default_blocks_per_level() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_tail_blocks")]
    pub tail_blocks: usize,
    #[serde(default = "default_blocks_per_level")]
    pub blocks_per_level: usize,
    pub ratio: f64,
    pub block_size: usize,
    pub width: usize,
    pub height: usize,
    /// Skip the pyramid (`S = 1`) and work at full resolution throughout.
    #[serde(default)]
    pub single_scale: bool,
}

impl NetworkConfig {
    pub fn new(ratio: f64, block_size: usize, width: usize, height: usize) -> Self {
        NetworkConfig {
            channels: default_channels(),
            tail_blocks: default_tail_blocks(),
            blocks_per_level: default_blocks_per_level(),
            ratio,
            block_size,
            width,
            height,
            single_scale: false,
        }
    }

    pub fn scale_factor(&self) -> usize {
        if self.single_scale {
            1
        } else {
            compute_scale_factor(self.ratio)
        }
    }

    pub fn levels(&self) -> usize {
        self.scale_factor().trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.blocks_per_level == 0 {
            return Err(Error::InvalidConfig(
                "channels and blocks per level must be positive".into(),
            ));
        }
        derive_measurement_count(self.ratio, self.block_size)?;
        self.check_image_size(self.width, self.height)
    }

    fn check_image_size(&self, width: usize, height: usize) -> Result<()> {
        let s = self.scale_factor();
        if width == 0 || height == 0 || width % s != 0 || height % s != 0 {
            return Err(Error::BadDimensions {
                width,
                height,
                multiple: s,
            });
        }
        if width % self.block_size != 0 || height % self.block_size != 0 {
            return Err(Error::BadDimensions {
                width,
                height,
                multiple: self.block_size,
            });
        }
        Ok(())
    }
}

/// `conv3x3 -> relu -> conv3x3`, plus the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResidualBlock {
    fn new(name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        ResidualBlock {
            conv1: Conv2d::new(&format!("{name}.conv1"), channels, channels, 3, 1, rng),
            conv2: Conv2d::new(&format!("{name}.conv2"), channels, channels, 3, 1, rng),
        }
    }

    /// Returns the output and the pre-activation of the first convolution.
    fn forward(&self, x: &Tensor) -> (Tensor, Tensor) {
        let pre = self.conv1.forward(x);
        let mut out = self.conv2.forward(&pre.relu());
        out.add_assign(x);
        (out, pre)
    }

    fn backward(&mut self, x: &Tensor, pre: &Tensor, grad: &Tensor) -> Tensor {
        let g_mid = self.conv2.backward(&pre.relu(), grad);
        let g_pre = relu_backward(pre, &g_mid);
        let mut gx = self.conv1.backward(x, &g_pre);
        gx.add_assign(grad);
        gx
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Conv(Conv2d),
    Relu,
    Residual(ResidualBlock),
    Upsample(ConvTranspose2d),
}

/// Activations kept by [`PyramidNetwork::forward_trace`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Tensor>,
    aux: Vec<Option<Tensor>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidNetwork {
    config: NetworkConfig,
    layers: Vec<Layer>,
}

/// He-initialized network, biases zero, deterministic per seed.
pub fn build_network(cfg: &NetworkConfig, seed: u64) -> Result<PyramidNetwork> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = cfg.channels;
    let mut layers = vec![Layer::Conv(Conv2d::new("head", 1, q, 3, 1, &mut rng)), Layer::Relu];
    for level in 0..cfg.levels() {
        for b in 0..cfg.blocks_per_level {
            layers.push(Layer::Residual(ResidualBlock::new(
                &format!("levels.{level}.blocks.{b}"),
                q,
                &mut rng,
            )));
        }
        layers.push(Layer::Upsample(ConvTranspose2d::new(
            &format!("levels.{level}.up"),
            q,
            q,
            4,
            2,
            1,
            &mut rng,
        )));
        layers.push(Layer::Relu);
    }
    for b in 0..cfg.tail_blocks {
        layers.push(Layer::Residual(ResidualBlock::new(&format!("tail.{b}"), q, &mut rng)));
    }
    layers.push(Layer::Conv(Conv2d::new("final", q, 1, 3, 1, &mut rng)));
    Ok(PyramidNetwork {
        config: *cfg,
        layers,
    })
}

impl PyramidNetwork {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn levels(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, Layer::Upsample(_)))
            .count()
    }

    pub fn residual_blocks(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, Layer::Residual(_)))
            .count()
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend(c.params()),
                Layer::Upsample(d) => out.extend(d.params()),
                Layer::Residual(r) => {
                    out.extend(r.conv1.params());
                    out.extend(r.conv2.params());
                }
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend(c.params_mut()),
                Layer::Upsample(d) => out.extend(d.params_mut()),
                Layer::Residual(r) => {
                    out.extend(r.conv1.params_mut());
                    out.extend(r.conv2.params_mut());
                }
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Runs the network on an initial reconstruction `F0` (one channel).
    pub fn forward(&self, f0: &Tensor) -> Tensor {
        let mut x = f0.clone();
        for layer in &self.layers {
            x = match layer {
                Layer::Conv(c) => c.forward(&x),
                Layer::Relu => x.relu(),
                Layer::Residual(r) => r.forward(&x).0,
                Layer::Upsample(d) => d.forward(&x),
            };
        }
        x
    }

    pub fn forward_trace(&self, f0: &Tensor) -> (Tensor, Trace) {
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            aux: Vec::with_capacity(self.layers.len()),
        };
        let mut x = f0.clone();
        for layer in &self.layers {
            let (next, aux) = match layer {
                Layer::Conv(c) => (c.forward(&x), None),
                Layer::Relu => (x.relu(), None),
                Layer::Residual(r) => {
                    let (out, pre) = r.forward(&x);
                    (out, Some(pre))
                }
                Layer::Upsample(d) => (d.forward(&x), None),
            };
            trace.inputs.push(std::mem::replace(&mut x, next));
            trace.aux.push(aux);
        }
        (x, trace)
    }

    /// Accumulates parameter gradients and returns `dL/dF0`.
    pub fn backward(&mut self, trace: &Trace, grad_out: &Tensor) -> Tensor {
        let mut g = grad_out.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let x = &trace.inputs[i];
            g = match layer {
                Layer::Conv(c) => c.backward(x, &g),
                Layer::Relu => relu_backward(x, &g),
                Layer::Residual(r) => {
                    r.backward(x, trace.aux[i].as_ref().expect("residual trace"), &g)
                }
                Layer::Upsample(d) => d.backward(x, &g),
            };
        }
        g
    }

    /// Image size implied by a plane, checked against this network.
    pub fn output_size(&self, plane: &MeasurementPlane) -> Result<(usize, usize)> {
        let g = plane.geometry();
        let n_b = derive_measurement_count(self.config.ratio, self.config.block_size)?;
        if g.n_b != n_b {
            return Err(Error::GeometryMismatch(format!(
                "plane carries {} measurements per block, network expects {n_b}",
                g.n_b
            )));
        }
        let (w, h) = (g.grid_cols * self.config.block_size, g.grid_rows * self.config.block_size);
        self.config
            .check_image_size(w, h)
            .map_err(|e| Error::GeometryMismatch(e.to_string()))?;
        Ok((w, h))
    }

    /// `x = F_c(y)` without clipping, as used by the training loss.
    pub fn reconstruct_unclipped(&self, plane: &MeasurementPlane) -> Result<GrayImage> {
        let (w, h) = self.output_size(plane)?;
        let f0 = initial_reconstruction(plane, self.config.scale_factor(), w, h)?;
        let out = self.forward(&image_to_tensor(&f0));
        GrayImage::new(w, h, out.data)
    }
}

/// Clipped reconstruction for evaluation and file output.
pub fn reconstruct(plane: &MeasurementPlane, net: &PyramidNetwork) -> Result<GrayImage> {
    Ok(net.reconstruct_unclipped(plane)?.clipped())
}

/// Bilinear resize of the decoded plane to `(w/S) x (h/S)`, clipped to `[0, 1]`.
pub fn initial_reconstruction(
    plane: &MeasurementPlane,
    scale: usize,
    width: usize,
    height: usize,
) -> Result<GrayImage> {
    if scale == 0 || width % scale != 0 || height % scale != 0 || width == 0 || height == 0 {
        return Err(Error::GeometryMismatch(format!(
            "{width}x{height} image is not divisible by scale {scale}"
        )));
    }
    let (dw, dh) = (width / scale, height / scale);
    let out = resize_bilinear(plane.values(), plane.height(), plane.width(), dh, dw);
    GrayImage::new(dw, dh, out.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Gradient of [`initial_reconstruction`] with respect to the plane values.
/// The clamp passes gradients through wherever the resized value is in range.
pub fn initial_reconstruction_backward(
    plane: &MeasurementPlane,
    f0_grad: &[f64],
    scale: usize,
    width: usize,
    height: usize,
) -> Vec<f64> {
    let (dw, dh) = (width / scale, height / scale);
    let resized = resize_bilinear(plane.values(), plane.height(), plane.width(), dh, dw);
    let masked: Vec<f64> = resized
        .iter()
        .zip(f0_grad)
        .map(|(&v, &g)| if (0.0..=1.0).contains(&v) { g } else { 0.0 })
        .collect();
    resize_bilinear_backward(&masked, plane.height(), plane.width(), dh, dw)
}

pub fn image_to_tensor(img: &GrayImage) -> Tensor {
    Tensor::from_vec(1, img.height(), img.width(), img.data().to_vec())
}
