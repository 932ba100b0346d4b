//! Minimal CPU building blocks for the reconstruction network: feature maps,
//! parameters with gradient buffers, convolutions lowered to GEMM, and
//! bilinear resampling. Every layer exposes an explicit backward pass.

mod bilinear;
mod conv;
mod gemm;

pub use bilinear::{resize_bilinear, resize_bilinear_backward};
pub use conv::{Conv2d, ConvTranspose2d};

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// One feature map, channel-major (`c x h x w`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * height * width, "tensor size");
        Tensor {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn relu(&self) -> Tensor {
        Tensor {
            data: self.data.iter().map(|&v| v.max(0.0)).collect(),
            ..*self
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `grad * 1[pre > 0]`.
pub fn relu_backward(pre: &Tensor, grad: &Tensor) -> Tensor {
    Tensor {
        data: pre
            .data
            .iter()
            .zip(&grad.data)
            .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
            .collect(),
        channels: pre.channels,
        height: pre.height,
        width: pre.width,
    }
}

/// A named trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    /// Whether weight decay applies.
    pub decay: bool,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>, decay: bool) -> Self {
        let n = shape.iter().product();
        Param {
            name: name.into(),
            shape,
            value: vec![0.0; n],
            grad: vec![0.0; n],
            decay,
        }
    }

    /// Zero-mean Gaussian with standard deviation `sqrt(2 / fan_in)`.
    pub fn he_normal(
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut p = Param::zeros(name, shape, true);
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        for v in &mut p.value {
            *v = normal.sample(rng);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}
