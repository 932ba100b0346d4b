//! The differentiable chain
//! `x -> sample -> tile -> codec (straight-through) -> F0 -> network -> x_hat`
//! with its loss and a hand-written backward pass.

use super::loss::{rate_loss, rate_loss_grad, LossConfig};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::measurement::{
    straight_through_roundtrip, tile_backward, tile_measurements, CodecBackend, CodecRegistry,
    MeasurementPlane,
};
use crate::nn::Tensor;
use crate::reconstruction::{
    build_network, image_to_tensor, initial_reconstruction, initial_reconstruction_backward,
    NetworkConfig, PyramidNetwork,
};
use crate::sampling::{SamplingConfig, SamplingOperator};

/// Sampling operator plus reconstruction network.
#[derive(Debug, Clone, PartialEq)]
pub struct CsModel {
    pub sampling: SamplingOperator,
    pub network: PyramidNetwork,
}

impl CsModel {
    /// Fresh model; the network seed is derived from the sampling seed.
    pub fn new(sampling: SamplingConfig, network: &NetworkConfig) -> Result<Self> {
        if network.ratio != sampling.ratio || network.block_size != sampling.block_size {
            return Err(Error::InvalidConfig(
                "sampling and network disagree on ratio or block size".into(),
            ));
        }
        Ok(CsModel {
            network: build_network(network, sampling.seed.wrapping_add(1))?,
            sampling: SamplingOperator::new(sampling)?,
        })
    }

    /// Measurement plane `y_hat` of one image.
    pub fn measure(&self, image: &GrayImage) -> Result<MeasurementPlane> {
        tile_measurements(&self.sampling.sample(image)?)
    }
}

/// What happens to the plane between sampling and reconstruction.
#[derive(Debug, Clone, Copy)]
pub enum InLoopCodec<'a> {
    Bypass,
    StraightThrough {
        backend: CodecBackend,
        registry: &'a CodecRegistry,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub reconstruction: f64,
    pub rate: f64,
}

fn decoded_plane(
    model: &CsModel,
    y_hat: &MeasurementPlane,
    codec: &InLoopCodec,
    size: (usize, usize),
) -> Result<MeasurementPlane> {
    match codec {
        InLoopCodec::Bypass => Ok(y_hat.clone()),
        InLoopCodec::StraightThrough { backend, registry } => {
            straight_through_roundtrip(y_hat, backend, model.sampling.config(), size, registry)
        }
    }
}

fn check_batch(batch: &[GrayImage]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    Ok(())
}

/// Loss of the full chain on a batch, no gradients.
pub fn evaluate_loss(
    model: &CsModel,
    batch: &[GrayImage],
    loss: &LossConfig,
    codec: &InLoopCodec,
) -> Result<LossParts> {
    check_batch(batch)?;
    let k = batch.len() as f64;
    let scale = model.network.config().scale_factor();
    let mut parts = LossParts::default();
    for x in batch {
        let (w, h) = (x.width(), x.height());
        let y_hat = model.measure(x)?;
        let y_tilde = decoded_plane(model, &y_hat, codec, (w, h))?;
        let f0 = initial_reconstruction(&y_tilde, scale, w, h)?;
        let out = model.network.forward(&image_to_tensor(&f0));
        parts.reconstruction += squared_error(&out.data, x.data()) / (2.0 * k);
        parts.rate += rate_loss(&y_hat, loss.beta) / k;
    }
    parts.total = parts.reconstruction + loss.gamma * parts.rate;
    Ok(parts)
}

fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Reconstruction loss term of one image (already divided by `2K`) and its
/// gradient with respect to the decoded plane.
fn reconstruction_term(
    network: &mut PyramidNetwork,
    x: &GrayImage,
    y_tilde: &MeasurementPlane,
    k: f64,
) -> Result<(f64, Vec<f64>)> {
    let (w, h) = (x.width(), x.height());
    let scale = network.config().scale_factor();
    let f0 = initial_reconstruction(y_tilde, scale, w, h)?;
    let (out, trace) = network.forward_trace(&image_to_tensor(&f0));
    let value = squared_error(&out.data, x.data()) / (2.0 * k);
    let grad_out: Vec<f64> = out.data.iter().zip(x.data()).map(|(p, q)| (p - q) / k).collect();
    let grad_out = Tensor::from_vec(1, out.height, out.width, grad_out);
    let grad_f0 = network.backward(&trace, &grad_out);
    Ok((value, initial_reconstruction_backward(y_tilde, &grad_f0.data, scale, w, h)))
}

/// Loss and gradients of the full chain on a batch.
///
/// Network gradients are left in the parameters (zeroed first). The returned
/// vector is the gradient with respect to the dense raw sampling weights.
/// The rate term is averaged over the batch like the reconstruction term.
pub fn loss_and_gradients(
    model: &mut CsModel,
    batch: &[GrayImage],
    loss: &LossConfig,
    codec: &InLoopCodec,
) -> Result<(LossParts, Vec<f64>)> {
    check_batch(batch)?;
    let k = batch.len() as f64;
    let l = model.sampling.config().window_size;
    let mut window_grad = vec![0.0; model.sampling.measurement_count() * l * l];
    let mut parts = LossParts::default();
    model.network.zero_grad();
    for x in batch {
        let y_hat = model.measure(x)?;
        let y_tilde = decoded_plane(model, &y_hat, codec, (x.width(), x.height()))?;
        let (lc, mut grad_plane) = reconstruction_term(&mut model.network, x, &y_tilde, k)?;
        parts.reconstruction += lc;
        parts.rate += rate_loss(&y_hat, loss.beta) / k;
        // straight-through: the codec's Jacobian is taken as the identity, so
        // dL/d(y_tilde) is used as dL/d(y_hat) unchanged
        if loss.gamma != 0.0 {
            for (g, r) in grad_plane.iter_mut().zip(rate_loss_grad(&y_hat, loss.beta)) {
                *g += loss.gamma / k * r;
            }
        }
        let grad_plane = MeasurementPlane::new(y_hat.geometry(), grad_plane)?;
        model
            .sampling
            .accumulate_window_grad(x, &tile_backward(&grad_plane), &mut window_grad);
    }
    parts.total = parts.reconstruction + loss.gamma * parts.rate;
    Ok((parts, model.sampling.raw_gradient(&window_grad)))
}
