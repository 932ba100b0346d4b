//! Reconstruction loss, total-variation rate loss and their gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::measurement::MeasurementPlane;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the rate term.
    pub gamma: f64,
    /// TV exponent.
    pub beta: f64,
    pub batch_size: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 0.1,
            beta: 2.0,
            batch_size: 8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !(self.beta > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "loss gamma {} beta {} batch {}",
                self.gamma, self.beta, self.batch_size
            )));
        }
        Ok(())
    }
}

/// `(1 / 2K) * sum_i ||x_hat_i - x_i||_F^2`.
pub fn reconstruction_loss(originals: &[GrayImage], reconstructions: &[GrayImage]) -> Result<f64> {
    check_batch(originals, reconstructions)?;
    let k = originals.len() as f64;
    let sum: f64 = originals
        .iter()
        .zip(reconstructions)
        .map(|(x, r)| {
            x.data()
                .iter()
                .zip(r.data())
                .map(|(a, b)| (b - a) * (b - a))
                .sum::<f64>()
        })
        .sum();
    Ok(sum / (2.0 * k))
}

/// Gradient of [`reconstruction_loss`] with respect to one reconstruction.
pub fn reconstruction_loss_grad(original: &GrayImage, reconstruction: &[f64], batch: usize) -> Vec<f64> {
    let k = batch as f64;
    original
        .data()
        .iter()
        .zip(reconstruction)
        .map(|(a, b)| (b - a) / k)
        .collect()
}

fn check_batch(a: &[GrayImage], b: &[GrayImage]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "batch of {} originals and {} reconstructions",
            a.len(),
            b.len()
        )));
    }
    for (x, y) in a.iter().zip(b) {
        if (x.width(), x.height()) != (y.width(), y.height()) {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                x.width(),
                x.height(),
                y.width(),
                y.height()
            )));
        }
    }
    Ok(())
}

/// Forward differences at `(i, j)`; a missing neighbour contributes zero.
#[inline]
fn diffs(v: &[f64], w: usize, h: usize, i: usize, j: usize) -> (f64, f64) {
    let c = v[i * w + j];
    let dx = if j + 1 < w { v[i * w + j + 1] - c } else { 0.0 };
    let dy = if i + 1 < h { v[(i + 1) * w + j] - c } else { 0.0 };
    (dx, dy)
}

/// `sum_{i,j} ((y[i,j+1] - y[i,j])^2 + (y[i+1,j] - y[i,j])^2)^(beta/2)`.
pub fn rate_loss(plane: &MeasurementPlane, beta: f64) -> f64 {
    let (w, h) = (plane.width(), plane.height());
    let v = plane.values();
    let mut total = 0.0;
    for i in 0..h {
        for j in 0..w {
            let (dx, dy) = diffs(v, w, h, i, j);
            let s = dx * dx + dy * dy;
            total += if beta == 2.0 { s } else { s.powf(beta / 2.0) };
        }
    }
    total
}

/// Gradient of [`rate_loss`] with respect to the plane values. Terms with a
/// zero difference contribute no gradient (the kink at zero for `beta < 2`).
pub fn rate_loss_grad(plane: &MeasurementPlane, beta: f64) -> Vec<f64> {
    let (w, h) = (plane.width(), plane.height());
    let v = plane.values();
    let mut g = vec![0.0; v.len()];
    for i in 0..h {
        for j in 0..w {
            let (dx, dy) = diffs(v, w, h, i, j);
            let s = dx * dx + dy * dy;
            if s == 0.0 {
                continue;
            }
            // d/d(dx) of s^(beta/2) = beta * s^(beta/2 - 1) * dx
            let coef = if beta == 2.0 { 2.0 } else { beta * s.powf(beta / 2.0 - 1.0) };
            let idx = i * w + j;
            if j + 1 < w {
                g[idx + 1] += coef * dx;
                g[idx] -= coef * dx;
            }
            if i + 1 < h {
                g[idx + w] += coef * dy;
                g[idx] -= coef * dy;
            }
        }
    }
    g
}

/// `L = L_c + gamma * L_r`.
pub fn total_loss(reconstruction: f64, rate: f64, gamma: f64) -> f64 {
    reconstruction + gamma * rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::PlaneGeometry;

    fn img(w: usize, h: usize, v: Vec<f64>) -> GrayImage {
        GrayImage::new(w, h, v).unwrap()
    }

    fn plane(w: usize, h: usize, v: Vec<f64>) -> MeasurementPlane {
        MeasurementPlane::new(PlaneGeometry::new(w, h, 1).unwrap(), v).unwrap()
    }

    #[test]
    fn reconstruction_loss_examples() {
        let x = img(2, 2, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(reconstruction_loss(&[x.clone()], &[x.clone()]).unwrap(), 0.0);
        let mut y = x.clone();
        y.data_mut()[2] += 2.0;
        assert!((reconstruction_loss(&[x.clone()], &[y.clone()]).unwrap() - 2.0).abs() < 1e-12);
        let mut z = x.clone();
        z.data_mut()[2] += 6.0;
        let scaled = reconstruction_loss(&[x.clone()], &[z]).unwrap();
        assert!((scaled - 9.0 * 2.0).abs() < 1e-9);
        assert!(reconstruction_loss(&[x.clone()], &[img(1, 4, vec![0.0; 4])]).is_err());
        assert!(reconstruction_loss(&[x.clone(), x.clone()], &[y]).is_err());
    }

    #[test]
    fn rate_loss_examples() {
        assert_eq!(rate_loss(&plane(3, 3, vec![0.7; 9]), 2.0), 0.0);
        let p = plane(2, 2, vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(rate_loss(&p, 2.0), 2.0);
        assert!((rate_loss(&p, 1.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rate_gradient_matches_finite_differences() {
        let vals: Vec<f64> = (0..20).map(|i| ((i * 7 % 11) as f64) / 11.0).collect();
        for beta in [2.0, 1.0, 3.0] {
            let p = plane(5, 4, vals.clone());
            let g = rate_loss_grad(&p, beta);
            let eps = 1e-6;
            for i in 0..vals.len() {
                let mut a = vals.clone();
                a[i] += eps;
                let mut b = vals.clone();
                b[i] -= eps;
                let fd = (rate_loss(&plane(5, 4, a), beta) - rate_loss(&plane(5, 4, b), beta)) / (2.0 * eps);
                assert!((fd - g[i]).abs() < 1e-6, "beta {beta} i {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(1.5, 9.0, 0.0), 1.5);
        assert_eq!(total_loss(0.0, 0.0, 0.1), 0.0);
        assert!((total_loss(1.0, 2.0, 0.1) - 1.2).abs() < 1e-15);
    }
}
