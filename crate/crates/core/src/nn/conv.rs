use std::cell::RefCell;

use rand::Rng;

use super::gemm::gemm;
use super::{Param, Tensor};

/// Output extent of a strided, zero-padded sliding window.
fn out_len(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

thread_local! {
    static SCRATCH: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

/// Zeroed buffer recycled per thread. Column matrices are large enough that
/// fresh allocations would go straight to mmap and fault on every step.
struct Scratch(Vec<f64>);

impl Scratch {
    fn zeroed(len: usize) -> Self {
        let mut buf = SCRATCH.with(|s| s.borrow_mut().pop()).unwrap_or_default();
        buf.clear();
        buf.resize(len, 0.0);
        Scratch(buf)
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let buf = std::mem::take(&mut self.0);
        SCRATCH.with(|s| s.borrow_mut().push(buf));
    }
}

impl std::ops::Deref for Scratch {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::DerefMut for Scratch {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Unfolds `k x k` patches into columns: `[c * k * k, ho * wo]`.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Scratch {
    let ho = out_len(h, k, stride, pad);
    let wo = out_len(w, k, stride, pad);
    let mut cols = Scratch::zeroed(c * k * k * ho * wo);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlaps.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out: &mut [f64],
) {
    let ho = out_len(h, k, stride, pad);
    let wo = out_len(w, k, stride, pad);
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                    for (ox, s) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

fn add_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (chunk, b) in out.chunks_exact_mut(plane).zip(bias) {
        for v in chunk {
            *v += b;
        }
    }
}

fn accumulate_bias_grad(grad_out: &[f64], bias_grad: &mut [f64], plane: usize) {
    for (chunk, g) in grad_out.chunks_exact(plane).zip(bias_grad) {
        *g += chunk.iter().sum::<f64>();
    }
}

/// Square-kernel convolution with bias. Weight layout `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding,
            weight: Param::he_normal(
                format!("{name}.weight"),
                vec![out_channels, in_channels, kernel, kernel],
                fan_in,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), vec![out_channels], false),
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            out_len(h, self.kernel, self.stride, self.padding),
            out_len(w, self.kernel, self.stride, self.padding),
        )
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.channels, self.in_channels, "conv input channels");
        let (ho, wo) = self.output_size(x.height, x.width);
        let kk = self.in_channels * self.kernel * self.kernel;
        let cols = im2col(&x.data, x.channels, x.height, x.width, self.kernel, self.stride, self.padding);
        let mut out = Tensor::zeros(self.out_channels, ho, wo);
        gemm(
            self.out_channels,
            kk,
            ho * wo,
            1.0,
            &self.weight.value,
            false,
            &cols,
            false,
            0.0,
            &mut out.data,
        );
        add_bias(&mut out.data, &self.bias.value, ho * wo);
        out
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Tensor {
        let (ho, wo) = self.output_size(x.height, x.width);
        assert_eq!((grad_out.channels, grad_out.height, grad_out.width), (self.out_channels, ho, wo));
        let kk = self.in_channels * self.kernel * self.kernel;
        let cols = im2col(&x.data, x.channels, x.height, x.width, self.kernel, self.stride, self.padding);
        // dW += dY * cols^T
        gemm(
            self.out_channels,
            ho * wo,
            kk,
            1.0,
            &grad_out.data,
            false,
            &cols,
            true,
            1.0,
            &mut self.weight.grad,
        );
        accumulate_bias_grad(&grad_out.data, &mut self.bias.grad, ho * wo);
        // dcols = W^T * dY
        let mut dcols = Scratch::zeroed(kk * ho * wo);
        gemm(
            kk,
            self.out_channels,
            ho * wo,
            1.0,
            &self.weight.value,
            true,
            &grad_out.data,
            false,
            0.0,
            &mut dcols,
        );
        let mut dx = Tensor::zeros(x.channels, x.height, x.width);
        col2im(&dcols, x.channels, x.height, x.width, self.kernel, self.stride, self.padding, &mut dx.data);
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

/// Transposed convolution (fractionally strided). Weight layout
/// `[in, out, k, k]`. Output side is `(n - 1) * stride - 2 * pad + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Param,
    pub bias: Param,
}

impl ConvTranspose2d {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        // each output pixel sees in * (k / stride)^2 inputs
        let fan_in = (in_channels * kernel * kernel / (stride * stride)).max(1);
        ConvTranspose2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::he_normal(
                format!("{name}.weight"),
                vec![in_channels, out_channels, kernel, kernel],
                fan_in,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), vec![out_channels], false),
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |n: usize| (n - 1) * self.stride + self.kernel - 2 * self.padding;
        (f(h), f(w))
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.channels, self.in_channels, "deconv input channels");
        let (ho, wo) = self.output_size(x.height, x.width);
        let okk = self.out_channels * self.kernel * self.kernel;
        let hw = x.plane_len();
        // cols = W^T * x : [out*k*k, h*w]
        let mut cols = Scratch::zeroed(okk * hw);
        gemm(okk, self.in_channels, hw, 1.0, &self.weight.value, true, &x.data, false, 0.0, &mut cols);
        let mut out = Tensor::zeros(self.out_channels, ho, wo);
        col2im(&cols, self.out_channels, ho, wo, self.kernel, self.stride, self.padding, &mut out.data);
        add_bias(&mut out.data, &self.bias.value, ho * wo);
        out
    }

    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Tensor {
        let (ho, wo) = self.output_size(x.height, x.width);
        assert_eq!((grad_out.channels, grad_out.height, grad_out.width), (self.out_channels, ho, wo));
        let okk = self.out_channels * self.kernel * self.kernel;
        let hw = x.plane_len();
        let gcols = im2col(&grad_out.data, self.out_channels, ho, wo, self.kernel, self.stride, self.padding);
        debug_assert_eq!(gcols.len(), okk * hw);
        // dW += x * gcols^T : [in, out*k*k]
        gemm(self.in_channels, hw, okk, 1.0, &x.data, false, &gcols, true, 1.0, &mut self.weight.grad);
        accumulate_bias_grad(&grad_out.data, &mut self.bias.grad, ho * wo);
        let mut dx = Tensor::zeros(x.channels, x.height, x.width);
        gemm(self.in_channels, okk, hw, 1.0, &self.weight.value, false, &gcols, false, 0.0, &mut dx.data);
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Direct nested-loop convolution, independent of im2col/GEMM.
    fn conv_direct(conv: &Conv2d, x: &Tensor) -> Tensor {
        let (ho, wo) = conv.output_size(x.height, x.width);
        let k = conv.kernel;
        let mut out = Tensor::zeros(conv.out_channels, ho, wo);
        for o in 0..conv.out_channels {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = conv.bias.value[o];
                    for i in 0..conv.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                                let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                                if iy < 0 || ix < 0 || iy >= x.height as isize || ix >= x.width as isize {
                                    continue;
                                }
                                acc += conv.weight.value[((o * conv.in_channels + i) * k + ky) * k + kx]
                                    * x.data[(i * x.height + iy as usize) * x.width + ix as usize];
                            }
                        }
                    }
                    out.data[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    /// Scatter definition of a transposed convolution.
    fn deconv_direct(d: &ConvTranspose2d, x: &Tensor) -> Tensor {
        let (ho, wo) = d.output_size(x.height, x.width);
        let k = d.kernel;
        let mut out = Tensor::zeros(d.out_channels, ho, wo);
        for o in 0..d.out_channels {
            out.data[o * ho * wo..(o + 1) * ho * wo].fill(d.bias.value[o]);
        }
        for i in 0..d.in_channels {
            for iy in 0..x.height {
                for ix in 0..x.width {
                    let v = x.data[(i * x.height + iy) * x.width + ix];
                    for o in 0..d.out_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (iy * d.stride + ky) as isize - d.padding as isize;
                                let ox = (ix * d.stride + kx) as isize - d.padding as isize;
                                if oy < 0 || ox < 0 || oy >= ho as isize || ox >= wo as isize {
                                    continue;
                                }
                                out.data[(o * ho + oy as usize) * wo + ox as usize] +=
                                    v * d.weight.value[((i * d.out_channels + o) * k + ky) * k + kx];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::new("c", 3, 4, 3, 1, &mut rng);
        conv.bias.value = vec![0.1, -0.2, 0.3, 0.0];
        let x = random_tensor(3, 5, 6, 2);
        let a = conv.forward(&x);
        let b = conv_direct(&conv, &x);
        assert_eq!((a.height, a.width), (5, 6));
        for (p, q) in a.data.iter().zip(&b.data) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn deconv_doubles_and_matches_scatter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut d = ConvTranspose2d::new("d", 2, 3, 4, 2, 1, &mut rng);
        d.bias.value = vec![0.5, 0.0, -0.5];
        let x = random_tensor(2, 3, 4, 4);
        let a = d.forward(&x);
        assert_eq!((a.channels, a.height, a.width), (3, 6, 8));
        let b = deconv_direct(&d, &x);
        for (p, q) in a.data.iter().zip(&b.data) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    fn check_grads<F, B>(mut forward: F, mut backward: B, params: usize, x: &Tensor)
    where
        F: FnMut(&Tensor, Option<(usize, f64)>) -> Tensor,
        B: FnMut(&Tensor, &Tensor) -> (Tensor, Vec<f64>),
    {
        // objective: sum(out * r) for a fixed random r
        let out = forward(x, None);
        let r = random_tensor(out.channels, out.height, out.width, 99);
        let obj = |t: &Tensor| t.data.iter().zip(&r.data).map(|(a, b)| a * b).sum::<f64>();
        let (dx, dparams) = backward(x, &r);
        let eps = 1e-6;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += eps;
            let mut xm = x.clone();
            xm.data[i] -= eps;
            let fd = (obj(&forward(&xp, None)) - obj(&forward(&xm, None))) / (2.0 * eps);
            assert!((fd - dx.data[i]).abs() < 1e-7, "dx[{i}] {fd} vs {}", dx.data[i]);
        }
        for j in 0..params {
            let fd = (obj(&forward(x, Some((j, eps)))) - obj(&forward(x, Some((j, -eps))))) / (2.0 * eps);
            assert!((fd - dparams[j]).abs() < 1e-7, "dp[{j}] {fd} vs {}", dparams[j]);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let conv = Conv2d::new("c", 2, 3, 3, 1, &mut rng);
        let nw = conv.weight.len();
        let np = nw + conv.bias.len();
        let x = random_tensor(2, 4, 5, 6);
        let fwd = |x: &Tensor, bump: Option<(usize, f64)>| {
            let mut c = conv.clone();
            if let Some((j, e)) = bump {
                if j < nw {
                    c.weight.value[j] += e;
                } else {
                    c.bias.value[j - nw] += e;
                }
            }
            c.forward(x)
        };
        let bwd = |x: &Tensor, g: &Tensor| {
            let mut c = conv.clone();
            let dx = c.backward(x, g);
            let mut dp = c.weight.grad.clone();
            dp.extend(&c.bias.grad);
            (dx, dp)
        };
        check_grads(fwd, bwd, np, &x);
    }

    #[test]
    fn deconv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = ConvTranspose2d::new("d", 2, 2, 4, 2, 1, &mut rng);
        let nw = d.weight.len();
        let np = nw + d.bias.len();
        let x = random_tensor(2, 3, 3, 8);
        let fwd = |x: &Tensor, bump: Option<(usize, f64)>| {
            let mut c = d.clone();
            if let Some((j, e)) = bump {
                if j < nw {
                    c.weight.value[j] += e;
                } else {
                    c.bias.value[j - nw] += e;
                }
            }
            c.forward(x)
        };
        let bwd = |x: &Tensor, g: &Tensor| {
            let mut c = d.clone();
            let dx = c.backward(x, g);
            let mut dp = c.weight.grad.clone();
            dp.extend(&c.bias.grad);
            (dx, dp)
        };
        check_grads(fwd, bwd, np, &x);
    }
}
