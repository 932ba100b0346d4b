//! Bilinear resampling with half-pixel centers: output sample `i` of `dst`
//! reads the source at `(i + 0.5) * src / dst - 0.5`, clamped to the edge.

struct AxisWeights {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

fn axis(src: usize, dst: usize) -> AxisWeights {
    let scale = src as f64 / dst as f64;
    let mut w = AxisWeights {
        lo: Vec::with_capacity(dst),
        hi: Vec::with_capacity(dst),
        frac: Vec::with_capacity(dst),
    };
    for i in 0..dst {
        let s = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
        let lo = (s.floor() as usize).min(src - 1);
        let hi = (lo + 1).min(src - 1);
        w.lo.push(lo);
        w.hi.push(hi);
        w.frac.push(if hi == lo { 0.0 } else { s - lo as f64 });
    }
    w
}

/// Resizes a row-major `sh x sw` plane to `dh x dw`.
pub fn resize_bilinear(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    assert_eq!(src.len(), sh * sw, "bilinear source size");
    let ay = axis(sh, dh);
    let ax = axis(sw, dw);
    let mut out = Vec::with_capacity(dh * dw);
    for y in 0..dh {
        let (r0, r1, fy) = (ay.lo[y] * sw, ay.hi[y] * sw, ay.frac[y]);
        for x in 0..dw {
            let (c0, c1, fx) = (ax.lo[x], ax.hi[x], ax.frac[x]);
            let top = src[r0 + c0] * (1.0 - fx) + src[r0 + c1] * fx;
            let bottom = src[r1 + c0] * (1.0 - fx) + src[r1 + c1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`]: maps `dL/d(out)` to `dL/d(src)`.
pub fn resize_bilinear_backward(grad: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    assert_eq!(grad.len(), dh * dw, "bilinear gradient size");
    let ay = axis(sh, dh);
    let ax = axis(sw, dw);
    let mut out = vec![0.0; sh * sw];
    for y in 0..dh {
        let (r0, r1, fy) = (ay.lo[y] * sw, ay.hi[y] * sw, ay.frac[y]);
        for x in 0..dw {
            let (c0, c1, fx) = (ax.lo[x], ax.hi[x], ax.frac[x]);
            let g = grad[y * dw + x];
            out[r0 + c0] += g * (1.0 - fy) * (1.0 - fx);
            out[r0 + c1] += g * (1.0 - fy) * fx;
            out[r1 + c0] += g * fy * (1.0 - fx);
            out[r1 + c1] += g * fy * fx;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_are_preserved() {
        let out = resize_bilinear(&[0.3; 6], 2, 3, 7, 5);
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn same_size_is_identity() {
        let src: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        assert_eq!(resize_bilinear(&src, 3, 4, 3, 4), src);
    }

    #[test]
    fn two_by_two_ramp_upsampled() {
        // columns 0 and 1, evaluated directly from the half-pixel rule:
        // x = 0 -> s = -0.25 -> clamp 0; x = 1 -> s = 0.25; x = 2 -> 0.75; x = 3 -> 1.25 -> hi clamp
        let out = resize_bilinear(&[0.0, 1.0, 0.0, 1.0], 2, 2, 4, 4);
        let want_row = [0.0, 0.25, 0.75, 1.0];
        for y in 0..4 {
            for x in 0..4 {
                assert!((out[y * 4 + x] - want_row[x]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn backward_is_adjoint() {
        let src: Vec<f64> = (0..15).map(|i| (i as f64 * 0.77).sin()).collect();
        let g: Vec<f64> = (0..8 * 11).map(|i| (i as f64 * 0.31).cos()).collect();
        let fwd = resize_bilinear(&src, 3, 5, 8, 11);
        let lhs: f64 = fwd.iter().zip(&g).map(|(a, b)| a * b).sum();
        let back = resize_bilinear_backward(&g, 3, 5, 8, 11);
        let rhs: f64 = src.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
