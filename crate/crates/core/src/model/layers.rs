//! Feature-map kernels over `(C, H, W)` row-major buffers.

use super::float::Float;
use super::Nonlinearity;

/// Unfold a 3x3, padding-1 neighborhood: row `(ci*9 + ky*3 + kx)` holds
/// the input shifted by `(ky-1, kx-1)`, zero outside the image.
pub(crate) fn im2col3<T: Float>(x: &[T], c: usize, h: usize, w: usize, col: &mut Vec<T>) {
    let hw = h * w;
    col.clear();
    col.resize(c * 9 * hw, T::ZERO);
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                let (x_lo, x_hi) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                for y in 0..h {
                    let sy = y + ky;
                    if sy < 1 || sy > h {
                        continue;
                    }
                    let src = &plane[(sy - 1) * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    // dst[x] = src[x + kx - 1] for x in [x_lo, x_hi)
                    dst[x_lo..x_hi].copy_from_slice(&src[x_lo + kx - 1..x_hi + kx - 1]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`]: scatter-add columns back onto the image.
pub(crate) fn col2im3<T: Float>(col: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut x = vec![T::ZERO; c * hw];
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                let (x_lo, x_hi) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                for y in 0..h {
                    let sy = y + ky;
                    if sy < 1 || sy > h {
                        continue;
                    }
                    let dst = &mut plane[(sy - 1) * w..][..w];
                    let src = &row[y * w..][..w];
                    for xx in x_lo..x_hi {
                        dst[xx + kx - 1] += src[xx];
                    }
                }
            }
        }
    }
    x
}

#[inline]
pub(crate) fn activate<T: Float>(v: T, f: Nonlinearity) -> T {
    match f {
        Nonlinearity::Relu => {
            if v > T::ZERO {
                v
            } else {
                T::ZERO
            }
        }
        Nonlinearity::LeakyRelu => {
            if v > T::ZERO {
                v
            } else {
                T::from_f64(0.01) * v
            }
        }
        Nonlinearity::Tanh => v.tanh(),
    }
}

/// Derivative expressed through the activation's output.
#[inline]
pub(crate) fn activation_grad<T: Float>(out: T, f: Nonlinearity) -> T {
    match f {
        Nonlinearity::Relu => {
            if out > T::ZERO {
                T::ONE
            } else {
                T::ZERO
            }
        }
        Nonlinearity::LeakyRelu => {
            if out > T::ZERO {
                T::ONE
            } else {
                T::from_f64(0.01)
            }
        }
        Nonlinearity::Tanh => T::ONE - out * out,
    }
}

/// Forward state of one convolution kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct ConvTrace<T> {
    /// im2col matrix (3x3) or the input itself (1x1), `cin*k*k x hw`.
    pub col: Vec<T>,
    /// Post-activation output, `cout x hw`.
    pub out: Vec<T>,
    pub h: usize,
    pub w: usize,
}

pub(crate) struct ConvParams<'a, T> {
    pub weight: &'a [T],
    pub bias: &'a [T],
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub act: Option<Nonlinearity>,
}

pub(crate) fn conv_forward<T: Float>(p: &ConvParams<'_, T>, x: &[T], h: usize, w: usize) -> ConvTrace<T> {
    let hw = h * w;
    let mut col = Vec::new();
    if p.k == 3 {
        im2col3(x, p.cin, h, w, &mut col);
    } else {
        col.extend_from_slice(&x[..p.cin * hw]);
    }
    let mut out = vec![T::ZERO; p.cout * hw];
    for (co, row) in out.chunks_mut(hw).enumerate() {
        row.fill(p.bias[co]);
    }
    T::gemm(p.cout, p.cin * p.k * p.k, hw, T::ONE, p.weight, false, &col, false, T::ONE, &mut out);
    if let Some(f) = p.act {
        out.iter_mut().for_each(|v| *v = activate(*v, f));
    }
    ConvTrace { col, out, h, w }
}

/// Accumulate weight/bias gradients; returns the input gradient when asked.
/// `grad` is the gradient w.r.t. the post-activation output and is turned
/// into the pre-activation gradient in place.
pub(crate) fn conv_backward<T: Float>(
    p: &ConvParams<'_, T>,
    trace: &ConvTrace<T>,
    grad: &mut [T],
    d_weight: &mut [T],
    d_bias: &mut [T],
    want_input: bool,
) -> Option<Vec<T>> {
    let hw = trace.h * trace.w;
    if let Some(f) = p.act {
        for (g, &o) in grad.iter_mut().zip(&trace.out) {
            *g *= activation_grad(o, f);
        }
    }
    for (co, row) in grad.chunks(hw).enumerate() {
        let mut s = T::ZERO;
        for &g in row {
            s += g;
        }
        d_bias[co] += s;
    }
    let kk = p.cin * p.k * p.k;
    T::gemm(p.cout, hw, kk, T::ONE, grad, false, &trace.col, true, T::ONE, d_weight);
    if !want_input {
        return None;
    }
    let mut d_col = vec![T::ZERO; kk * hw];
    T::gemm(kk, p.cout, hw, T::ONE, p.weight, true, grad, false, T::ZERO, &mut d_col);
    Some(if p.k == 3 {
        col2im3(&d_col, p.cin, trace.h, trace.w)
    } else {
        d_col
    })
}

/// 2x2 max-pool, stride 2; returns pooled map and the flat source index of
/// each maximum (first maximum on ties).
pub(crate) fn maxpool2<T: Float>(x: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * xx + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool2_backward<T: Float>(grad: &[T], arg: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::ZERO; input_len];
    for (&g, &i) in grad.iter().zip(arg) {
        dx[i as usize] += g;
    }
    dx
}

/// Nearest-neighbor 2x upsampling of a `c x h x w` map.
pub(crate) fn upsample2<T: Float>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::ZERO; c * oh * ow];
    for ci in 0..c {
        for y in 0..oh {
            let src = &x[ci * h * w + (y / 2) * w..][..w];
            let dst = &mut out[ci * oh * ow + y * ow..][..ow];
            for (xx, d) in dst.iter_mut().enumerate() {
                *d = src[xx / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]; `h, w` are the small (pre-upsample) sizes.
pub(crate) fn upsample2_backward<T: Float>(grad: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::ZERO; c * h * w];
    for ci in 0..c {
        for y in 0..oh {
            let src = &grad[ci * oh * ow + y * ow..][..ow];
            let dst = &mut dx[ci * h * w + (y / 2) * w..][..w];
            for (xx, &g) in src.iter().enumerate() {
                dst[xx / 2] += g;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv3(x: &[f64], w: &[f64], cin: usize, cout: usize, h: usize, wd: usize) -> Vec<f64> {
        let mut out = vec![0.0; cout * h * wd];
        for co in 0..cout {
            for y in 0..h as isize {
                for xx in 0..wd as isize {
                    let mut s = 0.0;
                    for ci in 0..cin {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, xx + kx - 1);
                                if sy >= 0 && sx >= 0 && sy < h as isize && sx < wd as isize {
                                    s += w[((co * cin + ci) * 3 + ky as usize) * 3 + kx as usize]
                                        * x[(ci * h + sy as usize) * wd + sx as usize];
                                }
                            }
                        }
                    }
                    out[(co * h + y as usize) * wd + xx as usize] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loop() {
        let (cin, cout, h, w) = (2, 3, 5, 4);
        let x: Vec<f64> = (0..cin * h * w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let wt: Vec<f64> = (0..cout * cin * 9).map(|i| ((i * 5) % 13) as f64 / 13.0 - 0.5).collect();
        let bias = vec![0.0; cout];
        let p = ConvParams {
            weight: &wt,
            bias: &bias,
            cin,
            cout,
            k: 3,
            act: None,
        };
        let t = conv_forward(&p, &x, h, w);
        let expect = naive_conv3(&x, &wt, cin, cout, h, w);
        for (a, b) in t.out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let (c, h, w) = (2, 3, 5);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..c * 9 * h * w).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut col = Vec::new();
        im2col3(&x, c, h, w, &mut col);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let back = col2im3(&y, c, h, w);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pool_and_upsample_adjoints() {
        let x: Vec<f64> = vec![1.0, 5.0, 2.0, 2.0, 3.0, 4.0, 9.0, 0.0];
        let (p, arg) = maxpool2(&x, 1, 2, 4);
        assert_eq!(p, vec![5.0, 9.0]);
        assert_eq!(maxpool2_backward(&[1.0, 2.0], &arg, 8), vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        let u = upsample2(&[1.0, 2.0], 1, 1, 2);
        assert_eq!(u, vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        assert_eq!(upsample2_backward(&u, 1, 1, 2), vec![4.0, 8.0]);
    }
}
