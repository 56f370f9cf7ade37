//! Raw array math behind the tape operations.
//!
//! These functions know nothing about autodiff; they take plain slices plus
//! explicit geometry and are unit-tested against hand arithmetic. All loops
//! run in a fixed order so results are bitwise reproducible.

use crate::scalar::Scalar;

/// `out = a · b` with `a` row-major `m×k`, `b` row-major `k×n`.
pub fn matmul<E: Scalar>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(E::ZERO);
    matmul_acc(a, b, m, k, n, out);
}

/// `out += a · b`.
pub fn matmul_acc<E: Scalar>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out += a · bᵀ` with `a` row-major `m×k`, `b` row-major `n×k`.
///
/// The dot product runs over eight independent accumulator lanes so the
/// reduction vectorizes; the lane-combination order is fixed, keeping
/// results bitwise reproducible.
pub fn matmul_bt_acc<E: Scalar>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut lanes = [E::ZERO; 8];
            let mut ac = arow.chunks_exact(8);
            let mut bc = brow.chunks_exact(8);
            for (av, bv) in (&mut ac).zip(&mut bc) {
                for l in 0..8 {
                    lanes[l] = lanes[l] + av[l] * bv[l];
                }
            }
            let mut s = E::ZERO;
            for (&av, &bv) in ac.remainder().iter().zip(bc.remainder().iter()) {
                s = s + av * bv;
            }
            let pair = [
                lanes[0] + lanes[4],
                lanes[1] + lanes[5],
                lanes[2] + lanes[6],
                lanes[3] + lanes[7],
            ];
            s = s + ((pair[0] + pair[2]) + (pair[1] + pair[3]));
            orow[j] = orow[j] + s;
        }
    }
}

/// `out += aᵀ · b` with `a` row-major `k×m`, `b` row-major `k×n`.
pub fn matmul_at_acc<E: Scalar>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + av * bv;
            }
        }
    }
}

/// Spatial padding scheme for convolutions and pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output is `ceil(in / stride)`; zero padding split evenly with the
    /// extra pixel on the bottom/right.
    Same,
    /// No padding; output is `floor((in - k) / stride) + 1`.
    Valid,
}

/// Resolved 2-D convolution geometry for one spatial configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn resolve(
        in_h: usize,
        in_w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
    ) -> Option<Self> {
        if stride == 0 || kh == 0 || kw == 0 {
            return None;
        }
        match padding {
            Padding::Valid => {
                if in_h < kh || in_w < kw {
                    return None;
                }
                Some(Self {
                    in_h,
                    in_w,
                    kh,
                    kw,
                    stride,
                    out_h: (in_h - kh) / stride + 1,
                    out_w: (in_w - kw) / stride + 1,
                    pad_top: 0,
                    pad_left: 0,
                })
            }
            Padding::Same => {
                let out_h = in_h.div_ceil(stride);
                let out_w = in_w.div_ceil(stride);
                let pad_h = ((out_h - 1) * stride + kh).saturating_sub(in_h);
                let pad_w = ((out_w - 1) * stride + kw).saturating_sub(in_w);
                Some(Self {
                    in_h,
                    in_w,
                    kh,
                    kw,
                    stride,
                    out_h,
                    out_w,
                    pad_top: pad_h / 2,
                    pad_left: pad_w / 2,
                })
            }
        }
    }
}

/// Unfold one `C×H×W` image into a `(C·kh·kw) × (out_h·out_w)` patch matrix.
pub fn im2col<E: Scalar>(x: &[E], channels: usize, g: &ConvGeom, col: &mut [E]) {
    let k_area = g.kh * g.kw;
    let out_area = g.out_h * g.out_w;
    debug_assert_eq!(x.len(), channels * g.in_h * g.in_w);
    debug_assert_eq!(col.len(), channels * k_area * out_area);
    for c in 0..channels {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &mut col
                    [(c * k_area + ki * g.kw + kj) * out_area..(c * k_area + ki * g.kw + kj + 1) * out_area];
                let mut idx = 0;
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + ki) as isize - g.pad_top as isize;
                    for ow in 0..g.out_w {
                        let iw = (ow * g.stride + kj) as isize - g.pad_left as isize;
                        row[idx] = if ih >= 0
                            && (ih as usize) < g.in_h
                            && iw >= 0
                            && (iw as usize) < g.in_w
                        {
                            plane[ih as usize * g.in_w + iw as usize]
                        } else {
                            E::ZERO
                        };
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Scatter-add the patch matrix gradient back onto the image gradient.
pub fn col2im_acc<E: Scalar>(col: &[E], channels: usize, g: &ConvGeom, dx: &mut [E]) {
    let k_area = g.kh * g.kw;
    let out_area = g.out_h * g.out_w;
    debug_assert_eq!(dx.len(), channels * g.in_h * g.in_w);
    debug_assert_eq!(col.len(), channels * k_area * out_area);
    for c in 0..channels {
        let plane = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &col
                    [(c * k_area + ki * g.kw + kj) * out_area..(c * k_area + ki * g.kw + kj + 1) * out_area];
                let mut idx = 0;
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + ki) as isize - g.pad_top as isize;
                    for ow in 0..g.out_w {
                        let iw = (ow * g.stride + kj) as isize - g.pad_left as isize;
                        if ih >= 0 && (ih as usize) < g.in_h && iw >= 0 && (iw as usize) < g.in_w {
                            let p = ih as usize * g.in_w + iw as usize;
                            plane[p] = plane[p] + row[idx];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Depthwise 2-D convolution of one image: every channel is filtered by its
/// own `kh×kw` kernel. `w` is laid out `C×kh×kw`.
pub fn depthwise_forward<E: Scalar>(
    x: &[E],
    w: &[E],
    channels: usize,
    g: &ConvGeom,
    out: &mut [E],
) {
    let out_area = g.out_h * g.out_w;
    for c in 0..channels {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        let kern = &w[c * g.kh * g.kw..(c + 1) * g.kh * g.kw];
        let o = &mut out[c * out_area..(c + 1) * out_area];
        let mut idx = 0;
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let mut s = E::ZERO;
                for ki in 0..g.kh {
                    let ih = (oh * g.stride + ki) as isize - g.pad_top as isize;
                    if ih < 0 || ih as usize >= g.in_h {
                        continue;
                    }
                    for kj in 0..g.kw {
                        let iw = (ow * g.stride + kj) as isize - g.pad_left as isize;
                        if iw < 0 || iw as usize >= g.in_w {
                            continue;
                        }
                        s = s + kern[ki * g.kw + kj] * plane[ih as usize * g.in_w + iw as usize];
                    }
                }
                o[idx] = s;
                idx += 1;
            }
        }
    }
}

/// Backward of [`depthwise_forward`]: accumulates into `dx` and `dw`.
pub fn depthwise_backward<E: Scalar>(
    x: &[E],
    w: &[E],
    grad_out: &[E],
    channels: usize,
    g: &ConvGeom,
    dx: &mut [E],
    dw: &mut [E],
) {
    let out_area = g.out_h * g.out_w;
    for c in 0..channels {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        let kern = &w[c * g.kh * g.kw..(c + 1) * g.kh * g.kw];
        let dplane = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        let dkern = &mut dw[c * g.kh * g.kw..(c + 1) * g.kh * g.kw];
        let go = &grad_out[c * out_area..(c + 1) * out_area];
        let mut idx = 0;
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let gv = go[idx];
                idx += 1;
                for ki in 0..g.kh {
                    let ih = (oh * g.stride + ki) as isize - g.pad_top as isize;
                    if ih < 0 || ih as usize >= g.in_h {
                        continue;
                    }
                    for kj in 0..g.kw {
                        let iw = (ow * g.stride + kj) as isize - g.pad_left as isize;
                        if iw < 0 || iw as usize >= g.in_w {
                            continue;
                        }
                        let p = ih as usize * g.in_w + iw as usize;
                        dkern[ki * g.kw + kj] = dkern[ki * g.kw + kj] + gv * plane[p];
                        dplane[p] = dplane[p] + gv * kern[ki * g.kw + kj];
                    }
                }
            }
        }
    }
}

/// 1-D convolution over a length-`len` sequence with odd kernel `k`,
/// zero-padded "same" output.
pub fn conv1d_same_forward<E: Scalar>(x: &[E], w: &[E], len: usize, k: usize, out: &mut [E]) {
    debug_assert!(k % 2 == 1);
    let half = (k / 2) as isize;
    for i in 0..len {
        let mut s = E::ZERO;
        for (j, &wv) in w.iter().enumerate() {
            let p = i as isize + j as isize - half;
            if p >= 0 && (p as usize) < len {
                s = s + wv * x[p as usize];
            }
        }
        out[i] = s;
    }
}

pub fn conv1d_same_backward<E: Scalar>(
    x: &[E],
    w: &[E],
    grad_out: &[E],
    len: usize,
    k: usize,
    dx: &mut [E],
    dw: &mut [E],
) {
    let half = (k / 2) as isize;
    for i in 0..len {
        let gv = grad_out[i];
        for j in 0..k {
            let p = i as isize + j as isize - half;
            if p >= 0 && (p as usize) < len {
                dw[j] = dw[j] + gv * x[p as usize];
                dx[p as usize] = dx[p as usize] + gv * w[j];
            }
        }
    }
}

/// Sampling weights for bilinear resize with the align-corners-false
/// (half-pixel centers) convention: returns `(i0, i1, frac)` per output index.
pub fn bilinear_axis(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let i0 = src.floor();
            let frac = src - i0;
            let lo = (i0.max(0.0) as usize).min(in_len - 1);
            let hi = ((i0 as isize + 1).max(0) as usize).min(in_len - 1);
            (lo, hi, frac)
        })
        .collect()
}

/// Bilinear resize of one `H×W` plane into `out` (`out_h×out_w`).
pub fn resize_bilinear_plane<E: Scalar>(
    x: &[E],
    in_w: usize,
    rows: &[(usize, usize, f64)],
    cols: &[(usize, usize, f64)],
    out: &mut [E],
) {
    let out_w = cols.len();
    for (oi, &(r0, r1, rf)) in rows.iter().enumerate() {
        let rf = E::from_f64c(rf);
        let row0 = &x[r0 * in_w..(r0 + 1) * in_w];
        let row1 = &x[r1 * in_w..(r1 + 1) * in_w];
        let orow = &mut out[oi * out_w..(oi + 1) * out_w];
        for (oj, &(c0, c1, cf)) in cols.iter().enumerate() {
            let cf = E::from_f64c(cf);
            let top = row0[c0] * (E::ONE - cf) + row0[c1] * cf;
            let bot = row1[c0] * (E::ONE - cf) + row1[c1] * cf;
            orow[oj] = top * (E::ONE - rf) + bot * rf;
        }
    }
}

/// Adjoint of [`resize_bilinear_plane`]: scatter the output gradient back.
pub fn resize_bilinear_plane_backward<E: Scalar>(
    grad_out: &[E],
    in_w: usize,
    rows: &[(usize, usize, f64)],
    cols: &[(usize, usize, f64)],
    dx: &mut [E],
) {
    let out_w = cols.len();
    for (oi, &(r0, r1, rf)) in rows.iter().enumerate() {
        let rf = E::from_f64c(rf);
        let grow = &grad_out[oi * out_w..(oi + 1) * out_w];
        for (oj, &(c0, c1, cf)) in cols.iter().enumerate() {
            let cf = E::from_f64c(cf);
            let g = grow[oj];
            let gt = g * (E::ONE - rf);
            let gb = g * rf;
            dx[r0 * in_w + c0] = dx[r0 * in_w + c0] + gt * (E::ONE - cf);
            dx[r0 * in_w + c1] = dx[r0 * in_w + c1] + gt * cf;
            dx[r1 * in_w + c0] = dx[r1 * in_w + c0] + gb * (E::ONE - cf);
            dx[r1 * in_w + c1] = dx[r1 * in_w + c1] + gb * cf;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_case() {
        // [[1,2,3],[4,5,6]] · [[1,2],[3,4],[5,6]] = [[22,28],[49,64]]
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0; 4];
        matmul(&a, &b, 2, 3, 2, &mut out);
        assert_eq!(out, [22.0, 28.0, 49.0, 64.0]);
    }

    #[test]
    fn matmul_transposed_variants_agree() {
        let a = [1.0f64, -2.0, 0.5, 3.0, 4.0, -1.0]; // 2x3
        let b = [2.0, 1.0, 0.0, -1.0, 1.5, 2.5]; // 3x2
        let mut want = [0.0; 4];
        matmul(&a, &b, 2, 3, 2, &mut want);

        // bt: b rewritten as its transpose (2x3), same product expected.
        let bt = [2.0, 0.0, 1.5, 1.0, -1.0, 2.5];
        let mut got = [0.0; 4];
        matmul_bt_acc(&a, &bt, 2, 3, 2, &mut got);
        assert_eq!(want, got);

        // at: a rewritten as its transpose (3x2).
        let at = [1.0, 3.0, -2.0, 4.0, 0.5, -1.0];
        let mut got2 = [0.0; 4];
        matmul_at_acc(&at, &b, 2, 3, 2, &mut got2);
        assert_eq!(want, got2);
    }

    #[test]
    fn same_padding_preserves_extent_for_odd_kernels() {
        for k in [1usize, 3, 5, 7] {
            let g = ConvGeom::resolve(11, 11, k, k, 1, Padding::Same).unwrap();
            assert_eq!((g.out_h, g.out_w), (11, 11), "kernel {k}");
            // extra pixel of padding goes bottom/right
            let total = (g.out_h - 1) + k - 11;
            assert_eq!(g.pad_top, total / 2);
        }
    }

    #[test]
    fn same_padding_stride2_is_ceil() {
        let g = ConvGeom::resolve(11, 7, 3, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w), (6, 4));
    }

    #[test]
    fn im2col_identity_kernel() {
        // 1x1 kernel im2col is the flattened image.
        let x = [1.0f64, 2.0, 3.0, 4.0];
        let g = ConvGeom::resolve(2, 2, 1, 1, 1, Padding::Valid).unwrap();
        let mut col = [0.0; 4];
        im2col(&x, 1, &g, &mut col);
        assert_eq!(col, x);
    }

    #[test]
    fn conv1d_hand_case() {
        // x=[1,2,3], k=3 unit weights, zero pad -> [3,6,5]
        let x = [1.0f64, 2.0, 3.0];
        let w = [1.0, 1.0, 1.0];
        let mut out = [0.0; 3];
        conv1d_same_forward(&x, &w, 3, 3, &mut out);
        assert_eq!(out, [3.0, 6.0, 5.0]);
    }

    #[test]
    fn bilinear_2x2_to_4x4_closed_form() {
        let x = [0.0f64, 2.0, 4.0, 6.0];
        let rows = bilinear_axis(2, 4);
        let cols = bilinear_axis(2, 4);
        let mut out = [0.0; 16];
        resize_bilinear_plane(&x, 2, &rows, &cols, &mut out);
        let want = [
            0.0, 0.5, 1.5, 2.0, //
            1.0, 1.5, 2.5, 3.0, //
            3.0, 3.5, 4.5, 5.0, //
            4.0, 4.5, 5.5, 6.0,
        ];
        for (g, w) in out.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-12, "{out:?}");
        }
    }

    #[test]
    fn bilinear_identity_is_bit_exact() {
        let x = [0.125f32, -3.5, 7.25, 0.0, 1.0, 2.0];
        let rows = bilinear_axis(2, 2);
        let cols = bilinear_axis(3, 3);
        let mut out = [0.0f32; 6];
        resize_bilinear_plane(&x, 3, &rows, &cols, &mut out);
        assert_eq!(out, x);
    }
}
