//! Forward and backward kernels for the tape operations.
//!
//! Every reduction runs in a fixed order so that repeated passes over the
//! same values are bit-identical.

use crate::scalar::Scalar;

/// Geometry of one 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }

    /// Rows of the unfolded patch matrix.
    pub fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output columns `lo..hi` whose input column `ox + shift` lies in `0..w`.
fn valid_range(ow: usize, w: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).clamp(0, ow as isize) as usize;
    let hi = (w as isize - shift).clamp(lo as isize, ow as isize) as usize;
    (lo, hi)
}

/// Unfolds one image `[c_in, h, w]` into `[patch_len, out_plane]`.
fn im2col<T: Scalar>(g: &ConvGeom, img: &[T], cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for ci in 0..g.c_in {
        let chan = &img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &chan[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        // contiguous run with zero fringes
                        let (lo, hi) = valid_range(ow, g.w, kj as isize - g.pad as isize);
                        out_row[..lo].fill(T::zero());
                        out_row[hi..].fill(T::zero());
                        let start = (lo + kj) - g.pad;
                        out_row[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            *o = if ix >= 0 && (ix as usize) < g.w {
                                src[ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Folds patch gradients back onto an image gradient (accumulating).
fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], img: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for ci in 0..g.c_in {
        let chan = &mut img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut chan[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let in_row = &src[oy * ow..(oy + 1) * ow];
                    if g.stride == 1 {
                        let (lo, hi) = valid_range(ow, g.w, kj as isize - g.pad as isize);
                        let start = (lo + kj) - g.pad;
                        for (d, &v) in dst[start..start + hi - lo].iter_mut().zip(&in_row[lo..hi]) {
                            *d += v;
                        }
                    } else {
                        for (ox, &v) in in_row.iter().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && (ix as usize) < g.w {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Columns of the register tile.
const NR: usize = 8;
const ROWS: usize = 4;

/// `c[m×n] += a[m×kk] · b[kk×n]`, where `a(i, j) = a[i·a_rs + j·a_cs]` and
/// `b`, `c` are row-major. Each output accumulates its `kk` terms in
/// ascending order, exactly like a sequence of row `axpy`s.
#[allow(clippy::too_many_arguments)]
fn gemm_acc<T: Scalar>(m: usize, n: usize, kk: usize, a: &[T], a_rs: usize, a_cs: usize, b: &[T], c: &mut [T]) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        return unsafe { gemm_acc_avx2(m, n, kk, a, a_rs, a_cs, b, c) };
    }
    gemm_acc_impl(m, n, kk, a, a_rs, a_cs, b, c)
}

// Wider registers only; no fused multiply-add, so results match the
// portable path bit for bit.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_acc_avx2<T: Scalar>(m: usize, n: usize, kk: usize, a: &[T], a_rs: usize, a_cs: usize, b: &[T], c: &mut [T]) {
    gemm_acc_impl(m, n, kk, a, a_rs, a_cs, b, c)
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn gemm_acc_impl<T: Scalar>(m: usize, n: usize, kk: usize, a: &[T], a_rs: usize, a_cs: usize, b: &[T], c: &mut [T]) {
    let n_full = n - n % NR;
    let m_full = m - m % ROWS;
    for n0 in (0..n_full).step_by(NR) {
        for m0 in (0..m_full).step_by(ROWS) {
            let mut acc = [[T::zero(); NR]; ROWS];
            for (i, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&c[(m0 + i) * n + n0..(m0 + i) * n + n0 + NR]);
            }
            for k in 0..kk {
                let bv: &[T; NR] = b[k * n + n0..k * n + n0 + NR].try_into().expect("panel");
                let base = m0 * a_rs + k * a_cs;
                for (i, row) in acc.iter_mut().enumerate() {
                    let w = a[base + i * a_rs];
                    for j in 0..NR {
                        row[j] += w * bv[j];
                    }
                }
            }
            for (i, row) in acc.iter().enumerate() {
                c[(m0 + i) * n + n0..(m0 + i) * n + n0 + NR].copy_from_slice(row);
            }
        }
        for i in m_full..m {
            for k in 0..kk {
                axpy(a[i * a_rs + k * a_cs], &b[k * n + n0..k * n + n0 + NR], &mut c[i * n + n0..i * n + n0 + NR]);
            }
        }
    }
    if n_full < n {
        for i in 0..m {
            for k in 0..kk {
                axpy(a[i * a_rs + k * a_cs], &b[k * n + n_full..(k + 1) * n], &mut c[i * n + n_full..(i + 1) * n]);
            }
        }
    }
}

/// `c[m×n] += a[m×kk] · b[n×kk]ᵀ` with both operands row-major; four rows of
/// `a` share each pass over a row of `b`. Each output is a [`dot`].
fn gemm_nt_acc<T: Scalar>(m: usize, n: usize, kk: usize, a: &[T], b: &[T], c: &mut [T]) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        return unsafe { gemm_nt_acc_avx2(m, n, kk, a, b, c) };
    }
    gemm_nt_acc_impl(m, n, kk, a, b, c)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_nt_acc_avx2<T: Scalar>(m: usize, n: usize, kk: usize, a: &[T], b: &[T], c: &mut [T]) {
    gemm_nt_acc_impl(m, n, kk, a, b, c)
}

#[inline(always)]
fn gemm_nt_acc_impl<T: Scalar>(m: usize, n: usize, kk: usize, a: &[T], b: &[T], c: &mut [T]) {
    let mut i = 0;
    while i + ROWS <= m {
        let rows: [&[T]; ROWS] = std::array::from_fn(|r| &a[(i + r) * kk..(i + r + 1) * kk]);
        for j in 0..n {
            let d = dot4(rows, &b[j * kk..(j + 1) * kk]);
            for r in 0..ROWS {
                c[(i + r) * n + j] += d[r];
            }
        }
        i += ROWS;
    }
    for i in i..m {
        let row = &a[i * kk..(i + 1) * kk];
        for j in 0..n {
            c[i * n + j] += dot(row, &b[j * kk..(j + 1) * kk]);
        }
    }
}

/// Four dot products against a shared right operand; each has the same
/// accumulation order as [`dot`].
#[inline(always)]
fn dot4<T: Scalar>(a: [&[T]; ROWS], b: &[T]) -> [T; ROWS] {
    let n = b.len();
    let full = n - n % 8;
    let mut acc = [[T::zero(); 8]; ROWS];
    let mut k = 0;
    while k < full {
        let bc: &[T; 8] = b[k..k + 8].try_into().expect("chunk");
        for r in 0..ROWS {
            let ac: &[T; 8] = a[r][k..k + 8].try_into().expect("chunk");
            for l in 0..8 {
                acc[r][l] += ac[l] * bc[l];
            }
        }
        k += 8;
    }
    std::array::from_fn(|r| {
        let mut tail = T::zero();
        for l in full..n {
            tail += a[r][l] * b[l];
        }
        let x = &acc[r];
        ((x[0] + x[4]) + (x[1] + x[5])) + ((x[2] + x[6]) + (x[3] + x[7])) + tail
    })
}

/// Dot product with eight interleaved accumulators combined in a fixed order.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub(crate) fn sum<T: Scalar>(a: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.chunks_exact(8);
    let rem = chunks.remainder();
    for x in chunks {
        for i in 0..8 {
            acc[i] += x[i];
        }
    }
    let mut tail = T::zero();
    for &x in rem {
        tail += x;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub fn conv2d_forward<T: Scalar>(g: &ConvGeom, input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let plane = g.out_plane();
    let k = g.patch_len();
    let in_img = g.c_in * g.h * g.w;
    let out_img = g.c_out * plane;
    let mut out = vec![T::zero(); g.batch * out_img];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * plane]
    };
    for b in 0..g.batch {
        let img = &input[b * in_img..(b + 1) * in_img];
        let patches: &[T] = if g.is_pointwise() {
            img
        } else {
            im2col(g, img, &mut cols);
            &cols
        };
        let dst = &mut out[b * out_img..(b + 1) * out_img];
        for co in 0..g.c_out {
            dst[co * plane..(co + 1) * plane].fill(bias[co]);
        }
        gemm_acc(g.c_out, plane, k, weight, k, 1, patches, dst);
    }
    out
}

/// Gradients of a convolution. `grad_input` is only produced when requested.
pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    want_input: bool,
) -> ConvGrads<T> {
    let plane = g.out_plane();
    let k = g.patch_len();
    let in_img = g.c_in * g.h * g.w;
    let out_img = g.c_out * plane;
    let mut gw = vec![T::zero(); g.c_out * k];
    let mut gb = vec![T::zero(); g.c_out];
    let mut gi = want_input.then(|| vec![T::zero(); g.batch * in_img]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * plane]
    };
    let mut dcols = if want_input {
        vec![T::zero(); k * plane]
    } else {
        Vec::new()
    };
    for b in 0..g.batch {
        let img = &input[b * in_img..(b + 1) * in_img];
        let patches: &[T] = if g.is_pointwise() {
            img
        } else {
            im2col(g, img, &mut cols);
            &cols
        };
        let dy = &grad_out[b * out_img..(b + 1) * out_img];
        for co in 0..g.c_out {
            gb[co] += sum(&dy[co * plane..(co + 1) * plane]);
        }
        gemm_nt_acc(g.c_out, k, plane, dy, patches, &mut gw);
        if let Some(gi) = gi.as_mut() {
            dcols.fill(T::zero());
            gemm_acc(k, plane, g.c_out, weight, 1, k, dy, &mut dcols);
            let dst = &mut gi[b * in_img..(b + 1) * in_img];
            if g.is_pointwise() {
                for (d, &v) in dst.iter_mut().zip(&dcols) {
                    *d += v;
                }
            } else {
                col2im(g, &dcols, dst);
            }
        }
    }
    ConvGrads {
        input: gi,
        weight: gw,
        bias: gb,
    }
}

/// Per-channel mean and biased variance over `(B, H, W)`.
pub fn channel_stats<T: Scalar>(x: &[T], batch: usize, channels: usize, plane: usize) -> (Vec<T>, Vec<T>) {
    let n = T::from_usize_lossy(batch * plane);
    let mut mean = vec![T::zero(); channels];
    let mut var = vec![T::zero(); channels];
    for c in 0..channels {
        let mut s = T::zero();
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            s += sum(&x[off..off + plane]);
        }
        let m = s / n;
        let mut v = T::zero();
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            v += x[off..off + plane].iter().map(|&a| (a - m) * (a - m)).sum::<T>();
        }
        mean[c] = m;
        var[c] = v / n;
    }
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_on_odd_lengths() {
        for n in [0usize, 1, 7, 8, 9, 17, 64, 65] {
            let a: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).cos()).collect();
            let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((dot(&a, &b) - naive).abs() < 1e-12);
            assert!((sum(&a) - a.iter().sum::<f64>()).abs() < 1e-12);
        }
    }

    #[test]
    fn blocked_products_match_naive() {
        for (m, n, kk) in [(1, 1, 1), (4, 64, 3), (5, 70, 9), (9, 130, 17), (3, 5, 2)] {
            let a: Vec<f64> = (0..m * kk).map(|i| (i as f64 * 0.7).sin()).collect();
            let b: Vec<f64> = (0..kk * n).map(|i| (i as f64 * 0.3).cos()).collect();
            let mut c = vec![0.5; m * n];
            gemm_acc(m, n, kk, &a, kk, 1, &b, &mut c);
            let mut ct = vec![0.5; m * n];
            // same product with `a` stored transposed
            let at: Vec<f64> = (0..kk * m).map(|i| a[(i % m) * kk + i / m]).collect();
            gemm_acc(m, n, kk, &at, 1, m, &b, &mut ct);
            let bt: Vec<f64> = (0..n * kk).map(|i| b[(i % kk) * n + i / kk]).collect();
            let mut cnt = vec![0.5; m * n];
            gemm_nt_acc(m, n, kk, &a, &bt, &mut cnt);
            for i in 0..m {
                for j in 0..n {
                    let naive = 0.5 + (0..kk).map(|l| a[i * kk + l] * b[l * n + j]).sum::<f64>();
                    assert!((c[i * n + j] - naive).abs() < 1e-12);
                    assert_eq!(c[i * n + j], ct[i * n + j]);
                    assert!((cnt[i * n + j] - naive).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), c> == <x, col2im(c)> for any x, c
        let g = ConvGeom {
            batch: 1,
            c_in: 2,
            c_out: 1,
            h: 5,
            w: 4,
            kh: 3,
            kw: 3,
            stride: 2,
            pad: 1,
        };
        let x: Vec<f64> = (0..2 * 5 * 4).map(|i| (i as f64).sin()).collect();
        let c: Vec<f64> = (0..g.patch_len() * g.out_plane())
            .map(|i| (i as f64 * 0.3).cos())
            .collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&g, &x, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&g, &c, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
