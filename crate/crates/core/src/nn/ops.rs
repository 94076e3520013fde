//! Dense kernels shared by the layer implementations.
//!
//! Batched image tensors are stored NCHW. Convolutions lower to a single
//! `[C*k*k, N*Ho*Wo]` column matrix so each layer costs one GEMM per pass.

/// `c = alpha * op(a) * op(b) + beta * c` with row-major operands.
///
/// `op(a)` is `m x k`, `op(b)` is `k x n`. When `a_t` is set, `a` is stored
/// as `k x m`; likewise for `b_t`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    beta: f32,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe exactly the buffers whose lengths are
    // asserted, and `c` is a distinct mutable slice of length m*n.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a strided 2-D window sweep over one image plane.
#[derive(Clone, Copy, Debug)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
}

/// Lowers `batch` NCHW images into a `[C*k*k, batch*out_h*out_w]` matrix.
pub fn im2col(x: &[f32], batch: usize, g: &Window) -> Vec<f32> {
    let plane = g.height * g.width;
    let opix = g.out_h * g.out_w;
    let cols_n = batch * opix;
    let mut cols = vec![0.0f32; g.rows() * cols_n];
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst_row = &mut cols[row * cols_n..(row + 1) * cols_n];
                for n in 0..batch {
                    let src = &x[(n * g.channels + c) * plane..(n * g.channels + c + 1) * plane];
                    let dst = &mut dst_row[n * opix..(n + 1) * opix];
                    for oi in 0..g.out_h {
                        let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                        if ii < 0 || ii >= g.height as isize {
                            continue;
                        }
                        let src_row = &src[ii as usize * g.width..(ii as usize + 1) * g.width];
                        for oj in 0..g.out_w {
                            let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                            if jj >= 0 && jj < g.width as isize {
                                dst[oi * g.out_w + oj] = src_row[jj as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into NCHW images.
pub fn col2im(cols: &[f32], batch: usize, g: &Window) -> Vec<f32> {
    let plane = g.height * g.width;
    let opix = g.out_h * g.out_w;
    let cols_n = batch * opix;
    let mut x = vec![0.0f32; batch * g.channels * plane];
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src_row = &cols[row * cols_n..(row + 1) * cols_n];
                for n in 0..batch {
                    let dst = &mut x[(n * g.channels + c) * plane..(n * g.channels + c + 1) * plane];
                    let src = &src_row[n * opix..(n + 1) * opix];
                    for oi in 0..g.out_h {
                        let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                        if ii < 0 || ii >= g.height as isize {
                            continue;
                        }
                        let base = ii as usize * g.width;
                        for oj in 0..g.out_w {
                            let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                            if jj >= 0 && jj < g.width as isize {
                                dst[base + jj as usize] += src[oi * g.out_w + oj];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[N, C, P]` -> `[C, N, P]`.
pub fn batch_to_channel_major(x: &[f32], batch: usize, channels: usize, pix: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for n in 0..batch {
        for c in 0..channels {
            let src = &x[(n * channels + c) * pix..(n * channels + c + 1) * pix];
            out[(c * batch + n) * pix..(c * batch + n + 1) * pix].copy_from_slice(src);
        }
    }
    out
}

/// `[C, N, P]` -> `[N, C, P]`.
pub fn channel_to_batch_major(x: &[f32], batch: usize, channels: usize, pix: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for c in 0..channels {
        for n in 0..batch {
            let src = &x[(c * batch + n) * pix..(c * batch + n + 1) * pix];
            out[(n * channels + c) * pix..(n * channels + c + 1) * pix].copy_from_slice(src);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f32], b: &[f32]) -> Vec<f32> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(r: usize, c: usize, a: &[f32]) -> Vec<f32> {
        let mut t = vec![0.0; a.len()];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_for_all_transpose_modes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f32> = (0..m * k).map(|v| v as f32 * 0.5 - 2.0).collect();
        let b: Vec<f32> = (0..k * n).map(|v| (v as f32).sin()).collect();
        let want = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (aa, a_t) in [(&a, false), (&at, true)] {
            for (bb, b_t) in [(&b, false), (&bt, true)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, aa, a_t, bb, b_t, &mut c, 0.0);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = Window { channels: 2, height: 5, width: 5, kernel: 3, stride: 2, pad: 1, out_h: 3, out_w: 3 };
        let batch = 2;
        let x: Vec<f32> = (0..batch * 2 * 25).map(|v| ((v * 7) % 11) as f32 - 5.0).collect();
        let y: Vec<f32> = (0..g.rows() * batch * 9).map(|v| ((v * 3) % 7) as f32 - 3.0).collect();
        let cols = im2col(&x, batch, &g);
        let back = col2im(&y, batch, &g);
        let lhs: f32 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f32 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-3);
    }

    #[test]
    fn layout_permutations_round_trip() {
        let x: Vec<f32> = (0..2 * 3 * 4).map(|v| v as f32).collect();
        let cm = batch_to_channel_major(&x, 2, 3, 4);
        assert_eq!(channel_to_batch_major(&cm, 2, 3, 4), x);
    }
}
