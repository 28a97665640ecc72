//! Dense kernels: row-major GEMM and the im2col / col2im pair.

/// `C = alpha * op(A) * op(B) + beta * C` on contiguous row-major buffers.
///
/// `op(A)` is `m x k`: `A` is stored `m x k`, or `k x m` when `ta`.
/// `op(B)` is `k x n`: `B` is stored `k x n`, or `n x k` when `tb`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(ta: bool, tb: bool, m: usize, n: usize, k: usize, alpha: f32, a: &[f32], b: &[f32], beta: f32, c: &mut [f32]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides address only elements inside the length-checked slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
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

/// Output extent of a convolution along one axis.
pub fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(size + 2 * pad >= k, "kernel {k} larger than padded input {size}+2*{pad}");
    (size + 2 * pad - k) / stride + 1
}

/// Geometry shared by im2col and col2im.
#[derive(Debug, Clone, Copy)]
pub struct Window {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Window {
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self {
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho: conv_out(h, k, stride, pad),
            wo: conv_out(w, k, stride, pad),
        }
    }

    pub fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Valid output-column range `[lo, hi)` for kernel column `kj`.
    fn ox_range(&self, kj: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kj as isize - self.pad as isize;
        // ix = ox * s + off must satisfy 0 <= ix < w
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi = ((self.w as isize - off) + s - 1) / s;
        (lo.max(0) as usize, (hi.max(0) as usize).min(self.wo))
    }
}

/// Unfold a `C x H x W` image into a `(C*k*k) x (Ho*Wo)` matrix, zero padded.
pub fn im2col(img: &[f32], win: &Window, cols: &mut [f32]) {
    let (ho, wo, k, s) = (win.ho, win.wo, win.k, win.stride);
    debug_assert_eq!(cols.len(), win.rows() * win.cols());
    for ci in 0..win.c {
        let plane = &img[ci * win.h * win.w..(ci + 1) * win.h * win.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ci * k + ki) * k + kj) * ho * wo;
                let (lo, hi) = win.ox_range(kj);
                for oy in 0..ho {
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    let iy = (oy * s + ki) as isize - win.pad as isize;
                    if iy < 0 || iy >= win.h as isize || lo >= hi {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * win.w..(iy as usize + 1) * win.w];
                    dst[..lo].fill(0.0);
                    dst[hi..].fill(0.0);
                    let ix0 = lo * s + kj - win.pad;
                    if s == 1 {
                        dst[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                    } else {
                        for (j, d) in dst[lo..hi].iter_mut().enumerate() {
                            *d = src[ix0 + j * s];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into a `C x H x W` image.
pub fn col2im(cols: &[f32], win: &Window, img: &mut [f32]) {
    let (ho, wo, k, s) = (win.ho, win.wo, win.k, win.stride);
    debug_assert_eq!(cols.len(), win.rows() * win.cols());
    for ci in 0..win.c {
        let plane = &mut img[ci * win.h * win.w..(ci + 1) * win.h * win.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ci * k + ki) * k + kj) * ho * wo;
                let (lo, hi) = win.ox_range(kj);
                if lo >= hi {
                    continue;
                }
                for oy in 0..ho {
                    let iy = (oy * s + ki) as isize - win.pad as isize;
                    if iy < 0 || iy >= win.h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                    let dst = &mut plane[iy as usize * win.w..(iy as usize + 1) * win.w];
                    let ix0 = lo * s + kj - win.pad;
                    if s == 1 {
                        for (d, v) in dst[ix0..ix0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                            *d += v;
                        }
                    } else {
                        for (j, v) in src[lo..hi].iter().enumerate() {
                            dst[ix0 + j * s] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Reflect index `i` (possibly negative or past the end) into `[0, n)`.
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}
