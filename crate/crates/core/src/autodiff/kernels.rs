//! Dense linear-algebra kernels behind the convolution and dense ops.

/// Strided view of a row-major (or transposed) matrix operand.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> View<'a> {
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        Self { data, row_stride: cols, col_stride: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self { data, row_stride: 1, col_stride: cols }
    }
}

/// `c (m×n) = a (m×k) · b (k×n)`, or `c += a·b` when `accumulate` is set.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, c: &mut [f64], accumulate: bool) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    assert!((m - 1) * a.row_stride + (k - 1) * a.col_stride < a.data.len());
    assert!((k - 1) * b.row_stride + (n - 1) * b.col_stride < b.data.len());
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a strided 1-D convolution with zero "same" padding.
///
/// `len_in`/`len_out` refer to the forward convolution; a transposed
/// convolution reuses the same geometry with the roles of the two lengths
/// swapped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn same(batch: usize, len_in: usize, kernel: usize, stride: usize) -> Self {
        let len_out = len_in.div_ceil(stride);
        let total = ((len_out.saturating_sub(1)) * stride + kernel).saturating_sub(len_in);
        Self { batch, len_in, len_out, kernel, stride, pad: total / 2 }
    }

    /// Output positions `t` whose tap `k` lands inside the input.
    #[inline]
    fn valid(&self, k: usize) -> std::ops::Range<usize> {
        // t·stride + k − pad ∈ [0, len_in)
        let lo = self.pad.saturating_sub(k).div_ceil(self.stride);
        let hi = (self.len_in + self.pad).saturating_sub(k).div_ceil(self.stride).min(self.len_out);
        lo..hi.max(lo)
    }
}

/// Unfolds `x` `[batch, channels, len_in]` into `[channels·kernel, batch·len_out]`.
pub(crate) fn im2col(x: &[f64], channels: usize, g: &ConvGeom) -> Vec<f64> {
    let width = g.batch * g.len_out;
    let mut cols = vec![0.0; channels * g.kernel * width];
    for c in 0..channels {
        for k in 0..g.kernel {
            let ts = g.valid(k);
            if ts.is_empty() {
                continue;
            }
            let row = &mut cols[(c * g.kernel + k) * width..(c * g.kernel + k + 1) * width];
            for b in 0..g.batch {
                let src = &x[(b * channels + c) * g.len_in..(b * channels + c + 1) * g.len_in];
                let dst = &mut row[b * g.len_out..(b + 1) * g.len_out];
                let first = ts.start * g.stride + k - g.pad;
                for (d, s) in dst[ts.clone()].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                    *d = *s;
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
pub(crate) fn col2im(cols: &[f64], channels: usize, g: &ConvGeom, x: &mut [f64]) {
    let width = g.batch * g.len_out;
    for c in 0..channels {
        for k in 0..g.kernel {
            let ts = g.valid(k);
            if ts.is_empty() {
                continue;
            }
            let row = &cols[(c * g.kernel + k) * width..(c * g.kernel + k + 1) * width];
            for b in 0..g.batch {
                let dst = &mut x[(b * channels + c) * g.len_in..(b * channels + c + 1) * g.len_in];
                let src = &row[b * g.len_out..(b + 1) * g.len_out];
                let first = ts.start * g.stride + k - g.pad;
                for (d, s) in dst[first..].iter_mut().step_by(g.stride).zip(&src[ts.clone()]) {
                    *d += s;
                }
            }
        }
    }
}

/// `tanh` via a branch-free `exp`; absolute error below 1e-15.
pub(crate) fn tanh(x: f64) -> f64 {
    let a = (2.0 * x.abs()).min(40.0);
    (1.0 - 2.0 / (exp_small(a) + 1.0)).copysign(x)
}

/// `exp(a)` for `a` in `[0, 40]`: Cody-Waite reduction and a degree-13 Taylor polynomial.
#[inline]
fn exp_small(a: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // Round-to-nearest without a libm call.
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let n = (a * std::f64::consts::LOG2_E + SHIFTER) - SHIFTER;
    let r = (a - n * LN2_HI) - n * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    for d in [479_001_600.0, 39_916_800.0, 3_628_800.0, 362_880.0, 40_320.0, 5_040.0, 720.0, 120.0, 24.0, 6.0, 2.0, 1.0, 1.0] {
        p = p * r + 1.0 / d;
    }
    p * f64::from_bits(((n as i64 + 1023) as u64) << 52)
}

/// `[batch, channels, len]` → `[channels, batch·len]`.
pub(crate) fn to_channel_major(x: &[f64], batch: usize, channels: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let src = &x[(b * channels + c) * len..(b * channels + c + 1) * len];
            out[c * batch * len + b * len..c * batch * len + (b + 1) * len].copy_from_slice(src);
        }
    }
    out
}

/// `[channels, batch·len]` → `[batch, channels, len]`.
pub(crate) fn from_channel_major(x: &[f64], batch: usize, channels: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for c in 0..channels {
        for b in 0..batch {
            let src = &x[c * batch * len + b * len..c * batch * len + (b + 1) * len];
            out[(b * channels + c) * len..(b * channels + c + 1) * len].copy_from_slice(src);
        }
    }
    out
}
