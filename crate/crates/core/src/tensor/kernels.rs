//! Row-major dense kernels used by the graph ops.
//!
//! All reductions run in a fixed order so results are reproducible bit for
//! bit on any platform with IEEE-754 doubles.

/// Runs the expression in a function compiled with AVX2 enabled when the
/// CPU has it. Only vector width changes; multiplies and adds are never
/// fused, so both paths give identical bits.
macro_rules! dispatch {
    ($body:expr) => {{
        #[cfg(target_arch = "x86_64")]
        {
            #[target_feature(enable = "avx2")]
            unsafe fn wide(f: impl FnOnce()) {
                f()
            }
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: AVX2 support was verified on this CPU just above.
                unsafe { wide(|| $body) };
                return;
            }
        }
        $body
    }};
}

const MR: usize = 4;
const NR: usize = 8;

/// Register-tiled `out[m×n] (+)= A·b[k×n]` where `a_at(i, p)` reads `A[i][p]`.
/// Every output element accumulates its `k` products in order `p = 0..k`,
/// starting from its old value when `ACC` is set and from zero otherwise.
#[inline(always)]
fn gemm_core<const ACC: bool>(m: usize, k: usize, n: usize, out: &mut [f64], b: &[f64], a_at: impl Fn(usize, usize) -> f64 + Copy) {
    let mut i = 0;
    while i + MR <= m {
        tile_rows::<MR, ACC>(i, k, n, out, b, a_at);
        i += MR;
    }
    while i < m {
        tile_rows::<1, ACC>(i, k, n, out, b, a_at);
        i += 1;
    }
}

#[inline(always)]
fn tile_rows<const R: usize, const ACC: bool>(
    i: usize,
    k: usize,
    n: usize,
    out: &mut [f64],
    b: &[f64],
    a_at: impl Fn(usize, usize) -> f64,
) {
    let mut j = 0;
    while j + NR <= n {
        let mut acc = [[0.0f64; NR]; R];
        if ACC {
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&out[(i + r) * n + j..(i + r) * n + j + NR]);
            }
        }
        for p in 0..k {
            let brow: [f64; NR] = b[p * n + j..p * n + j + NR].try_into().expect("tile width");
            let av: [f64; R] = std::array::from_fn(|r| a_at(i + r, p));
            for r in 0..R {
                for c in 0..NR {
                    acc[r][c] += av[r] * brow[c];
                }
            }
        }
        for (r, row) in acc.iter().enumerate() {
            out[(i + r) * n + j..(i + r) * n + j + NR].copy_from_slice(row);
        }
        j += NR;
    }
    for r in 0..R {
        for jj in j..n {
            let mut s = if ACC { out[(i + r) * n + jj] } else { 0.0 };
            for p in 0..k {
                s += a_at(i + r, p) * b[p * n + jj];
            }
            out[(i + r) * n + jj] = s;
        }
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    dispatch!(gemm_core::<true>(m, k, n, out, b, |i, p| a[i * k + p]));
}

/// `out[m×n] = a[m×k] · b[k×n]`
pub fn gemm_nn_set(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    dispatch!(gemm_core::<false>(m, k, n, out, b, |i, p| a[i * k + p]));
}

fn row(x: &[f64], i: usize, k: usize) -> &[f64] {
    &x[i * k..(i + 1) * k]
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`; each entry is a [`dot`] of two rows.
pub fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    assert!(a.len() >= m * k && b.len() >= n * k && out.len() >= m * n);
    dispatch!(gemm_nt_core(a, b, out, m, k, n));
}

#[inline(always)]
fn gemm_nt_core(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    let mut i = 0;
    while i + 2 <= m {
        let mut j = 0;
        while j + 2 <= n {
            let d = dot_2x2([row(a, i, k), row(a, i + 1, k)], [row(b, j, k), row(b, j + 1, k)]);
            for (r, dr) in d.iter().enumerate() {
                out[(i + r) * n + j] += dr[0];
                out[(i + r) * n + j + 1] += dr[1];
            }
            j += 2;
        }
        if j < n {
            out[i * n + j] += dot(row(a, i, k), row(b, j, k));
            out[(i + 1) * n + j] += dot(row(a, i + 1, k), row(b, j, k));
        }
        i += 2;
    }
    if i < m {
        for j in 0..n {
            out[i * n + j] += dot(row(a, i, k), row(b, j, k));
        }
    }
}

/// `out[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    assert!(a.len() >= k * m && b.len() >= k * n && out.len() >= m * n);
    dispatch!(gemm_core::<true>(m, k, n, out, b, |i, p| a[p * m + i]));
}

/// `out[m×n] = a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn_set(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    assert!(a.len() >= k * m && b.len() >= k * n && out.len() >= m * n);
    dispatch!(gemm_core::<false>(m, k, n, out, b, |i, p| a[p * m + i]));
}

/// Four [`dot`] products sharing loads; each result is bitwise equal to
/// `dot(a[r], b[c])`.
#[inline(always)]
fn dot_2x2(a: [&[f64]; 2], b: [&[f64]; 2]) -> [[f64; 2]; 2] {
    let len = a[0].len();
    let chunks = len / 4;
    let mut acc = [[[0.0f64; 4]; 2]; 2];
    let quads = a[0]
        .chunks_exact(4)
        .zip(a[1].chunks_exact(4))
        .zip(b[0].chunks_exact(4))
        .zip(b[1].chunks_exact(4));
    for (((x0, x1), y0), y1) in quads {
        let (xa, xb) = ([x0, x1], [y0, y1]);
        for r in 0..2 {
            for q in 0..2 {
                for l in 0..4 {
                    acc[r][q][l] += xa[r][l] * xb[q][l];
                }
            }
        }
    }
    let mut out = [[0.0; 2]; 2];
    for r in 0..2 {
        for q in 0..2 {
            let mut tail = 0.0;
            for t in chunks * 4..len {
                tail += a[r][t] * b[q][t];
            }
            let s = &acc[r][q];
            out[r][q] = (s[0] + s[1]) + (s[2] + s[3]) + tail;
        }
    }
    out
}

/// Dot product with four interleaved partial sums (fixed association order).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let (x, y) = (&a[c * 4..c * 4 + 4], &b[c * 4..c * 4 + 4]);
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Geometry of one 2-D convolution (square kernel).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Output size is `floor((n + 2·pad − k) / stride) + 1`; returns `None`
    /// when the kernel does not fit in the padded input or the stride is 0.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        let out = |n: usize| {
            let span = (n + 2 * pad).checked_sub(kernel)?;
            span.checked_div(stride).map(|q| q + 1)
        };
        Some(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: out(height)?,
            out_w: out(width)?,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output columns `lo..hi` whose input column `ox·stride + kj − pad`
    /// lies inside the image.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let (s, pad) = (self.stride, self.pad);
        let lo = if pad > kj { (pad - kj).div_ceil(s) } else { 0 };
        let hi = if self.width + pad > kj {
            ((self.width - 1 + pad - kj) / s + 1).min(self.out_w)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Input row for output row `oy` and kernel row `ki`, if inside the image.
    fn input_row(&self, oy: usize, ki: usize) -> Option<usize> {
        (oy * self.stride + ki)
            .checked_sub(self.pad)
            .filter(|&iy| iy < self.height)
    }

    /// Unfolds one `C×H×W` image into `(C·k·k) × (H'·W')` patch columns.
    pub fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        let (k, hw_out, s) = (self.kernel, self.col_cols(), self.stride);
        for c in 0..self.channels {
            let plane = &img[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * hw_out;
                    let (lo, hi) = self.valid_cols(kj);
                    for oy in 0..self.out_h {
                        let dst = &mut cols[row + oy * self.out_w..row + (oy + 1) * self.out_w];
                        let Some(iy) = self.input_row(oy, ki) else {
                            dst.fill(0.0);
                            continue;
                        };
                        dst[..lo].fill(0.0);
                        dst[hi..].fill(0.0);
                        if lo == hi {
                            continue;
                        }
                        let start = iy * self.width + lo * s + kj - self.pad;
                        if s == 1 {
                            dst[lo..hi].copy_from_slice(&plane[start..start + (hi - lo)]);
                        } else {
                            for (d, x) in dst[lo..hi].iter_mut().zip(plane[start..].iter().step_by(s)) {
                                *d = *x;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatters patch columns back, accumulating.
    pub fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let (k, hw_out, s) = (self.kernel, self.col_cols(), self.stride);
        for c in 0..self.channels {
            let plane = &mut img[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * hw_out;
                    let (lo, hi) = self.valid_cols(kj);
                    if lo == hi {
                        continue;
                    }
                    for oy in 0..self.out_h {
                        let Some(iy) = self.input_row(oy, ki) else {
                            continue;
                        };
                        let src = &cols[row + oy * self.out_w + lo..row + oy * self.out_w + hi];
                        let start = iy * self.width + lo * s + kj - self.pad;
                        for (x, v) in plane[start..].iter_mut().step_by(s).zip(src) {
                            *x += v;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_variants_agree_with_triple_loop() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 17 % 13) as f64 - 6.0) / 4.0).collect();
        let want = naive(&a, &b, m, k, n);

        let mut out = vec![0.0; m * n];
        gemm_nn(&a, &b, &mut out, m, k, n);
        assert!(out.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

        let mut out = vec![0.0; m * n];
        gemm_nt(&a, &transpose(&b, k, n), &mut out, m, k, n);
        assert!(out.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

        let mut out = vec![0.0; m * n];
        gemm_tn(&transpose(&a, m, k), &b, &mut out, m, k, n);
        assert!(out.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn conv_geometry_floors_and_rejects_oversized_kernels() {
        assert!(ConvGeom::new(1, 2, 2, 5, 1, 0).is_none());
        assert!(ConvGeom::new(1, 4, 4, 3, 0, 0).is_none());
        let g = ConvGeom::new(1, 5, 5, 3, 2, 0).unwrap();
        assert_eq!((g.out_h, g.out_w), (2, 2));
        let g = ConvGeom::new(8, 32, 32, 3, 2, 1).unwrap();
        assert_eq!((g.out_h, g.out_w), (16, 16));
        let g = ConvGeom::new(3, 32, 32, 3, 1, 1).unwrap();
        assert_eq!((g.out_h, g.out_w), (32, 32));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom::new(2, 5, 4, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.col_cols())
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let mut cols = vec![0.0; y.len()];
        g.im2col(&x, &mut cols);
        let mut back = vec![0.0; x.len()];
        g.col2im(&y, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
