//! Raw array kernels shared by the forward and backward passes.

/// Logical operand of a matrix product: a row-major `rows × cols` buffer,
/// optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub trans: bool,
}

impl MatRef<'_> {
    fn logical(&self) -> (usize, usize, isize, isize) {
        if self.trans {
            (self.cols, self.rows, 1, self.cols as isize)
        } else {
            (self.rows, self.cols, self.cols as isize, 1)
        }
    }
}

const SMALL_GEMM: usize = 4096;

/// `out (+)= op(a) · op(b)`; `out` is row-major `m × n`.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, out: &mut [f64], accumulate: bool) {
    let (m, k, rsa, csa) = a.logical();
    let (kb, n, rsb, csb) = b.logical();
    debug_assert_eq!(k, kb);
    debug_assert_eq!(out.len(), m * n);
    if m * n * k <= SMALL_GEMM {
        if !accumulate {
            out.fill(0.0);
        }
        let at = |i: usize, p: usize| a.data[(i as isize * rsa + p as isize * csa) as usize];
        if !b.trans {
            // Row i of the output accumulates scaled rows of b.
            for i in 0..m {
                let row = &mut out[i * n..][..n];
                for p in 0..k {
                    let s = at(i, p);
                    for (o, v) in row.iter_mut().zip(&b.data[p * n..][..n]) {
                        *o += s * v;
                    }
                }
            }
        } else if !a.trans {
            for i in 0..m {
                let row = &a.data[i * k..][..k];
                for j in 0..n {
                    out[i * n + j] += dot(row, &b.data[j * k..][..k]);
                }
            }
        } else {
            for i in 0..m {
                for j in 0..n {
                    out[i * n + j] += (0..k).map(|p| at(i, p) * b.data[j * k + p]).sum::<f64>();
                }
            }
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: strides describe in-bounds row-major buffers whose lengths were
    // validated by the caller (`rows * cols` for each operand, `m * n` for out).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(p, q)| p * q).sum();
    for (p, q) in xc.zip(yc) {
        for l in 0..4 {
            acc[l] += p[l] * q[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Splits `shape` around `axis` into (outer, len, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for l in 0..len {
                max = max.max(x[base + l * inner]);
            }
            let mut total = 0.0;
            for l in 0..len {
                let e = (x[base + l * inner] - max).exp();
                y[base + l * inner] = e;
                total += e;
            }
            for l in 0..len {
                y[base + l * inner] /= total;
            }
        }
    }
    y
}

pub(crate) fn softmax_backward(y: &[f64], dy: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut dx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let dot: f64 = (0..len)
                .map(|l| y[base + l * inner] * dy[base + l * inner])
                .sum();
            for l in 0..len {
                let idx = base + l * inner;
                dx[idx] = y[idx] * (dy[idx] - dot);
            }
        }
    }
    dx
}

/// True 1-D convolution `y[b,o,t] = bias[o] + Σ_c Σ_k w[o,c,k] · x̃[b,c,t+K-1-k]`
/// where `x̃` is `x` left-padded with `pad` zeros.
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub len: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub pad: usize,
}

impl ConvDims {
    pub fn out_len(&self) -> usize {
        self.len + self.pad + 1 - self.kernel
    }

    /// Index into the unpadded input for output position `t` and tap `k`.
    #[inline]
    fn src(&self, t: usize, k: usize) -> Option<usize> {
        let j = t + self.kernel - 1 - k;
        j.checked_sub(self.pad).filter(|&s| s < self.len)
    }
}

pub(crate) fn conv1d(x: &[f64], w: &[f64], bias: Option<&[f64]>, d: &ConvDims) -> Vec<f64> {
    let lo = d.out_len();
    let mut y = vec![0.0; d.batch * d.c_out * lo];
    for b in 0..d.batch {
        for o in 0..d.c_out {
            let row = &mut y[(b * d.c_out + o) * lo..][..lo];
            if let Some(bias) = bias {
                row.fill(bias[o]);
            }
            for c in 0..d.c_in {
                let xs = &x[(b * d.c_in + c) * d.len..][..d.len];
                for k in 0..d.kernel {
                    let wv = w[(o * d.c_in + c) * d.kernel + k];
                    for (t, out) in row.iter_mut().enumerate() {
                        if let Some(s) = d.src(t, k) {
                            *out += wv * xs[s];
                        }
                    }
                }
            }
        }
    }
    y
}

/// Returns (dx, dw, dbias).
pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    d: &ConvDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let lo = d.out_len();
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; d.c_out];
    for b in 0..d.batch {
        for o in 0..d.c_out {
            let g = &dy[(b * d.c_out + o) * lo..][..lo];
            db[o] += g.iter().sum::<f64>();
            for c in 0..d.c_in {
                let xoff = (b * d.c_in + c) * d.len;
                for k in 0..d.kernel {
                    let widx = (o * d.c_in + c) * d.kernel + k;
                    let wv = w[widx];
                    let mut acc = 0.0;
                    for (t, &gv) in g.iter().enumerate() {
                        if let Some(s) = d.src(t, k) {
                            acc += gv * x[xoff + s];
                            dx[xoff + s] += gv * wv;
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    (dx, dw, db)
}

/// Bin boundaries for adaptive average pooling of `len` into `bins` cells.
pub(crate) fn pool_bins(len: usize, bins: usize) -> Vec<(usize, usize)> {
    (0..bins)
        .map(|i| (i * len / bins, ((i + 1) * len).div_ceil(bins)))
        .collect()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Output `y` with `y.shape[i] = shape[perm[i]]`.
pub(crate) fn permute(x: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut y = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..x.len() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        y.push(x[off]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (y, out_shape)
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
