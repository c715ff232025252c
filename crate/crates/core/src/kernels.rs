//! Forward and backward kernels over raw slices.
//!
//! All layouts are `[batch, channel, row, col]`. Accumulation order is fixed,
//! so identical inputs give bit-identical outputs.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.pad - self.kw) / self.stride + 1
    }

    /// Rows of the unfolded patch matrix.
    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// `c = a * b + beta * c` for row-major `a: m×k`, `b: k×n`, with optional transposition
/// expressed through strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe in-bounds views of `a` (m×k), `b` (k×n) and
    // `c` (m×n, row-major) as checked by the callers' shape validation.
    unsafe {
        matrixmultiply::dgemm(
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

fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    for ci in 0..g.in_ch {
        let plane = &x[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, cols: &[f64], dx: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    for ci in 0..g.in_ch {
        let plane = &mut dx[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero padding. Returns the output and the unfolded
/// patches (kept for the weight gradient).
pub fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], bias: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = g.patch_len();
    let p = g.out_pixels();
    let in_len = g.in_ch * g.height * g.width;
    let mut cols = vec![0.0; g.batch * k * p];
    let mut out = vec![0.0; g.batch * g.out_ch * p];
    for b in 0..g.batch {
        let cb = &mut cols[b * k * p..(b + 1) * k * p];
        im2col(g, &x[b * in_len..(b + 1) * in_len], cb);
        let ob = &mut out[b * g.out_ch * p..(b + 1) * g.out_ch * p];
        for (co, row) in ob.chunks_mut(p).enumerate() {
            row.fill(bias[co]);
        }
        gemm(
            g.out_ch,
            k,
            p,
            w,
            (k as isize, 1),
            cb,
            (p as isize, 1),
            1.0,
            ob,
        );
    }
    (out, cols)
}

/// Accumulates gradients into whichever of `dx`, `dw`, `db` are present.
pub fn conv2d_backward(
    g: &ConvGeom,
    w: &[f64],
    cols: &[f64],
    gout: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let k = g.patch_len();
    let p = g.out_pixels();
    let in_len = g.in_ch * g.height * g.width;
    if let Some(dw) = dw {
        for b in 0..g.batch {
            let gb = &gout[b * g.out_ch * p..(b + 1) * g.out_ch * p];
            let cb = &cols[b * k * p..(b + 1) * k * p];
            // dW (co×k) += gout (co×p) · colsᵀ (p×k)
            gemm(
                g.out_ch,
                p,
                k,
                gb,
                (p as isize, 1),
                cb,
                (1, p as isize),
                1.0,
                dw,
            );
        }
    }
    if let Some(db) = db {
        for b in 0..g.batch {
            let gb = &gout[b * g.out_ch * p..(b + 1) * g.out_ch * p];
            for (co, row) in gb.chunks(p).enumerate() {
                db[co] += row.iter().fold(0.0, |a, &v| a + v);
            }
        }
    }
    if let Some(dx) = dx {
        let mut dcols = vec![0.0; k * p];
        for b in 0..g.batch {
            let gb = &gout[b * g.out_ch * p..(b + 1) * g.out_ch * p];
            // dcols (k×p) = Wᵀ (k×co) · gout (co×p)
            gemm(
                k,
                g.out_ch,
                p,
                w,
                (1, k as isize),
                gb,
                (p as isize, 1),
                0.0,
                &mut dcols,
            );
            col2im(g, &dcols, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SepGeom {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub taps: usize,
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Per-pixel separable filtering with edge-replicated borders:
/// `out(y,x) = Σ_u kv[u](y,x) Σ_v kh[v](y,x) frame(y+u-r, x+v-r)`.
pub fn local_sep_conv_forward(g: &SepGeom, frame: &[f64], kv: &[f64], kh: &[f64]) -> Vec<f64> {
    let (h, w, n) = (g.height, g.width, g.taps);
    let r = (n / 2) as isize;
    let hw = h * w;
    let mut out = vec![0.0; g.batch * g.channels * hw];
    let mut tv = vec![0.0; n];
    let mut th = vec![0.0; n];
    for b in 0..g.batch {
        for y in 0..h {
            for x in 0..w {
                let pix = y * w + x;
                for u in 0..n {
                    tv[u] = kv[(b * n + u) * hw + pix];
                    th[u] = kh[(b * n + u) * hw + pix];
                }
                for c in 0..g.channels {
                    let plane = &frame[(b * g.channels + c) * hw..(b * g.channels + c + 1) * hw];
                    let mut acc = 0.0;
                    for (u, &wv) in tv.iter().enumerate() {
                        let row = clamp_index(y as isize + u as isize - r, h) * w;
                        let mut hs = 0.0;
                        for (v, &wh) in th.iter().enumerate() {
                            hs += wh * plane[row + clamp_index(x as isize + v as isize - r, w)];
                        }
                        acc += wv * hs;
                    }
                    out[(b * g.channels + c) * hw + pix] = acc;
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn local_sep_conv_backward(
    g: &SepGeom,
    frame: &[f64],
    kv: &[f64],
    kh: &[f64],
    gout: &[f64],
    mut dframe: Option<&mut [f64]>,
    mut dkv: Option<&mut [f64]>,
    mut dkh: Option<&mut [f64]>,
) {
    let (h, w, n) = (g.height, g.width, g.taps);
    let r = (n / 2) as isize;
    let hw = h * w;
    let mut tv = vec![0.0; n];
    let mut th = vec![0.0; n];
    let mut colsum = vec![0.0; n];
    let mut rows = vec![0usize; n];
    let mut cols = vec![0usize; n];
    for b in 0..g.batch {
        for y in 0..h {
            for x in 0..w {
                let pix = y * w + x;
                for u in 0..n {
                    tv[u] = kv[(b * n + u) * hw + pix];
                    th[u] = kh[(b * n + u) * hw + pix];
                    rows[u] = clamp_index(y as isize + u as isize - r, h);
                    cols[u] = clamp_index(x as isize + u as isize - r, w);
                }
                for c in 0..g.channels {
                    let base = (b * g.channels + c) * hw;
                    let go = gout[base + pix];
                    let plane = &frame[base..base + hw];
                    colsum.fill(0.0);
                    for u in 0..n {
                        let mut hs = 0.0;
                        for v in 0..n {
                            let f = plane[rows[u] * w + cols[v]];
                            hs += th[v] * f;
                            colsum[v] += tv[u] * f;
                        }
                        if let Some(d) = dkv.as_deref_mut() {
                            d[(b * n + u) * hw + pix] += go * hs;
                        }
                    }
                    if let Some(d) = dkh.as_deref_mut() {
                        for v in 0..n {
                            d[(b * n + v) * hw + pix] += go * colsum[v];
                        }
                    }
                    if let Some(d) = dframe.as_deref_mut() {
                        let dp = &mut d[base..base + hw];
                        for u in 0..n {
                            let gu = go * tv[u];
                            for v in 0..n {
                                dp[rows[u] * w + cols[v]] += gu * th[v];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Numerically stable softmax across the channel axis at each pixel.
pub fn softmax_channels(dims: [usize; 4], x: &[f64]) -> Vec<f64> {
    let [b, c, h, w] = dims;
    let hw = h * w;
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        let base = bi * c * hw;
        for p in 0..hw {
            let mut mx = f64::NEG_INFINITY;
            for ci in 0..c {
                mx = mx.max(x[base + ci * hw + p]);
            }
            let mut s = 0.0;
            for ci in 0..c {
                let e = (x[base + ci * hw + p] - mx).exp();
                out[base + ci * hw + p] = e;
                s += e;
            }
            for ci in 0..c {
                out[base + ci * hw + p] /= s;
            }
        }
    }
    out
}

pub fn softmax_channels_backward(dims: [usize; 4], y: &[f64], gout: &[f64], dx: &mut [f64]) {
    let [b, c, h, w] = dims;
    let hw = h * w;
    for bi in 0..b {
        let base = bi * c * hw;
        for p in 0..hw {
            let mut dot = 0.0;
            for ci in 0..c {
                let i = base + ci * hw + p;
                dot += gout[i] * y[i];
            }
            for ci in 0..c {
                let i = base + ci * hw + p;
                dx[i] += y[i] * (gout[i] - dot);
            }
        }
    }
}

pub fn avgpool2(dims: [usize; 4], x: &[f64]) -> Vec<f64> {
    let [b, c, h, w] = dims;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; b * c * oh * ow];
    for plane in 0..b * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * w + 2 * xx;
                dst[y * ow + xx] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * 0.25;
            }
        }
    }
    out
}

pub fn avgpool2_backward(dims: [usize; 4], gout: &[f64], dx: &mut [f64]) {
    let [b, c, h, w] = dims;
    let (oh, ow) = (h / 2, w / 2);
    for plane in 0..b * c {
        let g = &gout[plane * oh * ow..(plane + 1) * oh * ow];
        let d = &mut dx[plane * h * w..(plane + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let v = g[y * ow + xx] * 0.25;
                let i = 2 * y * w + 2 * xx;
                d[i] += v;
                d[i + 1] += v;
                d[i + w] += v;
                d[i + w + 1] += v;
            }
        }
    }
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2(dims: [usize; 4], x: &[f64]) -> Vec<f64> {
    let [b, c, h, w] = dims;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; b * c * oh * ow];
    for plane in 0..b * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(dims: [usize; 4], gout: &[f64], dx: &mut [f64]) {
    let [b, c, h, w] = dims;
    let (oh, ow) = (2 * h, 2 * w);
    for plane in 0..b * c {
        let g = &gout[plane * oh * ow..(plane + 1) * oh * ow];
        let d = &mut dx[plane * h * w..(plane + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                d[(y / 2) * w + xx / 2] += g[y * ow + xx];
            }
        }
    }
}
