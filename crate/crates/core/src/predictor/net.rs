//! Gated-residual U-Net with hand-derived reverse-mode gradients.
//!
//! Activations are channel-major with the batch folded into the spatial
//! axis: element `(c, b, y, x)` lives at `((c * B + b) * H + y) * W + x`.
//! Every convolution is an im2col followed by one GEMM.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

use crate::{Error, Result};

/// Scalar type the network can run in.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    /// # Safety
    /// Pointers and strides must describe matrices of the stated shapes.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// `C (m x n) = op(A) (m x k) * op(B) (k x n) [+ C]`, all row-major.
/// A transposed operand is stored in its untransposed layout.
#[allow(clippy::too_many_arguments)]
fn matmul<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m) } else { (k, 1) };
    let (rsb, csb) = if tb { (1, k) } else { (n, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: lengths asserted above match the strides.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Architecture descriptor. Serialized ahead of the parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub rows: usize,
    pub cols: usize,
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub leaky_slope: f64,
}

impl NetConfig {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            c1: 12,
            c2: 24,
            c3: 32,
            leaky_slope: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 4 || self.cols < 4 {
            return Err(Error::Config(format!(
                "net input {}x{} too small (min 4x4)",
                self.rows, self.cols
            )));
        }
        if self.c1 == 0 || self.c2 == 0 || self.c3 == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::Config("leaky slope must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

pub const INPUT_CHANNELS: usize = 2;
pub const OUTPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Conv {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    w: usize,
    b: usize,
}

impl Conv {
    fn out_dim(&self, d: usize) -> usize {
        let pad = self.k / 2;
        (d + 2 * pad - self.k) / self.stride + 1
    }
}

// Layer indices in declaration order.
const E1: usize = 0;
const E2: usize = 1;
const D1: usize = 2;
const D1B: usize = 3;
const D2: usize = 4;
const BOT: usize = 5;
const U2: usize = 6;
const U1: usize = 7;
const HEAD: usize = 8;

fn layout(cfg: &NetConfig) -> ([Conv; 9], usize) {
    let shapes = [
        (INPUT_CHANNELS, cfg.c1, 3, 1),
        (cfg.c1, cfg.c1, 3, 1),
        (cfg.c1, cfg.c2, 3, 2),
        (cfg.c2, cfg.c2, 3, 1),
        (cfg.c2, cfg.c3, 3, 2),
        (cfg.c3, cfg.c3, 3, 1),
        (cfg.c3 + cfg.c2, cfg.c2, 3, 1),
        (cfg.c2 + cfg.c1, cfg.c1, 3, 1),
        (cfg.c1, OUTPUT_CHANNELS, 1, 1),
    ];
    let mut off = 0;
    let layers = shapes.map(|(cin, cout, k, stride)| {
        let w = off;
        let b = w + cout * cin * k * k;
        off = b + cout;
        Conv {
            cin,
            cout,
            k,
            stride,
            w,
            b,
        }
    });
    (layers, off)
}

/// Head output channel roles.
pub const RAW: usize = 0;
pub const GATE: usize = 1;
pub const LOGVAR: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Net<T> {
    config: NetConfig,
    layers: [Conv; 9],
    params: Vec<T>,
}

/// Intermediate values kept for the backward pass.
pub struct Tape<T> {
    batch: usize,
    dims: [(usize, usize); 3],
    cols: Vec<Vec<T>>,
    h: [Vec<T>; 8],
    /// Head output, `3 x (B*H*W)`.
    pub out: Vec<T>,
}

impl<T> Tape<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Cells per channel of the head output.
    pub fn cells(&self) -> usize {
        let (h, w) = self.dims[0];
        self.batch * h * w
    }
}

impl<T: Real> Net<T> {
    /// He-uniform weights, zero biases except the log-variance head.
    pub fn init<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (layers, total) = layout(&config);
        let mut params = vec![T::zero(); total];
        for l in &layers {
            let fan_in = (l.cin * l.k * l.k) as f64;
            let a = (6.0 / fan_in).sqrt() / if l.k == 1 { 4.0 } else { 1.0 };
            for p in &mut params[l.w..l.b] {
                *p = T::of(rng.gen_range(-a..a));
            }
        }
        params[layers[HEAD].b + LOGVAR] = T::of(super::head_log_variance_logit((0.05f64).ln()));
        Ok(Self {
            config,
            layers,
            params,
        })
    }

    pub fn from_params(config: NetConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let (layers, total) = layout(&config);
        if params.len() != total {
            return Err(Error::Config(format!(
                "expected {total} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self {
            config,
            layers,
            params,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Converts parameters to another scalar type.
    pub fn cast<U: Real>(&self) -> Net<U> {
        Net {
            config: self.config,
            layers: self.layers,
            params: self.params.iter().map(|p| U::of(p.f64())).collect(),
        }
    }

    /// Zeros the head weights and pins each raw head output to a constant.
    pub fn set_head_constant(&mut self, raw: f64, gate_logit: f64, log_variance: f64) {
        let l = self.layers[HEAD];
        self.params[l.w..l.b]
            .iter_mut()
            .for_each(|p| *p = T::zero());
        self.params[l.b + RAW] = T::of(raw);
        self.params[l.b + GATE] = T::of(gate_logit);
        self.params[l.b + LOGVAR] = T::of(log_variance);
    }

    /// Runs the network on `batch` stacked inputs of shape `2 x (B*H*W)`.
    pub fn forward(&self, x: &[T], batch: usize) -> Tape<T> {
        let (h0, w0) = (self.config.rows, self.config.cols);
        assert_eq!(x.len(), INPUT_CHANNELS * batch * h0 * w0);
        let l = &self.layers;
        let (h1, w1) = (l[D1].out_dim(h0), l[D1].out_dim(w0));
        let (h2, w2) = (l[D2].out_dim(h1), l[D2].out_dim(w1));
        let slope = T::of(self.config.leaky_slope);
        let mut cols = Vec::with_capacity(9);

        let mut conv = |i: usize, input: &[T], h: usize, w: usize, act: bool| {
            let (c, out) = conv_forward(&l[i], &self.params, input, batch, h, w);
            cols.push(c);
            let mut out = out;
            if act {
                out.iter_mut().for_each(|v| {
                    if *v < T::zero() {
                        *v *= slope
                    }
                });
            }
            out
        };

        let a1 = conv(E1, x, h0, w0, true);
        let a2 = conv(E2, &a1, h0, w0, true);
        let a3 = conv(D1, &a2, h0, w0, true);
        let a4 = conv(D1B, &a3, h1, w1, true);
        let a5 = conv(D2, &a4, h1, w1, true);
        let a6 = conv(BOT, &a5, h2, w2, true);
        let mut cat7 = upsample(&a6, self.config.c3, batch, (h2, w2), (h1, w1));
        cat7.extend_from_slice(&a4);
        let a7 = conv(U2, &cat7, h1, w1, true);
        let mut cat8 = upsample(&a7, self.config.c2, batch, (h1, w1), (h0, w0));
        cat8.extend_from_slice(&a2);
        let a8 = conv(U1, &cat8, h0, w0, true);
        let out = conv(HEAD, &a8, h0, w0, false);

        Tape {
            batch,
            dims: [(h0, w0), (h1, w1), (h2, w2)],
            cols,
            h: [a1, a2, a3, a4, a5, a6, a7, a8],
            out,
        }
    }

    /// Parameter gradient given the gradient of the head output.
    pub fn backward(&self, tape: &Tape<T>, dout: &[T]) -> Vec<T> {
        let mut g = vec![T::zero(); self.params.len()];
        self.backward_into(tape, dout, &mut g);
        g
    }

    pub fn backward_into(&self, tape: &Tape<T>, dout: &[T], grads: &mut [T]) {
        assert_eq!(dout.len(), tape.out.len());
        assert_eq!(grads.len(), self.params.len());
        let l = &self.layers;
        let b = tape.batch;
        let [(h0, w0), (h1, w1), (h2, w2)] = tape.dims;
        let [_, a2, _, a4, _, _, _, _] = &tape.h;
        let slope = T::of(self.config.leaky_slope);
        let c = &self.config;

        let back = |i: usize, dy: &[T], h: usize, w: usize, grads: &mut [T]| {
            conv_backward(&l[i], &self.params, grads, &tape.cols[i], dy, b, h, w)
        };
        let mask = |d: &mut [T], y: &[T]| {
            for (d, y) in d.iter_mut().zip(y) {
                if *y < T::zero() || (*y == T::zero() && slope == T::zero()) {
                    *d *= slope;
                }
            }
        };

        let mut d8 = back(HEAD, dout, h0, w0, grads);
        mask(&mut d8, &tape.h[7]);
        let dcat8 = back(U1, &d8, h0, w0, grads);
        let n0 = b * h0 * w0;
        let (dup7, dskip2) = dcat8.split_at(c.c2 * n0);
        let mut d7 = upsample_backward(dup7, c.c2, b, (h1, w1), (h0, w0));
        mask(&mut d7, &tape.h[6]);
        let dcat7 = back(U2, &d7, h1, w1, grads);
        let n1 = b * h1 * w1;
        let (dup6, dskip4) = dcat7.split_at(c.c3 * n1);
        let mut d6 = upsample_backward(dup6, c.c3, b, (h2, w2), (h1, w1));
        mask(&mut d6, &tape.h[5]);
        let mut d5 = back(BOT, &d6, h2, w2, grads);
        mask(&mut d5, &tape.h[4]);
        let mut d4 = back(D2, &d5, h1, w1, grads);
        d4.iter_mut().zip(dskip4).for_each(|(a, s)| *a += *s);
        mask(&mut d4, a4);
        let mut d3 = back(D1B, &d4, h1, w1, grads);
        mask(&mut d3, &tape.h[2]);
        let mut d2 = back(D1, &d3, h0, w0, grads);
        d2.iter_mut().zip(dskip2).for_each(|(a, s)| *a += *s);
        mask(&mut d2, a2);
        let mut d1 = back(E2, &d2, h0, w0, grads);
        mask(&mut d1, &tape.h[0]);
        back(E1, &d1, h0, w0, grads);
    }
}

fn im2col<T: Real>(
    input: &[T],
    cin: usize,
    batch: usize,
    h: usize,
    w: usize,
    conv: &Conv,
) -> (Vec<T>, usize, usize) {
    let (k, s, pad) = (conv.k, conv.stride, conv.k / 2);
    let (ho, wo) = (conv.out_dim(h), conv.out_dim(w));
    let n = batch * ho * wo;
    let mut cols = vec![T::zero(); cin * k * k * n];
    for ci in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let base = ((ci * k + ky) * k + kx) * n;
                for b in 0..batch {
                    let src = (ci * batch + b) * h * w;
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = src + iy as usize * w;
                        let dst = base + (b * ho + oy) * wo;
                        for ox in 0..wo {
                            let ix = (ox * s + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                cols[dst + ox] = input[row + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (cols, ho, wo)
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    cin: usize,
    batch: usize,
    h: usize,
    w: usize,
    conv: &Conv,
) -> Vec<T> {
    let (k, s, pad) = (conv.k, conv.stride, conv.k / 2);
    let (ho, wo) = (conv.out_dim(h), conv.out_dim(w));
    let n = batch * ho * wo;
    let mut out = vec![T::zero(); cin * batch * h * w];
    for ci in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let base = ((ci * k + ky) * k + kx) * n;
                for b in 0..batch {
                    let dst = (ci * batch + b) * h * w;
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = dst + iy as usize * w;
                        let src = base + (b * ho + oy) * wo;
                        for ox in 0..wo {
                            let ix = (ox * s + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                out[row + ix as usize] += cols[src + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_forward<T: Real>(
    conv: &Conv,
    params: &[T],
    input: &[T],
    batch: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<T>) {
    let (cols, ho, wo) = im2col(input, conv.cin, batch, h, w, conv);
    let n = batch * ho * wo;
    let kk = conv.cin * conv.k * conv.k;
    let mut out = vec![T::zero(); conv.cout * n];
    matmul(
        conv.cout,
        kk,
        n,
        &params[conv.w..conv.b],
        false,
        &cols,
        false,
        &mut out,
        false,
    );
    for o in 0..conv.cout {
        let bias = params[conv.b + o];
        out[o * n..(o + 1) * n].iter_mut().for_each(|v| *v += bias);
    }
    (cols, out)
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    conv: &Conv,
    params: &[T],
    grads: &mut [T],
    cols: &[T],
    dout: &[T],
    batch: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let n = batch * conv.out_dim(h) * conv.out_dim(w);
    let kk = conv.cin * conv.k * conv.k;
    assert_eq!(dout.len(), conv.cout * n);
    matmul(
        conv.cout,
        n,
        kk,
        dout,
        false,
        cols,
        true,
        &mut grads[conv.w..conv.b],
        true,
    );
    for o in 0..conv.cout {
        let s = dout[o * n..(o + 1) * n]
            .iter()
            .fold(T::zero(), |a, v| a + *v);
        grads[conv.b + o] += s;
    }
    let mut dcols = vec![T::zero(); kk * n];
    matmul(
        kk,
        conv.cout,
        n,
        &params[conv.w..conv.b],
        true,
        dout,
        false,
        &mut dcols,
        false,
    );
    col2im(&dcols, conv.cin, batch, h, w, conv)
}

/// Nearest-neighbor upsampling from a coarse grid that halves `fine`.
fn upsample<T: Real>(
    x: &[T],
    c: usize,
    batch: usize,
    coarse: (usize, usize),
    fine: (usize, usize),
) -> Vec<T> {
    let (hc, wc) = coarse;
    let (hf, wf) = fine;
    let mut out = Vec::with_capacity(c * batch * hf * wf);
    for cb in 0..c * batch {
        let src = &x[cb * hc * wc..(cb + 1) * hc * wc];
        for y in 0..hf {
            let row = &src[(y / 2) * wc..(y / 2 + 1) * wc];
            out.extend((0..wf).map(|x| row[x / 2]));
        }
    }
    out
}

fn upsample_backward<T: Real>(
    d: &[T],
    c: usize,
    batch: usize,
    coarse: (usize, usize),
    fine: (usize, usize),
) -> Vec<T> {
    let (hc, wc) = coarse;
    let (hf, wf) = fine;
    let mut out = vec![T::zero(); c * batch * hc * wc];
    for cb in 0..c * batch {
        for y in 0..hf {
            for x in 0..wf {
                out[cb * hc * wc + (y / 2) * wc + x / 2] += d[cb * hf * wf + y * wf + x];
            }
        }
    }
    out
}

/// Adam with global gradient-norm clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64, clip_norm: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Applies one update; returns the pre-clip gradient norm.
    pub fn step<T: Real>(&mut self, params: &mut [T], grads: &[T]) -> f64 {
        assert_eq!(params.len(), self.m.len());
        let norm = grads.iter().map(|g| g.f64().powi(2)).sum::<f64>().sqrt();
        let scale = if norm > self.clip_norm && norm > 0.0 {
            self.clip_norm / norm
        } else {
            1.0
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i].f64() * scale;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let step =
                self.learning_rate * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + self.epsilon);
            params[i] = T::of(params[i].f64() - step);
        }
        norm
    }
}
