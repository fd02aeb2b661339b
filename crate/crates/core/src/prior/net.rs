//! A small noise-conditional convolutional score network.
//!
//! Three-scale encoder–decoder with 3×3 convolutions, SiLU activations,
//! 2×2 average pooling, nearest-neighbour upsampling and skip concatenation:
//!
//! ```text
//! in(C+1) -e0a-> w0 -e0b-> w0 ──────────────────────────────┐
//!            pool -e1a-> w1 -e1b-> w1 ──────────┐            │
//!                       pool -m2-> w2 -up-> [w2|w1] -d1-> w1 -up-> [w1|w0] -d0-> w0 -out-> C
//! ```
//!
//! The extra input channel carries `log σ` mapped affinely onto `[-1, 1]`,
//! image channels are scaled by `1/sqrt(1 + σ²)`, and the score is the
//! network output divided by `σ`. Parameters are stored as `f32`; all
//! arithmetic runs in `f64`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stack::{Channels, Stack};
use super::ScoreSource;
use crate::error::{Error, Result};
use crate::grid::Shape;
use crate::rng::RandomStream;

pub const LAYER_NAMES: [&str; 8] = ["e0a", "e0b", "e1a", "e1b", "m2", "d1", "d0", "out"];

/// Shape of one 3×3 convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
}

impl ConvShape {
    pub fn n_weights(self) -> usize {
        self.cout * self.cin * 9
    }

    pub fn n_params(self) -> usize {
        self.n_weights() + self.cout
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreNetParams {
    pub channels: Channels,
    pub widths: [usize; 3],
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Flat parameters, layer by layer, weights `[cout][cin][3][3]` then biases.
    pub values: Vec<f32>,
}

pub fn layer_shapes(channels: Channels, widths: [usize; 3]) -> [ConvShape; 8] {
    let c = channels.count();
    let [w0, w1, w2] = widths;
    let s = |cin, cout| ConvShape { cin, cout };
    [
        s(c + 1, w0),
        s(w0, w0),
        s(w0, w1),
        s(w1, w1),
        s(w1, w2),
        s(w2 + w1, w1),
        s(w1 + w0, w0),
        s(w0, c),
    ]
}

impl ScoreNetParams {
    /// Random initialization with a zero final layer, so the fresh network
    /// outputs exactly zero.
    pub fn init(
        channels: Channels,
        widths: [usize; 3],
        sigma_min: f64,
        sigma_max: f64,
        stream: &mut RandomStream,
    ) -> Result<Self> {
        if widths.contains(&0) {
            return Err(Error::param("network widths must be positive"));
        }
        if !(sigma_min > 0.0 && sigma_min < sigma_max) {
            return Err(Error::param("network noise range needs 0 < sigma_min < sigma_max"));
        }
        let shapes = layer_shapes(channels, widths);
        let mut values = Vec::with_capacity(shapes.iter().map(|s| s.n_params()).sum());
        for (k, s) in shapes.iter().enumerate() {
            let last = k + 1 == shapes.len();
            let scale = (2.0 / (s.cin * 9) as f64).sqrt();
            for _ in 0..s.n_weights() {
                values.push(if last { 0.0 } else { (scale * stream.normal()) as f32 });
            }
            values.extend(std::iter::repeat_n(0.0f32, s.cout));
        }
        Ok(Self {
            channels,
            widths,
            sigma_min,
            sigma_max,
            values,
        })
    }

    pub fn layer_shapes(&self) -> [ConvShape; 8] {
        layer_shapes(self.channels, self.widths)
    }

    pub fn n_params(&self) -> usize {
        self.values.len()
    }

    pub fn validate(&self) -> Result<()> {
        let expected: usize = self.layer_shapes().iter().map(|s| s.n_params()).sum();
        if self.values.len() != expected {
            return Err(Error::param(format!(
                "network expects {expected} parameters, found {}",
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("network parameters must be finite"));
        }
        Ok(())
    }

    fn sigma_feature(&self, sigma: f64) -> f64 {
        let lo = self.sigma_min.ln();
        let hi = self.sigma_max.ln();
        2.0 * (sigma.ln() - lo) / (hi - lo) - 1.0
    }
}

/// `[c][h][w]` activations.
#[derive(Clone, Debug)]
struct Tensor {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor {
    fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }

    fn concat(a: &Tensor, b: &Tensor) -> Tensor {
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor {
            c: a.c + b.c,
            h: a.h,
            w: a.w,
            data,
        }
    }

    fn split(self, c_first: usize) -> (Tensor, Tensor) {
        let n = c_first * self.hw();
        let (a, b) = self.data.split_at(n);
        (
            Tensor {
                c: c_first,
                h: self.h,
                w: self.w,
                data: a.to_vec(),
            },
            Tensor {
                c: self.c - c_first,
                h: self.h,
                w: self.w,
                data: b.to_vec(),
            },
        )
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(t: &Tensor) -> Tensor {
    Tensor {
        data: t.data.iter().map(|&x| x * sigmoid(x)).collect(),
        ..*t
    }
}

/// Gradient through SiLU given its pre-activation.
fn silu_back(pre: &Tensor, grad: &mut Tensor) {
    for (g, &x) in grad.data.iter_mut().zip(&pre.data) {
        let s = sigmoid(x);
        *g *= s * (1.0 + x * (1.0 - s));
    }
}

fn avg_pool(t: &Tensor) -> Tensor {
    let (h, w) = (t.h / 2, t.w / 2);
    let mut out = Tensor::zeros(t.c, h, w);
    for c in 0..t.c {
        let src = &t.data[c * t.hw()..(c + 1) * t.hw()];
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * t.w + 2 * x;
                dst[y * w + x] = 0.25 * (src[i] + src[i + 1] + src[i + t.w] + src[i + t.w + 1]);
            }
        }
    }
    out
}

fn avg_pool_back(grad: &Tensor) -> Tensor {
    let (h, w) = (grad.h * 2, grad.w * 2);
    let mut out = Tensor::zeros(grad.c, h, w);
    for c in 0..grad.c {
        let src = &grad.data[c * grad.hw()..(c + 1) * grad.hw()];
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = 0.25 * src[(y / 2) * grad.w + x / 2];
            }
        }
    }
    out
}

fn upsample(t: &Tensor) -> Tensor {
    let (h, w) = (t.h * 2, t.w * 2);
    let mut out = Tensor::zeros(t.c, h, w);
    for c in 0..t.c {
        let src = &t.data[c * t.hw()..(c + 1) * t.hw()];
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / 2) * t.w + x / 2];
            }
        }
    }
    out
}

fn upsample_back(grad: &Tensor) -> Tensor {
    let (h, w) = (grad.h / 2, grad.w / 2);
    let mut out = Tensor::zeros(grad.c, h, w);
    for c in 0..grad.c {
        let src = &grad.data[c * grad.hw()..(c + 1) * grad.hw()];
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..grad.h {
            for x in 0..grad.w {
                dst[(y / 2) * w + x / 2] += src[y * grad.w + x];
            }
        }
    }
    out
}

/// `(cin·9) × (h·w)` patch matrix for a zero-padded 3×3 convolution.
fn im2col(t: &Tensor) -> Vec<f64> {
    let (h, w, hw) = (t.h, t.w, t.hw());
    let mut col = vec![0.0; t.c * 9 * hw];
    for ci in 0..t.c {
        let src = &t.data[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    // Output x reads source x + kx - 1.
                    let (x0, x1) = match kx {
                        0 => (1, w),
                        1 => (0, w),
                        _ => (0, w - 1),
                    };
                    for x in x0..x1 {
                        row[y * w + x] = src[sy * w + x + kx - 1];
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], c: usize, h: usize, w: usize) -> Tensor {
    let hw = h * w;
    let mut out = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let dst = &mut out.data[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let (x0, x1) = match kx {
                        0 => (1, w),
                        1 => (0, w),
                        _ => (0, w - 1),
                    };
                    for x in x0..x1 {
                        dst[sy * w + x + kx - 1] += row[y * w + x];
                    }
                }
            }
        }
    }
    out
}

/// `c = alpha·a·b + beta·c` for row-major `a: m×k`, `b: k×n` given by strides.
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
    // SAFETY: every slice covers the index range implied by its strides and
    // dimensions, checked by the callers' construction, and `c` does not alias.
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

/// Weights of one layer converted to `f64`.
#[derive(Clone, Debug)]
struct Layer {
    shape: ConvShape,
    w: Vec<f64>,
    b: Vec<f64>,
    offset: usize,
}

fn unpack(params: &ScoreNetParams) -> Vec<Layer> {
    let mut offset = 0;
    params
        .layer_shapes()
        .iter()
        .map(|&shape| {
            let nw = shape.n_weights();
            let w = params.values[offset..offset + nw].iter().map(|&v| v as f64).collect();
            let b = params.values[offset + nw..offset + nw + shape.cout]
                .iter()
                .map(|&v| v as f64)
                .collect();
            let layer = Layer { shape, w, b, offset };
            offset += shape.n_params();
            layer
        })
        .collect()
}

struct ConvCache {
    col: Vec<f64>,
    h: usize,
    w: usize,
}

fn conv_forward(layer: &Layer, x: &Tensor) -> (Tensor, ConvCache) {
    debug_assert_eq!(x.c, layer.shape.cin);
    let hw = x.hw();
    let col = im2col(x);
    let cout = layer.shape.cout;
    let k = layer.shape.cin * 9;
    let mut out = Tensor::zeros(cout, x.h, x.w);
    for (co, chunk) in out.data.chunks_mut(hw).enumerate() {
        chunk.fill(layer.b[co]);
    }
    gemm(cout, k, hw, &layer.w, (k as isize, 1), &col, (hw as isize, 1), 1.0, &mut out.data);
    (out, ConvCache { col, h: x.h, w: x.w })
}

/// Accumulates parameter gradients into `grad` and returns the input gradient.
fn conv_backward(layer: &Layer, cache: &ConvCache, dout: &Tensor, grad: &mut [f64]) -> Tensor {
    let hw = cache.h * cache.w;
    let cout = layer.shape.cout;
    let k = layer.shape.cin * 9;
    let (gw, rest) = grad[layer.offset..layer.offset + layer.shape.n_params()].split_at_mut(k * cout);
    gemm(cout, hw, k, &dout.data, (hw as isize, 1), &cache.col, (1, hw as isize), 1.0, gw);
    for (co, gb) in rest.iter_mut().enumerate() {
        *gb += dout.data[co * hw..(co + 1) * hw].iter().sum::<f64>();
    }
    let mut dcol = vec![0.0; k * hw];
    gemm(k, cout, hw, &layer.w, (1, k as isize), &dout.data, (hw as isize, 1), 0.0, &mut dcol);
    col2im(&dcol, layer.shape.cin, cache.h, cache.w)
}

/// Everything the backward pass needs.
struct Trace {
    caches: Vec<ConvCache>,
    pre: Vec<Tensor>,
}

/// A network ready for evaluation.
#[derive(Clone, Debug)]
pub struct ScoreNet {
    params: ScoreNetParams,
    layers: Vec<Layer>,
}

impl ScoreNet {
    pub fn new(params: ScoreNetParams) -> Result<Self> {
        params.validate()?;
        let layers = unpack(&params);
        Ok(Self { params, layers })
    }

    pub fn params(&self) -> &ScoreNetParams {
        &self.params
    }

    fn check_input(&self, x: &Stack, sigma: f64) -> Result<()> {
        if x.channels() != self.params.channels {
            return Err(Error::param(format!(
                "{} network given a {} stack",
                self.params.channels.as_str(),
                x.channels().as_str()
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::param(format!("noise level must be positive, got {sigma}")));
        }
        let s = x.shape();
        if !s.height.is_multiple_of(4) || !s.width.is_multiple_of(4) || s.height == 0 || s.width == 0 {
            return Err(Error::dim(format!("network raster must be a multiple of 4, got {s}")));
        }
        Ok(())
    }

    fn input(&self, x: &Stack, sigma: f64) -> Tensor {
        let s = x.shape();
        let hw = s.len();
        let c = self.params.channels.count();
        let scale = 1.0 / (1.0 + sigma * sigma).sqrt();
        let mut data = Vec::with_capacity((c + 1) * hw);
        data.extend(x.data().iter().map(|v| v * scale));
        data.extend(std::iter::repeat_n(self.params.sigma_feature(sigma), hw));
        Tensor {
            c: c + 1,
            h: s.height,
            w: s.width,
            data,
        }
    }

    /// Raw network output (`σ·score`) with the cache for backpropagation.
    fn run(&self, x: &Stack, sigma: f64, keep: bool) -> (Tensor, Option<Trace>) {
        let l = &self.layers;
        let mut caches = Vec::new();
        let mut pre = Vec::new();
        let mut conv_act = |k: usize, t: &Tensor, act: bool| -> Tensor {
            let (z, cache) = conv_forward(&l[k], t);
            let out = if act { silu(&z) } else { z.clone() };
            if keep {
                caches.push(cache);
                pre.push(z);
            }
            out
        };
        let input = self.input(x, sigma);
        let a0 = conv_act(0, &input, true);
        let h0 = conv_act(1, &a0, true);
        let a1 = conv_act(2, &avg_pool(&h0), true);
        let h1 = conv_act(3, &a1, true);
        let h2 = conv_act(4, &avg_pool(&h1), true);
        let g1 = conv_act(5, &Tensor::concat(&upsample(&h2), &h1), true);
        let g0 = conv_act(6, &Tensor::concat(&upsample(&g1), &h0), true);
        let out = conv_act(7, &g0, false);
        (out, keep.then_some(Trace { caches, pre }))
    }

    /// Backpropagates `dout` (gradient w.r.t. the raw output) into `grad`.
    fn backprop(&self, trace: &Trace, dout: Tensor, grad: &mut [f64]) {
        let l = &self.layers;
        let Trace { caches, pre } = trace;
        let back = |k: usize, mut d: Tensor, act: bool, grad: &mut [f64]| -> Tensor {
            if act {
                silu_back(&pre[k], &mut d);
            }
            conv_backward(&l[k], &caches[k], &d, grad)
        };
        let [w0, w1, w2] = self.params.widths;
        let d_g0 = back(7, dout, false, grad);
        let (d_up1, mut d_h0) = back(6, d_g0, true, grad).split(w1);
        let d_g1 = upsample_back(&d_up1);
        let (d_up2, mut d_h1) = back(5, d_g1, true, grad).split(w2);
        let d_h2 = upsample_back(&d_up2);
        let d_p1 = back(4, d_h2, true, grad);
        for (a, b) in d_h1.data.iter_mut().zip(&avg_pool_back(&d_p1).data) {
            *a += b;
        }
        let d_a1 = back(3, d_h1, true, grad);
        let d_p0 = back(2, d_a1, true, grad);
        for (a, b) in d_h0.data.iter_mut().zip(&avg_pool_back(&d_p0).data) {
            *a += b;
        }
        debug_assert_eq!(d_h0.c, w0);
        let d_a0 = back(1, d_h0, true, grad);
        back(0, d_a0, true, grad);
    }

    /// Score estimate `s_θ(x, σ)`.
    pub fn forward(&self, x: &Stack, sigma: f64) -> Result<Stack> {
        self.check_input(x, sigma)?;
        let (out, _) = self.run(x, sigma, false);
        let data = out.data.into_iter().map(|v| v / sigma).collect();
        Stack::new(x.shape(), x.channels(), data)
    }

    /// Loss `‖σ s_θ(x̃, σ) + z‖²` for one noisy sample `x̃ = x + σ z`,
    /// accumulating its parameter gradient into `grad` when given.
    pub fn sample_loss(&self, noisy: &Stack, z: &[f64], sigma: f64, grad: Option<&mut [f64]>) -> Result<f64> {
        self.check_input(noisy, sigma)?;
        if z.len() != noisy.data().len() {
            return Err(Error::dim("noise draw does not match the sample"));
        }
        let (out, trace) = self.run(noisy, sigma, grad.is_some());
        let mut loss = 0.0;
        let mut dout = out.clone();
        for (d, (&o, &zi)) in dout.data.iter_mut().zip(out.data.iter().zip(z)) {
            let r = o + zi;
            loss += r * r;
            *d = 2.0 * r;
        }
        if let (Some(grad), Some(trace)) = (grad, trace) {
            self.backprop(&trace, dout, grad);
        }
        Ok(loss)
    }
}

impl ScoreSource for ScoreNet {
    fn channels(&self) -> Channels {
        self.params.channels
    }

    fn score(&self, x: &Stack, sigma: f64) -> Result<Stack> {
        self.forward(x, sigma)
    }
}

/// One-shot forward pass.
pub fn score_net_forward(params: &ScoreNetParams, noisy: &Stack, sigma: f64) -> Result<Stack> {
    ScoreNet::new(params.clone())?.forward(noisy, sigma)
}

/// Evaluates many independent inputs in parallel, preserving order.
pub fn forward_batch(net: &ScoreNet, xs: &[Stack], sigmas: &[f64]) -> Result<Vec<Stack>> {
    xs.par_iter()
        .zip(sigmas.par_iter())
        .map(|(x, &s)| net.forward(x, s))
        .collect()
}

/// Random crop of a stack to `size × size`.
pub fn crop(x: &Stack, top: usize, left: usize, size: usize) -> Result<Stack> {
    let s = x.shape();
    if top + size > s.height || left + size > s.width {
        return Err(Error::dim(format!("crop {size} at ({top},{left}) exceeds {s}")));
    }
    let mut data = Vec::with_capacity(size * size * x.channels().count());
    for k in 0..x.channels().count() {
        let plane = x.plane(k);
        for r in top..top + size {
            data.extend_from_slice(&plane[r * s.width + left..r * s.width + left + size]);
        }
    }
    Stack::new(Shape::square(size), x.channels(), data)
}
