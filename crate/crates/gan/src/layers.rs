//! Minimal CPU layers with hand-written backward passes.
//!
//! Activations are row-major `f32` buffers. Image tensors are `[N, C, H, W]`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// `c = op(a) · op(b) + beta · c` where `op(a)` is `m×k` and `op(b)` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
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
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the `m×k`, `k×n` and `m×n`
    // row-major views of slices whose lengths are checked above.
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

/// Trainable tensor with its gradient and Adam moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub(crate) grad: Vec<f32>,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Param {
    pub(crate) fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f32>) -> Self {
        let n = value.len();
        debug_assert_eq!(shape.iter().product::<usize>(), n);
        Self {
            name: name.into(),
            shape,
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub(crate) fn normal(name: &str, shape: Vec<usize>, std: f32, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let dist = Normal::new(0.0f32, std).expect("positive std");
        let value = (0..n).map(|_| dist.sample(rng)).collect();
        Self::new(name, shape, value)
    }

    pub(crate) fn constant(name: &str, shape: Vec<usize>, c: f32) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![c; n])
    }

    pub(crate) fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Adam {
    /// One update at step `t` (1-based).
    pub(crate) fn step(&self, p: &mut Param, t: u32) {
        let c1 = 1.0 - self.beta1.powi(t as i32);
        let c2 = 1.0 - self.beta2.powi(t as i32);
        for i in 0..p.value.len() {
            let g = p.grad[i];
            p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * g;
            p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * g * g;
            let mh = p.m[i] / c1;
            let vh = p.v[i] / c2;
            p.value[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Fully connected layer, weight `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub(crate) fn new(name: &str, inputs: usize, outputs: usize, bias: bool, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::normal(&format!("{name}.weight"), vec![outputs, inputs], 0.02, rng),
            bias: bias.then(|| Param::constant(&format!("{name}.bias"), vec![outputs], 0.0)),
            inputs,
            outputs,
        }
    }

    pub(crate) fn forward(&self, x: &[f32], n: usize) -> Vec<f32> {
        let mut y = match &self.bias {
            Some(b) => b.value.repeat(n),
            None => vec![0.0; n * self.outputs],
        };
        let beta = if self.bias.is_some() { 1.0 } else { 0.0 };
        gemm(n, self.inputs, self.outputs, x, false, &self.weight.value, true, &mut y, beta);
        y
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub(crate) fn backward(&mut self, x: &[f32], dy: &[f32], n: usize) -> Vec<f32> {
        gemm(self.outputs, n, self.inputs, dy, true, x, false, &mut self.weight.grad, 1.0);
        if let Some(b) = &mut self.bias {
            for row in dy.chunks(self.outputs) {
                for (g, d) in b.grad.iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        let mut dx = vec![0.0; n * self.inputs];
        gemm(n, self.outputs, self.inputs, dy, false, &self.weight.value, false, &mut dx, 0.0);
        dx
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    pub(crate) fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }
}

/// Geometry shared by convolution and its transpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub const DOWN: ConvGeom = ConvGeom { k: 4, stride: 2, pad: 1 };

    pub fn out_side(&self, side: usize) -> usize {
        (side + 2 * self.pad - self.k) / self.stride + 1
    }
}

/// `[C, H, W]` → `[C·k·k, Ho·Wo]`.
fn im2col(x: &[f32], c: usize, side: usize, g: ConvGeom, cols: &mut [f32]) {
    let o = g.out_side(side);
    for ch in 0..c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ch * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * o * o..(row + 1) * o * o];
                for oy in 0..o {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..o {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[oy * o + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < side && (ix as usize) < side {
                            x[(ch * side + iy as usize) * side + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
fn col2im(cols: &[f32], c: usize, side: usize, g: ConvGeom, x: &mut [f32]) {
    let o = g.out_side(side);
    for ch in 0..c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ch * g.k + ky) * g.k + kx;
                let src = &cols[row * o * o..(row + 1) * o * o];
                for oy in 0..o {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= side {
                        continue;
                    }
                    for ox in 0..o {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < side {
                            x[(ch * side + iy as usize) * side + ix as usize] += src[oy * o + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Strided convolution, weight `[Cout, Cin·k·k]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub cin: usize,
    pub cout: usize,
    geom: ConvGeom,
}

impl Conv2d {
    pub(crate) fn new(name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let g = ConvGeom::DOWN;
        Self {
            weight: Param::normal(&format!("{name}.weight"), vec![cout, cin * g.k * g.k], 0.02, rng),
            bias: Param::constant(&format!("{name}.bias"), vec![cout], 0.0),
            cin,
            cout,
            geom: g,
        }
    }

    pub(crate) fn out_side(&self, side: usize) -> usize {
        self.geom.out_side(side)
    }

    pub(crate) fn forward(&self, x: &[f32], n: usize, side: usize) -> Vec<f32> {
        let o = self.out_side(side);
        let kk = self.cin * self.geom.k * self.geom.k;
        let mut cols = vec![0.0; kk * o * o];
        let mut y = vec![0.0; n * self.cout * o * o];
        let in_len = self.cin * side * side;
        for (xi, yi) in x.chunks(in_len).zip(y.chunks_mut(self.cout * o * o)) {
            im2col(xi, self.cin, side, self.geom, &mut cols);
            for (c, plane) in yi.chunks_mut(o * o).enumerate() {
                plane.iter_mut().for_each(|v| *v = self.bias.value[c]);
            }
            gemm(self.cout, kk, o * o, &self.weight.value, false, &cols, false, yi, 1.0);
        }
        y
    }

    pub(crate) fn backward(&mut self, x: &[f32], dy: &[f32], n: usize, side: usize) -> Vec<f32> {
        let o = self.out_side(side);
        let kk = self.cin * self.geom.k * self.geom.k;
        let mut cols = vec![0.0; kk * o * o];
        let mut dcols = vec![0.0; kk * o * o];
        let in_len = self.cin * side * side;
        let mut dx = vec![0.0; n * in_len];
        for ((xi, dyi), dxi) in x
            .chunks(in_len)
            .zip(dy.chunks(self.cout * o * o))
            .zip(dx.chunks_mut(in_len))
        {
            im2col(xi, self.cin, side, self.geom, &mut cols);
            gemm(self.cout, o * o, kk, dyi, false, &cols, true, &mut self.weight.grad, 1.0);
            for (c, plane) in dyi.chunks(o * o).enumerate() {
                self.bias.grad[c] += plane.iter().sum::<f32>();
            }
            gemm(kk, self.cout, o * o, &self.weight.value, true, dyi, false, &mut dcols, 0.0);
            col2im(&dcols, self.cin, side, self.geom, dxi);
        }
        dx
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub(crate) fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

/// Transposed convolution doubling the side, weight `[Cin, Cout·k·k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub cin: usize,
    pub cout: usize,
    geom: ConvGeom,
}

impl ConvTranspose2d {
    pub(crate) fn new(name: &str, cin: usize, cout: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let g = ConvGeom::DOWN;
        Self {
            weight: Param::normal(&format!("{name}.weight"), vec![cin, cout * g.k * g.k], 0.02, rng),
            bias: bias.then(|| Param::constant(&format!("{name}.bias"), vec![cout], 0.0)),
            cin,
            cout,
            geom: g,
        }
    }

    /// `side` is the input side; the output side is `2·side`.
    pub(crate) fn forward(&self, x: &[f32], n: usize, side: usize) -> Vec<f32> {
        let out = 2 * side;
        let kk = self.cout * self.geom.k * self.geom.k;
        let mut cols = vec![0.0; kk * side * side];
        let out_len = self.cout * out * out;
        let mut y = vec![0.0; n * out_len];
        for (xi, yi) in x.chunks(self.cin * side * side).zip(y.chunks_mut(out_len)) {
            gemm(kk, self.cin, side * side, &self.weight.value, true, xi, false, &mut cols, 0.0);
            col2im(&cols, self.cout, out, self.geom, yi);
            if let Some(b) = &self.bias {
                for (c, plane) in yi.chunks_mut(out * out).enumerate() {
                    plane.iter_mut().for_each(|v| *v += b.value[c]);
                }
            }
        }
        y
    }

    pub(crate) fn backward(&mut self, x: &[f32], dy: &[f32], n: usize, side: usize) -> Vec<f32> {
        let out = 2 * side;
        let kk = self.cout * self.geom.k * self.geom.k;
        let mut dcols = vec![0.0; kk * side * side];
        let in_len = self.cin * side * side;
        let out_len = self.cout * out * out;
        let mut dx = vec![0.0; n * in_len];
        for ((xi, dyi), dxi) in x.chunks(in_len).zip(dy.chunks(out_len)).zip(dx.chunks_mut(in_len)) {
            im2col(dyi, self.cout, out, self.geom, &mut dcols);
            gemm(self.cin, side * side, kk, xi, false, &dcols, true, &mut self.weight.grad, 1.0);
            gemm(self.cin, kk, side * side, &self.weight.value, false, &dcols, false, dxi, 0.0);
            if let Some(b) = &mut self.bias {
                for (c, plane) in dyi.chunks(out * out).enumerate() {
                    b.grad[c] += plane.iter().sum::<f32>();
                }
            }
        }
        dx
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    pub(crate) fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }
}

const BN_EPS: f32 = 1e-5;
const BN_MOMENTUM: f32 = 0.1;

/// Per-channel batch normalization over `[N, C, HW]`.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub channels: usize,
}

pub(crate) struct BnCache {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
}

impl BatchNorm {
    pub(crate) fn new(name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let mut gamma = Param::normal(&format!("{name}.gamma"), vec![channels], 0.02, rng);
        gamma.value.iter_mut().for_each(|g| *g += 1.0);
        Self {
            gamma,
            beta: Param::constant(&format!("{name}.beta"), vec![channels], 0.0),
            running_mean: Param::constant(&format!("{name}.running_mean"), vec![channels], 0.0),
            running_var: Param::constant(&format!("{name}.running_var"), vec![channels], 1.0),
            channels,
        }
    }

    pub(crate) fn forward_train(&mut self, x: &[f32], n: usize, plane: usize) -> (Vec<f32>, BnCache) {
        let c = self.channels;
        let m = (n * plane) as f32;
        let mut mean = vec![0.0f32; c];
        let mut var = vec![0.0f32; c];
        for (i, v) in x.iter().enumerate() {
            mean[(i / plane) % c] += v;
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for (i, v) in x.iter().enumerate() {
            let d = v - mean[(i / plane) % c];
            var[(i / plane) % c] += d * d;
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for (i, v) in x.iter().enumerate() {
            let ch = (i / plane) % c;
            xhat[i] = (v - mean[ch]) * inv_std[ch];
            y[i] = self.gamma.value[ch] * xhat[i] + self.beta.value[ch];
        }
        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        for ch in 0..c {
            let rm = &mut self.running_mean.value[ch];
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean[ch];
            let rv = &mut self.running_var.value[ch];
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * var[ch] * unbias;
        }
        (y, BnCache { xhat, inv_std })
    }

    pub(crate) fn forward_eval(&self, x: &[f32], plane: usize) -> Vec<f32> {
        let c = self.channels;
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let ch = (i / plane) % c;
                let inv = 1.0 / (self.running_var.value[ch] + BN_EPS).sqrt();
                self.gamma.value[ch] * (v - self.running_mean.value[ch]) * inv + self.beta.value[ch]
            })
            .collect()
    }

    pub(crate) fn backward(&mut self, cache: &BnCache, dy: &[f32], n: usize, plane: usize) -> Vec<f32> {
        let c = self.channels;
        let m = (n * plane) as f32;
        let mut sum_dxhat = vec![0.0f32; c];
        let mut sum_dxhat_xhat = vec![0.0f32; c];
        for (i, d) in dy.iter().enumerate() {
            let ch = (i / plane) % c;
            self.gamma.grad[ch] += d * cache.xhat[i];
            self.beta.grad[ch] += d;
            let dxhat = d * self.gamma.value[ch];
            sum_dxhat[ch] += dxhat;
            sum_dxhat_xhat[ch] += dxhat * cache.xhat[i];
        }
        dy.iter()
            .enumerate()
            .map(|(i, d)| {
                let ch = (i / plane) % c;
                let dxhat = d * self.gamma.value[ch];
                cache.inv_std[ch] / m * (m * dxhat - sum_dxhat[ch] - cache.xhat[i] * sum_dxhat_xhat[ch])
            })
            .collect()
    }

    /// Running statistics are stored but never stepped by the optimizer.
    pub(crate) fn trainable_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub(crate) fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }
}

pub(crate) fn relu(x: &mut [f32]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Backward through ReLU given its output.
pub(crate) fn relu_backward(y: &[f32], dy: &mut [f32]) {
    for (d, v) in dy.iter_mut().zip(y) {
        if *v <= 0.0 {
            *d = 0.0;
        }
    }
}

pub(crate) const LEAK: f32 = 0.2;

pub(crate) fn leaky_relu(x: &mut [f32]) {
    x.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v *= LEAK
        }
    });
}

pub(crate) fn leaky_relu_backward(y: &[f32], dy: &mut [f32]) {
    for (d, v) in dy.iter_mut().zip(y) {
        if *v < 0.0 {
            *d *= LEAK;
        }
    }
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy with logits and its gradient per logit.
pub(crate) fn bce_with_logits(logits: &[f32], target: f32) -> (f32, Vec<f32>) {
    let n = logits.len() as f32;
    let mut loss = 0.0f32;
    let grads = logits
        .iter()
        .map(|&x| {
            loss += x.max(0.0) - x * target + (-x.abs()).exp().ln_1p();
            (sigmoid(x) - target) / n
        })
        .collect();
    (loss / n, grads)
}
