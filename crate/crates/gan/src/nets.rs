//! Generator and projection discriminator.

use rand::Rng;

use crate::layers::{
    leaky_relu, leaky_relu_backward, relu, relu_backward, sigmoid, BatchNorm, BnCache, Conv2d,
    ConvTranspose2d, Linear, Param,
};

const BASE_SIDE: usize = 4;

/// Number of side doublings from 4 to `side`.
pub(crate) fn stages(side: usize) -> usize {
    (side / BASE_SIDE).trailing_zeros() as usize
}

/// `[z ; E·c] → Linear → 4×4 → (ConvT, BN, ReLU)* → ConvT → sigmoid`.
#[derive(Debug, Clone)]
pub struct Generator {
    pub(crate) embed: Linear,
    pub(crate) project: Linear,
    pub(crate) bn0: BatchNorm,
    pub(crate) ups: Vec<ConvTranspose2d>,
    pub(crate) bns: Vec<BatchNorm>,
    pub(crate) z_dim: usize,
    pub(crate) side: usize,
}

pub(crate) struct GenCache {
    input: Vec<f32>,
    cond: Vec<f32>,
    bn0: BnCache,
    act0: Vec<f32>,
    /// Per upsampling stage except the last: (BN cache, ReLU output).
    mids: Vec<(BnCache, Vec<f32>)>,
    output: Vec<f32>,
}

impl Generator {
    pub(crate) fn new(
        vocab: usize,
        z_dim: usize,
        embed_dim: usize,
        side: usize,
        base_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let n = stages(side);
        let top = base_channels << (n - 1);
        let embed = Linear::new("g.embed", vocab, embed_dim, false, rng);
        let project = Linear::new("g.project", z_dim + embed_dim, top * BASE_SIDE * BASE_SIDE, false, rng);
        let bn0 = BatchNorm::new("g.bn0", top, rng);
        let mut ups = Vec::new();
        let mut bns = Vec::new();
        let mut ch = top;
        for i in 0..n {
            let last = i + 1 == n;
            let out = if last { 1 } else { ch / 2 };
            ups.push(ConvTranspose2d::new(&format!("g.up{i}"), ch, out, last, rng));
            if !last {
                bns.push(BatchNorm::new(&format!("g.bn{}", i + 1), out, rng));
            }
            ch = out;
        }
        Self {
            embed,
            project,
            bn0,
            ups,
            bns,
            z_dim,
            side,
        }
    }

    fn head(&self, z: &[f32], cond: &[f32], n: usize) -> Vec<f32> {
        let e = self.embed.forward(cond, n);
        let ed = self.embed.outputs;
        let mut input = Vec::with_capacity(n * (self.z_dim + ed));
        for i in 0..n {
            input.extend_from_slice(&z[i * self.z_dim..(i + 1) * self.z_dim]);
            input.extend_from_slice(&e[i * ed..(i + 1) * ed]);
        }
        input
    }

    /// Inference with running batch-norm statistics. Output `[N, side²]` in [0, 1].
    pub(crate) fn forward_eval(&self, z: &[f32], cond: &[f32], n: usize) -> Vec<f32> {
        let input = self.head(z, cond, n);
        let mut h = self.project.forward(&input, n);
        h = self.bn0.forward_eval(&h, BASE_SIDE * BASE_SIDE);
        relu(&mut h);
        let mut s = BASE_SIDE;
        for (i, up) in self.ups.iter().enumerate() {
            h = up.forward(&h, n, s);
            s *= 2;
            if let Some(bn) = self.bns.get(i) {
                h = bn.forward_eval(&h, s * s);
                relu(&mut h);
            }
        }
        h.iter_mut().for_each(|v| *v = sigmoid(*v));
        h
    }

    pub(crate) fn forward_train(&mut self, z: &[f32], cond: &[f32], n: usize) -> GenCache {
        let input = self.head(z, cond, n);
        let h = self.project.forward(&input, n);
        let (mut act0, bn0) = self.bn0.forward_train(&h, n, BASE_SIDE * BASE_SIDE);
        relu(&mut act0);
        let mut h = act0.clone();
        let mut s = BASE_SIDE;
        let mut mids = Vec::new();
        for i in 0..self.ups.len() {
            h = self.ups[i].forward(&h, n, s);
            s *= 2;
            if i < self.bns.len() {
                let (mut a, c) = self.bns[i].forward_train(&h, n, s * s);
                relu(&mut a);
                h = a.clone();
                mids.push((c, a));
            }
        }
        h.iter_mut().for_each(|v| *v = sigmoid(*v));
        GenCache {
            input,
            cond: cond.to_vec(),
            bn0,
            act0,
            mids,
            output: h,
        }
    }

    pub(crate) fn backward(&mut self, cache: &GenCache, d_out: &[f32], n: usize) {
        let mut d: Vec<f32> = d_out
            .iter()
            .zip(&cache.output)
            .map(|(g, y)| g * y * (1.0 - y))
            .collect();
        let stages = self.ups.len();
        let mut s = self.side;
        for i in (0..stages).rev() {
            s /= 2;
            let x = if i == 0 { &cache.act0 } else { &cache.mids[i - 1].1 };
            d = self.ups[i].backward(x, &d, n, s);
            if i > 0 {
                let (bn_cache, act) = &cache.mids[i - 1];
                relu_backward(act, &mut d);
                d = self.bns[i - 1].backward(bn_cache, &d, n, s * s);
            }
        }
        relu_backward(&cache.act0, &mut d);
        d = self.bn0.backward(&cache.bn0, &d, n, BASE_SIDE * BASE_SIDE);
        let d_input = self.project.backward(&cache.input, &d, n);
        let ed = self.embed.outputs;
        let width = self.z_dim + ed;
        let mut d_embed = Vec::with_capacity(n * ed);
        for row in d_input.chunks(width) {
            d_embed.extend_from_slice(&row[self.z_dim..]);
        }
        self.embed.backward(&cache.cond, &d_embed, n);
    }

    pub(crate) fn output<'a>(&self, cache: &'a GenCache) -> &'a [f32] {
        &cache.output
    }

    pub(crate) fn trainable_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.embed.params_mut();
        v.extend(self.project.params_mut());
        v.extend(self.bn0.trainable_mut());
        for u in &mut self.ups {
            v.extend(u.params_mut());
        }
        for b in &mut self.bns {
            v.extend(b.trainable_mut());
        }
        v
    }

    /// Every stored tensor, including batch-norm running statistics.
    pub(crate) fn tensors(&self) -> Vec<&Param> {
        let mut v = self.embed.params();
        v.extend(self.project.params());
        v.extend(self.bn0.params());
        for u in &self.ups {
            v.extend(u.params());
        }
        for b in &self.bns {
            v.extend(b.params());
        }
        v
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.embed.params_mut();
        v.extend(self.project.params_mut());
        v.extend(bn_all_mut(&mut self.bn0));
        for u in &mut self.ups {
            v.extend(u.params_mut());
        }
        for b in &mut self.bns {
            v.extend(bn_all_mut(b));
        }
        v
    }
}

fn bn_all_mut(b: &mut BatchNorm) -> Vec<&mut Param> {
    vec![&mut b.gamma, &mut b.beta, &mut b.running_mean, &mut b.running_var]
}

/// Strided convolutions down to 4×4, then
/// `logit = w·h + b + ⟨P·c, h⟩` (projection conditioning).
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub(crate) convs: Vec<Conv2d>,
    pub(crate) out: Linear,
    pub(crate) project: Linear,
    pub(crate) side: usize,
    features: usize,
}

pub(crate) struct DiscCache {
    input: Vec<f32>,
    acts: Vec<Vec<f32>>,
    cond: Vec<f32>,
    proj: Vec<f32>,
    pub logits: Vec<f32>,
}

impl Discriminator {
    pub(crate) fn new(vocab: usize, side: usize, base_channels: usize, rng: &mut impl Rng) -> Self {
        let n = stages(side);
        let mut convs = Vec::new();
        let mut ch = 1;
        for i in 0..n {
            let out = base_channels << i;
            convs.push(Conv2d::new(&format!("d.conv{i}"), ch, out, rng));
            ch = out;
        }
        let features = ch * BASE_SIDE * BASE_SIDE;
        Self {
            convs,
            out: Linear::new("d.out", features, 1, true, rng),
            project: Linear::new("d.project", vocab, features, false, rng),
            side,
            features,
        }
    }

    /// `images` are `[N, side²]` in [0, 1]; they are mapped to [-1, 1].
    pub(crate) fn forward(&self, images: &[f32], cond: &[f32], n: usize) -> DiscCache {
        let input: Vec<f32> = images.iter().map(|v| 2.0 * v - 1.0).collect();
        let mut acts = Vec::new();
        let mut h = input.clone();
        let mut s = self.side;
        for c in &self.convs {
            h = c.forward(&h, n, s);
            s = c.out_side(s);
            leaky_relu(&mut h);
            acts.push(h.clone());
        }
        let proj = self.project.forward(cond, n);
        let mut logits = self.out.forward(&h, n);
        for (i, l) in logits.iter_mut().enumerate() {
            let row = i * self.features..(i + 1) * self.features;
            *l += h[row.clone()].iter().zip(&proj[row]).map(|(a, b)| a * b).sum::<f32>();
        }
        DiscCache {
            input,
            acts,
            cond: cond.to_vec(),
            proj,
            logits,
        }
    }

    /// Accumulates parameter gradients and returns the gradient with
    /// respect to the [0, 1] input images.
    pub(crate) fn backward(&mut self, cache: &DiscCache, d_logits: &[f32], n: usize) -> Vec<f32> {
        let f = self.features;
        let h = cache.acts.last().expect("at least one conv");
        let mut dh = self.out.backward(h, d_logits, n);
        let mut d_proj = vec![0.0; n * f];
        for i in 0..n {
            let g = d_logits[i];
            for j in 0..f {
                dh[i * f + j] += g * cache.proj[i * f + j];
                d_proj[i * f + j] = g * h[i * f + j];
            }
        }
        self.project.backward(&cache.cond, &d_proj, n);
        let mut d = dh;
        for i in (0..self.convs.len()).rev() {
            leaky_relu_backward(&cache.acts[i], &mut d);
            let s = self.side >> i;
            let x = if i == 0 { &cache.input } else { &cache.acts[i - 1] };
            d = self.convs[i].backward(x, &d, n, s);
        }
        d.iter_mut().for_each(|v| *v *= 2.0);
        d
    }

    pub(crate) fn trainable_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = Vec::new();
        for c in &mut self.convs {
            v.extend(c.params_mut());
        }
        v.extend(self.out.params_mut());
        v.extend(self.project.params_mut());
        v
    }

    pub(crate) fn tensors(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = Vec::new();
        for c in &self.convs {
            v.extend(c.params());
        }
        v.extend(self.out.params());
        v.extend(self.project.params());
        v
    }
}
