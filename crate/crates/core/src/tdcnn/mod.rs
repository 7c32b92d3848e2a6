//! Dilated temporal residual CNN for pattern-signal classification.
//!
//! The input is one pattern-signal read as a single-channel sequence. Each
//! residual block applies
//!
//! ```text
//! causal dilated conv -> normalization -> ReLU -> spatial dropout -> + residual
//! ```
//!
//! and the head averages the last block over time, applies an affine map
//! and a softmax. Everything, backward pass included, is written out by hand
//! on flat `Vec<f64>` buffers laid out channel-major (`c * T + t`).
//!
//! Normalization standardizes the channel vector at every time step and then
//! applies the per-channel scale and shift. Statistics never mix time steps,
//! so the block stays causal and its receptive field is exactly
//! `1 + sum((kernel - 1) * dilation)`.

mod mlp;
mod train;

pub use mlp::{train_baseline_mlp, Mlp, MlpOutcome};
pub use train::{
    accuracy, train, train_network, Adam, EpochRecord, Network, PatternDataset, Split, TrainOutcome, TrainParams,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Class, Error, Result};

pub const NORM_EPS: f64 = 1e-5;

/// Architecture descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub n_blocks: usize,
    pub kernel_size: usize,
    pub channels: usize,
    pub dilation_schedule: Vec<usize>,
    pub dropout_rate: f64,
    pub n_classes: usize,
    #[serde(default = "one")]
    pub input_channels: usize,
}

fn one() -> usize {
    1
}

impl Default for ArchSpec {
    /// 12 blocks, kernel 3, 16 channels, dilations `[2, 4, 8, 16]` three times.
    fn default() -> Self {
        ArchSpec {
            n_blocks: 12,
            kernel_size: 3,
            channels: 16,
            dilation_schedule: [2, 4, 8, 16].repeat(3),
            dropout_rate: 0.1,
            n_classes: 2,
            input_channels: 1,
        }
    }
}

impl ArchSpec {
    /// Small variant used by gradient checks.
    pub fn tiny(n_blocks: usize, channels: usize) -> Self {
        ArchSpec {
            n_blocks,
            kernel_size: 3,
            channels,
            dilation_schedule: [2, 4, 8, 16].iter().copied().cycle().take(n_blocks).collect(),
            dropout_rate: 0.1,
            n_classes: 2,
            input_channels: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 {
            return Err(Error::invalid("arch: n_blocks must be >= 1"));
        }
        if self.dilation_schedule.len() != self.n_blocks {
            return Err(Error::invalid(format!(
                "arch: n_blocks ({}) must equal the dilation schedule length ({})",
                self.n_blocks,
                self.dilation_schedule.len()
            )));
        }
        if let Some(d) = self.dilation_schedule.iter().find(|d| ![2, 4, 8, 16].contains(*d)) {
            return Err(Error::invalid(format!("arch: dilation {d} is not one of 2, 4, 8, 16")));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::invalid(format!("arch: kernel_size {} must be odd", self.kernel_size)));
        }
        if self.channels < 2 {
            return Err(Error::invalid("arch: channels must be >= 2 for channel normalization"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("arch: dropout_rate {} must be in [0, 1)", self.dropout_rate)));
        }
        if self.n_classes < 2 {
            return Err(Error::invalid("arch: n_classes must be >= 2"));
        }
        if self.input_channels == 0 {
            return Err(Error::invalid("arch: input_channels must be >= 1"));
        }
        Ok(())
    }

    /// Furthest past input a block-stack output can see, counting itself.
    pub fn receptive_field(&self) -> usize {
        1 + self.dilation_schedule.iter().map(|d| (self.kernel_size - 1) * d).sum::<usize>()
    }

    pub fn param_count(&self) -> usize {
        let (c, k) = (self.channels, self.kernel_size);
        let first_in = self.input_channels;
        let block = |cin: usize| {
            let proj = if cin != c { c * cin } else { 0 };
            c * cin * k + 3 * c + proj
        };
        block(first_in) + (self.n_blocks - 1) * block(c) + self.n_classes * c + self.n_classes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub in_channels: usize,
    pub dilation: usize,
    /// `out x in x kernel`, row-major.
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    /// `out x in` 1x1 residual projection, present when channel counts differ.
    pub proj: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdcnnModel {
    pub arch: ArchSpec,
    pub blocks: Vec<Block>,
    /// `classes x channels`.
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

/// Dropout behaviour of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Spatial dropout active, masks drawn from `seed`.
    Train { seed: u64 },
}

/// Drowsiness decision for one pattern or window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    /// Probability of the Wakeful class.
    pub score: f64,
    pub label: Class,
}

impl Assessment {
    /// Scores up to and including 0.5 are Drowsy.
    pub fn from_score(score: f64) -> Self {
        let label = if score <= 0.5 { Class::Drowsy } else { Class::Wakeful };
        Assessment { score, label }
    }
}

fn glorot(rng: &mut impl Rng, n: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

pub(crate) fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Per-block activations kept for the backward pass.
struct BlockCache {
    input: Vec<f64>,
    normed: Vec<f64>,
    inv_std: Vec<f64>,
    pre_relu: Vec<f64>,
    mask: Vec<f64>,
}

struct Trace {
    len: usize,
    blocks: Vec<BlockCache>,
    output: Vec<f64>,
    pooled: Vec<f64>,
    probs: Vec<f64>,
}

impl TdcnnModel {
    /// Glorot-uniform weights; zero biases and shifts; unit scales.
    pub fn init(arch: &ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, k) = (arch.channels, arch.kernel_size);
        let mut blocks = Vec::with_capacity(arch.n_blocks);
        for (b, &dilation) in arch.dilation_schedule.iter().enumerate() {
            let cin = if b == 0 { arch.input_channels } else { c };
            let conv_w = glorot(&mut rng, c * cin * k, cin * k, c * k);
            let proj = (cin != c).then(|| glorot(&mut rng, c * cin, cin, c));
            blocks.push(Block {
                in_channels: cin,
                dilation,
                conv_w,
                conv_b: vec![0.0; c],
                gamma: vec![1.0; c],
                beta: vec![0.0; c],
                proj,
            });
        }
        let head_w = glorot(&mut rng, arch.n_classes * c, c, arch.n_classes);
        Ok(TdcnnModel {
            arch: arch.clone(),
            blocks,
            head_w,
            head_b: vec![0.0; arch.n_classes],
        })
    }

    /// Same shapes, every parameter zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.param_groups_mut().into_iter().for_each(|g| g.fill(0.0));
        z
    }

    /// Parameter slices in checkpoint order: per block conv weights, conv
    /// bias, scale, shift, projection (when present); then head weights and
    /// head bias.
    pub fn param_groups(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for b in &self.blocks {
            out.extend([&b.conv_w[..], &b.conv_b[..], &b.gamma[..], &b.beta[..]]);
            if let Some(p) = &b.proj {
                out.push(p);
            }
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn param_groups_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.conv_w);
            out.push(&mut b.conv_b);
            out.push(&mut b.gamma);
            out.push(&mut b.beta);
            if let Some(p) = &mut b.proj {
                out.push(p);
            }
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    /// Human-readable names matching [`param_groups`](Self::param_groups).
    pub fn param_group_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            for name in ["conv_w", "conv_b", "gamma", "beta"] {
                out.push(format!("block{i}.{name}"));
            }
            if b.proj.is_some() {
                out.push(format!("block{i}.proj"));
            }
        }
        out.push("head.w".into());
        out.push("head.b".into());
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_groups().iter().map(|g| g.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.param_groups().concat()
    }

    /// Rebuilds a model from [`flat_params`](Self::flat_params) order.
    pub fn from_flat(arch: &ArchSpec, flat: &[f64]) -> Result<Self> {
        let mut model = TdcnnModel::init(arch, 0)?;
        let expected = model.param_count();
        if flat.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint holds {} weights, architecture needs {expected}",
                flat.len()
            )));
        }
        let mut rest = flat;
        for g in model.param_groups_mut() {
            let (head, tail) = rest.split_at(g.len());
            g.copy_from_slice(head);
            rest = tail;
        }
        Ok(model)
    }

    fn dropout_masks(&self, mode: Mode) -> Vec<Vec<f64>> {
        let c = self.arch.channels;
        let p = self.arch.dropout_rate;
        match mode {
            Mode::Train { seed } if p > 0.0 => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let keep = 1.0 / (1.0 - p);
                (0..self.blocks.len())
                    .map(|_| (0..c).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect())
                    .collect()
            }
            _ => vec![vec![1.0; c]; self.blocks.len()],
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<usize> {
        let cin = self.arch.input_channels;
        if input.is_empty() {
            return Err(Error::invalid("pattern must not be empty"));
        }
        if !input.len().is_multiple_of(cin) {
            return Err(Error::ShapeMismatch(format!(
                "input of length {} is not a multiple of {cin} channels",
                input.len()
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("pattern contains non-finite values"));
        }
        Ok(input.len() / cin)
    }

    fn run(&self, input: &[f64], mode: Mode) -> Result<Trace> {
        let t_len = self.check_input(input)?;
        let c = self.arch.channels;
        let k = self.arch.kernel_size;
        let masks = self.dropout_masks(mode);
        let mut x = input.to_vec();
        let mut caches = Vec::with_capacity(self.blocks.len());

        for (block, mask) in self.blocks.iter().zip(masks) {
            let cin = block.in_channels;
            let d = block.dilation;
            // Causal dilated convolution.
            let mut y = vec![0.0; c * t_len];
            for o in 0..c {
                let yo = &mut y[o * t_len..(o + 1) * t_len];
                yo.fill(block.conv_b[o]);
                for i in 0..cin {
                    let xi = &x[i * t_len..(i + 1) * t_len];
                    for tap in 0..k {
                        let shift = (k - 1 - tap) * d;
                        if shift >= t_len {
                            continue;
                        }
                        let w = block.conv_w[(o * cin + i) * k + tap];
                        for (yt, xt) in yo[shift..].iter_mut().zip(&xi[..t_len - shift]) {
                            *yt += w * xt;
                        }
                    }
                }
            }
            // Channel standardization at each time step.
            let mut normed = vec![0.0; c * t_len];
            let mut inv_std = vec![0.0; t_len];
            for t in 0..t_len {
                let mean = (0..c).map(|o| y[o * t_len + t]).sum::<f64>() / c as f64;
                let var = (0..c).map(|o| (y[o * t_len + t] - mean).powi(2)).sum::<f64>() / c as f64;
                let inv = 1.0 / (var + NORM_EPS).sqrt();
                inv_std[t] = inv;
                for o in 0..c {
                    normed[o * t_len + t] = (y[o * t_len + t] - mean) * inv;
                }
            }
            let mut pre_relu = vec![0.0; c * t_len];
            let mut out = vec![0.0; c * t_len];
            for o in 0..c {
                for t in 0..t_len {
                    let idx = o * t_len + t;
                    let a = block.gamma[o] * normed[idx] + block.beta[o];
                    pre_relu[idx] = a;
                    out[idx] = a.max(0.0) * mask[o];
                }
            }
            match &block.proj {
                Some(p) => {
                    for o in 0..c {
                        for i in 0..cin {
                            let w = p[o * cin + i];
                            for t in 0..t_len {
                                out[o * t_len + t] += w * x[i * t_len + t];
                            }
                        }
                    }
                }
                None => {
                    for (o, xv) in out.iter_mut().zip(&x) {
                        *o += xv;
                    }
                }
            }
            caches.push(BlockCache {
                input: std::mem::replace(&mut x, out),
                normed,
                inv_std,
                pre_relu,
                mask,
            });
        }

        let pooled: Vec<f64> = (0..c)
            .map(|o| x[o * t_len..(o + 1) * t_len].iter().sum::<f64>() / t_len as f64)
            .collect();
        let logits: Vec<f64> = (0..self.arch.n_classes)
            .map(|j| self.head_b[j] + (0..c).map(|o| self.head_w[j * c + o] * pooled[o]).sum::<f64>())
            .collect();
        Ok(Trace {
            len: t_len,
            blocks: caches,
            output: x,
            pooled,
            probs: softmax(&logits),
        })
    }

    /// Class probabilities for one input sequence.
    pub fn forward(&self, input: &[f64], mode: Mode) -> Result<Vec<f64>> {
        Ok(self.run(input, mode)?.probs)
    }

    /// Output of every block (`channels x T`, channel-major), before pooling.
    pub fn block_activations(&self, input: &[f64], mode: Mode) -> Result<Vec<Vec<f64>>> {
        let trace = self.run(input, mode)?;
        let mut outs: Vec<Vec<f64>> = trace.blocks.into_iter().skip(1).map(|b| b.input).collect();
        outs.push(trace.output);
        Ok(outs)
    }

    /// Cross-entropy and its gradient for one sample.
    fn sample_loss_and_grad(&self, input: &[f64], target: usize, mode: Mode, grads: &mut TdcnnModel) -> Result<f64> {
        let trace = self.run(input, mode)?;
        let c = self.arch.channels;
        let k = self.arch.kernel_size;
        let t_len = trace.len;
        let loss = -trace.probs[target].max(f64::MIN_POSITIVE).ln();

        let mut dlogits = trace.probs.clone();
        dlogits[target] -= 1.0;
        let mut dpooled = vec![0.0; c];
        for (j, dl) in dlogits.iter().enumerate() {
            grads.head_b[j] += dl;
            for o in 0..c {
                grads.head_w[j * c + o] += dl * trace.pooled[o];
                dpooled[o] += self.head_w[j * c + o] * dl;
            }
        }
        let mut dout: Vec<f64> = (0..c * t_len).map(|idx| dpooled[idx / t_len] / t_len as f64).collect();

        for (bi, (block, cache)) in self.blocks.iter().zip(&trace.blocks).enumerate().rev() {
            let g = &mut grads.blocks[bi];
            let cin = block.in_channels;
            let d = block.dilation;
            let x = &cache.input;
            let mut dx = vec![0.0; cin * t_len];

            // Residual path.
            match &block.proj {
                Some(p) => {
                    let gp = g.proj.as_mut().expect("gradient shapes mirror the model");
                    for o in 0..c {
                        for i in 0..cin {
                            let mut acc = 0.0;
                            for t in 0..t_len {
                                acc += dout[o * t_len + t] * x[i * t_len + t];
                                dx[i * t_len + t] += p[o * cin + i] * dout[o * t_len + t];
                            }
                            gp[o * cin + i] += acc;
                        }
                    }
                }
                None => {
                    for (a, b) in dx.iter_mut().zip(&dout) {
                        *a += b;
                    }
                }
            }

            // Dropout and ReLU, then scale and shift.
            let mut dnormed = vec![0.0; c * t_len];
            for o in 0..c {
                for t in 0..t_len {
                    let idx = o * t_len + t;
                    let da = if cache.pre_relu[idx] > 0.0 {
                        dout[idx] * cache.mask[o]
                    } else {
                        0.0
                    };
                    g.gamma[o] += da * cache.normed[idx];
                    g.beta[o] += da;
                    dnormed[idx] = da * block.gamma[o];
                }
            }

            // Channel standardization.
            let mut dy = vec![0.0; c * t_len];
            for t in 0..t_len {
                let mut mean_dn = 0.0;
                let mut mean_dn_n = 0.0;
                for o in 0..c {
                    let idx = o * t_len + t;
                    mean_dn += dnormed[idx];
                    mean_dn_n += dnormed[idx] * cache.normed[idx];
                }
                mean_dn /= c as f64;
                mean_dn_n /= c as f64;
                for o in 0..c {
                    let idx = o * t_len + t;
                    dy[idx] = cache.inv_std[t] * (dnormed[idx] - mean_dn - cache.normed[idx] * mean_dn_n);
                }
            }

            // Causal dilated convolution.
            for o in 0..c {
                let dyo = &dy[o * t_len..(o + 1) * t_len];
                g.conv_b[o] += dyo.iter().sum::<f64>();
                for i in 0..cin {
                    let xi = &x[i * t_len..(i + 1) * t_len];
                    for tap in 0..k {
                        let shift = (k - 1 - tap) * d;
                        if shift >= t_len {
                            continue;
                        }
                        let widx = (o * cin + i) * k + tap;
                        let w = block.conv_w[widx];
                        let mut acc = 0.0;
                        let dxi = &mut dx[i * t_len..(i + 1) * t_len];
                        for t in shift..t_len {
                            acc += dyo[t] * xi[t - shift];
                            dxi[t - shift] += w * dyo[t];
                        }
                        g.conv_w[widx] += acc;
                    }
                }
            }
            dout = dx;
        }
        Ok(loss)
    }

    /// Mean cross-entropy over `batch` and its gradient.
    ///
    /// Targets are class indices. In [`Mode::Train`], sample `i` draws its
    /// dropout masks from a seed derived from the batch seed and `i`.
    /// Per-sample gradients are computed in parallel and summed in batch
    /// order, so results do not depend on thread scheduling.
    pub fn loss_and_grad(&self, batch: &[(&[f64], usize)], mode: Mode) -> Result<(f64, TdcnnModel)> {
        if batch.is_empty() {
            return Err(Error::invalid("batch must not be empty"));
        }
        if let Some((_, t)) = batch.iter().find(|(_, t)| *t >= self.arch.n_classes) {
            return Err(Error::invalid(format!("label index {t} outside the model's classes")));
        }
        let per_sample: Vec<(f64, TdcnnModel)> = batch
            .par_iter()
            .enumerate()
            .map(|(i, (x, target))| {
                let sample_mode = match mode {
                    Mode::Eval => Mode::Eval,
                    Mode::Train { seed } => Mode::Train {
                        seed: splitmix(seed ^ splitmix(i as u64)),
                    },
                };
                let mut g = self.zeros_like();
                let loss = self.sample_loss_and_grad(x, *target, sample_mode, &mut g)?;
                Ok((loss, g))
            })
            .collect::<Result<_>>()?;
        let scale = 1.0 / batch.len() as f64;
        let mut total = self.zeros_like();
        let mut loss = 0.0;
        for (l, g) in &per_sample {
            loss += l;
            for (acc, part) in total.param_groups_mut().into_iter().zip(g.param_groups()) {
                for (a, p) in acc.iter_mut().zip(part) {
                    *a += p;
                }
            }
        }
        total.param_groups_mut().into_iter().flatten().for_each(|v| *v *= scale);
        Ok((loss * scale, total))
    }

    /// Drowsiness decision for one pattern (dropout off).
    pub fn assess(&self, pattern: &[f64]) -> Result<Assessment> {
        let probs = self.forward(pattern, Mode::Eval)?;
        Ok(Assessment::from_score(probs[Class::Wakeful.index()]))
    }

    /// Window decision: mean of per-pattern Wakeful scores.
    pub fn assess_window<P: AsRef<[f64]> + Sync>(&self, patterns: &[P]) -> Result<Assessment> {
        if patterns.is_empty() {
            return Err(Error::invalid("cannot assess an empty window"));
        }
        let scores = patterns
            .par_iter()
            .map(|p| Ok(self.assess(p.as_ref())?.score))
            .collect::<Result<Vec<f64>>>()?;
        Ok(aggregate_scores(&scores))
    }
}

/// Mean score with the Drowsy-at-0.5 rule. `scores` must be non-empty.
pub fn aggregate_scores(scores: &[f64]) -> Assessment {
    Assessment::from_score(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Randomizes every parameter so scales and shifts are not at their
    /// initial values during gradient checks.
    fn perturbed(model: &TdcnnModel, seed: u64) -> TdcnnModel {
        let mut m = model.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for g in m.param_groups_mut() {
            for v in g.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        m
    }

    #[test]
    fn init_is_deterministic_and_normalization_starts_at_identity() {
        let arch = ArchSpec::default();
        let a = TdcnnModel::init(&arch, 7).unwrap();
        let b = TdcnnModel::init(&arch, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, TdcnnModel::init(&arch, 8).unwrap());
        for block in &a.blocks {
            assert!(block.gamma.iter().all(|&g| g == 1.0));
            assert!(block.beta.iter().all(|&v| v == 0.0));
            assert!(block.conv_b.iter().all(|&v| v == 0.0));
        }
        assert!(a.blocks[0].proj.is_some());
        assert!(a.blocks[1..].iter().all(|b| b.proj.is_none()));
    }

    #[test]
    fn weights_respect_glorot_bounds() {
        let m = TdcnnModel::init(&ArchSpec::default(), 1).unwrap();
        let b0 = (6.0f64 / (3.0 + 48.0)).sqrt();
        assert!(m.blocks[0].conv_w.iter().all(|w| w.abs() <= b0));
        let b1 = (6.0f64 / (48.0 + 48.0)).sqrt();
        assert!(m.blocks[1].conv_w.iter().all(|w| w.abs() <= b1));
    }

    #[test]
    fn default_parameter_count() {
        // Block 0: 16*1*3 conv + 3*16 (bias, scale, shift) + 16 projection = 112.
        // Blocks 1..12: 16*16*3 + 3*16 = 816 each. Head: 2*16 + 2 = 34.
        let arch = ArchSpec::default();
        let m = TdcnnModel::init(&arch, 0).unwrap();
        assert_eq!(112 + 11 * 816 + 34, 9122);
        assert_eq!(m.param_count(), 9122);
        assert_eq!(arch.param_count(), 9122);
    }

    #[test]
    fn invalid_arch_names_the_violation() {
        let mut arch = ArchSpec::default();
        arch.n_blocks = 11;
        let msg = TdcnnModel::init(&arch, 0).unwrap_err().to_string();
        assert!(msg.contains("dilation schedule"), "{msg}");
        let mut arch = ArchSpec::default();
        arch.kernel_size = 4;
        assert!(TdcnnModel::init(&arch, 0).unwrap_err().to_string().contains("odd"));
        let mut arch = ArchSpec::default();
        arch.dilation_schedule[0] = 3;
        assert!(TdcnnModel::init(&arch, 0).unwrap_err().to_string().contains("dilation 3"));
    }

    #[test]
    fn outputs_lie_on_the_simplex() {
        let m = TdcnnModel::init(&ArchSpec::default(), 3).unwrap();
        for seed in 0..10 {
            let x = random_input(33, seed);
            let p = m.forward(&x, Mode::Eval).unwrap();
            assert_eq!(p.len(), 2);
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            let p = m.forward(&x, Mode::Train { seed }).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn zero_head_gives_uniform_output() {
        let mut m = TdcnnModel::init(&ArchSpec::default(), 3).unwrap();
        m.head_w.fill(0.0);
        let p = m.forward(&random_input(33, 1), Mode::Eval).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let (loss, _) = m.loss_and_grad(&[(&random_input(33, 2)[..], 1)], Mode::Eval).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_loss() {
        let mut m = TdcnnModel::init(&ArchSpec::default(), 3).unwrap();
        m.head_w.fill(0.0);
        m.head_b = vec![-50.0, 50.0];
        let x = random_input(33, 1);
        let (loss, _) = m.loss_and_grad(&[(&x[..], 1)], Mode::Eval).unwrap();
        assert!(loss < 1e-40, "{loss}");
    }

    #[test]
    fn forward_is_deterministic() {
        let m = TdcnnModel::init(&ArchSpec::default(), 3).unwrap();
        let x = random_input(33, 4);
        let a = m.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a, m.forward(&x, Mode::Eval).unwrap());
        let t = m.forward(&x, Mode::Train { seed: 9 }).unwrap();
        assert_eq!(t, m.forward(&x, Mode::Train { seed: 9 }).unwrap());
    }

    #[test]
    fn empty_pattern_and_bad_label_are_rejected() {
        let m = TdcnnModel::init(&ArchSpec::tiny(2, 4), 0).unwrap();
        assert!(matches!(m.forward(&[], Mode::Eval), Err(Error::InvalidArgument(_))));
        let x = random_input(12, 0);
        assert!(m.loss_and_grad(&[(&x[..], 2)], Mode::Eval).is_err());
        assert!(m.loss_and_grad(&[], Mode::Eval).is_err());
    }

    fn gradient_error(model: &TdcnnModel, batch: &[(&[f64], usize)], mode: Mode) -> Vec<(String, f64)> {
        let (_, grads) = model.loss_and_grad(batch, mode).unwrap();
        let names = model.param_group_names();
        let analytic = grads.param_groups().iter().map(|g| g.to_vec()).collect::<Vec<_>>();
        let h = 1e-5;
        let mut out = Vec::new();
        for (gi, name) in names.iter().enumerate() {
            let mut worst: f64 = 0.0;
            for j in 0..analytic[gi].len() {
                let mut plus = model.clone();
                plus.param_groups_mut()[gi][j] += h;
                let mut minus = model.clone();
                minus.param_groups_mut()[gi][j] -= h;
                let lp = plus.loss_and_grad(batch, mode).unwrap().0;
                let lm = minus.loss_and_grad(batch, mode).unwrap().0;
                let numeric = (lp - lm) / (2.0 * h);
                let a = analytic[gi][j];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
            out.push((name.clone(), worst));
        }
        out
    }

    #[test]
    fn gradients_match_finite_differences() {
        let model = perturbed(&TdcnnModel::init(&ArchSpec::tiny(2, 4), 11).unwrap(), 12);
        let xs: Vec<Vec<f64>> = (0..3).map(|s| random_input(12, 40 + s)).collect();
        let batch: Vec<(&[f64], usize)> = xs.iter().enumerate().map(|(i, x)| (&x[..], i % 2)).collect();
        for mode in [Mode::Eval, Mode::Train { seed: 5 }] {
            for (name, err) in gradient_error(&model, &batch, mode) {
                assert!(err <= 1e-4, "{name}: relative error {err} ({mode:?})");
            }
        }
    }

    #[test]
    fn blocks_are_causal() {
        let model = perturbed(&TdcnnModel::init(&ArchSpec::tiny(2, 4), 2).unwrap(), 3);
        let x = random_input(24, 9);
        let base = model.block_activations(&x, Mode::Eval).unwrap();
        for k in 0..24 {
            let mut y = x.clone();
            y[k] += 0.5;
            let moved = model.block_activations(&y, Mode::Eval).unwrap();
            for (b, (a0, a1)) in base.iter().zip(&moved).enumerate() {
                for o in 0..4 {
                    for t in 0..k {
                        assert_eq!(a0[o * 24 + t], a1[o * 24 + t], "block {b} ch {o} t {t} k {k}");
                    }
                }
                assert!((k..24).any(|t| (0..4).any(|o| a0[o * 24 + t] != a1[o * 24 + t])));
            }
        }
    }

    #[test]
    fn receptive_field_of_default_schedule() {
        let arch = ArchSpec::default();
        assert_eq!(arch.receptive_field(), 181);
        let model = perturbed(&TdcnnModel::init(&arch, 5).unwrap(), 6);
        let n = 260;
        let x = random_input(n, 1);
        let last = |acts: &Vec<Vec<f64>>| -> Vec<f64> {
            let out = acts.last().unwrap();
            (0..arch.channels).map(|o| out[o * n + n - 1]).collect()
        };
        let base = last(&model.block_activations(&x, Mode::Eval).unwrap());
        // Index n-1-180 is the oldest input the last step can see.
        for k in [0, 40, n - 200, n - 1 - 181] {
            let mut y = x.clone();
            y[k] += 1.0;
            assert_eq!(base, last(&model.block_activations(&y, Mode::Eval).unwrap()), "k={k}");
        }
        let mut y = x.clone();
        y[n - 1 - 180] += 1.0;
        assert_ne!(base, last(&model.block_activations(&y, Mode::Eval).unwrap()));
    }

    #[test]
    fn decision_rule() {
        assert_eq!(Assessment::from_score(0.30).label, Class::Drowsy);
        assert_eq!(Assessment::from_score(0.70).label, Class::Wakeful);
        assert_eq!(Assessment::from_score(0.50).label, Class::Drowsy);
        assert_eq!(Assessment::from_score(0.5000001).label, Class::Wakeful);
    }

    #[test]
    fn window_assessment_averages_scores() {
        let a = aggregate_scores(&[0.1, 0.2]);
        assert!((a.score - 0.15).abs() < 1e-15);
        assert_eq!(a.label, Class::Drowsy);
        let a = aggregate_scores(&[0.4, 0.8]);
        assert!((a.score - 0.6).abs() < 1e-15);
        assert_eq!(a.label, Class::Wakeful);

        let m = TdcnnModel::init(&ArchSpec::default(), 3).unwrap();
        let x = random_input(33, 8);
        assert_eq!(m.assess_window(&[x.clone()]).unwrap(), m.assess(&x).unwrap());
        assert!(m.assess_window::<Vec<f64>>(&[]).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let m = perturbed(&TdcnnModel::init(&ArchSpec::default(), 3).unwrap(), 1);
        let back = TdcnnModel::from_flat(&m.arch, &m.flat_params()).unwrap();
        assert_eq!(back, m);
        assert!(TdcnnModel::from_flat(&m.arch, &m.flat_params()[1..]).is_err());
    }
}
