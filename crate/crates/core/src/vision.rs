//! Criss-cross attention, the salient-box rule and mIoU.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense H×W×C map, channel-fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        let m = FeatureMap { h, w, c, data };
        m.validate()?;
        Ok(m)
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        FeatureMap { h, w, c, data: vec![0.0; h * w * c] }
    }

    pub fn random(h: usize, w: usize, c: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        FeatureMap { h, w, c, data }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 || self.c == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature map dims must be >= 1, got {}x{}x{}",
                self.h, self.w, self.c
            )));
        }
        if self.data.len() != self.h * self.w * self.c {
            return Err(Error::ShapeMismatch(format!(
                "{}x{}x{} map needs {} values, got {}",
                self.h,
                self.w,
                self.c,
                self.h * self.w * self.c,
                self.data.len()
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature map contains non-finite values"));
        }
        Ok(())
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let o = (row * self.w + col) * self.c;
        &self.data[o..o + self.c]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let o = (row * self.w + col) * self.c;
        &mut self.data[o..o + self.c]
    }
}

/// Bias-free 1×1 projections shared by every recurrence step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RccaWeights {
    pub c: usize,
    pub c_reduced: usize,
    /// c_reduced × c, row-major.
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    /// c × c.
    pub wv: Vec<f64>,
    pub gamma: f64,
}

pub fn reduced_channels(c: usize) -> usize {
    (c / 8).max(1)
}

impl RccaWeights {
    pub fn random(c: usize, seed: u64) -> Result<Self> {
        if c == 0 {
            return Err(Error::invalid("channel count must be >= 1"));
        }
        let cr = reduced_channels(c);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (c as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect() };
        Ok(RccaWeights {
            c,
            c_reduced: cr,
            wq: draw(cr * c),
            wk: draw(cr * c),
            wv: draw(c * c),
            gamma: 1.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.c == 0 || self.c_reduced == 0 {
            return Err(Error::invalid("projection sizes must be >= 1"));
        }
        let want = [(self.wq.len(), self.c_reduced * self.c, "wq"), (self.wk.len(), self.c_reduced * self.c, "wk"), (self.wv.len(), self.c * self.c, "wv")];
        for (got, need, name) in want {
            if got != need {
                return Err(Error::ShapeMismatch(format!("{name} needs {need} values, got {got}")));
            }
        }
        if !self.gamma.is_finite() || self.wq.iter().chain(&self.wk).chain(&self.wv).any(|v| !v.is_finite()) {
            return Err(Error::invalid("weights must be finite"));
        }
        Ok(())
    }
}

fn project(m: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    (0..rows)
        .map(|r| m[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Positions in the row and column through (row, col): the column top to
/// bottom, then the row left to right without the center.
pub fn cross_positions(h: usize, w: usize, row: usize, col: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..h).map(|i| (i, col)).collect();
    out.extend((0..w).filter(|&j| j != col).map(|j| (row, j)));
    out
}

struct Projected {
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

fn check(x: &FeatureMap, weights: &RccaWeights) -> Result<()> {
    x.validate()?;
    weights.validate()?;
    if x.c != weights.c {
        return Err(Error::ShapeMismatch(format!(
            "feature map has {} channels, weights expect {}",
            x.c, weights.c
        )));
    }
    Ok(())
}

fn projected(x: &FeatureMap, weights: &RccaWeights) -> Projected {
    let n = x.h * x.w;
    let px = |p: usize| &x.data[p * x.c..(p + 1) * x.c];
    Projected {
        q: (0..n).map(|p| project(&weights.wq, weights.c_reduced, px(p))).collect(),
        k: (0..n).map(|p| project(&weights.wk, weights.c_reduced, px(p))).collect(),
        v: (0..n).map(|p| project(&weights.wv, weights.c, px(p))).collect(),
    }
}

fn pixel_attention(x: &FeatureMap, pr: &Projected, row: usize, col: usize) -> Vec<f64> {
    let q = &pr.q[row * x.w + col];
    let e: Vec<f64> = cross_positions(x.h, x.w, row, col)
        .iter()
        .map(|&(i, j)| q.iter().zip(&pr.k[i * x.w + j]).map(|(a, b)| a * b).sum())
        .collect();
    crate::tdcnn::softmax(&e)
}

/// Attention weights of pixel (row, col) over [`cross_positions`].
pub fn attention_weights(x: &FeatureMap, weights: &RccaWeights, row: usize, col: usize) -> Result<Vec<f64>> {
    check(x, weights)?;
    if row >= x.h || col >= x.w {
        return Err(Error::invalid(format!("pixel ({row}, {col}) outside {}x{}", x.h, x.w)));
    }
    Ok(pixel_attention(x, &projected(x, weights), row, col))
}

/// One criss-cross pass with residual: out_u = γ·Σ a_i v_i + x_u.
pub fn cc_attention(x: &FeatureMap, weights: &RccaWeights) -> Result<FeatureMap> {
    check(x, weights)?;
    let pr = projected(x, weights);
    let pixels: Vec<Vec<f64>> = (0..x.h * x.w)
        .into_par_iter()
        .map(|p| {
            let (row, col) = (p / x.w, p % x.w);
            let a = pixel_attention(x, &pr, row, col);
            let mut out = x.pixel(row, col).to_vec();
            for (ai, &(i, j)) in a.iter().zip(&cross_positions(x.h, x.w, row, col)) {
                for (o, v) in out.iter_mut().zip(&pr.v[i * x.w + j]) {
                    *o += weights.gamma * ai * v;
                }
            }
            out
        })
        .collect();
    Ok(FeatureMap {
        h: x.h,
        w: x.w,
        c: x.c,
        data: pixels.concat(),
    })
}

/// `r` passes of [`cc_attention`] with shared weights.
pub fn rcca(x: &FeatureMap, weights: &RccaWeights, r: usize) -> Result<FeatureMap> {
    if r < 1 {
        return Err(Error::invalid("recurrence must be >= 1"));
    }
    let mut cur = cc_attention(x, weights)?;
    for _ in 1..r {
        cur = cc_attention(&cur, weights)?;
    }
    Ok(cur)
}

/// Finite-difference influence: entry [p][u] is the largest output change at
/// pixel u when every channel of pixel p is nudged by `delta`.
pub fn influence_matrix(x: &FeatureMap, weights: &RccaWeights, r: usize, delta: f64) -> Result<Vec<Vec<f64>>> {
    let base = rcca(x, weights, r)?;
    let n = x.h * x.w;
    (0..n)
        .into_par_iter()
        .map(|p| {
            let mut xp = x.clone();
            xp.data[p * x.c..(p + 1) * x.c].iter_mut().for_each(|v| *v += delta);
            let out = rcca(&xp, weights, r)?;
            Ok((0..n)
                .map(|u| {
                    out.data[u * x.c..(u + 1) * x.c]
                        .iter()
                        .zip(&base.data[u * x.c..(u + 1) * x.c])
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.h > 0.0) || !self.x.is_finite() || !self.y.is_finite() || !self.w.is_finite() || !self.h.is_finite() {
            return Err(Error::invalid(format!("box needs finite coords and w, h > 0, got {self:?}")));
        }
        Ok(())
    }
}

/// Salient-size thresholds: `l1` against height, `l2` against width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaliencyThresholds {
    pub l1: f64,
    pub l2: f64,
}

impl SaliencyThresholds {
    pub fn for_frame(frame_height: f64, frame_width: f64) -> Self {
        SaliencyThresholds {
            l1: 0.15 * frame_height,
            l2: 0.05 * frame_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l1 >= 0.0 && self.l2 >= 0.0) {
            return Err(Error::invalid("thresholds must be >= 0"));
        }
        Ok(())
    }
}

/// Keeps boxes taller than `l1` or wider than `l2`, in input order.
pub fn filter_salient(boxes: &[BoundingBox], l1: f64, l2: f64) -> Vec<BoundingBox> {
    boxes.iter().copied().filter(|b| b.h > l1 || b.w > l2).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegMask {
    pub h: usize,
    pub w: usize,
    pub labels: Vec<u32>,
}

impl SegMask {
    pub fn new(h: usize, w: usize, labels: Vec<u32>) -> Result<Self> {
        if h == 0 || w == 0 || labels.len() != h * w {
            return Err(Error::ShapeMismatch(format!(
                "{h}x{w} mask needs {} labels, got {}",
                h * w,
                labels.len()
            )));
        }
        Ok(SegMask { h, w, labels })
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> u32) -> Self {
        SegMask {
            h,
            w,
            labels: (0..h * w).map(|p| f(p / w, p % w)).collect(),
        }
    }

    pub fn check_labels(&self, n_classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l as usize >= n_classes) {
            Some(l) => Err(Error::invalid(format!("label {l} not below n_classes = {n_classes}"))),
            None => Ok(()),
        }
    }
}

/// Per-class IoU; `None` for classes absent from both masks.
pub fn class_iou(pred: &SegMask, gt: &SegMask, n_classes: usize) -> Result<Vec<Option<f64>>> {
    if (pred.h, pred.w) != (gt.h, gt.w) || pred.labels.len() != gt.labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "pred is {}x{}, gt is {}x{}",
            pred.h, pred.w, gt.h, gt.w
        )));
    }
    pred.check_labels(n_classes)?;
    gt.check_labels(n_classes)?;
    let mut inter = vec![0u64; n_classes];
    let mut union = vec![0u64; n_classes];
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        if p == g {
            inter[p as usize] += 1;
            union[p as usize] += 1;
        } else {
            union[p as usize] += 1;
            union[g as usize] += 1;
        }
    }
    Ok(inter
        .iter()
        .zip(&union)
        .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
        .collect())
}

/// Mean IoU over classes present in either mask.
pub fn miou(pred: &SegMask, gt: &SegMask, n_classes: usize) -> Result<f64> {
    let ious: Vec<f64> = class_iou(pred, gt, n_classes)?.into_iter().flatten().collect();
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}
