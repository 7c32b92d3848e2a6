use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{train_network, Network, PatternDataset, TrainOutcome, TrainParams};
use super::{glorot, softmax};
use crate::{Class, Error, Result};

pub const MLP_HIDDEN: usize = 32;

/// One hidden ReLU layer, softmax output. Baseline for the CNN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Mlp {
    pub fn init(input: usize, hidden: usize, classes: usize, seed: u64) -> Result<Self> {
        if input == 0 || hidden == 0 || classes < 2 {
            return Err(Error::invalid("mlp needs input >= 1, hidden >= 1 and classes >= 2"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Mlp {
            input,
            hidden,
            classes,
            w1: glorot(&mut rng, hidden * input, input, hidden),
            b1: vec![0.0; hidden],
            w2: glorot(&mut rng, classes * hidden, hidden, classes),
            b2: vec![0.0; classes],
        })
    }

    fn hidden_act(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.input..(j + 1) * self.input];
                let z: f64 = self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                z.max(0.0)
            })
            .collect()
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|k| {
                let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
                self.b2[k] + row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input {
            return Err(Error::ShapeMismatch(format!("mlp expects {} inputs, got {}", self.input, x.len())));
        }
        Ok(())
    }

    fn zeros_like(&self) -> Self {
        Mlp {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
            ..self.clone()
        }
    }
}

impl Network for Mlp {
    fn param_groups(&self) -> Vec<&[f64]> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn param_groups_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn predict_proba(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check(input)?;
        Ok(softmax(&self.logits(&self.hidden_act(input))))
    }

    fn batch_loss_and_grad(&self, batch: &[(&[f64], usize)], _seed: u64) -> Result<(f64, Self)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut g = self.zeros_like();
        let mut loss = 0.0;
        for &(x, y) in batch {
            self.check(x)?;
            if y >= self.classes {
                return Err(Error::invalid(format!("label {y} out of range")));
            }
            let h = self.hidden_act(x);
            let p = softmax(&self.logits(&h));
            loss -= p[y].max(f64::MIN_POSITIVE).ln();
            let mut dh = vec![0.0; self.hidden];
            for k in 0..self.classes {
                let dz = p[k] - (k == y) as u8 as f64;
                g.b2[k] += dz;
                for j in 0..self.hidden {
                    g.w2[k * self.hidden + j] += dz * h[j];
                    dh[j] += dz * self.w2[k * self.hidden + j];
                }
            }
            for j in 0..self.hidden {
                if h[j] <= 0.0 {
                    continue;
                }
                g.b1[j] += dh[j];
                let row = &mut g.w1[j * self.input..(j + 1) * self.input];
                for (gw, v) in row.iter_mut().zip(x) {
                    *gw += dh[j] * v;
                }
            }
        }
        let n = batch.len() as f64;
        for grp in g.param_groups_mut() {
            grp.iter_mut().for_each(|v| *v /= n);
        }
        Ok((loss / n, g))
    }
}

#[derive(Debug, Clone)]
pub struct MlpOutcome {
    pub training: TrainOutcome<Mlp>,
    /// Validation accuracy per class, indexed by `Class::index`.
    pub per_class_val_accuracy: [f64; 2],
}

/// Trains the baseline with the same optimizer, split and seed as the CNN.
pub fn train_baseline_mlp(dataset: &PatternDataset, params: &TrainParams) -> Result<MlpOutcome> {
    if dataset.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let model = Mlp::init(dataset.width(), MLP_HIDDEN, 2, params.seed ^ 0x6D6C70)?;
    let training = train_network(&model, dataset, params)?;
    let mut per_class = [0.0; 2];
    for class in Class::ALL {
        let idx: Vec<usize> = training
            .split
            .validation
            .iter()
            .copied()
            .filter(|&i| dataset.labels[i] == class)
            .collect();
        per_class[class.index()] = if idx.is_empty() {
            f64::NAN
        } else {
            super::train::accuracy(&training.model, dataset, &idx)?
        };
    }
    Ok(MlpOutcome {
        training,
        per_class_val_accuracy: per_class,
    })
}
