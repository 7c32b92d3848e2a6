use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{splitmix, Mode, TdcnnModel};
use crate::{Class, Error, Result};

/// Labeled pattern-signal rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatternDataset {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Class>,
}

impl PatternDataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<Class>) -> Result<Self> {
        let ds = PatternDataset { rows, labels };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.len() != self.labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows but {} labels",
                self.rows.len(),
                self.labels.len()
            )));
        }
        if let Some(first) = self.rows.first() {
            if first.is_empty() || self.rows.iter().any(|r| r.len() != first.len()) {
                return Err(Error::ShapeMismatch("rows must share one non-zero length".into()));
            }
        }
        if self.rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn count(&self, class: Class) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    pub fn push(&mut self, row: Vec<f64>, label: Class) {
        self.rows.push(row);
        self.labels.push(label);
    }

    pub fn subset(&self, indices: &[usize]) -> PatternDataset {
        PatternDataset {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Seeded 80/20 train/validation split.
    pub fn split(&self, seed: u64) -> Split {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (self.len() * 4 / 5).max(1).min(self.len().saturating_sub(1));
        let validation = idx.split_off(n_train);
        Split { train: idx, validation }
    }

    fn require_both_classes(&self) -> Result<()> {
        if Class::ALL.iter().any(|&c| self.count(c) == 0) {
            return Err(Error::invalid("dataset must contain both classes"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            weight_decay: 0.0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("lr must be > 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be >= 0"));
        }
        Ok(())
    }
}

/// What the generic training loop needs from a model.
pub trait Network: Clone + Send + Sync {
    fn param_groups(&self) -> Vec<&[f64]>;
    fn param_groups_mut(&mut self) -> Vec<&mut [f64]>;
    /// Class probabilities with dropout off.
    fn predict_proba(&self, input: &[f64]) -> Result<Vec<f64>>;
    /// Mean loss and gradient; `seed` drives any stochastic layers.
    fn batch_loss_and_grad(&self, batch: &[(&[f64], usize)], seed: u64) -> Result<(f64, Self)>;

    fn predict(&self, input: &[f64]) -> Result<Class> {
        let p = self.predict_proba(input)?;
        Ok(super::Assessment::from_score(p[Class::Wakeful.index()]).label)
    }
}

impl Network for TdcnnModel {
    fn param_groups(&self) -> Vec<&[f64]> {
        TdcnnModel::param_groups(self)
    }

    fn param_groups_mut(&mut self) -> Vec<&mut [f64]> {
        TdcnnModel::param_groups_mut(self)
    }

    fn predict_proba(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward(input, Mode::Eval)
    }

    fn batch_loss_and_grad(&self, batch: &[(&[f64], usize)], seed: u64) -> Result<(f64, Self)> {
        self.loss_and_grad(batch, Mode::Train { seed })
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<N: Network>(model: &N, params: &TrainParams) -> Self {
        let shapes: Vec<usize> = model.param_groups().iter().map(|g| g.len()).collect();
        Adam {
            lr: params.lr,
            beta1: params.beta1,
            beta2: params.beta2,
            eps: 1e-8,
            weight_decay: params.weight_decay,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn update<N: Network>(&mut self, model: &mut N, grads: &N) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let groups = model.param_groups_mut();
        for (((w, g), m), v) in groups.into_iter().zip(grads.param_groups()).zip(&mut self.m).zip(&mut self.v) {
            for j in 0..w.len() {
                let grad = g[j] + self.weight_decay * w[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * grad;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * grad * grad;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                w[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<N> {
    /// Snapshot with the best validation accuracy (earliest on ties).
    pub model: N,
    pub history: Vec<EpochRecord>,
    pub split: Split,
    pub best_val_accuracy: f64,
}

/// Fraction of rows `model` labels correctly.
pub fn accuracy<N: Network>(model: &N, data: &PatternDataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::invalid("accuracy over an empty set"));
    }
    let correct = indices
        .iter()
        .map(|&i| Ok((model.predict(&data.rows[i])? == data.labels[i]) as usize))
        .sum::<Result<usize>>()?;
    Ok(correct as f64 / indices.len() as f64)
}

/// Mini-batch Adam training on the seeded 80/20 split.
pub fn train_network<N: Network>(model: &N, dataset: &PatternDataset, params: &TrainParams) -> Result<TrainOutcome<N>> {
    params.validate()?;
    dataset.validate()?;
    dataset.require_both_classes()?;
    let split = dataset.split(params.seed);
    let mut current = model.clone();
    let mut best = model.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut history = Vec::with_capacity(params.epochs);
    let mut optimizer = Adam::new(model, params);
    let mut order = split.train.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(params.seed));
    let targets: Vec<usize> = dataset.labels.iter().map(|c| c.index()).collect();

    let mut step: u64 = 0;
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(params.batch_size) {
            let batch: Vec<(&[f64], usize)> = chunk.iter().map(|&i| (&dataset.rows[i][..], targets[i])).collect();
            let (loss, grads) = current.batch_loss_and_grad(&batch, splitmix(params.seed ^ splitmix(step)))?;
            optimizer.update(&mut current, &grads);
            loss_sum += loss;
            batches += 1;
            step += 1;
        }
        let val_accuracy = accuracy(&current, dataset, &split.validation)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_accuracy,
        });
        if val_accuracy > best_acc {
            best_acc = val_accuracy;
            best = current.clone();
        }
    }
    if params.epochs == 0 {
        best_acc = accuracy(&best, dataset, &split.validation)?;
    }
    Ok(TrainOutcome {
        model: best,
        history,
        split,
        best_val_accuracy: best_acc,
    })
}

/// Trains the dilated CNN; see [`train_network`].
pub fn train(model: &TdcnnModel, dataset: &PatternDataset, params: &TrainParams) -> Result<TrainOutcome<TdcnnModel>> {
    if dataset.width() == 0 {
        return Err(Error::invalid("dataset is empty"));
    }
    train_network(model, dataset, params)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::tdcnn::ArchSpec;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Class means -1 and +1 on every coordinate, noise std `sigma`.
    pub(crate) fn separable(n: usize, width: usize, sigma: f64, seed: u64) -> PatternDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = PatternDataset::default();
        for i in 0..n {
            let class = Class::ALL[i % 2];
            let mean = if class == Class::Drowsy { -1.0 } else { 1.0 };
            let row = (0..width)
                .map(|_| mean + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            ds.push(row, class);
        }
        ds
    }

    #[test]
    fn split_is_seeded_80_20() {
        let ds = separable(100, 3, 0.1, 0);
        let a = ds.split(4);
        assert_eq!(a.train.len(), 80);
        assert_eq!(a.validation.len(), 20);
        assert_eq!(a, ds.split(4));
        assert_ne!(a, ds.split(5));
        let mut all: Vec<usize> = a.train.iter().chain(&a.validation).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn zero_epochs_returns_input_model() {
        let ds = separable(40, 33, 0.1, 1);
        let model = TdcnnModel::init(&ArchSpec::default(), 2).unwrap();
        let params = TrainParams {
            epochs: 0,
            ..TrainParams::default()
        };
        let out = train(&model, &ds, &params).unwrap();
        assert_eq!(out.model, model);
        assert!(out.history.is_empty());
    }

    #[test]
    fn single_class_dataset_is_rejected() {
        let mut ds = PatternDataset::default();
        ds.push(vec![1.0, 2.0], Class::Drowsy);
        ds.push(vec![1.0, 2.0], Class::Drowsy);
        let model = TdcnnModel::init(&ArchSpec::default(), 2).unwrap();
        assert!(train(&model, &ds, &TrainParams::default()).is_err());
    }

    #[test]
    fn learns_separable_toy_set() {
        let ds = separable(400, 33, 0.1, 3);
        let model = TdcnnModel::init(&ArchSpec::default(), 4).unwrap();
        let params = TrainParams {
            epochs: 30,
            seed: 5,
            ..TrainParams::default()
        };
        let out = train(&model, &ds, &params).unwrap();
        let first = out.history.first().unwrap().train_loss;
        let last = out.history.last().unwrap().train_loss;
        assert!(out.best_val_accuracy >= 0.95, "val accuracy {}", out.best_val_accuracy);
        assert!(last <= 0.5 * first, "loss {first} -> {last}");
        let again = train(&model, &ds, &params).unwrap();
        assert_eq!(again.model, out.model);
        assert_eq!(again.history, out.history);
    }

    #[test]
    fn adam_first_step_moves_each_weight_by_lr() {
        let ds = separable(8, 33, 0.1, 3);
        let mut model = TdcnnModel::init(&ArchSpec::tiny(2, 4), 1).unwrap();
        let before = model.clone();
        let params = TrainParams::default();
        let batch: Vec<(&[f64], usize)> = ds.rows.iter().zip(&ds.labels).map(|(r, l)| (&r[..], l.index())).collect();
        let (_, g) = model.loss_and_grad(&batch, Mode::Eval).unwrap();
        let mut adam = Adam::new(&model, &params);
        adam.update(&mut model, &g);
        // Bias correction makes the first update lr * sign(g) up to eps.
        for ((w1, w0), gr) in model.flat_params().iter().zip(before.flat_params()).zip(g.flat_params()) {
            if gr.abs() > 1e-6 {
                assert!(((w0 - w1) - params.lr * gr.signum()).abs() < 1e-8);
            }
        }
    }
}
