//! Search over hyper-filter layer edges.
//!
//! Layer edges live on a grid of step `grid_hz` inside the 1–10 Hz PPG band.
//! A tabular Q-learner walks that grid one edge move at a time; its reward is
//! the mean per-dimension Fisher ratio between drowsy and wakeful
//! pattern-signal intensities. [`enumerate_best`] evaluates every
//! configuration and serves as the oracle for small spaces.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::filterbank::{
    design_bandpass, filter_samples, subband_edges, tap_count, transition_for_width, HyperFilterConfig, Layer,
    DEFAULT_BANDS_PER_LAYER, PPG_BAND_HI, PPG_BAND_LO,
};
use crate::signal_gen::PpgSignal;
use crate::{Class, Error, Result};

/// Variance floor in the Fisher ratio denominator.
pub const FISHER_EPS: f64 = 1e-9;
/// Largest space [`enumerate_best`] accepts.
pub const ENUMERATION_LIMIT: u128 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub grid_hz: f64,
    pub min_width_hz: f64,
    pub n_layers: usize,
    #[serde(default = "default_bands")]
    pub bands_per_layer: usize,
    #[serde(default = "default_bounds")]
    pub bounds: (f64, f64),
}

fn default_bands() -> usize {
    DEFAULT_BANDS_PER_LAYER
}

fn default_bounds() -> (f64, f64) {
    (PPG_BAND_LO, PPG_BAND_HI)
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            grid_hz: 0.5,
            min_width_hz: 1.0,
            n_layers: 3,
            bands_per_layer: DEFAULT_BANDS_PER_LAYER,
            bounds: default_bounds(),
        }
    }
}

/// A configuration expressed as grid indices, one `(lo, hi)` pair per layer.
///
/// The derived ordering is lexicographic over the edge tuple, which is the
/// tie-break order used by [`enumerate_best`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridConfig(pub Vec<(usize, usize)>);

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds;
        if !(self.grid_hz.is_finite() && self.grid_hz > 0.0) {
            return Err(Error::invalid(format!("grid_hz must be > 0, got {}", self.grid_hz)));
        }
        if !(self.min_width_hz.is_finite() && self.min_width_hz >= self.grid_hz) {
            return Err(Error::invalid(format!(
                "min_width_hz ({}) must be >= grid_hz ({})",
                self.min_width_hz, self.grid_hz
            )));
        }
        if self.n_layers == 0 || self.bands_per_layer == 0 {
            return Err(Error::invalid("n_layers and bands_per_layer must be >= 1"));
        }
        if !(PPG_BAND_LO <= lo && lo < hi && hi <= PPG_BAND_HI) {
            return Err(Error::invalid(format!("bounds ({lo}, {hi}) must lie inside [1, 10] Hz")));
        }
        let steps = (hi - lo) / self.grid_hz;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "grid_hz {} does not divide the bounds span {}",
                self.grid_hz,
                hi - lo
            )));
        }
        Ok(())
    }

    /// Number of grid points on the bounds, both ends included.
    pub fn grid_points(&self) -> usize {
        ((self.bounds.1 - self.bounds.0) / self.grid_hz).round() as usize + 1
    }

    fn min_steps(&self) -> usize {
        ((self.min_width_hz / self.grid_hz) - 1e-9).ceil() as usize
    }

    pub fn freq(&self, index: usize) -> f64 {
        if index + 1 == self.grid_points() {
            self.bounds.1
        } else {
            self.bounds.0 + index as f64 * self.grid_hz
        }
    }

    fn index_of(&self, freq: f64) -> Option<usize> {
        let x = (freq - self.bounds.0) / self.grid_hz;
        let i = x.round();
        if (x - i).abs() > 1e-9 || i < 0.0 || i as usize >= self.grid_points() {
            None
        } else {
            Some(i as usize)
        }
    }

    fn layer_ok(&self, (lo, hi): (usize, usize)) -> bool {
        lo < hi && hi < self.grid_points() && hi - lo >= self.min_steps()
    }

    /// Every admissible single-layer edge pair, in lexicographic order.
    pub fn layer_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.grid_points();
        let min = self.min_steps().max(1);
        (0..n)
            .flat_map(|lo| (lo + min..n).map(move |hi| (lo, hi)))
            .collect()
    }

    pub fn config_count(&self) -> u128 {
        (self.layer_pairs().len() as u128).pow(self.n_layers as u32)
    }

    pub fn to_config(&self, grid: &GridConfig) -> HyperFilterConfig {
        HyperFilterConfig {
            bands_per_layer: self.bands_per_layer,
            layers: grid.0.iter().map(|&(lo, hi)| Layer::new(self.freq(lo), self.freq(hi))).collect(),
        }
    }

    /// Maps a configuration back onto the grid.
    pub fn locate(&self, config: &HyperFilterConfig) -> Result<GridConfig> {
        if config.layers.len() != self.n_layers || config.bands_per_layer != self.bands_per_layer {
            return Err(Error::invalid(format!(
                "config has {} layers x {} bands, space expects {} x {}",
                config.layers.len(),
                config.bands_per_layer,
                self.n_layers,
                self.bands_per_layer
            )));
        }
        config
            .layers
            .iter()
            .map(|l| match (self.index_of(l.f_lo), self.index_of(l.f_hi)) {
                (Some(lo), Some(hi)) if self.layer_ok((lo, hi)) => Ok((lo, hi)),
                _ => Err(Error::invalid(format!(
                    "layer ({}, {}) is not representable on a {} Hz grid with min width {} Hz",
                    l.f_lo, l.f_hi, self.grid_hz, self.min_width_hz
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(GridConfig)
    }

    /// All representable configurations in lexicographic order.
    pub fn enumerate(&self) -> Vec<GridConfig> {
        let pairs = self.layer_pairs();
        let mut out = vec![GridConfig(Vec::new())];
        for _ in 0..self.n_layers {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    pairs.iter().map(move |p| {
                        let mut next = prefix.0.clone();
                        next.push(*p);
                        GridConfig(next)
                    })
                })
                .collect();
        }
        out
    }

    fn random_config(&self, pairs: &[(usize, usize)], rng: &mut impl Rng) -> GridConfig {
        GridConfig((0..self.n_layers).map(|_| pairs[rng.random_range(0..pairs.len())]).collect())
    }

    /// Four edge moves per layer: lo down, lo up, hi down, hi up.
    pub fn action_count(&self) -> usize {
        4 * self.n_layers
    }

    pub fn apply_action(&self, grid: &GridConfig, action: usize) -> Option<GridConfig> {
        let layer = action / 4;
        let (lo, hi) = *grid.0.get(layer)?;
        let moved = match action % 4 {
            0 => (lo.checked_sub(1)?, hi),
            1 => (lo + 1, hi),
            2 => (lo, hi.checked_sub(1)?),
            _ => (lo, hi + 1),
        };
        if !self.layer_ok(moved) {
            return None;
        }
        let mut next = grid.clone();
        next.0[layer] = moved;
        Some(next)
    }

    fn valid_actions(&self, grid: &GridConfig) -> Vec<(usize, GridConfig)> {
        (0..self.action_count())
            .filter_map(|a| self.apply_action(grid, a).map(|g| (a, g)))
            .collect()
    }

    /// Margins (samples) any configuration of this space may need at `fs`.
    fn candidate_margins(&self, fs: f64) -> BTreeSet<usize> {
        let min = self.min_steps().max(1);
        (min..self.grid_points())
            .map(|steps| {
                let band = steps as f64 * self.grid_hz / self.bands_per_layer as f64;
                (tap_count(fs, transition_for_width(band)) - 1) / 2
            })
            .collect()
    }
}

/// All configurations one grid step away from `config`, in action order.
pub fn neighbors(config: &HyperFilterConfig, space: &SearchSpace) -> Result<Vec<HyperFilterConfig>> {
    space.validate()?;
    let grid = space.locate(config)?;
    Ok(space
        .valid_actions(&grid)
        .into_iter()
        .map(|(_, g)| space.to_config(&g))
        .collect())
}

/// Mean over dimensions of `(mu_d - mu_w)^2 / (var_d + var_w + eps)`,
/// with population variances.
pub fn fisher_score(drowsy: &[Vec<f64>], wakeful: &[Vec<f64>]) -> Result<f64> {
    if drowsy.is_empty() || wakeful.is_empty() {
        return Err(Error::invalid("Fisher score needs samples from both classes"));
    }
    let dims = drowsy[0].len();
    if dims == 0 || drowsy.iter().chain(wakeful).any(|r| r.len() != dims) {
        return Err(Error::ShapeMismatch("rows must share one non-zero length".into()));
    }
    let moments = |rows: &[Vec<f64>], d: usize| {
        let n = rows.len() as f64;
        let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    };
    let total: f64 = (0..dims)
        .map(|d| {
            let (md, vd) = moments(drowsy, d);
            let (mw, vw) = moments(wakeful, d);
            (md - mw).powi(2) / (vd + vw + FISHER_EPS)
        })
        .sum();
    Ok(total / dims as f64)
}

/// Sum of intensities, sum of squared intensities, sample count.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    sum: f64,
    sum_sq: f64,
    count: usize,
}

impl Moments {
    fn add(&mut self, other: &Moments) {
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.count += other.count;
    }
}

/// Per signal, per sub-band of one layer: moments keyed by margin.
type LayerMoments = Vec<Vec<BTreeMap<usize, Moments>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct LayerKey {
    lo: u64,
    hi: u64,
    bands: usize,
}

/// Reward evaluation with per-layer caching.
///
/// Pattern-signal intensity is the absolute value of each channel sample.
/// Band-passed channels are zero-mean, so class means only separate on the
/// rectified values. Each layer's channels are reduced to moment sums over
/// the sample windows the caller may need, which keeps repeated evaluation
/// during a search cheap.
pub struct RewardEvaluator<'a> {
    signals: &'a [PpgSignal],
    space: Option<SearchSpace>,
    layers: HashMap<LayerKey, Arc<LayerMoments>>,
    memo: HashMap<Vec<u64>, f64>,
}

impl<'a> RewardEvaluator<'a> {
    pub fn new(signals: &'a [PpgSignal]) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (i, s) in signals.iter().enumerate() {
            s.validate()?;
            match s.label {
                Some(c) => {
                    seen.insert(c);
                }
                None => return Err(Error::invalid(format!("signal {i} has no class label"))),
            }
        }
        if seen.len() < 2 {
            return Err(Error::invalid("reward needs labeled signals from both classes"));
        }
        Ok(RewardEvaluator {
            signals,
            space: None,
            layers: HashMap::new(),
            memo: HashMap::new(),
        })
    }

    /// Precomputes moments for every margin configurations of `space` can need.
    pub fn for_space(signals: &'a [PpgSignal], space: &SearchSpace) -> Result<Self> {
        space.validate()?;
        let mut ev = Self::new(signals)?;
        ev.space = Some(*space);
        Ok(ev)
    }

    fn margins_for(&self, fs: f64, needed: usize) -> BTreeSet<usize> {
        let mut set = self.space.map(|s| s.candidate_margins(fs)).unwrap_or_default();
        set.insert(needed);
        set
    }

    fn layer_moments(&self, layer: Layer, bands: usize, margins: &[BTreeSet<usize>]) -> Result<LayerMoments> {
        let edges = subband_edges(layer, bands);
        self.signals
            .par_iter()
            .zip(margins.par_iter())
            .map(|(signal, margins)| {
                edges
                    .iter()
                    .map(|&(lo, hi)| {
                        let kernel = design_bandpass(lo, hi, signal.fs, transition_for_width(hi - lo))?;
                        let y = filter_samples(&kernel.taps, &signal.samples);
                        let n = y.len();
                        Ok(margins
                            .iter()
                            .filter(|&&m| 2 * m < n)
                            .map(|&m| {
                                let window = &y[m..n - m];
                                let moments = Moments {
                                    sum: window.iter().map(|v| v.abs()).sum(),
                                    sum_sq: window.iter().map(|v| v * v).sum(),
                                    count: window.len(),
                                };
                                (m, moments)
                            })
                            .collect())
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect()
    }

    fn layer(&mut self, layer: Layer, bands: usize, needed: &[usize]) -> Result<Arc<LayerMoments>> {
        let key = LayerKey {
            lo: layer.f_lo.to_bits(),
            hi: layer.f_hi.to_bits(),
            bands,
        };
        if let Some(cached) = self.layers.get(&key) {
            let complete = cached
                .iter()
                .zip(needed)
                .all(|(per_band, m)| per_band.iter().all(|map| map.contains_key(m)));
            if complete {
                return Ok(cached.clone());
            }
        }
        let margins: Vec<BTreeSet<usize>> = self
            .signals
            .iter()
            .zip(needed)
            .enumerate()
            .map(|(i, (s, &m))| {
                let mut set = self.margins_for(s.fs, m);
                if let Some(old) = self.layers.get(&key) {
                    set.extend(old[i].iter().flat_map(|band| band.keys().copied()));
                }
                set
            })
            .collect();
        let computed = Arc::new(self.layer_moments(layer, bands, &margins)?);
        self.layers.insert(key, computed.clone());
        Ok(computed)
    }

    /// Reward of `config` on the evaluator's signals.
    pub fn evaluate(&mut self, config: &HyperFilterConfig) -> Result<f64> {
        config.validate()?;
        let memo_key: Vec<u64> = std::iter::once(config.bands_per_layer as u64)
            .chain(config.layers.iter().flat_map(|l| [l.f_lo.to_bits(), l.f_hi.to_bits()]))
            .collect();
        if let Some(&r) = self.memo.get(&memo_key) {
            return Ok(r);
        }
        let mut needed = Vec::with_capacity(self.signals.len());
        for s in self.signals {
            let taps = config.max_taps(s.fs);
            if s.len() < taps {
                return Err(Error::SignalTooShort {
                    required: taps,
                    actual: s.len(),
                });
            }
            needed.push((taps - 1) / 2);
        }

        let mut dims = Vec::with_capacity(config.channel_count());
        for layer in &config.layers {
            let moments = self.layer(*layer, config.bands_per_layer, &needed)?;
            for band in 0..config.bands_per_layer {
                let mut per_class = [Moments::default(); 2];
                for (i, s) in self.signals.iter().enumerate() {
                    let class = s.label.expect("labels checked on construction");
                    per_class[class.index()].add(&moments[i][band][&needed[i]]);
                }
                dims.push(per_class);
            }
        }
        let stats = |m: &Moments| {
            let n = m.count as f64;
            let mean = m.sum / n;
            ((mean), (m.sum_sq / n - mean * mean).max(0.0))
        };
        let total: f64 = dims
            .iter()
            .map(|[d, w]| {
                let (md, vd) = stats(d);
                let (mw, vw) = stats(w);
                (md - mw).powi(2) / (vd + vw + FISHER_EPS)
            })
            .sum();
        let r = total / dims.len() as f64;
        self.memo.insert(memo_key, r);
        Ok(r)
    }
}

/// Class separability of the pattern-signals `config` produces on `signals`.
pub fn reward(config: &HyperFilterConfig, signals: &[PpgSignal]) -> Result<f64> {
    RewardEvaluator::new(signals)?.evaluate(config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlParams {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub epsilon: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for RlParams {
    fn default() -> Self {
        RlParams {
            episodes: 40,
            steps_per_episode: 15,
            epsilon: 0.2,
            alpha: 0.5,
            gamma: 0.9,
            seed: 0,
        }
    }
}

impl RlParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid(format!("epsilon must be in [0, 1], got {}", self.epsilon)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        Ok(())
    }
}

/// State-action values; missing entries read as zero.
#[derive(Debug, Clone, Default)]
pub struct QTable {
    values: HashMap<(GridConfig, usize), f64>,
}

impl QTable {
    pub fn get(&self, state: &GridConfig, action: usize) -> f64 {
        self.values.get(&(state.clone(), action)).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, state: &GridConfig, action: usize, value: f64) {
        self.values.insert((state.clone(), action), value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub episode: usize,
    pub best_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: HyperFilterConfig,
    pub reward: f64,
    pub history: Vec<HistoryEntry>,
    pub evaluations: usize,
}

/// Best-so-far tracker; equal rewards resolve to the smaller edge tuple.
struct Best {
    config: GridConfig,
    reward: f64,
}

impl Best {
    fn offer(&mut self, config: &GridConfig, reward: f64) {
        if reward > self.reward || (reward == self.reward && *config < self.config) {
            self.config = config.clone();
            self.reward = reward;
        }
    }
}

/// Epsilon-greedy tabular Q-learning with an arbitrary reward function.
///
/// Each episode starts from a uniformly drawn configuration (the first one
/// from the initial draw). Returns the best configuration ever visited.
pub fn q_learn_with<F>(
    space: &SearchSpace,
    params: &RlParams,
    mut reward_fn: F,
) -> Result<(GridConfig, f64, Vec<HistoryEntry>, QTable)>
where
    F: FnMut(&GridConfig) -> Result<f64>,
{
    space.validate()?;
    params.validate()?;
    let pairs = space.layer_pairs();
    if pairs.is_empty() {
        return Err(Error::invalid("search space has no representable configuration"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let initial = space.random_config(&pairs, &mut rng);
    let r0 = reward_fn(&initial)?;
    let mut best = Best {
        config: initial.clone(),
        reward: r0,
    };
    let mut q = QTable::default();
    let mut history = Vec::with_capacity(params.episodes);

    for episode in 0..params.episodes {
        let mut state = if episode == 0 {
            initial.clone()
        } else {
            space.random_config(&pairs, &mut rng)
        };
        let r = reward_fn(&state)?;
        best.offer(&state, r);
        for _ in 0..params.steps_per_episode {
            let actions = space.valid_actions(&state);
            if actions.is_empty() {
                break;
            }
            let pick = if rng.random::<f64>() < params.epsilon {
                rng.random_range(0..actions.len())
            } else {
                let values: Vec<f64> = actions.iter().map(|(a, _)| q.get(&state, *a)).collect();
                let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let ties: Vec<usize> = (0..values.len()).filter(|&i| values[i] == top).collect();
                ties[rng.random_range(0..ties.len())]
            };
            let (action, next) = actions[pick].clone();
            let r = reward_fn(&next)?;
            best.offer(&next, r);
            let future = space
                .valid_actions(&next)
                .iter()
                .map(|(a, _)| q.get(&next, *a))
                .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
                .unwrap_or(0.0);
            let old = q.get(&state, action);
            q.set(&state, action, old + params.alpha * (r + params.gamma * future - old));
            state = next;
        }
        history.push(HistoryEntry {
            episode,
            best_reward: best.reward,
        });
    }
    Ok((best.config, best.reward, history, q))
}

/// Q-learning search for the most class-separating configuration on `data`.
pub fn q_learn(space: &SearchSpace, data: &[PpgSignal], params: &RlParams) -> Result<SearchResult> {
    let mut evaluator = RewardEvaluator::for_space(data, space)?;
    let mut evaluations = 0;
    let (best, reward, history, _) = q_learn_with(space, params, |g| {
        evaluations += 1;
        evaluator.evaluate(&space.to_config(g))
    })?;
    Ok(SearchResult {
        best: space.to_config(&best),
        reward,
        history,
        evaluations,
    })
}

/// Exhaustive argmax of `reward_fn`; ties go to the smallest edge tuple.
pub fn enumerate_best_with<F>(space: &SearchSpace, mut reward_fn: F) -> Result<(GridConfig, f64)>
where
    F: FnMut(&GridConfig) -> Result<f64>,
{
    space.validate()?;
    let count = space.config_count();
    if count > ENUMERATION_LIMIT {
        return Err(Error::SpaceTooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut best: Option<(GridConfig, f64)> = None;
    // Lexicographic enumeration order: keeping only strict improvements
    // implements the tie-break.
    for g in space.enumerate() {
        let r = reward_fn(&g)?;
        if best.as_ref().is_none_or(|(_, b)| r > *b) {
            best = Some((g, r));
        }
    }
    best.ok_or_else(|| Error::invalid("search space has no representable configuration"))
}

/// Exhaustive search over every representable configuration.
pub fn enumerate_best(space: &SearchSpace, data: &[PpgSignal]) -> Result<(HyperFilterConfig, f64)> {
    let mut evaluator = RewardEvaluator::for_space(data, space)?;
    let (g, r) = enumerate_best_with(space, |g| evaluator.evaluate(&space.to_config(g)))?;
    Ok((space.to_config(&g), r))
}

/// Signals grouped by label, in input order.
pub fn split_by_class(signals: &[PpgSignal]) -> BTreeMap<Class, Vec<&PpgSignal>> {
    let mut out: BTreeMap<Class, Vec<&PpgSignal>> = BTreeMap::new();
    for s in signals {
        if let Some(c) = s.label {
            out.entry(c).or_default().push(s);
        }
    }
    out
}
