//! End-to-end run: generate, search (optional), filter, build the pattern
//! dataset, train, evaluate and assess held-out windows.
//!
//! Every sub-seed is derived from the single `seed` in [`PipelineConfig`],
//! so the metrics file is a pure function of the config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::band_search::{q_learn, RlParams, SearchResult, SearchSpace};
use crate::filterbank::{hyper_filter, pattern_signals, HyperFilterConfig};
use crate::io;
use crate::plot::{line_chart_svg, series_csv, Series};
use crate::signal_gen::{synthesize, AnsState, NoiseSpec, PpgSignal, DEFAULT_FS};
use crate::tdcnn::{self, splitmix, ArchSpec, Network, PatternDataset, TdcnnModel, TrainParams};
use crate::{Class, Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub drowsy: AnsState,
    pub wakeful: AnsState,
    pub signals_per_class: usize,
    pub holdout_signals_per_class: usize,
    pub duration_s: f64,
    pub fs: f64,
    pub noise: NoiseSpec,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            drowsy: AnsState::drowsy(),
            wakeful: AnsState::wakeful(),
            signals_per_class: 8,
            holdout_signals_per_class: 2,
            duration_s: 60.0,
            fs: DEFAULT_FS,
            noise: NoiseSpec::road(),
        }
    }
}

impl GenerationConfig {
    pub fn state(&self, class: Class) -> &AnsState {
        match class {
            Class::Drowsy => &self.drowsy,
            Class::Wakeful => &self.wakeful,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Keep every `stride`-th pattern.
    pub stride: usize,
    /// Samples dropped at each end; `None` uses half the longest kernel.
    #[serde(default)]
    pub margin: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { stride: 10, margin: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub space: SearchSpace,
    pub rl: RlParams,
    /// Training signals per class used for the reward.
    pub signals_per_class: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            space: SearchSpace::default(),
            rl: RlParams::default(),
            signals_per_class: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub generation: GenerationConfig,
    pub filter: HyperFilterConfig,
    /// When present, the searched configuration replaces `filter`.
    #[serde(default)]
    pub search: Option<SearchConfig>,
    pub dataset: DatasetConfig,
    pub arch: ArchSpec,
    /// `seed` here is ignored in favour of one derived from the global seed.
    pub train: TrainParams,
    pub baseline_mlp: bool,
    /// Used when no directory is given on the command line.
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: SCHEMA_VERSION,
            seed: 7,
            generation: GenerationConfig::default(),
            filter: HyperFilterConfig::default(),
            search: None,
            dataset: DatasetConfig::default(),
            arch: ArchSpec::default(),
            train: TrainParams {
                epochs: 30,
                ..TrainParams::default()
            },
            baseline_mlp: true,
            out_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let g = &self.generation;
        g.drowsy.validate()?;
        g.wakeful.validate()?;
        g.noise.validate()?;
        if !(g.duration_s.is_finite() && g.duration_s > 0.0) {
            return Err(Error::invalid(format!("duration_s must be > 0, got {}", g.duration_s)));
        }
        if !(g.fs.is_finite() && g.fs >= crate::signal_gen::MIN_FS) {
            return Err(Error::invalid(format!("fs must be >= {}, got {}", crate::signal_gen::MIN_FS, g.fs)));
        }
        self.filter.validate()?;
        if let Some(s) = &self.search {
            s.space.validate()?;
            s.rl.validate()?;
            if s.space.bands_per_layer != self.filter.bands_per_layer {
                return Err(Error::invalid("search bands_per_layer must match filter bands_per_layer"));
            }
        }
        if self.dataset.stride == 0 {
            return Err(Error::invalid("dataset stride must be >= 1"));
        }
        self.arch.validate()?;
        if self.arch.input_channels != 1 {
            return Err(Error::invalid("pipeline feeds a single-channel sequence; set input_channels = 1"));
        }
        self.train.validate()
    }

    /// SHA-256 of the compact JSON form, ignoring `out_dir`.
    pub fn hash(&self) -> Result<String> {
        let canonical = PipelineConfig {
            out_dir: None,
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&canonical)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: PipelineConfig = io::load_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `train` with its seed derived from the global seed.
    pub fn train_params(&self) -> TrainParams {
        TrainParams {
            seed: derive_seed(self.seed, TRAIN_TAG),
            ..self.train
        }
    }

    pub fn model_seed(&self) -> u64 {
        derive_seed(self.seed, INIT_TAG)
    }
}

const TRAIN_TAG: u64 = 0x0074_7261_696e;
const INIT_TAG: u64 = 0x696e_6974;
const SEARCH_TAG: u64 = 0x7365_6172_6368;

pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix(seed ^ splitmix(tag))
}

/// Training (`holdout = false`) or held-out signals, drowsy first.
pub fn generate_signals(g: &GenerationConfig, seed: u64, holdout: bool) -> Result<Vec<PpgSignal>> {
    let per_class = if holdout {
        g.holdout_signals_per_class
    } else {
        g.signals_per_class
    };
    let mut out = Vec::with_capacity(2 * per_class);
    for class in Class::ALL {
        for i in 0..per_class {
            let tag = ((holdout as u64) << 40) | ((class.index() as u64) << 32) | i as u64;
            let mut s = synthesize(g.state(class), &g.noise, g.duration_s, g.fs, derive_seed(seed, tag))?;
            s.label = Some(class);
            out.push(s);
        }
    }
    Ok(out)
}

/// Strided pattern rows of one signal.
pub fn signal_patterns(signal: &PpgSignal, filter: &HyperFilterConfig, dataset: &DatasetConfig) -> Result<Vec<Vec<f64>>> {
    let stack = hyper_filter(signal, filter)?;
    let margin = dataset.margin.unwrap_or_else(|| stack.default_margin());
    Ok(pattern_signals(&stack, margin)?
        .into_iter()
        .step_by(dataset.stride.max(1))
        .map(|p| p.values)
        .collect())
}

pub fn build_dataset(signals: &[PpgSignal], filter: &HyperFilterConfig, dataset: &DatasetConfig) -> Result<PatternDataset> {
    let mut ds = PatternDataset::default();
    for s in signals {
        let label = s
            .label
            .ok_or_else(|| Error::invalid("dataset signals must be labeled"))?;
        for row in signal_patterns(s, filter, dataset)? {
            ds.push(row, label);
        }
    }
    if ds.is_empty() {
        return Err(Error::invalid("no pattern signals: the dataset is empty"));
    }
    ds.validate()?;
    Ok(ds)
}

/// Q-learning over the first `signals_per_class` signals of each class.
pub fn run_search(signals: &[PpgSignal], search: &SearchConfig, seed: u64) -> Result<SearchResult> {
    let mut picked = Vec::new();
    for class in Class::ALL {
        picked.extend(
            signals
                .iter()
                .filter(|s| s.label == Some(class))
                .take(search.signals_per_class)
                .cloned(),
        );
    }
    let rl = RlParams {
        seed: derive_seed(seed, SEARCH_TAG),
        ..search.rl
    };
    q_learn(&search.space, &picked, &rl)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub drowsy: Option<f64>,
    pub wakeful: Option<f64>,
}

impl PerClass {
    pub fn get(&self, class: Class) -> Option<f64> {
        match class {
            Class::Drowsy => self.drowsy,
            Class::Wakeful => self.wakeful,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub per_class_accuracy: PerClass,
    pub overall_accuracy: f64,
    /// `confusion[true][predicted]`, drowsy = 0.
    pub confusion: [[usize; 2]; 2],
}

impl EvalReport {
    pub fn from_predictions(truth: &[Class], predicted: &[Class]) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::invalid("cannot evaluate on an empty dataset"));
        }
        if truth.len() != predicted.len() {
            return Err(Error::ShapeMismatch("truth and predictions differ in length".into()));
        }
        let mut confusion = [[0usize; 2]; 2];
        for (t, p) in truth.iter().zip(predicted) {
            confusion[t.index()][p.index()] += 1;
        }
        let acc = |c: usize| {
            let row = confusion[c][0] + confusion[c][1];
            (row > 0).then(|| confusion[c][c] as f64 / row as f64)
        };
        Ok(EvalReport {
            n: truth.len(),
            per_class_accuracy: PerClass {
                drowsy: acc(0),
                wakeful: acc(1),
            },
            overall_accuracy: (confusion[0][0] + confusion[1][1]) as f64 / truth.len() as f64,
            confusion,
        })
    }
}

pub fn eval_report<N: Network>(model: &N, dataset: &PatternDataset) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let predicted = dataset
        .rows
        .iter()
        .map(|r| model.predict(r))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_predictions(&dataset.labels, &predicted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowAssessment {
    pub truth: Class,
    pub score: f64,
    pub label: Class,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub filter: HyperFilterConfig,
    pub search_reward: Option<f64>,
    pub n_train: usize,
    pub n_validation: usize,
    pub final_train_loss: Option<f64>,
    pub validation: EvalReport,
    pub mlp_validation: Option<EvalReport>,
    pub holdout_patterns: Option<EvalReport>,
    pub holdout_windows: Vec<WindowAssessment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub status: String,
    pub failure: Option<Failure>,
    /// Paths relative to the run directory.
    pub files: Vec<String>,
    pub metrics: Option<Metrics>,
    pub timings_ms: BTreeMap<String, u64>,
}

pub const METRICS_FILE: &str = "metrics.json";
pub const MANIFEST_FILE: &str = "manifest.json";

struct Run<'a> {
    dir: &'a Path,
    files: Vec<String>,
    timings: BTreeMap<String, u64>,
}

impl Run<'_> {
    fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        io::write_text(&self.dir.join(rel), contents)?;
        if !self.files.iter().any(|f| f == rel) {
            self.files.push(rel.to_owned());
        }
        Ok(())
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f(self).map_err(|e| Error::Stage {
            stage: name.to_owned(),
            source: Box::new(e),
        });
        self.timings.insert(name.to_owned(), t.elapsed().as_millis() as u64);
        out
    }
}

fn chart(run: &mut Run, stem: &str, title: &str, x: &str, y: &str, series: &[Series]) -> Result<()> {
    run.write(&format!("{stem}.svg"), &line_chart_svg(title, x, y, series))?;
    run.write(&format!("{stem}.csv"), &series_csv(series))
}

/// Runs every stage, writing artifacts under `out_dir`. On failure the
/// manifest is still written, with `status = "failed"`.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path) -> Result<RunManifest> {
    config.validate()?;
    let hash = config.hash()?;
    let mut run = Run {
        dir: out_dir,
        files: Vec::new(),
        timings: BTreeMap::new(),
    };
    let result = stages(config, &mut run);
    let (status, failure, metrics) = match &result {
        Ok(m) => ("ok", None, Some(m.clone())),
        Err(e) => {
            let stage = match e {
                Error::Stage { stage, .. } => stage.clone(),
                _ => "setup".into(),
            };
            ("failed", Some(Failure { stage, message: e.to_string() }), None)
        }
    };
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        config_hash: hash,
        seed: config.seed,
        status: status.into(),
        failure,
        files: run.files.clone(),
        metrics,
        timings_ms: run.timings.clone(),
    };
    io::save_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    result.map(|_| manifest)
}

fn stages(config: &PipelineConfig, run: &mut Run) -> Result<Metrics> {
    run.write("config.json", &io::to_json(config)?)?;
    let g = &config.generation;

    let signals = run.stage("generate", |run| {
        let signals = generate_signals(g, config.seed, false)?;
        for (i, s) in signals.iter().enumerate() {
            let label = s.label.map_or("none", Class::as_str);
            run.write(&format!("signals/{i:03}_{label}.csv"), &io::signal_to_csv(s))?;
        }
        let mut traces = Vec::new();
        for class in Class::ALL {
            if let Some(s) = signals.iter().find(|s| s.label == Some(class)) {
                let n = s.len().min((10.0 * s.fs) as usize);
                traces.push(Series::from_values(class.as_str(), &s.samples[..n], 0.0, 1.0 / s.fs));
            }
        }
        chart(run, "signal_trace", "Synthetic PPG", "time (s)", "amplitude", &traces)?;
        Ok(signals)
    })?;

    let (filter, search_reward) = match &config.search {
        None => (config.filter.clone(), None),
        Some(search) => run.stage("search", |run| {
            let res = run_search(&signals, search, config.seed)?;
            run.write("search.json", &io::to_json(&res)?)?;
            let pts: Vec<(f64, f64)> = res.history.iter().map(|h| (h.episode as f64, h.best_reward)).collect();
            chart(run, "reward_history", "Best reward", "episode", "reward", &[Series::new("best", pts)])?;
            Ok((res.best, Some(res.reward)))
        })?,
    };

    let dataset = run.stage("dataset", |run| {
        run.write("filter_config.json", &io::to_json(&filter)?)?;
        let ds = build_dataset(&signals, &filter, &config.dataset)?;
        run.write("dataset.csv", &io::dataset_to_csv(&ds))?;
        Ok(ds)
    })?;

    let params = config.train_params();
    let (model, split, final_loss) = run.stage("train", |run| {
        let init = TdcnnModel::init(&config.arch, config.model_seed())?;
        let out = tdcnn::train(&init, &dataset, &params)?;
        io::save_model(&run.dir.join("model.json"), &out.model)?;
        run.files.push("model.json".into());
        let mut csv = String::from("epoch,train_loss,val_accuracy\n");
        for h in &out.history {
            csv.push_str(&format!("{},{},{}\n", h.epoch, h.train_loss, h.val_accuracy));
        }
        run.write("train_history.csv", &csv)?;
        let loss = out.history.iter().map(|h| (h.epoch as f64, h.train_loss)).collect();
        let acc = out.history.iter().map(|h| (h.epoch as f64, h.val_accuracy)).collect();
        chart(
            run,
            "training",
            "Training",
            "epoch",
            "value",
            &[Series::new("train loss", loss), Series::new("val accuracy", acc)],
        )?;
        Ok((out.model, out.split, out.history.last().map(|h| h.train_loss)))
    })?;

    let (validation, mlp_validation) = run.stage("eval", |run| {
        let val = dataset.subset(&split.validation);
        let report = eval_report(&model, &val)?;
        let mlp = if config.baseline_mlp {
            let m = tdcnn::train_baseline_mlp(&dataset, &params)?;
            run.write("mlp.json", &io::to_json(&m.training.model)?)?;
            Some(eval_report(&m.training.model, &val)?)
        } else {
            None
        };
        Ok((report, mlp))
    })?;

    let (holdout_patterns, holdout_windows) = run.stage("assess", |run| {
        let holdout = generate_signals(g, config.seed, true)?;
        if holdout.is_empty() {
            return Ok((None, Vec::new()));
        }
        let mut windows = Vec::new();
        let mut ds = PatternDataset::default();
        for s in &holdout {
            let truth = s.label.ok_or_else(|| Error::invalid("holdout signal without label"))?;
            let rows = signal_patterns(s, &filter, &config.dataset)?;
            let a = model.assess_window(&rows)?;
            windows.push(WindowAssessment {
                truth,
                score: a.score,
                label: a.label,
            });
            for r in rows {
                ds.push(r, truth);
            }
        }
        run.write("assessments.json", &io::to_json(&windows)?)?;
        Ok((Some(eval_report(&model, &ds)?), windows))
    })?;

    let metrics = Metrics {
        filter,
        search_reward,
        n_train: split.train.len(),
        n_validation: split.validation.len(),
        final_train_loss: final_loss,
        validation,
        mlp_validation,
        holdout_patterns,
        holdout_windows,
    };
    run.write(METRICS_FILE, &io::to_json(&metrics)?)?;
    Ok(metrics)
}

/// Resolves the run directory: explicit path, then `config.out_dir`, then `runs/latest`.
pub fn resolve_out_dir(explicit: Option<&Path>, config: &PipelineConfig) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| config.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs/latest"))
}
