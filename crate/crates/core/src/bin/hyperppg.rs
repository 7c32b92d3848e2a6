use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use hyperppg::band_search::SearchResult;
use hyperppg::filterbank::{hyper_filter, pattern_signals, HyperFilterConfig};
use hyperppg::io;
use hyperppg::pipeline::{self, PipelineConfig};
use hyperppg::plot::{line_chart_svg, series_csv, Series};
use hyperppg::signal_gen::{synthesize, AnsState, NoiseSpec};
use hyperppg::tdcnn::{self, TdcnnModel, TrainParams};
use hyperppg::vision::{self, BoundingBox, FeatureMap, RccaWeights, SaliencyThresholds};
use hyperppg::{Class, Error, Result};

#[derive(Parser)]
#[command(name = "hyperppg", version, about = "Synthetic PPG drowsiness pipeline and vision utilities")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate signals: one of `--class`, or the config's training set.
    Synth {
        #[arg(long)]
        class: Option<Class>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        fs: Option<f64>,
        /// Disable all noise.
        #[arg(long)]
        clean: bool,
    },
    /// Hyper-filter one signal file into a channel stack.
    Filter {
        #[arg(long)]
        input: PathBuf,
        /// HyperFilterConfig JSON; the config's filter otherwise.
        #[arg(long)]
        filter_config: Option<PathBuf>,
    },
    /// Q-learning search for a band configuration.
    SearchBands,
    /// Build the pattern dataset from signal files, or from the config.
    BuildDataset {
        #[arg(long, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        filter_config: Option<PathBuf>,
    },
    /// Train the CNN on a dataset CSV.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Per-class accuracy of a checkpoint on a dataset CSV.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Windowed drowsiness assessment of a signal file.
    Assess {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        window_s: f64,
        #[arg(long)]
        filter_config: Option<PathBuf>,
    },
    /// Keep boxes taller than L1 or wider than L2.
    Salient {
        #[arg(long)]
        boxes: PathBuf,
        #[arg(long)]
        l1: Option<f64>,
        #[arg(long)]
        l2: Option<f64>,
        /// Frame size for default thresholds.
        #[arg(long)]
        frame_height: Option<f64>,
        #[arg(long)]
        frame_width: Option<f64>,
    },
    /// Mean IoU of two masks (JSON or PGM).
    Miou {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        n_classes: usize,
    },
    /// Finite-difference influence check of the criss-cross operator.
    RccaCheck {
        #[arg(long, default_value_t = 4)]
        height: usize,
        #[arg(long, default_value_t = 5)]
        width: usize,
        #[arg(long, default_value_t = 4)]
        channels: usize,
    },
    /// The whole pipeline.
    Run,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let obj = json!({"error": {"kind": "usage", "message": e.to_string().trim()}});
            eprintln!("{obj}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let mut err = json!({"kind": e.kind(), "message": e.to_string()});
            if let Error::Stage { stage, source } = &e {
                err["stage"] = json!(stage);
                err["cause"] = json!(source.to_string());
            }
            eprintln!("{}", json!({ "error": err }));
            ExitCode::FAILURE
        }
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn filter_or(path: &Option<PathBuf>, cfg: &PipelineConfig) -> Result<HyperFilterConfig> {
    let f = match path {
        Some(p) => io::load_json(p)?,
        None => cfg.filter.clone(),
    };
    f.validate()?;
    Ok(f)
}

/// Collected output, written only after every computation succeeded.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Outputs {
    fn add(&mut self, name: &str, contents: String) {
        self.files.push((name.to_owned(), contents));
    }

    fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.add(name, io::to_json(value)?);
        Ok(())
    }

    fn chart(&mut self, stem: &str, title: &str, x: &str, y: &str, series: &[Series]) {
        self.add(&format!("{stem}.svg"), line_chart_svg(title, x, y, series));
        self.add(&format!("{stem}.csv"), series_csv(series));
    }

    fn flush(self) -> Result<serde_json::Value> {
        let mut names = Vec::new();
        for (name, contents) in &self.files {
            io::write_text(&self.dir.join(name), contents)?;
            names.push(self.dir.join(name).display().to_string());
        }
        Ok(json!({ "written": names }))
    }
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let cfg = load_config(&cli.common)?;
    let dir = pipeline::resolve_out_dir(cli.common.out.as_deref(), &cfg);
    if let Command::Run = cli.command {
        let manifest = pipeline::run_pipeline(&cfg, &dir)?;
        return Ok(json!({
            "status": manifest.status,
            "dir": dir.display().to_string(),
            "validation": manifest.metrics.map(|m| m.validation),
        }));
    }
    let mut out = Outputs { dir, files: Vec::new() };
    match cli.command {
        Command::Synth {
            class,
            duration,
            fs,
            clean,
        } => synth(&cfg, &mut out, class, duration, fs, clean)?,
        Command::Filter { input, filter_config } => {
            let filter = filter_or(&filter_config, &cfg)?;
            let signal = io::load_signal(&input)?;
            let stack = hyper_filter(&signal, &filter)?;
            out.add("stack.csv", io::stack_to_csv(&stack));
        }
        Command::SearchBands => {
            let search = cfg.search.unwrap_or_default();
            search.space.validate()?;
            search.rl.validate()?;
            let signals = pipeline::generate_signals(&cfg.generation, cfg.seed, false)?;
            let res: SearchResult = pipeline::run_search(&signals, &search, cfg.seed)?;
            out.add_json("search.json", &res)?;
            let pts = res.history.iter().map(|h| (h.episode as f64, h.best_reward)).collect();
            out.chart("reward_history", "Best reward", "episode", "reward", &[Series::new("best", pts)]);
        }
        Command::BuildDataset { input, filter_config } => {
            let filter = filter_or(&filter_config, &cfg)?;
            let signals = if input.is_empty() {
                pipeline::generate_signals(&cfg.generation, cfg.seed, false)?
            } else {
                input.iter().map(|p| io::load_signal(p)).collect::<Result<Vec<_>>>()?
            };
            let ds = pipeline::build_dataset(&signals, &filter, &cfg.dataset)?;
            out.add("dataset.csv", io::dataset_to_csv(&ds));
        }
        Command::Train { dataset, epochs } => train(&cfg, &mut out, &dataset, epochs)?,
        Command::Eval { model, dataset } => {
            let model = io::load_model(&model)?;
            let ds = io::dataset_from_csv(&io::read_text(&dataset)?)?;
            out.add_json("eval.json", &pipeline::eval_report(&model, &ds)?)?;
        }
        Command::Assess {
            model,
            input,
            window_s,
            filter_config,
        } => assess(&cfg, &mut out, &model, &input, window_s, &filter_config)?,
        Command::Salient {
            boxes,
            l1,
            l2,
            frame_height,
            frame_width,
        } => {
            let boxes: Vec<BoundingBox> = io::load_json(&boxes)?;
            for b in &boxes {
                b.validate()?;
            }
            let t = match (l1, l2, frame_height, frame_width) {
                (Some(l1), Some(l2), _, _) => SaliencyThresholds { l1, l2 },
                (None, None, Some(h), Some(w)) => SaliencyThresholds::for_frame(h, w),
                _ => return Err(Error::InvalidArgument("give --l1 and --l2, or --frame-height and --frame-width".into())),
            };
            t.validate()?;
            let kept = vision::filter_salient(&boxes, t.l1, t.l2);
            out.add_json("salient.json", &json!({"thresholds": t, "boxes": kept}))?;
        }
        Command::Miou { pred, gt, n_classes } => {
            let pred = io::load_mask(&pred)?;
            let gt = io::load_mask(&gt)?;
            let per_class = vision::class_iou(&pred, &gt, n_classes)?;
            let m = vision::miou(&pred, &gt, n_classes)?;
            out.add_json("miou.json", &json!({"miou": m, "per_class_iou": per_class}))?;
        }
        Command::RccaCheck { height, width, channels } => rcca_check(&cfg, &mut out, height, width, channels)?,
        Command::Run => unreachable!(),
    }
    out.flush()
}

fn synth(cfg: &PipelineConfig, out: &mut Outputs, class: Option<Class>, duration: Option<f64>, fs: Option<f64>, clean: bool) -> Result<()> {
    let mut g = cfg.generation.clone();
    if let Some(d) = duration {
        g.duration_s = d;
    }
    if let Some(f) = fs {
        g.fs = f;
    }
    if clean {
        g.noise = NoiseSpec::none();
    }
    match class {
        Some(c) => {
            let state: AnsState = *g.state(c);
            let mut s = synthesize(&state, &g.noise, g.duration_s, g.fs, pipeline::derive_seed(cfg.seed, 0x73796e))?;
            s.label = Some(c);
            out.add("signal.csv", io::signal_to_csv(&s));
        }
        None => {
            for (i, s) in pipeline::generate_signals(&g, cfg.seed, false)?.iter().enumerate() {
                let label = s.label.map_or("none", Class::as_str);
                out.add(&format!("signals/{i:03}_{label}.csv"), io::signal_to_csv(s));
            }
        }
    }
    Ok(())
}

fn train(cfg: &PipelineConfig, out: &mut Outputs, dataset: &Path, epochs: Option<usize>) -> Result<()> {
    let ds = io::dataset_from_csv(&io::read_text(dataset)?)?;
    let params = TrainParams {
        epochs: epochs.unwrap_or(cfg.train.epochs),
        ..cfg.train_params()
    };
    params.validate()?;
    let arch = hyperppg::tdcnn::ArchSpec {
        input_channels: 1,
        ..cfg.arch.clone()
    };
    let init = TdcnnModel::init(&arch, cfg.model_seed())?;
    let res = tdcnn::train(&init, &ds, &params)?;
    let val = ds.subset(&res.split.validation);
    let report = pipeline::eval_report(&res.model, &val)?;
    out.add_json("model.json", &io::checkpoint(&res.model))?;
    out.add_json("metrics.json", &json!({"validation": report, "history": res.history}))?;
    let loss = res.history.iter().map(|h| (h.epoch as f64, h.train_loss)).collect();
    let acc = res.history.iter().map(|h| (h.epoch as f64, h.val_accuracy)).collect();
    out.chart(
        "training",
        "Training",
        "epoch",
        "value",
        &[Series::new("train loss", loss), Series::new("val accuracy", acc)],
    );
    Ok(())
}

fn assess(cfg: &PipelineConfig, out: &mut Outputs, model: &Path, input: &Path, window_s: f64, filter: &Option<PathBuf>) -> Result<()> {
    if !(window_s.is_finite() && window_s > 0.0) {
        return Err(Error::InvalidArgument(format!("window_s must be > 0, got {window_s}")));
    }
    let model = io::load_model(model)?;
    let filter = filter_or(filter, cfg)?;
    let signal = io::load_signal(input)?;
    let stack = hyper_filter(&signal, &filter)?;
    let margin = cfg.dataset.margin.unwrap_or_else(|| stack.default_margin());
    let patterns = pattern_signals(&stack, margin)?;
    let win = ((window_s * signal.fs).round() as usize).max(1);
    let mut windows = Vec::new();
    for chunk in patterns.chunks(win) {
        let rows: Vec<&[f64]> = chunk.iter().step_by(cfg.dataset.stride).map(|p| &p.values[..]).collect();
        let a = model.assess_window(&rows)?;
        windows.push(json!({
            "start_s": chunk[0].source_index as f64 / signal.fs,
            "end_s": (chunk[chunk.len() - 1].source_index + 1) as f64 / signal.fs,
            "score": a.score,
            "label": a.label,
        }));
    }
    let scores: Vec<f64> = windows.iter().filter_map(|w| w["score"].as_f64()).collect();
    let overall = tdcnn::aggregate_scores(&scores);
    out.add_json("assessments.json", &json!({"overall": overall, "windows": windows}))?;
    Ok(())
}

fn rcca_check(cfg: &PipelineConfig, out: &mut Outputs, h: usize, w: usize, c: usize) -> Result<()> {
    let x = FeatureMap::random(h, w, c, pipeline::derive_seed(cfg.seed, 0x78));
    x.validate()?;
    let weights = RccaWeights::random(c, pipeline::derive_seed(cfg.seed, 0x77))?;
    let one = vision::influence_matrix(&x, &weights, 1, 1e-4)?;
    let two = vision::influence_matrix(&x, &weights, 2, 1e-4)?;
    let mut max_off_cross_r1: f64 = 0.0;
    let mut min_on_cross_r1 = f64::INFINITY;
    let mut min_r2 = f64::INFINITY;
    for p in 0..h * w {
        for u in 0..h * w {
            if p / w == u / w || p % w == u % w {
                min_on_cross_r1 = min_on_cross_r1.min(one[p][u]);
            } else {
                max_off_cross_r1 = max_off_cross_r1.max(one[p][u]);
            }
            min_r2 = min_r2.min(two[p][u]);
        }
    }
    out.add_json(
        "rcca_check.json",
        &json!({
            "shape": [h, w, c],
            "max_off_cross_r1": max_off_cross_r1,
            "min_on_cross_r1": min_on_cross_r1,
            "min_r2": min_r2,
            "r1_cross_only": max_off_cross_r1 <= 1e-9,
            "r2_full": min_r2 > 1e-9,
        }),
    )
}
