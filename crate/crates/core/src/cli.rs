//! Command-line surface. Results go to stdout as tab-separated text;
//! progress and diagnostics go to stderr.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::aggregation::{predict_video, report_param_count, AggregationParams, QueryKeyMode};
use crate::io::checkpoint::{self, Checkpoint};
use crate::io::config::Config;
use crate::io::embedding::{read_embeddings, write_embeddings};
use crate::io::manifest::{load_videos, LoadedVideo, Manifest, Split, VideoEntry};
use crate::io::synth::{write_dataset, SynthSpec};
use crate::io::trace::{read_trace, write_loss_curve, write_trace};
use crate::linalg::{Matrix, ParamRng, RngSeed};
use crate::metrics::{export_ribbon, phase_metrics, Averaging};
use crate::params::ParamBlocks;
use crate::streaming::{benchmark, hardware_summary, StreamModel, StreamSession};
use crate::tcn::{extract_temporal, TcnParams};
use crate::training::{
    train, train_tcn, verify_gradients, verify_tcn_gradients, GradcheckConfig, TcnSample, VideoSample,
};

/// Writes to stdout. A closed pipe (e.g. `| head`) ends output quietly.
fn emit(text: &str) {
    use std::io::Write;
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("error: writing to stdout: {e}");
        }
    }
}

macro_rules! out {
    ($($arg:tt)*) => { emit(&format!($($arg)*)) };
}

macro_rules! outln {
    ($($arg:tt)*) => { emit(&format!("{}\n", format_args!($($arg)*))) };
}

#[derive(Debug, Parser)]
#[command(name = "phaseagg", version, about = "Online surgical phase recognition from frame embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// key=value configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable), e.g. --set window=10
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    /// File then `--set` assignments, layered over `base`.
    fn resolve(&self, mut base: Config) -> anyhow::Result<Config> {
        if let Some(path) = &self.config {
            base.apply_file(path)?;
        }
        for kv in &self.overrides {
            base.apply_override(kv)?;
        }
        base.validate()?;
        Ok(base)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn select(self, m: &Manifest) -> Vec<&VideoEntry> {
        match self {
            SplitArg::Train => m.split(Split::Train),
            SplitArg::Test => m.split(Split::Test),
            SplitArg::All => m.videos.iter().collect(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic embedding dataset and its manifest
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        phases: usize,
        #[arg(long, default_value_t = 6)]
        videos: usize,
        #[arg(long, default_value_t = 200)]
        frames: usize,
        /// Per-dimension noise scale around each phase center
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Probability that a frame shows an adjacent phase's center
        #[arg(long, default_value_t = 0.0)]
        ambiguity: f64,
        #[arg(long, default_value_t = 2048)]
        spatial_dim: usize,
        /// Smallest aggregation window the videos must cover
        #[arg(long, default_value_t = 30)]
        window: usize,
        /// Leading videos in the training split [default: half, rounded up]
        #[arg(long)]
        train_videos: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the TCN over every video and write temporal embeddings
    ExtractTemporal {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory; receives <id>.temporal.tsve and manifest.tsv
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the TCN on the training split
    TrainTcn {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss curve output [default: <out>.loss.tsv]
        #[arg(long)]
        loss_curve: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the aggregation head on the training split
    TrainAgg {
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint holding a trained TCN
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        loss_curve: Option<PathBuf>,
        /// Query/key source, e.g. spatial-temporal
        #[arg(long)]
        mode: Option<QueryKeyMode>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Batch prediction; writes <id>.pred.tsv per video
    Infer {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mode: Option<QueryKeyMode>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Score prediction traces against manifest labels
    Eval {
        /// Directory of <id>.pred.tsv files
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// pooled or per-video
        #[arg(long, default_value = "pooled")]
        averaging: Averaging,
        /// Write <id>.tsv and <id>.ppm phase ribbons here
        #[arg(long)]
        ribbon_dir: Option<PathBuf>,
    },
    /// Feed an embedding file frame by frame through a streaming session
    Stream {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Trace output [default: stdout]
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mode: Option<QueryKeyMode>,
    },
    /// Per-frame latency and throughput of the streaming path
    Bench {
        #[arg(long, default_value_t = 1000)]
        frames: usize,
        #[arg(long, default_value_t = 100)]
        warmup: usize,
        /// Trained weights [default: random weights from the configuration]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Finite-difference check of every analytic gradient; exits 1 on failure
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Restrict to one query/key mode [default: all four]
        #[arg(long)]
        mode: Option<QueryKeyMode>,
    },
    /// Learnable scalars of the aggregation head, by block
    Params {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

/// Runs one command. `Ok(false)` means the command ran but its check failed.
pub fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Synth {
            out,
            phases,
            videos,
            frames,
            sigma,
            ambiguity,
            spatial_dim,
            window,
            train_videos,
            seed,
        } => {
            let spec = SynthSpec {
                phases,
                videos,
                frames,
                sigma,
                ambiguity,
                spatial_dim,
                window,
                train_videos: train_videos.unwrap_or(videos.div_ceil(2)),
                seed,
            };
            let m = write_dataset(&spec, &out)?;
            outln!("videos\t{}\ntrain\t{}\ntest\t{}", m.videos.len(), m.split(Split::Train).len(), m.split(Split::Test).len());
            outln!("manifest\t{}", out.join("manifest.tsv").display());
        }
        Command::ExtractTemporal { manifest, checkpoint, out } => {
            let ck = checkpoint::load(&checkpoint)?;
            let tcn = ck.tcn()?;
            let mut m = Manifest::load(&manifest)?;
            for entry in &mut m.videos {
                let spatial = read_embeddings(&entry.spatial)?;
                let g = extract_temporal(&spatial, tcn)
                    .with_context(|| format!("video {}", entry.id))?
                    .into_embeddings();
                let path = out.join(format!("{}.temporal.tsve", entry.id));
                write_embeddings(&path, &g)?;
                entry.temporal = Some(path);
            }
            m.save(&out.join("manifest.tsv"))?;
            outln!("manifest\t{}", out.join("manifest.tsv").display());
        }
        Command::TrainTcn {
            manifest,
            out,
            loss_curve,
            config,
        } => {
            let cfg = config.resolve(Config::default())?;
            let m = Manifest::load(&manifest)?;
            let videos = training_videos(&m, cfg.model.phases)?;
            let samples: Vec<TcnSample> = videos
                .into_iter()
                .map(|v| TcnSample {
                    spatial: v.spatial,
                    labels: v.labels,
                })
                .collect();
            eprintln!("training TCN on {} videos for {} epochs", samples.len(), cfg.tcn_train.epochs);
            let outcome = train_tcn(&samples, cfg.tcn, &cfg.tcn_train)?;
            let ck = Checkpoint {
                config: cfg,
                tcn: Some(outcome.params),
                aggregation: None,
            };
            finish_training(&out, loss_curve, &ck, &outcome.loss_curve)?;
        }
        Command::TrainAgg {
            manifest,
            checkpoint,
            out,
            loss_curve,
            mode,
            config,
        } => {
            let base = checkpoint::load(&checkpoint)?;
            let mut cfg = config.resolve(base.config)?;
            if let Some(mode) = mode {
                cfg.mode = mode;
            }
            let tcn = base.tcn()?.clone();
            ensure!(
                tcn.config == cfg.tcn,
                "configuration changes TCN shapes recorded in {}",
                checkpoint.display()
            );
            let m = Manifest::load(&manifest)?;
            let samples = training_videos(&m, cfg.model.phases)?
                .into_iter()
                .map(|v| video_sample(v, &tcn))
                .collect::<anyhow::Result<Vec<_>>>()?;
            eprintln!(
                "training aggregation head ({}) on {} videos for {} epochs",
                cfg.mode,
                samples.len(),
                cfg.train.epochs
            );
            let outcome = train(&samples, cfg.model, cfg.mode, &cfg.train)?;
            let ck = Checkpoint {
                config: cfg,
                tcn: Some(tcn),
                aggregation: Some(outcome.params),
            };
            finish_training(&out, loss_curve, &ck, &outcome.loss_curve)?;
        }
        Command::Infer {
            manifest,
            checkpoint,
            out,
            mode,
            split,
        } => {
            let ck = checkpoint::load(&checkpoint)?;
            let mode = mode.unwrap_or(ck.config.mode);
            let (tcn, agg) = (ck.tcn()?, ck.aggregation()?);
            let m = Manifest::load(&manifest)?;
            let entries = split.select(&m);
            ensure!(!entries.is_empty(), "no videos in the selected split");
            for v in load_videos(&entries)? {
                let sample = video_sample(v.clone(), tcn)?;
                let trace = predict_video(&sample.spatial, &sample.temporal, agg, mode)
                    .with_context(|| format!("video {}", v.id))?;
                write_trace(&out.join(format!("{}.pred.tsv", v.id)), &trace)?;
            }
            outln!("videos\t{}\nmode\t{mode}\nout\t{}", entries.len(), out.display());
        }
        Command::Eval {
            preds,
            manifest,
            split,
            averaging,
            ribbon_dir,
        } => {
            let m = Manifest::load(&manifest)?;
            let entries = split.select(&m);
            ensure!(!entries.is_empty(), "no videos in the selected split");
            let phases = entries[0].phases;
            ensure!(entries.iter().all(|e| e.phases == phases), "videos disagree on the phase count");
            let mut all_pred = Vec::new();
            let mut all_truth = Vec::new();
            for e in &entries {
                let trace = read_trace(&preds.join(format!("{}.pred.tsv", e.id)))?;
                let truth = crate::io::labels::read_labels(&e.labels)?;
                ensure!(
                    trace.len() == truth.len(),
                    "video {}: {} predictions for {} labels",
                    e.id,
                    trace.len(),
                    truth.len()
                );
                if let Some(dir) = &ribbon_dir {
                    export_ribbon(&trace.labels, &truth, &dir.join(&e.id))?;
                }
                all_pred.push(trace.labels);
                all_truth.push(truth);
            }
            let report = phase_metrics(&all_pred, &all_truth, phases, averaging)?;
            outln!("{report}");
            let undefined = report.undefined_phases();
            if !undefined.is_empty() {
                eprintln!("phases with no frames in truth or prediction (excluded from means): {undefined:?}");
            }
        }
        Command::Stream {
            checkpoint,
            input,
            out,
            mode,
        } => {
            let ck = checkpoint::load(&checkpoint)?;
            let model = StreamModel::new(
                ck.tcn()?.clone(),
                ck.aggregation()?.clone(),
                mode.unwrap_or(ck.config.mode),
            )?;
            let frames = read_embeddings(&input)?;
            let mut session = StreamSession::new(&model);
            let mut probs = Vec::with_capacity(frames.len());
            let mut labels = Vec::with_capacity(frames.rows());
            let mut latency_ns = Vec::with_capacity(frames.rows());
            for t in 0..frames.rows() {
                let (p, elapsed) = session.push_frame(frames.row(t))?;
                labels.push(crate::linalg::argmax(&p));
                latency_ns.push(elapsed.as_nanos() as u64);
                probs.extend(p);
            }
            session.close();
            let trace = crate::aggregation::PredictionTrace {
                probabilities: Matrix::from_vec(frames.rows(), model.aggregation.config.phases, probs)?,
                labels,
                latency_ns,
            };
            match out {
                Some(path) => write_trace(&path, &trace)?,
                None => out!("{}", crate::io::trace::format_trace(&trace)),
            }
        }
        Command::Bench {
            frames,
            warmup,
            checkpoint,
            seed,
            config,
        } => {
            let model = match checkpoint {
                Some(path) => {
                    let ck = checkpoint::load(&path)?;
                    let cfg = config.resolve(ck.config)?;
                    StreamModel::new(ck.tcn()?.clone(), ck.aggregation()?.clone(), cfg.mode)?
                }
                None => {
                    let cfg = config.resolve(Config::default())?;
                    let mut rng = ParamRng::new(RngSeed(seed));
                    StreamModel::new(
                        TcnParams::init(cfg.tcn, &mut rng)?,
                        AggregationParams::init(cfg.model, &mut rng)?,
                        cfg.mode,
                    )?
                }
            };
            let inputs = random_frames(frames, model.tcn.config.spatial_dim, seed);
            let stats = benchmark(&model, &inputs, warmup)?;
            outln!("{stats}");
            outln!("phases\t{}", model.aggregation.config.phases);
            outln!("window\t{}", model.aggregation.config.window);
            outln!("mode\t{}", model.mode);
            outln!("hardware\t{}", hardware_summary());
        }
        Command::Gradcheck { seed, mode } => {
            let modes: Vec<QueryKeyMode> = mode.map_or_else(|| QueryKeyMode::ALL.to_vec(), |m| vec![m]);
            let mut passed = true;
            for mode in modes {
                let cfg = GradcheckConfig {
                    mode,
                    ..GradcheckConfig::default()
                };
                let report = verify_gradients(&cfg, RngSeed(seed))?;
                outln!("# aggregation head, mode {mode}\n{report}");
                passed &= report.passed();
            }
            let report = verify_tcn_gradients(&GradcheckConfig::default(), RngSeed(seed))?;
            outln!("# temporal network\n{report}");
            passed &= report.passed();
            outln!("{}", if passed { "PASS" } else { "FAIL" });
            return Ok(passed);
        }
        Command::Params { checkpoint, config } => {
            let params = match checkpoint {
                Some(path) => checkpoint::load(&path)?.aggregation()?.clone(),
                None => {
                    let cfg = config.resolve(Config::default())?;
                    AggregationParams::init(cfg.model, &mut ParamRng::new(RngSeed(0)))?
                }
            };
            out!("{}", param_table(&params));
        }
    }
    Ok(true)
}

fn param_table(p: &AggregationParams) -> String {
    let mut out = String::from("block\trows\tcols\tcount\n");
    for (name, m) in p.blocks() {
        let _ = writeln!(out, "{name}\t{}\t{}\t{}", m.rows(), m.cols(), m.len());
    }
    let _ = writeln!(out, "total\t\t\t{}", report_param_count(p));
    let _ = writeln!(out, "closed_form\t\t\t{}", p.config.param_count());
    out
}

fn training_videos(m: &Manifest, phases: usize) -> anyhow::Result<Vec<LoadedVideo>> {
    let entries = m.split(Split::Train);
    if entries.is_empty() {
        bail!("manifest has no training videos");
    }
    if let Some(e) = entries.iter().find(|e| e.phases != phases) {
        bail!("video {} has {} phases but the configuration has {phases}", e.id, e.phases);
    }
    Ok(load_videos(&entries)?)
}

/// Uses the manifest's temporal file when present, else runs the TCN.
fn video_sample(v: LoadedVideo, tcn: &TcnParams) -> anyhow::Result<VideoSample> {
    let temporal = match v.temporal {
        Some(g) => g,
        None => extract_temporal(&v.spatial, tcn)
            .with_context(|| format!("video {}", v.id))?
            .into_embeddings(),
    };
    Ok(VideoSample {
        spatial: v.spatial,
        temporal,
        labels: v.labels,
    })
}

fn finish_training(out: &Path, loss_curve: Option<PathBuf>, ck: &Checkpoint, curve: &[f64]) -> anyhow::Result<()> {
    checkpoint::save(out, ck)?;
    let curve_path = loss_curve.unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".loss.tsv");
        PathBuf::from(p)
    });
    write_loss_curve(&curve_path, curve)?;
    outln!("checkpoint\t{}", out.display());
    outln!("loss_curve\t{}", curve_path.display());
    if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
        outln!("first_loss\t{first}\nfinal_loss\t{last}");
    }
    Ok(())
}

/// Standard-normal frames, generated before any timing starts.
fn random_frames(count: usize, dim: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..count * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    Matrix::from_vec(count, dim, data).expect("shape from count and dim")
}
