//! Cross-entropy training of the aggregation head and the TCN, with
//! hand-derived adjoints checked against central finite differences.
//!
//! One optimizer step is taken per video per epoch, using the mean per-frame
//! loss of that video.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{build_window, check_video, AggregationConfig, AggregationParams, EmbeddingSource, ModeInputs, QueryKeyMode};
use crate::error::{Error, Result};
use crate::linalg::{softmax_in_place, Matrix, ParamRng, RngSeed};
use crate::params::ParamBlocks;
use crate::tcn::{self, TcnConfig, TcnParams};
use crate::transformer;

/// Floor applied to probabilities inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub seed: RngSeed,
    /// Supervise every TCN stage, not only the last.
    pub stage_supervision: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 50,
            seed: RngSeed(0),
            stage_supervision: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate {} is invalid", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_labels(labels: &[usize], phases: usize) -> Result<()> {
    if let Some((t, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= phases) {
        return Err(Error::Data(format!("label {y} at frame {t} is outside 0..{phases}")));
    }
    Ok(())
}

/// `−Σ_t log p_t[y_t]` with the log clamped at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} probability rows for {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    check_labels(labels, probs.cols())?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(t, &y)| -probs.get(t, y).max(PROB_FLOOR).ln())
        .sum())
}

/// One training video for the aggregation head.
#[derive(Debug, Clone)]
pub struct VideoSample {
    pub spatial: Matrix,
    pub temporal: Matrix,
    pub labels: Vec<usize>,
}

/// Summed loss over the video and gradients of the mean per-frame loss.
///
/// The gradient is the exact softmax cross-entropy gradient `p − y`; the
/// probability floor only enters the reported loss.
pub fn backward(
    sample: &VideoSample,
    p: &AggregationParams,
    mode: QueryKeyMode,
) -> Result<(f64, AggregationParams)> {
    check_video(&sample.spatial, &sample.temporal, p)?;
    let frames = sample.spatial.rows();
    if sample.labels.len() != frames {
        return Err(Error::Data(format!("{} labels for {frames} frames", sample.labels.len())));
    }
    check_labels(&sample.labels, p.config.phases)?;
    let phases = p.config.phases;
    let n = p.config.window;
    let scale = 1.0 / frames.max(1) as f64;

    let inputs = ModeInputs::prepare(&sample.spatial, p, mode)?;
    let queries = inputs.source(&sample.temporal, mode.query);
    let keys = inputs.source(&sample.temporal, mode.key);
    let mut d_reduced = Matrix::zeros(frames, phases);
    let mut grads = p.zeros_like();
    let mut loss = 0.0;

    for t in 0..frames {
        let query = queries.slice_rows(t, t + 1);
        let window = build_window(keys, t, n)?;
        let (aggregated, cache1) = if n > 0 {
            let (out, cache) = transformer::forward(&window, &window, &p.layer1)?;
            (out, Some(cache))
        } else {
            (Matrix::zeros(0, phases), None)
        };
        let (logits, cache2) = transformer::forward(&query, &aggregated, &p.layer2)?;
        let mut probs = logits.into_data();
        softmax_in_place(&mut probs);
        let y = sample.labels[t];
        loss -= probs[y].max(PROB_FLOOR).ln();

        let mut d_logits = probs;
        d_logits[y] -= 1.0;
        d_logits.iter_mut().for_each(|v| *v *= scale);
        let (d_query, d_aggregated) = transformer::backward(
            &Matrix::row_vector(&d_logits),
            &cache2,
            &p.layer2,
            &mut grads.layer2,
        )?;
        if mode.query == EmbeddingSource::Spatial {
            for (d, v) in d_reduced.row_mut(t).iter_mut().zip(d_query.data()) {
                *d += v;
            }
        }
        if let Some(cache1) = cache1 {
            let (d_as_query, d_as_key) =
                transformer::backward(&d_aggregated, &cache1, &p.layer1, &mut grads.layer1)?;
            if mode.key == EmbeddingSource::Spatial {
                let d_window = d_as_query.add(&d_as_key)?;
                // Window row i holds frame t+1-n+i; padding rows have no source.
                for i in 0..n {
                    if t + 1 + i >= n {
                        let src = t + 1 + i - n;
                        for (d, v) in d_reduced.row_mut(src).iter_mut().zip(d_window.row(i)) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }

    if let Some(reduced) = &inputs.reduced {
        let mut d_pre = d_reduced;
        for (d, &r) in d_pre.data_mut().iter_mut().zip(reduced.data()) {
            *d *= 1.0 - r * r;
        }
        grads.w_l.add_assign(&d_pre.t_matmul(&sample.spatial)?)?;
    }
    Ok((loss, grads))
}

/// Per-stage cross-entropy of the TCN outputs. Returns the summed loss over
/// supervised stages and gradients of the per-frame mean.
pub fn tcn_backward(
    frames: &Matrix,
    labels: &[usize],
    p: &TcnParams,
    stage_supervision: bool,
) -> Result<(f64, TcnParams)> {
    if labels.len() != frames.rows() {
        return Err(Error::Data(format!("{} labels for {} frames", labels.len(), frames.rows())));
    }
    check_labels(labels, p.config.out_dim)?;
    let (out, cache) = tcn::forward_cached(frames, p)?;
    let stages = out.stage_outputs.len();
    let scale = 1.0 / frames.rows() as f64;
    let mut loss = 0.0;
    let mut d_outputs = Vec::with_capacity(stages);
    for (s, logits) in out.stage_outputs.iter().enumerate() {
        let mut d = Matrix::zeros(logits.rows(), logits.cols());
        if stage_supervision || s + 1 == stages {
            for (t, &y) in labels.iter().enumerate() {
                let mut probs = logits.row(t).to_vec();
                softmax_in_place(&mut probs);
                loss -= probs[y].max(PROB_FLOOR).ln();
                probs[y] -= 1.0;
                for (o, v) in d.row_mut(t).iter_mut().zip(&probs) {
                    *o = v * scale;
                }
            }
        }
        d_outputs.push(d);
    }
    let grads = tcn::backward(&d_outputs, &cache, p)?;
    Ok((loss, grads))
}

pub trait Optimizer<P: ParamBlocks> {
    fn step(&mut self, params: &mut P, grads: &P);
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
}

impl<P: ParamBlocks> Optimizer<P> for Sgd {
    fn step(&mut self, params: &mut P, grads: &P) {
        let g = grads.blocks();
        for ((_, w), (_, gw)) in params.blocks_mut().into_iter().zip(g) {
            w.add_scaled(gw, -self.learning_rate).expect("gradient layout");
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<P> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: P,
    v: P,
}

impl<P: ParamBlocks> Adam<P> {
    pub fn new(params: &P, learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

impl<P: ParamBlocks> Optimizer<P> for Adam<P> {
    fn step(&mut self, params: &mut P, grads: &P) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let g = grads.blocks();
        let m = self.m.blocks_mut();
        let v = self.v.blocks_mut();
        for ((((_, w), (_, gw)), (_, mw)), (_, vw)) in
            params.blocks_mut().into_iter().zip(g).zip(m).zip(v)
        {
            let iter = w
                .data_mut()
                .iter_mut()
                .zip(gw.data())
                .zip(mw.data_mut().iter_mut())
                .zip(vw.data_mut().iter_mut());
            for (((w, &g), m), v) in iter {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

fn optimizer_for<P: ParamBlocks + 'static>(params: &P, cfg: &TrainConfig) -> Box<dyn Optimizer<P>> {
    match cfg.optimizer {
        OptimizerKind::Adam => Box::new(Adam::new(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)),
        OptimizerKind::Sgd => Box::new(Sgd {
            learning_rate: cfg.learning_rate,
        }),
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<P> {
    pub params: P,
    /// Mean per-frame loss of each epoch, measured before each video's step.
    pub loss_curve: Vec<f64>,
}

fn run_epochs<P, F>(mut params: P, videos: usize, cfg: &TrainConfig, mut step_fn: F) -> Result<TrainOutcome<P>>
where
    P: ParamBlocks + 'static,
    F: FnMut(&P, usize) -> Result<(f64, usize, P)>,
{
    cfg.validate()?;
    if videos == 0 {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut optimizer = optimizer_for(&params, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.0 ^ 0x5e_ed0f_0b5e);
    let mut order: Vec<usize> = (0..videos).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut frames = 0;
        for &v in &order {
            let (loss, count, grads) = step_fn(&params, v)?;
            total += loss;
            frames += count;
            optimizer.step(&mut params, &grads);
        }
        curve.push(total / frames.max(1) as f64);
    }
    Ok(TrainOutcome {
        params,
        loss_curve: curve,
    })
}

/// Trains the aggregation head from freshly initialised parameters.
pub fn train(
    dataset: &[VideoSample],
    model: AggregationConfig,
    mode: QueryKeyMode,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<AggregationParams>> {
    let params = AggregationParams::init(model, &mut ParamRng::new(cfg.seed))?;
    train_from(dataset, params, mode, cfg)
}

pub fn train_from(
    dataset: &[VideoSample],
    params: AggregationParams,
    mode: QueryKeyMode,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<AggregationParams>> {
    run_epochs(params, dataset.len(), cfg, |p, v| {
        let sample = &dataset[v];
        let (loss, grads) = backward(sample, p, mode)?;
        Ok((loss, sample.labels.len(), grads))
    })
}

/// One training video for the TCN.
#[derive(Debug, Clone)]
pub struct TcnSample {
    pub spatial: Matrix,
    pub labels: Vec<usize>,
}

pub fn train_tcn(dataset: &[TcnSample], model: TcnConfig, cfg: &TrainConfig) -> Result<TrainOutcome<TcnParams>> {
    let params = TcnParams::init(model, &mut ParamRng::new(cfg.seed))?;
    let stages = if cfg.stage_supervision { model.stages } else { 1 };
    run_epochs(params, dataset.len(), cfg, |p, v| {
        let sample = &dataset[v];
        let (loss, grads) = tcn_backward(&sample.spatial, &sample.labels, p, cfg.stage_supervision)?;
        Ok((loss / stages as f64, sample.labels.len(), grads))
    })
}

/// Central-difference step used by gradient verification.
pub const FD_STEP: f64 = 1e-5;
/// Largest accepted relative error per block.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    pub name: String,
    pub max_relative_error: f64,
    pub scalars: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub step: f64,
    pub tolerance: f64,
    pub blocks: Vec<BlockError>,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_relative_error <= self.tolerance)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_relative_error).fold(0.0, f64::max)
    }

    pub fn failing_blocks(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .filter(|b| b.max_relative_error > self.tolerance)
            .map(|b| b.name.as_str())
            .collect()
    }
}

impl fmt::Display for GradientReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "block\tscalars\tmax_rel_error\tstatus")?;
        for b in &self.blocks {
            let status = if b.max_relative_error <= self.tolerance { "ok" } else { "FAIL" };
            writeln!(f, "{}\t{}\t{:.3e}\t{status}", b.name, b.scalars, b.max_relative_error)?;
        }
        write!(
            f,
            "overall\tstep={:e}\tmax_rel_error={:.3e}\t{}",
            self.step,
            self.max_relative_error(),
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` with central differences of `loss` at `params`,
/// block by block.
pub fn check_gradients<P: ParamBlocks>(
    params: &P,
    analytic: &P,
    step: f64,
    mut loss: impl FnMut(&P) -> f64,
) -> GradientReport {
    let mut blocks = Vec::new();
    let analytic_blocks = analytic.blocks();
    for (bi, (name, a)) in analytic_blocks.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..a.len() {
            let mut plus = params.clone();
            plus.blocks_mut()[bi].1.data_mut()[i] += step;
            let mut minus = params.clone();
            minus.blocks_mut()[bi].1.data_mut()[i] -= step;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
            worst = worst.max(relative_error(a.data()[i], numeric));
        }
        blocks.push(BlockError {
            name: name.clone(),
            max_relative_error: worst,
            scalars: a.len(),
        });
    }
    GradientReport {
        step,
        tolerance: GRAD_TOLERANCE,
        blocks,
    }
}

/// Toy shapes for gradient verification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub model: AggregationConfig,
    pub tcn: TcnConfig,
    pub frames: usize,
    pub mode: QueryKeyMode,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            model: AggregationConfig {
                phases: 4,
                spatial_dim: 10,
                heads: 2,
                d_k: 4,
                d_ff: 6,
                window: 4,
                eps: 1e-5,
            },
            tcn: TcnConfig {
                spatial_dim: 10,
                reduced_dim: 4,
                stages: 2,
                layers_per_stage: 2,
                kernel_size: 2,
                hidden_channels: 3,
                out_dim: 4,
                softmax_between_stages: false,
            },
            frames: 6,
            mode: QueryKeyMode::HYBRID,
        }
    }
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.phases > 4 || m.window > 4 || m.d_k > 4 || self.frames > 6 || self.frames == 0 {
            return Err(Error::Config(
                "gradient check expects toy shapes: phases, window, d_k <= 4 and 1..=6 frames".into(),
            ));
        }
        if self.tcn.out_dim != m.phases || self.tcn.spatial_dim != m.spatial_dim {
            return Err(Error::Config("toy TCN widths must match the toy head".into()));
        }
        m.validate()?;
        self.tcn.validate()
    }
}

fn toy_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    use rand::Rng;
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect())
        .expect("toy shape")
}

/// Random non-degenerate parameters and one toy video.
pub fn toy_problem(cfg: &GradcheckConfig, seed: RngSeed) -> Result<(AggregationParams, VideoSample)> {
    use rand::Rng;
    let mut params = AggregationParams::init(cfg.model, &mut ParamRng::new(seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.0.wrapping_add(1));
    for (_, m) in params.blocks_mut() {
        for v in m.data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    params.w_l = params.w_l.scale(2.0);
    let frames = cfg.frames;
    let sample = VideoSample {
        spatial: toy_matrix(&mut rng, frames, cfg.model.spatial_dim, 1.0),
        temporal: toy_matrix(&mut rng, frames, cfg.model.phases, 2.0),
        labels: (0..frames).map(|_| rng.random_range(0..cfg.model.phases)).collect(),
    };
    Ok((params, sample))
}

/// Mean per-frame loss, forward only.
pub fn mean_loss(sample: &VideoSample, p: &AggregationParams, mode: QueryKeyMode) -> Result<f64> {
    let trace = crate::aggregation::predict_video(&sample.spatial, &sample.temporal, p, mode)?;
    Ok(cross_entropy(&trace.probabilities, &sample.labels)? / sample.labels.len() as f64)
}

/// Finite-difference verification of every aggregation-head block.
pub fn verify_gradients(cfg: &GradcheckConfig, seed: RngSeed) -> Result<GradientReport> {
    cfg.validate()?;
    let (params, sample) = toy_problem(cfg, seed)?;
    let (_, analytic) = backward(&sample, &params, cfg.mode)?;
    Ok(check_gradients(&params, &analytic, FD_STEP, |p| {
        mean_loss(&sample, p, cfg.mode).expect("toy forward")
    }))
}

/// Finite-difference verification of every TCN block under per-stage loss.
pub fn verify_tcn_gradients(cfg: &GradcheckConfig, seed: RngSeed) -> Result<GradientReport> {
    use rand::Rng;
    cfg.validate()?;
    let mut params = TcnParams::init(cfg.tcn, &mut ParamRng::new(seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.0.wrapping_add(2));
    for (_, m) in params.blocks_mut() {
        for v in m.data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let frames = toy_matrix(&mut rng, cfg.frames, cfg.tcn.spatial_dim, 1.0);
    let labels: Vec<usize> = (0..cfg.frames).map(|_| rng.random_range(0..cfg.tcn.out_dim)).collect();
    let (_, analytic) = tcn_backward(&frames, &labels, &params, true)?;
    let mut report = check_gradients(&params, &analytic, FD_STEP, |p| {
        tcn_backward(&frames, &labels, p, true).expect("toy forward").0 / cfg.frames as f64
    });
    for b in &mut report.blocks {
        b.name = format!("tcn.{}", b.name);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::predict_video;

    #[test]
    fn cross_entropy_cases() {
        let one_hot = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(cross_entropy(&one_hot, &[0, 1]).unwrap().abs() < 1e-15);
        let clamped = cross_entropy(&one_hot, &[1, 1]).unwrap();
        assert!((clamped - (-PROB_FLOOR.ln())).abs() < 1e-9);

        for (t, n) in [(1usize, 2usize), (5, 7), (13, 8)] {
            let uniform = Matrix::filled(t, n, 1.0 / n as f64);
            let loss = cross_entropy(&uniform, &vec![n - 1; t]).unwrap();
            assert!((loss - t as f64 * (n as f64).ln()).abs() < 1e-12);
        }

        let p = Matrix::from_rows(&[vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3], vec![0.25, 0.25, 0.5]]).unwrap();
        let direct = -(0.5f64.ln() + 0.6f64.ln() + 0.5f64.ln());
        assert!((cross_entropy(&p, &[1, 0, 2]).unwrap() - direct).abs() <= 1e-12);

        assert!(matches!(cross_entropy(&p, &[0, 3, 1]), Err(Error::Data(_))));
    }

    #[test]
    fn gradients_pass_in_all_modes() {
        for mode in QueryKeyMode::ALL {
            for seed in 0..3 {
                let cfg = GradcheckConfig { mode, ..Default::default() };
                let report = verify_gradients(&cfg, RngSeed(seed)).unwrap();
                assert!(report.passed(), "{mode} seed {seed}\n{report}");
            }
        }
        let no_window = GradcheckConfig {
            model: AggregationConfig {
                window: 0,
                ..GradcheckConfig::default().model
            },
            ..Default::default()
        };
        assert!(verify_gradients(&no_window, RngSeed(4)).unwrap().passed());
    }

    #[test]
    fn tcn_gradients_pass() {
        let report = verify_tcn_gradients(&GradcheckConfig::default(), RngSeed(5)).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let cfg = GradcheckConfig::default();
        let (params, sample) = toy_problem(&cfg, RngSeed(6)).unwrap();
        let (_, mut analytic) = backward(&sample, &params, cfg.mode).unwrap();
        analytic.layer1.wv.data_mut()[3] += 0.05;
        let report = check_gradients(&params, &analytic, FD_STEP, |p| mean_loss(&sample, p, cfg.mode).unwrap());
        assert!(!report.passed());
        assert_eq!(report.failing_blocks(), vec!["layer1.wv"]);
    }

    #[test]
    fn report_is_deterministic() {
        let cfg = GradcheckConfig::default();
        assert_eq!(
            verify_gradients(&cfg, RngSeed(7)).unwrap(),
            verify_gradients(&cfg, RngSeed(7)).unwrap()
        );
    }

    #[test]
    fn toy_shapes_are_enforced() {
        let cfg = GradcheckConfig {
            frames: 50,
            ..Default::default()
        };
        assert!(matches!(verify_gradients(&cfg, RngSeed(0)), Err(Error::Config(_))));
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        // Single-key attention scores are constant, so query/key maps of
        // the cross layer get exactly zero gradient at any point.
        let cfg = GradcheckConfig {
            model: AggregationConfig {
                window: 1,
                ..GradcheckConfig::default().model
            },
            ..Default::default()
        };
        let (params, sample) = toy_problem(&cfg, RngSeed(8)).unwrap();
        let (_, grads) = backward(&sample, &params, cfg.mode).unwrap();
        assert!(grads.layer2.wq.data().iter().all(|&v| v == 0.0));
        assert!(grads.layer2.wk.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn small_step_descends() {
        let cfg = GradcheckConfig::default();
        let (params, sample) = toy_problem(&cfg, RngSeed(9)).unwrap();
        let (_, grads) = backward(&sample, &params, cfg.mode).unwrap();
        let before = mean_loss(&sample, &params, cfg.mode).unwrap();
        let mut stepped = params.clone();
        Sgd { learning_rate: 1e-3 }.step(&mut stepped, &grads);
        assert!(mean_loss(&sample, &stepped, cfg.mode).unwrap() < before);
    }

    #[test]
    fn adam_with_zero_gradient_is_a_no_op() {
        let cfg = GradcheckConfig::default();
        let (params, _) = toy_problem(&cfg, RngSeed(10)).unwrap();
        let mut adam = Adam::new(&params, 1e-3, 0.9, 0.999, 1e-8);
        let mut stepped = params.clone();
        adam.step(&mut stepped, &params.zeros_like());
        assert_eq!(stepped, params);
    }

    fn toy_dataset(cfg: &GradcheckConfig, videos: u64) -> Vec<VideoSample> {
        (0..videos).map(|v| toy_problem(cfg, RngSeed(100 + v)).unwrap().1).collect()
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let cfg = GradcheckConfig::default();
        let data = toy_dataset(&cfg, 3);
        let train_cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..Default::default()
        };
        let init = AggregationParams::init(cfg.model, &mut ParamRng::new(train_cfg.seed)).unwrap();
        let out = train(&data, cfg.model, cfg.mode, &train_cfg).unwrap();
        assert_eq!(out.params, init);
        assert!(out.loss_curve.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn training_is_deterministic_and_rejects_empty_sets() {
        let cfg = GradcheckConfig::default();
        let data = toy_dataset(&cfg, 3);
        let train_cfg = TrainConfig {
            epochs: 4,
            seed: RngSeed(3),
            ..Default::default()
        };
        let a = train(&data, cfg.model, cfg.mode, &train_cfg).unwrap();
        let b = train(&data, cfg.model, cfg.mode, &train_cfg).unwrap();
        assert_eq!(a.loss_curve, b.loss_curve);
        assert_eq!(a.params, b.params);
        assert!(matches!(train(&[], cfg.model, cfg.mode, &train_cfg), Err(Error::Data(_))));
        let bad = TrainConfig { epochs: 0, ..train_cfg };
        assert!(matches!(train(&data, cfg.model, cfg.mode, &bad), Err(Error::Config(_))));
    }

    fn permute_classes(p: &AggregationParams, perm: &[usize]) -> AggregationParams {
        // perm[old] = new
        let n = perm.len();
        let rows = |m: &Matrix| {
            let mut out = m.clone();
            for old in 0..n {
                out.row_mut(perm[old]).copy_from_slice(m.row(old));
            }
            out
        };
        let cols = |m: &Matrix| {
            let mut out = m.clone();
            for r in 0..m.rows() {
                for old in 0..n {
                    out.set(r, perm[old], m.get(r, old));
                }
            }
            out
        };
        let layer = |l: &crate::transformer::TransformerLayerParams| {
            let mut l = l.clone();
            l.wq = cols(&l.wq);
            l.wk = cols(&l.wk);
            l.wv = cols(&l.wv);
            l.w1 = cols(&l.w1);
            l.wo = rows(&l.wo);
            l.w2 = rows(&l.w2);
            l.b2 = cols(&l.b2);
            l.ln1_gain = cols(&l.ln1_gain);
            l.ln1_bias = cols(&l.ln1_bias);
            l.ln2_gain = cols(&l.ln2_gain);
            l.ln2_bias = cols(&l.ln2_bias);
            l
        };
        AggregationParams {
            config: p.config,
            w_l: rows(&p.w_l),
            layer1: layer(&p.layer1),
            layer2: layer(&p.layer2),
        }
    }

    #[test]
    fn relabeling_leaves_loss_trajectory_unchanged() {
        let cfg = GradcheckConfig::default();
        let data = toy_dataset(&cfg, 2);
        let perm = [2, 0, 3, 1];
        let relabeled: Vec<VideoSample> = data
            .iter()
            .map(|s| {
                let mut temporal = s.temporal.clone();
                for t in 0..temporal.rows() {
                    for old in 0..4 {
                        temporal.set(t, perm[old], s.temporal.get(t, old));
                    }
                }
                VideoSample {
                    spatial: s.spatial.clone(),
                    temporal,
                    labels: s.labels.iter().map(|&y| perm[y]).collect(),
                }
            })
            .collect();
        let train_cfg = TrainConfig {
            epochs: 5,
            ..Default::default()
        };
        let init = AggregationParams::init(cfg.model, &mut ParamRng::new(train_cfg.seed)).unwrap();
        let a = train_from(&data, init.clone(), cfg.mode, &train_cfg).unwrap();
        let b = train_from(&relabeled, permute_classes(&init, &perm), cfg.mode, &train_cfg).unwrap();
        for (x, y) in a.loss_curve.iter().zip(&b.loss_curve) {
            assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
        }
        let pa = predict_video(&data[0].spatial, &data[0].temporal, &a.params, cfg.mode).unwrap();
        let pb = predict_video(&relabeled[0].spatial, &relabeled[0].temporal, &b.params, cfg.mode).unwrap();
        assert_eq!(pb.labels, pa.labels.iter().map(|&y| perm[y]).collect::<Vec<_>>());
    }

    #[test]
    fn tcn_training_reduces_loss() {
        let cfg = GradcheckConfig::default();
        let data: Vec<TcnSample> = toy_dataset(&cfg, 2)
            .into_iter()
            .map(|s| TcnSample {
                spatial: s.spatial,
                labels: s.labels,
            })
            .collect();
        let train_cfg = TrainConfig {
            epochs: 60,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let out = train_tcn(&data, cfg.tcn, &train_cfg).unwrap();
        assert!(out.loss_curve.last().unwrap() < &(out.loss_curve[0] * 0.7), "{:?}", out.loss_curve);
    }
}
