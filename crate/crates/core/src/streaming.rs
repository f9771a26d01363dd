//! Online inference: one spatial embedding in, one phase distribution out.
//!
//! A session keeps the TCN block histories and rings holding the last `n`
//! temporal (and, for spatial-key modes, reduced spatial) embeddings. The
//! per-frame arithmetic is the same code, in the same order, as the batch
//! path, so streamed outputs equal [`predict_video`] outputs bit for bit.
//!
//! [`predict_video`]: crate::aggregation::predict_video

use std::fmt;
use std::time::{Duration, Instant};

use crate::aggregation::{predict_with_query, reduce_query, AggregationParams, EmbeddingSource, QueryKeyMode};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::tcn::{TcnParams, TcnStreamState};

/// Parameters shared by any number of sessions.
#[derive(Debug, Clone)]
pub struct StreamModel {
    pub tcn: TcnParams,
    pub aggregation: AggregationParams,
    pub mode: QueryKeyMode,
}

impl StreamModel {
    pub fn new(tcn: TcnParams, aggregation: AggregationParams, mode: QueryKeyMode) -> Result<Self> {
        if tcn.config.out_dim != aggregation.config.phases {
            return Err(Error::shape(format!(
                "TCN emits {} channels but the head expects {} phases",
                tcn.config.out_dim, aggregation.config.phases
            )));
        }
        if tcn.config.spatial_dim != aggregation.config.spatial_dim {
            return Err(Error::shape(format!(
                "TCN reads {}-wide embeddings but the head expects {}",
                tcn.config.spatial_dim, aggregation.config.spatial_dim
            )));
        }
        Ok(Self {
            tcn,
            aggregation,
            mode,
        })
    }
}

/// Last `n` rows, zero-filled until `n` frames have been seen.
#[derive(Debug, Clone)]
struct WindowRing {
    rows: Matrix,
    head: usize,
}

impl WindowRing {
    fn new(n: usize, width: usize) -> Self {
        Self {
            rows: Matrix::zeros(n, width),
            head: 0,
        }
    }

    fn push(&mut self, row: &[f64]) {
        let n = self.rows.rows();
        if n == 0 {
            return;
        }
        self.rows.row_mut(self.head).copy_from_slice(row);
        self.head = (self.head + 1) % n;
    }

    /// Oldest row first.
    fn window(&self) -> Matrix {
        let n = self.rows.rows();
        let mut out = Matrix::zeros(n, self.rows.cols());
        for i in 0..n {
            out.row_mut(i).copy_from_slice(self.rows.row((self.head + i) % n));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LatencyTotals {
    pub frames: u64,
    pub total: Duration,
    pub max: Duration,
}

pub struct StreamSession<'m> {
    model: &'m StreamModel,
    tcn_state: TcnStreamState,
    temporal: WindowRing,
    spatial: Option<WindowRing>,
    frame: u64,
    latency: LatencyTotals,
    closed: bool,
}

impl<'m> StreamSession<'m> {
    pub fn new(model: &'m StreamModel) -> Self {
        let n = model.aggregation.config.window;
        let phases = model.aggregation.config.phases;
        Self {
            model,
            tcn_state: TcnStreamState::new(&model.tcn.config),
            temporal: WindowRing::new(n, phases),
            spatial: model.mode.uses_spatial().then(|| WindowRing::new(n, phases)),
            frame: 0,
            latency: LatencyTotals::default(),
            closed: false,
        }
    }

    /// Frames consumed so far.
    pub fn frame_count(&self) -> u64 {
        self.frame
    }

    pub fn latency(&self) -> LatencyTotals {
        self.latency
    }

    /// Scalars of mutable state; constant for the life of the session.
    pub fn state_len(&self) -> usize {
        self.tcn_state.state_len()
            + self.temporal.rows.len()
            + self.spatial.as_ref().map_or(0, |r| r.rows.len())
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn push_frame(&mut self, spatial: &[f64]) -> Result<(Vec<f64>, Duration)> {
        if self.closed {
            return Err(Error::Session(format!("push after close (frame {})", self.frame)));
        }
        let agg = &self.model.aggregation;
        if spatial.len() != agg.config.spatial_dim {
            return Err(Error::shape(format!(
                "spatial embedding has width {}, expected {}",
                spatial.len(),
                agg.config.spatial_dim
            )));
        }
        let start = Instant::now();
        let temporal = self.tcn_state.push(spatial, &self.model.tcn)?;
        let reduced = if self.model.mode.uses_spatial() {
            Some(reduce_query(spatial, &agg.w_l)?)
        } else {
            None
        };
        self.temporal.push(&temporal);
        if let (Some(ring), Some(r)) = (self.spatial.as_mut(), reduced.as_ref()) {
            ring.push(r);
        }
        let query = match self.model.mode.query {
            EmbeddingSource::Spatial => reduced.as_deref().expect("reduced query"),
            EmbeddingSource::Temporal => &temporal[..],
        };
        let window = match self.model.mode.key {
            EmbeddingSource::Spatial => self.spatial.as_ref().expect("spatial ring").window(),
            EmbeddingSource::Temporal => self.temporal.window(),
        };
        let probs = predict_with_query(query, &window, agg)?;
        let elapsed = start.elapsed();

        self.frame += 1;
        self.latency.frames += 1;
        self.latency.total += elapsed;
        self.latency.max = self.latency.max.max(elapsed);
        Ok((probs, elapsed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyStats {
    pub frames: usize,
    pub warmup: usize,
    pub total_seconds: f64,
    pub fps: f64,
    pub mean_ns: f64,
    pub p50_ns: u64,
    pub p95_ns: u64,
    pub p99_ns: u64,
    pub max_ns: u64,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[u64], q: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Streams `warmup` frames, then times each of `frames.rows()` frames through
/// one session. Inputs are prepared up front so generation cost is excluded.
pub fn benchmark(model: &StreamModel, frames: &Matrix, warmup: usize) -> Result<LatencyStats> {
    if frames.rows() == 0 {
        return Err(Error::EmptyInput("benchmark needs at least one frame".into()));
    }
    let mut session = StreamSession::new(model);
    for i in 0..warmup {
        session.push_frame(frames.row(i % frames.rows()))?;
    }
    let mut samples = Vec::with_capacity(frames.rows());
    let loop_start = Instant::now();
    for t in 0..frames.rows() {
        let (_, elapsed) = session.push_frame(frames.row(t))?;
        samples.push(elapsed.as_nanos() as u64);
    }
    let total_seconds = loop_start.elapsed().as_secs_f64();
    let mean_ns = samples.iter().sum::<u64>() as f64 / samples.len() as f64;
    samples.sort_unstable();
    Ok(LatencyStats {
        frames: samples.len(),
        warmup,
        total_seconds,
        fps: samples.len() as f64 / total_seconds,
        mean_ns,
        p50_ns: percentile(&samples, 0.50),
        p95_ns: percentile(&samples, 0.95),
        p99_ns: percentile(&samples, 0.99),
        max_ns: *samples.last().expect("nonempty"),
    })
}

impl fmt::Display for LatencyStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "key\tvalue")?;
        writeln!(f, "path\ttemporal+aggregation (spatial extraction excluded)")?;
        writeln!(f, "frames\t{}", self.frames)?;
        writeln!(f, "warmup\t{}", self.warmup)?;
        writeln!(f, "total_seconds\t{:.6}", self.total_seconds)?;
        writeln!(f, "fps\t{:.1}", self.fps)?;
        writeln!(f, "mean_ms\t{:.4}", self.mean_ns / 1e6)?;
        writeln!(f, "p50_ms\t{:.4}", self.p50_ns as f64 / 1e6)?;
        writeln!(f, "p95_ms\t{:.4}", self.p95_ns as f64 / 1e6)?;
        writeln!(f, "p99_ms\t{:.4}", self.p99_ns as f64 / 1e6)?;
        write!(f, "max_ms\t{:.4}", self.max_ns as f64 / 1e6)
    }
}

/// CPU model string and logical core count, for labelling benchmark output.
pub fn hardware_summary() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{cpu} ({cores} logical cores)")
}
