//! Causal multi-stage temporal convolutional network producing per-frame
//! temporal embeddings from spatial embeddings.
//!
//! Pipeline: a per-frame affine reduction (a 1×1 convolution) from the spatial
//! width to `reduced_dim`, then `stages` single-stage TCNs. Each stage is an
//! input 1×1 projection, `layers_per_stage` dilated causal residual blocks
//! (dilation `2^i`), and an output 1×1 projection to `out_dim` channels. Stage
//! `s + 1` consumes the raw output of stage `s` (or its softmax when
//! `softmax_between_stages` is set). The last stage output is the embedding.
//!
//! Kernel tap `j` of a block with dilation `d` reads frame `t - (k-1-j)·d`;
//! frames before the start of the video read as zero. The per-frame kernels
//! below are shared with [`TcnStreamState`], so batch and streaming outputs
//! are bit-identical.

use crate::error::{Error, Result};
use crate::linalg::{affine_into, dot, softmax_in_place, Matrix, ParamRng};
use crate::params::ParamBlocks;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcnConfig {
    pub spatial_dim: usize,
    pub reduced_dim: usize,
    pub stages: usize,
    pub layers_per_stage: usize,
    pub kernel_size: usize,
    pub hidden_channels: usize,
    pub out_dim: usize,
    pub softmax_between_stages: bool,
}

impl Default for TcnConfig {
    fn default() -> Self {
        Self {
            spatial_dim: 2048,
            reduced_dim: 32,
            stages: 2,
            layers_per_stage: 9,
            kernel_size: 3,
            hidden_channels: 32,
            out_dim: 7,
            softmax_between_stages: false,
        }
    }
}

impl TcnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("tcn: {what}")));
        if self.kernel_size < 2 {
            return bad("kernel_size must be >= 2");
        }
        if self.layers_per_stage == 0 || self.stages == 0 {
            return bad("stages and layers_per_stage must be >= 1");
        }
        if self.layers_per_stage > 24 {
            return bad("layers_per_stage above 24 overflows the dilation schedule");
        }
        if self.spatial_dim == 0 || self.reduced_dim == 0 || self.hidden_channels == 0 || self.out_dim == 0 {
            return bad("all widths must be >= 1");
        }
        Ok(())
    }

    pub fn dilation(&self, layer: usize) -> usize {
        1 << layer
    }

    /// Frames one stage can see, counting the current frame.
    pub fn stage_receptive_field(&self) -> usize {
        (self.kernel_size - 1) * ((1 << self.layers_per_stage) - 1) + 1
    }

    /// Frames the whole stack can see, counting the current frame.
    pub fn receptive_field(&self) -> usize {
        self.stages * (self.stage_receptive_field() - 1) + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DilatedLayer {
    /// `C × (k·C)`; column `j·C + c_in` is tap `j`, input channel `c_in`.
    pub conv_w: Matrix,
    pub conv_b: Matrix,
    pub mix_w: Matrix,
    pub mix_b: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnStage {
    pub in_w: Matrix,
    pub in_b: Matrix,
    pub layers: Vec<DilatedLayer>,
    pub out_w: Matrix,
    pub out_b: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnParams {
    pub config: TcnConfig,
    pub reduce_w: Matrix,
    pub reduce_b: Matrix,
    pub stages: Vec<TcnStage>,
}

impl TcnParams {
    pub fn init(config: TcnConfig, rng: &mut ParamRng) -> Result<Self> {
        config.validate()?;
        let c = config.hidden_channels;
        let k = config.kernel_size;
        let reduce_w = rng.weight(config.reduced_dim, config.spatial_dim);
        let reduce_b = Matrix::zeros(1, config.reduced_dim);
        let stages = (0..config.stages)
            .map(|s| {
                let in_dim = if s == 0 { config.reduced_dim } else { config.out_dim };
                TcnStage {
                    in_w: rng.weight(c, in_dim),
                    in_b: Matrix::zeros(1, c),
                    layers: (0..config.layers_per_stage)
                        .map(|_| DilatedLayer {
                            conv_w: rng.weight(c, k * c),
                            conv_b: Matrix::zeros(1, c),
                            mix_w: rng.weight(c, c),
                            mix_b: Matrix::zeros(1, c),
                        })
                        .collect(),
                    out_w: rng.weight(config.out_dim, c),
                    out_b: Matrix::zeros(1, config.out_dim),
                }
            })
            .collect();
        Ok(Self {
            config,
            reduce_w,
            reduce_b,
            stages,
        })
    }
}

impl ParamBlocks for TcnParams {
    fn blocks(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![
            ("reduce.w".to_string(), &self.reduce_w),
            ("reduce.b".to_string(), &self.reduce_b),
        ];
        for (s, st) in self.stages.iter().enumerate() {
            out.push((format!("stage{s}.in.w"), &st.in_w));
            out.push((format!("stage{s}.in.b"), &st.in_b));
            for (l, layer) in st.layers.iter().enumerate() {
                out.push((format!("stage{s}.layer{l}.conv.w"), &layer.conv_w));
                out.push((format!("stage{s}.layer{l}.conv.b"), &layer.conv_b));
                out.push((format!("stage{s}.layer{l}.mix.w"), &layer.mix_w));
                out.push((format!("stage{s}.layer{l}.mix.b"), &layer.mix_b));
            }
            out.push((format!("stage{s}.out.w"), &st.out_w));
            out.push((format!("stage{s}.out.b"), &st.out_b));
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = vec![
            ("reduce.w".to_string(), &mut self.reduce_w),
            ("reduce.b".to_string(), &mut self.reduce_b),
        ];
        for (s, st) in self.stages.iter_mut().enumerate() {
            out.push((format!("stage{s}.in.w"), &mut st.in_w));
            out.push((format!("stage{s}.in.b"), &mut st.in_b));
            for (l, layer) in st.layers.iter_mut().enumerate() {
                out.push((format!("stage{s}.layer{l}.conv.w"), &mut layer.conv_w));
                out.push((format!("stage{s}.layer{l}.conv.b"), &mut layer.conv_b));
                out.push((format!("stage{s}.layer{l}.mix.w"), &mut layer.mix_w));
                out.push((format!("stage{s}.layer{l}.mix.b"), &mut layer.mix_b));
            }
            out.push((format!("stage{s}.out.w"), &mut st.out_w));
            out.push((format!("stage{s}.out.b"), &mut st.out_b));
        }
        out
    }
}

/// `out[c] = b[c] + Σ_j ⟨W[c, j·C..(j+1)·C], taps[j]⟩`.
fn conv_taps_into(w: &Matrix, b: &Matrix, taps: &[&[f64]], out: &mut [f64]) {
    let c_in = taps[0].len();
    for (c, o) in out.iter_mut().enumerate() {
        let row = w.row(c);
        let mut acc = b.data()[c];
        for (j, tap) in taps.iter().enumerate() {
            acc += dot(&row[j * c_in..(j + 1) * c_in], tap);
        }
        *o = acc;
    }
}

/// One residual block for one frame: `x + mix(relu(conv(taps)))`. `pre` and
/// `act` receive the conv output before and after the ReLU.
fn block_frame(
    layer: &DilatedLayer,
    taps: &[&[f64]],
    current: &[f64],
    pre: &mut [f64],
    act: &mut [f64],
    out: &mut [f64],
) {
    conv_taps_into(&layer.conv_w, &layer.conv_b, taps, pre);
    for (a, &p) in act.iter_mut().zip(pre.iter()) {
        *a = p.max(0.0);
    }
    affine_into(&layer.mix_w, Some(&layer.mix_b), act, out);
    for (o, &x) in out.iter_mut().zip(current) {
        *o += x;
    }
}

fn affine_rows(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), w.rows());
    for t in 0..x.rows() {
        affine_into(w, Some(b), x.row(t), out.row_mut(t));
    }
    out
}

/// Per-frame affine reduction of the spatial embeddings.
pub fn reduce_spatial(frames: &Matrix, p: &TcnParams) -> Result<Matrix> {
    if frames.cols() != p.config.spatial_dim {
        return Err(Error::shape(format!(
            "spatial embeddings have width {}, expected {}",
            frames.cols(),
            p.config.spatial_dim
        )));
    }
    Ok(affine_rows(frames, &p.reduce_w, &p.reduce_b))
}

struct BlockOutput {
    out: Matrix,
    pre: Matrix,
    act: Matrix,
}

fn block_forward(x: &Matrix, layer: &DilatedLayer, dilation: usize, kernel: usize) -> BlockOutput {
    let (t_len, c) = x.shape();
    let zero = vec![0.0; c];
    let mut out = Matrix::zeros(t_len, c);
    let mut pre = Matrix::zeros(t_len, c);
    let mut act = Matrix::zeros(t_len, c);
    let mut taps: Vec<&[f64]> = Vec::with_capacity(kernel);
    for t in 0..t_len {
        taps.clear();
        for j in 0..kernel {
            let back = (kernel - 1 - j) * dilation;
            taps.push(if t >= back { x.row(t - back) } else { &zero });
        }
        block_frame(
            layer,
            &taps,
            x.row(t),
            pre.row_mut(t),
            act.row_mut(t),
            out.row_mut(t),
        );
    }
    BlockOutput { out, pre, act }
}

/// Dilated causal residual block over a whole `T × C` sequence.
pub fn dilated_causal_block(x: &Matrix, layer: &DilatedLayer, dilation: usize) -> Result<Matrix> {
    let c = x.cols();
    if layer.conv_w.rows() != c || !layer.conv_w.cols().is_multiple_of(c.max(1)) || layer.mix_w.shape() != (c, c) {
        return Err(Error::shape(format!(
            "block weights {}x{} do not fit {c} channels",
            layer.conv_w.rows(),
            layer.conv_w.cols()
        )));
    }
    let kernel = layer.conv_w.cols() / c;
    Ok(block_forward(x, layer, dilation, kernel).out)
}

/// Output of [`extract_temporal`]: the raw output of every stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalOutput {
    pub stage_outputs: Vec<Matrix>,
}

impl TemporalOutput {
    /// Last-stage output, one `out_dim` row per frame.
    pub fn embeddings(&self) -> &Matrix {
        self.stage_outputs.last().expect("at least one stage")
    }

    pub fn into_embeddings(mut self) -> Matrix {
        self.stage_outputs.pop().expect("at least one stage")
    }
}

struct StageCache {
    input: Matrix,
    /// Residual stream entering each block, plus the final one.
    stream: Vec<Matrix>,
    pre: Vec<Matrix>,
    act: Vec<Matrix>,
}

pub(crate) struct TcnCache {
    frames: Matrix,
    stages: Vec<StageCache>,
    /// Softmaxed stage outputs handed to the next stage, when enabled.
    handoff: Vec<Matrix>,
}

pub fn extract_temporal(frames: &Matrix, p: &TcnParams) -> Result<TemporalOutput> {
    forward_cached(frames, p).map(|(out, _)| out)
}

pub(crate) fn forward_cached(frames: &Matrix, p: &TcnParams) -> Result<(TemporalOutput, TcnCache)> {
    if frames.rows() == 0 {
        return Err(Error::EmptyInput("temporal extraction needs at least one frame".into()));
    }
    let cfg = &p.config;
    let mut input = reduce_spatial(frames, p)?;
    let mut outputs = Vec::with_capacity(cfg.stages);
    let mut caches = Vec::with_capacity(cfg.stages);
    let mut handoff = Vec::new();
    for (s, stage) in p.stages.iter().enumerate() {
        let mut h = affine_rows(&input, &stage.in_w, &stage.in_b);
        let mut stream = Vec::with_capacity(stage.layers.len() + 1);
        let mut pres = Vec::with_capacity(stage.layers.len());
        let mut acts = Vec::with_capacity(stage.layers.len());
        for (l, layer) in stage.layers.iter().enumerate() {
            let BlockOutput { out, pre, act } = block_forward(&h, layer, cfg.dilation(l), cfg.kernel_size);
            stream.push(h);
            pres.push(pre);
            acts.push(act);
            h = out;
        }
        let out = affine_rows(&h, &stage.out_w, &stage.out_b);
        stream.push(h);
        caches.push(StageCache {
            input,
            stream,
            pre: pres,
            act: acts,
        });
        input = if cfg.softmax_between_stages && s + 1 < cfg.stages {
            let mut soft = out.clone();
            for t in 0..soft.rows() {
                softmax_in_place(soft.row_mut(t));
            }
            handoff.push(soft.clone());
            soft
        } else {
            out.clone()
        };
        outputs.push(out);
    }
    Ok((
        TemporalOutput {
            stage_outputs: outputs,
        },
        TcnCache {
            frames: frames.clone(),
            stages: caches,
            handoff,
        },
    ))
}

/// Gradients of all TCN parameters given gradients of every stage output.
pub(crate) fn backward(d_stage_outputs: &[Matrix], cache: &TcnCache, p: &TcnParams) -> Result<TcnParams> {
    let cfg = &p.config;
    let mut grads = p.zeros_like();
    let mut d_next_input: Option<Matrix> = None;
    for s in (0..cfg.stages).rev() {
        let stage = &p.stages[s];
        let sc = &cache.stages[s];
        let mut d_out = d_stage_outputs[s].clone();
        if let Some(d_in) = d_next_input.take() {
            if cfg.softmax_between_stages {
                d_out.add_assign(&crate::linalg::softmax_rows_backward(&cache.handoff[s], &d_in))?;
            } else {
                d_out.add_assign(&d_in)?;
            }
        }
        let g = &mut grads.stages[s];
        let top = &sc.stream[stage.layers.len()];
        g.out_w.add_assign(&d_out.t_matmul(top)?)?;
        g.out_b.add_assign(&d_out.sum_rows())?;
        let mut d_h = d_out.matmul(&stage.out_w)?;

        for l in (0..stage.layers.len()).rev() {
            let layer = &stage.layers[l];
            let x = &sc.stream[l];
            let gl = &mut g.layers[l];
            gl.mix_w.add_assign(&d_h.t_matmul(&sc.act[l])?)?;
            gl.mix_b.add_assign(&d_h.sum_rows())?;
            let mut d_pre = d_h.matmul(&layer.mix_w)?;
            for (d, &pre) in d_pre.data_mut().iter_mut().zip(sc.pre[l].data()) {
                if pre <= 0.0 {
                    *d = 0.0;
                }
            }
            gl.conv_b.add_assign(&d_pre.sum_rows())?;
            let d_x = conv_backward(x, &d_pre, layer, cfg.dilation(l), cfg.kernel_size, &mut gl.conv_w);
            d_h.add_assign(&d_x)?;
        }

        g.in_w.add_assign(&d_h.t_matmul(&sc.input)?)?;
        g.in_b.add_assign(&d_h.sum_rows())?;
        d_next_input = Some(d_h.matmul(&stage.in_w)?);
    }
    let d_reduced = d_next_input.expect("at least one stage");
    grads.reduce_w.add_assign(&d_reduced.t_matmul(&cache.frames)?)?;
    grads.reduce_b.add_assign(&d_reduced.sum_rows())?;
    Ok(grads)
}

fn conv_backward(
    x: &Matrix,
    d_pre: &Matrix,
    layer: &DilatedLayer,
    dilation: usize,
    kernel: usize,
    d_w: &mut Matrix,
) -> Matrix {
    let (t_len, c) = x.shape();
    let mut d_x = Matrix::zeros(t_len, c);
    for t in 0..t_len {
        let d_row = d_pre.row(t);
        for j in 0..kernel {
            let back = (kernel - 1 - j) * dilation;
            if t < back {
                continue;
            }
            let src = t - back;
            let x_row = x.row(src).to_vec();
            for (co, &d) in d_row.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let w_row = &layer.conv_w.row(co)[j * c..(j + 1) * c];
                let dx = d_x.row_mut(src);
                for (o, &w) in dx.iter_mut().zip(w_row) {
                    *o += d * w;
                }
                let dw = &mut d_w.row_mut(co)[j * c..(j + 1) * c];
                for (o, &xv) in dw.iter_mut().zip(&x_row) {
                    *o += d * xv;
                }
            }
        }
    }
    d_x
}

/// Ring of the last `capacity` frames of one block's input, zero-initialised
/// so unseen frames read as left padding.
#[derive(Debug, Clone)]
struct History {
    buf: Matrix,
    head: usize,
}

impl History {
    fn new(capacity: usize, channels: usize) -> Self {
        Self {
            buf: Matrix::zeros(capacity, channels),
            head: 0,
        }
    }

    /// Frame `back` steps in the past (`1 ..= capacity`).
    fn back(&self, back: usize) -> &[f64] {
        let cap = self.buf.rows();
        self.buf.row((self.head + cap - back) % cap)
    }

    fn push(&mut self, frame: &[f64]) {
        let cap = self.buf.rows();
        self.buf.row_mut(self.head).copy_from_slice(frame);
        self.head = (self.head + 1) % cap;
    }
}

/// Incremental TCN state: each block keeps the last `(k-1)·dilation` inputs.
#[derive(Debug, Clone)]
pub struct TcnStreamState {
    histories: Vec<Vec<History>>,
}

impl TcnStreamState {
    pub fn new(config: &TcnConfig) -> Self {
        let histories = (0..config.stages)
            .map(|_| {
                (0..config.layers_per_stage)
                    .map(|l| {
                        History::new(
                            (config.kernel_size - 1) * config.dilation(l),
                            config.hidden_channels,
                        )
                    })
                    .collect()
            })
            .collect();
        Self { histories }
    }

    /// Scalars held in the history rings; constant for the session lifetime.
    pub fn state_len(&self) -> usize {
        self.histories
            .iter()
            .flatten()
            .map(|h| h.buf.len())
            .sum()
    }

    /// Consumes one spatial embedding and returns the last-stage output.
    pub fn push(&mut self, frame: &[f64], p: &TcnParams) -> Result<Vec<f64>> {
        let cfg = &p.config;
        if frame.len() != cfg.spatial_dim {
            return Err(Error::shape(format!(
                "spatial embedding has width {}, expected {}",
                frame.len(),
                cfg.spatial_dim
            )));
        }
        let c = cfg.hidden_channels;
        let k = cfg.kernel_size;
        let mut input = vec![0.0; cfg.reduced_dim];
        affine_into(&p.reduce_w, Some(&p.reduce_b), frame, &mut input);
        let mut h = vec![0.0; c];
        let mut next = vec![0.0; c];
        let mut pre = vec![0.0; c];
        let mut act = vec![0.0; c];
        for (s, stage) in p.stages.iter().enumerate() {
            affine_into(&stage.in_w, Some(&stage.in_b), &input, &mut h);
            for (l, layer) in stage.layers.iter().enumerate() {
                let d = cfg.dilation(l);
                let hist = &self.histories[s][l];
                let taps: Vec<&[f64]> = (0..k)
                    .map(|j| {
                        let back = (k - 1 - j) * d;
                        if back == 0 {
                            &h[..]
                        } else {
                            hist.back(back)
                        }
                    })
                    .collect();
                block_frame(layer, &taps, &h, &mut pre, &mut act, &mut next);
                self.histories[s][l].push(&h);
                std::mem::swap(&mut h, &mut next);
            }
            let mut out = vec![0.0; cfg.out_dim];
            affine_into(&stage.out_w, Some(&stage.out_b), &h, &mut out);
            if cfg.softmax_between_stages && s + 1 < cfg.stages {
                softmax_in_place(&mut out);
            }
            input = out;
        }
        Ok(input)
    }
}
