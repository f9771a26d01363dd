//! Hybrid embedding aggregation head.
//!
//! For frame `t` the spatial embedding `l_t` is reduced to `l̃_t =
//! tanh(W_l l_t)`, the last `n` temporal embeddings are self-aggregated by a
//! first Transformer layer (every window entry attends to the whole window),
//! and a second layer lets `l̃_t` query the aggregated window. A softmax over
//! the second layer's output gives the phase distribution.
//!
//! Frame indices are zero-based. A window for frame `t` holds rows for frames
//! `t+1-n ..= t`; slots before the first frame are zero rows at the front.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{dot, softmax_in_place, Matrix, ParamRng, LAYER_NORM_EPS};
use crate::params::{prefixed, prefixed_mut, ParamBlocks};
use crate::transformer::{self, TransformerDims, TransformerLayerParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EmbeddingSource {
    Spatial,
    Temporal,
}

/// Which embeddings feed the query and the key/value window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QueryKeyMode {
    pub query: EmbeddingSource,
    pub key: EmbeddingSource,
}

impl QueryKeyMode {
    /// Spatial query against temporal keys: the model proper.
    pub const HYBRID: QueryKeyMode = QueryKeyMode {
        query: EmbeddingSource::Spatial,
        key: EmbeddingSource::Temporal,
    };

    pub const ALL: [QueryKeyMode; 4] = [
        QueryKeyMode::HYBRID,
        QueryKeyMode {
            query: EmbeddingSource::Spatial,
            key: EmbeddingSource::Spatial,
        },
        QueryKeyMode {
            query: EmbeddingSource::Temporal,
            key: EmbeddingSource::Temporal,
        },
        QueryKeyMode {
            query: EmbeddingSource::Temporal,
            key: EmbeddingSource::Spatial,
        },
    ];

    pub fn uses_spatial(&self) -> bool {
        self.query == EmbeddingSource::Spatial || self.key == EmbeddingSource::Spatial
    }
}

impl Default for QueryKeyMode {
    fn default() -> Self {
        QueryKeyMode::HYBRID
    }
}

impl fmt::Display for QueryKeyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |s: EmbeddingSource| match s {
            EmbeddingSource::Spatial => "spatial",
            EmbeddingSource::Temporal => "temporal",
        };
        write!(f, "{}-{}", name(self.query), name(self.key))
    }
}

impl FromStr for QueryKeyMode {
    type Err = Error;

    /// `<query>-<key>`, each `spatial` or `temporal`.
    fn from_str(s: &str) -> Result<Self> {
        let source = |p: &str| match p {
            "spatial" => Ok(EmbeddingSource::Spatial),
            "temporal" => Ok(EmbeddingSource::Temporal),
            other => Err(Error::Config(format!("unknown embedding source '{other}'"))),
        };
        let (q, k) = s
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("mode '{s}' is not <query>-<key>")))?;
        Ok(QueryKeyMode {
            query: source(q)?,
            key: source(k)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationConfig {
    pub phases: usize,
    pub spatial_dim: usize,
    pub heads: usize,
    pub d_k: usize,
    pub d_ff: usize,
    pub window: usize,
    pub eps: f64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            phases: 7,
            spatial_dim: 2048,
            heads: 8,
            d_k: 8,
            d_ff: 32,
            window: 30,
            eps: LAYER_NORM_EPS,
        }
    }
}

impl AggregationConfig {
    pub fn layer_dims(&self) -> TransformerDims {
        TransformerDims {
            d_model: self.phases,
            heads: self.heads,
            d_k: self.d_k,
            d_ff: self.d_ff,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases < 2 {
            return Err(Error::Config("at least two phases are required".into()));
        }
        if self.spatial_dim == 0 {
            return Err(Error::Config("spatial_dim must be >= 1".into()));
        }
        if self.eps <= 0.0 {
            return Err(Error::Config("layer-norm eps must be > 0".into()));
        }
        self.layer_dims().validate()
    }

    /// Closed-form learnable-scalar count.
    pub fn param_count(&self) -> usize {
        self.phases * self.spatial_dim + 2 * self.layer_dims().param_count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationParams {
    pub config: AggregationConfig,
    /// `phases × spatial_dim`.
    pub w_l: Matrix,
    /// Temporal self-aggregation layer.
    pub layer1: TransformerLayerParams,
    /// Cross layer: query against the aggregated window.
    pub layer2: TransformerLayerParams,
}

impl AggregationParams {
    pub fn init(config: AggregationConfig, rng: &mut ParamRng) -> Result<Self> {
        config.validate()?;
        let w_l = rng.weight(config.phases, config.spatial_dim);
        let mut layer1 = TransformerLayerParams::init(config.layer_dims(), rng)?;
        let mut layer2 = TransformerLayerParams::init(config.layer_dims(), rng)?;
        layer1.eps = config.eps;
        layer2.eps = config.eps;
        Ok(Self {
            config,
            w_l,
            layer1,
            layer2,
        })
    }
}

impl ParamBlocks for AggregationParams {
    fn blocks(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("w_l".to_string(), &self.w_l)];
        out.extend(prefixed("layer1", self.layer1.blocks()));
        out.extend(prefixed("layer2", self.layer2.blocks()));
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = vec![("w_l".to_string(), &mut self.w_l)];
        out.extend(prefixed_mut("layer1", self.layer1.blocks_mut()));
        out.extend(prefixed_mut("layer2", self.layer2.blocks_mut()));
        out
    }
}

pub fn report_param_count(p: &AggregationParams) -> usize {
    p.scalar_count()
}

/// `tanh(W_l l_t)`.
pub fn reduce_query(spatial: &[f64], w_l: &Matrix) -> Result<Vec<f64>> {
    if spatial.len() != w_l.cols() {
        return Err(Error::shape(format!(
            "spatial embedding has width {}, W_l expects {}",
            spatial.len(),
            w_l.cols()
        )));
    }
    Ok((0..w_l.rows())
        .map(|r| dot(w_l.row(r), spatial).tanh())
        .collect())
}

/// Reduces every frame of a `T × spatial_dim` matrix.
pub fn reduce_queries(spatial: &Matrix, w_l: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(spatial.rows(), w_l.rows());
    for t in 0..spatial.rows() {
        let row = reduce_query(spatial.row(t), w_l)?;
        out.row_mut(t).copy_from_slice(&row);
    }
    Ok(out)
}

/// Rows `t+1-n ..= t` of `sequence`, zero rows in front when `t + 1 < n`.
pub fn build_window(sequence: &Matrix, t: usize, n: usize) -> Result<Matrix> {
    if t >= sequence.rows() {
        return Err(Error::Index(format!(
            "frame {t} of a {}-frame sequence",
            sequence.rows()
        )));
    }
    let mut window = Matrix::zeros(n, sequence.cols());
    let available = (t + 1).min(n);
    let first = t + 1 - available;
    for (i, src) in (first..=t).enumerate() {
        window
            .row_mut(n - available + i)
            .copy_from_slice(sequence.row(src));
    }
    Ok(window)
}

/// Every window entry attends to the whole window; one batched call.
pub fn self_aggregate(window: &Matrix, layer1: &TransformerLayerParams) -> Result<Matrix> {
    if window.rows() == 0 {
        return Err(Error::shape("self-aggregation of an empty window"));
    }
    transformer::transformer_layer(window, window, layer1).map(|(out, _)| out)
}

/// Phase distribution for one query row against one key window. With an
/// empty window the cross layer skips attention.
pub fn predict_with_query(query: &[f64], window: &Matrix, p: &AggregationParams) -> Result<Vec<f64>> {
    let n = p.config.phases;
    if query.len() != n || window.cols() != n {
        return Err(Error::shape(format!(
            "query width {} / window width {} for {n} phases",
            query.len(),
            window.cols()
        )));
    }
    let aggregated = if window.rows() > 0 {
        self_aggregate(window, &p.layer1)?
    } else {
        Matrix::zeros(0, n)
    };
    let (out, _) = transformer::transformer_layer(&Matrix::row_vector(query), &aggregated, &p.layer2)?;
    let mut probs = out.into_data();
    softmax_in_place(&mut probs);
    Ok(probs)
}

/// Spatial embedding of frame `t` queries its temporal window.
pub fn predict_frame(spatial: &[f64], window: &Matrix, p: &AggregationParams) -> Result<Vec<f64>> {
    if window.rows() != p.config.window {
        return Err(Error::shape(format!(
            "window has {} rows, model expects {}",
            window.rows(),
            p.config.window
        )));
    }
    let query = reduce_query(spatial, &p.w_l)?;
    predict_with_query(&query, window, p)
}

/// Per-frame outputs of a whole video.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrace {
    /// `T × phases`.
    pub probabilities: Matrix,
    pub labels: Vec<usize>,
    pub latency_ns: Vec<u64>,
}

impl PredictionTrace {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Query and key sources for a video, resolved per mode.
pub(crate) struct ModeInputs {
    pub reduced: Option<Matrix>,
}

impl ModeInputs {
    pub fn prepare(spatial: &Matrix, p: &AggregationParams, mode: QueryKeyMode) -> Result<Self> {
        let reduced = if mode.uses_spatial() {
            Some(reduce_queries(spatial, &p.w_l)?)
        } else {
            None
        };
        Ok(Self { reduced })
    }

    pub fn source<'a>(&'a self, temporal: &'a Matrix, which: EmbeddingSource) -> &'a Matrix {
        match which {
            EmbeddingSource::Spatial => self.reduced.as_ref().expect("reduced spatial embeddings"),
            EmbeddingSource::Temporal => temporal,
        }
    }
}

pub(crate) fn check_video(spatial: &Matrix, temporal: &Matrix, p: &AggregationParams) -> Result<()> {
    if spatial.rows() != temporal.rows() {
        return Err(Error::shape(format!(
            "{} spatial frames but {} temporal frames",
            spatial.rows(),
            temporal.rows()
        )));
    }
    if spatial.cols() != p.config.spatial_dim || temporal.cols() != p.config.phases {
        return Err(Error::shape(format!(
            "embedding widths {}/{} do not match the model ({}/{})",
            spatial.cols(),
            temporal.cols(),
            p.config.spatial_dim,
            p.config.phases
        )));
    }
    Ok(())
}

pub fn predict_video(
    spatial: &Matrix,
    temporal: &Matrix,
    p: &AggregationParams,
    mode: QueryKeyMode,
) -> Result<PredictionTrace> {
    check_video(spatial, temporal, p)?;
    let frames = spatial.rows();
    let inputs = ModeInputs::prepare(spatial, p, mode)?;
    let queries = inputs.source(temporal, mode.query);
    let keys = inputs.source(temporal, mode.key);
    let mut probabilities = Matrix::zeros(frames, p.config.phases);
    let mut latency_ns = Vec::with_capacity(frames);
    for t in 0..frames {
        let start = Instant::now();
        let window = build_window(keys, t, p.config.window)?;
        let probs = predict_with_query(queries.row(t), &window, p)?;
        latency_ns.push(start.elapsed().as_nanos() as u64);
        probabilities.row_mut(t).copy_from_slice(&probs);
    }
    let labels = probabilities.argmax_rows();
    Ok(PredictionTrace {
        probabilities,
        labels,
        latency_ns,
    })
}
