//! Post-norm Transformer layer: multi-head attention of a query block against
//! a key/value sequence, then a two-layer ReLU feed-forward block. Both
//! sub-blocks use residual addition followed by layer normalization.
//!
//! Rows are positions. Per-head projections are stored stacked: head `h` owns
//! rows `h*d_k .. (h+1)*d_k` of `wq`, `wk` and `wv`.

use crate::error::{Error, Result};
use crate::linalg::{
    layer_norm_backward, layer_norm_cached, softmax_backward_in_place, softmax_in_place,
    LayerNormCache, Matrix, ParamRng, LAYER_NORM_EPS,
};
use crate::params::ParamBlocks;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerDims {
    pub d_model: usize,
    pub heads: usize,
    pub d_k: usize,
    pub d_ff: usize,
}

impl TransformerDims {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_k == 0 || self.d_ff == 0 {
            return Err(Error::Config(format!(
                "transformer dims must all be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Learnable scalars in one layer.
    pub fn param_count(&self) -> usize {
        let hk = self.heads * self.d_k;
        let attention = 3 * hk * self.d_model + self.d_model * hk;
        let ff = self.d_ff * self.d_model + self.d_ff + self.d_model * self.d_ff + self.d_model;
        let norms = 4 * self.d_model;
        attention + ff + norms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayerParams {
    pub dims: TransformerDims,
    pub eps: f64,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
}

impl TransformerLayerParams {
    pub fn init(dims: TransformerDims, rng: &mut ParamRng) -> Result<Self> {
        dims.validate()?;
        let hk = dims.heads * dims.d_k;
        let d = dims.d_model;
        Ok(Self {
            dims,
            eps: LAYER_NORM_EPS,
            wq: rng.weight(hk, d),
            wk: rng.weight(hk, d),
            wv: rng.weight(hk, d),
            wo: rng.weight(d, hk),
            w1: rng.weight(dims.d_ff, d),
            b1: Matrix::zeros(1, dims.d_ff),
            w2: rng.weight(d, dims.d_ff),
            b2: Matrix::zeros(1, d),
            ln1_gain: Matrix::filled(1, d, 1.0),
            ln1_bias: Matrix::zeros(1, d),
            ln2_gain: Matrix::filled(1, d, 1.0),
            ln2_bias: Matrix::zeros(1, d),
        })
    }

    /// Query, key and value maps of one head, each `d_k × d_model`.
    pub fn head_projections(&self, head: usize) -> (Matrix, Matrix, Matrix) {
        let dk = self.dims.d_k;
        let rows = head * dk..(head + 1) * dk;
        (
            self.wq.slice_rows(rows.start, rows.end),
            self.wk.slice_rows(rows.start, rows.end),
            self.wv.slice_rows(rows.start, rows.end),
        )
    }

    fn check_inputs(&self, q: &Matrix, s: &Matrix) -> Result<()> {
        let d = self.dims.d_model;
        if q.cols() != d || s.cols() != d {
            return Err(Error::shape(format!(
                "transformer layer with d_model={d} given query {}x{} and sequence {}x{}",
                q.rows(),
                q.cols(),
                s.rows(),
                s.cols()
            )));
        }
        if q.rows() == 0 {
            return Err(Error::shape("transformer layer needs at least one query row"));
        }
        Ok(())
    }
}

impl ParamBlocks for TransformerLayerParams {
    fn blocks(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("wq".into(), &self.wq),
            ("wk".into(), &self.wk),
            ("wv".into(), &self.wv),
            ("wo".into(), &self.wo),
            ("ff.w1".into(), &self.w1),
            ("ff.b1".into(), &self.b1),
            ("ff.w2".into(), &self.w2),
            ("ff.b2".into(), &self.b2),
            ("ln1.gain".into(), &self.ln1_gain),
            ("ln1.bias".into(), &self.ln1_bias),
            ("ln2.gain".into(), &self.ln2_gain),
            ("ln2.bias".into(), &self.ln2_bias),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        vec![
            ("wq".into(), &mut self.wq),
            ("wk".into(), &mut self.wk),
            ("wv".into(), &mut self.wv),
            ("wo".into(), &mut self.wo),
            ("ff.w1".into(), &mut self.w1),
            ("ff.b1".into(), &mut self.b1),
            ("ff.w2".into(), &mut self.w2),
            ("ff.b2".into(), &mut self.b2),
            ("ln1.gain".into(), &mut self.ln1_gain),
            ("ln1.bias".into(), &mut self.ln1_bias),
            ("ln2.gain".into(), &mut self.ln2_gain),
            ("ln2.bias".into(), &mut self.ln2_bias),
        ]
    }
}

/// Per-head attention weights (queries × keys) plus the layer output.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub weights: Vec<Matrix>,
    pub output: Matrix,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct LayerCache {
    q: Matrix,
    s: Matrix,
    q_proj: Matrix,
    k_proj: Matrix,
    v_proj: Matrix,
    attn: Vec<Matrix>,
    concat: Matrix,
    ln1: LayerNormCache,
    out1: Matrix,
    ff_pre: Matrix,
    ff_act: Matrix,
    ln2: LayerNormCache,
}

impl LayerCache {
    pub fn attention_weights(&self) -> &[Matrix] {
        &self.attn
    }

    pub fn attention_skipped(&self) -> bool {
        self.s.rows() == 0
    }
}

/// Scaled dot-product attention for one head: `softmax(Q Kᵀ / √d_k) V` with
/// `Q = q W_qᵀ`, `K = s W_kᵀ`, `V = s W_vᵀ`. Returns `m × d_k`.
pub fn attend_head(q: &Matrix, s: &Matrix, p: &TransformerLayerParams, head: usize) -> Result<Matrix> {
    p.check_inputs(q, s)?;
    if head >= p.dims.heads {
        return Err(Error::Index(format!("head {head} of {}", p.dims.heads)));
    }
    if s.rows() == 0 {
        return Err(Error::shape("attention over an empty key sequence"));
    }
    let (wq, wk, wv) = p.head_projections(head);
    let qp = q.matmul_t(&wq)?;
    let kp = s.matmul_t(&wk)?;
    let vp = s.matmul_t(&wv)?;
    let attn = head_weights(&qp, &kp, 0, p.dims.d_k);
    attn.matmul(&vp)
}

/// Attention rows of one head, read from stacked projections.
fn head_weights(q_proj: &Matrix, k_proj: &Matrix, head: usize, d_k: usize) -> Matrix {
    let (m, n) = (q_proj.rows(), k_proj.rows());
    let offset = head * d_k;
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut scores = Matrix::zeros(m, n);
    for i in 0..m {
        let qi = &q_proj.row(i)[offset..offset + d_k];
        let row = scores.row_mut(i);
        for (j, score) in row.iter_mut().enumerate() {
            let kj = &k_proj.row(j)[offset..offset + d_k];
            let mut acc = 0.0;
            for (a, b) in qi.iter().zip(kj) {
                acc += a * b;
            }
            *score = acc * scale;
        }
        softmax_in_place(row);
    }
    scores
}

pub fn transformer_layer(
    q: &Matrix,
    s: &Matrix,
    p: &TransformerLayerParams,
) -> Result<(Matrix, AttentionTrace)> {
    let (out, cache) = forward(q, s, p)?;
    let trace = AttentionTrace {
        weights: cache.attn,
        output: out.clone(),
    };
    Ok((out, trace))
}

/// Forward pass keeping intermediates. An empty key sequence skips the
/// attention sub-block: the query goes straight into the first residual norm.
pub fn forward(q: &Matrix, s: &Matrix, p: &TransformerLayerParams) -> Result<(Matrix, LayerCache)> {
    p.check_inputs(q, s)?;
    let TransformerDims {
        heads, d_k, d_model, ..
    } = p.dims;
    let (m, n) = (q.rows(), s.rows());
    let hk = heads * d_k;

    let q_proj = q.matmul_t(&p.wq)?;
    let (k_proj, v_proj) = if n > 0 {
        (s.matmul_t(&p.wk)?, s.matmul_t(&p.wv)?)
    } else {
        (Matrix::zeros(0, hk), Matrix::zeros(0, hk))
    };

    let mut residual = q.clone();
    let mut attn = Vec::with_capacity(heads);
    let mut concat = Matrix::zeros(m, hk);
    if n > 0 {
        for h in 0..heads {
            let a = head_weights(&q_proj, &k_proj, h, d_k);
            let offset = h * d_k;
            for i in 0..m {
                let out_row = &mut concat.row_mut(i)[offset..offset + d_k];
                for (j, &w) in a.row(i).iter().enumerate() {
                    let vj = &v_proj.row(j)[offset..offset + d_k];
                    for (o, v) in out_row.iter_mut().zip(vj) {
                        *o += w * v;
                    }
                }
            }
            attn.push(a);
        }
        residual.add_assign(&concat.matmul_t(&p.wo)?)?;
    }
    let (out1, ln1) = layer_norm_cached(&residual, &p.ln1_gain, &p.ln1_bias, p.eps)?;

    let mut ff_pre = out1.matmul_t(&p.w1)?;
    ff_pre.add_row_broadcast(&p.b1)?;
    let ff_act = ff_pre.map(|v| v.max(0.0));
    let mut ff_out = ff_act.matmul_t(&p.w2)?;
    ff_out.add_row_broadcast(&p.b2)?;
    let residual2 = out1.add(&ff_out)?;
    let (out, ln2) = layer_norm_cached(&residual2, &p.ln2_gain, &p.ln2_bias, p.eps)?;
    debug_assert_eq!(out.cols(), d_model);

    Ok((
        out,
        LayerCache {
            q: q.clone(),
            s: s.clone(),
            q_proj,
            k_proj,
            v_proj,
            attn,
            concat,
            ln1,
            out1,
            ff_pre,
            ff_act,
            ln2,
        },
    ))
}

/// Backward pass. Adds parameter gradients into `grads` and returns
/// `(d_query, d_sequence)`.
pub fn backward(
    d_out: &Matrix,
    cache: &LayerCache,
    p: &TransformerLayerParams,
    grads: &mut TransformerLayerParams,
) -> Result<(Matrix, Matrix)> {
    let TransformerDims { heads, d_k, .. } = p.dims;
    let (m, n) = (cache.q.rows(), cache.s.rows());

    let (d_res2, dg2, db2) = layer_norm_backward(&cache.ln2, &p.ln2_gain, d_out);
    grads.ln2_gain.add_assign(&dg2)?;
    grads.ln2_bias.add_assign(&db2)?;

    let mut d_out1 = d_res2.clone();
    let d_ff_out = &d_res2;
    grads.w2.add_assign(&d_ff_out.t_matmul(&cache.ff_act)?)?;
    grads.b2.add_assign(&d_ff_out.sum_rows())?;
    let mut d_pre = d_ff_out.matmul(&p.w2)?;
    for (d, &pre) in d_pre.data_mut().iter_mut().zip(cache.ff_pre.data()) {
        if pre <= 0.0 {
            *d = 0.0;
        }
    }
    grads.w1.add_assign(&d_pre.t_matmul(&cache.out1)?)?;
    grads.b1.add_assign(&d_pre.sum_rows())?;
    d_out1.add_assign(&d_pre.matmul(&p.w1)?)?;

    let (d_res1, dg1, db1) = layer_norm_backward(&cache.ln1, &p.ln1_gain, &d_out1);
    grads.ln1_gain.add_assign(&dg1)?;
    grads.ln1_bias.add_assign(&db1)?;

    let mut d_q = d_res1.clone();
    let mut d_s = Matrix::zeros(n, cache.s.cols());
    if n == 0 {
        return Ok((d_q, d_s));
    }

    grads.wo.add_assign(&d_res1.t_matmul(&cache.concat)?)?;
    let d_concat = d_res1.matmul(&p.wo)?;

    let hk = heads * d_k;
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut d_qp = Matrix::zeros(m, hk);
    let mut d_kp = Matrix::zeros(n, hk);
    let mut d_vp = Matrix::zeros(n, hk);
    let mut d_a = vec![0.0; n];
    let mut d_scores = vec![0.0; n];
    for h in 0..heads {
        let offset = h * d_k;
        let a = &cache.attn[h];
        for i in 0..m {
            let d_head = &d_concat.row(i)[offset..offset + d_k];
            let a_row = a.row(i);
            for j in 0..n {
                let vj = &cache.v_proj.row(j)[offset..offset + d_k];
                d_a[j] = d_head.iter().zip(vj).map(|(x, y)| x * y).sum();
                let dv = &mut d_vp.row_mut(j)[offset..offset + d_k];
                for (o, &dh) in dv.iter_mut().zip(d_head) {
                    *o += a_row[j] * dh;
                }
            }
            softmax_backward_in_place(a_row, &d_a, &mut d_scores);
            let qi = cache.q_proj.row(i)[offset..offset + d_k].to_vec();
            for j in 0..n {
                let ds = d_scores[j] * scale;
                if ds == 0.0 {
                    continue;
                }
                let kj = cache.k_proj.row(j)[offset..offset + d_k].to_vec();
                let dq = &mut d_qp.row_mut(i)[offset..offset + d_k];
                for (o, k) in dq.iter_mut().zip(&kj) {
                    *o += ds * k;
                }
                let dk = &mut d_kp.row_mut(j)[offset..offset + d_k];
                for (o, q) in dk.iter_mut().zip(&qi) {
                    *o += ds * q;
                }
            }
        }
    }

    grads.wq.add_assign(&d_qp.t_matmul(&cache.q)?)?;
    grads.wk.add_assign(&d_kp.t_matmul(&cache.s)?)?;
    grads.wv.add_assign(&d_vp.t_matmul(&cache.s)?)?;
    d_q.add_assign(&d_qp.matmul(&p.wq)?)?;
    d_s.add_assign(&d_kp.matmul(&p.wk)?)?;
    d_s.add_assign(&d_vp.matmul(&p.wv)?)?;
    Ok((d_q, d_s))
}
