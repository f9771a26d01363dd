//! Straight-line re-implementations of the forward paths. They use nested
//! loops over plain vectors and share no code with the library beyond
//! reading parameter values.
#![allow(dead_code, clippy::needless_range_loop)]

use phaseagg::aggregation::AggregationParams;
use phaseagg::linalg::Matrix;
use phaseagg::params::ParamBlocks;
use phaseagg::tcn::TcnParams;
use phaseagg::transformer::{TransformerDims, TransformerLayerParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-10;

pub type Rows = Vec<Vec<f64>>;

pub fn rows(m: &Matrix) -> Rows {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn random_rows(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Rows {
    (0..r).map(|_| (0..c).map(|_| rng.random_range(-1.5..1.5)).collect()).collect()
}

pub fn to_matrix(r: &Rows, cols: usize) -> Matrix {
    Matrix::from_vec(r.len(), cols, r.iter().flatten().copied().collect()).unwrap()
}

/// Nonzero biases and non-unit gains so every parameter matters.
pub fn perturb<P: ParamBlocks>(p: &mut P, rng: &mut ChaCha8Rng) {
    for (_, m) in p.blocks_mut() {
        for v in m.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

pub fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(u, v)| (u - v).abs())
        })
        .fold(0.0, f64::max)
}

pub fn oracle_layer_norm(x: &[f64], gain: &Matrix, bias: &Matrix, eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mut mean = 0.0;
    for v in x {
        mean += v;
    }
    mean /= n;
    let mut var = 0.0;
    for v in x {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    let mut out = vec![0.0; x.len()];
    for c in 0..x.len() {
        out[c] = (x[c] - mean) / (var + eps).sqrt() * gain.get(0, c) + bias.get(0, c);
    }
    out
}

/// Multi-head attention with per-head projections, output projection,
/// two residual norms and a ReLU feed-forward, one query row at a time.
pub fn oracle_layer(q: &[Vec<f64>], s: &[Vec<f64>], p: &TransformerLayerParams) -> Rows {
    let TransformerDims {
        d_model: d,
        heads,
        d_k,
        d_ff,
    } = p.dims;
    let mut outputs = Vec::new();
    for qi in q {
        let mut residual = qi.clone();
        if !s.is_empty() {
            let mut concat = vec![0.0; heads * d_k];
            for h in 0..heads {
                let project = |w: &Matrix, x: &[f64], k: usize| {
                    let mut acc = 0.0;
                    for c in 0..d {
                        acc += w.get(h * d_k + k, c) * x[c];
                    }
                    acc
                };
                let mut scores = vec![0.0; s.len()];
                for (j, sj) in s.iter().enumerate() {
                    let mut acc = 0.0;
                    for k in 0..d_k {
                        acc += project(&p.wq, qi, k) * project(&p.wk, sj, k);
                    }
                    scores[j] = acc / (d_k as f64).sqrt();
                }
                let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|v| (v - top).exp()).sum();
                for (j, sj) in s.iter().enumerate() {
                    let a = (scores[j] - top).exp() / z;
                    for k in 0..d_k {
                        concat[h * d_k + k] += a * project(&p.wv, sj, k);
                    }
                }
            }
            for o in 0..d {
                for u in 0..heads * d_k {
                    residual[o] += p.wo.get(o, u) * concat[u];
                }
            }
        }
        let out1 = oracle_layer_norm(&residual, &p.ln1_gain, &p.ln1_bias, p.eps);
        let mut hidden = vec![0.0; d_ff];
        for f in 0..d_ff {
            let mut acc = p.b1.get(0, f);
            for c in 0..d {
                acc += p.w1.get(f, c) * out1[c];
            }
            hidden[f] = acc.max(0.0);
        }
        let mut res2 = out1.clone();
        for c in 0..d {
            res2[c] += p.b2.get(0, c);
            for f in 0..d_ff {
                res2[c] += p.w2.get(c, f) * hidden[f];
            }
        }
        outputs.push(oracle_layer_norm(&res2, &p.ln2_gain, &p.ln2_bias, p.eps));
    }
    outputs
}

/// Reduction, then per stage: input projection, residual dilated blocks
/// with zero history before frame 0, output projection.
pub fn oracle_tcn(frames: &Rows, p: &TcnParams) -> Rows {
    let cfg = p.config;
    let (c, k) = (cfg.hidden_channels, cfg.kernel_size);
    let affine = |w: &Matrix, b: &Matrix, x: &[f64]| -> Vec<f64> {
        (0..w.rows())
            .map(|r| {
                let mut acc = b.get(0, r);
                for (i, v) in x.iter().enumerate() {
                    acc += w.get(r, i) * v;
                }
                acc
            })
            .collect()
    };
    let mut input: Rows = frames.iter().map(|f| affine(&p.reduce_w, &p.reduce_b, f)).collect();
    let mut last = Vec::new();
    for (s, stage) in p.stages.iter().enumerate() {
        let mut h: Rows = input.iter().map(|x| affine(&stage.in_w, &stage.in_b, x)).collect();
        for (l, layer) in stage.layers.iter().enumerate() {
            let dilation = 1usize << l;
            let mut next = h.clone();
            for t in 0..h.len() {
                let mut act = vec![0.0; c];
                for o in 0..c {
                    let mut acc = layer.conv_b.get(0, o);
                    for j in 0..k {
                        let back = (k - 1 - j) * dilation;
                        if t >= back {
                            for i in 0..c {
                                acc += layer.conv_w.get(o, j * c + i) * h[t - back][i];
                            }
                        }
                    }
                    act[o] = acc.max(0.0);
                }
                let mixed = affine(&layer.mix_w, &layer.mix_b, &act);
                for o in 0..c {
                    next[t][o] = h[t][o] + mixed[o];
                }
            }
            h = next;
        }
        last = h.iter().map(|x| affine(&stage.out_w, &stage.out_b, x)).collect();
        input = if cfg.softmax_between_stages && s + 1 < cfg.stages {
            last.iter()
                .map(|row| {
                    let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|v| (v - top).exp()).sum();
                    row.iter().map(|v| (v - top).exp() / z).collect()
                })
                .collect()
        } else {
            last.clone()
        };
    }
    last
}

/// tanh-reduced query, window self-aggregation, cross layer, softmax.
pub fn oracle_predict(spatial: &[f64], window: &Rows, p: &AggregationParams) -> Vec<f64> {
    let n = p.config.phases;
    let mut query = vec![0.0; n];
    for (r, q) in query.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, v) in spatial.iter().enumerate() {
            acc += p.w_l.get(r, i) * v;
        }
        *q = acc.tanh();
    }
    let aggregated = if window.is_empty() {
        Vec::new()
    } else {
        oracle_layer(window, window, &p.layer1)
    };
    let out = oracle_layer(&[query], &aggregated, &p.layer2).remove(0);
    let top = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = out.iter().map(|v| (v - top).exp()).sum();
    out.iter().map(|v| (v - top).exp() / z).collect()
}

