//! Forward paths against the straight-line oracles in `support`.

mod support;

use phaseagg::aggregation::{predict_frame, AggregationConfig, AggregationParams};
use phaseagg::linalg::{Matrix, ParamRng, RngSeed};
use phaseagg::tcn::{extract_temporal, TcnConfig, TcnParams};
use phaseagg::transformer::{transformer_layer, TransformerDims, TransformerLayerParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

#[test]
fn transformer_layer_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dims = TransformerDims {
        d_model: 3,
        heads: 2,
        d_k: 2,
        d_ff: 4,
    };
    let mut p = TransformerLayerParams::init(dims, &mut ParamRng::new(RngSeed(3))).unwrap();
    perturb(&mut p, &mut rng);
    for (m, n) in [(1, 1), (1, 5), (4, 4), (2, 7)] {
        let q = random_rows(&mut rng, m, 3);
        let s = random_rows(&mut rng, n, 3);
        let (out, trace) = transformer_layer(&to_matrix(&q, 3), &to_matrix(&s, 3), &p).unwrap();
        let err = max_diff(&rows(&out), &oracle_layer(&q, &s, &p));
        assert!(err <= TOL, "m={m} n={n}: {err:e}");
        assert_eq!(trace.weights.len(), 2);
    }
    // Empty key set: residual norm and feed-forward only.
    let q = random_rows(&mut rng, 1, 3);
    let (out, _) = transformer_layer(&to_matrix(&q, 3), &Matrix::zeros(0, 3), &p).unwrap();
    assert!(max_diff(&rows(&out), &oracle_layer(&q, &[], &p)) <= TOL);
}

#[test]
fn extract_temporal_matches_oracle() {
    for softmax in [false, true] {
        let cfg = TcnConfig {
            spatial_dim: 5,
            reduced_dim: 4,
            stages: 2,
            layers_per_stage: 2,
            kernel_size: 2,
            hidden_channels: 3,
            out_dim: 2,
            softmax_between_stages: softmax,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut p = TcnParams::init(cfg, &mut ParamRng::new(RngSeed(4))).unwrap();
        perturb(&mut p, &mut rng);
        let frames = random_rows(&mut rng, 6, 5);
        let got = extract_temporal(&to_matrix(&frames, 5), &p).unwrap().into_embeddings();
        let err = max_diff(&rows(&got), &oracle_tcn(&frames, &p));
        assert!(err <= TOL, "softmax={softmax}: {err:e}");
    }
}

#[test]
fn predict_frame_matches_oracle() {
    for window in [4, 1, 0] {
        let cfg = AggregationConfig {
            phases: 3,
            spatial_dim: 5,
            heads: 2,
            d_k: 2,
            d_ff: 4,
            window,
            eps: 1e-5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13 + window as u64);
        let mut p = AggregationParams::init(cfg, &mut ParamRng::new(RngSeed(5))).unwrap();
        perturb(&mut p, &mut rng);
        for _ in 0..5 {
            let spatial: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let win = random_rows(&mut rng, window, 3);
            let got = predict_frame(&spatial, &to_matrix(&win, 3), &p).unwrap();
            let err = max_diff(std::slice::from_ref(&got), &[oracle_predict(&spatial, &win, &p)]);
            assert!(err <= TOL, "window={window}: {err:e}");
            assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
