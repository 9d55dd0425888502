mod common;

use common::{attention_oracle, rng};
use mcgaec::attention::*;
use mcgaec::backbone::{WeightFile, WeightTensor};
use mcgaec::Error;
use proptest::prelude::*;
use rand::Rng;

fn random_tokens(r: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> TokenMatrix {
    TokenMatrix::from_rows(rows.to_vec()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
}

#[test]
fn hand_two_by_two() {
    let x = matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let (w, v) = attention_weights(&x, &AttentionParams::identity(2)).unwrap();
    let e = (0.5f64).sqrt().exp();
    let (hi, lo) = (e / (e + 1.0), 1.0 / (e + 1.0));
    assert!((hi - 0.6698).abs() < 1e-4 && (lo - 0.3302).abs() < 1e-4);
    assert!(close(w.row(0), &[hi, lo], 1e-12));
    assert!(close(w.row(1), &[lo, hi], 1e-12));
    assert_eq!(v, x);
    let out = self_attention(&x, &AttentionParams::identity(2)).unwrap();
    assert!(close(out.row(0), &[hi, lo], 1e-12));
}

#[test]
fn matches_loop_oracle_with_and_without_projections() {
    let mut r = rng(21);
    for _ in 0..30 {
        let (n, d) = (r.random_range(1..=5), r.random_range(1..=6));
        let x = random_tokens(&mut r, n, d);
        let (w_ref, out_ref) = attention_oracle(&x, None, d);
        let (w, _) = attention_weights(&matrix(&x), &AttentionParams::identity(d)).unwrap();
        let out = self_attention(&matrix(&x), &AttentionParams::identity(d)).unwrap();
        for i in 0..n {
            assert!(close(w.row(i), &w_ref[i], 1e-12));
            assert!(close(out.row(i), &out_ref[i], 1e-12));
        }

        let mats: Vec<Vec<f64>> = (0..3).map(|_| (0..d * d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let params = AttentionParams {
            w_q: TokenMatrix::new(d, d, mats[0].clone()).unwrap(),
            w_k: TokenMatrix::new(d, d, mats[1].clone()).unwrap(),
            w_v: TokenMatrix::new(d, d, mats[2].clone()).unwrap(),
            d_head: d,
        };
        let (_, out_ref) = attention_oracle(&x, Some((&mats[0], &mats[1], &mats[2])), d);
        let out = self_attention(&matrix(&x), &params).unwrap();
        for i in 0..n {
            assert!(close(out.row(i), &out_ref[i], 1e-9));
        }
    }
}

#[test]
fn single_token_returns_its_value() {
    let x = matrix(&[vec![0.3, -7.0, 12.5]]);
    let (w, _) = attention_weights(&x, &AttentionParams::identity(3)).unwrap();
    assert_eq!(w.data(), &[1.0]);
    assert_eq!(self_attention(&x, &AttentionParams::identity(3)).unwrap(), x);
}

#[test]
fn identical_tokens_get_uniform_weights() {
    let row = vec![0.2, 0.9, -0.4, 1.5];
    let x = matrix(&vec![row.clone(); 4]);
    let (w, _) = attention_weights(&x, &AttentionParams::identity(4)).unwrap();
    assert!(w.data().iter().all(|v| (v - 0.25).abs() < 1e-12));
    let out = self_attention(&x, &AttentionParams::identity(4)).unwrap();
    for i in 0..4 {
        assert!(close(out.row(i), &row, 1e-12));
    }
}

#[test]
fn invalid_inputs() {
    let x = matrix(&[vec![1.0, 2.0]]);
    assert!(matches!(self_attention(&x, &AttentionParams::identity(3)), Err(Error::DimensionMismatch(_))));
    assert!(matches!(TokenMatrix::new(1, 2, vec![1.0, f64::INFINITY]), Err(Error::NonFiniteInput)));
    assert!(TokenMatrix::from_rows(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    let mut p = AttentionParams::identity(2);
    p.d_head = 0;
    assert!(self_attention(&x, &p).is_err());
}

#[test]
fn path_fuse_layout() {
    let b = matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
    let a = matrix(&[vec![5.0, 6.0], vec![7.0, 8.0]]);
    let e = path_fuse(PathId::GrayOct, &b, &a).unwrap();
    assert_eq!(e.values, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    assert!(path_fuse(PathId::GrayOct, &b, &matrix(&[vec![1.0, 2.0]])).is_err());
}

#[test]
fn global_fuse_orders_paths_canonically() {
    let emb = |p, v: f64, n| PathEmbedding { path: p, values: vec![v; n] };
    let fused = global_fuse(vec![emb(PathId::GrayOct, 3.0, 2), emb(PathId::YCbCrFundus, 2.0, 4)]).unwrap();
    assert_eq!(fused.blocks, vec![(PathId::YCbCrFundus, 0, 4), (PathId::GrayOct, 4, 2)]);
    assert_eq!(fused.values, vec![2.0, 2.0, 2.0, 2.0, 3.0, 3.0]);

    let all = global_fuse(vec![emb(PathId::GrayOct, 3.0, 1), emb(PathId::HsvFundus, 1.0, 1), emb(PathId::YCbCrFundus, 2.0, 1)]).unwrap();
    assert_eq!(all.values, vec![1.0, 2.0, 3.0]);
    assert!(matches!(global_fuse(vec![]), Err(Error::EmptyPathList)));
    assert!(matches!(
        global_fuse(vec![emb(PathId::HsvFundus, 1.0, 1), emb(PathId::HsvFundus, 1.0, 1)]),
        Err(Error::DuplicatePath(_))
    ));
}

#[test]
fn projections_load_from_weight_file() {
    let d = 3;
    let lin = |name: &str, s: f32| WeightTensor::linear(name, d, d, (0..d * d).map(|i| s * i as f32).collect(), None);
    let wf = WeightFile {
        topology: "TinyCNN".into(),
        norm_mean: vec![0.5; 3],
        norm_std: vec![0.25; 3],
        layers: vec![lin("wq", 0.1), lin("wk", -0.2), lin("wv", 0.3)],
    };
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("attn.mcgw");
    wf.write(&p).unwrap();
    let params = AttentionParams::load(&p).unwrap();
    assert_eq!(params.d_head, 3);
    assert!((params.w_k.get(1, 2) - f64::from(-0.2f32 * 5.0)).abs() < 1e-12);

    let mut missing = wf.clone();
    missing.layers.pop();
    assert!(AttentionParams::from_weight_file(&missing).is_err());
}

fn tokens_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6, 1usize..6).prop_flat_map(|(n, d)| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), n))
}

proptest! {
    #[test]
    fn weights_are_row_stochastic(x in tokens_strategy()) {
        let d = x[0].len();
        let (w, _) = attention_weights(&matrix(&x), &AttentionParams::identity(d)).unwrap();
        for i in 0..w.rows() {
            prop_assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(w.row(i).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn permutation_equivariance(x in tokens_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let d = x[0].len();
        let mut perm: Vec<usize> = (0..x.len()).collect();
        perm.shuffle(&mut rng(seed));
        let px: Vec<Vec<f64>> = perm.iter().map(|&i| x[i].clone()).collect();
        let out = self_attention(&matrix(&x), &AttentionParams::identity(d)).unwrap();
        let pout = self_attention(&matrix(&px), &AttentionParams::identity(d)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!(close(pout.row(k), out.row(i), 1e-9));
        }
    }

    #[test]
    fn outputs_lie_in_token_hull(x in tokens_strategy()) {
        let d = x[0].len();
        let out = self_attention(&matrix(&x), &AttentionParams::identity(d)).unwrap();
        for c in 0..d {
            let lo = x.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
            let hi = x.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
            for i in 0..x.len() {
                prop_assert!(out.get(i, c) >= lo - 1e-9 && out.get(i, c) <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn softmax_shift_invariance(row in prop::collection::vec(-50.0f64..50.0, 1..8), shift in -100.0f64..100.0) {
        let a = softmax_rows(&TokenMatrix::new(1, row.len(), row.clone()).unwrap()).unwrap();
        let shifted: Vec<f64> = row.iter().map(|v| v + shift).collect();
        let b = softmax_rows(&TokenMatrix::new(1, row.len(), shifted).unwrap()).unwrap();
        prop_assert!(close(a.data(), b.data(), 1e-12));
    }
}
