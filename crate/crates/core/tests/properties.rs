//! Property tests for the numeric-core contracts.

use csnc_core::loss::{CurriculumState, LossConfig, TUpdate};
use csnc_core::ops::{conv1d, conv1d_out_len, cosine_similarity, l2_normalize};
use csnc_core::tensor::Tensor;
use proptest::prelude::*;

fn finite_vec(len: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, len)
}

proptest! {
    #[test]
    fn l2_normalize_output_norm_in_unit_interval(v in finite_vec(6, -100.0, 100.0)) {
        let t = Tensor::from_vec(v.clone()).unwrap();
        let out = l2_normalize(&t, 1e-12);
        let norm = out.norm();
        prop_assert!(norm <= 1.0 + 1e-12);
        if t.norm() >= 1.0 {
            prop_assert!((norm - 1.0).abs() <= 1e-12);
        }
        if t.norm() > 0.0 {
            prop_assert!(norm > 0.0);
        }
    }

    #[test]
    fn cosine_similarity_is_symmetric_and_scale_invariant(
        a in finite_vec(5, -10.0, 10.0),
        b in finite_vec(5, -10.0, 10.0),
        lambda in 0.001f64..1000.0,
    ) {
        let ta = Tensor::from_vec(a.clone()).unwrap();
        let tb = Tensor::from_vec(b.clone()).unwrap();
        prop_assume!(ta.norm() > 1e-6 && tb.norm() > 1e-6);
        let ab = cosine_similarity(&ta, &tb).unwrap();
        let ba = cosine_similarity(&tb, &ta).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
        let scaled = Tensor::from_vec(a.iter().map(|x| x * lambda).collect()).unwrap();
        let ab_scaled = cosine_similarity(&scaled, &tb).unwrap();
        prop_assert!((ab - ab_scaled).abs() <= 1e-12);
    }

    #[test]
    fn conv1d_output_length_formula(
        in_len in 1usize..64,
        kernel_len in 1usize..10,
        stride in 1usize..4,
    ) {
        prop_assume!(kernel_len <= in_len);
        let x = Tensor::zeros(vec![1, in_len]);
        let k = Tensor::zeros(vec![2, kernel_len]);
        let out = conv1d(&x, &k, stride).unwrap();
        prop_assert_eq!(out.dim(2), conv1d_out_len(in_len, kernel_len, stride));
        prop_assert_eq!(out.dim(2), (in_len - kernel_len) / stride + 1);
    }

    #[test]
    fn curriculum_t_stays_in_the_hull_of_r_history(
        rs in prop::collection::vec(0.0f64..1.0, 1..80),
        use_ema in any::<bool>(),
    ) {
        let cfg = LossConfig {
            t_update: if use_ema { TUpdate::Ema } else { TUpdate::Fast },
            ..LossConfig::default()
        };
        let mut state = CurriculumState::default();
        let mut hi = 0.0f64;
        for &r in &rs {
            state = state.updated(r, &cfg);
            hi = hi.max(r);
            prop_assert!(state.t >= 0.0);
            prop_assert!(state.t <= hi + 1e-12);
        }
        prop_assert_eq!(state.batch_index, rs.len() as u64);
    }
}
