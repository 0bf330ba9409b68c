use ggplds::forecast::rollout_forecast;
use ggplds::ggp::{community_strength, decompose, reorder};
use ggplds::model::{init_random, validate_state};
use ggplds::persist::{deserialize, serialize};
use ggplds::{Hyperparameters, ObservationKind, PosteriorSample, RngStream};
use proptest::prelude::*;

fn kind(nb: bool) -> ObservationKind {
    if nb {
        ObservationKind::NegativeBinomial
    } else {
        ObservationKind::Gaussian
    }
}

fn small_state(seed: u64, k: usize, s: usize, v: usize, nb: bool) -> (Hyperparameters, PosteriorSample) {
    let hyper = Hyperparameters::new(v, kind(nb)).with_truncation(k, s);
    let mut rng = RngStream::new(seed, 0);
    let st = init_random(&hyper, (v, 6), &mut rng);
    (hyper, PosteriorSample::new(st, 0, 0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prior_states_are_valid(seed in any::<u64>(), k in 1usize..5, s in 1usize..6, v in 1usize..4, nb: bool) {
        let (_, sample) = small_state(seed, k, s, v, nb);
        prop_assert!(validate_state(sample.state()).is_empty());
    }

    #[test]
    fn strengths_partition_unity(seed in any::<u64>(), k in 1usize..6, s in 1usize..6) {
        let (_, sample) = small_state(seed, k, s, 2, false);
        let a = community_strength(sample.ggp()).unwrap();
        prop_assert_eq!(a.len(), k);
        let total = a.iter().fold(ggplds::nalgebra::DMatrix::zeros(s, s), |acc, m| acc + m);
        prop_assert!(total.iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn sub_sequences_add_up(seed in any::<u64>(), k in 1usize..5, s in 1usize..6, v in 1usize..4) {
        let (_, sample) = small_state(seed, k, s, v, false);
        let st = sample.state();
        let a = community_strength(&st.ggp).unwrap();
        let dec = decompose(&st.traj, &st.trans, &st.obs, &a).unwrap();
        let direct = &st.trans.masked() * st.traj.lagged();
        let scale = direct.abs().max().max(1.0);
        prop_assert!((dec.superposition_x() - direct).abs().max() / scale < 1e-10);
    }

    #[test]
    fn reorder_is_a_permutation(seed in any::<u64>(), k in 1usize..5, s in 1usize..6) {
        let (_, sample) = small_state(seed, k, s, 2, false);
        let r = reorder(&sample.trans().m_split, s, k).unwrap();
        for perm in [&r.row_perm, &r.col_perm] {
            let mut p = perm.clone();
            p.sort_unstable();
            prop_assert_eq!(p, (0..s).collect::<Vec<_>>());
        }
        let mut ranks = r.community_rank.clone();
        ranks.sort_unstable();
        prop_assert_eq!(ranks, (0..k).collect::<Vec<_>>());
    }

    #[test]
    fn persistence_roundtrip(seed in any::<u64>(), k in 1usize..4, s in 1usize..5, v in 1usize..4, nb: bool) {
        let (hyper, sample) = small_state(seed, k, s, v, nb);
        let doc = serialize(&sample, &hyper);
        let (back, h) = deserialize(&doc).unwrap();
        prop_assert_eq!(back, sample);
        prop_assert_eq!(h, hyper);
    }

    #[test]
    fn rollout_has_requested_shape(seed in any::<u64>(), h in 1usize..8, nb: bool) {
        let (_, sample) = small_state(seed, 2, 3, 2, nb);
        let r = rollout_forecast(&sample, h).unwrap();
        prop_assert_eq!(r.y.shape(), (2, h));
        prop_assert_eq!(r.x.shape(), (3, h));
    }
}
