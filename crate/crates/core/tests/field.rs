//! Cosine, mask and prefix-sum properties of the correspondence field.

use orf_core::correspondence::{build_field, cosine, neighborhood, CorrespondenceField};
use orf_core::scenario::{generate_scenario, ScenarioSpec};
use orf_core::HyperParams;
use proptest::prelude::*;

fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..12).prop_flat_map(|d| {
        (
            prop::collection::vec(-10.0f64..10.0, d),
            prop::collection::vec(-10.0f64..10.0, d),
        )
    })
}

fn field_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<bool>)> {
    (1usize..8, 1usize..16).prop_flat_map(|(f, n)| {
        (
            Just(f),
            Just(n),
            prop::collection::vec(-1.0f64..=1.0, f * n),
            prop::collection::vec(any::<bool>(), f * n),
        )
    })
}

proptest! {
    #[test]
    fn cosine_symmetric_and_bounded((u, v) in vec_pair()) {
        let c = cosine(&u, &v);
        prop_assert_eq!(c, cosine(&v, &u));
        prop_assert!((-1.0..=1.0).contains(&c));
    }

    #[test]
    fn cosine_scale_invariant((u, v) in vec_pair(), scale in 1e-3f64..1e3) {
        let su: Vec<f64> = u.iter().map(|x| x * scale).collect();
        let (a, b) = (cosine(&su, &v), cosine(&u, &v));
        if cosine(&u, &u) > 0.0 && cosine(&su, &su) > 0.0 {
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn masking_is_idempotent((f, n, sim, mask) in field_strategy()) {
        let once = CorrespondenceField::from_parts(f, n, sim, mask.clone()).unwrap();
        let twice = CorrespondenceField::from_parts(f, n, once.masked_matrix().to_vec(), mask).unwrap();
        prop_assert_eq!(once.masked_matrix(), twice.masked_matrix());
        for (&m, &x) in once.mask_matrix().iter().zip(once.masked_matrix()) {
            if !m {
                prop_assert_eq!(x, 0.0);
            }
        }
    }

    #[test]
    fn block_sums_match_direct(
        (f, n, sim, mask) in field_strategy(),
        corners in prop::collection::vec((0usize..9, 0usize..9, 0usize..17, 0usize..17), 20),
    ) {
        let field = CorrespondenceField::from_parts(f, n, sim, mask).unwrap();
        for (a, b, c, d) in corners {
            let (i, u) = (a.min(b).min(f), a.max(b).min(f));
            let (j, q) = (c.min(d).min(n), c.max(d).min(n));
            let mut direct = 0.0;
            let mut count = 0;
            for x in i..u {
                for y in j..q {
                    direct += field.masked(x, y);
                    count += u64::from(field.mask(x, y));
                }
            }
            prop_assert!((field.block_sum(i, u, j, q).unwrap() - direct).abs() < 1e-6);
            prop_assert_eq!(field.block_count(i, u, j, q).unwrap(), count);
        }
    }

    #[test]
    fn mask_follows_bucket_neighbourhood(seed in 0u64..500, one_sided in any::<bool>()) {
        let s = generate_scenario(&ScenarioSpec { num_frames: 20, num_audio_tokens: 500, seed, ..Default::default() }).unwrap();
        let params = HyperParams { one_sided_boundary: one_sided, ..Default::default() };
        let field = build_field(&s.video, &s.audio, &params).unwrap();
        let k = s.video.num_buckets();
        for f in 0..field.frames() {
            let nb = neighborhood(s.video.frame_bucket()[f], k, one_sided);
            for t in 0..field.tokens() {
                prop_assert_eq!(field.mask(f, t), nb.contains(&s.audio.token_bucket()[t]));
            }
        }
    }
}

#[test]
fn end_buckets_see_only_themselves_by_default() {
    assert_eq!(neighborhood(0, 5, false), 0..=0);
    assert_eq!(neighborhood(4, 5, false), 4..=4);
    assert_eq!(neighborhood(2, 5, false), 1..=3);
    assert_eq!(neighborhood(0, 5, true), 0..=1);
    assert_eq!(neighborhood(4, 5, true), 3..=4);
    assert_eq!(neighborhood(0, 1, true), 0..=0);
}

#[test]
fn uniform_block_scores_are_exact() {
    let field = CorrespondenceField::from_parts(3, 7, vec![1.0; 21], vec![true; 21]).unwrap();
    assert_eq!(field.block_sum(0, 3, 0, 7).unwrap(), 21.0);
    let field = CorrespondenceField::from_parts(2, 5, vec![0.1; 10], vec![true; 10]).unwrap();
    let s = field.block_sum(0, 2, 0, 5).unwrap();
    assert!((s - 1.0).abs() < 1e-15, "{s}");
}
