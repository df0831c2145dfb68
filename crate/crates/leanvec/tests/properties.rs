//! Property tests for the contracts that must hold on arbitrary inputs, not
//! just the random instances the unit tests draw.

use leanvec::linalg::{accumulate_gram, spectral_lmo, stiefel_retract, sym_eig, thin_svd};
use leanvec::lvq::LvqCodec;
use leanvec::recall;
use ndarray::Array2;
use proptest::prelude::*;

fn finite_component() -> impl Strategy<Value = f32> {
    // Mixed scales, including large offsets that would break f32 grid
    // scalars; the quantizer stores its per-vector scalars in f64.
    prop_oneof![
        -1.0f32..1.0,
        -1e4f32..1e4,
        Just(0.0f32),
        Just(16777216.0f32),
        Just(-16777216.0f32),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lvq_one_level_error_within_half_delta(
        xs in prop::collection::vec(finite_component(), 1..48),
        b1 in prop_oneof![Just(4u8), Just(8u8)],
        offset in -1e6f32..1e6,
    ) {
        let dim = xs.len();
        let codec = LvqCodec::from_parts(vec![offset as f64; dim], b1, 0).unwrap();
        let code = codec.encode(&xs).unwrap();
        let decoded = codec.decode(code.as_ref()).unwrap();
        for (d, &orig) in decoded.iter().zip(xs.iter()) {
            prop_assert!(
                (d - orig as f64).abs() <= code.delta / 2.0 + 1e-9,
                "err {} delta {}",
                (d - orig as f64).abs(),
                code.delta
            );
        }
    }

    #[test]
    fn lvq_encode_is_deterministic(
        xs in prop::collection::vec(-100.0f32..100.0, 1..32),
        b2 in prop_oneof![Just(0u8), Just(8u8)],
    ) {
        let codec = LvqCodec::from_parts(vec![0.0; xs.len()], 8, b2).unwrap();
        let a = codec.encode(&xs).unwrap();
        let b = codec.encode(&xs).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn lvq_quantized_ip_matches_decode_then_dot(
        xs in prop::collection::vec(-10.0f32..10.0, 2..32),
        seed in 0u64..1000,
    ) {
        let dim = xs.len();
        let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let q: Vec<f32> = (0..dim)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 40) as f32 / (1u32 << 23) as f32) - 0.5
            })
            .collect();
        let codec = LvqCodec::from_parts(vec![0.25; dim], 8, 8).unwrap();
        let code = codec.encode(&xs).unwrap();
        let fast = codec.inner_product(code.as_ref(), &q).unwrap();
        let slow: f64 = codec
            .decode(code.as_ref())
            .unwrap()
            .iter()
            .zip(q.iter())
            .map(|(&v, &qj)| v * qj as f64)
            .sum();
        prop_assert!((fast - slow).abs() <= 1e-5 * slow.abs().max(1e-6));
    }

    #[test]
    fn lmo_is_scale_invariant_and_orthonormal(
        entries in prop::collection::vec(-1.0f64..1.0, 6),
        scale in 0.01f64..100.0,
    ) {
        let c = Array2::from_shape_vec((2, 3), entries).unwrap();
        prop_assume!(c.iter().any(|&v| v != 0.0));
        let base = spectral_lmo(c.view()).unwrap();
        let scaled = spectral_lmo((&c * scale).view()).unwrap();
        let sst = base.matrix.dot(&base.matrix.t());
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((sst[(i, j)] - want).abs() <= 1e-8);
            }
        }
        if !base.degenerate {
            let diff = (&base.matrix - &scaled.matrix)
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(diff <= 1e-8, "scale invariance violated by {diff}");
        }
    }

    #[test]
    fn eig_reconstructs_arbitrary_gram(
        rows in prop::collection::vec(prop::collection::vec(-2.0f32..2.0, 5), 5..20),
    ) {
        let n = rows.len();
        let flat: Vec<f32> = rows.into_iter().flatten().collect();
        let data = Array2::from_shape_vec((n, 5), flat).unwrap();
        let k = accumulate_gram(data.view()).unwrap();
        let eig = sym_eig(k.view()).unwrap();
        let lambda = Array2::from_diag(&ndarray::Array1::from(eig.values.clone()));
        let recon = eig.vectors.dot(&lambda).dot(&eig.vectors.t());
        let scale = k.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let worst = (&recon - &k).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(worst <= 1e-6 * scale);
        // Eigenvalues descending.
        for w in eig.values.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn svd_singular_values_square_to_gram_eigenvalues(
        entries in prop::collection::vec(-1.0f64..1.0, 24),
    ) {
        let c = Array2::from_shape_vec((3, 8), entries).unwrap();
        let svd = thin_svd(c.view()).unwrap();
        let eig = sym_eig(c.dot(&c.t()).view()).unwrap();
        for (s, l) in svd.s.iter().zip(eig.values.iter()) {
            let want = l.max(0.0).sqrt();
            prop_assert!((s - want).abs() <= 1e-8 * want.max(1.0));
        }
    }

    #[test]
    fn retraction_lands_on_stiefel(
        entries in prop::collection::vec(0.05f64..1.0, 12),
        signs in prop::collection::vec(prop::bool::ANY, 12),
    ) {
        let signed: Vec<f64> = entries
            .iter()
            .zip(signs.iter())
            .map(|(&v, &s)| if s { v } else { -v })
            .collect();
        let a = Array2::from_shape_vec((2, 6), signed).unwrap();
        match stiefel_retract(a.view()) {
            Ok(m) => {
                let mmt = m.dot(&m.t());
                for i in 0..2 {
                    for j in 0..2 {
                        let want = if i == j { 1.0 } else { 0.0 };
                        prop_assert!((mmt[(i, j)] - want).abs() <= 1e-8);
                    }
                }
            }
            // Rank deficiency is a legal outcome for adversarial inputs.
            Err(leanvec::Error::RankDeficient { .. }) => {}
            Err(other) => return Err(TestCaseError::fail(format!("{other}"))),
        }
    }

    #[test]
    fn recall_is_permutation_invariant(
        ids in prop::collection::hash_set(0u32..1000, 10..40),
        truth in prop::collection::hash_set(0u32..1000, 10..40),
        seed in 0u64..512,
    ) {
        use rand::prelude::*;
        let k = ids.len().min(truth.len());
        let mut s: Vec<u32> = ids.into_iter().collect();
        let mut g: Vec<u32> = truth.into_iter().collect();
        s.sort_unstable();
        g.sort_unstable();
        // Invariance is over the truncated sets, so fix the membership first.
        s.truncate(k);
        g.truncate(k);
        let base = recall(&s, &g, k).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        s.shuffle(&mut rng);
        g.shuffle(&mut rng);
        prop_assert_eq!(recall(&s, &g, k).unwrap(), base);
        prop_assert!((0.0..=1.0).contains(&base));
    }
}
