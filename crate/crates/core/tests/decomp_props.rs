use daekit::decomp::{decompose, validate_decomposition};
use daekit::pencil::{pencil_rank, Pencil};
use daekit::synth::{random_spec, synthesize, KroneckerSpec};
use daekit::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec_strategy() -> impl Strategy<Value = (KroneckerSpec, u64)> {
    (any::<u64>()).prop_map(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (random_spec(&mut rng, 12, 15), seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn synthesized_dims_are_recovered((spec, seed) in spec_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let p = synthesize(&spec, &mut rng);
        let dec = decompose(&p, 1e-10).unwrap();
        prop_assert_eq!(dec.x_dims, spec.expected_x_dims());
        prop_assert_eq!(dec.y_dims, spec.expected_y_dims());
        let rep = validate_decomposition(&p, &dec, 1e-9);
        prop_assert!(rep.passed(), "{}", rep.render());
    }

    #[test]
    fn dims_do_not_depend_on_the_hiding_transformation((spec, seed) in spec_strategy()) {
        let mut r1 = ChaCha8Rng::seed_from_u64(seed);
        let mut r2 = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let d1 = decompose(&synthesize(&spec, &mut r1), 1e-10).unwrap();
        let d2 = decompose(&synthesize(&spec, &mut r2), 1e-10).unwrap();
        prop_assert_eq!(d1.x_dims, d2.x_dims);
        prop_assert_eq!(d1.y_dims, d2.y_dims);
    }

    #[test]
    fn rank_is_transpose_invariant_and_bounded((spec, seed) in spec_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = synthesize(&spec, &mut rng);
        let r = pencil_rank(&p, 8, 1e-10).unwrap();
        prop_assert_eq!(r, pencil_rank(&p.transpose(), 8, 1e-10).unwrap());
        prop_assert!(r <= p.m().min(p.n()));
    }

    #[test]
    fn restriction_consistency((spec, seed) in spec_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = synthesize(&spec, &mut rng);
        let dec = decompose(&p, 1e-10).unwrap();
        let scale = 1.0 + p.a().amax() + p.b().amax();
        let r1 = (&dec.a_gen * &dec.s1 - &dec.f1 * p.a()).amax();
        let r2 = (&dec.b_und * &dec.s2 - &dec.f1 * p.b() * &dec.s2).amax();
        let r3 = (&dec.b_ov * &dec.s1 - &dec.f2 * p.b() * &dec.s1).amax();
        prop_assert!(r1.max(r2).max(r3) < 1e-9 * scale);
    }
}

#[test]
fn index_two_blocks_are_rejected() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = random_spec(&mut rng, 10, 13);
        spec.nilpotent2 = 1;
        let p = synthesize(&spec, &mut rng);
        assert!(matches!(decompose(&p, 1e-10), Err(Error::IndexTooHigh)), "seed {seed}: {spec:?}");
    }
}

#[test]
fn regular_pencil_rank_is_full() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let spec = KroneckerSpec { finite: 3, infinite: 2, ..Default::default() };
    let p: Pencil = synthesize(&spec, &mut rng);
    assert_eq!(pencil_rank(&p, 8, 1e-10).unwrap(), 5);
}
