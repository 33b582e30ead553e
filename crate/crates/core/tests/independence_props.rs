mod common;

use common::{arb_bag, arb_positive_bag, integer_scale, names, oracle_ci, split_roles};
use fairrepair_core::causal::{random_model, DEFAULT_JOINT_CAP};
use fairrepair_core::independence::{
    conditional_mutual_information, grow_shrink_boundary, holds_ci, impossibility_check, minimal_blankets, CiStatement,
};
use fairrepair_core::rational;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn exact_ci_iff_zero_cmi(bag in arb_bag(2, 4, 3, 3), roles in prop::collection::vec(0u8..4, 4)) {
        let n = bag.schema().len();
        let (x, y, z) = split_roles(&roles, n);
        prop_assume!(!x.is_empty() && !y.is_empty());
        let ci = CiStatement::new(&names(&x), &names(&y), &names(&z));
        let holds = holds_ci(&bag, &ci, &rational::zero()).unwrap();
        let cmi = conditional_mutual_information(&bag, &ci).unwrap();
        prop_assert_eq!(holds, oracle_ci(&bag, &x, &y, &z));
        prop_assert_eq!(holds, cmi == 0.0, "cmi = {}", cmi);
        prop_assert!(cmi >= 0.0);
    }

    #[test]
    fn adding_a_key_to_x_is_decomposable(bag in arb_bag(3, 4, 2, 3), roles in prop::collection::vec(0u8..4, 4)) {
        // Attribute 0 plays the key K; X may be empty beside it.
        let n = bag.schema().len();
        let (x, y, z) = split_roles(&roles, n);
        let x: Vec<usize> = x.into_iter().filter(|&i| i != 0).collect();
        let y: Vec<usize> = y.into_iter().filter(|&i| i != 0).collect();
        let z: Vec<usize> = z.into_iter().filter(|&i| i != 0).collect();
        prop_assume!(!y.is_empty());
        let kx: Vec<usize> = std::iter::once(0).chain(x.iter().copied()).collect();
        let with_key = CiStatement::new(&names(&kx), &names(&y), &names(&z));
        if holds_ci(&bag, &with_key, &rational::zero()).unwrap() && !x.is_empty() {
            let plain = CiStatement::new(&names(&x), &names(&y), &names(&z));
            prop_assert!(holds_ci(&bag, &plain, &rational::zero()).unwrap());
        }
    }

    #[test]
    fn impossibility_on_positive_distributions(bag in arb_positive_bag(3, 3, 2, 6)) {
        let r = impossibility_check(&bag, "A", "B", "C", &rational::zero()).unwrap();
        prop_assert!(r.positive_oy);
        prop_assert!(!r.violated);
    }

    #[test]
    fn impossibility_on_exact_positive_joints(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, 3, 2, 0.6, 2, true);
        let joint = model.joint_distribution(DEFAULT_JOINT_CAP).unwrap();
        let bag = joint.to_bag(integer_scale(&joint)).unwrap();
        for (s, o, y) in [("V0", "V1", "V2"), ("V1", "V2", "V0"), ("V2", "V0", "V1")] {
            let r = impossibility_check(&bag, s, o, y, &rational::zero()).unwrap();
            prop_assert!(!r.violated, "{s} {o} {y}: {r:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn markov_boundary_is_unique_on_positive_joints(seed in any::<u64>(), target in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, 4, 2, 0.5, 2, true);
        let joint = model.joint_distribution(DEFAULT_JOINT_CAP).unwrap();
        let bag = joint.to_bag(integer_scale(&joint)).unwrap();
        let name = format!("V{target}");
        let blankets = minimal_blankets(&bag, &name, &rational::zero(), 5).unwrap();
        prop_assert_eq!(blankets.len(), 1, "{:?}", blankets);
        let gs = grow_shrink_boundary(&bag, &name, &rational::zero()).unwrap();
        prop_assert_eq!(&gs.boundary, &blankets[0]);
    }
}
