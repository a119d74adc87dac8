use fairmine::model::conservation_residual;
use fairmine::{run_trial, ExperimentSpec, ProtocolKind, ProtocolSpec, ShareVector};
use proptest::prelude::*;

fn kind_strategy() -> impl Strategy<Value = ProtocolKind> {
    prop::sample::select(ProtocolKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lambda_is_a_distribution(
        kind in kind_strategy(),
        weights in prop::collection::vec(0.05f64..1.0, 2..6),
        w in 0.001f64..0.5,
        withhold in prop::sample::select(vec![0u64, 1, 7, 50]),
        horizon in 1u64..300,
        seed in any::<u64>(),
    ) {
        let shares = ShareVector::normalized(&weights).unwrap();
        let protocol = match kind {
            ProtocolKind::Cpos => ProtocolSpec::cpos(w, 0.05, 4, horizon),
            k => ProtocolSpec::new(k, w, horizon),
        }
        .with_withholding(withhold);
        let spec = ExperimentSpec::new(protocol, shares, seed).with_trials(1);
        for c in run_trial(&spec, 0).unwrap() {
            prop_assert!(c.lambda.iter().all(|&l| (-1e-12..=1.0 + 1e-12).contains(&l)));
            prop_assert!((c.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn conservation_holds_under_withholding(
        weights in prop::collection::vec(0.05f64..1.0, 2..5),
        w in 0.001f64..0.2,
        v in 0.0f64..0.2,
        k in 0u64..20,
        steps in 1u64..200,
        seed in any::<u64>(),
    ) {
        use rand::SeedableRng;
        let shares = ShareVector::normalized(&weights).unwrap();
        let spec = ProtocolSpec::cpos(w, v, 3, steps).with_withholding(k);
        let mut states = fairmine::model::initial_states(&shares);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for t in 1..=steps {
            let total = fairmine::model::total_effective(&states);
            let wins = fairmine::protocols::cpos_epoch(&states, total, &spec, &mut rng);
            fairmine::protocols::apply_reward(&mut states, fairmine::protocols::Award::Shards(&wins), &spec, t);
            prop_assert!(conservation_residual(&states, &spec, t).abs() < 1e-10);
        }
    }
}

#[test]
fn same_seed_same_trial_across_protocols() {
    for kind in ProtocolKind::ALL {
        let protocol = match kind {
            ProtocolKind::Cpos => ProtocolSpec::cpos(0.01, 0.1, 32, 400),
            k => ProtocolSpec::new(k, 0.01, 400),
        };
        let spec =
            ExperimentSpec::new(protocol, ShareVector::new(vec![0.2, 0.3, 0.5]).unwrap(), 99);
        assert_eq!(run_trial(&spec, 12).unwrap(), run_trial(&spec, 12).unwrap());
    }
}
