//! Cross-module invariants checked on generated instances.

use proptest::prelude::*;
use toksoft_core::config::BackupParams;
use toksoft_core::env::TabularEnvSpec;
use toksoft_core::oracle::{
    action_soft_backup, check_cross_action_identity, check_within_action_identity,
    last_token_table, random_token_policy, soft_value_iteration, token_level_backup, ActionLevelQ,
    ActionPolicy,
};
use toksoft_core::trainers::{make_env, ReplayBuffer};
use toksoft_core::verify::fixed_point_gap;
use toksoft_core::{
    run_training, Algo, EnvKind, Mode, Reference, RunConfig, SeededRng, Transition,
};

fn instance() -> impl Strategy<Value = TabularEnvSpec> {
    (1usize..=5, 2usize..=3, 1usize..=3, any::<u64>())
        .prop_map(|(n, v, m, seed)| TabularEnvSpec::random(n, v, m, 0.3, seed).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn token_and_action_backups_agree(spec in instance(), seed: u64, beta in 0.05f64..20.0, gamma in 0.0f64..1.0) {
        let mut rng = SeededRng::new(seed);
        let pi = random_token_policy(&spec, &mut rng);
        let q0 = ActionLevelQ::random(&spec, -2.0, 2.0, &mut rng);
        let pibar = Reference::uniform(spec.vocab_size);
        let pa = ActionPolicy::from_token_policy(&pi, &spec);
        let tok = token_level_backup(&spec, &q0, &pi, &pibar, beta, gamma).unwrap();
        let act = action_soft_backup(&q0, &pa, &ActionPolicy::uniform(&spec), &spec, beta, gamma).unwrap();
        prop_assert!(check_cross_action_identity(&tok, &act, &pa) < 1e-9);
        let q = last_token_table(&q0, &spec);
        for s in 0..spec.n_states {
            let r = check_within_action_identity(&q, &pi, &pibar, &spec.encode_state(s), beta, spec.action_len, 1.0).unwrap();
            prop_assert!(r < 1e-9, "residual {}", r);
        }
    }

    #[test]
    fn value_iteration_deltas_eventually_shrink(spec in instance(), beta in 0.1f64..10.0, gamma in 0.5f64..0.95) {
        let opt = soft_value_iteration(&spec, &ActionPolicy::uniform(&spec), beta, gamma, 1e-11, 100_000).unwrap();
        let tail = &opt.deltas[opt.deltas.len() / 2..];
        prop_assert!(tail.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-15));
    }

    #[test]
    fn replay_buffer_keeps_the_newest(cap in 1usize..40, n in 0usize..100) {
        let mut b = ReplayBuffer::new(cap);
        for i in 0..n {
            b.push(Transition {
                state: vec![i].into(),
                action: vec![0].into(),
                reward: i as f64,
                next_state: vec![].into(),
                done: true,
            });
        }
        let kept: Vec<usize> = b.iter().map(|t| t.reward as usize).collect();
        prop_assert_eq!(kept, (n.saturating_sub(cap)..n).collect::<Vec<_>>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn exact_tabular_fixed_point_matches_oracle(spec in instance(), beta in prop::sample::select(vec![0.1, 1.0, 10.0])) {
        prop_assert!(fixed_point_gap(&spec, BackupParams::new(beta, 0.9)).unwrap() < 1e-6);
    }

    #[test]
    fn metrics_invariants_hold_for_every_algorithm(seed in 0u64..1000, algo in prop::sample::select(Algo::ALL.to_vec())) {
        let cfg = RunConfig { env: EnvKind::Tabular, algo, seed, steps: 60, batch_size: 8, ..RunConfig::default() };
        let mut env = make_env(&cfg).unwrap();
        let log = run_training(&cfg, env.as_mut()).unwrap();
        prop_assert_eq!(log.len(), 60);
        let mut best = f64::NEG_INFINITY;
        for (i, row) in log.rows().iter().enumerate() {
            best = best.max(row.episode_reward);
            prop_assert_eq!(row.env_step, i as u64 + 1);
            prop_assert_eq!(row.best_reward, best);
            prop_assert!(row.kl_to_ref >= 0.0);
        }
    }
}

#[test]
fn discounting_within_actions_moves_the_fixed_point() {
    let mut rng = SeededRng::new(21);
    for _ in 0..3 {
        let spec = toksoft_core::verify::random_multi_token_instance(&mut rng);
        let etpo = fixed_point_gap(&spec, BackupParams::new(1.0, 0.99)).unwrap();
        let disc = fixed_point_gap(&spec, BackupParams::discounted_within(1.0, 0.99)).unwrap();
        assert!(etpo < 1e-6 && disc > 1e-3, "etpo {etpo} disc {disc}");
    }
}

#[test]
fn reference_survives_training() {
    for mode in [Mode::Tabular, Mode::Parametric] {
        let cfg = RunConfig {
            steps: 80,
            mode,
            hidden: 8,
            ..RunConfig::default()
        };
        let mut env = make_env(&cfg).unwrap();
        let before = env.reference();
        let mut run = toksoft_core::TrainRun::new(&cfg, env.as_mut()).unwrap();
        run.run(None).unwrap();
        assert_eq!(run.etpo().unwrap().reference(), &before);
    }
}
