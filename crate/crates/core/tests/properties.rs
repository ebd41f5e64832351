use ndarray::Array2;
use num_complex::Complex64;
use photospike::envs::{angle_normalize, pendulum_step, PendulumParams, PendulumState};
use photospike::linalg::cosine_similarity;
use photospike::mesh::{PhotonicMesh, VoltageTable};
use photospike::nn::{soft_update, Linear};
use photospike::snn::{ActorArch, ActorNet};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn actions_stay_within_bounds(
        seed in any::<u64>(),
        t in 1usize..5,
        scale in 0.1f64..10.0,
        state in prop::collection::vec(-1e3f64..1e3, 3),
    ) {
        let arch = ActorArch { time_steps: t, ..ActorArch::pendulum() };
        let actor = ActorNet::new(arch, vec![scale], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let (a, trace) = actor.forward(&state).unwrap();
        prop_assert!(a[0].abs() <= scale);
        prop_assert!(trace.spikes.iter().flatten().all(|s| *s == 0.0 || *s == 1.0));
    }

    #[test]
    fn random_meshes_are_unitary(n in 1usize..9, seed in any::<u64>()) {
        let mesh = PhotonicMesh::ideal(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = VoltageTable::random(&mesh.topology, &mesh.map, &mut rng);
        let m = mesh.transfer(&v, &mut rng).unwrap();
        prop_assert!(m.unitarity_error() < 1e-9);
        let x: Vec<Complex64> = (0..=n).map(|k| Complex64::new(k as f64 - 0.5, 0.25)).collect();
        let e_in: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        let e_out: f64 = m.apply(&x).iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((e_in - e_out).abs() < 1e-9);
    }

    #[test]
    fn effective_weight_entries_are_bounded(n in 1usize..9, seed in any::<u64>()) {
        let mesh = PhotonicMesh::ideal(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = VoltageTable::random(&mesh.topology, &mesh.map, &mut rng);
        let w = mesh.effective_weight(&v, &mut rng).unwrap();
        prop_assert_eq!(w.dim(), (n, n));
        prop_assert!(w.iter().all(|x| x.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn cosine_is_scale_invariant(
        vals in prop::collection::vec(-5.0f64..5.0, 12),
        other in prop::collection::vec(-5.0f64..5.0, 12),
        k in 1e-3f64..1e3,
    ) {
        let a = Array2::from_shape_vec((3, 4), vals).unwrap();
        let b = Array2::from_shape_vec((3, 4), other).unwrap();
        if let (Ok(c), Ok(ck)) = (cosine_similarity(&a, &b), cosine_similarity(&a.mapv(|x| x * k), &b)) {
            prop_assert!((c - ck).abs() < 1e-12);
            prop_assert!(c.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn soft_update_interpolates(seed in any::<u64>(), tau in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let live = Linear::uniform(4, 3, &mut rng);
        let start = Linear::uniform(4, 3, &mut rng);
        let mut target = start.clone();
        soft_update(&live, &mut target, tau).unwrap();
        for ((t, l), s) in target.weight.iter().zip(live.weight.iter()).zip(start.weight.iter()) {
            prop_assert!(*t >= l.min(*s) - 1e-15 && *t <= l.max(*s) + 1e-15);
        }
    }

    #[test]
    fn angles_wrap_into_the_half_open_circle(theta in -1e4f64..1e4) {
        let w = angle_normalize(theta);
        let pi = std::f64::consts::PI;
        prop_assert!(w > -pi && w <= pi);
        let turns = (theta - w) / (2.0 * pi);
        prop_assert!((turns - turns.round()).abs() < 1e-6);
    }

    #[test]
    fn pendulum_rewards_are_bounded(
        theta in -10.0f64..10.0,
        theta_dot in -8.0f64..8.0,
        torque in -100.0f64..100.0,
    ) {
        let p = PendulumParams::default();
        let s = PendulumState { theta, theta_dot, step_count: 0 };
        let (next, obs, reward, _) = pendulum_step(&s, torque, &p).unwrap();
        let pi = std::f64::consts::PI;
        prop_assert!(reward <= 0.0 && reward >= -(pi * pi + 0.1 * 64.0 + 0.001 * 4.0) - 1e-9);
        prop_assert!(next.theta_dot.abs() <= 8.0);
        prop_assert!(((obs[0] * obs[0] + obs[1] * obs[1]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn voltage_tables_roundtrip_through_csv(n in 1usize..7, seed in any::<u64>()) {
        let mesh = PhotonicMesh::ideal(n).unwrap();
        let v = VoltageTable::random(&mesh.topology, &mesh.map, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut buf = Vec::new();
        v.write_csv(&mut buf).unwrap();
        let back = VoltageTable::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, v);
    }
}
