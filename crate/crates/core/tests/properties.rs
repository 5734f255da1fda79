use proptest::prelude::*;

use l2o::config::{Mode, Profile, RunConfig};
use l2o::eval::{run_eval, EvalConfig, EvalOptimizer};
use l2o::exec::Exec;
use l2o::l2o::{decode, encode, init_l2o, l2o_step, L2OState};
use l2o::optimizee::{init_params, sample_instance, OptimizeeSpec};
use l2o::teachers::{teacher_step, TeacherKind, TeacherState};
use l2o::trajectory::rollout_l2o;

fn mode() -> impl Strategy<Value = Mode> {
    prop::sample::select(Mode::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips(
        m in mode(),
        paper in any::<bool>(),
        seed in any::<u64>(),
        ladder in prop::collection::btree_set(1usize..5000, 2..6),
        n_period in 1usize..5,
        r in 0.0f64..1.0,
        clip in prop::option::of(0.01f64..100.0),
    ) {
        let profile = if paper { Profile::Paper } else { Profile::Desk };
        let ladder: Vec<String> = ladder.iter().map(ToString::to_string).collect();
        let text = format!(
            "mode = {m}\nprofile = {profile}\nseed = {seed}\nladder = {}\nn_period = {n_period}\nr = {r}\ngrad_clip = {}\n",
            ladder.join(","),
            clip.map_or("none".to_string(), |c| c.to_string()),
        );
        let cfg = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn checkpoint_round_trips(seed in any::<u64>(), hidden in 1usize..24) {
        let phi = init_l2o(seed, hidden);
        let bytes = encode(&phi);
        prop_assert_eq!(&bytes[..4], b"L2O1");
        prop_assert_eq!(decode(&bytes).unwrap(), phi);
        prop_assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn learned_update_is_coordinatewise(
        seed in any::<u64>(),
        g in prop::collection::vec(-3.0f64..3.0, 2..8),
        i in 0usize..8,
    ) {
        // Each coordinate's update depends only on that coordinate's gradient.
        let i = i % g.len();
        let phi = init_l2o(seed, 5);
        let mut phi = phi;
        phi.tensor_mut(4).data_mut().iter_mut().for_each(|w| *w = 0.3);
        let (u, _) = l2o_step(&phi, &L2OState::zeros(g.len(), 5), &g).unwrap();
        let (single, _) = l2o_step(&phi, &L2OState::zeros(1, 5), &g[i..=i]).unwrap();
        prop_assert_eq!(u[i].to_bits(), single[0].to_bits());
    }

    #[test]
    fn adagrad_accumulator_never_decreases(gs in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 1..50)) {
        let mut state = TeacherState::new(3);
        for g in &gs {
            let before = state.acc.clone();
            teacher_step(&TeacherKind::adagrad(0.01), &mut state, g).unwrap();
            prop_assert!(state.acc.iter().zip(&before).all(|(a, b)| a >= b));
        }
    }

    #[test]
    fn rollouts_leave_phi_untouched(seed in any::<u64>()) {
        let phi = init_l2o(seed, 4);
        let before = encode(&phi);
        let mut inst = sample_instance(&OptimizeeSpec::quadratic(3), seed).unwrap();
        let theta0 = init_params(&inst, seed);
        let traj = rollout_l2o(&phi, &mut inst, &theta0, 15);
        prop_assert_eq!(traj.len(), traj.diverged_at.unwrap_or(15));
        prop_assert_eq!(encode(&phi), before);
    }
}

#[test]
fn eval_reports_are_bit_identical_across_runs_and_threads() {
    let cfg = EvalConfig {
        label: "adagrad".into(),
        optimizer: EvalOptimizer::Teacher(TeacherKind::adagrad(0.1)),
        optimizee: OptimizeeSpec::logistic_blobs(),
        n_eval: 120,
        seeds: vec![5, 3, 9, 1],
        log_every: 7,
    };
    let a = run_eval(&cfg, Exec::default()).unwrap();
    let b = run_eval(&cfg, Exec::Sequential).unwrap();
    assert_eq!(a.curve_csv(), b.curve_csv());
    assert_eq!(a, b);
    assert_eq!(a.seeds(), vec![5, 3, 9, 1]);
    for c in &a.curves {
        assert!(c.points.iter().all(|p| p.1.is_finite()));
    }
}
