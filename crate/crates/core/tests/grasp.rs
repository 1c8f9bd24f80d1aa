use proptest::prelude::*;
use simgrasp::detector::Detection;
use simgrasp::grasp::*;
use simgrasp::scenegen::*;

fn plain_world(seed: u64) -> TrialSetup {
    trial_setup(&TrialProtocol::default(), Tier::Plain, seed, 0).unwrap()
}

#[test]
fn blend_hand_cases() {
    assert_eq!(blend([4.0, 0.0], [2.0, 0.0], 0.5), [3.0, 0.0]);
    assert_eq!(blend([4.0, -1.0], [2.0, 7.0], 1.0), [4.0, -1.0]);
    assert_eq!(blend([0.0, 0.0], [0.0, 0.0], 0.3), [0.0, 0.0]);
}

#[test]
fn control_error_zero_when_centered() {
    let cfg = ControllerConfig::default();
    let b = BBox::new(12.0, 14.0, 20.0, 18.0);
    let obs = GraspObservation::from_boxes(Some(b), Some(b));
    let e = control_error(&obs, &cfg).unwrap();
    assert_eq!(e.blended, [0.0, 0.0]);
    let missing = GraspObservation::from_boxes(None, Some(b));
    assert!(control_error(&missing, &cfg).is_none());
}

#[test]
fn observation_packs_local_then_global() {
    let l = BBox::new(1.0, 2.0, 3.0, 4.0);
    let g = BBox::new(5.0, 6.0, 7.0, 8.0);
    let obs = GraspObservation::from_boxes(Some(l), Some(g));
    assert_eq!(obs.a, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    let back: GraspObservation = serde_json::from_str(&serde_json::to_string(&obs).unwrap()).unwrap();
    assert_eq!(back, obs);
}

#[test]
fn selection_prefers_score_then_area() {
    let small = BBox::new(0.0, 0.0, 2.0, 2.0);
    let big = BBox::new(0.0, 0.0, 4.0, 4.0);
    let dets = vec![Detection::new(1, small, 0.9), Detection::new(1, big, 0.7), Detection::new(2, big, 1.0)];
    assert_eq!(select_target(&dets, 1), Some(small));
    let tied = vec![Detection::new(1, small, 0.5), Detection::new(1, big, 0.5)];
    assert_eq!(select_target(&tied, 1), Some(big));
    assert_eq!(select_target(&dets, 3), None);
}

#[test]
fn gripper_over_object_sees_it_at_reference() {
    let setup = plain_world(3);
    let rig = Rig::default();
    let target = setup.world.objects.iter().find(|o| o.class_id == setup.robot.target_class).unwrap();
    let (cx, cy) = target.bbox.center();
    let robot = RobotState::new((cx, cy), (0.0, 0.0), target.class_id);
    let views = observe(&setup.world, &robot, &rig);
    let obs = predict_observation(&OracleDetector, &views, target.class_id).unwrap();
    let (u, v) = obs.local_box().unwrap().center();
    assert_eq!((u, v), rig.local.reference_point());
}

#[test]
fn observation_is_deterministic() {
    let setup = plain_world(5);
    let rig = Rig::default();
    assert_eq!(observe(&setup.world, &setup.robot, &rig), observe(&setup.world, &setup.robot, &rig));
}

#[test]
fn base_motion_shifts_global_pixels() {
    let setup = plain_world(8);
    let rig = Rig::default();
    let moved = RobotState {
        base_position: (setup.robot.base_position.0 + 1.5, setup.robot.base_position.1 - 0.5),
        ..setup.robot.clone()
    };
    let before = predict_observation(&OracleDetector, &observe(&setup.world, &setup.robot, &rig), setup.robot.target_class)
        .unwrap()
        .global_box()
        .unwrap();
    let after = predict_observation(&OracleDetector, &observe(&setup.world, &moved, &rig), setup.robot.target_class)
        .unwrap()
        .global_box()
        .unwrap();
    let (du, dv) = (after.center().0 - before.center().0, after.center().1 - before.center().1);
    assert!((du + 1.5 * rig.global.scale.0).abs() <= 1.0);
    assert!((dv - 0.5 * rig.global.scale.1).abs() <= 1.0);
}

#[test]
fn unit_gain_converges_in_one_step() {
    let cfg = ControllerConfig { gain_global: 1.0, gain_local: 1.0, ..Default::default() };
    let rig = Rig::default();
    let setup = plain_world(11);
    let res = run_trial(&setup.world, &setup.robot, &OracleDetector, &cfg, &rig).unwrap();
    assert!(res.success);
    assert!(res.steps_taken <= 2);
    let last = res.error_trace.last().unwrap().error().unwrap();
    assert!(norm(last.e_local) < 1e-9 && norm(last.e_global) < 1e-9);
}

#[test]
fn oracle_errors_decay_geometrically() {
    let cfg = ControllerConfig::default();
    let rig = Rig::default();
    for seed in 0..10 {
        let setup = plain_world(seed);
        let res = run_trial(&setup.world, &setup.robot, &OracleDetector, &cfg, &rig).unwrap();
        assert!(res.success, "seed {seed}: {:?}", res.failure_reason);
        assert!(res.steps_taken <= 20);
        let errs: Vec<ControlError> = res.error_trace.iter().map(|s| s.error().unwrap()).collect();
        for w in errs.windows(2) {
            for (a, b, g) in [(w[0].e_local, w[1].e_local, cfg.gain_local), (w[0].e_global, w[1].e_global, cfg.gain_global)] {
                for k in 0..2 {
                    assert!((b[k] - (1.0 - g) * a[k]).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn blind_detector_loses_target() {
    let cfg = ControllerConfig::default();
    let setup = plain_world(2);
    let res = run_trial(&setup.world, &setup.robot, &BlindDetector, &cfg, &Rig::default()).unwrap();
    assert!(!res.success);
    assert_eq!(res.failure_reason, FailureReason::LostTarget);
    assert_eq!(res.steps_taken, cfg.miss_limit);
}

#[test]
fn trials_are_deterministic() {
    let p = TrialProtocol { trials_per_tier: 4, ..Default::default() };
    let cfg = ControllerConfig::default();
    let rig = Rig::default();
    let a = run_tier(&p, Tier::Complex, 9, &OracleDetector, &cfg, &rig).unwrap();
    let b = run_tier(&p, Tier::Complex, 9, &OracleDetector, &cfg, &rig).unwrap();
    assert_eq!(a, b);
}

#[test]
fn trial_log_round_trips() {
    let setup = plain_world(4);
    let res = run_trial(&setup.world, &setup.robot, &OracleDetector, &ControllerConfig::default(), &Rig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trial.jsonl");
    write_trial_log(&path, &res).unwrap();
    assert_eq!(read_trial_log(&path).unwrap(), res.error_trace);
}

proptest! {
    #[test]
    fn blend_is_linear_in_alpha(
        el in prop::array::uniform2(-50.0f64..50.0),
        eg in prop::array::uniform2(-50.0f64..50.0),
        alpha in 0.0f64..=1.0,
    ) {
        let b = blend(el, eg, alpha);
        for k in 0..2 {
            prop_assert_eq!(b[k], alpha * el[k] + (1.0 - alpha) * eg[k]);
        }
    }

    #[test]
    fn zero_error_is_a_fixed_point(
        bx in 0.0f64..32.0, by in 0.0f64..32.0,
        gx in 0.0f64..32.0, gy in 0.0f64..32.0,
    ) {
        let robot = RobotState::new((bx, by), (gx - bx, gy - by), 1);
        let rig = Rig::default();
        let next = step(&robot, [0.0, 0.0], [0.0, 0.0], &ControllerConfig::default(), &rig);
        prop_assert_eq!(next, robot);
    }
}
