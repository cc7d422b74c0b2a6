use nalgebra::Vector3;
use proptest::prelude::*;

use expolab_core::photometry::{CameraResponse, Exposure, Image};
use expolab_core::rewards::{
    feature_counts, feature_score, pose_failure_score, pose_score, reward_feat, reward_stat, rotation_error,
    translation_error, Reward, RewardConfig, RewardError, RewardFunction, RewardKind, StepContext,
};
use expolab_core::scene::{generate_sequence, render_from_bracket, Intrinsics, PathPoint, SceneSpec};
use expolab_core::vision::{RigidPose, So3};

fn uniform(v: u8) -> Image {
    Image::filled(64, 48, v, Exposure::new(1000.0, 0.0).unwrap())
}

fn ctx<'a>(current: &'a Image, previous: &'a Image) -> StepContext<'a> {
    StepContext { current, previous, gt_relative_pose: None, intrinsics: Intrinsics::synthetic() }
}

/// Brightness term written out from its definition.
fn stat_oracle(mu_cur: f64, mu_prev: f64) -> f64 {
    let r_mean = 1.0 - (mu_cur / 255.0 - 0.5).abs() / 0.5;
    let r_flk = (mu_cur - mu_prev).abs() / 255.0;
    r_mean - 0.2 * r_flk
}

#[test]
fn stat_examples() {
    let cfg = RewardConfig::default();
    let g = uniform(128);
    assert!((reward_stat(&ctx(&g, &g), &cfg) - 0.99608).abs() < 1e-5);
    let (black, white) = (uniform(0), uniform(255));
    assert!((reward_stat(&ctx(&black, &white), &cfg) + 0.2).abs() < 1e-12);
    for v in [0u8, 40, 127, 200] {
        let img = uniform(v);
        assert!((reward_stat(&ctx(&img, &img), &cfg) - stat_oracle(f64::from(v), f64::from(v))).abs() < 1e-12);
    }
}

#[test]
fn feature_examples() {
    let cfg = RewardConfig::default();
    assert!((feature_score(400, 300, &cfg) - 3.5).abs() < 1e-12);
    let flat = uniform(77);
    assert_eq!(reward_feat(&ctx(&flat, &flat), &cfg), 0.0);
}

#[test]
fn identical_textured_frames_match_themselves() {
    let spec = SceneSpec { path: vec![PathPoint::at(300.0); 2], noise_sigma: 0.0, ..SceneSpec::switching(2) };
    let response = CameraResponse::gamma(2.2);
    let seq = generate_sequence(5, &spec, &response, &Intrinsics::synthetic()).unwrap();
    let frame = render_from_bracket(&seq.frames()[0], 1000.0, &response).unwrap();
    let (detected, matched) = feature_counts(&ctx(&frame, &frame), &RewardConfig::default());
    assert!(detected >= 100, "only {detected} features");
    assert!(matched as f64 >= 0.9 * detected as f64, "{matched} of {detected}");
}

#[test]
fn pose_examples() {
    let cfg = RewardConfig::default();
    let truth = RigidPose { rotation: So3::about_axis(1, 0.1), translation: Vector3::new(0.3, 0.0, 0.1) };
    assert_eq!(pose_score(&truth, &truth, &cfg), 0.0);
    let turned = RigidPose { rotation: So3::about_axis(0, std::f64::consts::FRAC_PI_2) * truth.rotation, ..truth };
    assert!((pose_score(&turned, &truth, &cfg) + 10.0).abs() < 1e-12);
    let opposite = RigidPose { translation: -truth.translation, ..truth };
    assert!((pose_score(&opposite, &truth, &cfg) + 2.0).abs() < 1e-12);
    assert_eq!(pose_failure_score(&cfg), -12.0);
}

#[test]
fn pose_reward_without_ground_truth_is_a_configuration_error() {
    let img = uniform(90);
    let r = Reward::new(RewardKind::Pose, RewardConfig::default()).unwrap();
    assert!(matches!(r.evaluate(&ctx(&img, &img)), Err(RewardError::Configuration(_))));
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(Reward::new(RewardKind::Stat, RewardConfig { rot_cap: 0.5, ..RewardConfig::default() }).is_err());
    assert!(Reward::new(RewardKind::Feat, RewardConfig { w_match: -0.1, ..RewardConfig::default() }).is_err());
}

fn rotation() -> impl Strategy<Value = So3> {
    (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0).prop_map(|(x, y, z)| So3::exp(&Vector3::new(x, y, z)))
}

fn vector() -> impl Strategy<Value = Vector3<f64>> {
    (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn stat_is_bounded(a in any::<u8>(), b in any::<u8>()) {
        let (cur, prev) = (uniform(a), uniform(b));
        let r = reward_stat(&ctx(&cur, &prev), &RewardConfig::default());
        prop_assert!((-0.2..=1.0).contains(&r));
        prop_assert!((r - stat_oracle(f64::from(a), f64::from(b))).abs() < 1e-12);
    }

    #[test]
    fn feature_score_is_monotone(d in 0usize..2000, m in 0usize..2000, k in 1usize..50) {
        let cfg = RewardConfig::default();
        let base = feature_score(d, m, &cfg);
        prop_assert!(base >= 0.0);
        prop_assert!(feature_score(d + k, m, &cfg) >= base);
        prop_assert!(feature_score(d, m + k, &cfg) >= base);
    }

    #[test]
    fn rotation_error_is_capped_and_symmetric(a in rotation(), b in rotation()) {
        let ab = rotation_error(&a, &b, 1.0);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - rotation_error(&b, &a, 1.0)).abs() < 1e-9);
    }

    #[test]
    fn translation_error_is_bounded_and_scale_free(a in vector(), b in vector(), s in 0.01f64..100.0) {
        let e = translation_error(&a, &b);
        prop_assert!((0.0..=2.0 + 1e-12).contains(&e));
        prop_assert!((translation_error(&(a * s), &(b * s)) - e).abs() < 1e-9);
    }

    #[test]
    fn pose_score_is_bounded(ra in rotation(), rb in rotation(), ta in vector(), tb in vector()) {
        let s = pose_score(
            &RigidPose { rotation: ra, translation: ta },
            &RigidPose { rotation: rb, translation: tb },
            &RewardConfig::default(),
        );
        prop_assert!((-12.0 - 1e-12..=0.0).contains(&s));
    }
}
