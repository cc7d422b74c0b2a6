use std::collections::HashSet;
use std::sync::{Arc, OnceLock};

use proptest::prelude::*;

use expolab_core::photometry::{CameraResponse, Exposure, Image};
use expolab_core::rewards::{Reward, RewardConfig, RewardFunction, RewardKind};
use expolab_core::scene::io::{load_sequence, save_sequence};
use expolab_core::scene::{
    enumerate_augmentations, generate_panorama, generate_sequence, observe_at, render_frame, select_seed,
    AugmentationSpec, BracketedFrame, BracketedSequence, EnvConfig, ExposureEnv, Intrinsics, PathPoint, RenderParams,
    SceneError, SceneSpec, BRACKET_LADDER_US, OBS_FRAMES, OBS_SIZE,
};

fn panning_spec(frames: usize) -> SceneSpec {
    SceneSpec {
        pano_width: 1024,
        pano_height: 400,
        dynamic_range: 200.0,
        path: (0..frames).map(|i| PathPoint::at(8.0 * i as f64)).collect(),
        light_events: vec![],
        noise_sigma: 0.0,
        fps: 20.0,
    }
}

/// Twelve noise-free frames of a panning camera, linear response.
fn rendered() -> &'static BracketedSequence {
    static SEQ: OnceLock<BracketedSequence> = OnceLock::new();
    SEQ.get_or_init(|| generate_sequence(4, &panning_spec(12), &CameraResponse::linear(), &Intrinsics::synthetic()).unwrap())
}

/// Small frames whose irradiance drifts with the frame index, cheap enough
/// for long sequences.
fn cheap_sequence(frames: usize, with_poses: bool) -> BracketedSequence {
    let response = CameraResponse::linear();
    let (w, h) = (32, 24);
    let brackets = (0..frames)
        .map(|i| {
            let images = BRACKET_LADDER_US
                .iter()
                .map(|&t| {
                    let data = (0..w * h)
                        .map(|p| {
                            let irradiance = 1e-4 * (1.0 + ((p + 7 * i) % 97) as f64 / 10.0);
                            response.intensity((irradiance * t).ln())
                        })
                        .collect();
                    Image::new(w, h, data, Exposure::new(t, 0.0).unwrap()).unwrap()
                })
                .collect();
            BracketedFrame::new(images, i as f64 / 20.0).unwrap()
        })
        .collect();
    let poses = with_poses.then(|| {
        (0..frames).map(|i| PathPoint::at(i as f64).world_pose(&Intrinsics::synthetic())).collect()
    });
    BracketedSequence::new(brackets, response, Intrinsics::synthetic(), poses, 20.0).unwrap()
}

fn stat_reward() -> Arc<dyn RewardFunction + Send + Sync> {
    Arc::new(Reward::new(RewardKind::Stat, RewardConfig::default()).unwrap())
}

fn env(seq: BracketedSequence, config: EnvConfig) -> ExposureEnv {
    ExposureEnv::new(Arc::new(seq), config, stat_reward()).unwrap()
}

#[test]
fn seed_is_the_exposure_just_below() {
    let frame = &rendered().frames()[0];
    for (target, expected) in [(3000.0, 1000.0), (50.0, 50.0), (30.0, 50.0), (1e5, 20_000.0), (5000.0, 5000.0)] {
        assert_eq!(select_seed(frame, target).exposure.time_us, expected, "target {target}");
    }
}

#[test]
fn ladder_exposure_reproduces_the_flipped_bracket_image() {
    let seq = rendered();
    let aug = AugmentationSpec { flip_h: true, ..AugmentationSpec::identity() };
    let got = observe_at(seq, &aug, 3, 1000.0).unwrap();
    let mut expected = seq.frames()[3].images()[2].clone();
    expected.flip_horizontal();
    for (&a, &b) in got.data().iter().zip(expected.data()) {
        assert!(a.abs_diff(b) <= 1);
    }
}

#[test]
fn double_flip_restores_pixel_order() {
    let seq = rendered();
    let plain = observe_at(seq, &AugmentationSpec::identity(), 2, 1500.0).unwrap();
    for aug in [
        AugmentationSpec { flip_h: true, ..AugmentationSpec::identity() },
        AugmentationSpec { flip_v: true, ..AugmentationSpec::identity() },
    ] {
        let mut img = observe_at(seq, &aug, 2, 1500.0).unwrap();
        if aug.flip_h {
            img.flip_horizontal();
        }
        if aug.flip_v {
            img.flip_vertical();
        }
        assert_eq!(img, plain);
    }
}

#[test]
fn synthesised_frame_matches_direct_render() {
    let spec = panning_spec(12);
    let pan = generate_panorama(4, &spec).unwrap();
    let seq = rendered();
    for cursor in [0, 5, 11] {
        let synth = observe_at(seq, &AugmentationSpec::identity(), cursor, 2000.0).unwrap();
        let direct = render_frame(
            &pan,
            &spec.path[cursor],
            Exposure::from_composite(2000.0).unwrap(),
            &seq.response,
            &Intrinsics::synthetic(),
            &RenderParams::default(),
        )
        .unwrap();
        let mut compared = 0;
        for (&a, &b) in synth.data().iter().zip(direct.data()) {
            if b > 0 && b < 255 {
                compared += 1;
                assert!(a.abs_diff(b) <= 2, "synthesised {a} vs direct {b}");
            }
        }
        assert!(compared > synth.data().len() / 2);
    }
}

#[test]
fn frame_skip_composes_pose_deltas() {
    let seq = rendered();
    let step = |a: usize| seq.relative_pose(a, a + 1).unwrap();
    let composed = step(2).compose(&step(3)).compose(&step(4));
    let direct = seq.relative_pose(2, 5).unwrap();
    assert!((composed.translation - direct.translation).norm() < 1e-12);
    assert!((composed.rotation.inverse() * direct.rotation).angle() < 1e-12);
}

#[test]
fn augmentation_enumeration() {
    let all = enumerate_augmentations();
    assert_eq!(all.len(), 24);
    assert_eq!(all.iter().collect::<HashSet<_>>().len(), 24);
    assert!(all.contains(&AugmentationSpec::identity()));
}

#[test]
fn reset_is_deterministic_and_well_shaped() {
    let mut e = env(cheap_sequence(300, false), EnvConfig { episode_len: 100, ..EnvConfig::default() });
    let a = e.reset(42).unwrap();
    let b = e.reset(42).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.as_bytes().len(), OBS_FRAMES * OBS_SIZE * OBS_SIZE);
    assert!(a.to_f32().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn episode_seeds_spread_over_augmentations_and_starts() {
    let mut e = env(cheap_sequence(300, false), EnvConfig { episode_len: 100, ..EnvConfig::default() });
    let mut seen = HashSet::new();
    for seed in 0..100 {
        e.reset(seed).unwrap();
        seen.insert((e.augmentation().unwrap(), e.cursor().unwrap()));
    }
    assert!(seen.len() >= 95, "{} distinct starts", seen.len());
}

#[test]
fn brightening_action_doubles_exposure() {
    let mut e = env(cheap_sequence(20, false), EnvConfig { augment: false, ..EnvConfig::default() });
    e.reset_with(AugmentationSpec::identity(), 0, 700.0).unwrap();
    e.step(-1.0).unwrap();
    assert_eq!(e.current_exposure(), Some(1400.0));
    e.step(0.5).unwrap();
    assert_eq!(e.current_exposure(), Some(1400.0 * (-0.5f64).exp2()));
}

#[test]
fn zero_action_on_a_static_uniform_scene_repeats_the_observation() {
    let frame = || {
        let images = BRACKET_LADDER_US
            .iter()
            .map(|&t| Image::filled(16, 12, (t / 200.0).min(255.0) as u8, Exposure::new(t, 0.0).unwrap()))
            .collect();
        BracketedFrame::new(images, 0.0).unwrap()
    };
    let seq = BracketedSequence::new((0..10).map(|_| frame()).collect(), CameraResponse::linear(), Intrinsics::synthetic(), None, 20.0)
        .unwrap();
    let mut e = env(seq, EnvConfig { augment: false, ..EnvConfig::default() });
    let first = e.reset_with(AugmentationSpec::identity(), 0, 5000.0).unwrap();
    let a = e.step(0.0).unwrap();
    let b = e.step(0.0).unwrap();
    assert_eq!(a.observation, first);
    assert_eq!(a.observation, b.observation);
}

#[test]
fn episode_ends_at_its_length_and_then_refuses_steps() {
    let mut e = env(cheap_sequence(40, false), EnvConfig { episode_len: 5, augment: false, ..EnvConfig::default() });
    e.reset_with(AugmentationSpec::identity(), 0, 1000.0).unwrap();
    for k in 1..=5 {
        let out = e.step(0.0).unwrap();
        assert_eq!(out.done, k == 5);
    }
    assert!(matches!(e.step(0.0), Err(SceneError::Protocol(_))));
}

#[test]
fn episode_ends_with_the_sequence() {
    let mut e = env(cheap_sequence(8, false), EnvConfig { augment: false, ..EnvConfig::default() });
    e.reset_with(AugmentationSpec::identity(), 0, 1000.0).unwrap();
    let dones: Vec<bool> = (0..4).map(|_| e.step(0.0).unwrap().done).collect();
    assert_eq!(dones, [false, false, false, true]);
}

#[test]
fn sequences_too_short_for_any_augmentation_are_rejected() {
    let result = ExposureEnv::new(Arc::new(cheap_sequence(4, false)), EnvConfig::default(), stat_reward());
    assert!(matches!(result, Err(SceneError::Configuration(_))));
}

#[test]
fn pose_reward_without_poses_fails_on_step() {
    let reward: Arc<dyn RewardFunction + Send + Sync> = Arc::new(Reward::new(RewardKind::Pose, RewardConfig::default()).unwrap());
    let mut e = ExposureEnv::new(Arc::new(cheap_sequence(20, false)), EnvConfig::default(), reward).unwrap();
    e.reset(0).unwrap();
    assert!(matches!(e.step(0.0), Err(SceneError::Reward(_))));
}

#[test]
fn reward_stream_is_reproducible() {
    let run = || {
        let mut e = env(cheap_sequence(60, true), EnvConfig { episode_len: 20, ..EnvConfig::default() });
        e.reset(9).unwrap();
        (0..20).map(|k| e.step(((k % 5) as f64 - 2.0) * 0.7).unwrap().reward).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn sequence_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let seq = cheap_sequence(3, true);
    save_sequence(&seq, dir.path()).unwrap();
    let back = load_sequence(dir.path()).unwrap();
    assert_eq!(back.frames(), seq.frames());
    assert_eq!(back.response, seq.response);
    let (a, b) = (back.gt_poses().unwrap(), seq.gt_poses().unwrap());
    for (p, q) in a.iter().zip(b) {
        assert!((p.translation - q.translation).norm() < 1e-9);
        assert!((p.rotation.inverse() * q.rotation).angle() < 1e-9);
    }
}

#[test]
fn loader_rejects_a_foreign_ladder() {
    let dir = tempfile::tempdir().unwrap();
    save_sequence(&cheap_sequence(2, false), dir.path()).unwrap();
    let meta = dir.path().join("meta.json");
    let mut json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&meta).unwrap()).unwrap();
    json["bracket_exposures_us"] = serde_json::json!([50.0, 200.0, 1000.0, 5000.0, 10000.0]);
    std::fs::write(&meta, json.to_string()).unwrap();
    assert!(matches!(load_sequence(dir.path()), Err(SceneError::Load { .. })));
}

#[test]
fn loader_rejects_a_missing_frame() {
    let dir = tempfile::tempdir().unwrap();
    save_sequence(&cheap_sequence(2, false), dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("frames").join("000001_3.png")).unwrap();
    let err = load_sequence(dir.path()).unwrap_err();
    assert!(err.to_string().contains("000001_3.png"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmented_indices_stay_in_range(k in 0usize..24, n in 2usize..200) {
        let aug = enumerate_augmentations()[k];
        let len = aug.augmented_len(n);
        for c in 0..len {
            let i = aug.source_index(c, n);
            prop_assert!(i.is_some_and(|i| i < n));
        }
        prop_assert!(aug.source_index(len, n).is_none());
    }
}
