use expolab_core::scene::{Observation, OBS_FRAMES, OBS_SIZE};
use expolab_drl::replay::{ReplayBuffer, Ring, Transition};
use expolab_drl::DrlError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn ring_at_full_capacity_evicts_oldest() {
    let mut ring = Ring::new(50_000);
    for i in 0..50_001u32 {
        ring.push(i);
    }
    assert_eq!(ring.len(), 50_000);
    assert_eq!(ring.get(0), Some(&1));
    assert_eq!(ring.get(49_999), Some(&50_000));
    assert!(ring.iter().all(|&v| v != 0));
}

#[test]
fn sampling_is_uniform() {
    let mut ring = Ring::new(100);
    for i in 0..100u32 {
        ring.push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = [0usize; 100];
    for _ in 0..1000 {
        for i in ring.sample_indices(&mut rng, 100).unwrap() {
            counts[i] += 1;
        }
    }
    for c in counts {
        assert!((850..=1150).contains(&c), "count {c}");
    }
}

#[test]
fn sampling_is_seeded() {
    let mut ring = Ring::new(300);
    for i in 0..300u32 {
        ring.push(i);
    }
    let a = ring.sample_indices(&mut ChaCha8Rng::seed_from_u64(5), 256).unwrap();
    let b = ring.sample_indices(&mut ChaCha8Rng::seed_from_u64(5), 256).unwrap();
    assert_eq!(a, b);
}

fn obs(tag: u8) -> Observation {
    Observation::from_planes(vec![tag; OBS_FRAMES * OBS_SIZE * OBS_SIZE]).unwrap()
}

#[test]
fn sampling_before_enough_data_is_a_protocol_error() {
    let mut buf = ReplayBuffer::new(1000);
    for i in 0..255u8 {
        buf.push(&Transition { obs: obs(i), action: 0.0, reward: 0.0, next_obs: obs(i), done: false });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(buf.sample(&mut rng, 256), Err(DrlError::Protocol(_))));
    buf.push(&Transition { obs: obs(0), action: 1.5, reward: 1.0, next_obs: obs(1), done: false });
    let batch = buf.sample(&mut rng, 256).unwrap();
    assert_eq!(batch.size, 256);
    assert_eq!(batch.obs.len(), 256 * OBS_FRAMES * OBS_SIZE * OBS_SIZE);
}
