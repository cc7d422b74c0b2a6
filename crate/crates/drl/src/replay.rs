//! FIFO experience replay with uniform sampling.
//!
//! Observations are stored as 8-bit planes. When `next_obs` is `obs`
//! shifted by one frame (the usual case), only the new plane is kept.

use expolab_core::scene::{Observation, OBS_FRAMES, OBS_SIZE};
use rand::Rng;

use crate::DrlError;

const PLANE: usize = OBS_SIZE * OBS_SIZE;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: f32,
    pub reward: f32,
    pub next_obs: Observation,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    /// `OBS_FRAMES + 1` planes when compact, `2 * OBS_FRAMES` otherwise.
    planes: Box<[u8]>,
    action: f32,
    reward: f32,
    done: bool,
}

impl Entry {
    fn from_transition(t: &Transition) -> Self {
        let (obs, next) = (t.obs.as_bytes(), t.next_obs.as_bytes());
        let shifted = obs[PLANE..] == next[..(OBS_FRAMES - 1) * PLANE];
        let planes: Box<[u8]> = if shifted {
            [obs, &next[(OBS_FRAMES - 1) * PLANE..]].concat().into()
        } else {
            [obs, next].concat().into()
        };
        Self { planes, action: t.action, reward: t.reward, done: t.done }
    }

    fn obs(&self) -> &[u8] {
        &self.planes[..OBS_FRAMES * PLANE]
    }

    fn next_obs(&self) -> &[u8] {
        if self.planes.len() == (OBS_FRAMES + 1) * PLANE {
            &self.planes[PLANE..]
        } else {
            &self.planes[OBS_FRAMES * PLANE..]
        }
    }
}

/// A sampled minibatch; observations are `[B][4][84][84]` bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub obs: Vec<u8>,
    pub next_obs: Vec<u8>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
}

/// Fixed-capacity FIFO storage; the oldest item is overwritten first.
#[derive(Debug, Clone, PartialEq)]
pub struct Ring<T> {
    capacity: usize,
    items: Vec<T>,
    /// Slot the next push writes once the ring is full.
    cursor: usize,
    pushed: u64,
}

impl<T> Ring<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "ring capacity must be positive");
        Self { capacity, items: Vec::new(), cursor: 0, pushed: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total pushes since creation, including overwritten ones.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.cursor] = item;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        self.pushed += 1;
    }

    /// Item at logical position `i`, 0 being the oldest retained.
    pub fn get(&self, i: usize) -> Option<&T> {
        (i < self.len()).then(|| &self.items[(self.cursor + i) % self.len()])
    }

    /// Logical positions drawn uniformly with replacement.
    pub fn sample_indices(&self, rng: &mut impl Rng, n: usize) -> Result<Vec<usize>, DrlError> {
        if self.len() < n || n == 0 {
            return Err(DrlError::Protocol(format!("cannot sample {n} items from a buffer holding {}", self.len())));
        }
        Ok((0..n).map(|_| rng.random_range(0..self.len())).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        (0..self.len()).map(|i| &self.items[(self.cursor + i) % self.len()])
    }

    fn from_parts(capacity: usize, items: Vec<T>, pushed: u64) -> Self {
        Self { capacity, items, cursor: 0, pushed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    ring: Ring<Entry>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { ring: Ring::new(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.ring.capacity()
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn pushed(&self) -> u64 {
        self.ring.pushed()
    }

    pub fn push(&mut self, t: &Transition) {
        self.ring.push(Entry::from_transition(t));
    }

    /// Transition at logical position `i`, 0 being the oldest retained.
    pub fn get(&self, i: usize) -> Option<Transition> {
        let e = self.ring.get(i)?;
        Some(Transition {
            obs: Observation::from_planes(e.obs().to_vec()).expect("stored planes"),
            action: e.action,
            reward: e.reward,
            next_obs: Observation::from_planes(e.next_obs().to_vec()).expect("stored planes"),
            done: e.done,
        })
    }

    /// A minibatch of `n` transitions drawn uniformly with replacement.
    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Result<Batch, DrlError> {
        let idx = self.ring.sample_indices(rng, n)?;
        let obs_len = OBS_FRAMES * PLANE;
        let mut batch = Batch {
            size: n,
            obs: Vec::with_capacity(n * obs_len),
            next_obs: Vec::with_capacity(n * obs_len),
            actions: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
        };
        for i in idx {
            let e = self.ring.get(i).expect("sampled index in range");
            batch.obs.extend_from_slice(e.obs());
            batch.next_obs.extend_from_slice(e.next_obs());
            batch.actions.push(e.action);
            batch.rewards.push(e.reward);
            batch.dones.push(e.done);
        }
        Ok(batch)
    }

    /// Serialises the buffer in logical (oldest-first) order.
    pub fn write_to(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        w.write_all(&(self.capacity() as u64).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.pushed().to_le_bytes())?;
        for e in self.ring.iter() {
            w.write_all(&(e.planes.len() as u32).to_le_bytes())?;
            w.write_all(&e.planes)?;
            w.write_all(&e.action.to_le_bytes())?;
            w.write_all(&e.reward.to_le_bytes())?;
            w.write_all(&[u8::from(e.done)])?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl std::io::Read) -> std::io::Result<Self> {
        let mut u64buf = [0u8; 8];
        let mut read_u64 = |r: &mut dyn std::io::Read| -> std::io::Result<u64> {
            r.read_exact(&mut u64buf)?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let capacity = read_u64(r)? as usize;
        let len = read_u64(r)? as usize;
        let pushed = read_u64(r)?;
        let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
        if capacity == 0 || len > capacity {
            return Err(bad("replay header is inconsistent"));
        }
        let mut entries = Vec::with_capacity(len);
        for _ in 0..len {
            let mut b4 = [0u8; 4];
            r.read_exact(&mut b4)?;
            let n = u32::from_le_bytes(b4) as usize;
            if n != (OBS_FRAMES + 1) * PLANE && n != 2 * OBS_FRAMES * PLANE {
                return Err(bad("replay entry has an unexpected size"));
            }
            let mut planes = vec![0u8; n];
            r.read_exact(&mut planes)?;
            r.read_exact(&mut b4)?;
            let action = f32::from_le_bytes(b4);
            r.read_exact(&mut b4)?;
            let reward = f32::from_le_bytes(b4);
            let mut d = [0u8; 1];
            r.read_exact(&mut d)?;
            entries.push(Entry { planes: planes.into(), action, reward, done: d[0] != 0 });
        }
        // Entries were written oldest-first, so logical order starts at slot 0.
        Ok(Self { ring: Ring::from_parts(capacity, entries, pushed) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(tag: u8) -> Observation {
        Observation::from_planes((0..OBS_FRAMES).flat_map(|k| vec![tag.wrapping_add(k as u8); PLANE]).collect()).unwrap()
    }

    fn transition(tag: u8) -> Transition {
        Transition { obs: obs(tag), action: f32::from(tag) / 255.0, reward: f32::from(tag), next_obs: obs(tag.wrapping_add(1)), done: false }
    }

    #[test]
    fn compact_storage_round_trips() {
        let mut buf = ReplayBuffer::new(4);
        let t = transition(7);
        buf.push(&t);
        assert_eq!(buf.ring.get(0).unwrap().planes.len(), 5 * PLANE);
        assert_eq!(buf.get(0).unwrap(), t);
        let odd = Transition { next_obs: obs(100), ..transition(3) };
        buf.push(&odd);
        assert_eq!(buf.get(1).unwrap(), odd);
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(3);
        for tag in 0..5u8 {
            buf.push(&transition(tag));
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f32> = (0..3).map(|i| buf.get(i).unwrap().reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_needs_enough_data() {
        let mut buf = ReplayBuffer::new(10);
        buf.push(&transition(1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.sample(&mut rng, 2), Err(DrlError::Protocol(_))));
        assert!(buf.sample(&mut rng, 1).is_ok());
    }

    #[test]
    fn serialisation_round_trip() {
        let mut buf = ReplayBuffer::new(3);
        for tag in 0..5u8 {
            buf.push(&transition(tag));
        }
        let mut bytes = Vec::new();
        buf.write_to(&mut bytes).unwrap();
        let back = ReplayBuffer::read_from(&mut bytes.as_slice()).unwrap();
        for i in 0..3 {
            assert_eq!(back.get(i), buf.get(i));
        }
        assert_eq!(back.pushed(), 5);
    }
}
