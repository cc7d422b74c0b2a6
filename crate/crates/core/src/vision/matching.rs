//! Brute-force Hamming matching with mutual consistency and a ratio test.

use super::orb::{Descriptor, Features};

/// Best-to-second-best distance ratio a match must beat.
pub const RATIO: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Match {
    pub index_a: usize,
    pub index_b: usize,
    pub distance: u32,
}

/// Nearest neighbour of `d` in `pool` if it passes the ratio test.
fn best_passing(d: &Descriptor, pool: &[Descriptor]) -> Option<(usize, u32)> {
    let mut best = (usize::MAX, u32::MAX);
    let mut second = u32::MAX;
    for (j, other) in pool.iter().enumerate() {
        let dist = d.hamming(other);
        if dist < best.1 {
            second = best.1;
            best = (j, dist);
        } else if dist < second {
            second = dist;
        }
    }
    if best.0 == usize::MAX {
        return None;
    }
    let passes = second == u32::MAX || f64::from(best.1) < RATIO * f64::from(second);
    passes.then_some(best)
}

/// Pairs `(i, j)` where `j` is the ratio-tested nearest neighbour of `i` in
/// `b` and `i` is the ratio-tested nearest neighbour of `j` in `a`.
pub fn match_features(a: &Features, b: &Features) -> Vec<Match> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let back: Vec<Option<(usize, u32)>> = b.descriptors.iter().map(|d| best_passing(d, &a.descriptors)).collect();
    a.descriptors
        .iter()
        .enumerate()
        .filter_map(|(i, d)| {
            let (j, distance) = best_passing(d, &b.descriptors)?;
            (back[j].map(|(k, _)| k) == Some(i)).then_some(Match { index_a: i, index_b: j, distance })
        })
        .collect()
}
