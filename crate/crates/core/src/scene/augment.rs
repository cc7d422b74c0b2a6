//! Motion augmentation: image flips, frame skipping and sequence reversal.

/// One combination of the motion augmentations applied to a whole sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct AugmentationSpec {
    pub flip_h: bool,
    pub flip_v: bool,
    /// Playback speed factor, one of 1, 2, 3.
    pub skip: usize,
    pub reversed: bool,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl AugmentationSpec {
    pub const fn identity() -> Self {
        Self { flip_h: false, flip_v: false, skip: 1, reversed: false }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    /// Number of frames the augmented view of an `n`-frame sequence holds.
    pub fn augmented_len(&self, n: usize) -> usize {
        n.div_ceil(self.skip)
    }

    /// Source frame shown at augmented position `cursor`.
    pub fn source_index(&self, cursor: usize, n: usize) -> Option<usize> {
        let step = cursor.checked_mul(self.skip)?;
        if step >= n {
            return None;
        }
        Some(if self.reversed { n - 1 - step } else { step })
    }
}

/// All 24 combinations in a fixed order.
pub fn enumerate_augmentations() -> Vec<AugmentationSpec> {
    let mut specs = Vec::with_capacity(24);
    for reversed in [false, true] {
        for skip in 1..=3 {
            for flip_v in [false, true] {
                for flip_h in [false, true] {
                    specs.push(AugmentationSpec { flip_h, flip_v, skip, reversed });
                }
            }
        }
    }
    specs
}
