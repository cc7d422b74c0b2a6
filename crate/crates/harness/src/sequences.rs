//! Where a run's image sequences come from: directories on disk, or a
//! scene generated from the master seed.

use std::sync::Arc;

use expolab_core::scene::io::load_sequence;
use expolab_core::scene::{generate_sequence, BracketedSequence, Intrinsics};

use crate::config::{missing, RunConfig};
use crate::error::Result;

/// Every configured sequence, or the generated scene when none is listed.
pub fn training_sequences(config: &RunConfig) -> Result<Vec<Arc<BracketedSequence>>> {
    if !config.sequences.is_empty() {
        return config.sequences.iter().map(|p| Ok(Arc::new(load_sequence(p)?))).collect();
    }
    Ok(vec![Arc::new(generated_sequence(config)?)])
}

/// The first configured sequence, or the generated scene.
pub fn eval_sequence(config: &RunConfig) -> Result<BracketedSequence> {
    match config.sequences.first() {
        Some(p) => Ok(load_sequence(p)?),
        None => generated_sequence(config),
    }
}

pub fn generated_sequence(config: &RunConfig) -> Result<BracketedSequence> {
    let scene = config.scene.as_ref().ok_or_else(|| missing("sequences"))?;
    let response = config.response()?;
    Ok(generate_sequence(config.seed, &scene.spec(), &response, &Intrinsics::synthetic())?)
}
