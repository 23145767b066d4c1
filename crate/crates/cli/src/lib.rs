//! Experiment orchestration for `ntn-core`: run manifests, the
//! `simulate`, `train`, `evaluate` and `sweep` modes, metrics tables and
//! training checkpoints.
//!
//! Outputs are a pure function of the manifest: every run derives its RNG
//! streams from its seed, parallel work is joined in a fixed order, and
//! floats are printed in shortest round-trip form.

pub mod checkpoint;
pub mod manifest;
pub mod metrics;
pub mod run;
pub mod stats;
pub mod sweep;

use anyhow::Result;

use manifest::{Mode, RunManifest};

/// Executes `m` and writes its files under `m.out`.
pub fn execute(m: &RunManifest) -> Result<()> {
    match m.mode {
        Mode::Simulate | Mode::Evaluate => run::cmd_simulate(m).map(drop),
        Mode::Train => run::cmd_train(m).map(drop),
        Mode::Sweep => sweep::cmd_sweep(m).map(drop),
    }
}
