//! Synthetic datasets and the ablation runner.

pub mod ablation;
pub mod synth;

pub use ablation::{evaluate_heldout, run_ablation, AblationCell, AblationRow, AblationTable};
pub use synth::{generate, SynthData, SynthSpec, ORACLE};
