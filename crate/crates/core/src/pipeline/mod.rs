//! Dataset-to-report orchestration and the named experiment configurations.

pub mod ablate;
pub mod config;
pub mod run;
pub mod synth;

pub use ablate::{run_ablation, AblationRow};
pub use config::{AblationSpec, AugmentConfig, AugmentMode, PathConfig, RunConfig, ABLATIONS};
pub use run::{open_extractor, resolve_cache_dir, run_pipeline, Extractor, RunMetrics, RunOutput};
