//! Configuration, training stages, synthesis and the check suite.

pub mod check;
pub mod checkpoint;
pub mod config;
pub mod features;
pub mod fixture;
pub mod layout;
pub mod metrics;
pub mod model;
pub mod split;
pub mod synth;
pub mod train;

pub use check::{run_checks, CheckResult};
pub use checkpoint::{latest_checkpoint, prune_checkpoints, step_dir, Checkpoint, CheckpointMeta, RngState, Stage};
pub use config::{validate_t, Profile, RunConfig};
pub use layout::RunLayout;
pub use features::{FeatureCache, UtteranceFeatures};
pub use metrics::{read_metrics, MetricRecord, MetricsWriter};
pub use model::{turn_phonemes, ContextTts, TtsExample};
pub use split::{split_corpus, split_sizes, Split};
pub use synth::{read_manifest, sweep_t, synthesize, write_sweep_csv, ManifestRow, Sidecar, Synthesizer, SweepRow};
pub use train::{
    batch_indices, load_tts, prepare_examples, resolve_checkpoint, resolved_config, run_pretrain, run_tts_train,
    pair_with_conversations, tts_eval, tts_step, Item, StageDir, TtsRun, TtsStepReport,
};
