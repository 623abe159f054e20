//! Experiment harness: configuration, synthetic data, cross-validation and
//! report artifacts.

mod config;
mod crossval;
mod report;
mod synth;

pub use config::{DataConfig, EvalConfig, ExperimentConfig, PolicyKind, TopicConfig};
pub use crossval::{
    average_curves, full_features, partition, suite, ABLATION_SIZES, CrossvalResult, Experiment, FoldResult, QueryResult, RunPolicy,
    RunSpec,
};
pub use report::{format_table, load_results, report, slug};
pub use synth::{make_synthetic, SynthParams, SyntheticCollection};
