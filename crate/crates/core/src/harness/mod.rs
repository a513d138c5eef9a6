//! Data collection, bucketed sampling, training, closed-loop evaluation and
//! the ablation runner.

pub mod ablation;
pub mod buckets;
pub mod closed_loop;
pub mod dataset;
pub mod optim;
pub mod sampler;
pub mod train;

pub use buckets::{assign_buckets, Bucket, BucketWeights};
pub use closed_loop::{
    evaluate_closed_loop, evaluate_suite, run_expert_episode, run_model_episode, EpisodeResult, EpisodeRun, EvalConfig,
    EvalReport, MeanStd, ModelBackend, Policy, Split, SuiteMetrics, SuiteSpec, WorldEnv,
};
pub use dataset::{collect_dataset, CollectOptions, Dataset, DatasetHeader, Sample, SampleInfo};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use sampler::WeightedSampler;
pub use train::{
    load_checkpoint, make_batch, objective, save_checkpoint, train, train_from, CheckpointMeta, Sampling, StepRecord,
    TrainConfig, TrainOutcome,
};
