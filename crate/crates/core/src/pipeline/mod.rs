//! Pretraining, the linear and transfer protocols, and metrics.

mod config;
mod evaluate;
mod metrics;
mod pretrain;

pub use config::{EvalConfig, LrSchedule, TrainConfig};
pub use evaluate::{finetune, linear_eval, random_encoder, window_starts, EvalOutput, FinetuneInit, Prediction};
pub use metrics::{compute_metrics, MetricsReport};
pub use pretrain::{
    objective_and_gradients, pretrain, pretraining_objective, pseudo_label_accuracy, stack_views, write_training_log, LogRow,
    PretrainResult, PseudoLabelAccuracy,
};

#[cfg(test)]
pub(crate) mod fixtures {
    use std::collections::BTreeSet;

    use crate::augment::RoiId;
    use crate::dataio::{DatasetItem, SplitSpec};
    use crate::encoder::EncoderConfig;
    use crate::signal::{generate_corpus, CorpusConfig};

    use super::{EvalConfig, LrSchedule, TrainConfig};

    /// Four subjects with four short clips each; the last subject is held out.
    pub fn corpus() -> (Vec<DatasetItem>, SplitSpec) {
        let config = CorpusConfig {
            n_subjects: 4,
            clips_per_subject: 4,
            frame_size: 40,
            n_frames: 90,
            ..CorpusConfig::default()
        };
        let items = generate_corpus(&config).unwrap();
        let subject = |s| config.subject_id(s);
        let split = SplitSpec::new((0..3).map(subject).collect::<BTreeSet<_>>(), BTreeSet::from([subject(3)])).unwrap();
        (items, split)
    }

    pub fn encoder() -> EncoderConfig {
        EncoderConfig::tiny().with_input(8, 16)
    }

    pub fn train_config() -> TrainConfig {
        TrainConfig {
            encoder: encoder(),
            projection_dim: 16,
            tau: 1.0,
            lr: 1e-3,
            lr_schedule: LrSchedule::Constant,
            batch_size: 4,
            epochs: 2,
            strides: vec![1, 2, 3, 4, 5],
            rois: RoiId::ALL.to_vec(),
            seed: 3,
            use_pseudo_labels: true,
        }
    }

    pub fn eval_config() -> EvalConfig {
        EvalConfig {
            head_epochs: 50,
            finetune_epochs: 2,
            finetune_batch_size: 4,
            ..EvalConfig::default()
        }
    }
}
