use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::EvalConfig;
use super::metrics::{compute_metrics, MetricsReport};
use super::pretrain::stack_views;
use crate::augment::{apply_augmentation, AugmentConfig, AugmentDraw, PseudoLabel, RoiId};
use crate::dataio::{DatasetItem, SplitSpec};
use crate::encoder::{Encoder, EncoderConfig, Mode};
use crate::error::{Error, Result};
use crate::nn::{Adam, Linear, Module, Param, Tensor};

/// One clip-level heart-rate prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject_id: String,
    pub clip_id: String,
    pub pred_bpm: f64,
    pub true_bpm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub metrics: MetricsReport,
    pub predictions: Vec<Prediction>,
    /// `subject/clip` of every clip the head (and encoder, when fine-tuning) trained on.
    pub train_clips: Vec<String>,
    pub test_clips: Vec<String>,
}

/// Starting point of fine-tuning.
pub enum FinetuneInit {
    Pretrained(Encoder<f32>),
    Random { config: EncoderConfig, seed: u64 },
}

/// Randomly initialised encoder, as used for control runs.
pub fn random_encoder(config: &EncoderConfig, seed: u64) -> Result<Encoder<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Encoder::new(config, &mut rng)
}

fn clip_key(item: &DatasetItem) -> String {
    format!("{}/{}", item.label.subject_id, item.label.clip_id)
}

/// Train and test items of a subject-exclusive split.
fn partition<'a>(items: &'a [DatasetItem], split: &SplitSpec) -> Result<(Vec<&'a DatasetItem>, Vec<&'a DatasetItem>)> {
    split.validate()?;
    let train: Vec<_> = items.iter().filter(|i| split.is_train(&i.label.subject_id)).collect();
    let test: Vec<_> = items.iter().filter(|i| split.is_test(&i.label.subject_id)).collect();
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidSplit(format!("{} train and {} test clips; both must be non-empty", train.len(), test.len())));
    }
    Ok((train, test))
}

fn window_config(encoder: &EncoderConfig, eval: &EvalConfig) -> AugmentConfig {
    AugmentConfig {
        strides: vec![eval.eval_stride],
        rois: vec![RoiId::WholeFace],
        clip_len: encoder.clip_len,
        frame_size: encoder.frame_size,
    }
}

/// Non-overlapping window starts covering the clip.
pub fn window_starts(frames: usize, clip_len: usize, stride: usize, max_windows: usize) -> Result<Vec<usize>> {
    let span = (clip_len - 1) * stride + 1;
    if frames < span {
        return Err(Error::ClipTooShort {
            frames,
            reason: format!("evaluation window needs {span} frames"),
        });
    }
    let mut starts: Vec<usize> = (0..=frames - span).step_by(span).collect();
    if max_windows > 0 {
        starts.truncate(max_windows);
    }
    Ok(starts)
}

fn window(item: &DatasetItem, cfg: &AugmentConfig, start: usize) -> Result<crate::dataio::Clip> {
    let draw = AugmentDraw {
        label: PseudoLabel { roi: 0, stride: 0 },
        stride: cfg.strides[0],
        start,
        roi: RoiId::WholeFace,
    };
    Ok(apply_augmentation(&item.clip, &item.landmarks, cfg, draw)?.clip)
}

/// Refreshes batch-norm running statistics from training windows so that
/// inference-mode features match the batch statistics used while training.
fn recalibrate(encoder: &mut Encoder<f32>, items: &[&DatasetItem], cfg: &AugmentConfig, eval: &EvalConfig) -> Result<()> {
    let mut clips = Vec::new();
    for item in items {
        for start in window_starts(item.clip.frames(), cfg.clip_len, cfg.strides[0], eval.max_windows)? {
            clips.push(window(item, cfg, start)?);
        }
    }
    for chunk in clips.chunks(eval.inference_batch).filter(|c| c.len() >= 2) {
        encoder.forward(&stack_views::<f32>(&chunk.iter().collect::<Vec<_>>())?, Mode::Train)?;
    }
    Ok(())
}

/// Eval-mode features of every window; returns features and the owning item index.
fn window_features(encoder: &mut Encoder<f32>, items: &[&DatasetItem], cfg: &AugmentConfig, eval: &EvalConfig) -> Result<(Tensor<f32>, Vec<usize>)> {
    let mut owners = Vec::new();
    let mut clips = Vec::new();
    let mut features = Vec::new();
    let mut flush = |clips: &mut Vec<crate::dataio::Clip>, features: &mut Vec<f32>| -> Result<()> {
        if clips.is_empty() {
            return Ok(());
        }
        let x = stack_views::<f32>(&clips.iter().collect::<Vec<_>>())?;
        features.extend_from_slice(encoder.forward(&x, Mode::Eval)?.data());
        clips.clear();
        Ok(())
    };
    for (index, item) in items.iter().enumerate() {
        for start in window_starts(item.clip.frames(), cfg.clip_len, cfg.strides[0], eval.max_windows)? {
            clips.push(window(item, cfg, start)?);
            owners.push(index);
            if clips.len() == eval.inference_batch {
                flush(&mut clips, &mut features)?;
            }
        }
    }
    flush(&mut clips, &mut features)?;
    let dim = features.len() / owners.len().max(1);
    Ok((Tensor::from_vec(&[owners.len(), dim], features)?, owners))
}

/// Feature spreads below this fraction of the largest one are raised to it.
const SD_FLOOR: f64 = 0.01;

/// Affine heart-rate head on standardised features, predicting the
/// standardised target. Standardisation is fitted once on the training
/// windows and then frozen.
#[derive(Debug, Clone)]
struct RegressionHead {
    mean: Vec<f32>,
    scale: Vec<f32>,
    y_mean: f64,
    y_std: f64,
    fc: Linear<f32>,
}

impl RegressionHead {
    fn fit(features: &Tensor<f32>, targets: &[f64], seed: u64) -> Self {
        let (n, d) = (features.dim(0), features.dim(1));
        let mut mean = vec![0.0f32; d];
        let mut sd = vec![0.0f64; d];
        for j in 0..d {
            let col: Vec<f64> = (0..n).map(|i| features.row(i)[j] as f64).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            sd[j] = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            mean[j] = m as f32;
        }
        // Nearly constant features would otherwise be blown up to noise.
        let floor = (SD_FLOOR * sd.iter().cloned().fold(0.0, f64::max)).max(1e-8);
        let scale: Vec<f32> = sd.iter().map(|&s| (1.0 / s.max(floor)) as f32).collect();
        let y_mean = targets.iter().sum::<f64>() / targets.len() as f64;
        let y_sd = (targets.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / targets.len() as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            mean,
            scale,
            y_mean,
            y_std: if y_sd > 1e-8 { y_sd } else { 1.0 },
            fc: Linear::new(d, 1, &mut rng),
        }
    }

    fn standardise(&self, h: &Tensor<f32>) -> Tensor<f32> {
        let d = h.dim(1);
        let mut out = h.clone();
        for row in out.data_mut().chunks_mut(d) {
            for j in 0..d {
                row[j] = (row[j] - self.mean[j]) * self.scale[j];
            }
        }
        out
    }

    /// Standardised predictions.
    fn forward(&mut self, h: &Tensor<f32>, record: bool) -> Vec<f64> {
        let out = self.fc.forward(&self.standardise(h), record);
        out.data().iter().map(|&v| v as f64).collect()
    }

    fn to_bpm(&self, standardised: f64) -> f64 {
        self.y_mean + self.y_std * standardised
    }

    fn target(&self, bpm: f64) -> f64 {
        (bpm - self.y_mean) / self.y_std
    }

    /// L1 loss on standardised targets; returns the loss and its gradient w.r.t. `h`.
    fn l1_backward(&mut self, pred: &[f64], targets: &[f64]) -> (f64, Tensor<f32>) {
        let n = pred.len() as f64;
        let mut loss = 0.0;
        let grad: Vec<f32> = pred
            .iter()
            .zip(targets)
            .map(|(&p, &t)| {
                let e = p - self.target(t);
                loss += e.abs();
                (e.signum() / n) as f32
            })
            .collect();
        let dy = Tensor::from_vec(&[pred.len(), 1], grad).expect("column");
        let mut dh = self.fc.backward(&dy);
        let d = dh.dim(1);
        for row in dh.data_mut().chunks_mut(d) {
            for j in 0..d {
                row[j] *= self.scale[j];
            }
        }
        (loss / n, dh)
    }
}

impl Module<f32> for RegressionHead {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f32>)) {
        self.fc.visit(prefix, f);
    }
}

struct Finetunable<'a> {
    encoder: &'a mut Encoder<f32>,
    head: &'a mut RegressionHead,
}

impl Module<f32> for Finetunable<'_> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f32>)) {
        self.encoder.visit(prefix, f);
        self.head.visit(prefix, f);
    }
}

/// Averages window predictions per clip and scores the test clips.
fn score(head: &mut RegressionHead, features: &Tensor<f32>, owners: &[usize], test: &[&DatasetItem], train: &[&DatasetItem]) -> Result<EvalOutput> {
    let standardised = head.forward(features, false);
    let mut sums = vec![(0.0, 0usize); test.len()];
    for (&owner, &p) in owners.iter().zip(&standardised) {
        sums[owner].0 += head.to_bpm(p);
        sums[owner].1 += 1;
    }
    let predictions: Vec<Prediction> = test
        .iter()
        .zip(&sums)
        .map(|(item, &(sum, count))| Prediction {
            subject_id: item.label.subject_id.clone(),
            clip_id: item.label.clip_id.clone(),
            pred_bpm: sum / count as f64,
            true_bpm: item.label.hr_bpm,
        })
        .collect();
    let pred: Vec<f64> = predictions.iter().map(|p| p.pred_bpm).collect();
    let truth: Vec<f64> = predictions.iter().map(|p| p.true_bpm).collect();
    Ok(EvalOutput {
        metrics: compute_metrics(&pred, &truth)?,
        predictions,
        train_clips: train.iter().map(|i| clip_key(i)).collect(),
        test_clips: test.iter().map(|i| clip_key(i)).collect(),
    })
}

/// Common start of both protocols: training-window features from the
/// encoder in inference mode and a freshly initialised head fitted to them.
fn prepare(encoder: &mut Encoder<f32>, train: &[&DatasetItem], cfg: &AugmentConfig, eval: &EvalConfig) -> Result<(Tensor<f32>, Vec<f64>, RegressionHead)> {
    let (features, owners) = window_features(encoder, train, cfg, eval)?;
    let targets: Vec<f64> = owners.iter().map(|&o| train[o].label.hr_bpm).collect();
    let head = RegressionHead::fit(&features, &targets, eval.seed);
    Ok((features, targets, head))
}

/// Linear protocol: the encoder stays frozen in inference mode and only an
/// affine head on its pooled features is trained (L1 on heart rate).
pub fn linear_eval(encoder: &mut Encoder<f32>, items: &[DatasetItem], split: &SplitSpec, eval: &EvalConfig) -> Result<EvalOutput> {
    eval.validate()?;
    let (train, test) = partition(items, split)?;
    let cfg = window_config(encoder.config(), eval);
    let (features, targets, mut head) = prepare(encoder, &train, &cfg, eval)?;
    let mut adam = Adam::new(eval.head_lr);
    for epoch in 0..eval.head_epochs {
        head.zero_grad();
        let pred = head.forward(&features, true);
        let (loss, _) = head.l1_backward(&pred, &targets);
        if !loss.is_finite() {
            return Err(Error::Diverged { step: epoch, loss });
        }
        adam.step(&mut head);
    }
    let (test_features, owners) = window_features(encoder, &test, &cfg, eval)?;
    score(&mut head, &test_features, &owners, &test, &train)
}

/// Transfer protocol: encoder and head are trained end to end on random
/// training windows, starting from pretrained or random weights.
pub fn finetune(init: FinetuneInit, items: &[DatasetItem], split: &SplitSpec, eval: &EvalConfig) -> Result<EvalOutput> {
    eval.validate()?;
    let mut encoder = match init {
        FinetuneInit::Pretrained(encoder) => encoder,
        FinetuneInit::Random { config, seed } => random_encoder(&config, seed)?,
    };
    let (train, test) = partition(items, split)?;
    let cfg = window_config(encoder.config(), eval);
    if eval.finetune_epochs > 0 {
        recalibrate(&mut encoder, &train, &cfg, eval)?;
    }
    let (_, _, mut head) = prepare(&mut encoder, &train, &cfg, eval)?;
    let mut adam = Adam::new(eval.finetune_lr);
    let mut rng = ChaCha8Rng::seed_from_u64(eval.seed);
    rng.set_stream(1);
    let span = (cfg.clip_len - 1) * eval.eval_stride + 1;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    for _ in 0..eval.finetune_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(eval.finetune_batch_size).filter(|b| b.len() >= 2) {
            let mut clips = Vec::with_capacity(batch.len());
            for &i in batch {
                let frames = train[i].clip.frames();
                if frames < span {
                    return Err(Error::ClipTooShort {
                        frames,
                        reason: format!("evaluation window needs {span} frames"),
                    });
                }
                clips.push(window(train[i], &cfg, rng.random_range(0..=frames - span))?);
            }
            let targets: Vec<f64> = batch.iter().map(|&i| train[i].label.hr_bpm).collect();
            let x = stack_views::<f32>(&clips.iter().collect::<Vec<_>>())?;
            let mut model = Finetunable {
                encoder: &mut encoder,
                head: &mut head,
            };
            model.zero_grad();
            let h = model.encoder.forward(&x, Mode::Train)?;
            let pred = model.head.forward(&h, true);
            let (loss, dh) = model.head.l1_backward(&pred, &targets);
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            model.encoder.backward(&dh);
            adam.step(&mut model);
            step += 1;
        }
    }
    let (test_features, owners) = window_features(&mut encoder, &test, &cfg, eval)?;
    score(&mut head, &test_features, &owners, &test, &train)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::nn::parameter_digest;
    use crate::pipeline::fixtures;

    #[test]
    fn windows_tile_without_overlap() {
        // Span (16 - 1) * 2 + 1 = 31 frames.
        assert_eq!(window_starts(150, 16, 2, 0).unwrap(), vec![0, 31, 62, 93]);
        assert_eq!(window_starts(150, 16, 2, 2).unwrap(), vec![0, 31]);
        assert_eq!(window_starts(31, 16, 2, 0).unwrap(), vec![0]);
        assert!(matches!(window_starts(30, 16, 2, 0), Err(Error::ClipTooShort { frames: 30, .. })));
    }

    #[test]
    fn linear_eval_keeps_the_encoder_frozen_and_audits_the_split() {
        let (items, split) = fixtures::corpus();
        let mut encoder = random_encoder(&fixtures::encoder(), 1).unwrap();
        let before = parameter_digest(&mut encoder);
        let out = linear_eval(&mut encoder, &items, &split, &fixtures::eval_config()).unwrap();
        assert_eq!(parameter_digest(&mut encoder), before);
        assert_eq!(out.metrics.n, 4);
        assert_eq!(out.train_clips.len(), 12);
        assert!(out.train_clips.iter().all(|c| !c.starts_with("subject003/")));
        assert!(out.test_clips.iter().all(|c| c.starts_with("subject003/")));
        for p in &out.predictions {
            assert!(split.is_test(&p.subject_id));
            assert!(p.pred_bpm.is_finite());
        }
    }

    #[test]
    fn overlapping_or_empty_splits_are_rejected() {
        let (items, split) = fixtures::corpus();
        let mut overlapping = split.clone();
        overlapping.test_subjects.insert("subject000".into());
        let mut encoder = random_encoder(&fixtures::encoder(), 1).unwrap();
        let eval = fixtures::eval_config();
        assert!(matches!(linear_eval(&mut encoder, &items, &overlapping, &eval), Err(Error::SplitOverlap(_))));
        let unseen = SplitSpec::new(split.train_subjects.clone(), BTreeSet::from(["nobody".to_string()])).unwrap();
        assert!(matches!(
            finetune(FinetuneInit::Pretrained(encoder), &items, &unseen, &eval),
            Err(Error::InvalidSplit(_))
        ));
    }

    #[test]
    fn zero_epoch_finetune_is_linear_eval_with_an_untrained_head() {
        let (items, split) = fixtures::corpus();
        let eval = EvalConfig {
            head_epochs: 0,
            finetune_epochs: 0,
            ..fixtures::eval_config()
        };
        let mut encoder = random_encoder(&fixtures::encoder(), 2).unwrap();
        let linear = linear_eval(&mut encoder, &items, &split, &eval).unwrap();
        let tuned = finetune(FinetuneInit::Pretrained(encoder), &items, &split, &eval).unwrap();
        assert_eq!(linear.predictions, tuned.predictions);
        assert_eq!(linear.metrics, tuned.metrics);
    }

    #[test]
    fn finetune_is_deterministic_and_moves_the_encoder() {
        let (items, split) = fixtures::corpus();
        let eval = fixtures::eval_config();
        let init = || FinetuneInit::Random {
            config: fixtures::encoder(),
            seed: 4,
        };
        let a = finetune(init(), &items, &split, &eval).unwrap();
        let b = finetune(init(), &items, &split, &eval).unwrap();
        assert_eq!(a.predictions, b.predictions);
        let mut frozen = random_encoder(&fixtures::encoder(), 4).unwrap();
        let linear = linear_eval(&mut frozen, &items, &split, &eval).unwrap();
        assert_ne!(linear.predictions, a.predictions);
    }

    #[test]
    fn perfect_regression_scores_zero_error() {
        let (items, split) = fixtures::corpus();
        let truth: Vec<f64> = items.iter().filter(|i| split.is_test(&i.label.subject_id)).map(|i| i.label.hr_bpm).collect();
        let m = compute_metrics(&truth, &truth).unwrap();
        assert_eq!((m.mae, m.rmse, m.sd), (0.0, 0.0, 0.0));
        assert!((m.r.unwrap() - 1.0).abs() < 1e-12);
    }
}
