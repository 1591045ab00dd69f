use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::augment::{augment_pair, augment_view, AugmentConfig, AugmentedView, PseudoLabel};
use crate::dataio::DatasetItem;
use crate::encoder::{Checkpoint, Mode, NetOutput, RppgNet};
use crate::error::{Error, Result};
use crate::losses::{contrastive_loss_with_grad, cross_entropy_with_grad, EmbeddingBatch, LossTerms};
use crate::nn::{Adam, Module, Real, Tensor};

/// RNG stream for view sampling; weight initialisation uses stream 0.
const AUGMENT_STREAM: u64 = 1;

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub l_contrastive: f64,
    pub l_roi: f64,
    pub l_stride: f64,
    pub l_total: f64,
    pub lr: f64,
    pub wall_time_s: f64,
}

pub struct PretrainResult {
    /// Weights of the epoch with the lowest mean training loss.
    pub net: RppgNet<f32>,
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    pub epoch_losses: Vec<f64>,
    pub best_epoch: usize,
}

/// Stacks views into `[N, 3, T, H, W]`.
pub fn stack_views<R: Real>(views: &[&crate::dataio::Clip]) -> Result<Tensor<R>> {
    let first = views.first().ok_or_else(|| Error::InvalidClip("no views to stack".into()))?;
    let (c, t, h, w) = first.pixels.dim();
    let mut data = Vec::with_capacity(views.len() * c * t * h * w);
    for v in views {
        if v.pixels.dim() != (c, t, h, w) {
            return Err(Error::ShapeMismatch {
                stage: "batch".into(),
                reason: format!("view shape {:?} differs from {:?}", v.pixels.dim(), (c, t, h, w)),
            });
        }
        data.extend(v.pixels.iter().map(|&p| R::from_f64(p as f64)));
    }
    Tensor::from_vec(&[views.len(), c, t, h, w], data)
}

fn rows<R: Real>(t: &Tensor<R>) -> Vec<Vec<f64>> {
    (0..t.dim(0)).map(|i| t.row(i).iter().map(|v| v.to_f64()).collect()).collect()
}

fn from_rows<R: Real>(rows: &[Vec<f64>]) -> Tensor<R> {
    let width = rows.first().map_or(0, Vec::len);
    Tensor::from_vec(&[rows.len(), width], rows.iter().flatten().map(|&v| R::from_f64(v)).collect()).expect("rectangular rows")
}

/// Combined loss of a forward pass and its gradients w.r.t. the projections
/// and both logit sets. Projections are renormalised in `f64` first.
/// Without pseudo-labels the cross-entropies are still reported but carry no
/// gradient and are left out of the total.
pub fn pretraining_objective<R: Real>(
    out: &NetOutput<R>,
    labels: &[PseudoLabel],
    tau: f64,
    use_pseudo_labels: bool,
) -> Result<(LossTerms, Tensor<R>, Tensor<R>, Tensor<R>)> {
    let z: Vec<Vec<f64>> = rows(&out.z)
        .into_iter()
        .map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.into_iter().map(|v| v / n).collect()
        })
        .collect();
    let batch = EmbeddingBatch::new(z, tau)?;
    let (contrastive, dz) = contrastive_loss_with_grad(&batch);
    let roi_targets: Vec<usize> = labels.iter().map(|l| l.roi).collect();
    let stride_targets: Vec<usize> = labels.iter().map(|l| l.stride).collect();
    let (roi, mut droi) = cross_entropy_with_grad(&rows(&out.roi_logits), &roi_targets)?;
    let (stride, mut dstride) = cross_entropy_with_grad(&rows(&out.stride_logits), &stride_targets)?;
    let total = if use_pseudo_labels {
        contrastive + roi + stride
    } else {
        droi.iter_mut().flatten().for_each(|g| *g = 0.0);
        dstride.iter_mut().flatten().for_each(|g| *g = 0.0);
        contrastive
    };
    Ok((
        LossTerms {
            contrastive,
            roi,
            stride,
            total,
        },
        from_rows(&dz),
        from_rows(&droi),
        from_rows(&dstride),
    ))
}

/// Zeroes gradients, runs a training forward and backward pass over the
/// paired views `x` and leaves parameter gradients in place.
///
/// A forward pass with non-finite outputs skips the backward pass and
/// reports every term as NaN.
pub fn objective_and_gradients<R: Real>(
    net: &mut RppgNet<R>,
    x: &Tensor<R>,
    labels: &[PseudoLabel],
    tau: f64,
    use_pseudo_labels: bool,
) -> Result<LossTerms> {
    net.zero_grad();
    let out = net.forward(x, Mode::Train)?;
    if !(out.z.all_finite() && out.roi_logits.all_finite() && out.stride_logits.all_finite()) {
        return Ok(LossTerms {
            contrastive: f64::NAN,
            roi: f64::NAN,
            stride: f64::NAN,
            total: f64::NAN,
        });
    }
    let (terms, dz, droi, dstride) = pretraining_objective(&out, labels, tau, use_pseudo_labels)?;
    net.backward(&dz, &droi, &dstride);
    Ok(terms)
}

fn check_dataset(items: &[DatasetItem], config: &TrainConfig, aug: &AugmentConfig) -> Result<()> {
    if items.len() < config.batch_size {
        return Err(Error::InvalidSplit(format!(
            "{} clips cannot fill a batch of {}",
            items.len(),
            config.batch_size
        )));
    }
    for item in items {
        aug.validate(item.clip.fps)?;
        if item.clip.frames() < aug.required_frames() {
            return Err(Error::ClipTooShort {
                frames: item.clip.frames(),
                reason: format!("clip {} needs {} frames for the largest stride", item.clip.video_id, aug.required_frames()),
            });
        }
    }
    Ok(())
}

/// Self-supervised pretraining: each step samples `batch_size` clips, draws
/// two augmented views per clip and minimises the combined loss with Adam.
pub fn pretrain(config: &TrainConfig, items: &[DatasetItem], run_config: serde_json::Value) -> Result<PretrainResult> {
    config.validate()?;
    let aug = config.augment_config();
    check_dataset(items, config, &aug)?;
    let mut net = RppgNet::<f32>::new(&config.net_config())?;
    let mut adam = Adam::new(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(AUGMENT_STREAM);

    let started = Instant::now();
    let mut log = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut best: Option<(f64, usize, RppgNet<f32>, Checkpoint)> = None;
    let steps_per_epoch = items.len() / config.batch_size;
    let total_steps = steps_per_epoch * config.epochs;
    let mut order: Vec<usize> = (0..items.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks_exact(config.batch_size).take(steps_per_epoch) {
            let mut views: Vec<AugmentedView> = Vec::with_capacity(2 * batch.len());
            for &i in batch {
                let (a, b) = augment_pair(&items[i].clip, &items[i].landmarks, &aug, &mut rng)?;
                views.push(a);
                views.push(b);
            }
            let labels: Vec<PseudoLabel> = views.iter().map(|v| v.label).collect();
            let x = stack_views::<f32>(&views.iter().map(|v| &v.clip).collect::<Vec<_>>())?;
            let step = log.len();
            adam.lr = config.lr_schedule.at(config.lr, step, total_steps);
            let terms = objective_and_gradients(&mut net, &x, &labels, config.tau, config.use_pseudo_labels)?;
            if !terms.total.is_finite() {
                return Err(Error::Diverged { step, loss: terms.total });
            }
            adam.step(&mut net);
            epoch_total += terms.total;
            log.push(LogRow {
                step,
                l_contrastive: terms.contrastive,
                l_roi: terms.roi,
                l_stride: terms.stride,
                l_total: terms.total,
                lr: adam.lr,
                wall_time_s: started.elapsed().as_secs_f64(),
            });
        }
        let mean = epoch_total / steps_per_epoch as f64;
        log::info!("epoch {epoch}: mean loss {mean:.4}");
        epoch_losses.push(mean);
        if best.as_ref().is_none_or(|(loss, ..)| mean < *loss) {
            let checkpoint = Checkpoint::capture(&mut net, Some(&adam), Some(&rng), run_config.clone(), epoch + 1);
            best = Some((mean, epoch, net.clone(), checkpoint));
        }
    }
    let (_, best_epoch, net, checkpoint) = best.expect("at least one epoch");
    Ok(PretrainResult {
        net,
        checkpoint,
        log,
        epoch_losses,
        best_epoch,
    })
}

pub fn write_training_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| Error::csv(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Held-out accuracy of both pseudo-label classifiers on freshly sampled views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelAccuracy {
    pub roi: f64,
    pub stride: f64,
    pub views: usize,
}

pub fn pseudo_label_accuracy(
    net: &mut RppgNet<f32>,
    items: &[DatasetItem],
    aug: &AugmentConfig,
    views_per_clip: usize,
    seed: u64,
) -> Result<PseudoLabelAccuracy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut views = Vec::new();
    for item in items {
        for _ in 0..views_per_clip {
            views.push(augment_view(&item.clip, &item.landmarks, aug, &mut rng)?);
        }
    }
    let argmax = |row: &[f32]| (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
    let (mut roi_hits, mut stride_hits) = (0, 0);
    for chunk in views.chunks(32) {
        let x = stack_views::<f32>(&chunk.iter().map(|v| &v.clip).collect::<Vec<_>>())?;
        let out = net.forward(&x, Mode::Eval)?;
        for (i, v) in chunk.iter().enumerate() {
            roi_hits += usize::from(argmax(out.roi_logits.row(i)) == v.label.roi);
            stride_hits += usize::from(argmax(out.stride_logits.row(i)) == v.label.stride);
        }
    }
    let n = views.len().max(1) as f64;
    Ok(PseudoLabelAccuracy {
        roi: roi_hits as f64 / n,
        stride: stride_hits as f64 / n,
        views: views.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{fixtures, LrSchedule};

    #[test]
    fn two_epochs_on_sixteen_clips_reduce_the_loss() {
        let (items, _) = fixtures::corpus();
        assert_eq!(items.len(), 16);
        let config = fixtures::train_config();
        let result = pretrain(&config, &items, serde_json::Value::Null).unwrap();
        assert_eq!(result.log.len(), 8);
        assert_eq!(result.epoch_losses.len(), 2);
        assert!(result.epoch_losses[1] < result.epoch_losses[0], "{:?}", result.epoch_losses);
        assert_eq!(result.best_epoch, 1);
        for row in &result.log {
            assert!((row.l_total - (row.l_contrastive + row.l_roi + row.l_stride)).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_run() {
        let (items, _) = fixtures::corpus();
        let config = TrainConfig {
            epochs: 1,
            ..fixtures::train_config()
        };
        let a = pretrain(&config, &items, serde_json::Value::Null).unwrap();
        let b = pretrain(&config, &items, serde_json::Value::Null).unwrap();
        let losses = |r: &PretrainResult| r.log.iter().map(|row| row.l_total).collect::<Vec<_>>();
        assert_eq!(losses(&a), losses(&b));
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    }

    #[test]
    fn without_pseudo_labels_only_the_contrastive_term_counts() {
        let (items, _) = fixtures::corpus();
        let config = TrainConfig {
            epochs: 1,
            use_pseudo_labels: false,
            ..fixtures::train_config()
        };
        let result = pretrain(&config, &items, serde_json::Value::Null).unwrap();
        for row in &result.log {
            assert_eq!(row.l_total, row.l_contrastive);
            assert!(row.l_roi > 0.0 && row.l_stride > 0.0);
        }
    }

    #[test]
    fn cosine_schedule_is_logged() {
        let (items, _) = fixtures::corpus();
        let config = TrainConfig {
            lr_schedule: LrSchedule::Cosine,
            ..fixtures::train_config()
        };
        let result = pretrain(&config, &items, serde_json::Value::Null).unwrap();
        let lrs: Vec<f64> = result.log.iter().map(|r| r.lr).collect();
        assert_eq!(lrs[0], config.lr);
        assert!(lrs.windows(2).all(|w| w[1] < w[0]), "{lrs:?}");
        // Half-cosine oracle at step 4 of 8.
        assert!((lrs[4] - 0.5 * config.lr).abs() < 1e-15);
    }

    #[test]
    fn bad_configs_and_divergence() {
        let (items, _) = fixtures::corpus();
        let config = TrainConfig {
            batch_size: 1,
            ..fixtures::train_config()
        };
        assert!(matches!(pretrain(&config, &items, serde_json::Value::Null), Err(Error::Config(_))));
        let config = TrainConfig {
            batch_size: 17,
            ..fixtures::train_config()
        };
        assert!(matches!(pretrain(&config, &items, serde_json::Value::Null), Err(Error::InvalidSplit(_))));
        let config = TrainConfig {
            lr: 1e30,
            ..fixtures::train_config()
        };
        assert!(matches!(pretrain(&config, &items, serde_json::Value::Null), Err(Error::Diverged { .. })));
    }

    #[test]
    fn training_log_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let row = LogRow {
            step: 0,
            l_contrastive: 1.0,
            l_roi: 2.0,
            l_stride: 3.0,
            l_total: 6.0,
            lr: 1e-3,
            wall_time_s: 0.5,
        };
        write_training_log(&path, &[row]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "step,l_contrastive,l_roi,l_stride,l_total,lr,wall_time_s\n0,1.0,2.0,3.0,6.0,0.001,0.5\n");
    }
}
