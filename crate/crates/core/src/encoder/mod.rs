//! 3-D ResNet-18 video encoder, projection head and pseudo-label
//! classifiers, plus the checkpoint container.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{config_hash, Checkpoint, CheckpointHeader, OptimizerState, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{EncoderConfig, InputNorm, NetConfig, Variant};
pub use network::{detrend, Encoder, Mode, NetOutput, ProjectionHead, RppgNet, StageShape};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::nn::{Module, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn net_config(encoder: EncoderConfig) -> NetConfig {
        NetConfig {
            encoder,
            projection_dim: 32,
            n_rois: 7,
            n_strides: 5,
            seed: 1,
        }
    }

    fn random_input(shape: &[usize], seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn tiny_trace_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut enc = Encoder::<f32>::new(&EncoderConfig::tiny(), &mut rng).unwrap();
        let (h, trace) = enc.forward_traced(&random_input(&[2, 3, 16, 32, 32], 1), Mode::Eval).unwrap();
        assert_eq!(h.shape(), &[2, 64]);
        let shapes: Vec<(&str, Vec<usize>)> = trace.into_iter().map(|s| (s.stage, s.shape)).collect();
        assert_eq!(
            shapes,
            vec![
                ("conv1", vec![16, 16, 16, 16]),
                ("maxpool", vec![16, 8, 8, 8]),
                ("conv2", vec![16, 8, 8, 8]),
                ("conv3", vec![32, 4, 4, 4]),
                ("conv4", vec![64, 2, 2, 2]),
                ("conv5", vec![64, 1, 1, 1]),
                ("pool", vec![64]),
            ]
        );
    }

    #[test]
    fn zero_input_gives_zero_features_in_eval_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut enc = Encoder::<f64>::new(&EncoderConfig::tiny(), &mut rng).unwrap();
        let h = enc.forward(&Tensor::zeros(&[1, 3, 16, 32, 32]), Mode::Eval).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_or_too_small_inputs_name_the_stage() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut enc = Encoder::<f32>::new(&EncoderConfig::tiny(), &mut rng).unwrap();
        let err = enc.forward(&Tensor::zeros(&[1, 3, 15, 32, 32]), Mode::Eval).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { ref stage, .. } if stage == "input"), "{err}");
        let err = enc.forward(&Tensor::zeros(&[1, 1, 16, 32, 32]), Mode::Eval).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { ref stage, .. } if stage == "input"), "{err}");
        assert!(enc.forward(&Tensor::zeros(&[3, 16, 32, 32]), Mode::Eval).is_err());
    }

    #[test]
    fn parameter_names_are_unique_and_shortcuts_exist_where_needed() {
        let mut net = RppgNet::<f32>::new(&net_config(EncoderConfig::tiny())).unwrap();
        let mut names = Vec::new();
        net.visit("", &mut |name, _| names.push(name.to_string()));
        let unique: BTreeSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        assert!(names.contains(&"encoder.conv3.0.shortcut.conv.weight".to_string()));
        assert!(!names.contains(&"encoder.conv2.0.shortcut.conv.weight".to_string()));
        assert!(names.contains(&"roi_head.bias".to_string()));
    }

    #[test]
    fn projections_are_unit_norm_and_not_scale_invariant() {
        let mut net = RppgNet::<f64>::new(&net_config(EncoderConfig::tiny())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = Tensor::from_vec(&[3, 64], (0..192).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let z = net.projection.forward(&h, false);
        for i in 0..3 {
            let norm: f64 = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
        let z2 = net.projection.forward(&h.map(|v| 2.0 * v), false);
        assert_ne!(z, z2);
    }

    #[test]
    fn same_seed_same_weights() {
        let mut a = RppgNet::<f32>::new(&net_config(EncoderConfig::tiny())).unwrap();
        let mut b = RppgNet::<f32>::new(&net_config(EncoderConfig::tiny())).unwrap();
        let mut va = Vec::new();
        a.visit("", &mut |_, p| va.extend(p.value.clone()));
        let mut vb = Vec::new();
        b.visit("", &mut |_, p| vb.extend(p.value.clone()));
        assert_eq!(va, vb);
    }
}
