//! Flat `key = value` run configuration.
//!
//! A file holds one `key = value` pair per line; `#` starts a comment. Keys
//! are namespaced (`synth.`, `split.`, `model.`, `train.`, `eval.`, `data.`)
//! and every key not listed in [`KEYS`] is rejected, as is a key given twice in
//! one file. `--set` style overrides are applied after the file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::RoiId;
use crate::encoder::{EncoderConfig, Variant};
use crate::error::{Error, Result};
use crate::pipeline::{EvalConfig, LrSchedule, TrainConfig};
use crate::signal::CorpusConfig;

/// Every accepted key, in snapshot order.
pub const KEYS: &[&str] = &[
    "data.dir",
    "data.fps",
    "synth.n_subjects",
    "synth.clips_per_subject",
    "synth.frame_size",
    "synth.n_frames",
    "synth.hr_min_bpm",
    "synth.hr_max_bpm",
    "synth.noise_sigma",
    "synth.pulse_strength",
    "synth.ripple_amplitude",
    "synth.ripple_hz",
    "synth.shading_horizontal",
    "synth.shading_vertical",
    "synth.shading_radial",
    "synth.facial_features",
    "synth.seed",
    "split.test_fraction",
    "split.seed",
    "model.variant",
    "model.clip_len",
    "model.frame_size",
    "model.input_norm",
    "model.checkpoint",
    "train.mlp_dim",
    "train.tau",
    "train.lr",
    "train.lr_schedule",
    "train.batch_size",
    "train.epochs",
    "train.strides",
    "train.rois",
    "train.use_pseudo_labels",
    "train.seed",
    "eval.stride",
    "eval.max_windows",
    "eval.head_lr",
    "eval.head_epochs",
    "eval.finetune_lr",
    "eval.finetune_epochs",
    "eval.finetune_batch_size",
    "eval.inference_batch",
    "eval.seed",
];

/// Fully resolved settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Dataset root in the on-disk layout; `None` means synthesise in memory.
    pub data_dir: Option<PathBuf>,
    /// Frame rate of the data, used for synthesis and the stride bound.
    pub fps: f64,
    pub corpus: CorpusConfig,
    pub test_fraction: f64,
    pub split_seed: u64,
    /// Pretrained weights for evaluation; `None` means a random encoder.
    pub checkpoint: Option<PathBuf>,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let corpus = CorpusConfig::default();
        Self {
            data_dir: None,
            fps: corpus.fps,
            corpus,
            test_fraction: 0.2,
            split_seed: 0,
            checkpoint: None,
            train: TrainConfig {
                encoder: EncoderConfig::tiny(),
                projection_dim: 64,
                tau: 1.0,
                lr: 1e-3,
                lr_schedule: LrSchedule::Constant,
                batch_size: 8,
                epochs: 20,
                strides: vec![1, 2, 3, 4, 5],
                rois: RoiId::ALL.to_vec(),
                seed: 0,
                use_pseudo_labels: true,
            },
            eval: EvalConfig::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn join<T: ToString>(values: impl IntoIterator<Item = T>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Splits `key=value`, trimming both sides.
pub fn split_pair(text: &str) -> Result<(String, String)> {
    let (key, value) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got `{text}`")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("empty key in `{text}`")));
    }
    Ok((key.to_string(), value.trim().to_string()))
}

fn check_known(key: &str) -> Result<()> {
    if KEYS.contains(&key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown config key `{key}`")))
    }
}

/// Parses file text into pairs, rejecting unknown and repeated keys.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut pairs = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = split_pair(line).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        check_known(&key).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        if pairs.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!("line {}: key `{key}` given twice", n + 1)));
        }
    }
    Ok(pairs)
}

impl RunConfig {
    /// Builds a configuration from file text plus `key=value` overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut pairs = parse_pairs(text)?;
        for o in overrides {
            let (key, value) = split_pair(o)?;
            check_known(&key)?;
            pairs.insert(key, value);
        }
        Self::from_pairs(&pairs)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    /// Defaults overlaid with `pairs`. The variant is applied first so the
    /// other `model.` keys refine it.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut config = Self::default();
        if let Some(v) = pairs.get("model.variant") {
            let variant: Variant = v.parse()?;
            let base = EncoderConfig::for_variant(variant);
            let norm = config.train.encoder.input_norm;
            config.train.encoder = EncoderConfig { input_norm: norm, ..base };
        }
        for (key, value) in pairs {
            if key != "model.variant" {
                config.set(key, value)?;
            }
        }
        config.corpus.fps = config.fps;
        config.validate()?;
        Ok(config)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let c = &mut self.corpus;
        let t = &mut self.train;
        let e = &mut self.eval;
        let v = value;
        match key {
            "data.dir" => self.data_dir = optional_path(v),
            "data.fps" => self.fps = parse_value(key, v)?,
            "synth.n_subjects" => c.n_subjects = parse_value(key, v)?,
            "synth.clips_per_subject" => c.clips_per_subject = parse_value(key, v)?,
            "synth.frame_size" => c.frame_size = parse_value(key, v)?,
            "synth.n_frames" => c.n_frames = parse_value(key, v)?,
            "synth.hr_min_bpm" => c.hr_min_bpm = parse_value(key, v)?,
            "synth.hr_max_bpm" => c.hr_max_bpm = parse_value(key, v)?,
            "synth.noise_sigma" => c.noise_sigma = parse_value(key, v)?,
            "synth.pulse_strength" => c.pulse_strength = parse_value(key, v)?,
            "synth.ripple_amplitude" => c.ripple_amplitude = parse_value(key, v)?,
            "synth.ripple_hz" => c.ripple_hz = parse_value(key, v)?,
            "synth.shading_horizontal" => c.shading.horizontal = parse_value(key, v)?,
            "synth.shading_vertical" => c.shading.vertical = parse_value(key, v)?,
            "synth.shading_radial" => c.shading.radial = parse_value(key, v)?,
            "synth.facial_features" => c.facial_features = parse_value(key, v)?,
            "synth.seed" => c.seed = parse_value(key, v)?,
            "split.test_fraction" => self.test_fraction = parse_value(key, v)?,
            "split.seed" => self.split_seed = parse_value(key, v)?,
            "model.variant" => {}
            "model.clip_len" => t.encoder.clip_len = parse_value(key, v)?,
            "model.frame_size" => t.encoder.frame_size = parse_value(key, v)?,
            "model.input_norm" => t.encoder.input_norm = v.parse()?,
            "model.checkpoint" => self.checkpoint = optional_path(v),
            "train.mlp_dim" => t.projection_dim = parse_value(key, v)?,
            "train.tau" => t.tau = parse_value(key, v)?,
            "train.lr" => t.lr = parse_value(key, v)?,
            "train.lr_schedule" => t.lr_schedule = v.parse()?,
            "train.batch_size" => t.batch_size = parse_value(key, v)?,
            "train.epochs" => t.epochs = parse_value(key, v)?,
            "train.strides" => t.strides = parse_list(key, v)?,
            "train.rois" => {
                t.rois = parse_list::<usize>(key, v)?
                    .into_iter()
                    .map(|m| RoiId::from_number(m).ok_or_else(|| Error::Config(format!("{key}: no region {m} (1-7)"))))
                    .collect::<Result<_>>()?
            }
            "train.use_pseudo_labels" => t.use_pseudo_labels = parse_value(key, v)?,
            "train.seed" => t.seed = parse_value(key, v)?,
            "eval.stride" => e.eval_stride = parse_value(key, v)?,
            "eval.max_windows" => e.max_windows = parse_value(key, v)?,
            "eval.head_lr" => e.head_lr = parse_value(key, v)?,
            "eval.head_epochs" => e.head_epochs = parse_value(key, v)?,
            "eval.finetune_lr" => e.finetune_lr = parse_value(key, v)?,
            "eval.finetune_epochs" => e.finetune_epochs = parse_value(key, v)?,
            "eval.finetune_batch_size" => e.finetune_batch_size = parse_value(key, v)?,
            "eval.inference_batch" => e.inference_batch = parse_value(key, v)?,
            "eval.seed" => e.seed = parse_value(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Config(format!("data.fps must be positive, got {}", self.fps)));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("split.test_fraction {} not in (0, 1)", self.test_fraction)));
        }
        self.corpus.validate()?;
        self.train.validate()?;
        self.train.augment_config().validate(self.fps)?;
        self.eval.validate()
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let c = &self.corpus;
        let t = &self.train;
        let e = &self.eval;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let variant = match t.encoder.variant {
            Variant::Full => "full",
            Variant::Tiny => "tiny",
        };
        let input_norm = serde_json::to_value(t.encoder.input_norm).ok();
        let schedule = serde_json::to_value(t.lr_schedule).ok();
        let name = |v: Option<serde_json::Value>| v.and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let values = vec![
            path(&self.data_dir),
            self.fps.to_string(),
            c.n_subjects.to_string(),
            c.clips_per_subject.to_string(),
            c.frame_size.to_string(),
            c.n_frames.to_string(),
            c.hr_min_bpm.to_string(),
            c.hr_max_bpm.to_string(),
            c.noise_sigma.to_string(),
            c.pulse_strength.to_string(),
            c.ripple_amplitude.to_string(),
            c.ripple_hz.to_string(),
            c.shading.horizontal.to_string(),
            c.shading.vertical.to_string(),
            c.shading.radial.to_string(),
            c.facial_features.to_string(),
            c.seed.to_string(),
            self.test_fraction.to_string(),
            self.split_seed.to_string(),
            variant.to_string(),
            t.encoder.clip_len.to_string(),
            t.encoder.frame_size.to_string(),
            name(input_norm),
            path(&self.checkpoint),
            t.projection_dim.to_string(),
            t.tau.to_string(),
            t.lr.to_string(),
            name(schedule),
            t.batch_size.to_string(),
            t.epochs.to_string(),
            join(&t.strides),
            join(t.rois.iter().map(|r| r.number())),
            t.use_pseudo_labels.to_string(),
            t.seed.to_string(),
            e.eval_stride.to_string(),
            e.max_windows.to_string(),
            e.head_lr.to_string(),
            e.head_epochs.to_string(),
            e.finetune_lr.to_string(),
            e.finetune_epochs.to_string(),
            e.finetune_batch_size.to_string(),
            e.inference_batch.to_string(),
            e.seed.to_string(),
        ];
        KEYS.iter().copied().zip(values).collect()
    }

    /// Resolved snapshot in the file format; parses back to `self`.
    pub fn render(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    /// JSON form stored inside checkpoints.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(self.pairs().into_iter().map(|(k, v)| (k.to_string(), v.into())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let config = RunConfig::default();
        assert_eq!(config.pairs().len(), KEYS.len());
        assert_eq!(RunConfig::parse(&config.render(), &[]).unwrap(), config);
    }

    #[test]
    fn comments_overrides_and_order() {
        let text = "# header\ntrain.tau = 0.1  # inline\n\nmodel.frame_size=40\nmodel.variant = full\n";
        let config = RunConfig::parse(text, &["train.tau=0.5".into(), "train.rois=1,2,7".into()]).unwrap();
        assert_eq!(config.train.tau, 0.5);
        assert_eq!(config.train.encoder.variant, Variant::Full);
        assert_eq!(config.train.encoder.frame_size, 40);
        assert_eq!(config.train.encoder.stage_channels, [64, 64, 128, 256, 512]);
        assert_eq!(config.train.rois, vec![RoiId::WholeFace, RoiId::Forehead, RoiId::Chin]);
        assert_eq!(RunConfig::parse(&config.render(), &[]).unwrap(), config);
    }

    #[test]
    fn rejects_bad_input() {
        let config_err = |text: &str, overrides: &[&str]| {
            let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
            matches!(RunConfig::parse(text, &overrides), Err(e) if e.kind() == crate::ErrorKind::Config)
        };
        assert!(config_err("train.temperature = 1\n", &[]));
        assert!(config_err("", &["nope=1"]));
        assert!(config_err("train.tau = 1\ntrain.tau = 2\n", &[]));
        assert!(config_err("train.tau\n", &[]));
        assert!(config_err("train.tau = abc\n", &[]));
        assert!(config_err("train.batch_size = 1\n", &[]));
        assert!(config_err("train.rois = 1,8\n", &[]));
        assert!(config_err("model.variant = huge\n", &[]));
        // 30 fps / 6 = 5 Hz is below twice 160 bpm.
        assert!(config_err("train.strides = 1,6\n", &[]));
        assert!(!config_err("train.strides = 1,5\n", &[]));
    }

    #[test]
    fn fps_reaches_the_corpus() {
        let config = RunConfig::parse("data.fps = 25\ntrain.strides = 1,2,3,4\n", &[]).unwrap();
        assert_eq!(config.corpus.fps, 25.0);
        assert!(RunConfig::parse("data.fps = 25\n", &[]).is_err());
    }
}
