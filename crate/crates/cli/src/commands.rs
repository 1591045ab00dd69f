use std::fs;
use std::path::{Path, PathBuf};

use rppg_core::config::RunConfig;
use rppg_core::dataio::{load_dataset, subject_exclusive_split, write_dataset, DatasetItem, SplitSpec};
use rppg_core::encoder::Checkpoint;
use rppg_core::pipeline::{
    compute_metrics, finetune as run_finetune, linear_eval as run_linear_eval, pretrain as run_pretrain,
    pseudo_label_accuracy, random_encoder, write_training_log, EvalOutput, FinetuneInit, MetricsReport,
};
use rppg_core::signal::generate_corpus;
use serde::{Deserialize, Serialize};

use crate::report::{render_svg, render_table, RunSummary};
use crate::{Common, Failure};

pub const SNAPSHOT_FILE: &str = "resolved.cfg";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "training_log.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const AUDIT_FILE: &str = "audit.json";

type Outcome = Result<(), Failure>;

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    clip_id: String,
    pred_bpm: f64,
    true_bpm: f64,
}

/// Which subjects and clips each side of the split used.
#[derive(Serialize)]
struct Audit<'a> {
    train_subjects: &'a std::collections::BTreeSet<String>,
    test_subjects: &'a std::collections::BTreeSet<String>,
    train_clips: &'a [String],
    test_clips: &'a [String],
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_failure(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_failure(path, e))
}

/// Resolves the configuration, creates the output directory and writes the
/// snapshot before any work starts.
fn prepare(common: &Common) -> Result<RunConfig, Failure> {
    let config = match &common.config {
        Some(path) => RunConfig::load(path, &common.overrides)?,
        None => RunConfig::parse("", &common.overrides)?,
    };
    fs::create_dir_all(&common.out).map_err(|e| io_failure(&common.out, e))?;
    config.write_snapshot(&common.out.join(SNAPSHOT_FILE))?;
    Ok(config)
}

fn load_items(config: &RunConfig) -> Result<Vec<DatasetItem>, Failure> {
    match &config.data_dir {
        Some(dir) => {
            log::info!("loading dataset from {}", dir.display());
            Ok(load_dataset(dir)?)
        }
        None => {
            log::info!("synthesising {} subjects x {} clips", config.corpus.n_subjects, config.corpus.clips_per_subject);
            Ok(generate_corpus(&config.corpus)?)
        }
    }
}

fn split_items(config: &RunConfig, items: &[DatasetItem]) -> Result<SplitSpec, Failure> {
    let labels: Vec<_> = items.iter().map(|i| i.label.clone()).collect();
    Ok(subject_exclusive_split(&labels, config.test_fraction, config.split_seed)?)
}

pub fn synth(common: &Common) -> Outcome {
    let config = prepare(common)?;
    let items = generate_corpus(&config.corpus)?;
    write_dataset(&items, &common.out)?;
    log::info!("wrote {} clips to {}", items.len(), common.out.display());
    Ok(())
}

pub fn pretrain(common: &Common) -> Outcome {
    let config = prepare(common)?;
    let items = load_items(&config)?;
    let split = split_items(&config, &items)?;
    let (train, test): (Vec<DatasetItem>, Vec<DatasetItem>) =
        items.into_iter().partition(|i| split.is_train(&i.label.subject_id));
    log::info!("pretraining on {} clips from {} subjects", train.len(), split.train_subjects.len());
    let mut result = run_pretrain(&config.train, &train, config.to_json())?;
    result.checkpoint.save(&common.out.join(CHECKPOINT_FILE))?;
    write_training_log(&common.out.join(LOG_FILE), &result.log)?;
    let accuracy = pseudo_label_accuracy(&mut result.net, &test, &config.train.augment_config(), 4, config.eval.seed)?;
    log::info!(
        "best epoch {}; held-out roi accuracy {:.3}, stride accuracy {:.3}",
        result.best_epoch,
        accuracy.roi,
        accuracy.stride
    );
    write_json(&common.out.join("pseudo_label_accuracy.json"), &accuracy)
}

fn encoder_init(config: &RunConfig) -> Result<FinetuneInit, Failure> {
    match &config.checkpoint {
        Some(path) => {
            let net = Checkpoint::load(path)?.restore()?;
            Ok(FinetuneInit::Pretrained(net.encoder))
        }
        None => {
            log::info!("no checkpoint given: using a randomly initialised encoder");
            Ok(FinetuneInit::Random {
                config: config.train.encoder.clone(),
                seed: config.train.seed,
            })
        }
    }
}

fn write_eval_outputs(out: &Path, split: &SplitSpec, output: &EvalOutput) -> Outcome {
    write_json(&out.join(METRICS_FILE), &output.metrics)?;
    let path = out.join(PREDICTIONS_FILE);
    let mut writer = csv::Writer::from_path(&path).map_err(|e| io_failure(&path, e))?;
    for p in &output.predictions {
        writer
            .serialize(PredictionRow {
                clip_id: format!("{}/{}", p.subject_id, p.clip_id),
                pred_bpm: p.pred_bpm,
                true_bpm: p.true_bpm,
            })
            .map_err(|e| io_failure(&path, e))?;
    }
    writer.flush().map_err(|e| io_failure(&path, e))?;
    write_json(
        &out.join(AUDIT_FILE),
        &Audit {
            train_subjects: &split.train_subjects,
            test_subjects: &split.test_subjects,
            train_clips: &output.train_clips,
            test_clips: &output.test_clips,
        },
    )?;
    let m = &output.metrics;
    log::info!("n={} mae={:.3} rmse={:.3} sd={:.3} r={:?}", m.n, m.mae, m.rmse, m.sd, m.r);
    Ok(())
}

pub fn linear_eval(common: &Common) -> Outcome {
    let config = prepare(common)?;
    let items = load_items(&config)?;
    let split = split_items(&config, &items)?;
    let mut encoder = match encoder_init(&config)? {
        FinetuneInit::Pretrained(encoder) => encoder,
        FinetuneInit::Random { config, seed } => random_encoder(&config, seed)?,
    };
    let output = run_linear_eval(&mut encoder, &items, &split, &config.eval)?;
    write_eval_outputs(&common.out, &split, &output)
}

pub fn finetune(common: &Common) -> Outcome {
    let config = prepare(common)?;
    let items = load_items(&config)?;
    let split = split_items(&config, &items)?;
    let output = run_finetune(encoder_init(&config)?, &items, &split, &config.eval)?;
    write_eval_outputs(&common.out, &split, &output)
}

pub fn evaluate(common: &Common, predictions: &Path) -> Outcome {
    prepare(common)?;
    let mut reader = csv::Reader::from_path(predictions).map_err(|e| io_failure(predictions, e))?;
    let headers = reader.headers().map_err(|e| io_failure(predictions, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["clip_id", "pred_bpm", "true_bpm"] {
        return Err(io_failure(predictions, "header must be clip_id,pred_bpm,true_bpm"));
    }
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for row in reader.deserialize::<PredictionRow>() {
        let row = row.map_err(|e| io_failure(predictions, e))?;
        pred.push(row.pred_bpm);
        truth.push(row.true_bpm);
    }
    let metrics = compute_metrics(&pred, &truth)?;
    write_json(&common.out.join(METRICS_FILE), &metrics)
}

pub fn report(common: &Common, runs: &[PathBuf]) -> Outcome {
    prepare(common)?;
    let mut summaries = Vec::with_capacity(runs.len());
    for run in runs {
        let path = run.join(METRICS_FILE);
        let text = fs::read_to_string(&path).map_err(|e| io_failure(&path, e))?;
        let metrics: MetricsReport = serde_json::from_str(&text).map_err(|e| io_failure(&path, e))?;
        let name = run
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| run.display().to_string());
        summaries.push(RunSummary { name, metrics });
    }
    let table = render_table(&summaries);
    print!("{table}");
    let txt = common.out.join("report.txt");
    fs::write(&txt, table).map_err(|e| io_failure(&txt, e))?;
    let svg = common.out.join("report.svg");
    fs::write(&svg, render_svg(&summaries)).map_err(|e| io_failure(&svg, e))
}
