use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wavecorr::data::Split;
use wavecorr::io::{load_checkpoint, save_checkpoint, CHECKPOINT_FILE, PARAMS_FILE};
use wavecorr::propagator::NeuralPropagator;
use wavecorr::trainer::{train, EpochRecord, Outcome, RunRecord, TrainConfig};

use crate::commands::{load_dataset, new_network, path_flag, Dataset, Run};
use crate::config::resolve;
use crate::manifest::{file_ref, write_text, CliError, CliResult};
use crate::Common;

pub const LOSS_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainJob {
    /// Dataset directory or manifest.
    pub dataset: PathBuf,
    /// Checkpoint to continue from instead of a fresh initialisation.
    pub warm_start: Option<PathBuf>,
    pub train: TrainConfig,
}

impl Default for TrainJob {
    fn default() -> Self {
        TrainJob {
            dataset: PathBuf::from("data"),
            warm_start: None,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainResult {
    pub init_checksum: String,
    pub trainable_checksum: String,
    pub record: RunRecord,
}

pub fn run(common: &Common) -> CliResult<()> {
    let job: TrainJob = resolve(
        common,
        "train",
        &TrainJob::default(),
        "train.seed",
        &[("dataset", path_flag(&common.dataset)), ("warm_start", path_flag(&common.checkpoint))],
    )?;
    job.train.validate()?;
    let train_set = load_dataset(&job.dataset, Split::Train)?;
    let val_set = load_dataset(&job.dataset, Split::Val)?;
    let out = execute(&job, &common.out, &train_set, &val_set, &mut |e| {
        let val = if e.val_mse.is_empty() {
            String::new()
        } else {
            format!(" val {:.4e}", e.val_mse.iter().sum::<f64>() / e.val_mse.len() as f64)
        };
        eprintln!("epoch {:>4} loss {:.4e} per step {:.4e}{val} ({} samples, {} aborted)", e.epoch, e.train_loss, e.step_loss, e.samples, e.aborted);
    })?;
    match &out.record.outcome {
        Outcome::Completed => Ok(()),
        Outcome::Diverged { epoch, reason } => Err(CliError::diverged(format!("training diverged at epoch {epoch}: {reason}"))),
    }
}

fn initial_model(job: &TrainJob, data: &Dataset) -> CliResult<(NeuralPropagator, u64)> {
    let setup = data.manifest.config.setup;
    match &job.warm_start {
        Some(path) => {
            let (model, m) = load_checkpoint(path)?;
            if m.setup != setup {
                return Err(CliError::config(format!("warm start {} does not match the dataset setup", path.display())));
            }
            Ok((model, m.init_seed))
        }
        None => Ok((new_network(setup, job.train.jnet.clone(), job.train.seed)?, job.train.seed)),
    }
}

/// Trains and writes `checkpoint.json`, `params.bin`, `loss.csv` and the
/// run manifest into `dir`, including after divergence.
pub fn execute(
    job: &TrainJob,
    dir: &Path,
    train_set: &Dataset,
    val_set: &Dataset,
    observer: &mut dyn FnMut(&EpochRecord),
) -> CliResult<TrainResult> {
    let (mut model, init_seed) = initial_model(job, train_set)?;
    let mut run = Run::start("train", dir, job.train.seed, job)?;
    run.inputs.push(train_set.input.clone());
    if let Some(w) = &job.warm_start {
        let f = if w.is_dir() { w.join(CHECKPOINT_FILE) } else { w.clone() };
        run.inputs.push(file_ref(&f)?);
    }
    let init_checksum = model.net().expect("network").params.checksum(true);
    let record = train(&mut model, &job.train, &train_set.shards, &val_set.shards, observer)?;
    let provenance = serde_json::json!({
        "regime": job.train.regime.name(),
        "dataset_sha256": train_set.input.sha256,
        "train": job.train,
        "warm_start": job.warm_start,
        "epochs_completed": record.epochs.len(),
        "outcome": record.outcome,
        "init_checksum": init_checksum,
    });
    let ck = save_checkpoint(&run.out, &model, init_seed, provenance)?;
    run.output(CHECKPOINT_FILE);
    run.output(PARAMS_FILE);
    write_text(&run.out.join("loss.csv"), &record.loss_csv())?;
    run.csv("loss.csv", LOSS_SCHEMA);
    if !record.pretrain.is_empty() {
        let pre = RunRecord {
            epochs: record.pretrain.clone(),
            ..record.clone()
        };
        write_text(&run.out.join("pretrain_loss.csv"), &pre.loss_csv())?;
        run.csv("pretrain_loss.csv", LOSS_SCHEMA);
    }
    let result = TrainResult {
        init_checksum,
        trainable_checksum: ck.trainable_checksum,
        record,
    };
    run.finish(&result)?;
    Ok(result)
}
