pub mod evaluate;
pub mod generate;
pub mod parareal;
pub mod render;
pub mod sweep;
pub mod train;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use wavecorr::data::generate::{load_split, manifest_path};
use wavecorr::data::{DatasetManifest, Split, TrajectoryShard};
use wavecorr::io::{load_checkpoint, CHECKPOINT_FILE};
use wavecorr::propagator::{BilinearBaseline, FineReference, ModelSetup, NeuralPropagator, Propagator, VelocityPair};
use wavecorr::trainer::RolloutMetrics;

use crate::manifest::{ensure_dir, file_ref, to_value, CliError, CliResult, InputRef, RunManifest};

/// Which propagator a command runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelRef {
    /// E2E-V, bilinear interpolation of the coarse step.
    #[default]
    Baseline,
    /// The fine solver itself.
    Fine,
    /// A trained checkpoint directory.
    Checkpoint { path: PathBuf },
}

pub struct LoadedModel {
    pub name: String,
    pub model: Box<dyn Propagator>,
    pub input: Option<InputRef>,
}

pub fn load_model(r: &ModelRef, setup: &ModelSetup) -> CliResult<LoadedModel> {
    Ok(match r {
        ModelRef::Baseline => LoadedModel {
            name: "e2e-v".into(),
            model: Box::new(BilinearBaseline { setup: *setup }),
            input: None,
        },
        ModelRef::Fine => LoadedModel {
            name: "fine".into(),
            model: Box::new(FineReference { cfg: setup.fine }),
            input: None,
        },
        ModelRef::Checkpoint { path } => {
            let (model, m) = load_checkpoint(path)?;
            if m.setup != *setup {
                return Err(CliError::config(format!(
                    "checkpoint {} was trained on a different grid/solver setup than the dataset",
                    path.display()
                )));
            }
            let file = if path.is_dir() { path.join(CHECKPOINT_FILE) } else { path.clone() };
            LoadedModel {
                name: "e2e-jnet3".into(),
                model: Box::new(model),
                input: Some(file_ref(&file)?),
            }
        }
    })
}

pub fn checkpoint_flag(c: &Option<PathBuf>) -> Option<serde_json::Value> {
    c.as_ref().map(|p| serde_json::json!({"kind": "checkpoint", "path": p}))
}

pub fn path_flag(p: &Option<PathBuf>) -> Option<serde_json::Value> {
    p.as_ref().map(|p| serde_json::json!(p))
}

pub struct Dataset {
    pub manifest: DatasetManifest,
    pub shards: Vec<TrajectoryShard>,
    pub cs: Vec<VelocityPair>,
    pub input: InputRef,
}

pub fn load_dataset(path: &Path, split: Split) -> CliResult<Dataset> {
    let file = manifest_path(path);
    let (manifest, shards) = load_split(&file, split)?;
    let cs = velocity_pairs(&shards, &manifest.config.setup)?;
    Ok(Dataset {
        input: file_ref(&file)?,
        manifest,
        shards,
        cs,
    })
}

pub fn velocity_pairs(shards: &[TrajectoryShard], setup: &ModelSetup) -> CliResult<Vec<VelocityPair>> {
    Ok(shards
        .iter()
        .map(|s| VelocityPair::new(s.velocity.clone(), &setup.transfer))
        .collect::<wavecorr::Result<_>>()?)
}

pub fn new_network(setup: ModelSetup, jnet: wavecorr::nn::JNetConfig, seed: u64) -> CliResult<NeuralPropagator> {
    Ok(NeuralPropagator::new(setup, jnet, seed)?)
}

/// Collects inputs and outputs and writes the run manifest at the end.
pub struct Run {
    pub command: &'static str,
    pub out: PathBuf,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<InputRef>,
    pub outputs: Vec<String>,
    pub schemas: BTreeMap<String, u32>,
    start: Instant,
}

impl Run {
    pub fn start<T: Serialize>(command: &'static str, out: &Path, seed: u64, config: &T) -> CliResult<Self> {
        Ok(Run {
            command,
            out: ensure_dir(out)?,
            seed,
            config: to_value(config),
            inputs: Vec::new(),
            outputs: Vec::new(),
            schemas: BTreeMap::new(),
            start: Instant::now(),
        })
    }

    pub fn output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    pub fn csv(&mut self, name: &str, version: u32) {
        self.output(name);
        self.schemas.insert(name.to_string(), version);
    }

    pub fn finish<T: Serialize>(self, result: &T) -> CliResult<()> {
        RunManifest {
            command: self.command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            threads: rayon::current_num_threads(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            schemas: self.schemas,
            wall_seconds: self.start.elapsed().as_secs_f64(),
            result: to_value(result),
        }
        .write(&self.out)
    }
}

pub const METRICS_SCHEMA: u32 = 1;

/// `model,step,energy_mse,relative`; non-finite cells read `diverged`.
pub fn metrics_csv(rows: &[(String, RolloutMetrics)]) -> String {
    let cell = |v: f64| if v.is_finite() { format!("{v:e}") } else if v.is_nan() { "nan".into() } else { "diverged".into() };
    let mut s = String::from("model,step,energy_mse,relative\n");
    for (name, m) in rows {
        for (j, (a, r)) in m.energy_mse.iter().zip(&m.relative).enumerate() {
            let _ = writeln!(s, "{name},{},{},{}", j + 1, cell(*a), cell(*r));
        }
    }
    s
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub energy_mse: Vec<f64>,
    pub relative: Vec<f64>,
    /// Mean over steps of the energy MSE.
    pub aggregate_energy_mse: f64,
    pub diverged: bool,
}

pub fn metrics_rows(rows: &[(String, RolloutMetrics)]) -> Vec<MetricsRow> {
    rows.iter()
        .map(|(name, m)| MetricsRow {
            model: name.clone(),
            energy_mse: m.energy_mse.clone(),
            relative: m.relative.clone(),
            aggregate_energy_mse: m.energy_mse.iter().sum::<f64>() / m.energy_mse.len().max(1) as f64,
            diverged: m.energy_mse.iter().any(|v| !v.is_finite()),
        })
        .collect()
}
