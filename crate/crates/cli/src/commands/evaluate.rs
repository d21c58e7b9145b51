use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use wavecorr::data::Split;
use wavecorr::trainer::rollout_metrics;

use crate::commands::{checkpoint_flag, load_dataset, load_model, metrics_csv, metrics_rows, path_flag, ModelRef, Run, METRICS_SCHEMA};
use crate::config::resolve;
use crate::manifest::{to_value, write_text, CliResult};
use crate::Common;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateJob {
    pub dataset: PathBuf,
    pub split: Split,
    /// Scored alongside E2E-V, which is always included.
    pub model: ModelRef,
    pub steps: usize,
    /// Recorded only; evaluation draws no random numbers.
    pub seed: u64,
}

impl Default for EvaluateJob {
    fn default() -> Self {
        EvaluateJob {
            dataset: PathBuf::from("data"),
            split: Split::Test,
            model: ModelRef::Baseline,
            steps: 8,
            seed: 0,
        }
    }
}

pub fn run(common: &Common) -> CliResult<()> {
    let job: EvaluateJob = resolve(
        common,
        "evaluate",
        &EvaluateJob::default(),
        "seed",
        &[("dataset", path_flag(&common.dataset)), ("model", checkpoint_flag(&common.checkpoint))],
    )?;
    let data = load_dataset(&job.dataset, job.split)?;
    let setup = data.manifest.config.setup;
    let mut run = Run::start("evaluate", &common.out, job.seed, &job)?;
    run.inputs.push(data.input.clone());
    let mut refs = vec![job.model.clone()];
    if job.model != ModelRef::Baseline {
        refs.push(ModelRef::Baseline);
    }
    let mut rows = Vec::new();
    for r in &refs {
        let m = load_model(r, &setup)?;
        if let Some(i) = m.input {
            run.inputs.push(i);
        }
        let metrics = rollout_metrics(m.model.as_ref(), &data.shards, &data.cs, job.steps)?;
        eprintln!(
            "{:<10} mean energy MSE {:.4e}",
            m.name,
            metrics.energy_mse.iter().sum::<f64>() / job.steps.max(1) as f64
        );
        rows.push((m.name, metrics));
    }
    write_text(&run.out.join("metrics.csv"), &metrics_csv(&rows))?;
    run.csv("metrics.csv", METRICS_SCHEMA);
    let table = metrics_rows(&rows);
    write_text(&run.out.join("metrics.json"), &serde_json::to_string_pretty(&to_value(&table)).expect("json"))?;
    run.output("metrics.json");
    run.finish(&table)
}
