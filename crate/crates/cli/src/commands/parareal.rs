use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wavecorr::data::Split;
use wavecorr::grid::{energy_mse, relative_energy_mse};
use wavecorr::parareal::{parareal_solve, PararealPlan, RayonExecutor, Truncation, DEFAULT_GUARD_FACTOR};
use wavecorr::propagator::FineReference;
use wavecorr::trainer::RolloutMetrics;
use wavecorr::Error;

use crate::commands::{checkpoint_flag, load_dataset, load_model, metrics_csv, metrics_rows, path_flag, ModelRef, Run, METRICS_SCHEMA};
use crate::config::resolve;
use crate::manifest::{to_value, write_text, CliError, CliResult};
use crate::Common;

pub const RESIDUAL_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PararealJob {
    pub dataset: PathBuf,
    pub split: Split,
    pub model: ModelRef,
    /// Correction iterations.
    pub k: usize,
    /// Macro intervals; `None` uses the full trajectory.
    pub intervals: Option<usize>,
    pub guard_factor: f64,
    /// Solve only the first `limit` items.
    pub limit: Option<usize>,
    /// Recorded only; Parareal draws no random numbers.
    pub seed: u64,
}

impl Default for PararealJob {
    fn default() -> Self {
        PararealJob {
            dataset: PathBuf::from("data"),
            split: Split::Test,
            model: ModelRef::Baseline,
            k: 4,
            intervals: None,
            guard_factor: DEFAULT_GUARD_FACTOR,
            limit: None,
            seed: 0,
        }
    }
}

/// Trace summary of one item, without timings so reruns compare equal.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ItemTrace {
    pub shard: usize,
    pub iterations: usize,
    pub max_residuals: Vec<f64>,
    pub residuals: Vec<Vec<f64>>,
    pub truncated: Option<Truncation>,
}

#[derive(Serialize)]
struct Summary {
    model: String,
    k: usize,
    intervals: usize,
    items: usize,
    truncated: usize,
    fine_seconds: f64,
    metrics: Vec<crate::commands::MetricsRow>,
}

pub fn run(common: &Common) -> CliResult<()> {
    let job: PararealJob = resolve(
        common,
        "parareal",
        &PararealJob::default(),
        "seed",
        &[("dataset", path_flag(&common.dataset)), ("model", checkpoint_flag(&common.checkpoint))],
    )?;
    let mut data = load_dataset(&job.dataset, job.split)?;
    if let Some(l) = job.limit {
        data.shards.truncate(l);
        data.cs.truncate(l);
    }
    let setup = data.manifest.config.setup;
    let n = job.intervals.unwrap_or(data.manifest.config.horizon);
    if n > data.manifest.config.horizon {
        return Err(CliError::config(format!("{n} intervals exceed the stored horizon {}", data.manifest.config.horizon)));
    }
    let mut plan = PararealPlan::new(n, job.k)?;
    plan.guard_factor = job.guard_factor;
    let mut run = Run::start("parareal", &common.out, job.seed, &job)?;
    run.inputs.push(data.input.clone());
    let m = load_model(&job.model, &setup)?;
    if let Some(i) = m.input.clone() {
        run.inputs.push(i);
    }
    let fine = FineReference { cfg: setup.fine };
    let solved: Vec<(ItemTrace, Vec<f64>, Vec<f64>, f64)> = data
        .shards
        .par_iter()
        .zip(&data.cs)
        .map(|(sh, c)| {
            let trace = parareal_solve(&sh.states[0], c, m.model.as_ref(), &fine, &RayonExecutor, &plan)?;
            let (mut abs, mut rel) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for (j, s) in trace.final_states().iter().enumerate().skip(1) {
                let clean = |v: f64| if v.is_finite() { v } else { f64::INFINITY };
                abs.push(clean(energy_mse(s, &sh.states[j], &c.fine)?));
                rel.push(match relative_energy_mse(s, &sh.states[j], &c.fine) {
                    Ok(v) => clean(v),
                    Err(Error::DegenerateReference) => f64::NAN,
                    Err(e) => return Err(e),
                });
            }
            let s = trace.summary();
            let item = ItemTrace {
                shard: sh.id,
                iterations: s.iterations,
                max_residuals: s.max_residuals,
                residuals: s.residuals,
                truncated: s.truncated,
            };
            Ok((item, abs, rel, s.fine_seconds.iter().sum()))
        })
        .collect::<wavecorr::Result<_>>()?;
    let mean = |pick: &dyn Fn(&(ItemTrace, Vec<f64>, Vec<f64>, f64)) -> &Vec<f64>| -> Vec<f64> {
        (0..n)
            .map(|j| solved.iter().map(|t| pick(t)[j]).sum::<f64>() / solved.len().max(1) as f64)
            .collect()
    };
    let metrics = RolloutMetrics {
        energy_mse: mean(&|t| &t.1),
        relative: mean(&|t| &t.2),
        per_shard: solved.iter().map(|t| t.1.clone()).collect(),
    };
    let name = format!("{}-parareal-k{}", m.name, job.k);
    let rows = vec![(name.clone(), metrics)];
    write_text(&run.out.join("metrics.csv"), &metrics_csv(&rows))?;
    run.csv("metrics.csv", METRICS_SCHEMA);
    let mut res = String::from("shard,iteration,max_residual\n");
    for (t, ..) in &solved {
        for (k, r) in t.max_residuals.iter().enumerate() {
            let _ = writeln!(res, "{},{},{r:e}", t.shard, k + 1);
        }
    }
    write_text(&run.out.join("residuals.csv"), &res)?;
    run.csv("residuals.csv", RESIDUAL_SCHEMA);
    let traces: Vec<&ItemTrace> = solved.iter().map(|t| &t.0).collect();
    write_text(&run.out.join("traces.json"), &serde_json::to_string_pretty(&to_value(&traces)).expect("json"))?;
    run.output("traces.json");
    let truncated = traces.iter().filter(|t| t.truncated.is_some()).count();
    let summary = Summary {
        model: name,
        k: job.k,
        intervals: n,
        items: solved.len(),
        truncated,
        fine_seconds: solved.iter().map(|t| t.3).sum(),
        metrics: metrics_rows(&rows),
    };
    eprintln!(
        "{} items, {truncated} truncated, mean energy MSE {:.4e}",
        summary.items, summary.metrics[0].aggregate_energy_mse
    );
    run.finish(&summary)
}
