use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use wavecorr::data::Split;
use wavecorr::trainer::{grid_search, quartiles, Leaderboard, Quartiles, SweepGrid, TrainConfig};

use crate::commands::train::{execute, TrainJob};
use crate::commands::{load_dataset, path_flag, Run};
use crate::config::resolve;
use crate::manifest::{to_value, write_text, CliError, CliResult};
use crate::Common;

pub const LEADERBOARD_SCHEMA: u32 = 1;
pub const QUARTILES_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepJob {
    pub dataset: PathBuf,
    /// Every run starts from this; the grid overrides lr, weight decay and
    /// batch size, and each run gets a derived seed.
    pub base: TrainConfig,
    pub grid: SweepGrid,
    pub trials: usize,
}

impl Default for SweepJob {
    fn default() -> Self {
        SweepJob {
            dataset: PathBuf::from("data"),
            base: TrainConfig::default(),
            grid: SweepGrid::default(),
            trials: 3,
        }
    }
}

/// Box-plot summary of one grid point, or of all runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub runs: usize,
    pub scored: usize,
    pub quartiles: Option<Quartiles>,
}

pub fn variant_summaries(board: &Leaderboard) -> Vec<VariantSummary> {
    let mut groups: BTreeMap<String, (usize, Vec<f64>)> = BTreeMap::new();
    for e in &board.entries {
        let key = format!("lr={:e} wd={:e} batch={}", e.lr, e.weight_decay, e.batch_size);
        let g = groups.entry(key).or_default();
        g.0 += 1;
        g.1.extend(e.val_score);
    }
    let mut out: Vec<VariantSummary> = groups
        .into_iter()
        .map(|(variant, (runs, scores))| VariantSummary {
            variant,
            runs,
            scored: scores.len(),
            quartiles: quartiles(&scores),
        })
        .collect();
    let all = board.scores();
    out.push(VariantSummary {
        variant: "all".into(),
        runs: board.entries.len(),
        scored: all.len(),
        quartiles: quartiles(&all),
    });
    out
}

pub fn quartiles_csv(rows: &[VariantSummary]) -> String {
    let mut s = String::from("variant,runs,scored,min,q25,median,mean,q75,max\n");
    for r in rows {
        let _ = write!(s, "\"{}\",{},{}", r.variant, r.runs, r.scored);
        match &r.quartiles {
            Some(q) => {
                let _ = writeln!(s, ",{:e},{:e},{:e},{:e},{:e},{:e}", q.min, q.q25, q.median, q.mean, q.q75, q.max);
            }
            None => s.push_str(",,,,,,\n"),
        }
    }
    s
}

pub fn run(common: &Common) -> CliResult<()> {
    let job: SweepJob = resolve(common, "sweep", &SweepJob::default(), "base.seed", &[("dataset", path_flag(&common.dataset))])?;
    job.base.validate()?;
    if job.trials == 0 {
        return Err(CliError::config("trials must be at least 1"));
    }
    let train_set = load_dataset(&job.dataset, Split::Train)?;
    let val_set = load_dataset(&job.dataset, Split::Val)?;
    let mut run = Run::start("sweep", &common.out, job.base.seed, &job)?;
    run.inputs.push(train_set.input.clone());
    let total = job.grid.expand(&job.base, job.trials).len();
    let out = run.out.clone();
    let mut dirs = Vec::new();
    let board = grid_search(&job.base, &job.grid, job.trials, &mut |i, cfg| {
        let dir = format!("run_{i:03}");
        dirs.push(dir.clone());
        let tj = TrainJob {
            dataset: job.dataset.clone(),
            warm_start: None,
            train: cfg.clone(),
        };
        eprintln!("run {}/{total}: lr {:e} wd {:e} batch {}", i + 1, cfg.lr, cfg.weight_decay, cfg.batch_size);
        execute(&tj, &out.join(&dir), &train_set, &val_set, &mut |_| {})
            .map(|r| r.record)
            .map_err(|e| wavecorr::Error::Usage(e.message))
    });
    for d in dirs {
        run.output(d);
    }
    write_text(&run.out.join("leaderboard.csv"), &board.csv())?;
    run.csv("leaderboard.csv", LEADERBOARD_SCHEMA);
    write_text(&run.out.join("leaderboard.json"), &serde_json::to_string_pretty(&to_value(&board)).expect("json"))?;
    run.output("leaderboard.json");
    let summaries = variant_summaries(&board);
    write_text(&run.out.join("quartiles.csv"), &quartiles_csv(&summaries))?;
    run.csv("quartiles.csv", QUARTILES_SCHEMA);
    if let Some(best) = board.entries.first() {
        eprintln!("best: run {} score {:?}", best.run, best.val_score);
    }
    run.finish(&serde_json::json!({ "leaderboard": board, "quartiles": summaries }))
}
