use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use wavecorr::data::Split;
use wavecorr::grid::{stencil, Field, VelocityModel, WaveState};

use crate::commands::{checkpoint_flag, load_dataset, load_model, path_flag, ModelRef, Run};
use crate::config::resolve;
use crate::manifest::{CliError, CliResult};
use crate::render::{write_png, Scale};
use crate::Common;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderField {
    U,
    Ut,
    /// `|grad u|^2 + ut^2 / c^2` per node.
    Energy,
}

impl RenderField {
    fn name(self) -> &'static str {
        match self {
            RenderField::U => "u",
            RenderField::Ut => "ut",
            RenderField::Energy => "energy",
        }
    }

    fn extract(self, s: &WaveState, c: &VelocityModel) -> Field {
        match self {
            RenderField::U => s.u.clone(),
            RenderField::Ut => s.ut.clone(),
            RenderField::Energy => {
                let (gx, gy) = stencil::gradient(&s.u, s.grid.dx);
                let inv = c.inv_squared();
                Field::from_fn(s.u.nx(), s.u.ny(), |i, j| {
                    gx.get(i, j).powi(2) + gy.get(i, j).powi(2) + s.ut.get(i, j).powi(2) * inv.get(i, j)
                })
            }
        }
    }

    fn scale(self, m: f64) -> Scale {
        match self {
            RenderField::Energy => Scale::Unsigned(m),
            _ => Scale::Signed(m),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderJob {
    pub dataset: PathBuf,
    pub split: Split,
    /// Position of the shard within the split.
    pub shard: usize,
    /// Trajectory frames; `None` renders all.
    pub frames: Option<Vec<usize>>,
    pub fields: Vec<RenderField>,
    /// Each node becomes an `upscale x upscale` block.
    pub upscale: usize,
    /// Also renders the model's autoregressive prediction and its error.
    pub model: Option<ModelRef>,
    /// Recorded only; rendering draws no random numbers.
    pub seed: u64,
}

impl Default for RenderJob {
    fn default() -> Self {
        RenderJob {
            dataset: PathBuf::from("data"),
            split: Split::Test,
            shard: 0,
            frames: None,
            fields: vec![RenderField::U, RenderField::Ut, RenderField::Energy],
            upscale: 1,
            model: None,
            seed: 0,
        }
    }
}

pub fn run(common: &Common) -> CliResult<()> {
    let job: RenderJob = resolve(
        common,
        "render",
        &RenderJob::default(),
        "seed",
        &[("dataset", path_flag(&common.dataset)), ("model", checkpoint_flag(&common.checkpoint))],
    )?;
    let data = load_dataset(&job.dataset, job.split)?;
    let sh = data
        .shards
        .get(job.shard)
        .ok_or_else(|| CliError::config(format!("split has {} shards, asked for {}", data.shards.len(), job.shard)))?;
    let c = &data.cs[job.shard];
    let frames = job.frames.clone().unwrap_or_else(|| (0..sh.states.len()).collect());
    if let Some(f) = frames.iter().find(|&&f| f >= sh.states.len()) {
        return Err(CliError::config(format!("frame {f} beyond the {} stored states", sh.states.len())));
    }
    let mut run = Run::start("render", &common.out, job.seed, &job)?;
    run.inputs.push(data.input.clone());
    let preds = match &job.model {
        Some(r) => {
            let m = load_model(r, &data.manifest.config.setup)?;
            if let Some(i) = m.input {
                run.inputs.push(i);
            }
            let mut states = vec![sh.states[0].clone()];
            for _ in 1..sh.states.len() {
                let next = m.model.propagate(states.last().expect("non-empty"), c)?;
                states.push(next);
            }
            Some(states)
        }
        None => None,
    };
    let mut written = 0;
    for &field in &job.fields {
        let max = sh
            .states
            .iter()
            .map(|s| field.extract(s, &c.fine).max_abs())
            .fold(0.0, f64::max);
        let scale = field.scale(max);
        for &f in &frames {
            let mut emit = |prefix: &str, img: &Field| -> CliResult<()> {
                let name = format!("{prefix}_{f:02}_{}.png", field.name());
                write_png(&run.out.join(&name), img, scale, job.upscale)?;
                run.output(name);
                written += 1;
                Ok(())
            };
            emit("ref", &field.extract(&sh.states[f], &c.fine))?;
            if let Some(p) = &preds {
                emit("pred", &field.extract(&p[f], &c.fine))?;
                emit("err", &field.extract(&p[f].sub(&sh.states[f])?, &c.fine))?;
            }
        }
    }
    eprintln!("wrote {written} images to {}", run.out.display());
    run.finish(&serde_json::json!({ "images": written, "shard_id": sh.id }))
}
