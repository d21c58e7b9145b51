//! Seeded dataset generation and the on-disk dataset manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::pulse::PulseParams;
use super::shard::{make_trajectory, ShardProvenance, TrajectoryShard};
use super::velocity::{SourceConfig, VelocitySampler};
use crate::error::{Error, Result};
use crate::propagator::ModelSetup;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const THREE_LAYERS_NOTE: &str =
    "three_layers uses c = 2.5 - 0.7[x1+x2 > -0.4] - 1.4[x1+x2 > -0.6], clamped below at 0.25 (interpretation)";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, s: Split) -> usize {
        match s {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub setup: ModelSetup,
    /// Macro intervals per trajectory.
    pub horizon: usize,
    pub shards: SplitCounts,
    pub seed: u64,
    #[serde(default)]
    pub sources: SourceConfig,
}

impl DatasetConfig {
    /// 64x64 fine grid, 50/8/8 shards of 8 intervals.
    pub fn desk() -> Self {
        DatasetConfig {
            setup: ModelSetup::desk(),
            horizon: 8,
            shards: SplitCounts {
                train: 50,
                val: 8,
                test: 8,
            },
            seed: 0,
            sources: SourceConfig::default(),
        }
    }

    /// 128x128 fine grid, 5000/625/625 shards.
    pub fn canonical() -> Self {
        DatasetConfig {
            setup: ModelSetup::canonical(),
            shards: SplitCounts {
                train: 5000,
                val: 625,
                test: 625,
            },
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.setup.validate()?;
        self.sources.validate()?;
        if self.horizon == 0 {
            return Err(Error::Config("trajectory horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// Seed of shard `index` in `split`: the first word of a ChaCha stream
/// selected by split and index, so shards can be generated in any order.
pub fn shard_seed(master: u64, split: Split, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream((split.stream() << 40) | index as u64);
    rng.next_u64()
}

/// Pulse, velocity and trajectory of one seeded shard.
pub fn generate_shard(cfg: &DatasetConfig, sampler: &VelocitySampler, id: usize, seed: u64) -> Result<TrajectoryShard> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = cfg.setup.fine.grid;
    let pulse = PulseParams::sample(&mut rng);
    let (c, meta) = sampler.sample(&mut rng, &g)?;
    let mut sh = make_trajectory(&pulse.state(&g), &c, cfg.horizon, &cfg.setup.fine)
        .map_err(|e| Error::Diverged(format!("shard {id} (seed {seed}): {e}")))?;
    sh.id = id;
    sh.provenance = Some(ShardProvenance {
        seed,
        pulse,
        velocity: meta,
    });
    Ok(sh)
}

/// All shards of one split, in memory.
pub fn generate_split(cfg: &DatasetConfig, split: Split) -> Result<Vec<TrajectoryShard>> {
    cfg.validate()?;
    let sampler = VelocitySampler::new(cfg.sources.clone())?;
    (0..cfg.shards.get(split))
        .into_par_iter()
        .map(|i| generate_shard(cfg, &sampler, i, shard_seed(cfg.seed, split, i)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub id: usize,
    pub file: String,
    pub seed: u64,
    pub sha256: String,
    pub provenance: ShardProvenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub split: Split,
    pub shards: Vec<ShardEntry>,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: DatasetConfig,
    pub splits: Vec<SplitManifest>,
    pub notes: Vec<String>,
}

impl DatasetManifest {
    pub fn split(&self, s: Split) -> Result<&SplitManifest> {
        self.splits
            .iter()
            .find(|m| m.split == s)
            .ok_or_else(|| Error::Format(format!("dataset has no {} split", s.name())))
    }

    /// Reads a dataset manifest, bare or as the `result` of a run manifest.
    pub fn read(path: &Path) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::Format(format!("{}: {e}", path.display()));
        let mut v: serde_json::Value = serde_json::from_slice(&fs::read(path)?).map_err(bad)?;
        if v.get("format_version").is_none() {
            if let Some(inner) = v.get_mut("result") {
                v = inner.take();
            }
        }
        let m: DatasetManifest = serde_json::from_value(v).map_err(bad)?;
        if m.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported dataset format version {}", m.format_version)));
        }
        Ok(m)
    }
}

/// Resolves a dataset directory or manifest path to the manifest path.
pub fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

/// Writes every split as `<split>/shard_NNNNN.bin` plus `manifest.json`.
pub fn generate_dataset(cfg: &DatasetConfig, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let sampler = VelocitySampler::new(cfg.sources.clone())?;
    let mut splits = Vec::new();
    for split in Split::ALL {
        let dir = out.join(split.name());
        fs::create_dir_all(&dir)?;
        let shards = (0..cfg.shards.get(split))
            .into_par_iter()
            .map(|i| {
                let seed = shard_seed(cfg.seed, split, i);
                let sh = generate_shard(cfg, &sampler, i, seed)?;
                let file = format!("{}/shard_{i:05}.bin", split.name());
                let sha256 = sh.write(&out.join(&file))?;
                Ok(ShardEntry {
                    id: i,
                    file,
                    seed,
                    sha256,
                    provenance: sh.provenance.expect("generated shards carry provenance"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        splits.push(SplitManifest {
            split,
            samples: shards.len() * cfg.horizon,
            shards,
        });
    }
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        config: cfg.clone(),
        splits,
        notes: vec![THREE_LAYERS_NOTE.to_string()],
    };
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Loads and checksums the shards of one split.
pub fn load_split(manifest_file: &Path, split: Split) -> Result<(DatasetManifest, Vec<TrajectoryShard>)> {
    let m = DatasetManifest::read(manifest_file)?;
    let root = manifest_file.parent().unwrap_or(Path::new("."));
    let g = m.config.setup.fine.grid;
    let shards = m
        .split(split)?
        .shards
        .iter()
        .map(|e| {
            let bytes = fs::read(root.join(&e.file))?;
            if hex::encode(Sha256::digest(&bytes)) != e.sha256 {
                return Err(Error::Format(format!("{}: checksum mismatch", e.file)));
            }
            TrajectoryShard::from_blob(&bytes, e.id, g, m.config.horizon, Some(e.provenance.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((m, shards))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shard_seeds_differ_across_splits_and_indices() {
        let a = shard_seed(7, Split::Train, 0);
        assert_ne!(a, shard_seed(7, Split::Train, 1));
        assert_ne!(a, shard_seed(7, Split::Val, 0));
        assert_ne!(a, shard_seed(8, Split::Train, 0));
        assert_eq!(a, shard_seed(7, Split::Train, 0));
    }

    #[test]
    fn canonical_counts() {
        let c = DatasetConfig::canonical();
        assert_eq!(c.shards.train * c.horizon, 40_000);
        assert_eq!(c.shards.val * c.horizon, 5_000);
    }
}
