//! Initial conditions, velocity sourcing, trajectory shards and the
//! datasets built from them.

pub mod dp;
pub mod generate;
pub mod pulse;
pub mod samples;
pub mod shard;
pub mod velocity;

pub use dp::{build_dataset_dp, DpDataset, DpPair, DpStats};
pub use generate::{generate_dataset, generate_split, load_split, DatasetConfig, DatasetManifest, Split};
pub use pulse::{sample_initial, PulseParams};
pub use samples::{build_dataset_d, draw_depth, draw_multistep_index, DepthMode, SampleIndex};
pub use shard::{make_trajectory, TrajectoryShard};
pub use velocity::{synth_velocity, SourceConfig, VelocityKind, VelocitySampler};
