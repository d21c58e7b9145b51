use wavecorr::data::generate::{generate_dataset, MANIFEST_FILE};
use wavecorr::data::{DatasetConfig, Split};

use crate::commands::Run;
use crate::config::resolve;
use crate::manifest::CliResult;
use crate::{Common, Profile};

/// The run manifest's `result` is the dataset manifest, so the output
/// directory holds a single `manifest.json` that loaders accept.
pub fn run(common: &Common) -> CliResult<()> {
    let defaults = match common.profile {
        Profile::Desk => DatasetConfig::desk(),
        Profile::Canonical => DatasetConfig::canonical(),
    };
    let cfg: DatasetConfig = resolve(common, "generate", &defaults, "seed", &[])?;
    cfg.validate()?;
    let mut run = Run::start("generate", &common.out, cfg.seed, &cfg)?;
    let dataset = generate_dataset(&cfg, &run.out)?;
    for s in &dataset.splits {
        for e in &s.shards {
            run.output(e.file.clone());
        }
    }
    run.output(MANIFEST_FILE);
    let samples = |s: Split| dataset.split(s).map(|m| m.samples).unwrap_or(0);
    eprintln!(
        "generated {} / {} / {} samples in {}",
        samples(Split::Train),
        samples(Split::Val),
        samples(Split::Test),
        run.out.display()
    );
    run.finish(&dataset)
}
