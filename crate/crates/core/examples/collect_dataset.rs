//! Rolls the expert through a few scenarios, pairs each frame with the one
//! `delta` ticks earlier and shows how samples fall into training buckets.

use std::collections::BTreeMap;

use eta::harness::{assign_buckets, collect_dataset, CollectOptions, Split, SuiteSpec};
use eta::world::{CameraModel, ExpertConfig, ScenarioKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let suite = SuiteSpec {
        kinds: ScenarioKind::ALL.to_vec(),
        episodes: 10,
        split: Split::Train,
    };
    let opts = CollectOptions {
        delta_ticks: 5,
        max_ticks: None,
        camera: CameraModel::default(),
        expert: ExpertConfig::default(),
        config_hash: String::new(),
        seed: 0,
    };
    let ds = collect_dataset(&suite.build(0), &opts)?;
    println!("{} samples from {} episodes", ds.len(), ds.header.episodes.len());
    ds.check_masks()?;

    let mut per_kind: BTreeMap<String, usize> = BTreeMap::new();
    let mut per_bucket: BTreeMap<String, usize> = BTreeMap::new();
    for s in &ds.samples {
        *per_kind.entry(s.kind.to_string()).or_default() += 1;
        for b in assign_buckets(s) {
            *per_bucket.entry(b.to_string()).or_default() += 1;
        }
    }
    println!("per scenario: {per_kind:?}");
    println!("per bucket:");
    for (b, n) in &per_bucket {
        println!("  {b:<28} {n}");
    }

    let s = &ds.samples[ds.len() / 3];
    println!(
        "{} seed {} tick {} (past frame at tick {}):",
        s.kind,
        s.seed,
        s.tick,
        s.tick - s.delta_ticks
    );
    print!("{}", s.frame_now().ascii());
    print!("{}", s.mask.render('#', '.'));
    Ok(())
}
