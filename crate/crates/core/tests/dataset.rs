use std::collections::BTreeMap;
use std::fs;

use toolsynth::geometry::{feasible, ScenarioType};
use toolsynth::scenegen::{generate_dataset, load_split, rasterize_scenario, rasterize_tool, read_manifest, DatasetConfig, Split};

fn small() -> DatasetConfig {
    DatasetConfig {
        resolution: 32,
        train_per_type: [12, 8, 8, 6, 0],
        validation_per_type: [4, 4, 2, 2, 6],
        seed: 5,
        ..DatasetConfig::desk()
    }
}

#[test]
fn generation_is_balanced_reproducible_and_loadable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small();
    let m = generate_dataset(&cfg, a.path()).unwrap();
    generate_dataset(&cfg, b.path()).unwrap();
    assert_eq!(
        fs::read(a.path().join("manifest.jsonl")).unwrap(),
        fs::read(b.path().join("manifest.jsonl")).unwrap()
    );
    assert_eq!(read_manifest(a.path()).unwrap(), m);

    let mut counts: BTreeMap<(&str, ScenarioType), (usize, usize)> = BTreeMap::new();
    for r in &m.records {
        let c = counts.entry((r.split.name(), r.scn_type)).or_default();
        c.0 += 1;
        c.1 += r.label as usize;
        assert_eq!(feasible(&r.scenario, &r.tool, &cfg.oracle).unwrap(), r.label == 1, "{}", r.id);
    }
    for (i, t) in ScenarioType::ALL.iter().enumerate() {
        for (split, want) in [(Split::Train, cfg.train_per_type[i]), (Split::Validation, cfg.validation_per_type[i])] {
            let got = counts.get(&(split.name(), *t)).copied().unwrap_or((0, 0));
            assert_eq!(got, (want, want / 2), "{t} {}", split.name());
        }
    }

    let val = load_split(a.path(), &m, Split::Validation).unwrap();
    assert_eq!(val.len(), 18);
    for inst in &val {
        assert_eq!(inst.task_raster, rasterize_scenario(&inst.record.scenario, 32));
        assert_eq!(inst.tool_raster, rasterize_tool(&inst.record.tool, 32).unwrap());
    }
}

#[test]
fn a_different_seed_changes_the_data() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m1 = generate_dataset(&small(), a.path()).unwrap();
    let m2 = generate_dataset(&DatasetConfig { seed: 6, ..small() }, b.path()).unwrap();
    assert_ne!(m1.summary.manifest_sha256, m2.summary.manifest_sha256);
}

#[test]
fn odd_counts_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig {
        train_per_type: [3, 2, 2, 2, 0],
        ..small()
    };
    assert!(generate_dataset(&cfg, dir.path()).is_err());
}
