use std::path::PathBuf;

use mtssrp::policy::PolicySpec;
use mtssrp_harness::config::{BenchmarkConfig, PolicyEntry};

fn smoke() -> BenchmarkConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    BenchmarkConfig::load(&path).unwrap()
}

#[test]
fn smoke_config_parses() {
    let cfg = smoke();
    assert_eq!(cfg.master_seed, 7);
    assert_eq!(cfg.horizon(), 300);
    let names: Vec<&str> = cfg.policies.iter().map(PolicyEntry::name).collect();
    assert_eq!(names, ["mtssrp", "tssrp", "oracle"]);
    assert!(matches!(cfg.policies[0].spec, PolicySpec::Mtssrp(p) if p.ks == 2 && p.q == 4));
}

#[test]
fn shipped_configs_validate() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            BenchmarkConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 2);
}

#[test]
fn hash_tracks_semantic_fields_only() {
    let cfg = smoke();
    let h = cfg.semantic_hash();
    assert_eq!(h.len(), 64);

    let mut same = cfg.clone();
    same.workers = 8;
    same.output.dir = Some("elsewhere".into());
    same.output.trajectories = vec![1, 2];
    assert_eq!(same.semantic_hash(), h);

    let edits: Vec<Box<dyn Fn(&mut BenchmarkConfig)>> = vec![
        Box::new(|c| c.master_seed += 1),
        Box::new(|c| c.replications += 1),
        Box::new(|c| c.target_arl0 = 31.0),
        Box::new(|c| c.delta_grid.push(0.5)),
        Box::new(|c| c.scenario.change_time = 3),
        Box::new(|c| c.policies.pop().map(drop).unwrap_or(())),
        Box::new(|c| c.policies[0].label = Some("renamed".into())),
        Box::new(|c| c.calibration.tolerance = 0.02),
        Box::new(|c| c.horizon = Some(301)),
    ];
    for (i, edit) in edits.iter().enumerate() {
        let mut changed = cfg.clone();
        edit(&mut changed);
        assert_ne!(changed.semantic_hash(), h, "edit {i} left the hash unchanged");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let base =
        std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")).unwrap();
    for (from, to) in [
        ("replications = 8", "replications = 0"),
        ("delta_grid = [1.0]", "delta_grid = []"),
        ("q = 4\nks = 2", "q = 41\nks = 2"),
        ("q = 4\nks = 2", "q = 4\nks = 5"),
        ("modes = 4", "modes = 0"),
        ("target_arl0 = 30.0", "target_arl0 = 0.5"),
    ] {
        let text = base.replacen(from, to, 1);
        assert_ne!(text, base);
        assert!(BenchmarkConfig::from_toml(&text).is_err(), "{to} accepted");
    }
    let dup = format!("{base}\n[[policies]]\nkind = \"oracle\"\n");
    assert!(BenchmarkConfig::from_toml(&dup).is_err());
}
