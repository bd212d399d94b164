use std::fs;

use locbench::bench::{hash_tree, run_pipeline, BenchmarkConfig, Paradigm};
use locbench::data_io::load_dataset;
use locbench::map_localize::DEFAULT_MAP_TOLERANCE_PX;
use locbench::synth::{generate_scene, write_synth_dataset, HarnessConfig, Layout, SynthConfig};
use proptest::prelude::*;

fn harness(layout: Layout, seed: u64) -> HarnessConfig {
    let mut cfg = HarnessConfig::default();
    cfg.scene = SynthConfig { layout, n_db: 10, n_query: 5, n_points: 300, n_blurry: 1, n_dynamic: 1, seed, ..Default::default() };
    for model in cfg.features.values_mut() {
        model.dim = 32;
    }
    cfg
}

fn layout() -> impl Strategy<Value = Layout> {
    prop::sample::select(vec![Layout::Grid, Layout::Corridor, Layout::Loop])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn written_datasets_load_back_exactly(l in layout(), seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let written = write_synth_dataset(&harness(l, seed), dir.path()).unwrap();
        prop_assert_eq!(load_dataset(dir.path()).unwrap(), written);
    }

    #[test]
    fn generated_maps_are_valid(l in layout(), seed in any::<u64>()) {
        let scene = generate_scene(&harness(l, seed).scene).unwrap();
        scene.joint_map().unwrap().validate(DEFAULT_MAP_TOLERANCE_PX).unwrap();
    }
}

#[test]
fn same_seed_same_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_synth_dataset(&harness(Layout::Loop, 17), a.path()).unwrap();
    write_synth_dataset(&harness(Layout::Loop, 17), b.path()).unwrap();
    assert_eq!(hash_tree(a.path()).unwrap(), hash_tree(b.path()).unwrap());
    let c = tempfile::tempdir().unwrap();
    write_synth_dataset(&harness(Layout::Loop, 18), c.path()).unwrap();
    assert_ne!(hash_tree(a.path()).unwrap(), hash_tree(c.path()).unwrap());
}

#[test]
fn equal_manifest_hash_means_equal_outputs() {
    let data = tempfile::tempdir().unwrap();
    write_synth_dataset(&harness(Layout::Grid, 2), data.path()).unwrap();
    let cfg = BenchmarkConfig { k_grid: vec![1, 2, 5], paradigms: vec![Paradigm::Approx, Paradigm::Global], ..Default::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (_, ha) = run_pipeline(data.path(), &cfg, a.path()).unwrap();
    let (_, hb) = run_pipeline(data.path(), &cfg, b.path()).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(hash_tree(a.path()).unwrap(), hash_tree(b.path()).unwrap());

    let other = BenchmarkConfig { seed: 1, ..cfg };
    let c = tempfile::tempdir().unwrap();
    let (_, hc) = run_pipeline(data.path(), &other, c.path()).unwrap();
    assert_ne!(ha, hc, "the seed is part of the manifest");
    assert!(fs::read_to_string(c.path().join("manifest.json")).unwrap().contains("\"seed\": 1"));
}
