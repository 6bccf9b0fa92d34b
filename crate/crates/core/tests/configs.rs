use std::path::Path;

use momentum_ct::config::ExperimentConfig;
use momentum_ct::FanBeamGeometry;

fn configs_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

#[test]
fn shipped_configs_load() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(cfg.dataset_dir.starts_with(configs_dir()), "paths resolve next to the file");
            n += 1;
        }
    }
    assert!(n >= 2);
}

#[test]
fn desk_config_matches_desk_geometry() {
    let cfg = ExperimentConfig::load(&configs_dir().join("desk.toml")).unwrap();
    let g = FanBeamGeometry::desk(64, 144, 96).unwrap();
    let got = &cfg.geometry;
    assert_eq!((got.n_pixels, got.n_views, got.n_detectors), (64, 144, 96));
    assert!((got.pixel_pitch - g.pixel_pitch).abs() < 1e-9);
    assert!((got.detector_pitch - g.detector_pitch).abs() < 1e-4);
    assert_eq!(cfg.net.layers, 50);
    assert_eq!(cfg.net.first_layer_epochs, Some(20));
}
