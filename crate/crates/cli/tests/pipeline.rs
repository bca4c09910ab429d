use std::fs;
use std::path::Path;
use std::process::Command;

use mcpl_cli::cache;
use mcpl_cli::config::{AxialSpec, Spacing};
use mcpl_cli::{Experiment, ExperimentConfig, Preset, Scope};
use mcpl_core::nonlinear::QuadSpec;
use mcpl_core::szc::ZoneSpec;

fn small_config(root: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.audio_frequencies = vec![4000.0];
    cfg.carrier_frequencies = vec![40e3, 80e3];
    cfg.carrier_counts = vec![1, 2];
    cfg.bright = ZoneSpec { nx: 3, nz: 3, ..cfg.bright };
    cfg.dark = ZoneSpec { nx: 4, nz: 4, ..cfg.dark };
    cfg.axial = AxialSpec {
        z_min: 0.1,
        z_max: 6.0,
        points: 12,
        spacing: Spacing::Linear,
    };
    cfg.map = ZoneSpec {
        x_range: (-0.5, 0.5),
        z_range: (0.2, 3.0),
        nx: 5,
        nz: 7,
    };
    cfg.quad = QuadSpec {
        order: 6,
        rho_core_wavelengths: 2.0,
        rho_outer_width: 0.04,
        z_near_periods: 2.0,
        z_max_width: 0.06,
        z_audio_fraction: 0.5,
        mu_max: 800.0,
        mu_panel_phase: 20.0,
        ..QuadSpec::default()
    };
    cfg.cache_dir = root.join("cache");
    cfg.output_dir = root.join("out");
    cfg
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn check_csv(path: &Path, header: &[&str], rows: usize) {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), header);
    let records: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(records.len(), rows, "{}", path.display());
    for rec in &records {
        assert_eq!(rec.len(), header.len());
        for field in rec.iter().take(header.len() - 1) {
            field.parse::<f64>().unwrap();
        }
    }
}

#[test]
fn pipeline_is_deterministic_and_survives_cache_damage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let exp = Experiment::new(cfg.clone()).unwrap();

    let (summary, stats) = exp.run(Scope::Full).unwrap();
    assert_eq!(stats.computed, 6);
    assert_eq!(summary.records.len(), 2);
    assert!(summary.records.iter().all(|r| r.axial.is_some() && r.map.is_some()));
    assert!(summary.record(4000.0, 2).unwrap().contrast >= summary.record(4000.0, 1).unwrap().contrast);
    let hash = &summary.config_hash[..12];
    let out = &cfg.output_dir;
    check_csv(&out.join("axial_fa4000_n2.csv"), &["z_m", "spl_db", "p_re", "p_im", "config_hash"], 12);
    check_csv(&out.join("map_fa4000_n1.csv"), &["x_m", "z_m", "spl_db", "spl_norm_db", "config_hash"], 35);
    assert!(fs::read_to_string(out.join("map_fa4000_n1.csv")).unwrap().contains(hash));
    let first = snapshot(out);

    let (_, warm) = exp.run(Scope::Full).unwrap();
    assert_eq!((warm.loaded, warm.computed), (6, 0));
    assert_eq!(snapshot(out), first);

    // Truncate one cache file and flip a byte in another.
    let mut files: Vec<_> = fs::read_dir(&cfg.cache_dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    let bytes = fs::read(&files[0]).unwrap();
    fs::write(&files[0], &bytes[..bytes.len() / 2]).unwrap();
    let mut bytes = fs::read(&files[1]).unwrap();
    bytes[40] ^= 0x10;
    fs::write(&files[1], &bytes).unwrap();
    fs::write(cfg.cache_dir.join("stale.tmp123"), b"partial").unwrap();

    let (_, repaired) = exp.run(Scope::Full).unwrap();
    assert_eq!(repaired.computed, 2);
    assert_eq!(repaired.notices.len(), 2);
    assert!(repaired.notices.iter().all(|n| n.contains("corrupt")), "{:?}", repaired.notices);
    assert_eq!(snapshot(out), first);

    let gc = cache::gc(&cfg.cache_dir, false).unwrap();
    assert_eq!((gc.kept, gc.removed.len()), (6, 1));
    let gc = cache::gc(&cfg.cache_dir, true).unwrap();
    assert_eq!((gc.kept, gc.removed.len()), (0, 6));
}

#[test]
fn scopes_write_only_their_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.carrier_frequencies = vec![40e3];
    cfg.carrier_counts = vec![1];
    let exp = Experiment::new(cfg.clone()).unwrap();
    let (summary, stats) = exp.run(Scope::Weights).unwrap();
    assert_eq!(stats.computed, 1);
    assert!(summary.records[0].axial.is_none() && summary.records[0].map.is_none());
    let names: Vec<String> = snapshot(&cfg.output_dir).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, vec!["summary.json"]);

    let (_, stats) = exp.run(Scope::Axial).unwrap();
    assert_eq!((stats.loaded, stats.computed), (1, 1));

    let (signal, files) = exp.synth(4000.0, 1).unwrap();
    assert_eq!(signal.samples.len(), 40_000);
    assert!(files.iter().all(|f| f.exists()));
    let info: serde_json::Value = serde_json::from_slice(&fs::read(&files[2]).unwrap()).unwrap();
    assert_eq!(info["samples"], 40_000);
}

#[test]
fn binary_reports_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "carrier_frequencies = [40000.0, 50000.0]\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mcpl")).args(["run"]).arg(&bad).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("carrier_frequencies"), "{err}");

    let out = Command::new(env!("CARGO_BIN_EXE_mcpl"))
        .args(["show-config", "--preset", "paper"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = ExperimentConfig::from_toml_str(&text, Preset::Desk, "stdout").unwrap();
    assert_eq!(cfg, ExperimentConfig::paper());
}
