use std::fs;
use std::path::Path;

use concealer_core::audio::{self, Calibration};
use concealer_core::gengrid::{self, FactorGrid, GridConfig, Manifest, Status};
use concealer_core::synth;
use concealer_core::Approach;

fn small_config() -> GridConfig {
    GridConfig::new(FactorGrid {
        sources: vec!["ventil1".into(), "ventil2".into()],
        positives: vec!["rain".into(), "waves".into()],
        approaches: vec![Approach::Masker, Approach::Concealer3],
        delta_laeqs: vec![0.0, 1.5, 3.0],
    })
}

fn corpus(dir: &Path) {
    synth::write_surrogate_corpus(dir, 1.0, 44_100, 21).unwrap();
}

#[test]
fn generates_levels_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let (inputs, out) = (tmp.path().join("in"), tmp.path().join("out"));
    corpus(&inputs);
    let config = small_config();

    let first = gengrid::generate_all(&config, &inputs, &out).unwrap();
    assert_eq!(first.manifest.len(), 24);
    assert_eq!((first.written, first.unchanged, first.failed), (24, 0, 0));
    for row in &first.manifest.rows {
        assert_eq!(row.status, Status::Ok, "{}: {}", row.id, row.error);
        assert!(row.within_tolerance);
        let wav = audio::load_wav(out.join(&row.file)).unwrap();
        assert_eq!(wav.len(), 44_100);
        let level = audio::leq_dba(&wav, Calibration::default()).unwrap();
        assert!((level.0 - (65.0 + row.delta_laeq)).abs() <= 0.1, "{}: {level}", row.id);
        assert_eq!(row.achieved_level_dba, Some(level.0));
    }
    let manifest = Manifest::read(&first.manifest_path).unwrap();
    assert_eq!(manifest, first.manifest);
    let stamp = fs::metadata(&first.manifest_path).unwrap().modified().unwrap();

    let second = gengrid::generate_all(&config, &inputs, &out).unwrap();
    assert_eq!((second.written, second.unchanged), (0, 24));
    assert_eq!(second.manifest, first.manifest);
    assert_eq!(fs::metadata(&first.manifest_path).unwrap().modified().unwrap(), stamp);

    // a fresh directory reproduces identical bytes
    let again = tmp.path().join("again");
    let third = gengrid::generate_all(&config, &inputs, &again).unwrap();
    assert_eq!(third.manifest, first.manifest);
    for row in &first.manifest.rows {
        assert_eq!(fs::read(out.join(&row.file)).unwrap(), fs::read(again.join(&row.file)).unwrap());
    }

    // changing the config invalidates every cell
    let mut louder = config.clone();
    louder.source_level_dba = 70.0;
    let fourth = gengrid::generate_all(&louder, &inputs, &out).unwrap();
    assert_eq!(fourth.written, 24);
}

#[test]
fn corrupt_input_fails_only_its_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let (inputs, out) = (tmp.path().join("in"), tmp.path().join("out"));
    corpus(&inputs);
    fs::write(inputs.join("ventil2.wav"), b"RIFF not really").unwrap();
    let report = gengrid::generate_all(&small_config(), &inputs, &out).unwrap();
    assert_eq!(report.manifest.len(), 24);
    assert_eq!(report.failed, 12);
    for row in &report.manifest.rows {
        assert_eq!(row.status == Status::Failed, row.source_id == "ventil2");
        if row.status == Status::Failed {
            assert!(row.error.contains("ventil2"), "{}", row.error);
            assert!(!out.join(&row.file).exists());
        }
    }
}

#[test]
fn missing_input_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let (inputs, out) = (tmp.path().join("in"), tmp.path().join("out"));
    corpus(&inputs);
    fs::remove_file(inputs.join("waves.wav")).unwrap();
    let report = gengrid::generate_all(&small_config(), &inputs, &out).unwrap();
    assert_eq!(report.failed, 12);
    assert!(report.manifest.rows.iter().filter(|r| !r.is_ok()).all(|r| r.positive_id == "waves"));
}

#[test]
fn unsatisfiable_cells_carry_best_candidate() {
    let tmp = tempfile::tempdir().unwrap();
    let (inputs, out) = (tmp.path().join("in"), tmp.path().join("out"));
    corpus(&inputs);
    let mut config = small_config();
    config.gain_grid.min_gain_db = -60.0;
    config.gain_grid.max_gain_db = -40.0;
    config.grid.delta_laeqs = vec![3.0];
    let report = gengrid::generate_all(&config, &inputs, &out).unwrap();
    assert_eq!(report.failed, 8);
    for row in &report.manifest.rows {
        assert!(row.error.contains("no lattice gain"));
        assert!(row.achieved_level_dba.unwrap() < 65.0 + 3.0 - 0.1);
        let g = row.gain_db.unwrap();
        assert!((-60.0..=-40.0).contains(&g));
    }
}
