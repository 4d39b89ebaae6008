use std::fs;

use carmsim::config::{load_config, resolve_config, ConfigError};
use carmsim::experiment::run_experiment;
use carmsim::report::{
    figure_curve, parse_json, read_csv, to_json, write_report, Metric, ReportFormat, CSV_COLUMNS,
};

#[test]
fn config_file_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = resolve_config("phantom_default").unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    assert_eq!(load_config(&path).unwrap(), cfg);
}

#[test]
fn missing_config_is_an_io_error() {
    assert!(matches!(
        resolve_config("/no/such/config.json"),
        Err(ConfigError::Io { .. })
    ));
    assert!(matches!(
        resolve_config("sim_defualt"),
        Err(ConfigError::Io { .. })
    ));
}

#[test]
fn full_size_report_shape_and_round_trips() {
    let mut cfg = resolve_config("sim_default").unwrap();
    cfg.perturbation.trials_per_cell = 2;
    let report = run_experiment(&cfg, None).unwrap();
    assert_eq!(report.cells.len(), 56);

    let dir = tempfile::tempdir().unwrap();
    let csv_a = dir.path().join("a.csv");
    let csv_b = dir.path().join("b.csv");
    write_report(&report, ReportFormat::Csv, &csv_a).unwrap();
    write_report(&report, ReportFormat::Csv, &csv_b).unwrap();
    let text = fs::read_to_string(&csv_a).unwrap();
    assert_eq!(text, fs::read_to_string(&csv_b).unwrap());
    assert_eq!(text.lines().count(), 57);
    assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));

    let json = to_json(&report);
    let parsed = parse_json(&json).unwrap();
    assert_eq!(to_json(&parsed), json);
    assert_eq!(parsed.cells, report.cells);
    assert_eq!(parsed.provenance.seed, cfg.seed);
    assert_eq!(parsed.provenance.config_digest, cfg.digest());

    let cells = read_csv(fs::File::open(&csv_a).unwrap()).unwrap();
    assert_eq!(cells, report.cells);
    let curve = figure_curve(&cells, 50.0, Metric::ReprojLat).unwrap();
    assert_eq!(curve.len(), 14);
    assert!(curve.windows(2).all(|w| w[0].x < w[1].x));
}
