use defl_core::adversary::{AttackKind, AttackSpec};
use defl_core::aggregation::AggregationRule;
use defl_core::harness::{
    base_logistic, base_quadratic, emit_csv, emit_summary, pool_bound_bytes, records_to_string, run_experiment,
    run_seed, scale_configs, scenario_table, ExperimentConfig, HEADER, SUMMARY_HEADER,
};
use defl_core::model::NodeId;

fn storage_peaks(rounds: u64) -> Vec<u64> {
    let mut cfg = base_logistic(6, 1, AggregationRule::MultiKrum);
    cfg.system.rounds = rounds;
    run_seed(&cfg, 3).unwrap().pool_peaks
}

#[test]
fn pool_peak_does_not_grow_with_run_length() {
    let short = storage_peaks(20);
    let long = storage_peaks(200);
    assert_eq!(short, long);
    let bound = pool_bound_bytes(6, 20, 2);
    assert!(long.iter().all(|&p| p <= bound), "{long:?} > {bound}");
}

#[test]
fn replay_is_byte_identical() {
    let mut cfg = base_logistic(4, 1, AggregationRule::MultiKrum);
    cfg.system.rounds = 10;
    cfg.attack = AttackSpec::new(AttackKind::Gaussian, 1.0, [NodeId(3)]);
    let a = records_to_string(&run_seed(&cfg, 11).unwrap().records).unwrap();
    let b = records_to_string(&run_seed(&cfg, 11).unwrap().records).unwrap();
    assert_eq!(a, b);
    let c = records_to_string(&run_seed(&cfg, 12).unwrap().records).unwrap();
    assert_ne!(a, c);
}

#[test]
fn csv_round_trips_through_a_reader() {
    let mut cfg = base_logistic(4, 1, AggregationRule::FedAvg);
    cfg.system.rounds = 6;
    cfg.seeds = vec![0, 1];
    let exp = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    emit_csv(&exp.records(), &path).unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, HEADER);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 12);
    for row in &rows {
        let sent: u64 = row[12].parse().unwrap();
        let per_node: u64 = row[14].split(';').map(|x| x.parse::<u64>().unwrap()).sum();
        assert_eq!(sent, per_node);
        let acc: f64 = row[9].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    let summary = dir.path().join("summary.csv");
    emit_summary(&[(exp.summary.clone(), "ok".into())], &summary).unwrap();
    let mut reader = csv::Reader::from_path(&summary).unwrap();
    assert_eq!(reader.headers().unwrap().len(), SUMMARY_HEADER.len());
    assert_eq!(reader.records().count(), 1);
}

#[test]
fn quadratic_rows_leave_accuracy_empty() {
    let mut cfg = base_quadratic(6, AggregationRule::MultiKrum);
    cfg.system.rounds = 3;
    let text = records_to_string(&run_seed(&cfg, 0).unwrap().records).unwrap();
    for line in text.lines().skip(1) {
        assert_eq!(line.split(',').nth(9), Some(""));
    }
}

#[test]
fn received_bytes_grow_quadratically_in_n() {
    let mut pts = Vec::new();
    for mut cfg in scale_configs(AggregationRule::MultiKrum, 10) {
        cfg.seeds = vec![0, 1, 2];
        let exp = run_experiment(&cfg).unwrap();
        pts.push(((cfg.system.n as f64).ln(), exp.summary.bytes_received.mean.ln()));
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = num / den;
    assert!((1.7..=2.3).contains(&slope), "slope {slope}");
}

#[test]
fn every_scenario_config_survives_json() {
    for name in defl_core::harness::SCENARIOS {
        for cfg in scenario_table(name).unwrap() {
            let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg);
        }
    }
}

#[test]
fn invalid_config_fails_before_running() {
    let mut cfg = base_logistic(4, 1, AggregationRule::MultiKrum);
    cfg.task.d = 5;
    assert!(run_seed(&cfg, 0).is_err());
    assert!(run_experiment(&cfg).is_err());
}
