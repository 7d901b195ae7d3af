//! Ingestion, aggregation and synthetic-panel checks.

use std::fs;
use std::path::Path;

use nowcast_core::data::{
    aggregate_daily_to_weekly, aggregate_municipal_to_state, drop_zero_variance, load_panel, synthesize_panel,
    write_panel, ExogenousMatrix, PanelFiles, WeekRange,
};
use nowcast_core::error::Error;
use nowcast_core::stats;
use proptest::prelude::*;

fn toy_corpus(dir: &Path) -> PanelFiles {
    let mut cases = String::from("state,week,count\n");
    let mut exog = String::from("state,week,variable,value\n");
    for (s, base) in [("AA", 10), ("BB", 40)] {
        for w in 1..=10 {
            cases.push_str(&format!("{s},{w},{}\n", base + w * 3 % 7));
            exog.push_str(&format!("{s},{w},rain,{}.5\n", w % 4));
        }
    }
    let files = PanelFiles::in_dir(dir);
    fs::write(&files.cases, cases).unwrap();
    fs::write(&files.exog, exog).unwrap();
    fs::write(&files.adjacency, "state_a,state_b\nAA,BB\n").unwrap();
    fs::write(&files.population, "state,population\nAA,1000\nBB,2000\n").unwrap();
    files
}

#[test]
fn toy_corpus_loads() {
    let dir = tempfile::tempdir().unwrap();
    let files = toy_corpus(dir.path());
    let p = load_panel(&files).unwrap();
    assert_eq!((p.n_states(), p.n_weeks()), (2, 10));
    let ids: Vec<_> = p.state_ids().map(|s| s.to_string()).collect();
    assert_eq!(ids, ["AA", "BB"]);
    let aa = p.state_ids().next().unwrap();
    assert_eq!(p.state(aa).unwrap().cases.values()[0], 13.0);
    assert_eq!(p.state(aa).unwrap().exog.column("rain").unwrap()[2], 3.5);
    assert_eq!(p.neighbors(aa).count(), 1);
    assert_eq!(p.population(aa), Some(1000));
}

#[test]
fn self_adjacency_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let files = toy_corpus(dir.path());
    fs::write(&files.adjacency, "state_a,state_b\nAA,AA\n").unwrap();
    let e = load_panel(&files).unwrap_err().to_string();
    assert!(e.contains("self-adjacency"), "{e}");
}

#[test]
fn missing_week_names_state_and_week() {
    let dir = tempfile::tempdir().unwrap();
    let files = toy_corpus(dir.path());
    let text = fs::read_to_string(&files.cases).unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| !l.starts_with("BB,7,")).collect();
    fs::write(&files.cases, kept.join("\n")).unwrap();
    let e = load_panel(&files).unwrap_err();
    let msg = e.to_string();
    assert!(matches!(e, Error::Schema { .. }), "{msg}");
    assert!(
        msg.contains("BB") && msg.contains('7') && msg.contains("cases.csv"),
        "{msg}"
    );
}

#[test]
fn bad_values_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let files = toy_corpus(dir.path());
    fs::write(&files.population, "state,population\nAA,1000\nBB,x\n").unwrap();
    let msg = load_panel(&files).unwrap_err().to_string();
    assert!(msg.contains("population.csv") && msg.contains("line 3"), "{msg}");
}

#[test]
fn written_panels_load_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let p = synthesize_panel(5, 4, 60, 12).unwrap();
    let files = PanelFiles::in_dir(dir.path());
    write_panel(&p, &files).unwrap();
    assert_eq!(load_panel(&files).unwrap(), p);
    // and writing again reproduces the bytes
    let first = fs::read(&files.exog).unwrap();
    let other = tempfile::tempdir().unwrap();
    let files2 = PanelFiles::in_dir(other.path());
    write_panel(&load_panel(&files).unwrap(), &files2).unwrap();
    assert_eq!(fs::read(&files2.exog).unwrap(), first);
}

#[test]
fn weekly_aggregation_examples() {
    let s = aggregate_daily_to_weekly(&[(1..=7).map(f64::from).collect(), vec![5.0; 7], vec![2.0, 2.0, 8.0]]).unwrap();
    assert_eq!(s.min, [1.0, 5.0, 2.0]);
    assert_eq!(s.mean, [4.0, 5.0, 4.0]);
    assert_eq!(s.max, [7.0, 5.0, 8.0]);
    assert!(aggregate_daily_to_weekly(&[vec![1.0], vec![]]).is_err());
}

#[test]
fn municipal_aggregation_examples() {
    let s = aggregate_municipal_to_state(&[vec![10.0, 20.0], vec![4.0], vec![3.0, 3.0, 3.0]]).unwrap();
    assert_eq!(s.mean, [15.0, 4.0, 3.0]);
    assert!((s.sd[0] - 50f64.sqrt()).abs() < 1e-12);
    assert_eq!(&s.sd[1..], &[0.0, 0.0]);
    assert!(aggregate_municipal_to_state(&[vec![]]).is_err());
}

proptest! {
    #[test]
    fn aggregates_are_ordered(weeks in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 1..8), 1..10)) {
        let d = aggregate_daily_to_weekly(&weeks).unwrap();
        let m = aggregate_municipal_to_state(&weeks).unwrap();
        for t in 0..weeks.len() {
            prop_assert!(d.min[t] <= d.mean[t] + 1e-12 && d.mean[t] <= d.max[t] + 1e-12);
            prop_assert!(m.min[t] <= m.mean[t] + 1e-12 && m.mean[t] <= m.max[t] + 1e-12);
            prop_assert!(m.sd[t] >= 0.0);
        }
    }

    #[test]
    fn dropping_zero_variance_is_idempotent(cols in prop::collection::vec(prop::collection::vec(0u8..3, 12), 1..6)) {
        let mut x = ExogenousMatrix::new(12);
        for (i, c) in cols.iter().enumerate() {
            x.insert(format!("c{i}"), c.iter().map(|v| *v as f64).collect()).unwrap();
        }
        let (train, test) = (WeekRange::new(1, 8).unwrap(), WeekRange::new(9, 12).unwrap());
        let once = drop_zero_variance(&x, train, test);
        prop_assert_eq!(drop_zero_variance(&once, train, test), once.clone());
        for (_, c) in once.columns() {
            prop_assert!(stats::sample_variance(&c[..8]) > 0.0 && stats::sample_variance(&c[8..]) > 0.0);
        }
    }
}

#[test]
fn zero_variance_examples() {
    let mut x = ExogenousMatrix::new(8);
    x.insert("flat", vec![1.0; 8]).unwrap();
    x.insert("flat_train", vec![2.0, 2.0, 2.0, 2.0, 2.0, 1.0, 3.0, 0.0])
        .unwrap();
    x.insert("varies", vec![1.0, 2.0, 1.0, 3.0, 2.0, 1.0, 3.0, 0.0])
        .unwrap();
    let kept = drop_zero_variance(&x, WeekRange::new(1, 5).unwrap(), WeekRange::new(6, 8).unwrap());
    assert_eq!(kept.names(), ["varies"]);
}

/// Sample autocorrelation with the full-series mean and variance.
fn sample_acf(y: &[f64], lag: usize) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let c0: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    let ck: f64 = y.windows(lag + 1).map(|w| (w[0] - m) * (w[lag] - m)).sum();
    ck / c0
}

#[test]
fn synthetic_panels_are_deterministic_and_valid() {
    let a = synthesize_panel(1, 27, 342, 52).unwrap();
    assert_eq!(a, synthesize_panel(1, 27, 342, 52).unwrap());
    assert_ne!(a, synthesize_panel(2, 27, 342, 52).unwrap());
    assert_eq!((a.n_states(), a.n_weeks()), (27, 342));
    for (id, s) in a.states() {
        let y = s.cases.values();
        assert!(y.iter().all(|v| *v >= 0.0 && v.fract() == 0.0), "{id}");
        assert!(a.population(id).unwrap() > 0);
        // ring: two neighbours each
        assert_eq!(a.neighbors(id).count(), 2);
        for nb in a.neighbors(id) {
            assert!(a.neighbors(nb).any(|x| x == id));
        }
        let acf = sample_acf(y, 52);
        assert!(acf > 0.3, "{id}: seasonal autocorrelation {acf}");
    }
    assert!(synthesize_panel(1, 2, 100, 52).is_err());
}
