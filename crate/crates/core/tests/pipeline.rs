use mixhull::diagnostics;
use mixhull::estimands::{self, FeasibleMethod, PairGeometry, WeightKind};
use mixhull::geometry::{HullConfig, HullEngine, HullMode, PointSet};
use mixhull::ingest::{self, Dataset, ReadOptions};
use mixhull::simulate::{self, SimConfig};
use mixhull::splinereg::{BasisSpec, OutcomeModel};

fn small(n: usize, seed: u64) -> Dataset {
    simulate::generate(&SimConfig {
        n,
        seed,
        ..SimConfig::default()
    })
    .unwrap()
    .into()
}

#[test]
fn csv_round_trip_preserves_every_bit() {
    let d = small(250, 21);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.csv");
    ingest::write_csv(&d, &p).unwrap();
    let back = ingest::read_csv(&p, ReadOptions::default()).unwrap();
    assert_eq!(back.exposure_names, d.exposure_names);
    assert_eq!(back.exposures, d.exposures);
    assert_eq!(back.interventions, d.interventions);
    assert_eq!(back.outcome, d.outcome);
    assert_eq!(back.oracle, d.oracle);
}

#[test]
fn point_cloud_mode_agrees_with_polygon_mode_in_two_dimensions() {
    let d = small(400, 3);
    let w = d.exposures.clone();
    let wi = d.interventions.clone().unwrap();
    let poly = HullEngine::with_config(w.clone(), HullConfig::default()).unwrap();
    let cloud = HullEngine::with_config(
        w.clone(),
        HullConfig {
            mode: Some(HullMode::PointCloud),
            ..HullConfig::default()
        },
    )
    .unwrap();
    for i in 0..wi.len() {
        let a = poly.project(wi.row(i)).unwrap();
        let b = cloud.project(wi.row(i)).unwrap();
        assert!((a.distance - b.distance).abs() < 1e-9, "row {i}: {} vs {}", a.distance, b.distance);
        assert_eq!(poly.is_member(wi.row(i)).unwrap(), cloud.is_member(wi.row(i)).unwrap());
    }
}

#[test]
fn truth_decomposition_and_weights_are_consistent() {
    let d = small(3000, 8);
    let w = &d.exposures;
    let wi = d.interventions.as_ref().unwrap();
    let engine = HullEngine::with_config(w.clone(), HullConfig::default()).unwrap();
    let geometry = PairGeometry::compute(&engine, w, wi).unwrap();
    let truth = |x: &[f64]| simulate::true_g(x);
    let oracle = d.oracle.as_ref().unwrap();
    let n = oracle.g_obs.len() as f64;
    let direct: f64 = oracle.g_obs.iter().zip(&oracle.g_int).map(|(a, b)| a - b).sum::<f64>() / n;
    for method in FeasibleMethod::ALL {
        let rep = estimands::estimate(
            &truth,
            "truth",
            &engine,
            w,
            wi,
            &geometry,
            method,
            &[WeightKind::Equal, WeightKind::Trimmed { tau: 0.5 }, WeightKind::Continuous],
        )
        .unwrap();
        assert!((rep.overall - direct).abs() < 1e-12);
        assert!((rep.overall - rep.feasible - rep.extrapolation).abs() < 1e-12);
        assert!((rep.weighted["equal"] - rep.overall).abs() < 1e-12);
    }
}

#[test]
fn more_reduction_never_leaves_more_points_inside() {
    let d = small(800, 13);
    let w = &d.exposures;
    let engine = HullEngine::with_config(w.clone(), HullConfig::default()).unwrap();
    let names = d.exposure_names.clone();
    let grid: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    let rep = diagnostics::sweep(&engine, w, &names, std::slice::from_ref(&names), &grid).unwrap();
    let pct: Vec<f64> = rep.entries.iter().map(|e| e.percent_in_hull).collect();
    assert_eq!(pct[0], 100.0);
    assert!(pct.windows(2).all(|p| p[1] <= p[0]), "{pct:?}");
}

#[test]
fn fitted_model_survives_json_and_predicts_identically() {
    let d = small(1200, 30);
    let m = OutcomeModel::fit_spec(BasisSpec::NaturalSpline { df: 4 }, &d.exposures, d.outcome.as_ref().unwrap())
        .unwrap();
    let back = OutcomeModel::from_json(&m.to_json().unwrap()).unwrap();
    let probe = PointSet::new(2, vec![5.0, 5.0, 10.0, 10.0, 16.0, 3.0]).unwrap();
    for x in probe.rows() {
        assert_eq!(m.predict(x).unwrap().to_bits(), back.predict(x).unwrap().to_bits());
    }
}
