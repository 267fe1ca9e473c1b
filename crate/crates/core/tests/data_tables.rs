use proptest::prelude::*;
use raceplace::data::*;
use raceplace::sim::{generate, DgpKind, DgpSpec};
use raceplace::Error;

fn parts(y: Vec<u8>, m: Vec<u8>, d: Vec<u8>, precinct: Vec<u32>, x: Vec<f64>) -> TableParts {
    TableParts {
        y,
        m,
        d,
        precinct,
        covariates: vec![Covariate::continuous("x", x)],
        ..TableParts::default()
    }
}

fn write_tmp(text: &str) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    std::fs::write(&p, text).unwrap();
    (dir, p)
}

#[test]
fn minimal_administrative_csv() {
    let (_d, p) = write_tmp("y,m,d,precinct,x\n0,1,1,0,a\n1,1,0,0,b\n0,1,1,1,a\n");
    let t = load_encounters(&p, &CovariateSchema::new().categorical("x"), TableMode::Administrative).unwrap();
    assert_eq!(t.n(), 3);
    assert_eq!(t.y(), &[0, 1, 0]);
    assert_eq!(t.q(), 2);
}

#[test]
fn listed_violations_rejected() {
    let (_d, p) = write_tmp("y,m,d,precinct\n1,0,1,0\n");
    let e = load_encounters(&p, &CovariateSchema::new(), TableMode::Full).unwrap_err();
    assert!(matches!(e, Error::MandatoryReportingViolation { row: 0 }));
    let (_d, p) = write_tmp("y,m,d,precinct\n0,1,2,0\n");
    let e = load_encounters(&p, &CovariateSchema::new(), TableMode::Full).unwrap_err();
    assert!(matches!(e, Error::NonBinaryField { .. } | Error::BadValue { .. }));
    let (_d, p) = write_tmp("y,m,d,precinct\n0,0,1,0\n");
    let e = load_encounters(&p, &CovariateSchema::new(), TableMode::Administrative).unwrap_err();
    assert!(matches!(e, Error::NotAdministrative { row: 0 }));
    let (_d, p) = write_tmp("y,m,precinct\n0,1,0\n");
    assert!(matches!(
        load_encounters(&p, &CovariateSchema::new(), TableMode::Full),
        Err(Error::MissingColumn(c)) if c == "d"
    ));
}

#[test]
fn encode_examples() {
    let labels: Vec<String> = ["3", "1", "4", "2", "1"].iter().map(|s| s.to_string()).collect();
    let t = EncounterTable::new(
        TableParts {
            y: vec![0; 5],
            m: vec![1; 5],
            d: vec![1; 5],
            precinct: vec![0; 5],
            covariates: vec![Covariate::categorical_from_labels("x", &labels)],
            ..TableParts::default()
        },
        TableMode::Administrative,
    )
    .unwrap();
    let schema = CovariateSchema::new().categorical("x").resolve(&t).unwrap();
    let dm = encode(&t, &schema).unwrap();
    assert_eq!(dm.ncols(), 4);
    assert!(dm.column(0).iter().all(|&v| v == 1.0));
    // level "1" is the reference
    assert_eq!(dm.row(1), dm.row(4));
    assert_eq!(dm.row(1), &[1.0, 0.0, 0.0, 0.0]);
    assert_eq!(dm.row(0), &[1.0, 0.0, 1.0, 0.0]);

    let x = vec![0.3, -2.0, 7.5];
    let t = EncounterTable::new(parts(vec![0; 3], vec![1; 3], vec![0; 3], vec![0; 3], x.clone()), TableMode::Full).unwrap();
    let dm = encode(&t, &CovariateSchema::new().continuous("x")).unwrap();
    assert_eq!(dm.column(1), x);
}

#[test]
fn precinct_counts_concentrate() {
    let sim = generate(&DgpSpec::new(DgpKind::Scenario1, 100_000, 35, 5).unwrap()).unwrap();
    let s = precinct_summary(&sim.table).unwrap();
    let expected = 100_000.0 / 35.0;
    for c in s.counts() {
        assert!((c - expected).abs() <= 4.0 * expected.sqrt(), "count {c}");
    }
}

fn raw_row() -> impl Strategy<Value = (u8, u8, u8, u32, f64)> {
    (0u8..3, 0u8..3, 0u8..3, 0u32..4, -5.0f64..5.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    // Accepted exactly when every listed invariant holds.
    #[test]
    fn validation_matches_invariants(rows in prop::collection::vec(raw_row(), 1..30), admin in any::<bool>()) {
        let mode = if admin { TableMode::Administrative } else { TableMode::Full };
        let ok = rows.iter().all(|&(y, m, d, _, _)| {
            y <= 1 && m <= 1 && d <= 1 && !(y == 1 && m == 0) && !(admin && m == 0)
        });
        let p = parts(
            rows.iter().map(|r| r.0).collect(),
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
            rows.iter().map(|r| r.3).collect(),
            rows.iter().map(|r| r.4).collect(),
        );
        prop_assert_eq!(EncounterTable::new(p, mode).is_ok(), ok);
    }

    #[test]
    fn write_then_load_is_bit_exact(
        rows in prop::collection::vec((0u8..2, 0u32..5, -1e6f64..1e6, 0usize..3, -3.0f64..3.0), 1..40),
    ) {
        let labels: Vec<String> = rows.iter().map(|r| ["lo", "mid", "hi"][r.3].to_string()).collect();
        let p = TableParts {
            y: rows.iter().map(|r| r.0).collect(),
            m: vec![1; rows.len()],
            d: rows.iter().map(|r| 1 - r.0).collect(),
            precinct: rows.iter().map(|r| r.1).collect(),
            covariates: vec![
                Covariate::continuous("z", rows.iter().map(|r| r.2 / 7.0).collect()),
                Covariate::categorical_from_labels("g", &labels),
            ],
            u: Some(rows.iter().map(|r| r.4.exp()).collect()),
            r: Some(rows.iter().map(|r| r.4 / 3.0).collect()),
            q: None,
        };
        let t = EncounterTable::new(p, TableMode::Full).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_encounters(&t, &path).unwrap();
        let schema = CovariateSchema::new().continuous("z").categorical("g");
        let back = load_encounters(&path, &schema, TableMode::Full).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn identical_covariates_identical_rows(x in -10.0f64..10.0) {
        let t = EncounterTable::new(parts(vec![0, 1], vec![1, 1], vec![1, 0], vec![0, 1], vec![x, x]), TableMode::Full).unwrap();
        let dm = encode(&t, &CovariateSchema::new().continuous("x")).unwrap();
        prop_assert_eq!(dm.row(0), dm.row(1));
    }
}
