use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, Normal};

use raceplace::benchmark::{achieved_partials, construct_confounder, R2Targets, SIGN_COMBINATIONS};
use raceplace::data::{encode, CovariateValues, DesignMatrix, EncounterTable};
use raceplace::sim::{generate, interpretability_sweep, DgpKind, DgpSpec, SimulatedData, SweepDgp};

fn sig(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn draw(kind: DgpKind, n: usize, q: usize, seed: u64) -> SimulatedData {
    generate(&DgpSpec::new(kind, n, q, seed).unwrap()).unwrap()
}

fn x_values(t: &EncounterTable) -> Vec<f64> {
    match &t.covariate("x").unwrap().values {
        CovariateValues::Continuous(v) => v.clone(),
        c => (0..t.n()).map(|i| c.display(i).parse().unwrap()).collect(),
    }
}

/// Within every bin, Σ(indicator − p) / √Σ p(1 − p) stays inside ±3, or
/// inside the Bonferroni limit at family level 1% when there are many bins.
fn check_bins(what: &str, bins: &[(usize, bool, f64)]) {
    let mut acc: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for &(b, hit, p) in bins {
        let e = acc.entry(b).or_default();
        e.0 += hit as u8 as f64 - p;
        e.1 += p * (1.0 - p);
        e.2 += 1;
    }
    acc.retain(|_, e| e.2 >= 50 && e.1 > 0.0);
    let limit = Normal::standard().inverse_cdf(1.0 - 0.005 / acc.len() as f64).max(3.0);
    for (b, (dev, var, count)) in acc {
        let z = dev / var.sqrt();
        assert!(z.abs() <= limit, "{what}: bin {b} has z = {z:.2} over {count} rows");
    }
}

fn decile(u: f64) -> usize {
    ((u * 10.0) as usize).min(9)
}

#[test]
fn scenario_rates_follow_their_formulas() {
    for kind in [DgpKind::Scenario1, DgpKind::Scenario2] {
        let q = 35;
        let sim = draw(kind.clone(), 200_000, q, 21);
        let t = &sim.table;
        let x = x_values(t);
        let r = t.r().unwrap();
        let zero = vec![0.0; t.n()];
        let u = t.u().unwrap_or(&zero);
        let s2 = kind == DgpKind::Scenario2;
        let mut race = Vec::new();
        let mut stop = Vec::new();
        let mut force = Vec::new();
        for i in 0..t.n() {
            let qi = (t.precinct()[i] as f64 + 1.0) / q as f64;
            let pd = sig(if s2 { u[i] } else { 0.0 } + 2.0 * qi - 1.0);
            race.push((t.precinct()[i] as usize * 10 + decile(u[i]), t.d()[i] == 1, pd));
            stop.push((x[i] as usize * 2 + t.d()[i] as usize, t.m()[i] == 1, sig(x[i] - 2.5)));
            if t.m()[i] == 1 {
                let py = if s2 { u[i] } else { 1.0 } * sig(x[i] - 0.5 - 2.0 * r[i]);
                force.push((x[i] as usize * 10 + decile(u[i]), t.y()[i] == 1, py));
            }
        }
        check_bins("race", &race);
        check_bins("stop", &stop);
        check_bins("force", &force);
    }
}

#[test]
fn scenario_one_stops_half() {
    let sim = draw(DgpKind::Scenario1, 200_000, 35, 22);
    let rate = sim.table.m().iter().map(|&m| m as f64).sum::<f64>() / sim.table.n() as f64;
    assert!((rate - 0.5).abs() <= 0.01, "{rate}");
}

#[test]
fn scenario_two_halves_force_rate() {
    let a = draw(DgpKind::Scenario1, 200_000, 35, 23);
    let b = draw(DgpKind::Scenario2, 200_000, 35, 23);
    let rate = |s: &SimulatedData| {
        let t = &s.table;
        let stopped: Vec<usize> = (0..t.n()).filter(|&i| t.m()[i] == 1).collect();
        stopped.iter().map(|&i| t.y()[i] as f64).sum::<f64>() / stopped.len() as f64
    };
    let ratio = rate(&b) / rate(&a);
    assert!((ratio - 0.5).abs() < 0.03, "{ratio}");
}

#[test]
fn monotone_stop_rates() {
    for increasing in [true, false] {
        let sim = draw(DgpKind::MonotoneStop { increasing }, 150_000, 35, 24);
        let t = &sim.table;
        let x = x_values(t);
        let r = t.r().unwrap();
        let bins: Vec<(usize, bool, f64)> = (0..t.n())
            .map(|i| {
                let f = if increasing {
                    (1.5 * (r[i] - 0.8)).exp()
                } else {
                    (-1.5 * (r[i] - 0.2)).exp()
                };
                (x[i] as usize, t.m()[i] == 1, (sig(x[i] - 2.5) * f).min(1.0))
            })
            .collect();
        check_bins("monotone stop", &bins);
    }
}

#[test]
fn confounding_process_rates() {
    let signs = vec![1.0, -1.0, 1.0, -1.0];
    let a = 0.8;
    let sim = draw(DgpKind::InterpConfounding { a, signs: signs.clone() }, 200_000, 1, 25);
    let t = &sim.table;
    let x = x_values(t);
    let r = t.r().unwrap();
    let u = t.u().unwrap();
    assert!(r.iter().all(|v| (0.1..=0.1 + 1.0 / 1.2 + 1e-12).contains(v)));
    let bin = |i: usize| (x[i].clamp(-2.0, 2.0) + 2.0) as usize * 2 + u[i] as usize;
    let mut race = Vec::new();
    let mut stop = Vec::new();
    let mut force = Vec::new();
    for i in 0..t.n() {
        let d = t.d()[i] as f64;
        race.push((bin(i), d == 1.0, sig(signs[1] * a * u[i] + x[i])));
        stop.push((
            bin(i),
            t.m()[i] == 1,
            sig(signs[2] * a * u[i] + x[i] + 0.5 * d + r[i] + r[i] * x[i]),
        ));
        if t.m()[i] == 1 {
            let p = sig(-0.6 + signs[3] * a * u[i] + r[i] + 0.5 * x[i] + 0.5 + 0.5 * d + r[i] * x[i]);
            force.push((bin(i), t.y()[i] == 1, p));
        }
    }
    check_bins("race", &race);
    check_bins("stop", &stop);
    check_bins("force", &force);
}

#[test]
fn administrative_view_hides_unstopped_and_confounder() {
    let sim = draw(DgpKind::Scenario2, 20_000, 10, 26);
    let admin = sim.administrative();
    assert!(admin.u().is_none());
    assert!(admin.m().iter().all(|&m| m == 1));
    let stopped = sim.table.m().iter().filter(|&&m| m == 1).count();
    assert_eq!(admin.n(), stopped);
    let t = sim.truth();
    for i in 0..sim.table.n() {
        let (m, y) = if sim.table.d()[i] == 1 {
            (t.m1()[i], t.y1()[i])
        } else {
            (t.m0()[i], t.y0()[i])
        };
        assert_eq!((sim.table.m()[i], sim.table.y()[i]), (m, y));
    }
}

#[test]
fn generation_is_reproducible() {
    let a = draw(DgpKind::Scenario1, 5_000, 7, 27);
    let b = draw(DgpKind::Scenario1, 5_000, 7, 27);
    let c = draw(DgpKind::Scenario1, 5_000, 7, 28);
    assert_eq!(a.table, b.table);
    assert_ne!(a.table, c.table);
}

#[test]
fn confounding_sweep_grows_with_strength() {
    let a_grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let pts = interpretability_sweep(SweepDgp::InterpConfounding, &a_grid, 200_000, 29).unwrap();
    assert!(pts[0].xi_mean_dev < 1e-12 && pts[0].xi_sd < 1e-12);
    for w in pts.windows(2) {
        assert!(w[1].xi_mean_dev >= w[0].xi_mean_dev - 0.005);
        assert!(w[1].xi_sd >= w[0].xi_sd - 0.005);
    }
    for p in &pts {
        let (dev, sd) = (p.xi_tilde_mean_dev.unwrap(), p.xi_tilde_sd.unwrap());
        assert!(dev >= p.xi_mean_dev - 1e-12 && sd >= p.xi_sd - 1e-12, "a = {}", p.a);
    }
}

fn benchmark_setup() -> (DesignMatrix, Vec<f64>, Vec<f64>) {
    let sim = draw(DgpKind::BenchmarkAppH, 20_000, 1, 30);
    let t = sim.administrative();
    let design = encode(&t, &sim.schema()).unwrap();
    let y: Vec<f64> = t.y().iter().map(|&v| v as f64).collect();
    (design, t.r().unwrap().to_vec(), y)
}

#[test]
fn constructed_confounder_hits_targets() {
    let (design, r, y) = benchmark_setup();
    let n = design.nrows() as f64;
    let base = R2Targets::new(0.04, 0.09, 1.0, 1.0).unwrap();
    let mut seen = Vec::new();
    for (sy, sr) in SIGN_COMBINATIONS {
        let u = construct_confounder(&design, &r, &y, &base.with_signs(sy, sr).unwrap(), 3).unwrap();
        for j in 0..design.ncols() {
            let ip: f64 = design.column(j).iter().zip(&u).map(|(a, b)| a * b).sum();
            assert!(ip.abs() <= 1e-8 * n, "column {j}: {ip}");
        }
        let got = achieved_partials(&design, &r, &y, &u).unwrap();
        assert!((got.r2_y() - 0.04).abs() < 1e-8 && (got.r2_r() - 0.09).abs() < 1e-8, "{got:?}");
        assert_eq!(got.corr_y.signum(), sy);
        assert_eq!(got.corr_r.signum(), sr);
        seen.push((got.r2_y(), got.r2_r()));
    }
    for s in &seen {
        assert!((s.0 - seen[0].0).abs() < 1e-10 && (s.1 - seen[0].1).abs() < 1e-10);
    }
}
