//! Closed-form targets for the precinct processes.

use super::DgpKind;
use crate::stats::sigmoid;

/// E(Y(1) | r, x) / E(Y(1) | r0, x). The confounder in scenario 2 enters as
/// a factor independent of r and cancels. `None` for processes without a
/// closed form.
pub fn psi_truth(kind: &DgpKind, x: f64, r: f64, r0: f64) -> Option<f64> {
    let force = |r: f64| sigmoid(x - 0.5 - 2.0 * r);
    match kind {
        DgpKind::Scenario1 | DgpKind::Scenario2 => Some(force(r) / force(r0)),
        DgpKind::MonotoneStop { increasing } => {
            let stop = |r: f64| {
                let f = if *increasing {
                    (1.5 * (r - 0.8)).exp()
                } else {
                    (-1.5 * (r - 0.2)).exp()
                };
                (sigmoid(x - 2.5) * f).min(1.0)
            };
            Some(force(r) * stop(r) / (force(r0) * stop(r0)))
        }
        _ => None,
    }
}

/// Race does not enter the stop or force rates of the precinct processes,
/// so the causal risk ratio is 1 everywhere.
pub fn crr_truth(kind: &DgpKind) -> Option<f64> {
    kind.is_precinct_level().then_some(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_value() {
        let v = psi_truth(&DgpKind::Scenario1, 2.0, 0.2, 0.6).unwrap();
        assert!((v - sigmoid(1.1) / sigmoid(0.3)).abs() < 1e-15);
        assert!((v - 1.306).abs() < 1e-3);
        assert_eq!(psi_truth(&DgpKind::Scenario2, 3.0, 0.6, 0.6), Some(1.0));
        assert!(psi_truth(&DgpKind::BenchmarkAppH, 0.0, 0.2, 0.6).is_none());
    }
}
