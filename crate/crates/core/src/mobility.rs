//! Mobility adjustment of precinct racial composition.
//!
//! Flow counts N_ij record how much time residents of precinct i spend in
//! precinct j. From them come the transition matrix T (row shares), the time
//! weights C_j (column totals) and the composition π_j of the people present
//! in precinct j.

use std::path::Path;

use crate::error::{Error, Result};

/// q×q nonnegative flow matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowCounts {
    q: usize,
    n: Vec<f64>,
}

impl FlowCounts {
    pub fn new(q: usize, data: Vec<f64>) -> Result<FlowCounts> {
        if data.len() != q * q {
            return Err(Error::DimensionMismatch {
                expected: q * q,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("flow counts must be finite and nonnegative".into()));
        }
        Ok(FlowCounts { q, n: data })
    }

    /// Nobody leaves home: N = diag(counts).
    pub fn diagonal(counts: &[f64]) -> Result<FlowCounts> {
        let q = counts.len();
        let mut data = vec![0.0; q * q];
        for (i, c) in counts.iter().enumerate() {
            data[i * q + i] = *c;
        }
        FlowCounts::new(q, data)
    }

    pub fn q(&self) -> usize {
        self.q
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.n[i * self.q + j]
    }

    /// Same flows with precincts relabeled: new precinct k is old `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> FlowCounts {
        let q = self.q;
        let mut data = vec![0.0; q * q];
        for a in 0..q {
            for b in 0..q {
                data[a * q + b] = self.get(perm[a], perm[b]);
            }
        }
        FlowCounts { q, n: data }
    }
}

/// Row-stochastic q×q matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    q: usize,
    t: Vec<f64>,
}

impl TransitionMatrix {
    pub fn identity(q: usize) -> TransitionMatrix {
        blend_transition(q, 1.0).expect("alpha = 1 is valid")
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.q + j]
    }
    pub fn row(&self, i: usize) -> &[f64] {
        &self.t[i * self.q..(i + 1) * self.q]
    }
}

/// T_ij = N_ij / Σ_k N_ik
pub fn build_transition(flows: &FlowCounts) -> Result<TransitionMatrix> {
    let q = flows.q;
    let mut t = vec![0.0; q * q];
    for i in 0..q {
        let s: f64 = (0..q).map(|j| flows.get(i, j)).sum();
        if s <= 0.0 {
            return Err(Error::ZeroRow(i));
        }
        for j in 0..q {
            t[i * q + j] = flows.get(i, j) / s;
        }
    }
    Ok(TransitionMatrix { q, t })
}

fn check_proportions(p: &[f64], q: usize) -> Result<()> {
    if p.len() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            found: p.len(),
        });
    }
    if let Some(j) = p.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidProportion { precinct: j, value: p[j] });
    }
    Ok(())
}

/// Time-weighted composition π_j = Σ_i N_ij p_i / Σ_i N_ij: the share of
/// D = 1 among everyone present in precinct j. Column shares are formed first
/// so that a diagonal N returns p exactly. A precinct nobody visits keeps its
/// residential value.
pub fn adjust_composition(flows: &FlowCounts, p: &[f64]) -> Result<Vec<f64>> {
    let q = flows.q;
    check_proportions(p, q)?;
    Ok((0..q)
        .map(|j| {
            let col: f64 = (0..q).map(|i| flows.get(i, j)).sum();
            if col <= 0.0 {
                return p[j];
            }
            let pi: f64 = (0..q).map(|i| (flows.get(i, j) / col) * p[i]).sum();
            pi.clamp(0.0, 1.0)
        })
        .collect())
}

/// The literal matrix product (T p)_i = Σ_j T_ij p_j.
pub fn transition_product(t: &TransitionMatrix, p: &[f64]) -> Result<Vec<f64>> {
    check_proportions(p, t.q)?;
    Ok((0..t.q)
        .map(|i| t.row(i).iter().zip(p).map(|(a, b)| a * b).sum::<f64>().clamp(0.0, 1.0))
        .collect())
}

/// T = α I + (1 − α)/q · 11ᵀ
pub fn blend_transition(q: usize, alpha: f64) -> Result<TransitionMatrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("blend weight {alpha} outside [0, 1]")));
    }
    let off = (1.0 - alpha) / q as f64;
    let mut t = vec![off; q * q];
    for i in 0..q {
        t[i * q + i] = alpha + off;
    }
    Ok(TransitionMatrix { q, t })
}

/// C_j = Σ_i N_ij
pub fn time_weights(flows: &FlowCounts) -> Vec<f64> {
    (0..flows.q).map(|j| (0..flows.q).map(|i| flows.get(i, j)).sum()).collect()
}

/// Everything the estimators need about geography and movement.
#[derive(Clone, Debug, PartialEq)]
pub struct MobilityModel {
    pub transition: TransitionMatrix,
    /// Residential proportions p_j.
    pub p: Vec<f64>,
    /// Time-weighted compositions (the default π).
    pub pi: Vec<f64>,
    /// The literal T p, reported alongside.
    pub pi_product: Vec<f64>,
    /// Time weights C_j.
    pub weights: Vec<f64>,
}

impl MobilityModel {
    pub fn from_flows(flows: &FlowCounts, p: &[f64]) -> Result<MobilityModel> {
        let transition = build_transition(flows)?;
        let pi = adjust_composition(flows, p)?;
        let pi_product = transition_product(&transition, p)?;
        let weights = time_weights(flows);
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::AllZeroWeights);
        }
        Ok(MobilityModel {
            transition,
            p: p.to_vec(),
            pi,
            pi_product,
            weights,
        })
    }

    /// Residential composition only (T = I) with the given time weights.
    pub fn census(p: &[f64], weights: &[f64]) -> Result<MobilityModel> {
        MobilityModel::from_flows(&FlowCounts::diagonal(weights)?, p)
    }

    /// Compositions under the blended matrix α I + (1 − α)/q 11ᵀ.
    pub fn blended_composition(&self, alpha: f64) -> Result<Vec<f64>> {
        transition_product(&blend_transition(self.p.len(), alpha)?, &self.p)
    }

    /// P(D = 1): π averaged with time weights.
    pub fn overall_share(&self) -> f64 {
        let total: f64 = self.weights.iter().sum();
        self.pi.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() / total
    }
}

/// Read `origin,dest,value` rows. Missing pairs are zero. `q` defaults to the
/// largest id plus one.
pub fn load_flows(path: &Path, q: Option<usize>) -> Result<FlowCounts> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.into()))
    };
    let (io, id, iv) = (col("origin")?, col("dest")?, col("value")?);
    let mut triples = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parse_id = |k: usize, name: &str| {
            rec.get(k).unwrap_or("").parse::<usize>().map_err(|_| Error::BadValue {
                row,
                column: name.into(),
                value: rec.get(k).unwrap_or("").into(),
            })
        };
        let o = parse_id(io, "origin")?;
        let d = parse_id(id, "dest")?;
        let raw = rec.get(iv).unwrap_or("");
        let v: f64 = raw.parse().map_err(|_| Error::BadValue {
            row,
            column: "value".into(),
            value: raw.into(),
        })?;
        triples.push((o, d, v));
    }
    let max = triples.iter().map(|t| t.0.max(t.1) + 1).max().unwrap_or(0);
    let q = q.unwrap_or(max);
    if max > q {
        return Err(Error::InvalidArgument(format!(
            "flow file references precinct {} but q = {q}",
            max - 1
        )));
    }
    let mut data = vec![0.0; q * q];
    for (o, d, v) in triples {
        data[o * q + d] += v;
    }
    FlowCounts::new(q, data)
}

/// Read `precinct,p` rows into a dense vector; every precinct 0..q−1 must appear.
pub fn load_residential(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.into()))
    };
    let (ip, iv) = (col("precinct")?, col("p")?);
    let mut pairs = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let raw_p = rec.get(ip).unwrap_or("");
        let j: usize = raw_p.parse().map_err(|_| Error::BadValue {
            row,
            column: "precinct".into(),
            value: raw_p.into(),
        })?;
        let raw_v = rec.get(iv).unwrap_or("");
        let v: f64 = raw_v.parse().map_err(|_| Error::BadValue {
            row,
            column: "p".into(),
            value: raw_v.into(),
        })?;
        pairs.push((j, v));
    }
    let q = pairs.iter().map(|p| p.0 + 1).max().unwrap_or(0);
    let mut out = vec![f64::NAN; q];
    for (j, v) in pairs {
        out[j] = v;
    }
    if let Some(j) = out.iter().position(|v| v.is_nan()) {
        return Err(Error::InvalidArgument(format!("residential file has no row for precinct {j}")));
    }
    check_proportions(&out, q)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> FlowCounts {
        FlowCounts::new(2, vec![3.0, 1.0, 1.0, 1.0]).unwrap()
    }

    #[test]
    fn transition_rows() {
        let t = build_transition(&example()).unwrap();
        assert_eq!(t.row(0), &[0.75, 0.25]);
        assert_eq!(t.row(1), &[0.5, 0.5]);
        let id = build_transition(&FlowCounts::diagonal(&[2.0, 5.0]).unwrap()).unwrap();
        assert_eq!(id, TransitionMatrix::identity(2));
        let z = FlowCounts::new(2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(build_transition(&z), Err(Error::ZeroRow(1))));
    }

    #[test]
    fn composition_examples() {
        let pi = adjust_composition(&example(), &[1.0, 0.0]).unwrap();
        assert_eq!(pi, vec![0.75, 0.5]);
        let p = [0.3, 0.1, 0.77];
        assert_eq!(
            adjust_composition(&FlowCounts::diagonal(&[3.0, 7.0, 1.0]).unwrap(), &p).unwrap(),
            p.to_vec()
        );
        let c = adjust_composition(&FlowCounts::new(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), &[0.4, 0.4]).unwrap();
        assert!(c.iter().all(|v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn blend_examples() {
        let t = blend_transition(2, 0.9).unwrap();
        assert!((t.get(0, 0) - 0.95).abs() < 1e-15 && (t.get(0, 1) - 0.05).abs() < 1e-15);
        assert_eq!(blend_transition(3, 1.0).unwrap(), TransitionMatrix::identity(3));
        let u = blend_transition(4, 0.0).unwrap();
        assert!((0..4).all(|i| u.row(i).iter().all(|&v| v == 0.25)));
    }

    #[test]
    fn weights_are_column_sums() {
        assert_eq!(time_weights(&example()), vec![4.0, 2.0]);
    }
}
