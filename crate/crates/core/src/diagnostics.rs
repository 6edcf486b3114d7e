//! Positivity diagnostics over intervention families: proportional
//! reductions of exposure components, the share of intervened rows inside
//! the hull, and the distribution of R.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{EngineInfo, GeometryError, HullEngine, PointSet};
use crate::stats::{quantile_sorted, sorted_copy};

pub const HIST_BINS: usize = 20;
pub const HIST_WIDTH: f64 = 1.0 / HIST_BINS as f64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("unknown exposure `{0}`")]
    UnknownComponent(String),
    #[error("intervention has no target components")]
    NoTargets,
    #[error("reduction fraction {0} is outside [0, 1]")]
    InvalidRho(f64),
    #[error("{names} exposure names for a {dim}-column matrix")]
    NameCount { names: usize, dim: usize },
    #[error("observed exposure row {row} is outside the hull")]
    ObservedNotMember { row: usize },
    #[error("row count mismatch: {left} vs {right}")]
    RowMismatch { left: usize, right: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Scale the target columns by (1 − rho); other columns are copied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub targets: Vec<String>,
    pub rho: f64,
}

impl InterventionSpec {
    pub fn new(targets: Vec<String>, rho: f64) -> Result<Self, DiagnosticsError> {
        if targets.is_empty() {
            return Err(DiagnosticsError::NoTargets);
        }
        if !(0.0..=1.0).contains(&rho) {
            return Err(DiagnosticsError::InvalidRho(rho));
        }
        Ok(Self { targets, rho })
    }

    fn columns(&self, names: &[String]) -> Result<Vec<bool>, DiagnosticsError> {
        let mut mask = vec![false; names.len()];
        for t in &self.targets {
            let j = names
                .iter()
                .position(|n| n == t)
                .ok_or_else(|| DiagnosticsError::UnknownComponent(t.clone()))?;
            mask[j] = true;
        }
        Ok(mask)
    }
}

pub fn apply_intervention(
    w: &PointSet,
    names: &[String],
    spec: &InterventionSpec,
) -> Result<PointSet, DiagnosticsError> {
    if names.len() != w.dim() {
        return Err(DiagnosticsError::NameCount {
            names: names.len(),
            dim: w.dim(),
        });
    }
    if spec.targets.is_empty() {
        return Err(DiagnosticsError::NoTargets);
    }
    if !(0.0..=1.0).contains(&spec.rho) {
        return Err(DiagnosticsError::InvalidRho(spec.rho));
    }
    let mask = spec.columns(names)?;
    let factor = 1.0 - spec.rho;
    let data = w
        .rows()
        .flat_map(|r| {
            r.iter()
                .zip(&mask)
                .map(move |(&v, &m)| if m { factor * v } else { v })
        })
        .collect();
    Ok(PointSet::from_trusted(w.dim(), data))
}

fn check_dim(engine: &HullEngine, x: &PointSet) -> Result<(), DiagnosticsError> {
    if x.dim() != engine.dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: engine.dim(),
            found: x.dim(),
        }
        .into());
    }
    Ok(())
}

fn check_finite(x: &PointSet) -> Result<(), DiagnosticsError> {
    if let Some(i) = x.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite {
            row: i / x.dim(),
            col: i % x.dim(),
        }
        .into());
    }
    Ok(())
}

fn check_observed(engine: &HullEngine, w: &PointSet) -> Result<(), DiagnosticsError> {
    check_dim(engine, w)?;
    if w.as_slice() != engine.source().as_slice() {
        check_finite(w)?;
        let bad = (0..w.len())
            .into_par_iter()
            .find_first(|&i| !engine.is_member_unchecked(w.row(i)));
        if let Some(row) = bad {
            return Err(DiagnosticsError::ObservedNotMember { row });
        }
    }
    Ok(())
}

/// Per-row membership of each intervened point.
pub fn memberships(engine: &HullEngine, w_int: &PointSet) -> Result<Vec<bool>, DiagnosticsError> {
    check_dim(engine, w_int)?;
    check_finite(w_int)?;
    Ok(w_int
        .as_slice()
        .par_chunks_exact(w_int.dim())
        .map(|x| engine.is_member_unchecked(x))
        .collect())
}

fn percent(members: &[bool]) -> f64 {
    if members.is_empty() {
        return 100.0;
    }
    100.0 * members.iter().filter(|&&m| m).count() as f64 / members.len() as f64
}

pub fn percent_in_hull(engine: &HullEngine, w_int: &PointSet) -> Result<f64, DiagnosticsError> {
    Ok(percent(&memberships(engine, w_int)?))
}

/// Quantiles and a fixed-width histogram of R on [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RSummary {
    pub n: usize,
    pub min: f64,
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    pub max: f64,
    pub mean: f64,
    /// Share of rows with R = 0.
    pub fraction_zero: f64,
    pub bin_width: f64,
    /// Bin k counts R in [k·w, (k+1)·w); the last bin also holds R = 1.
    pub histogram: Vec<u64>,
}

impl RSummary {
    pub fn from_values(r: &[f64]) -> Self {
        let mut histogram = vec![0u64; HIST_BINS];
        for &v in r {
            let k = ((v * HIST_BINS as f64).floor() as usize).min(HIST_BINS - 1);
            histogram[k] += 1;
        }
        if r.is_empty() {
            return Self {
                n: 0,
                min: f64::NAN,
                q05: f64::NAN,
                q25: f64::NAN,
                median: f64::NAN,
                q75: f64::NAN,
                q95: f64::NAN,
                max: f64::NAN,
                mean: f64::NAN,
                fraction_zero: f64::NAN,
                bin_width: HIST_WIDTH,
                histogram,
            };
        }
        let s = sorted_copy(r);
        let q = |p| quantile_sorted(&s, p);
        Self {
            n: r.len(),
            min: s[0],
            q05: q(0.05),
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            q95: q(0.95),
            max: s[s.len() - 1],
            mean: crate::stats::neumaier_mean(r),
            fraction_zero: r.iter().filter(|&&v| v == 0.0).count() as f64 / r.len() as f64,
            bin_width: HIST_WIDTH,
            histogram,
        }
    }

    /// Share of mass in the first histogram bin, [0, 0.05).
    pub fn first_bin_share(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        self.histogram[0] as f64 / self.n as f64
    }
}

/// R for every row. W rows must lie in the hull.
pub fn r_values(engine: &HullEngine, w: &PointSet, w_int: &PointSet) -> Result<Vec<f64>, DiagnosticsError> {
    check_observed(engine, w)?;
    check_dim(engine, w_int)?;
    check_finite(w_int)?;
    if w.len() != w_int.len() {
        return Err(DiagnosticsError::RowMismatch {
            left: w.len(),
            right: w_int.len(),
        });
    }
    Ok((0..w.len())
        .into_par_iter()
        .map(|i| row_r(engine, w.row(i), w_int.row(i)).1)
        .collect())
}

/// Membership of `w_int` and its R; members have R = 0 by definition.
pub(crate) fn row_r(engine: &HullEngine, w: &[f64], w_int: &[f64]) -> (bool, f64) {
    if engine.is_member_unchecked(w_int) {
        return (true, 0.0);
    }
    let d = engine.project_unchecked(w_int).distance;
    (false, engine.ratio(w, w_int, d))
}

pub fn r_distribution(engine: &HullEngine, w: &PointSet, w_int: &PointSet) -> Result<RSummary, DiagnosticsError> {
    Ok(RSummary::from_values(&r_values(engine, w, w_int)?))
}

/// Which component sets a sweep reduces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSet {
    /// One set per exposure.
    Each,
    /// All exposures together.
    All,
    Named(Vec<String>),
}

impl TargetSet {
    pub fn expand(&self, names: &[String]) -> Vec<Vec<String>> {
        match self {
            TargetSet::Each => names.iter().map(|n| vec![n.clone()]).collect(),
            TargetSet::All => vec![names.to_vec()],
            TargetSet::Named(v) => vec![v.clone()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub targets: Vec<String>,
    pub rho: f64,
    pub n: usize,
    pub in_hull: usize,
    pub percent_in_hull: f64,
    pub r: RSummary,
}

impl SweepEntry {
    pub fn target_label(&self) -> String {
        self.targets.join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub exposures: Vec<String>,
    pub engine: EngineInfo,
    pub entries: Vec<SweepEntry>,
}

/// Metrics available for the long-format CSV export.
pub const CSV_METRICS: &[&str] = &[
    "percent_in_hull",
    "r_min",
    "r_q05",
    "r_q25",
    "r_median",
    "r_q75",
    "r_q95",
    "r_max",
    "r_mean",
    "r_first_bin_share",
];

impl SweepEntry {
    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "percent_in_hull" => self.percent_in_hull,
            "r_min" => self.r.min,
            "r_q05" => self.r.q05,
            "r_q25" => self.r.q25,
            "r_median" => self.r.median,
            "r_q75" => self.r.q75,
            "r_q95" => self.r.q95,
            "r_max" => self.r.max,
            "r_mean" => self.r.mean,
            "r_first_bin_share" => self.r.first_bin_share(),
            _ => return None,
        })
    }
}

impl DiagnosticsReport {
    /// Long format: one `targets,rho,metric,value` row per entry and metric.
    pub fn to_long_csv(&self, metrics: &[&str]) -> Result<String, String> {
        if let Some(bad) = metrics.iter().find(|m| !CSV_METRICS.contains(m)) {
            return Err(format!("unknown metric `{bad}`"));
        }
        let mut out = String::from("targets,rho,metric,value\n");
        for e in &self.entries {
            for m in metrics {
                let v = e.metric(m).expect("metric validated above");
                let _ = writeln!(out, "{},{},{},{}", e.target_label(), e.rho, m, v);
            }
        }
        Ok(out)
    }
}

/// One entry per (target set, rho), in target-major order, on a shared engine.
pub fn sweep(
    engine: &HullEngine,
    w: &PointSet,
    names: &[String],
    target_sets: &[Vec<String>],
    rhos: &[f64],
) -> Result<DiagnosticsReport, DiagnosticsError> {
    if names.len() != w.dim() {
        return Err(DiagnosticsError::NameCount {
            names: names.len(),
            dim: w.dim(),
        });
    }
    check_observed(engine, w)?;
    let mut specs = Vec::with_capacity(target_sets.len() * rhos.len());
    for t in target_sets {
        for &rho in rhos {
            let spec = InterventionSpec::new(t.clone(), rho)?;
            spec.columns(names)?;
            specs.push(spec);
        }
    }
    let entries = specs
        .par_iter()
        .map(|spec| {
            let w_int = apply_intervention(w, names, spec)?;
            let (members, r): (Vec<bool>, Vec<f64>) = (0..w.len())
                .into_par_iter()
                .map(|i| row_r(engine, w.row(i), w_int.row(i)))
                .unzip();
            let in_hull = members.iter().filter(|&&m| m).count();
            Ok(SweepEntry {
                targets: spec.targets.clone(),
                rho: spec.rho,
                n: w.len(),
                in_hull,
                percent_in_hull: percent(&members),
                r: RSummary::from_values(&r),
            })
        })
        .collect::<Result<Vec<_>, DiagnosticsError>>()?;
    Ok(DiagnosticsReport {
        exposures: names.to_vec(),
        engine: engine.info(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn intervention_arithmetic() {
        let n = names(&["BC", "OM", "NH4", "NIT", "SO4"]);
        let w = PointSet::from_rows([[1.0, 2.0, 3.0, 4.0, 5.0]]).unwrap();
        let zero = apply_intervention(&w, &n, &InterventionSpec::new(n.clone(), 0.0).unwrap()).unwrap();
        assert_eq!(zero, w);
        let om = apply_intervention(&w, &n, &InterventionSpec::new(names(&["OM"]), 0.5).unwrap()).unwrap();
        assert_eq!(om.row(0), &[1.0, 1.0, 3.0, 4.0, 5.0]);
        let all = apply_intervention(&w, &n, &InterventionSpec::new(n.clone(), 0.9).unwrap()).unwrap();
        for (a, b) in all.row(0).iter().zip([0.1, 0.2, 0.3, 0.4, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(
            apply_intervention(&w, &n, &InterventionSpec::new(names(&["PM"]), 0.5).unwrap()).unwrap_err(),
            DiagnosticsError::UnknownComponent("PM".into())
        );
        assert!(InterventionSpec::new(names(&["BC"]), 1.5).is_err());
        assert!(InterventionSpec::new(vec![], 0.5).is_err());
    }

    #[test]
    fn triangle_outside_point() {
        let e = HullEngine::build(
            PointSet::from_rows([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap(),
            1e-8,
            1e-6,
        )
        .unwrap();
        let wi = PointSet::from_rows([[1.0, 1.0]]).unwrap();
        assert_eq!(percent_in_hull(&e, &wi).unwrap(), 0.0);
        assert_eq!(percent_in_hull(&e, e.source()).unwrap(), 100.0);
    }

    #[test]
    fn summary_bins() {
        let s = RSummary::from_values(&[0.0, 0.0, 0.049, 0.05, 0.15, 0.999, 1.0]);
        assert_eq!(s.histogram[0], 3);
        assert_eq!(s.histogram[1], 1);
        assert_eq!(s.histogram[3], 1);
        assert_eq!(s.histogram[19], 2);
        assert_eq!(s.histogram.iter().sum::<u64>(), 7);
        assert_eq!(s.median, 0.05);
        assert!((s.fraction_zero - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn sweep_counts_and_csv() {
        let n = names(&["a", "b", "c"]);
        let mut s = 1u64;
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                (0..3)
                    .map(|_| {
                        s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                        1.0 + ((s >> 11) as f64) / ((1u64 << 53) as f64)
                    })
                    .collect()
            })
            .collect();
        let w = PointSet::from_rows(rows).unwrap();
        let e = HullEngine::build(w.clone(), 1e-8, 1e-6).unwrap();
        let mut sets = TargetSet::Each.expand(&n);
        sets.extend(TargetSet::All.expand(&n));
        let grid: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
        let rep = sweep(&e, &w, &n, &sets, &grid).unwrap();
        assert_eq!(rep.entries.len(), 9 * 4);
        let csv = rep.to_long_csv(&["percent_in_hull"]).unwrap();
        assert_eq!(csv.lines().count(), 1 + 9 * 4);
        for set in rep.entries.chunks(9) {
            assert!(set.windows(2).all(|p| p[1].percent_in_hull <= p[0].percent_in_hull));
            for e in set {
                assert_eq!(e.percent_in_hull, 100.0 * e.in_hull as f64 / e.n as f64);
            }
        }
        let zero = sweep(&e, &w, &n, &sets, &[0.0]).unwrap();
        assert!(zero.entries.iter().all(|e| e.percent_in_hull == 100.0 && e.r.max == 0.0));
    }
}
