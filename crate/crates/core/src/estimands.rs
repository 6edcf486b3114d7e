//! Plug-in causal contrasts: the overall effect, its split into a feasible
//! part and an extrapolation part, and weighted or trimmed versions.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::RSummary;
use crate::geometry::{GeometryError, HullEngine, PointSet};
use crate::splinereg::OutcomeModel;
use crate::stats::neumaier_sum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimandError {
    #[error("row count mismatch: {left} vs {right}")]
    RowMismatch { left: usize, right: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("observed exposure row {row} is outside the hull")]
    ObservedNotMember { row: usize },
    #[error("no units with R < {tau} (smallest R is {min_r}); the trimmed estimand is undefined")]
    EmptySubpopulation { tau: f64, min_r: f64 },
    #[error("every unit has R = 1; continuous weights are undefined")]
    DegenerateWeights,
    #[error("trimming threshold must be finite and non-negative, got {0}")]
    InvalidThreshold(f64),
    #[error("no rows")]
    Empty,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Anything that maps an exposure vector to a predicted outcome.
pub trait Predictor: Sync {
    fn predict(&self, w: &[f64]) -> f64;
}

impl Predictor for OutcomeModel {
    fn predict(&self, w: &[f64]) -> f64 {
        self.predict_unchecked(w)
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for F {
    fn predict(&self, w: &[f64]) -> f64 {
        self(w)
    }
}

fn conformable(a: &PointSet, b: &PointSet) -> Result<(), EstimandError> {
    if a.len() != b.len() {
        return Err(EstimandError::RowMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.dim() != b.dim() {
        return Err(EstimandError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    if a.is_empty() {
        return Err(EstimandError::Empty);
    }
    Ok(())
}

fn contrasts<P: Predictor + ?Sized>(pred: &P, a: &PointSet, b: &PointSet) -> Vec<f64> {
    a.as_slice()
        .par_chunks_exact(a.dim())
        .zip(b.as_slice().par_chunks_exact(b.dim()))
        .map(|(x, y)| pred.predict(x) - pred.predict(y))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    neumaier_sum(v.iter().copied()) / v.len() as f64
}

/// Mean over rows of predict(W_i) − predict(W_int,i).
pub fn overall_effect<P: Predictor + ?Sized>(
    pred: &P,
    w: &PointSet,
    w_int: &PointSet,
) -> Result<f64, EstimandError> {
    conformable(w, w_int)?;
    Ok(mean(&contrasts(pred, w, w_int)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeasibleMethod {
    /// Nearest hull point to W_int.
    HullProjection,
    /// Furthest point along the segment from W toward W_int that stays in the hull.
    PhiScaling,
}

impl FeasibleMethod {
    pub const ALL: [FeasibleMethod; 2] = [FeasibleMethod::HullProjection, FeasibleMethod::PhiScaling];

    pub fn label(&self) -> &'static str {
        match self {
            FeasibleMethod::HullProjection => "hull-projection",
            FeasibleMethod::PhiScaling => "phi-scaling",
        }
    }
}

impl fmt::Display for FeasibleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for FeasibleMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hull-projection" | "projection" => Ok(FeasibleMethod::HullProjection),
            "phi-scaling" | "phi" => Ok(FeasibleMethod::PhiScaling),
            _ => Err(format!("unknown feasible method `{s}` (hull-projection | phi-scaling)")),
        }
    }
}

/// Per-row hull geometry for one (W, W_int) pair, shared by both feasible
/// methods and every estimand.
#[derive(Debug, Clone)]
pub struct PairGeometry {
    /// Nearest hull point to each W_int row (W_int itself for members).
    pub projection: PointSet,
    /// Hull distance of W_int; 0 for members.
    pub distance: Vec<f64>,
    pub member: Vec<bool>,
    pub r: Vec<f64>,
}

impl PairGeometry {
    pub fn compute(engine: &HullEngine, w: &PointSet, w_int: &PointSet) -> Result<Self, EstimandError> {
        conformable(w, w_int)?;
        if w.dim() != engine.dim() {
            return Err(EstimandError::DimensionMismatch {
                expected: engine.dim(),
                found: w.dim(),
            });
        }
        if w.as_slice() != engine.source().as_slice() {
            let bad = (0..w.len())
                .into_par_iter()
                .find_first(|&i| !engine.is_member_unchecked(w.row(i)));
            if let Some(row) = bad {
                return Err(EstimandError::ObservedNotMember { row });
            }
        }
        if let Some(i) = w_int.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite {
                row: i / w.dim(),
                col: i % w.dim(),
            }
            .into());
        }
        let rows: Vec<(Vec<f64>, f64, bool, f64)> = (0..w.len())
            .into_par_iter()
            .map(|i| {
                let (a, b) = (w.row(i), w_int.row(i));
                if engine.is_member_unchecked(b) {
                    return (b.to_vec(), 0.0, true, 0.0);
                }
                let p = engine.project_unchecked(b);
                let r = engine.ratio(a, b, p.distance);
                (p.point, p.distance, false, r)
            })
            .collect();
        let mut proj = Vec::with_capacity(w.len() * w.dim());
        let mut distance = Vec::with_capacity(w.len());
        let mut member = Vec::with_capacity(w.len());
        let mut r = Vec::with_capacity(w.len());
        for (p, d, m, ri) in rows {
            proj.extend(p);
            distance.push(d);
            member.push(m);
            r.push(ri);
        }
        Ok(Self {
            projection: PointSet::from_trusted(w.dim(), proj),
            distance,
            member,
            r,
        })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Feasible points under `method`. Rows with W_int in the hull keep W_int.
    pub fn assign(
        &self,
        engine: &HullEngine,
        w: &PointSet,
        w_int: &PointSet,
        method: FeasibleMethod,
    ) -> Result<FeasibleAssignment, EstimandError> {
        conformable(w, w_int)?;
        if w.len() != self.len() {
            return Err(EstimandError::RowMismatch {
                left: w.len(),
                right: self.len(),
            });
        }
        let q = w.dim();
        match method {
            FeasibleMethod::HullProjection => {
                let mut out = Vec::with_capacity(w.len() * q);
                for i in 0..w.len() {
                    let src = if self.member[i] {
                        w_int.row(i)
                    } else {
                        self.projection.row(i)
                    };
                    out.extend_from_slice(src);
                }
                Ok(FeasibleAssignment {
                    method,
                    w_feas: PointSet::from_trusted(q, out),
                    phi: None,
                    r: self.r.clone(),
                })
            }
            FeasibleMethod::PhiScaling => {
                let phi: Vec<f64> = (0..w.len())
                    .into_par_iter()
                    .map(|i| {
                        if self.member[i] {
                            1.0
                        } else {
                            engine.segment_phi_unchecked(w.row(i), w_int.row(i))
                        }
                    })
                    .collect();
                let mut out = Vec::with_capacity(w.len() * q);
                for (i, &f) in phi.iter().enumerate() {
                    if self.member[i] {
                        out.extend_from_slice(w_int.row(i));
                    } else {
                        out.extend(w.row(i).iter().zip(w_int.row(i)).map(|(a, b)| a + f * (b - a)));
                    }
                }
                Ok(FeasibleAssignment {
                    method,
                    w_feas: PointSet::from_trusted(q, out),
                    phi: Some(phi),
                    r: self.r.clone(),
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleAssignment {
    pub method: FeasibleMethod,
    pub w_feas: PointSet,
    /// Segment fraction per row (φ-scaling only); 1 where W_int is in the hull.
    pub phi: Option<Vec<f64>>,
    pub r: Vec<f64>,
}

pub fn feasible_points(
    engine: &HullEngine,
    w: &PointSet,
    w_int: &PointSet,
    method: FeasibleMethod,
) -> Result<FeasibleAssignment, EstimandError> {
    PairGeometry::compute(engine, w, w_int)?.assign(engine, w, w_int, method)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub feasible: f64,
    pub extrapolation: f64,
}

impl Decomposition {
    pub fn overall(&self) -> f64 {
        self.feasible + self.extrapolation
    }
}

/// Feasible part mean(ĝ(W) − ĝ(W_feas)) and extrapolation part
/// mean(ĝ(W_feas) − ĝ(W_int)).
pub fn decomposed_effect<P: Predictor + ?Sized>(
    pred: &P,
    w: &PointSet,
    w_int: &PointSet,
    assignment: &FeasibleAssignment,
) -> Result<Decomposition, EstimandError> {
    conformable(w, w_int)?;
    conformable(w, &assignment.w_feas)?;
    let parts: Vec<(f64, f64)> = (0..w.len())
        .into_par_iter()
        .map(|i| {
            let a = pred.predict(w.row(i));
            let b = pred.predict(assignment.w_feas.row(i));
            let c = pred.predict(w_int.row(i));
            (a - b, b - c)
        })
        .collect();
    let n = w.len() as f64;
    Ok(Decomposition {
        feasible: neumaier_sum(parts.iter().map(|p| p.0)) / n,
        extrapolation: neumaier_sum(parts.iter().map(|p| p.1)) / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightKind {
    Equal,
    /// Units with R < tau, equally weighted.
    Trimmed { tau: f64 },
    /// γ ∝ 1 − R.
    Continuous,
}

impl WeightKind {
    pub fn label(&self) -> String {
        match self {
            WeightKind::Equal => "equal".into(),
            WeightKind::Trimmed { tau } => format!("trimmed({tau})"),
            WeightKind::Continuous => "continuous".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightScheme {
    pub kind: WeightKind,
    pub gamma: Vec<f64>,
}

impl WeightScheme {
    pub fn new(kind: WeightKind, r: &[f64]) -> Result<Self, EstimandError> {
        if r.is_empty() {
            return Err(EstimandError::Empty);
        }
        let raw: Vec<f64> = match kind {
            WeightKind::Equal => vec![1.0; r.len()],
            WeightKind::Trimmed { tau } => {
                if !(tau.is_finite() && tau >= 0.0) {
                    return Err(EstimandError::InvalidThreshold(tau));
                }
                let raw: Vec<f64> = r.iter().map(|&ri| f64::from(u8::from(ri < tau))).collect();
                if raw.iter().all(|&v| v == 0.0) {
                    let min_r = r.iter().cloned().fold(f64::INFINITY, f64::min);
                    return Err(EstimandError::EmptySubpopulation { tau, min_r });
                }
                raw
            }
            WeightKind::Continuous => {
                let raw: Vec<f64> = r.iter().map(|&ri| 1.0 - ri).collect();
                if raw.iter().all(|&v| v <= 0.0) {
                    return Err(EstimandError::DegenerateWeights);
                }
                raw
            }
        };
        let total = neumaier_sum(raw.iter().copied());
        let gamma = raw.into_iter().map(|v| v / total).collect();
        Ok(Self { kind, gamma })
    }

    /// Number of units with positive weight.
    pub fn support_size(&self) -> usize {
        self.gamma.iter().filter(|&&g| g > 0.0).count()
    }
}

/// Σ γ_i (ĝ(W_i) − ĝ(W_int,i)).
pub fn weighted_effect<P: Predictor + ?Sized>(
    pred: &P,
    w: &PointSet,
    w_int: &PointSet,
    scheme: &WeightScheme,
) -> Result<f64, EstimandError> {
    conformable(w, w_int)?;
    if scheme.gamma.len() != w.len() {
        return Err(EstimandError::RowMismatch {
            left: w.len(),
            right: scheme.gamma.len(),
        });
    }
    if scheme.kind == WeightKind::Equal {
        return overall_effect(pred, w, w_int);
    }
    let d = contrasts(pred, w, w_int);
    Ok(neumaier_sum(d.iter().zip(&scheme.gamma).map(|(a, g)| a * g)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandReport {
    pub model: String,
    pub feasible_method: FeasibleMethod,
    pub overall: f64,
    pub feasible: f64,
    pub extrapolation: f64,
    /// Keyed by [`WeightKind::label`].
    pub weighted: BTreeMap<String, f64>,
    pub r_summary: RSummary,
    pub eps_member: f64,
    pub eps_phi: f64,
    pub seed: Option<u64>,
}

/// Every estimand for one predictor and feasible method.
#[allow(clippy::too_many_arguments)]
pub fn estimate<P: Predictor + ?Sized>(
    pred: &P,
    model: &str,
    engine: &HullEngine,
    w: &PointSet,
    w_int: &PointSet,
    geometry: &PairGeometry,
    method: FeasibleMethod,
    weights: &[WeightKind],
) -> Result<EstimandReport, EstimandError> {
    let assignment = geometry.assign(engine, w, w_int, method)?;
    let overall = overall_effect(pred, w, w_int)?;
    let dec = decomposed_effect(pred, w, w_int, &assignment)?;
    let mut weighted = BTreeMap::new();
    weighted.insert(WeightKind::Equal.label(), overall);
    for &kind in weights {
        let scheme = WeightScheme::new(kind, &geometry.r)?;
        weighted.insert(kind.label(), weighted_effect(pred, w, w_int, &scheme)?);
    }
    Ok(EstimandReport {
        model: model.to_string(),
        feasible_method: method,
        overall,
        feasible: dec.feasible,
        extrapolation: dec.extrapolation,
        weighted,
        r_summary: RSummary::from_values(&geometry.r),
        eps_member: engine.eps_member(),
        eps_phi: engine.eps_phi(),
        seed: None,
    })
}

impl fmt::Display for EstimandReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model: {}    feasible method: {}", self.model, self.feasible_method)?;
        writeln!(f, "{:<28}{:>10.4}", "Overall effect", self.overall)?;
        writeln!(f, "{:<28}{:>10.4}", "Feasible estimand", self.feasible)?;
        writeln!(f, "{:<28}{:>10.4}", "Extrapolation component", self.extrapolation)?;
        for (k, v) in &self.weighted {
            if k != "equal" {
                writeln!(f, "{:<28}{:>10.4}", format!("Weighted: {k}"), v)?;
            }
        }
        write!(
            f,
            "R: median {:.4}, 95% {:.4}, share in hull {:.2}%",
            self.r_summary.median,
            self.r_summary.q95,
            100.0 * self.r_summary.fraction_zero
        )
    }
}
