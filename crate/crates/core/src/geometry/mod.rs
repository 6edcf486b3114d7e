//! Convex-hull queries over an observed exposure cloud: membership,
//! nearest-point projection, and the largest feasible step along a segment.
//!
//! Clouds with one or two exposures use an exact polygon. Higher dimensions
//! keep the raw cloud and answer every query with a min-norm-point solve;
//! facets are never enumerated.

mod mnp;
mod polygon;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use mnp::{Goal, Oracle, VertexCache};
use polygon::Polygon;

pub const DEFAULT_EPS_MEMBER: f64 = 1e-8;
pub const DEFAULT_EPS_PHI: f64 = 1e-6;

/// Largest admissible overshoot of the extrapolation ratio above 1.
const RATIO_SLOP: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point set is empty")]
    Empty,
    #[error("point set has zero dimension")]
    ZeroDimension,
    #[error("data length {len} is not a multiple of dimension {dim}")]
    Ragged { len: usize, dim: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("row count mismatch: {left} vs {right}")]
    RowMismatch { left: usize, right: usize },
    #[error("segment start is not a member of the hull")]
    StartNotMember,
    #[error("invalid tolerance {name} = {value}")]
    InvalidTolerance { name: &'static str, value: f64 },
}

/// Row-major n×q matrix of finite reals. Row order is the unit identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    dim: usize,
    data: Vec<f64>,
}

impl PointSet {
    /// Wraps row-major data. An empty set (n = 0) is allowed here; the hull
    /// engine rejects it.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self, GeometryError> {
        if dim == 0 {
            return Err(GeometryError::ZeroDimension);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(GeometryError::Ragged {
                len: data.len(),
                dim,
            });
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite {
                row: k / dim,
                col: k % dim,
            });
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<I, R>(rows: I) -> Result<Self, GeometryError>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f64]>,
    {
        let mut dim = None;
        let mut data = Vec::new();
        for row in rows {
            let row = row.as_ref();
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(GeometryError::DimensionMismatch {
                        expected: d,
                        found: row.len(),
                    })
                }
                _ => {}
            }
            data.extend_from_slice(row);
        }
        match dim {
            Some(d) => Self::new(d, data),
            None => Err(GeometryError::Empty),
        }
    }

    /// Empty set with a fixed dimension.
    pub fn empty(dim: usize) -> Result<Self, GeometryError> {
        Self::new(dim, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub(crate) fn from_trusted(dim: usize, data: Vec<f64>) -> Self {
        debug_assert!(data.len().is_multiple_of(dim));
        Self { dim, data }
    }
}

/// Nearest hull point to a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub point: Vec<f64>,
    pub distance: f64,
    /// (source row, barycentric weight); weights positive and summing to 1.
    pub support: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HullMode {
    ExactPolygon,
    PointCloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HullConfig {
    pub eps_member: f64,
    pub eps_phi: f64,
    /// Force a query mode. `None` picks the polygon for q ≤ 2.
    pub mode: Option<HullMode>,
}

impl Default for HullConfig {
    fn default() -> Self {
        Self {
            eps_member: DEFAULT_EPS_MEMBER,
            eps_phi: DEFAULT_EPS_PHI,
            mode: None,
        }
    }
}

/// Engine settings echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineInfo {
    pub mode: HullMode,
    pub n: usize,
    pub dim: usize,
    pub eps_member: f64,
    pub eps_phi: f64,
    pub diameter: f64,
    pub hull_vertices: Option<usize>,
    pub cached_vertices: usize,
}

/// Immutable query structure over an exposure cloud.
///
/// All queries take `&self` and may run concurrently. The only interior
/// mutation is the vertex cache, which only grows and never changes answers.
#[derive(Debug)]
pub struct HullEngine {
    source: PointSet,
    mode: HullMode,
    polygon: Option<Polygon>,
    cache: VertexCache,
    diameter: f64,
    eps_member: f64,
    eps_phi: f64,
}

impl HullEngine {
    pub fn build(points: PointSet, eps_member: f64, eps_phi: f64) -> Result<Self, GeometryError> {
        Self::with_config(
            points,
            HullConfig {
                eps_member,
                eps_phi,
                mode: None,
            },
        )
    }

    pub fn with_config(points: PointSet, config: HullConfig) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::Empty);
        }
        if !(config.eps_member.is_finite() && config.eps_member >= 0.0) {
            return Err(GeometryError::InvalidTolerance {
                name: "eps_member",
                value: config.eps_member,
            });
        }
        if !(config.eps_phi > 0.0 && config.eps_phi < 1.0) {
            return Err(GeometryError::InvalidTolerance {
                name: "eps_phi",
                value: config.eps_phi,
            });
        }
        let q = points.dim();
        let mode = config.mode.unwrap_or(if q <= 2 {
            HullMode::ExactPolygon
        } else {
            HullMode::PointCloud
        });
        let mode = if q > 2 { HullMode::PointCloud } else { mode };

        let exact = (q <= 2).then(|| Polygon::build(&points));
        let diameter = match &exact {
            Some(p) => p.diameter(),
            None => centroid_extent(&points),
        };
        let cache = VertexCache::new(points.len());
        let polygon = if mode == HullMode::ExactPolygon { exact } else { None };
        Ok(Self {
            source: points,
            mode,
            polygon,
            cache,
            diameter,
            eps_member: config.eps_member,
            eps_phi: config.eps_phi,
        })
    }

    pub fn source(&self) -> &PointSet {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn mode(&self) -> HullMode {
        self.mode
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn eps_member(&self) -> f64 {
        self.eps_member
    }

    pub fn eps_phi(&self) -> f64 {
        self.eps_phi
    }

    /// Absolute membership threshold on projection distance.
    pub fn member_tolerance(&self) -> f64 {
        self.eps_member * self.diameter
    }

    /// Counterclockwise hull vertices (polygon mode only).
    pub fn hull_vertices(&self) -> Option<&[usize]> {
        self.polygon.as_ref().map(|p| p.vertex_indices())
    }

    /// Extreme-point indices discovered so far, ascending.
    pub fn cached_vertices(&self) -> Vec<usize> {
        self.cache.snapshot()
    }

    pub fn info(&self) -> EngineInfo {
        EngineInfo {
            mode: self.mode,
            n: self.source.len(),
            dim: self.dim(),
            eps_member: self.eps_member,
            eps_phi: self.eps_phi,
            diameter: self.diameter,
            hull_vertices: self.polygon.as_ref().map(|p| p.vertex_indices().len()),
            cached_vertices: self.cache.len(),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), GeometryError> {
        if x.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        if let Some(col) = x.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite { row: 0, col });
        }
        Ok(())
    }

    fn oracle(&self) -> Oracle<'_> {
        Oracle {
            points: &self.source,
            cache: &self.cache,
        }
    }

    pub fn project(&self, x: &[f64]) -> Result<Projection, GeometryError> {
        self.check_dim(x)?;
        Ok(self.project_unchecked(x))
    }

    pub(crate) fn project_unchecked(&self, x: &[f64]) -> Projection {
        match &self.polygon {
            Some(p) => p.project(x),
            None => mnp::solve(&self.oracle(), x, self.member_tolerance(), self.diameter, Goal::Project)
                .projection,
        }
    }

    pub fn is_member(&self, x: &[f64]) -> Result<bool, GeometryError> {
        self.check_dim(x)?;
        Ok(self.is_member_unchecked(x))
    }

    pub(crate) fn is_member_unchecked(&self, x: &[f64]) -> bool {
        match &self.polygon {
            Some(p) => p.contains(x) || p.project(x).distance <= self.member_tolerance(),
            None => {
                mnp::solve(&self.oracle(), x, self.member_tolerance(), self.diameter, Goal::Membership)
                    .member
            }
        }
    }

    /// Largest φ in [0, 1] with `a + φ(b − a)` in the hull, by bisection.
    pub fn segment_phi(&self, a: &[f64], b: &[f64]) -> Result<f64, GeometryError> {
        self.check_dim(a)?;
        self.check_dim(b)?;
        if !self.is_member_unchecked(a) {
            return Err(GeometryError::StartNotMember);
        }
        Ok(self.segment_phi_unchecked(a, b))
    }

    pub(crate) fn segment_phi_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        if self.is_member_unchecked(b) {
            return 1.0;
        }
        let mut buf = vec![0.0; a.len()];
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > self.eps_phi {
            let mid = 0.5 * (lo + hi);
            for ((o, &ai), &bi) in buf.iter_mut().zip(a).zip(b) {
                *o = ai + mid * (bi - ai);
            }
            if self.is_member_unchecked(&buf) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Distance from `w_int` to the hull over distance from `w` to `w_int`.
    pub fn r_metric(&self, w: &[f64], w_int: &[f64]) -> Result<f64, GeometryError> {
        self.check_dim(w)?;
        self.check_dim(w_int)?;
        if !self.is_member_unchecked(w) {
            return Err(GeometryError::StartNotMember);
        }
        let proj = self.project_unchecked(w_int);
        Ok(self.ratio(w, w_int, proj.distance))
    }

    /// Ratio from a precomputed projection distance of `w_int`.
    pub(crate) fn ratio(&self, w: &[f64], w_int: &[f64], hull_distance: f64) -> f64 {
        if hull_distance <= self.member_tolerance() {
            return 0.0;
        }
        let step = w
            .iter()
            .zip(w_int)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if step == 0.0 {
            return 0.0;
        }
        let r = hull_distance / step;
        debug_assert!(r <= 1.0 + RATIO_SLOP + self.member_tolerance() / step, "ratio {r}");
        r.clamp(0.0, 1.0)
    }

    /// Discovers every extreme point so later queries scan only the vertex
    /// set. Output-sensitive: O(n·h) oracle work for h vertices.
    pub fn complete_vertex_cache(&self) {
        if self.cache.is_complete() {
            return;
        }
        let q = self.dim();
        let mut known: Vec<usize> = self.cache.snapshot();
        if known.is_empty() {
            // coordinate extremes are always vertices
            for j in 0..q {
                for sign in [1.0, -1.0] {
                    let mut dir = vec![0.0; q];
                    dir[j] = sign;
                    let v = lexicographic_argmin(&self.source, &dir);
                    if !known.contains(&v) {
                        known.push(v);
                    }
                }
            }
        }
        let mut sub = rows_of(&self.source, &known);
        let mut sub_cache = full_cache(known.len());
        let tol = self.member_tolerance();

        for i in 0..self.source.len() {
            if known.contains(&i) {
                continue;
            }
            let p = self.source.row(i);
            loop {
                let out = mnp::solve(
                    &Oracle {
                        points: &sub,
                        cache: &sub_cache,
                    },
                    p,
                    0.0,
                    self.diameter,
                    Goal::Project,
                );
                if out.projection.distance <= tol.max(4.0 * f64::EPSILON * self.diameter) {
                    break;
                }
                // separating direction points from the sub-hull toward p
                let dir: Vec<f64> = out
                    .projection
                    .point
                    .iter()
                    .zip(p)
                    .map(|(z, x)| z - x)
                    .collect();
                let v = lexicographic_argmin(&self.source, &dir);
                if known.contains(&v) {
                    break;
                }
                known.push(v);
                sub = rows_of(&self.source, &known);
                sub_cache = full_cache(known.len());
            }
        }
        for &v in &known {
            self.cache.insert(v);
        }
        self.cache.mark_complete();
    }
}

fn centroid_extent(points: &PointSet) -> f64 {
    let q = points.dim();
    let n = points.len() as f64;
    let mut c = vec![0.0; q];
    for r in points.rows() {
        for (ci, v) in c.iter_mut().zip(r) {
            *ci += v / n;
        }
    }
    let far = points
        .rows()
        .map(|r| r.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .fold(0.0, f64::max);
    2.0 * far.sqrt()
}

/// Argmin of a linear functional with ties resolved toward the
/// lexicographically smallest coordinates, which is always a vertex.
fn lexicographic_argmin(points: &PointSet, dir: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_v = f64::INFINITY;
    for (j, p) in points.rows().enumerate() {
        let v: f64 = p.iter().zip(dir).map(|(a, b)| a * b).sum();
        if v < best_v {
            best = j;
            best_v = v;
        } else if v == best_v {
            let cur = points.row(best);
            let lex = p
                .iter()
                .zip(cur)
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal);
            if lex.is_lt() {
                best = j;
            }
        }
    }
    best
}

fn rows_of(points: &PointSet, idx: &[usize]) -> PointSet {
    let mut data = Vec::with_capacity(idx.len() * points.dim());
    for &i in idx {
        data.extend_from_slice(points.row(i));
    }
    PointSet::from_trusted(points.dim(), data)
}

fn full_cache(n: usize) -> VertexCache {
    let c = VertexCache::new(n);
    for i in 0..n {
        c.insert(i);
    }
    c.mark_complete();
    c
}
