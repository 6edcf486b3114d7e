//! Basis-expansion outcome regression for g-computation.
//!
//! Each exposure gets K marginal basis functions (the identity for the
//! linear model, a natural cubic spline otherwise). The design is an
//! intercept, every marginal block, and all pairwise tensor products:
//! width 1 + qK + C(q,2)K². Coefficients are ordinary least squares.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PointSet;
use crate::stats::{quantile_sorted, sorted_copy};

const DEGREE: usize = 3;
const GRAM_CHUNK: usize = 4096;
/// Relative eigenvalue floor of the equilibrated Gram matrix.
const RANK_TOL: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("exposure column {column} has {found} distinct values; {needed} needed")]
    TooFewDistinct {
        column: usize,
        found: usize,
        needed: usize,
    },
    #[error("knots for exposure column {column} are not strictly increasing inside the boundary")]
    CoincidentKnots { column: usize },
    #[error("basis count must be at least 1")]
    ZeroBasis,
    #[error("non-finite value in {what} at row {row}")]
    NonFinite { what: &'static str, row: usize },
    #[error("outcome has {found} rows, exposures have {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("dimension mismatch: model has {expected} exposures, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("stored coefficients ({found}) do not match design width ({expected})")]
    CoefficientCount { expected: usize, found: usize },
    #[error("no training rows")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KnotError {
    #[error("invalid boundary knots [{lower}, {upper}]")]
    Boundary { lower: f64, upper: f64 },
    #[error("interior knot {0} is not strictly inside the boundary and increasing")]
    Interior(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BasisSpec {
    Linear,
    NaturalSpline { df: usize },
}

impl BasisSpec {
    pub fn per_exposure(&self) -> usize {
        match self {
            BasisSpec::Linear => 1,
            BasisSpec::NaturalSpline { df } => *df,
        }
    }

    pub fn label(&self) -> String {
        match self {
            BasisSpec::Linear => "linear".into(),
            BasisSpec::NaturalSpline { df } => format!("ns{df}"),
        }
    }

    /// Resolves knots from training exposures: boundary knots at the column
    /// range, K−1 interior knots at type-7 quantiles j/K.
    pub fn resolve(&self, w: &PointSet) -> Result<ResolvedBasis, FitError> {
        if w.is_empty() {
            return Err(FitError::Empty);
        }
        let k = self.per_exposure();
        if k == 0 {
            return Err(FitError::ZeroBasis);
        }
        let mut marginals = Vec::with_capacity(w.dim());
        for col in 0..w.dim() {
            let values = w.column(col);
            if let Some(row) = values.iter().position(|v| !v.is_finite()) {
                return Err(FitError::NonFinite {
                    what: "exposures",
                    row,
                });
            }
            let m = match self {
                BasisSpec::Linear => Marginal::Identity,
                // a natural spline without interior knots spans {1, w}
                BasisSpec::NaturalSpline { df: 1 } => Marginal::Identity,
                BasisSpec::NaturalSpline { df } => {
                    let sorted = sorted_copy(&values);
                    let mut distinct = sorted.clone();
                    distinct.dedup();
                    if distinct.len() < df + 2 {
                        return Err(FitError::TooFewDistinct {
                            column: col,
                            found: distinct.len(),
                            needed: df + 2,
                        });
                    }
                    let interior: Vec<f64> = (1..*df)
                        .map(|j| quantile_sorted(&sorted, j as f64 / *df as f64))
                        .collect();
                    let lower = sorted[0];
                    let upper = sorted[sorted.len() - 1];
                    Marginal::Natural(
                        NaturalSpline::new(lower, upper, interior)
                            .map_err(|_| FitError::CoincidentKnots { column: col })?,
                    )
                }
            };
            marginals.push(m);
        }
        Ok(ResolvedBasis {
            spec: *self,
            marginals,
        })
    }
}

/// Natural cubic spline basis with K functions: the cubic B-spline basis on
/// the knots, first function dropped, restricted to the null space of the
/// second-derivative constraints at both boundary knots. Linear beyond the
/// boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KnotRepr", into = "KnotRepr")]
pub struct NaturalSpline {
    lower: f64,
    upper: f64,
    interior: Vec<f64>,
    knots: Vec<f64>,
    /// (K+2) × K, row-major
    transform: Vec<f64>,
    lower_value: Vec<f64>,
    lower_slope: Vec<f64>,
    upper_value: Vec<f64>,
    upper_slope: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KnotRepr {
    lower: f64,
    upper: f64,
    interior: Vec<f64>,
}

impl TryFrom<KnotRepr> for NaturalSpline {
    type Error = KnotError;
    fn try_from(r: KnotRepr) -> Result<Self, KnotError> {
        NaturalSpline::new(r.lower, r.upper, r.interior)
    }
}

impl From<NaturalSpline> for KnotRepr {
    fn from(s: NaturalSpline) -> Self {
        KnotRepr {
            lower: s.lower,
            upper: s.upper,
            interior: s.interior,
        }
    }
}

fn find_span(knots: &[f64], nbasis: usize, x: f64) -> usize {
    let n = nbasis - 1;
    if x >= knots[n + 1] {
        return n;
    }
    if x <= knots[DEGREE] {
        return DEGREE;
    }
    let (mut lo, mut hi) = (DEGREE, n + 1);
    let mut mid = (lo + hi) / 2;
    while x < knots[mid] || x >= knots[mid + 1] {
        if x < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
        mid = (lo + hi) / 2;
    }
    mid
}

/// Nonzero cubic B-splines at `x` and their first `nd` derivatives:
/// `out[k][j]` is the k-th derivative of basis `span − 3 + j`.
fn ders_basis(knots: &[f64], span: usize, x: f64, nd: usize) -> [[f64; DEGREE + 1]; 3] {
    let p = DEGREE;
    let mut ndu = [[0.0f64; DEGREE + 1]; DEGREE + 1];
    let mut left = [0.0f64; DEGREE + 1];
    let mut right = [0.0f64; DEGREE + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = [[0.0f64; DEGREE + 1]; 3];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let mut a = [[0.0f64; DEGREE + 1]; 2];
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=nd.min(2) {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = p - k;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut scale = p as f64;
    for k in 1..=nd.min(2) {
        for j in 0..=p {
            ders[k][j] *= scale;
        }
        scale *= (p - k) as f64;
    }
    ders
}

impl NaturalSpline {
    pub fn new(lower: f64, upper: f64, interior: Vec<f64>) -> Result<Self, KnotError> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(KnotError::Boundary { lower, upper });
        }
        let mut prev = lower;
        for &k in &interior {
            if !(k > prev && k < upper) {
                return Err(KnotError::Interior(k));
            }
            prev = k;
        }
        let df = interior.len() + 1;
        let mut knots = vec![lower; DEGREE + 1];
        knots.extend_from_slice(&interior);
        knots.extend(std::iter::repeat_n(upper, DEGREE + 1));
        let nbasis = knots.len() - DEGREE - 1;
        debug_assert_eq!(nbasis, df + 3);

        // second derivatives of B_1..B_{K+2} at both boundaries
        let m = nbasis - 1;
        let mut full = DMatrix::<f64>::zeros(m, m);
        for (c, &x) in [lower, upper].iter().enumerate() {
            let span = find_span(&knots, nbasis, x);
            let d = ders_basis(&knots, span, x, 2);
            for j in 0..=DEGREE {
                let b = span - DEGREE + j;
                if b >= 1 {
                    full[(b - 1, c)] = d[2][j];
                }
            }
        }
        for j in 2..m {
            full[(j, j)] = 1.0;
        }
        // trailing columns of Q span the null space of the constraints
        let q = full.qr().q();
        let mut transform = vec![0.0; m * df];
        for r in 0..m {
            for k in 0..df {
                transform[r * df + k] = q[(r, k + 2)];
            }
        }

        let mut s = Self {
            lower,
            upper,
            interior,
            knots,
            transform,
            lower_value: vec![0.0; df],
            lower_slope: vec![0.0; df],
            upper_value: vec![0.0; df],
            upper_slope: vec![0.0; df],
        };
        let (lv, ls) = s.value_and_slope(lower);
        let (uv, us) = s.value_and_slope(upper);
        s.lower_value = lv;
        s.lower_slope = ls;
        s.upper_value = uv;
        s.upper_slope = us;
        Ok(s)
    }

    pub fn df(&self) -> usize {
        self.interior.len() + 1
    }

    pub fn boundary(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior
    }

    fn nbasis(&self) -> usize {
        self.knots.len() - DEGREE - 1
    }

    fn project_into(&self, span: usize, vals: &[f64; DEGREE + 1], out: &mut [f64]) {
        let df = self.df();
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, &v) in vals.iter().enumerate() {
            let b = span - DEGREE + j;
            if b == 0 || v == 0.0 {
                continue;
            }
            let row = &self.transform[(b - 1) * df..b * df];
            for (o, t) in out.iter_mut().zip(row) {
                *o += v * t;
            }
        }
    }

    fn value_and_slope(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let span = find_span(&self.knots, self.nbasis(), x);
        let d = ders_basis(&self.knots, span, x, 1);
        let mut v = vec![0.0; self.df()];
        let mut s = vec![0.0; self.df()];
        self.project_into(span, &d[0], &mut v);
        self.project_into(span, &d[1], &mut s);
        (v, s)
    }

    /// Evaluates all K basis functions at `x` into `out`.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        if x < self.lower {
            for ((o, v), s) in out.iter_mut().zip(&self.lower_value).zip(&self.lower_slope) {
                *o = v + s * (x - self.lower);
            }
        } else if x > self.upper {
            for ((o, v), s) in out.iter_mut().zip(&self.upper_value).zip(&self.upper_slope) {
                *o = v + s * (x - self.upper);
            }
        } else {
            let span = find_span(&self.knots, self.nbasis(), x);
            let d = ders_basis(&self.knots, span, x, 0);
            self.project_into(span, &d[0], out);
        }
    }

    /// Second derivatives of the basis at `x` inside the boundary knots.
    pub fn second_derivative_into(&self, x: f64, out: &mut [f64]) {
        if x < self.lower || x > self.upper {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let span = find_span(&self.knots, self.nbasis(), x);
        let d = ders_basis(&self.knots, span, x, 2);
        self.project_into(span, &d[2], out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Marginal {
    Identity,
    Natural(NaturalSpline),
}

impl Marginal {
    fn width(&self) -> usize {
        match self {
            Marginal::Identity => 1,
            Marginal::Natural(s) => s.df(),
        }
    }

    fn eval_into(&self, x: f64, out: &mut [f64]) {
        match self {
            Marginal::Identity => out[0] = x,
            Marginal::Natural(s) => s.eval_into(x, out),
        }
    }
}

/// A basis specification with knots fixed from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedBasis {
    pub spec: BasisSpec,
    pub marginals: Vec<Marginal>,
}

impl ResolvedBasis {
    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn per_exposure(&self) -> usize {
        self.marginals.first().map_or(0, Marginal::width)
    }

    /// 1 + qK + C(q,2)K²
    pub fn width(&self) -> usize {
        let q = self.dim();
        let k = self.per_exposure();
        1 + q * k + q * q.saturating_sub(1) / 2 * k * k
    }

    /// Writes the design row for `w`; `out` must have length `width()`.
    pub fn row_into(&self, w: &[f64], out: &mut [f64]) {
        let q = self.dim();
        let k = self.per_exposure();
        out[0] = 1.0;
        for (j, m) in self.marginals.iter().enumerate() {
            m.eval_into(w[j], &mut out[1 + j * k..1 + (j + 1) * k]);
        }
        let (main, tensor) = out.split_at_mut(1 + q * k);
        let mut t = 0;
        for a in 0..q {
            for b in a + 1..q {
                let ba = &main[1 + a * k..1 + (a + 1) * k];
                let bb = &main[1 + b * k..1 + (b + 1) * k];
                for &va in ba {
                    for &vb in bb {
                        tensor[t] = va * vb;
                        t += 1;
                    }
                }
            }
        }
    }

    pub fn row(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.width()];
        self.row_into(w, &mut out);
        out
    }
}

/// Fitted outcome regression ĝ(w).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub basis: ResolvedBasis,
    pub coefficients: Vec<f64>,
    /// Per-exposure (min, max) of the training data.
    pub ranges: Vec<(f64, f64)>,
    pub rank: usize,
    pub warnings: Vec<String>,
}

struct Normal {
    gram: Vec<f64>,
    rhs: Vec<f64>,
}

fn accumulate<F>(basis: &ResolvedBasis, w: &PointSet, target: F) -> Normal
where
    F: Fn(usize, &[f64]) -> f64 + Sync,
{
    let p = basis.width();
    let n = w.len();
    let chunks = n.div_ceil(GRAM_CHUNK);
    let parts: Vec<Normal> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut gram = vec![0.0; p * p];
            let mut rhs = vec![0.0; p];
            let mut x = vec![0.0; p];
            for i in c * GRAM_CHUNK..((c + 1) * GRAM_CHUNK).min(n) {
                basis.row_into(w.row(i), &mut x);
                let t = target(i, &x);
                for a in 0..p {
                    let xa = x[a];
                    if xa == 0.0 {
                        continue;
                    }
                    rhs[a] += xa * t;
                    let g = &mut gram[a * p..(a + 1) * p];
                    for b in a..p {
                        g[b] += xa * x[b];
                    }
                }
            }
            Normal { gram, rhs }
        })
        .collect();
    // fixed-order reduction keeps results independent of thread count
    let mut total = Normal {
        gram: vec![0.0; p * p],
        rhs: vec![0.0; p],
    };
    for part in parts {
        for (t, v) in total.gram.iter_mut().zip(&part.gram) {
            *t += v;
        }
        for (t, v) in total.rhs.iter_mut().zip(&part.rhs) {
            *t += v;
        }
    }
    for a in 0..p {
        for b in 0..a {
            total.gram[a * p + b] = total.gram[b * p + a];
        }
    }
    total
}

/// Pseudo-inverse solver for a symmetric PSD Gram matrix, equilibrated by
/// its diagonal.
struct GramSolver {
    scale: Vec<f64>,
    eig: SymmetricEigen<f64, nalgebra::Dyn>,
    cutoff: f64,
}

impl GramSolver {
    fn new(gram: &[f64], p: usize) -> Self {
        let scale: Vec<f64> = (0..p)
            .map(|a| {
                let d = gram[a * p + a];
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let m = DMatrix::from_fn(p, p, |a, b| gram[a * p + b] * scale[a] * scale[b]);
        let eig = SymmetricEigen::new(m);
        let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        Self {
            scale,
            eig,
            cutoff: top * RANK_TOL,
        }
    }

    fn rank(&self) -> usize {
        self.eig.eigenvalues.iter().filter(|&&l| l > self.cutoff).count()
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let p = rhs.len();
        let b = DVector::from_fn(p, |a, _| rhs[a] * self.scale[a]);
        let v = &self.eig.eigenvectors;
        let mut coef = v.transpose() * b;
        for (c, &l) in coef.iter_mut().zip(self.eig.eigenvalues.iter()) {
            *c = if l > self.cutoff { *c / l } else { 0.0 };
        }
        let x = v * coef;
        (0..p).map(|a| x[a] * self.scale[a]).collect()
    }
}

impl OutcomeModel {
    /// Least-squares fit of `y` on the resolved design.
    pub fn fit(basis: ResolvedBasis, w: &PointSet, y: &[f64]) -> Result<Self, FitError> {
        if w.len() != y.len() {
            return Err(FitError::LengthMismatch {
                expected: w.len(),
                found: y.len(),
            });
        }
        if w.is_empty() {
            return Err(FitError::Empty);
        }
        if w.dim() != basis.dim() {
            return Err(FitError::DimensionMismatch {
                expected: basis.dim(),
                found: w.dim(),
            });
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(FitError::NonFinite { what: "outcome", row });
        }
        let p = basis.width();
        let normal = accumulate(&basis, w, |i, _| y[i]);
        let solver = GramSolver::new(&normal.gram, p);
        let rank = solver.rank();
        let mut beta = solver.solve(&normal.rhs);

        // one step of iterative refinement on the residual
        let dot = |x: &[f64], b: &[f64]| x.iter().zip(b).map(|(a, c)| a * c).sum::<f64>();
        let refine = accumulate(&basis, w, |i, x| y[i] - dot(x, &beta));
        let delta = solver.solve(&refine.rhs);
        for (b, d) in beta.iter_mut().zip(&delta) {
            *b += d;
        }

        let mut warnings = Vec::new();
        if rank < p {
            warnings.push(format!(
                "design is rank deficient ({rank} of {p}); minimum-norm coefficients reported"
            ));
        }
        let ranges = (0..w.dim())
            .map(|j| {
                w.rows()
                    .map(|r| r[j])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
            })
            .collect();
        Ok(Self {
            basis,
            coefficients: beta,
            ranges,
            rank,
            warnings,
        })
    }

    /// Resolves the basis from `w` and fits.
    pub fn fit_spec(spec: BasisSpec, w: &PointSet, y: &[f64]) -> Result<Self, FitError> {
        let basis = spec.resolve(w)?;
        Self::fit(basis, w, y)
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.basis.width()
    }

    pub fn predict(&self, w: &[f64]) -> Result<f64, FitError> {
        if w.len() != self.dim() {
            return Err(FitError::DimensionMismatch {
                expected: self.dim(),
                found: w.len(),
            });
        }
        Ok(self.predict_unchecked(w))
    }

    /// Prediction without the dimension check; `w` must have `dim()` entries.
    pub fn predict_unchecked(&self, w: &[f64]) -> f64 {
        let x = self.basis.row(w);
        x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> Result<Self, String> {
        let m: Self = serde_json::from_str(s).map_err(|e| e.to_string())?;
        if m.coefficients.len() != m.basis.width() {
            return Err(FitError::CoefficientCount {
                expected: m.basis.width(),
                found: m.coefficients.len(),
            }
            .to_string());
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lcg_points(n: usize, q: usize, seed: u64) -> PointSet {
        let mut s = seed;
        let mut data = Vec::with_capacity(n * q);
        for _ in 0..n * q {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            data.push(10.0 * ((s >> 11) as f64) / ((1u64 << 53) as f64));
        }
        PointSet::new(q, data).unwrap()
    }

    /// Independent natural-spline space check: a truncated-power natural
    /// cubic spline basis on the same knots spans the same space.
    fn truncated_power_natural(knots: &[f64], x: f64) -> Vec<f64> {
        let k = knots.len();
        let d = |j: usize| {
            let c = |t: f64| (x - t).max(0.0).powi(3);
            (c(knots[j]) - c(knots[k - 1])) / (knots[k - 1] - knots[j])
        };
        let mut out = vec![x];
        for j in 0..k - 2 {
            out.push(d(j) - d(k - 2));
        }
        out
    }

    #[test]
    fn design_widths() {
        let w = lcg_points(200, 2, 1);
        assert_eq!(BasisSpec::Linear.resolve(&w).unwrap().width(), 4);
        assert_eq!(BasisSpec::NaturalSpline { df: 3 }.resolve(&w).unwrap().width(), 16);
        assert_eq!(BasisSpec::NaturalSpline { df: 5 }.resolve(&w).unwrap().width(), 36);
        let w5 = lcg_points(200, 5, 2);
        assert_eq!(BasisSpec::NaturalSpline { df: 3 }.resolve(&w5).unwrap().width(), 1 + 15 + 90);
    }

    #[test]
    fn linear_basis_is_identity() {
        let w = lcg_points(50, 2, 3);
        let b = BasisSpec::Linear.resolve(&w).unwrap();
        assert_eq!(b.row(&[2.0, 3.0]), vec![1.0, 2.0, 3.0, 6.0]);
    }

    #[test]
    fn knots_at_quantiles() {
        let w = PointSet::new(1, (0..=100).map(|v| v as f64).collect()).unwrap();
        let b = BasisSpec::NaturalSpline { df: 4 }.resolve(&w).unwrap();
        let Marginal::Natural(s) = &b.marginals[0] else {
            panic!()
        };
        assert_eq!(s.boundary(), (0.0, 100.0));
        assert_eq!(s.interior_knots(), &[25.0, 50.0, 75.0]);
    }

    #[test]
    fn too_few_distinct_values() {
        let w = PointSet::new(1, vec![1.0, 1.0, 2.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            BasisSpec::NaturalSpline { df: 3 }.resolve(&w),
            Err(FitError::TooFewDistinct { column: 0, found: 3, needed: 5 })
        ));
    }

    #[test]
    fn coincident_knots_rejected() {
        // heavy ties put two quantiles on the same value
        let mut v = vec![5.0; 90];
        v.extend([1.0, 2.0, 3.0, 4.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
        let w = PointSet::new(1, v).unwrap();
        assert!(matches!(
            BasisSpec::NaturalSpline { df: 3 }.resolve(&w),
            Err(FitError::CoincidentKnots { column: 0 })
        ));
    }

    #[test]
    fn spans_truncated_power_space() {
        let s = NaturalSpline::new(0.0, 10.0, vec![2.0, 5.0, 7.5]).unwrap();
        let knots = [0.0, 2.0, 5.0, 7.5, 10.0];
        // regress each truncated-power function on {1, our basis}; residual ~ 0
        let xs: Vec<f64> = (0..=60).map(|i| -2.0 + 14.0 * i as f64 / 60.0).collect();
        let mut ours = DMatrix::zeros(xs.len(), 5);
        for (r, &x) in xs.iter().enumerate() {
            let mut b = [0.0; 4];
            s.eval_into(x, &mut b);
            ours[(r, 0)] = 1.0;
            for k in 0..4 {
                ours[(r, k + 1)] = b[k];
            }
        }
        let svd = ours.clone().svd(true, true);
        for j in 0..4 {
            let target = DVector::from_iterator(
                xs.len(),
                xs.iter().map(|&x| truncated_power_natural(&knots, x)[j]),
            );
            let coef = svd.solve(&target, 1e-12).unwrap();
            let resid = (&ours * coef - &target).amax();
            assert!(resid < 1e-8, "basis {j}: residual {resid}");
        }
    }

    #[test]
    fn continuous_second_derivative_at_knots() {
        let s = NaturalSpline::new(0.0, 10.0, vec![2.0, 5.0, 7.5]).unwrap();
        let h = 1e-7;
        for &k in &[2.0, 5.0, 7.5] {
            let (mut a, mut b) = ([0.0; 4], [0.0; 4]);
            s.second_derivative_into(k - h, &mut a);
            s.second_derivative_into(k + h, &mut b);
            for j in 0..4 {
                assert!((a[j] - b[j]).abs() < 1e-5, "knot {k}: {a:?} vs {b:?}");
            }
            s.eval_into(k - h, &mut a);
            s.eval_into(k + h, &mut b);
            for j in 0..4 {
                assert!((a[j] - b[j]).abs() < 1e-6);
            }
        }
        // natural boundary condition
        let mut d = [0.0; 4];
        s.second_derivative_into(0.0, &mut d);
        assert!(d.iter().all(|v| v.abs() < 1e-10), "{d:?}");
        s.second_derivative_into(10.0, &mut d);
        assert!(d.iter().all(|v| v.abs() < 1e-10), "{d:?}");
    }

    #[test]
    fn exact_linear_recovery() {
        let w = lcg_points(500, 2, 5);
        let y: Vec<f64> = w.rows().map(|r| 2.0 + r[0] - 3.0 * r[1]).collect();
        let m = OutcomeModel::fit_spec(BasisSpec::Linear, &w, &y).unwrap();
        for (c, e) in m.coefficients.iter().zip([2.0, 1.0, -3.0, 0.0]) {
            assert!((c - e).abs() < 1e-8, "{:?}", m.coefficients);
        }
        assert!(m.warnings.is_empty());
    }

    #[test]
    fn constant_response() {
        let w = lcg_points(300, 2, 6);
        let y = vec![4.25; 300];
        for spec in [BasisSpec::Linear, BasisSpec::NaturalSpline { df: 3 }] {
            let m = OutcomeModel::fit_spec(spec, &w, &y).unwrap();
            assert!((m.coefficients[0] - 4.25).abs() < 1e-8);
            assert!(m.coefficients[1..].iter().all(|c| c.abs() < 1e-8), "{:?}", m.coefficients);
        }
    }

    #[test]
    fn rank_deficient_design_warns() {
        // second exposure is a copy of the first
        let base = lcg_points(100, 1, 7);
        let w = PointSet::from_rows(base.rows().map(|r| [r[0], r[0]])).unwrap();
        let y: Vec<f64> = base.rows().map(|r| 1.0 + 2.0 * r[0]).collect();
        let m = OutcomeModel::fit_spec(BasisSpec::Linear, &w, &y).unwrap();
        assert!(m.is_rank_deficient());
        assert_eq!(m.warnings.len(), 1);
        assert!((m.predict(&[3.0, 3.0]).unwrap() - 7.0).abs() < 1e-8);
        // minimum norm splits the slope evenly
        assert!((m.coefficients[1] - m.coefficients[2]).abs() < 1e-6);
    }

    #[test]
    fn errors() {
        let w = lcg_points(20, 2, 8);
        assert!(matches!(
            OutcomeModel::fit_spec(BasisSpec::Linear, &w, &[1.0; 19]),
            Err(FitError::LengthMismatch { .. })
        ));
        let mut y = vec![1.0; 20];
        y[3] = f64::NAN;
        assert!(matches!(
            OutcomeModel::fit_spec(BasisSpec::Linear, &w, &y),
            Err(FitError::NonFinite { row: 3, .. })
        ));
        let m = OutcomeModel::fit_spec(BasisSpec::Linear, &w, &[1.0; 20]).unwrap();
        assert!(m.predict(&[1.0]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let w = lcg_points(400, 2, 9);
        let y: Vec<f64> = w.rows().map(|r| (r[0] * 0.3).sin() + r[1]).collect();
        let m = OutcomeModel::fit_spec(BasisSpec::NaturalSpline { df: 4 }, &w, &y).unwrap();
        let back = OutcomeModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.coefficients, m.coefficients);
        for x in [[0.5, 9.0], [-3.0, 14.0], [5.0, 5.0]] {
            assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn permutation_invariance(seed in 0u64..1000, shift in 0usize..199) {
            let w = lcg_points(200, 2, seed);
            let y: Vec<f64> = w.rows().map(|r| (r[0] - 5.0) * (r[1] - 4.0) + r[1].sqrt()).collect();
            let perm: Vec<usize> = (0..200).map(|i| (i * 7 + shift) % 200).collect();
            let wp = PointSet::from_rows(perm.iter().map(|&i| w.row(i).to_vec())).unwrap();
            let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
            let spec = BasisSpec::NaturalSpline { df: 3 };
            let a = OutcomeModel::fit_spec(spec, &w, &y).unwrap();
            let b = OutcomeModel::fit_spec(spec, &wp, &yp).unwrap();
            for (ca, cb) in a.coefficients.iter().zip(&b.coefficients) {
                prop_assert!((ca - cb).abs() <= 1e-10 * (1.0 + ca.abs()), "{ca} vs {cb}");
            }
        }
    }
}
