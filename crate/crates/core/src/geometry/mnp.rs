//! Nearest point of a point cloud's convex hull, posed as a quadratic
//! program over the probability simplex of point weights.
//!
//! The solver keeps an active corral of at most q+1 affinely independent
//! points. Each major step calls the linear-minimization oracle (argmin of
//! a dot product over the cloud) and stops once the Frank–Wolfe duality gap
//! falls below tolerance; minor steps re-solve the corral exactly on its
//! affine hull and drop points whose weight would turn negative.

use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use parking_lot::RwLock;

use super::{PointSet, Projection};

const MAX_MAJOR: usize = 10_000;
const WEIGHT_FLOOR: f64 = 1e-14;

/// Monotone set of discovered hull vertices, shared across queries.
#[derive(Debug)]
pub(crate) struct VertexCache {
    flags: Vec<AtomicBool>,
    list: RwLock<Vec<usize>>,
    complete: AtomicBool,
}

impl VertexCache {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            flags: (0..n).map(|_| AtomicBool::new(false)).collect(),
            list: RwLock::new(Vec::new()),
            complete: AtomicBool::new(false),
        }
    }

    pub(crate) fn insert(&self, i: usize) {
        if !self.flags[i].swap(true, Ordering::AcqRel) {
            self.list.write().push(i);
        }
    }

    pub(crate) fn snapshot(&self) -> Vec<usize> {
        let mut v = self.list.read().clone();
        v.sort_unstable();
        v
    }

    pub(crate) fn len(&self) -> usize {
        self.list.read().len()
    }

    pub(crate) fn is_complete(&self) -> bool {
        self.complete.load(Ordering::Acquire)
    }

    pub(crate) fn mark_complete(&self) {
        self.complete.store(true, Ordering::Release);
    }

    fn read(&self) -> parking_lot::RwLockReadGuard<'_, Vec<usize>> {
        self.list.read()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Argmin of `<dir, p_j>` over all points, ties to the lowest index.
/// The flag reports whether the minimum is attained at a single location.
pub(crate) fn full_argmin(points: &PointSet, dir: &[f64]) -> (usize, f64, bool) {
    let mut best = (0usize, f64::INFINITY);
    let mut unique = true;
    for (j, p) in points.rows().enumerate() {
        let v = dot(dir, p);
        if v < best.1 {
            best = (j, v);
            unique = true;
        } else if v == best.1 && p != points.row(best.0) {
            unique = false;
        }
    }
    (best.0, best.1, unique)
}

/// Linear-minimization oracle over the cloud, seeded by the shared cache.
pub(crate) struct Oracle<'a> {
    pub(crate) points: &'a PointSet,
    pub(crate) cache: &'a VertexCache,
}

impl Oracle<'_> {
    /// Returns a point with `<dir, p> < accept_below` from the cache when one
    /// exists; otherwise the exact argmin over the whole cloud (or over the
    /// cache once it is known to hold every vertex).
    /// The flag is true when the returned value is the exact minimum.
    fn argmin(&self, dir: &[f64], accept_below: f64, active: &[usize]) -> (usize, f64, bool) {
        let mut best = (usize::MAX, f64::INFINITY);
        let complete = self.cache.is_complete();
        {
            let cached = self.cache.read();
            for &j in cached.iter() {
                if !complete && active.contains(&j) {
                    continue;
                }
                let v = dot(dir, self.points.row(j));
                if v < best.1 || (v == best.1 && j < best.0) {
                    best = (j, v);
                }
            }
        }
        if best.0 != usize::MAX {
            if complete {
                return (best.0, best.1, true);
            }
            if best.1 < accept_below {
                return (best.0, best.1, false);
            }
        }
        let (j, v, unique) = full_argmin(self.points, dir);
        if unique {
            self.cache.insert(j);
        }
        (j, v, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Goal {
    /// Run to the duality-gap tolerance.
    Project,
    /// Stop as soon as membership at `tol` is decided either way.
    Membership,
}

pub(crate) struct Outcome {
    pub(crate) projection: Projection,
    pub(crate) member: bool,
}

/// Weights for the point of the corral's affine hull nearest to `x`.
fn affine_minimizer(points: &PointSet, corral: &[usize], x: &[f64]) -> Vec<f64> {
    let m = corral.len();
    if m == 1 {
        return vec![1.0];
    }
    let q = points.dim();
    let s0 = points.row(corral[0]);
    let d = DMatrix::from_fn(q, m - 1, |r, c| points.row(corral[c + 1])[r] - s0[r]);
    let rhs = DVector::from_fn(q, |r, _| x[r] - s0[r]);
    let svd = d.svd(true, true);
    let smax = svd.singular_values.max();
    let mu = svd
        .solve(&rhs, smax * 1e-12)
        .unwrap_or_else(|_| DVector::zeros(m - 1));
    let mut alpha = Vec::with_capacity(m);
    alpha.push(1.0 - mu.sum());
    alpha.extend(mu.iter().copied());
    alpha
}

fn combine(points: &PointSet, corral: &[usize], lambda: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; points.dim()];
    for (&j, &w) in corral.iter().zip(lambda) {
        for (zi, pi) in z.iter_mut().zip(points.row(j)) {
            *zi += w * pi;
        }
    }
    z
}

/// Eliminates points until at most q+1 remain, keeping the combination fixed.
pub(crate) fn caratheodory(points: &PointSet, support: &mut Vec<(usize, f64)>) {
    let q = points.dim();
    while support.len() > q + 1 {
        let m = support.len();
        let a = DMatrix::from_fn(q + 1, m, |r, c| {
            if r < q {
                points.row(support[c].0)[r]
            } else {
                1.0
            }
        });
        let eig = SymmetricEigen::new(a.transpose() * &a);
        let k = eig.eigenvalues.imin();
        let mu = eig.eigenvectors.column(k);
        // step along the null direction until a weight hits zero
        let mut step = f64::INFINITY;
        let mut drop = 0;
        for (c, &mc) in mu.iter().enumerate() {
            if mc > 0.0 {
                let t = support[c].1 / mc;
                if t < step {
                    step = t;
                    drop = c;
                }
            }
        }
        if !step.is_finite() {
            break;
        }
        for (c, &mc) in mu.iter().enumerate() {
            support[c].1 -= step * mc;
        }
        support.remove(drop);
        support.retain(|(_, w)| *w > 0.0);
        let total: f64 = support.iter().map(|(_, w)| w).sum();
        for (_, w) in support.iter_mut() {
            *w /= total;
        }
    }
}

/// `extent` is the cloud diameter; it sets the floating-point noise floor.
pub(crate) fn solve(oracle: &Oracle<'_>, x: &[f64], tol: f64, extent: f64, goal: Goal) -> Outcome {
    let points = oracle.points;
    let scale = x.iter().map(|v| v.abs()).fold(extent, f64::max);

    // start from the nearest known vertex, or the nearest point overall
    let start = {
        let mut best = (usize::MAX, f64::INFINITY);
        for j in oracle.cache.snapshot() {
            let d2: f64 = points.row(j).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.1 {
                best = (j, d2);
            }
        }
        if best.0 == usize::MAX {
            for (j, p) in points.rows().enumerate() {
                let d2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 < best.1 {
                    best = (j, d2);
                }
            }
        }
        best.0
    };

    let mut corral = vec![start];
    let mut lambda = vec![1.0];
    let mut z = points.row(start).to_vec();
    let mut member = false;

    for _ in 0..MAX_MAJOR {
        let y: Vec<f64> = z.iter().zip(x).map(|(a, b)| a - b).collect();
        let dist2 = dot(&y, &y);
        if dist2.sqrt() <= 4.0 * f64::EPSILON * scale {
            member = true;
            break;
        }
        if goal == Goal::Membership && dist2 <= tol * tol {
            member = true;
            break;
        }
        let yz = dot(&y, &z);
        let noise = 64.0 * f64::EPSILON * dist2.sqrt() * (scale + dist2.sqrt());
        let gap_tol = tol * tol + noise;
        let (j, v, exact) = oracle.argmin(&y, yz - gap_tol, &corral);
        let gap = yz - v;
        if gap <= gap_tol || corral.contains(&j) {
            member = dist2 <= tol * tol;
            break;
        }
        if goal == Goal::Membership && exact && dist2 - 2.0 * gap > tol * tol {
            break;
        }

        corral.push(j);
        lambda.push(0.0);
        loop {
            let alpha = affine_minimizer(points, &corral, x);
            if alpha.iter().all(|&a| a > WEIGHT_FLOOR) {
                lambda = alpha;
                break;
            }
            let mut theta = 1.0f64;
            for (&a, &l) in alpha.iter().zip(&lambda) {
                if a <= WEIGHT_FLOOR && l - a > 0.0 {
                    theta = theta.min(l / (l - a));
                }
            }
            for (l, a) in lambda.iter_mut().zip(&alpha) {
                *l = (1.0 - theta) * *l + theta * a;
            }
            let before = corral.len();
            let mut k = 0;
            while k < corral.len() {
                if lambda[k] <= WEIGHT_FLOOR {
                    corral.remove(k);
                    lambda.remove(k);
                } else {
                    k += 1;
                }
            }
            if corral.len() == before {
                // numerical stall: drop the most negative affine weight
                let worst = alpha
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, _)| k)
                    .unwrap();
                corral.remove(worst);
                lambda.remove(worst);
            }
            let total: f64 = lambda.iter().sum();
            lambda.iter_mut().for_each(|l| *l /= total);
            if corral.len() == 1 {
                lambda = vec![1.0];
                break;
            }
        }
        z = combine(points, &corral, &lambda);
    }

    let mut support: Vec<(usize, f64)> = corral.into_iter().zip(lambda).collect();
    caratheodory(points, &mut support);
    let idx: Vec<usize> = support.iter().map(|s| s.0).collect();
    let w: Vec<f64> = support.iter().map(|s| s.1).collect();
    let point = combine(points, &idx, &w);
    let distance = point
        .iter()
        .zip(x)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Outcome {
        member: member || distance <= tol,
        projection: Projection {
            point,
            distance,
            support,
        },
    }
}
