//! Exact convex polygon for one- and two-dimensional exposure clouds.
//!
//! One-dimensional inputs are lifted onto the x-axis so a single code path
//! covers intervals, segments and proper polygons.

use super::{PointSet, Projection};

#[inline]
fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

#[inline]
fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn lift(row: &[f64]) -> [f64; 2] {
    match row.len() {
        1 => [row[0], 0.0],
        _ => [row[0], row[1]],
    }
}

/// Hull vertices in counterclockwise order, starting at the lexicographically
/// smallest point. Collinear boundary points are dropped.
/// Closest point on an edge, its distance and barycentric support.
type EdgeHit = ([f64; 2], f64, Vec<(usize, f64)>);

#[derive(Debug, Clone)]
pub(crate) struct Polygon {
    indices: Vec<usize>,
    verts: Vec<[f64; 2]>,
    dim: usize,
}

impl Polygon {
    /// Andrew's monotone chain. Duplicate coordinates keep the lowest index.
    pub(crate) fn build(points: &PointSet) -> Self {
        let dim = points.dim();
        debug_assert!(dim <= 2);
        let mut order: Vec<usize> = (0..points.len()).collect();
        let coord = |i: usize| lift(points.row(i));
        order.sort_by(|&i, &j| {
            let (a, b) = (coord(i), coord(j));
            a[0].total_cmp(&b[0])
                .then(a[1].total_cmp(&b[1]))
                .then(i.cmp(&j))
        });
        order.dedup_by(|j, i| coord(*i) == coord(*j));

        if order.len() <= 2 {
            let verts = order.iter().map(|&i| coord(i)).collect();
            return Self { indices: order, verts, dim };
        }

        let mut hull: Vec<usize> = Vec::with_capacity(2 * order.len().min(64));
        for &i in order.iter() {
            while hull.len() >= 2
                && cross(coord(hull[hull.len() - 2]), coord(hull[hull.len() - 1]), coord(i)) <= 0.0
            {
                hull.pop();
            }
            hull.push(i);
        }
        let lower_len = hull.len() + 1;
        for &i in order.iter().rev().skip(1) {
            while hull.len() >= lower_len
                && cross(coord(hull[hull.len() - 2]), coord(hull[hull.len() - 1]), coord(i)) <= 0.0
            {
                hull.pop();
            }
            hull.push(i);
        }
        hull.pop();

        let verts = hull.iter().map(|&i| coord(i)).collect();
        Self { indices: hull, verts, dim }
    }

    pub(crate) fn vertex_indices(&self) -> &[usize] {
        &self.indices
    }

    pub(crate) fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for (k, a) in self.verts.iter().enumerate() {
            for b in &self.verts[k + 1..] {
                let d = sub(*a, *b);
                best = best.max(dot(d, d));
            }
        }
        best.sqrt()
    }

    /// Closed point-in-polygon test using exact sign tests on a fan from
    /// vertex 0, O(log h).
    pub(crate) fn contains(&self, x: &[f64]) -> bool {
        let p = lift(x);
        let v = &self.verts;
        match v.len() {
            0 => false,
            1 => p == v[0],
            2 => {
                if cross(v[0], v[1], p) != 0.0 {
                    return false;
                }
                let d = sub(v[1], v[0]);
                let t = dot(sub(p, v[0]), d);
                t >= 0.0 && t <= dot(d, d)
            }
            h => {
                if cross(v[0], v[1], p) < 0.0 || cross(v[0], v[h - 1], p) > 0.0 {
                    return false;
                }
                let k = self.fan_sector(p);
                cross(v[k], v[k + 1], p) >= 0.0
            }
        }
    }

    /// Index k in [1, h-2] with p inside the wedge (v0, vk, vk+1).
    fn fan_sector(&self, p: [f64; 2]) -> usize {
        let v = &self.verts;
        let (mut lo, mut hi) = (1usize, v.len() - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if cross(v[0], v[mid], p) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn segment(&self, a: usize, b: usize, p: [f64; 2]) -> ([f64; 2], f64, Vec<(usize, f64)>) {
        let (va, vb) = (self.verts[a], self.verts[b]);
        let d = sub(vb, va);
        let len2 = dot(d, d);
        let t = if len2 > 0.0 {
            (dot(sub(p, va), d) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = [va[0] + t * d[0], va[1] + t * d[1]];
        let r = sub(p, q);
        let support = if t <= 0.0 {
            vec![(self.indices[a], 1.0)]
        } else if t >= 1.0 {
            vec![(self.indices[b], 1.0)]
        } else {
            vec![(self.indices[a], 1.0 - t), (self.indices[b], t)]
        };
        (q, dot(r, r), support)
    }

    pub(crate) fn project(&self, x: &[f64]) -> Projection {
        let p = lift(x);
        let h = self.verts.len();
        let (q, support) = if h == 1 {
            (self.verts[0], vec![(self.indices[0], 1.0)])
        } else if h >= 3 && self.contains(x) {
            (p, self.barycentric(p))
        } else {
            let edges = if h == 2 { 1 } else { h };
            let mut best: Option<EdgeHit> = None;
            for e in 0..edges {
                let cand = self.segment(e, (e + 1) % h, p);
                if best.as_ref().is_none_or(|b| cand.1 < b.1) {
                    best = Some(cand);
                }
            }
            let (q, _, support) = best.expect("polygon has at least one edge");
            (q, support)
        };
        let point: Vec<f64> = q[..self.dim].to_vec();
        let distance = x
            .iter()
            .zip(&point)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        Projection {
            point,
            distance,
            support,
        }
    }

    fn barycentric(&self, p: [f64; 2]) -> Vec<(usize, f64)> {
        let v = &self.verts;
        let k = self.fan_sector(p);
        let (a, b, c) = (v[0], v[k], v[k + 1]);
        let area = cross(a, b, c);
        let s = (cross(a, p, c) / area).max(0.0);
        let t = (cross(a, b, p) / area).max(0.0);
        let r = (1.0 - s - t).max(0.0);
        let total = r + s + t;
        [(0, r), (k, s), (k + 1, t)]
            .into_iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(j, w)| (self.indices[j], w / total))
            .collect()
    }
}
