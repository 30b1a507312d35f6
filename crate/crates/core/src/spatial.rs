//! Spatial indices for neighbor queries: a static 3D k-d tree (median split)
//! and a uniform hash grid that supports incremental insertion.
//!
//! Query results are returned in ascending index order so that downstream
//! reductions are deterministic regardless of thread scheduling.

use crate::Vec3;
use std::collections::HashMap;

/// Static k-d tree over a point slice. Indices refer to the original slice.
pub struct KdTree3 {
    points: Vec<Vec3>,
    // node layout: perfect in-place recursion over `order`
    order: Vec<u32>,
}

struct Node {
    start: usize,
    end: usize,
    axis: usize,
}

impl KdTree3 {
    pub fn build(points: &[Vec3]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut tree = Self {
            points: points.to_vec(),
            order,
        };
        order = std::mem::take(&mut tree.order);
        let len = order.len();
        tree.split(&mut order, 0, len, 0);
        tree.order = order;
        tree
    }

    fn split(&self, order: &mut [u32], start: usize, end: usize, axis: usize) {
        if end - start <= 1 {
            return;
        }
        let mid = (start + end) / 2;
        let pts = &self.points;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a as usize][axis]
                .partial_cmp(&pts[b as usize][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        let next = (axis + 1) % 3;
        self.split(order, start, mid, next);
        self.split(order, mid + 1, end, next);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of all points with distance <= radius from `q`, ascending.
    pub fn radius_neighbors(&self, q: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if self.points.is_empty() {
            return out;
        }
        let r2 = radius * radius;
        let mut stack = vec![Node {
            start: 0,
            end: self.points.len(),
            axis: 0,
        }];
        while let Some(node) = stack.pop() {
            if node.end - node.start == 0 {
                continue;
            }
            let mid = (node.start + node.end) / 2;
            let idx = self.order[mid] as usize;
            let p = &self.points[idx];
            let d2 = (p - q).norm_squared();
            if d2 <= r2 {
                out.push(idx);
            }
            let delta = q[node.axis] - p[node.axis];
            let next = (node.axis + 1) % 3;
            if node.start < mid && delta <= radius {
                stack.push(Node {
                    start: node.start,
                    end: mid,
                    axis: next,
                });
            }
            if mid + 1 < node.end && delta >= -radius {
                stack.push(Node {
                    start: mid + 1,
                    end: node.end,
                    axis: next,
                });
            }
        }
        out.sort_unstable();
        out
    }

    /// Index and squared distance of the nearest point to `q`.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(q, 0, self.points.len(), 0, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, q: &Vec3, start: usize, end: usize, axis: usize, best: &mut (usize, f64)) {
        if end <= start {
            return;
        }
        let mid = (start + end) / 2;
        let idx = self.order[mid] as usize;
        let p = &self.points[idx];
        let d2 = (p - q).norm_squared();
        // strict improvement plus lowest-index tie break keeps results unique
        if d2 < best.1 || (d2 == best.1 && idx < best.0) {
            *best = (idx, d2);
        }
        let delta = q[axis] - p[axis];
        let next = (axis + 1) % 3;
        let (near, far) = if delta < 0.0 {
            ((start, mid), (mid + 1, end))
        } else {
            ((mid + 1, end), (start, mid))
        };
        self.nearest_rec(q, near.0, near.1, next, best);
        if delta * delta <= best.1 {
            self.nearest_rec(q, far.0, far.1, next, best);
        }
    }
}

/// Uniform hash grid with cell size `cell`; supports insertion, used where the
/// point set grows during a pass (upsampling).
pub struct GridIndex {
    cell: f64,
    points: Vec<Vec3>,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
}

impl GridIndex {
    pub fn new(cell: f64) -> Self {
        assert!(cell > 0.0);
        Self {
            cell,
            points: Vec::new(),
            cells: HashMap::new(),
        }
    }

    pub fn with_points(cell: f64, points: &[Vec3]) -> Self {
        let mut g = Self::new(cell);
        for p in points {
            g.insert(*p);
        }
        g
    }

    fn key(&self, p: &Vec3) -> (i64, i64, i64) {
        (
            (p[0] / self.cell).floor() as i64,
            (p[1] / self.cell).floor() as i64,
            (p[2] / self.cell).floor() as i64,
        )
    }

    pub fn insert(&mut self, p: Vec3) -> usize {
        let idx = self.points.len();
        let key = self.key(&p);
        self.points.push(p);
        self.cells.entry(key).or_default().push(idx as u32);
        idx
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Indices of points with distance <= radius of `q`, ascending. Requires
    /// radius <= cell size to stay within the 27-cell stencil.
    pub fn radius_neighbors(&self, q: &Vec3, radius: f64) -> Vec<usize> {
        debug_assert!(radius <= self.cell + 1e-12);
        let r2 = radius * radius;
        let (cx, cy, cz) = self.key(q);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &i in ids {
                            if (self.points[i as usize] - q).norm_squared() <= r2 {
                                out.push(i as usize);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn brute_radius(points: &[Vec3], q: &Vec3, r: f64) -> Vec<usize> {
        points
            .iter()
            .enumerate()
            .filter(|(_, p)| (*p - q).norm() <= r)
            .map(|(i, _)| i)
            .collect()
    }

    #[test]
    fn test_kdtree_matches_brute_force() {
        let mut rng = crate::rng::stream(1, 0);
        let points: Vec<Vec3> = (0..300)
            .map(|_| Vec3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()))
            .collect();
        let tree = KdTree3::build(&points);
        for _ in 0..50 {
            let q = Vec3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            let got = tree.radius_neighbors(&q, 0.2);
            let want = brute_radius(&points, &q, 0.2);
            assert_eq!(got, want);
            let (ni, nd2) = tree.nearest(&q).unwrap();
            let bi = points
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - q).norm_squared().partial_cmp(&(b.1 - q).norm_squared()).unwrap())
                .unwrap()
                .0;
            assert!((nd2 - (points[bi] - q).norm_squared()).abs() < 1e-15);
            assert!((points[ni] - q).norm_squared() <= (points[bi] - q).norm_squared() + 1e-15);
        }
    }

    #[test]
    fn test_grid_index_matches_brute_force() {
        let mut rng = crate::rng::stream(2, 0);
        let mut grid = GridIndex::new(0.25);
        let mut points = Vec::new();
        for _ in 0..200 {
            let p = Vec3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            grid.insert(p);
            points.push(p);
        }
        for _ in 0..50 {
            let q = Vec3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            assert_eq!(grid.radius_neighbors(&q, 0.25), brute_radius(&points, &q, 0.25));
        }
    }
}
