//! Analytic signed-distance fields implementing [`SdfField`]. They stand in
//! for a trained network in sampler and mesh tests, and serve as regression
//! targets when fitting small networks.

use super::SdfField;
use crate::Vec3;

#[derive(Debug, Clone, Copy)]
pub struct SphereSdf {
    pub center: Vec3,
    pub radius: f64,
}

impl SdfField for SphereSdf {
    fn value(&self, p: &Vec3) -> f64 {
        (p - self.center).norm() - self.radius
    }

    fn gradient(&self, p: &Vec3) -> Vec3 {
        let d = p - self.center;
        let n = d.norm();
        if n < 1e-12 {
            Vec3::new(0.0, 0.0, 1.0)
        } else {
            d / n
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PlaneSdf {
    /// Unit normal.
    pub normal: Vec3,
    /// Signed offset: f(p) = <n, p> - offset.
    pub offset: f64,
}

impl PlaneSdf {
    pub fn z0() -> Self {
        Self {
            normal: Vec3::new(0.0, 0.0, 1.0),
            offset: 0.0,
        }
    }
}

impl SdfField for PlaneSdf {
    fn value(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    fn gradient(&self, _p: &Vec3) -> Vec3 {
        self.normal
    }
}

/// Axis-aligned box; exact SDF with sharp edges, differentiable a.e.
#[derive(Debug, Clone, Copy)]
pub struct BoxSdf {
    pub center: Vec3,
    pub half_extents: Vec3,
}

impl SdfField for BoxSdf {
    fn value(&self, p: &Vec3) -> f64 {
        let d = p - self.center;
        let q = Vec3::new(
            d[0].abs() - self.half_extents[0],
            d[1].abs() - self.half_extents[1],
            d[2].abs() - self.half_extents[2],
        );
        let outside = Vec3::new(q[0].max(0.0), q[1].max(0.0), q[2].max(0.0));
        outside.norm() + q[0].max(q[1]).max(q[2]).min(0.0)
    }

    fn gradient(&self, p: &Vec3) -> Vec3 {
        let d = p - self.center;
        let q = Vec3::new(
            d[0].abs() - self.half_extents[0],
            d[1].abs() - self.half_extents[1],
            d[2].abs() - self.half_extents[2],
        );
        let outside = Vec3::new(q[0].max(0.0), q[1].max(0.0), q[2].max(0.0));
        let n = outside.norm();
        if n > 1e-12 {
            Vec3::new(
                d[0].signum() * outside[0] / n,
                d[1].signum() * outside[1] / n,
                d[2].signum() * outside[2] / n,
            )
        } else {
            // inside: push along the least-penetrated axis
            let mut axis = 0;
            for k in 1..3 {
                if q[k] > q[axis] {
                    axis = k;
                }
            }
            let mut g = Vec3::zeros();
            g[axis] = d[axis].signum();
            g
        }
    }
}

/// Distance from `p` to the closest of the 12 box edges; an oracle for the
/// edge-aware resampling tests, not an SDF.
pub fn box_edge_distance(b: &BoxSdf, p: &Vec3) -> f64 {
    let c = b.center;
    let h = b.half_extents;
    let mut best = f64::INFINITY;
    // edges run along each axis at the 4 sign combinations of the other two
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for su in [-1.0, 1.0] {
            for sv in [-1.0, 1.0] {
                let mut a0 = c;
                a0[axis] -= h[axis];
                a0[u] += su * h[u];
                a0[v] += sv * h[v];
                let mut a1 = a0;
                a1[axis] += 2.0 * h[axis];
                best = best.min(point_segment_distance(p, &a0, &a1));
            }
        }
    }
    best
}

fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}
