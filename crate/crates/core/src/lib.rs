//! Core library for `sartomo`: simulation of SAR phase-history data from
//! point-scatterer scenes, L1-regularized tomographic inversion into sparse
//! scattering volumes, oriented point-cloud extraction, and watertight surface
//! recovery via a coordinate-network signed-distance field maintained with
//! iso-point sampling.

pub mod cloud;
pub mod error;
pub mod inversion;
pub mod io;
pub mod iso;
pub mod mesh;
pub mod rng;
pub mod scene;
pub mod sdf;
pub mod spatial;
pub mod train;

pub use error::{Error, Result};

/// 3-vector in meters.
pub type Vec3 = nalgebra::Vector3<f64>;
/// Complex sample type used throughout the measurement model.
pub type C64 = num_complex::Complex64;

/// Axis-aligned bounding box in meters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn diagonal(&self) -> f64 {
        let d = [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|d| p[d] >= self.min[d] && p[d] <= self.max[d])
    }

    /// Box grown by `factor` of its extent on every side (0.1 = 10%).
    pub fn inflate(&self, factor: f64) -> Aabb {
        let mut out = *self;
        for d in 0..3 {
            let pad = factor * (self.max[d] - self.min[d]);
            out.min[d] -= pad;
            out.max[d] += pad;
        }
        out
    }
}
