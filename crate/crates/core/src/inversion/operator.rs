//! Forward/adjoint measurement operator for one sub-aperture.
//!
//! Sample s of sub-aperture m (pulse-major, frequency-minor ordering) probes
//! the volume at spatial frequency kappa_s = (2 f / c) u(theta, phi) in cycles
//! per meter: y_s = sum_v S[v] exp(-2 pi j <kappa_s, p_v>). The direct path
//! evaluates that sum exactly and serves as the oracle; the gridded path
//! approximates it with a Kaiser-Bessel interpolated FFT.

use super::nufft::GriddedPlan;
use super::VoxelGrid;
use crate::scene::CollectionGeometry;
use crate::{C64, Error, Result};
use ndarray::Array3;
use rayon::prelude::*;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Spatial frequencies (cycles/m) probed by each sample of sub-aperture m.
pub fn subaperture_kappa(geom: &CollectionGeometry, m: usize) -> Result<Vec<[f64; 3]>> {
    let sa = geom
        .subapertures
        .get(m)
        .ok_or_else(|| Error::IndexOutOfRange(format!("sub-aperture {m}")))?;
    let mut kappa = Vec::with_capacity(sa.pulses.len() * geom.frequencies.len());
    for &(e, j) in &sa.pulses {
        let (theta, phi) = geom.pulse_angles(e, j);
        let u = [
            theta.cos() * phi.cos(),
            theta.sin() * phi.cos(),
            phi.sin(),
        ];
        for &f in &geom.frequencies {
            let scale = 2.0 * f / geom.speed_of_light;
            kappa.push([scale * u[0], scale * u[1], scale * u[2]]);
        }
    }
    Ok(kappa)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// Exact summation; O(N_vox * N_samples).
    Direct,
    /// Oversampled-FFT gridding with Kaiser-Bessel interpolation.
    Gridded,
}

pub struct SubApertureOperator {
    grid: VoxelGrid,
    kappa: Vec<[f64; 3]>,
    plan: Option<GriddedPlan>,
}

impl SubApertureOperator {
    pub fn new(
        grid: VoxelGrid,
        geom: &CollectionGeometry,
        m: usize,
        kind: OperatorKind,
    ) -> Result<Self> {
        grid.validate()?;
        let kappa = subaperture_kappa(geom, m)?;
        let plan = match kind {
            OperatorKind::Direct => None,
            OperatorKind::Gridded => Some(GriddedPlan::new(&grid, &kappa)),
        };
        Ok(Self { grid, kappa, plan })
    }

    pub fn num_samples(&self) -> usize {
        self.kappa.len()
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn forward(&self, img: &Array3<C64>) -> Vec<C64> {
        debug_assert_eq!(img.dim(), (self.grid.dims[0], self.grid.dims[1], self.grid.dims[2]));
        match &self.plan {
            Some(plan) => plan.forward(img),
            None => self.forward_direct(img),
        }
    }

    pub fn adjoint(&self, samples: &[C64]) -> Array3<C64> {
        assert_eq!(samples.len(), self.kappa.len(), "sample count mismatch");
        match &self.plan {
            Some(plan) => plan.adjoint(samples),
            None => self.adjoint_direct(samples),
        }
    }

    fn forward_direct(&self, img: &Array3<C64>) -> Vec<C64> {
        let g = &self.grid;
        // gather nonzero voxels once; the solver iterates on sparse images
        let mut voxels: Vec<([f64; 3], C64)> = Vec::new();
        for ((ix, iy, iz), &v) in img.indexed_iter() {
            if v != C64::new(0.0, 0.0) {
                let p = g.center([ix, iy, iz]);
                voxels.push(([p[0], p[1], p[2]], v));
            }
        }
        self.kappa
            .par_iter()
            .map(|k| {
                let mut acc = C64::new(0.0, 0.0);
                for (p, v) in &voxels {
                    let arg = -TWO_PI * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2]);
                    acc += v * C64::new(arg.cos(), arg.sin());
                }
                acc
            })
            .collect()
    }

    fn adjoint_direct(&self, samples: &[C64]) -> Array3<C64> {
        let g = self.grid;
        let dims = g.dims;
        let kappa = &self.kappa;
        let out: Vec<C64> = (0..g.num_voxels())
            .into_par_iter()
            .map(|flat| {
                let ix = flat / (dims[1] * dims[2]);
                let iy = (flat / dims[2]) % dims[1];
                let iz = flat % dims[2];
                let p = g.center([ix, iy, iz]);
                let mut acc = C64::new(0.0, 0.0);
                for (k, y) in kappa.iter().zip(samples.iter()) {
                    let arg = TWO_PI * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2]);
                    acc += y * C64::new(arg.cos(), arg.sin());
                }
                acc
            })
            .collect();
        Array3::from_shape_vec((dims[0], dims[1], dims[2]), out).expect("shape")
    }
}
