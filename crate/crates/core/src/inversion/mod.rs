//! Tomographic inversion: recover per-sub-aperture complex scattering volumes
//! from phase history by L1-regularized least squares, then fuse the volumes
//! non-coherently into a single nonnegative magnitude image.

mod fista;
mod nufft;
mod operator;

pub use fista::{fista, FistaOptions, SolveInfo};
pub use nufft::GriddedPlan;
pub use operator::{subaperture_kappa, OperatorKind, SubApertureOperator};

use crate::scene::PhaseHistory;
use crate::{Aabb, C64, Error, Result, Vec3};
use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Regular voxel lattice. `origin` is the center of voxel (0,0,0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub dims: [usize; 3],
}

impl VoxelGrid {
    pub fn new(origin: [f64; 3], spacing: [f64; 3], dims: [usize; 3]) -> Result<Self> {
        let g = Self {
            origin,
            spacing,
            dims,
        };
        g.validate()?;
        Ok(g)
    }

    /// Grid covering `bbox` with uniform spacing c/(2 bandwidth).
    pub fn auto(bbox: &Aabb, bandwidth_hz: f64, c: f64) -> Result<Self> {
        if bandwidth_hz <= 0.0 {
            return Err(Error::InvalidConfig("bandwidth must be positive".into()));
        }
        let h = c / (2.0 * bandwidth_hz);
        let mut dims = [0usize; 3];
        let mut origin = [0f64; 3];
        for d in 0..3 {
            let extent = bbox.max[d] - bbox.min[d];
            let n = (extent / h).ceil().max(1.0) as usize;
            dims[d] = n;
            // center the lattice inside the box
            origin[d] = bbox.min[d] + 0.5 * (extent - (n - 1) as f64 * h);
        }
        Self::new(origin, [h, h, h], dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.spacing.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidConfig("voxel spacing must be positive".into()));
        }
        if self.dims.iter().any(|&n| n == 0) {
            return Err(Error::InvalidConfig("voxel dims must be positive".into()));
        }
        let smax = self.spacing.iter().cloned().fold(f64::MIN, f64::max);
        let smin = self.spacing.iter().cloned().fold(f64::MAX, f64::min);
        if smax / smin > 1.5 {
            return Err(Error::InvalidConfig(
                "voxels must be cube-like (max/min spacing ratio <= 1.5)".into(),
            ));
        }
        Ok(())
    }

    pub fn num_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn center(&self, idx: [usize; 3]) -> Vec3 {
        Vec3::new(
            self.origin[0] + idx[0] as f64 * self.spacing[0],
            self.origin[1] + idx[1] as f64 * self.spacing[1],
            self.origin[2] + idx[2] as f64 * self.spacing[2],
        )
    }

    /// Lattice index of the voxel whose center is nearest to `p`.
    pub fn nearest_voxel(&self, p: &Vec3) -> [usize; 3] {
        let mut idx = [0usize; 3];
        for d in 0..3 {
            let i = ((p[d] - self.origin[d]) / self.spacing[d]).round();
            idx[d] = i.clamp(0.0, (self.dims[d] - 1) as f64) as usize;
        }
        idx
    }
}

/// Complex scattering volume recovered for one sub-aperture.
#[derive(Debug, Clone)]
pub struct SubApertureImage {
    pub m: usize,
    pub grid: VoxelGrid,
    pub values: Array3<C64>,
}

/// Non-coherently fused magnitude volume.
#[derive(Debug, Clone)]
pub struct FusedImage {
    pub grid: VoxelGrid,
    pub values: Array3<f64>,
}

/// Regularization selector for [`solve_subaperture`].
#[derive(Debug, Clone, Copy)]
pub enum Regularization {
    /// Absolute L1 weight.
    Lambda(f64),
    /// Fraction of ||F^H Y||_inf.
    LambdaRel(f64),
    /// Residual energy target; lambda found by bisection.
    Sigma2(f64),
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::LambdaRel(0.05)
    }
}

/// Solve one sub-aperture volume by FISTA with complex soft-thresholding.
pub fn solve_subaperture(
    ph: &PhaseHistory,
    grid: &VoxelGrid,
    m: usize,
    reg: Regularization,
    opts: &FistaOptions,
    kind: OperatorKind,
) -> Result<(SubApertureImage, SolveInfo)> {
    let y = ph.subaperture_samples(m)?;
    if y.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::NonFinite(format!("sub-aperture {m} samples")));
    }
    let op = SubApertureOperator::new(grid.clone(), &ph.geometry, m, kind)?;
    let adj = op.adjoint(&y);
    let lambda_max = adj.iter().map(|c| c.norm()).fold(0.0, f64::max);

    match reg {
        Regularization::Lambda(l) => {
            if l <= 0.0 {
                return Err(Error::InvalidConfig("lambda must be positive".into()));
            }
            let (values, info) = fista(&op, &y, l, opts);
            Ok((
                SubApertureImage {
                    m,
                    grid: grid.clone(),
                    values,
                },
                info,
            ))
        }
        Regularization::LambdaRel(r) => {
            if r <= 0.0 {
                return Err(Error::InvalidConfig("relative lambda must be positive".into()));
            }
            solve_subaperture(ph, grid, m, Regularization::Lambda(r * lambda_max), opts, kind)
        }
        Regularization::Sigma2(sigma2) => {
            if sigma2 < 0.0 {
                return Err(Error::InvalidConfig("sigma2 must be nonnegative".into()));
            }
            // residual energy grows monotonically with lambda; bisect in log space
            let y_energy: f64 = y.iter().map(|c| c.norm_sqr()).sum();
            if y_energy <= 1.1 * sigma2 {
                // even the zero image meets the budget
                let values = Array3::from_elem(
                    (grid.dims[0], grid.dims[1], grid.dims[2]),
                    C64::new(0.0, 0.0),
                );
                let mut info = SolveInfo::empty(lambda_max);
                info.residual_energy = y_energy;
                return Ok((
                    SubApertureImage {
                        m,
                        grid: grid.clone(),
                        values,
                    },
                    info,
                ));
            }
            let mut lo = (1e-6 * lambda_max).ln();
            let mut hi = lambda_max.ln();
            let mut best = None;
            for _ in 0..12 {
                let lambda = ((lo + hi) / 2.0).exp();
                let (values, info) = fista(&op, &y, lambda, opts);
                let r = info.residual_energy;
                best = Some((values, info));
                if r < 0.9 * sigma2 {
                    lo = lambda.ln();
                } else if r > 1.1 * sigma2 {
                    hi = lambda.ln();
                } else {
                    break;
                }
            }
            let (values, info) = best.expect("at least one bisection step");
            Ok((
                SubApertureImage {
                    m,
                    grid: grid.clone(),
                    values,
                },
                info,
            ))
        }
    }
}

/// Solve every sub-aperture independently (concurrently over m).
pub fn invert_all(
    ph: &PhaseHistory,
    grid: &VoxelGrid,
    reg: Regularization,
    opts: &FistaOptions,
    kind: OperatorKind,
) -> Result<Vec<(SubApertureImage, SolveInfo)>> {
    (0..ph.geometry.num_subapertures())
        .into_par_iter()
        .map(|m| solve_subaperture(ph, grid, m, reg, opts, kind))
        .collect()
}

/// Element-wise sum of magnitudes across sub-aperture images.
pub fn fuse_noncoherent(images: &[SubApertureImage]) -> Result<FusedImage> {
    let first = images.first().ok_or(Error::EmptyPointCloud).map_err(|_| {
        Error::InvalidConfig("fuse_noncoherent requires at least one image".into())
    })?;
    let grid = first.grid;
    let mut values = Array3::zeros((grid.dims[0], grid.dims[1], grid.dims[2]));
    for img in images {
        if img.grid != grid {
            return Err(Error::ShapeMismatch(
                "sub-aperture images share one voxel grid".into(),
            ));
        }
        ndarray::Zip::from(&mut values)
            .and(&img.values)
            .for_each(|a, b| *a += b.norm());
    }
    Ok(FusedImage { grid, values })
}
