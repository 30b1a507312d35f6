//! Point-cloud preparation: threshold the fused volume, attach max-response
//! viewing directions, and estimate oriented normals by local PCA with a
//! viewing-direction fallback.

use crate::inversion::{FusedImage, SubApertureImage};
use crate::scene::CollectionGeometry;
use crate::spatial::KdTree3;
use crate::{Error, Result, Vec3};
use nalgebra::Matrix3;
use rayon::prelude::*;

/// Threshold selector: absolute magnitude or a magnitude quantile.
#[derive(Debug, Clone, Copy)]
pub enum Threshold {
    Absolute(f64),
    Quantile(f64),
}

/// Points with unit normals, unit viewing directions, and fused magnitudes.
#[derive(Debug, Clone, Default)]
pub struct OrientedPointCloud {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub view_dirs: Vec<Vec3>,
    pub magnitudes: Vec<f64>,
}

impl OrientedPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if self.normals.len() != n || self.view_dirs.len() != n || self.magnitudes.len() != n {
            return Err(Error::ShapeMismatch("point cloud arrays are congruent".into()));
        }
        for (i, (nv, vv)) in self.normals.iter().zip(self.view_dirs.iter()).enumerate() {
            if (nv.norm() - 1.0).abs() > 1e-6 || (vv.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidConfig(format!(
                    "normal or view direction {i} is not unit length"
                )));
            }
        }
        Ok(())
    }
}

/// Voxel centers whose fused magnitude clears the threshold, with magnitudes
/// and lattice indices. Quantile mode picks tau as the given magnitude
/// quantile over all voxels.
pub fn threshold_points(
    fused: &FusedImage,
    thr: Threshold,
) -> Result<(Vec<Vec3>, Vec<f64>, Vec<[usize; 3]>)> {
    let tau = match thr {
        Threshold::Absolute(t) => {
            if t <= 0.0 {
                return Err(Error::InvalidConfig("threshold must be positive".into()));
            }
            t
        }
        Threshold::Quantile(q) => {
            if !(0.0 < q && q < 1.0) {
                return Err(Error::InvalidConfig("quantile must lie in (0, 1)".into()));
            }
            let mut mags: Vec<f64> = fused.values.iter().cloned().collect();
            mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let pos = ((q * mags.len() as f64).ceil() as usize).max(1) - 1;
            mags[pos.min(mags.len() - 1)]
        }
    };
    let mut points = Vec::new();
    let mut magnitudes = Vec::new();
    let mut indices = Vec::new();
    for ((ix, iy, iz), &v) in fused.values.indexed_iter() {
        if v >= tau {
            points.push(fused.grid.center([ix, iy, iz]));
            magnitudes.push(v);
            indices.push([ix, iy, iz]);
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyPointCloud);
    }
    Ok((points, magnitudes, indices))
}

/// Viewing direction of the sub-aperture with the strongest response at each
/// point; ties break toward the lowest sub-aperture index.
pub fn max_response_views(
    images: &[SubApertureImage],
    geom: &CollectionGeometry,
    voxel_indices: &[[usize; 3]],
) -> Result<Vec<Vec3>> {
    if images.is_empty() {
        return Err(Error::InvalidConfig("no sub-aperture images".into()));
    }
    voxel_indices
        .iter()
        .map(|&idx| {
            let mut best_m = images[0].m;
            let mut best_mag = f64::NEG_INFINITY;
            for img in images {
                let mag = img.values[[idx[0], idx[1], idx[2]]].norm();
                if mag > best_mag || (mag == best_mag && img.m < best_m) {
                    best_mag = mag;
                    best_m = img.m;
                }
            }
            let sa = geom
                .subapertures
                .get(best_m)
                .ok_or_else(|| Error::IndexOutOfRange(format!("sub-aperture {best_m}")))?;
            Ok(sa.look())
        })
        .collect()
}

/// PCA normals over neighbors within `radius`, oriented so dot(n, v) >= 0.
/// Points with fewer than 3 other neighbors in the ball, or a degenerate
/// (collinear) neighborhood, fall back to the viewing direction.
pub fn estimate_normals(points: &[Vec3], view_dirs: &[Vec3], radius: f64) -> Result<Vec<Vec3>> {
    if radius <= 0.0 {
        return Err(Error::InvalidConfig("radius must be positive".into()));
    }
    if points.len() != view_dirs.len() {
        return Err(Error::ShapeMismatch("points and view_dirs".into()));
    }
    let tree = KdTree3::build(points);
    let normals: Vec<Vec3> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| pca_normal(&tree, points, p, i, view_dirs[i], radius))
        .collect();
    Ok(normals)
}

/// Single-point PCA normal with the fallback rules; shared with the trainer's
/// iso-point normal estimation.
pub fn pca_normal(
    tree: &KdTree3,
    points: &[Vec3],
    p: &Vec3,
    self_index: usize,
    fallback: Vec3,
    radius: f64,
) -> Vec3 {
    let neighbors = tree.radius_neighbors(p, radius);
    let others: Vec<usize> = neighbors.into_iter().filter(|&j| j != self_index).collect();
    if others.len() < 3 {
        return fallback;
    }
    let mut mean = *p;
    for &j in &others {
        mean += points[j];
    }
    mean /= (others.len() + 1) as f64;
    let mut cov = Matrix3::zeros();
    let d0 = p - mean;
    cov += d0 * d0.transpose();
    for &j in &others {
        let d = points[j] - mean;
        cov += d * d.transpose();
    }
    cov /= (others.len() + 1) as f64;
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let smallest = eig.eigenvalues[order[0]];
    let middle = eig.eigenvalues[order[1]];
    // two equal smallest eigenvalues: collinear neighborhood, no unique plane
    if (middle - smallest).abs() <= 1e-9 * middle.abs().max(1e-30) {
        return fallback;
    }
    let mut n: Vec3 = eig.eigenvectors.column(order[0]).into();
    let norm = n.norm();
    if norm < 1e-12 {
        return fallback;
    }
    n /= norm;
    if n.dot(&fallback) < 0.0 {
        n = -n;
    }
    n
}

/// Full preparation step: threshold, attach views, estimate normals.
pub fn prepare_cloud(
    fused: &FusedImage,
    images: &[SubApertureImage],
    geom: &CollectionGeometry,
    thr: Threshold,
    normal_radius: f64,
) -> Result<OrientedPointCloud> {
    let (points, magnitudes, indices) = threshold_points(fused, thr)?;
    let view_dirs = max_response_views(images, geom, &indices)?;
    let normals = estimate_normals(&points, &view_dirs, normal_radius)?;
    let cloud = OrientedPointCloud {
        points,
        normals,
        view_dirs,
        magnitudes,
    };
    cloud.validate()?;
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inversion::VoxelGrid;
    use crate::C64;
    use ndarray::Array3;
    use rand::Rng;

    fn grid4() -> VoxelGrid {
        VoxelGrid::new([0.0; 3], [0.1, 0.1, 0.1], [4, 4, 4]).unwrap()
    }

    #[test]
    fn test_threshold_uniform_volume_returns_all() {
        let fused = FusedImage {
            grid: grid4(),
            values: Array3::from_elem((4, 4, 4), 2.0),
        };
        let (points, mags, _) = threshold_points(&fused, Threshold::Absolute(1.5)).unwrap();
        assert_eq!(points.len(), 64);
        assert!(mags.iter().all(|&m| m == 2.0));
    }

    #[test]
    fn test_threshold_one_hot() {
        let mut values = Array3::zeros((4, 4, 4));
        values[[1, 2, 3]] = 4.0;
        let fused = FusedImage {
            grid: grid4(),
            values,
        };
        let (points, _, idx) = threshold_points(&fused, Threshold::Absolute(2.0)).unwrap();
        assert_eq!(points.len(), 1);
        assert_eq!(idx[0], [1, 2, 3]);
        assert_eq!(points[0], grid4().center([1, 2, 3]));
    }

    #[test]
    fn test_threshold_empty_errors() {
        let fused = FusedImage {
            grid: grid4(),
            values: Array3::from_elem((4, 4, 4), 0.5),
        };
        assert!(matches!(
            threshold_points(&fused, Threshold::Absolute(1.0)),
            Err(Error::EmptyPointCloud)
        ));
    }

    #[test]
    fn test_threshold_quantile_matches_sort_oracle() {
        let mut rng = crate::rng::stream(31, 0);
        let grid = VoxelGrid::new([0.0; 3], [0.1; 3], [10, 10, 10]).unwrap();
        let values = Array3::from_shape_fn((10, 10, 10), |_| rng.gen::<f64>());
        let fused = FusedImage { grid, values };
        let q = 0.99;
        let (points, _, _) = threshold_points(&fused, Threshold::Quantile(q)).unwrap();
        // independent full sort
        let mut sorted: Vec<f64> = fused.values.iter().cloned().collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let tau = sorted[((q * 1000.0).ceil() as usize) - 1];
        let expect = fused.values.iter().filter(|&&v| v >= tau).count();
        assert_eq!(points.len(), expect);
        // about 1% of voxels survive
        assert!((points.len() as i64 - 10).unsigned_abs() <= 2);
    }

    fn image_with_mag(grid: VoxelGrid, m: usize, mag: f64) -> SubApertureImage {
        SubApertureImage {
            m,
            grid,
            values: Array3::from_elem((4, 4, 4), C64::new(mag, 0.0)),
        }
    }

    #[test]
    fn test_views_single_subaperture() {
        let geom = crate::inversion::tests::test_geometry(8, 4);
        let img = image_with_mag(grid4(), 0, 1.0);
        let views = max_response_views(&[img], &geom, &[[0, 0, 0], [1, 1, 1]]).unwrap();
        let want = geom.subapertures[0].look();
        for v in views {
            assert!((v - want).norm() < 1e-12);
        }
    }

    #[test]
    fn test_views_pick_strongest() {
        let geom = crate::inversion::tests::test_geometry(8, 4);
        let weak = image_with_mag(grid4(), 0, 0.0);
        let strong = image_with_mag(grid4(), 1, 3.0);
        let views = max_response_views(&[weak, strong], &geom, &[[2, 2, 2]]).unwrap();
        assert!((views[0] - geom.subapertures[1].look()).norm() < 1e-12);
    }

    #[test]
    fn test_views_match_exhaustive_argmax() {
        let geom = crate::inversion::tests::test_geometry(8, 4);
        let grid = grid4();
        let mut rng = crate::rng::stream(17, 3);
        let images: Vec<SubApertureImage> = (0..geom.num_subapertures().min(8))
            .map(|m| SubApertureImage {
                m,
                grid,
                values: Array3::from_shape_fn((4, 4, 4), |_| {
                    C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
                }),
            })
            .collect();
        let indices: Vec<[usize; 3]> = (0..10)
            .map(|_| {
                [
                    rng.gen_range(0..4usize),
                    rng.gen_range(0..4usize),
                    rng.gen_range(0..4usize),
                ]
            })
            .collect();
        let views = max_response_views(&images, &geom, &indices).unwrap();
        for (idx, v) in indices.iter().zip(views.iter()) {
            let mut best = (0usize, f64::NEG_INFINITY);
            for img in &images {
                let mag = img.values[[idx[0], idx[1], idx[2]]].norm();
                if mag > best.1 {
                    best = (img.m, mag);
                }
            }
            assert!((v - geom.subapertures[best.0].look()).norm() < 1e-12);
        }
    }

    #[test]
    fn test_normals_coplanar_points() {
        let points = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::new(0.0, 0.1, 0.0),
            Vec3::new(0.1, 0.1, 0.0),
        ];
        let views = vec![Vec3::new(0.0, 0.0, 1.0); 4];
        let normals = estimate_normals(&points, &views, 0.3).unwrap();
        for n in normals {
            assert!((n - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn test_normals_isolated_point_falls_back_to_view() {
        let points = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(5.0, 5.0, 5.0)];
        let v = Vec3::new(1.0, 0.0, 0.0);
        let normals = estimate_normals(&points, &[v, v], 0.3).unwrap();
        assert_eq!(normals[0], v);
        assert_eq!(normals[1], v);
    }

    #[test]
    fn test_normals_collinear_falls_back() {
        let points: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64 * 0.05, 0.0, 0.0)).collect();
        let v = Vec3::new(0.0, 0.0, 1.0);
        let views = vec![v; 5];
        let normals = estimate_normals(&points, &views, 0.3).unwrap();
        for n in normals {
            assert_eq!(n, v);
        }
    }

    #[test]
    fn test_normals_on_sphere_match_analytic() {
        // 200 points on the unit sphere with radially outward views
        let mut rng = crate::rng::stream(55, 0);
        use rand_distr::{Distribution, StandardNormal};
        let points: Vec<Vec3> = (0..200)
            .map(|_| {
                let v = Vec3::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                );
                v.normalize()
            })
            .collect();
        let views: Vec<Vec3> = points.clone();
        let normals = estimate_normals(&points, &views, 0.3).unwrap();
        let mut angular_sum = 0.0;
        for (p, n) in points.iter().zip(normals.iter()) {
            let cosang = n.dot(p).clamp(-1.0, 1.0);
            angular_sum += cosang.acos().to_degrees();
        }
        let mean_deg = angular_sum / points.len() as f64;
        assert!(mean_deg < 10.0, "mean angular error {mean_deg} deg");
    }

    #[test]
    fn test_normals_sign_convention() {
        let mut rng = crate::rng::stream(56, 0);
        let points: Vec<Vec3> = (0..50)
            .map(|_| Vec3::new(rng.gen::<f64>(), rng.gen::<f64>(), 0.02 * rng.gen::<f64>()))
            .collect();
        let v = Vec3::new(0.3, -0.2, 0.9).normalize();
        let views = vec![v; 50];
        let normals = estimate_normals(&points, &views, 0.4).unwrap();
        for n in &normals {
            assert!(n.dot(&v) >= 0.0);
            assert!((n.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn test_normals_rotation_equivariance() {
        use nalgebra::Rotation3;
        let mut rng = crate::rng::stream(57, 0);
        let points: Vec<Vec3> = (0..80)
            .map(|_| Vec3::new(rng.gen::<f64>(), rng.gen::<f64>(), (rng.gen::<f64>() - 0.5) * 0.05))
            .collect();
        let views: Vec<Vec3> = (0..80)
            .map(|_| {
                Vec3::new(
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() + 0.5,
                )
                .normalize()
            })
            .collect();
        let normals = estimate_normals(&points, &views, 0.3).unwrap();
        for _ in 0..3 {
            let axis = Vec3::new(
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
            )
            .normalize();
            let rot = Rotation3::from_axis_angle(
                &nalgebra::Unit::new_normalize(axis),
                rng.gen::<f64>() * std::f64::consts::PI,
            );
            let rp: Vec<Vec3> = points.iter().map(|p| rot * p).collect();
            let rv: Vec<Vec3> = views.iter().map(|v| rot * v).collect();
            let rn = estimate_normals(&rp, &rv, 0.3).unwrap();
            for (n, nr) in normals.iter().zip(rn.iter()) {
                assert!(
                    ((rot * n) - nr).norm() < 1e-6,
                    "rotated normal mismatch: {:?} vs {:?}",
                    rot * n,
                    nr
                );
            }
        }
    }
}
