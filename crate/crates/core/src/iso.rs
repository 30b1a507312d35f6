//! Iso-point maintenance on the zero-level set of a signed-distance field:
//! clipped Newton projection, repulsion-based uniform resampling, edge-aware
//! resampling, and priority-driven upsampling. All passes run against a frozen
//! spatial index and re-project their outputs, so every emitted point carries
//! a residual within the projection tolerance.

use crate::rng::stream;
use crate::sdf::SdfField;
use crate::spatial::{GridIndex, KdTree3};
use crate::{Aabb, Error, Result, Vec3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Residual tolerance defining membership of the zero-level set.
pub const RESIDUAL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerParams {
    /// Maximum update step length (clip threshold).
    pub tau0: f64,
    /// Neighborhood ball radius.
    pub epsilon: f64,
    /// Density bandwidth of the repulsion weight.
    pub sigma_p: f64,
    /// Repulsion step size.
    pub alpha_step: f64,
    pub max_newton_iters: usize,
}

impl SamplerParams {
    pub fn validate(&self) -> Result<()> {
        if self.tau0 <= 0.0
            || self.epsilon <= 0.0
            || self.sigma_p <= 0.0
            || self.alpha_step <= 0.0
            || self.max_newton_iters == 0
        {
            return Err(Error::InvalidConfig("sampler parameters must be positive".into()));
        }
        Ok(())
    }

    /// Bounding-box heuristic when no cloud spacing is available.
    pub fn for_scene(bbox: &Aabb, target_count: usize) -> Self {
        let diag = bbox.diagonal().max(1e-9);
        let spacing = 1.3 * diag / (target_count.max(4) as f64).sqrt();
        Self::from_spacing(diag, spacing)
    }

    /// Derive the neighborhood scales from a cloud's median nearest-neighbor
    /// spacing, rescaled from the cloud count to the target count.
    pub fn from_cloud(points: &[Vec3], target_count: usize, bbox: &Aabb) -> Self {
        let diag = bbox.diagonal().max(1e-9);
        if points.len() < 2 {
            return Self::for_scene(bbox, target_count);
        }
        let tree = KdTree3::build(points);
        let mut nn: Vec<f64> = points
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let ns = tree.radius_neighbors(p, diag);
                ns.into_iter()
                    .filter(|&j| j != i)
                    .map(|j| (points[j] - p).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        nn.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = nn[nn.len() / 2];
        if !median.is_finite() || median <= 0.0 {
            return Self::for_scene(bbox, target_count);
        }
        let spacing = median * (points.len() as f64 / target_count.max(1) as f64).sqrt();
        Self::from_spacing(diag, spacing)
    }

    fn from_spacing(diag: f64, spacing: f64) -> Self {
        let epsilon = (2.0 * spacing).max(1e-6);
        Self {
            tau0: diag / 20.0,
            epsilon,
            sigma_p: epsilon / 2f64.sqrt(),
            alpha_step: 0.5,
            max_newton_iters: 10,
        }
    }
}

/// Points maintained on the zero-level set, with normalized-Jacobian normals
/// and |f(q)| residuals.
#[derive(Debug, Clone, Default)]
pub struct IsoPointSet {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub residuals: Vec<f64>,
}

impl IsoPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().cloned().fold(0.0, f64::max)
    }
}

/// Clip to length tau0, preserving direction; zero maps to zero.
pub fn clip_step(x: &Vec3, tau0: f64) -> Vec3 {
    let n = x.norm();
    if n <= tau0 || n == 0.0 {
        *x
    } else {
        x * (tau0 / n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionStatus {
    Converged,
    MaxIters,
    DegenerateGradient,
}

#[derive(Debug, Clone, Copy)]
pub struct Projection {
    pub point: Vec3,
    pub residual: f64,
    pub normal: Vec3,
    pub iterations: usize,
    pub status: ProjectionStatus,
}

/// Clipped Newton iteration toward the zero-level set:
/// q <- q - clip(J f / ||J||^2, tau0), until |f(q)| <= 1e-4.
pub fn project_newton<F: SdfField + ?Sized>(field: &F, q0: Vec3, params: &SamplerParams) -> Projection {
    let mut q = q0;
    let (mut value, mut grad) = field.value_and_gradient(&q);
    if value.abs() <= RESIDUAL_TOL {
        return Projection {
            point: q,
            residual: value.abs(),
            normal: safe_normal(&grad),
            iterations: 0,
            status: ProjectionStatus::Converged,
        };
    }
    for it in 1..=params.max_newton_iters {
        let g2 = grad.norm_squared();
        if g2.sqrt() < 1e-9 {
            return Projection {
                point: q,
                residual: value.abs(),
                normal: Vec3::new(0.0, 0.0, 1.0),
                iterations: it - 1,
                status: ProjectionStatus::DegenerateGradient,
            };
        }
        let step = grad * (value / g2);
        q -= clip_step(&step, params.tau0);
        let (v, g) = field.value_and_gradient(&q);
        value = v;
        grad = g;
        if value.abs() <= RESIDUAL_TOL {
            return Projection {
                point: q,
                residual: value.abs(),
                normal: safe_normal(&grad),
                iterations: it,
                status: ProjectionStatus::Converged,
            };
        }
    }
    Projection {
        point: q,
        residual: value.abs(),
        normal: safe_normal(&grad),
        iterations: params.max_newton_iters,
        status: ProjectionStatus::MaxIters,
    }
}

fn safe_normal(grad: &Vec3) -> Vec3 {
    let n = grad.norm();
    if n < 1e-12 {
        Vec3::new(0.0, 0.0, 1.0)
    } else {
        grad / n
    }
}

/// Repulsion weight w(q_i, q) = exp(-||q_i - q||^2 / sigma_p^2).
pub fn repulsion_weight(qi: &Vec3, q: &Vec3, sigma_p: f64) -> f64 {
    (-(qi - q).norm_squared() / (sigma_p * sigma_p)).exp()
}

/// Move points away from high-density regions, then re-project. Points whose
/// re-projection fails are dropped.
pub fn resample_uniform<F: SdfField + ?Sized>(
    iso: &IsoPointSet,
    field: &F,
    params: &SamplerParams,
) -> IsoPointSet {
    let tree = KdTree3::build(&iso.points);
    let moved: Vec<Option<Projection>> = iso
        .points
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let neighbors: Vec<usize> = tree
                .radius_neighbors(q, params.epsilon)
                .into_iter()
                .filter(|&j| j != i)
                .collect();
            if neighbors.is_empty() {
                // nothing to repel from; the point stays as-is
                return Some(Projection {
                    point: *q,
                    residual: iso.residuals[i],
                    normal: iso.normals[i],
                    iterations: 0,
                    status: ProjectionStatus::Converged,
                });
            }
            let mut delta = Vec3::zeros();
            for &j in &neighbors {
                let d = iso.points[j] - q;
                let dist = d.norm() + 1e-12;
                delta += (d / dist) * repulsion_weight(&iso.points[j], q, params.sigma_p);
            }
            let candidate = q - delta * params.alpha_step;
            let proj = project_newton(field, candidate, params);
            (proj.status == ProjectionStatus::Converged).then_some(proj)
        })
        .collect();
    collect_projections(moved)
}

/// Anisotropic projection weight of the edge-aware update.
fn edge_weight_exponent(ni: &Vec3, offset: &Vec3, sigma_p: f64) -> f64 {
    -(ni.dot(offset)) / (sigma_p * sigma_p)
}

/// Edge-aware resampling: a normal-anisotropic attraction toward coplanar
/// neighbors plus half-weight repulsion, both clipped, then re-projection.
pub fn resample_edge_aware<F: SdfField + ?Sized>(
    iso: &IsoPointSet,
    field: &F,
    params: &SamplerParams,
) -> IsoPointSet {
    let tree = KdTree3::build(&iso.points);
    let moved: Vec<Option<Projection>> = iso
        .points
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let neighbors: Vec<usize> = tree
                .radius_neighbors(q, params.epsilon)
                .into_iter()
                .filter(|&j| j != i)
                .collect();
            if neighbors.is_empty() {
                return Some(Projection {
                    point: *q,
                    residual: iso.residuals[i],
                    normal: iso.normals[i],
                    iterations: 0,
                    status: ProjectionStatus::Converged,
                });
            }
            // log-sum-exp guard: phi weights are used only as ratios
            let exponents: Vec<f64> = neighbors
                .iter()
                .map(|&j| edge_weight_exponent(&iso.normals[j], &(iso.points[j] - q), params.sigma_p))
                .collect();
            let max_exp = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut edge_num = Vec3::zeros();
            let mut edge_den = 1e-12;
            let mut rep_num = Vec3::zeros();
            let mut rep_den = 1e-12;
            for (k, &j) in neighbors.iter().enumerate() {
                let d = iso.points[j] - q;
                let phi = (exponents[k] - max_exp).exp();
                edge_num += d * phi;
                edge_den += phi;
                let w = repulsion_weight(&iso.points[j], q, params.sigma_p);
                rep_num += d * w;
                rep_den += w;
            }
            let dq_edge = edge_num / edge_den;
            let dq_repulsion = (rep_num / rep_den) * 0.5;
            let candidate = q - clip_step(&dq_repulsion, params.tau0) - clip_step(&dq_edge, params.tau0);
            let proj = project_newton(field, candidate, params);
            (proj.status == ProjectionStatus::Converged).then_some(proj)
        })
        .collect();
    collect_projections(moved)
}

fn collect_projections(moved: Vec<Option<Projection>>) -> IsoPointSet {
    let mut out = IsoPointSet::default();
    for p in moved.into_iter().flatten() {
        out.points.push(p.point);
        out.normals.push(p.normal);
        out.residuals.push(p.residual);
    }
    out
}

/// Insertion rule for upsampling: a point two thirds of the way toward the
/// highest-priority point, avoiding duplicate midpoints.
pub fn insertion_point(q_star: &Vec3, q_i_star: &Vec3) -> Vec3 {
    (q_i_star + 2.0 * q_star) / 3.0
}

/// Grow the set to `target_count` by inserting re-projected points into the
/// sparsest neighborhoods. Stops early if no neighborhood yields progress.
pub fn upsample<F: SdfField + ?Sized>(
    iso: &IsoPointSet,
    field: &F,
    params: &SamplerParams,
    target_count: usize,
) -> Result<IsoPointSet> {
    if target_count < iso.len() {
        return Err(Error::InvalidConfig(
            "target_count must be at least the current count".into(),
        ));
    }
    let mut out = iso.clone();
    if target_count == iso.len() {
        return Ok(out);
    }
    let mut grid = GridIndex::with_points(params.epsilon, &out.points);

    'passes: while out.len() < target_count {
        // priority per point: furthest neighbor within the epsilon ball
        let order = {
            let mut scored: Vec<(usize, f64)> = (0..out.len())
                .map(|i| {
                    let p = out.points[i];
                    let score = grid
                        .radius_neighbors(&p, params.epsilon)
                        .into_iter()
                        .filter(|&j| j != i)
                        .map(|j| (grid.point(j) - p).norm())
                        .fold(0.0f64, f64::max);
                    (i, score)
                })
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            scored
        };
        let mut inserted_this_pass = false;
        for &(i, score) in &order {
            if out.len() >= target_count {
                break;
            }
            if score <= 0.0 {
                continue;
            }
            let q_star = out.points[i];
            // highest-priority neighbor of q*
            let mut best = (usize::MAX, -1.0);
            for j in grid.radius_neighbors(&q_star, params.epsilon) {
                if j == i {
                    continue;
                }
                let d = (grid.point(j) - q_star).norm();
                if d > best.1 {
                    best = (j, d);
                }
            }
            if best.0 == usize::MAX {
                continue;
            }
            let candidate = insertion_point(&q_star, &grid.point(best.0));
            let proj = project_newton(field, candidate, params);
            if proj.status != ProjectionStatus::Converged {
                continue;
            }
            // avoid exact duplicates
            if grid
                .radius_neighbors(&proj.point, params.epsilon)
                .iter()
                .any(|&j| (grid.point(j) - proj.point).norm() < 1e-9)
            {
                continue;
            }
            grid.insert(proj.point);
            out.points.push(proj.point);
            out.normals.push(proj.normal);
            out.residuals.push(proj.residual);
            inserted_this_pass = true;
        }
        if !inserted_this_pass {
            break 'passes;
        }
    }
    Ok(out)
}

/// Full refresh: seed near the training points, project, uniform-resample,
/// edge-aware resample, and upsample to the target count. Deterministic for a
/// fixed seed.
pub fn refresh<F: SdfField + ?Sized>(
    field: &F,
    seed_points: &[Vec3],
    params: &SamplerParams,
    target_count: usize,
    bbox: &Aabb,
    seed: u64,
) -> Result<IsoPointSet> {
    if seed_points.is_empty() {
        return Err(Error::InvalidConfig("seed_points must be non-empty".into()));
    }
    params.validate()?;
    let n_seeds = target_count.max(16);
    let mut rng = stream(seed, 0x150);
    let mut candidates = Vec::with_capacity(n_seeds);
    for k in 0..n_seeds {
        if k % 10 == 9 {
            // every tenth seed is a uniform box sample
            candidates.push(Vec3::new(
                bbox.min[0] + rng.gen::<f64>() * (bbox.max[0] - bbox.min[0]),
                bbox.min[1] + rng.gen::<f64>() * (bbox.max[1] - bbox.min[1]),
                bbox.min[2] + rng.gen::<f64>() * (bbox.max[2] - bbox.min[2]),
            ));
        } else {
            let base = seed_points[rng.gen_range(0..seed_points.len())];
            let jitter = Vec3::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ) * (params.epsilon / 2.0);
            candidates.push(base + jitter);
        }
    }

    let projected: Vec<Option<Projection>> = candidates
        .par_iter()
        .map(|q0| {
            let proj = project_newton(field, *q0, params);
            (proj.status == ProjectionStatus::Converged && bbox.contains(&proj.point))
                .then_some(proj)
        })
        .collect();
    let initial = collect_projections(projected);
    if initial.len() < 10 {
        return Err(Error::IsoSurfaceNotFound {
            surviving: initial.len(),
        });
    }

    let uniform = resample_uniform(&initial, field, params);
    let eared = resample_edge_aware(&uniform, field, params);
    let base = if eared.len() >= 10 { eared } else { uniform };
    let grown = upsample(&base, field, params, target_count.max(base.len()))?;

    // final bounding-box filter
    let mut out = IsoPointSet::default();
    for i in 0..grown.len() {
        if bbox.contains(&grown.points[i]) {
            out.points.push(grown.points[i]);
            out.normals.push(grown.normals[i]);
            out.residuals.push(grown.residuals[i]);
        }
    }
    if out.len() < 10 {
        return Err(Error::IsoSurfaceNotFound { surviving: out.len() });
    }
    Ok(out)
}

/// Coefficient of variation of nearest-neighbor distances; the uniformization
/// metric used by the resampling tests.
pub fn nn_distance_cv(points: &[Vec3]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let tree = KdTree3::build(points);
    let dists: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            tree.radius_neighbors(p, f64::INFINITY)
                .into_iter()
                .filter(|&j| j != i)
                .map(|j| (points[j] - p).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mean = dists.iter().sum::<f64>() / dists.len() as f64;
    let var = dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / dists.len() as f64;
    if mean <= 0.0 {
        0.0
    } else {
        var.sqrt() / mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdf::analytic::{PlaneSdf, SphereSdf};

    fn params() -> SamplerParams {
        SamplerParams {
            tau0: 1.0,
            epsilon: 0.4,
            sigma_p: 0.4 / 2f64.sqrt(),
            alpha_step: 0.5,
            max_newton_iters: 10,
        }
    }

    #[test]
    fn test_clip_below_threshold_unchanged() {
        let x = Vec3::new(0.1, 0.2, -0.1);
        assert_eq!(clip_step(&x, 1.0), x);
        assert_eq!(clip_step(&Vec3::zeros(), 1.0), Vec3::zeros());
    }

    #[test]
    fn test_clip_above_threshold_scales() {
        let tau = 0.3;
        let x = Vec3::new(2.0 * tau, 0.0, 0.0);
        assert!((clip_step(&x, tau) - Vec3::new(tau, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn test_clip_norm_matches_scalar_oracle() {
        use rand::Rng;
        let mut rng = crate::rng::stream(91, 0);
        let tau = 0.7;
        for _ in 0..50 {
            let x = Vec3::new(
                rng.gen::<f64>() * 3.0 - 1.5,
                rng.gen::<f64>() * 3.0 - 1.5,
                rng.gen::<f64>() * 3.0 - 1.5,
            );
            let clipped = clip_step(&x, tau);
            let want = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt().min(tau);
            assert!((clipped.norm() - want).abs() < 1e-12);
            if x.norm() > 0.0 {
                // direction preserved
                assert!((clipped.normalize() - x.normalize()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn test_newton_one_step_on_linear_field() {
        let field = PlaneSdf::z0();
        let proj = project_newton(&field, Vec3::new(0.3, -0.1, 0.5), &params());
        assert_eq!(proj.status, ProjectionStatus::Converged);
        assert_eq!(proj.iterations, 1);
        assert!((proj.point - Vec3::new(0.3, -0.1, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn test_newton_zero_iterations_when_on_surface() {
        let field = SphereSdf {
            center: Vec3::zeros(),
            radius: 1.0,
        };
        let q0 = Vec3::new(1.0, 0.0, 0.0);
        let proj = project_newton(&field, q0, &params());
        assert_eq!(proj.iterations, 0);
        assert_eq!(proj.point, q0);
    }

    #[test]
    fn test_newton_degenerate_gradient_detected() {
        struct Flat;
        impl SdfField for Flat {
            fn value(&self, _p: &Vec3) -> f64 {
                0.5
            }
            fn gradient(&self, _p: &Vec3) -> Vec3 {
                Vec3::zeros()
            }
        }
        let proj = project_newton(&Flat, Vec3::zeros(), &params());
        assert_eq!(proj.status, ProjectionStatus::DegenerateGradient);
    }

    #[test]
    fn test_newton_analytic_sphere_converges() {
        use rand::Rng;
        let field = SphereSdf {
            center: Vec3::zeros(),
            radius: 1.0,
        };
        let mut rng = crate::rng::stream(92, 0);
        let mut ok = 0;
        for _ in 0..100 {
            let q0 = Vec3::new(
                rng.gen::<f64>() * 3.0 - 1.5,
                rng.gen::<f64>() * 3.0 - 1.5,
                rng.gen::<f64>() * 3.0 - 1.5,
            );
            let proj = project_newton(&field, q0, &params());
            if proj.status == ProjectionStatus::Converged && (proj.point.norm() - 1.0).abs() < 5e-3 {
                ok += 1;
            }
        }
        assert!(ok >= 95, "only {ok}/100 converged");
    }

    #[test]
    fn test_repulsion_weight_values() {
        let sigma = 0.3;
        let q = Vec3::zeros();
        // at distance sigma_p the weight is exp(-1); at zero it is 1
        let w1 = repulsion_weight(&Vec3::new(sigma, 0.0, 0.0), &q, sigma);
        assert!((w1 - (-1.0f64).exp()).abs() < 1e-12);
        let w0 = repulsion_weight(&q, &q, sigma);
        assert!((w0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn test_resample_uniform_single_point_unchanged() {
        let field = SphereSdf {
            center: Vec3::zeros(),
            radius: 1.0,
        };
        let iso = IsoPointSet {
            points: vec![Vec3::new(1.0, 0.0, 0.0)],
            normals: vec![Vec3::new(1.0, 0.0, 0.0)],
            residuals: vec![0.0],
        };
        let out = resample_uniform(&iso, &field, &params());
        assert_eq!(out.len(), 1);
        assert_eq!(out.points[0], iso.points[0]);
    }

    #[test]
    fn test_resample_uniform_separates_near_duplicates() {
        let field = PlaneSdf::z0();
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(0.05, 0.0, 0.0);
        let iso = IsoPointSet {
            points: vec![a, b],
            normals: vec![Vec3::new(0.0, 0.0, 1.0); 2],
            residuals: vec![0.0; 2],
        };
        let out = resample_uniform(&iso, &field, &params());
        assert_eq!(out.len(), 2);
        let sep = (out.points[0] - out.points[1]).norm();
        assert!(sep > (a - b).norm(), "separation {sep} did not grow");
    }

    #[test]
    fn test_resample_uniform_residuals_within_tol() {
        use rand::Rng;
        let field = SphereSdf {
            center: Vec3::zeros(),
            radius: 1.0,
        };
        let mut rng = crate::rng::stream(93, 0);
        let mut iso = IsoPointSet::default();
        for _ in 0..60 {
            let dir = Vec3::new(
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
            )
            .normalize();
            iso.points.push(dir);
            iso.normals.push(dir);
            iso.residuals.push(0.0);
        }
        let out = resample_uniform(&iso, &field, &params());
        assert!(out.max_residual() <= RESIDUAL_TOL);
    }

    #[test]
    fn test_edge_aware_isolated_point_unchanged() {
        let field = PlaneSdf::z0();
        let iso = IsoPointSet {
            points: vec![Vec3::new(0.2, 0.3, 0.0)],
            normals: vec![Vec3::new(0.0, 0.0, 1.0)],
            residuals: vec![0.0],
        };
        let out = resample_edge_aware(&iso, &field, &params());
        assert_eq!(out.points[0], iso.points[0]);
    }

    #[test]
    fn test_edge_aware_coplanar_reduces_to_weighted_mean() {
        // identical normals, coplanar offsets: phi == 1 for every neighbor,
        // so the edge term is the plain mean offset
        let field = PlaneSdf::z0();
        let center = Vec3::new(0.0, 0.0, 0.0);
        let n1 = Vec3::new(0.1, 0.0, 0.0);
        let n2 = Vec3::new(0.0, 0.1, 0.0);
        let iso = IsoPointSet {
            points: vec![center, n1, n2],
            normals: vec![Vec3::new(0.0, 0.0, 1.0); 3],
            residuals: vec![0.0; 3],
        };
        let p = params();
        let out = resample_edge_aware(&iso, &field, &p);
        // expected move of the center point: -(clip(rep) + clip(edge))
        let w1 = repulsion_weight(&n1, &center, p.sigma_p);
        let w2 = repulsion_weight(&n2, &center, p.sigma_p);
        let edge = (n1 * 1.0 + n2 * 1.0) / (2.0 + 1e-12);
        let rep = (n1 * w1 + n2 * w2) / (w1 + w2 + 1e-12) * 0.5;
        let want = center - clip_step(&rep, p.tau0) - clip_step(&edge, p.tau0);
        // plane projection leaves x,y and zeroes z (already 0)
        assert!((out.points[0] - want).norm() < 1e-9, "{:?} vs {want:?}", out.points[0]);
    }

    #[test]
    fn test_insertion_point_formula() {
        let q_star = Vec3::zeros();
        let q_i = Vec3::new(3.0, 0.0, 0.0);
        assert_eq!(insertion_point(&q_star, &q_i), Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn test_upsample_equal_target_is_identity() {
        let field = PlaneSdf::z0();
        let iso = IsoPointSet {
            points: vec![Vec3::zeros(), Vec3::new(0.3, 0.0, 0.0)],
            normals: vec![Vec3::new(0.0, 0.0, 1.0); 2],
            residuals: vec![0.0; 2],
        };
        let out = upsample(&iso, &field, &params(), 2).unwrap();
        assert_eq!(out.points, iso.points);
    }

    #[test]
    fn test_upsample_rejects_shrinking() {
        let field = PlaneSdf::z0();
        let iso = IsoPointSet {
            points: vec![Vec3::zeros(), Vec3::new(0.3, 0.0, 0.0)],
            normals: vec![Vec3::new(0.0, 0.0, 1.0); 2],
            residuals: vec![0.0; 2],
        };
        assert!(upsample(&iso, &field, &params(), 1).is_err());
    }

    #[test]
    fn test_refresh_on_analytic_sphere() {
        use rand::Rng;
        let field = SphereSdf {
            center: Vec3::zeros(),
            radius: 1.0,
        };
        let bbox = Aabb::new([-1.5; 3], [1.5; 3]);
        let mut rng = crate::rng::stream(94, 0);
        let seeds: Vec<Vec3> = (0..100)
            .map(|_| {
                Vec3::new(
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                )
                .normalize()
            })
            .collect();
        let p = SamplerParams::from_cloud(&seeds, 300, &bbox);
        let iso = refresh(&field, &seeds, &p, 300, &bbox, 7).unwrap();
        assert!(iso.len() >= 250);
        assert!(iso.max_residual() <= RESIDUAL_TOL);
        for q in &iso.points {
            assert!((q.norm() - 1.0).abs() < 5e-3, "point off sphere: {}", q.norm());
        }
    }

    #[test]
    fn test_refresh_deterministic() {
        let field = SphereSdf {
            center: Vec3::zeros(),
            radius: 1.0,
        };
        let bbox = Aabb::new([-1.5; 3], [1.5; 3]);
        let seeds = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(-1.0, 0.0, 0.0),
        ];
        let p = SamplerParams::for_scene(&bbox, 100);
        let a = refresh(&field, &seeds, &p, 100, &bbox, 11).unwrap();
        let b = refresh(&field, &seeds, &p, 100, &bbox, 11).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.normals, b.normals);
    }

    #[test]
    fn test_refresh_error_when_no_surface() {
        struct FarField;
        impl SdfField for FarField {
            fn value(&self, _p: &Vec3) -> f64 {
                100.0
            }
            fn gradient(&self, _p: &Vec3) -> Vec3 {
                Vec3::new(1.0, 0.0, 0.0)
            }
        }
        let bbox = Aabb::new([-1.0; 3], [1.0; 3]);
        let p = SamplerParams::for_scene(&bbox, 50);
        let err = refresh(&FarField, &[Vec3::zeros()], &p, 50, &bbox, 1);
        assert!(matches!(err, Err(Error::IsoSurfaceNotFound { .. })));
    }
}
