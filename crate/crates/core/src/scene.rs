//! Scene definition, radar collection geometry, and phase-history simulation.
//!
//! A scene is a set of point scattering centers tied to a ground-truth surface.
//! The measurement model is a sum of unit phasors over the scatterers: pulses
//! are grouped into azimuth sub-apertures within each elevation pass, and each
//! scatterer carries one complex reflectivity per sub-aperture.

use crate::rng::{derive, stream, stream2};
use crate::{Aabb, C64, Error, Result, Vec3};
use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Unit look direction for azimuth `theta` (from +x in the xy-plane) and
/// elevation `phi` (from the xy-plane).
pub fn look_vector(theta: f64, phi: f64) -> Vec3 {
    Vec3::new(
        theta.cos() * phi.cos(),
        theta.sin() * phi.cos(),
        phi.sin(),
    )
}

/// Unit phasor exp(-j (4 pi f / c) <p, u(theta, phi)>).
pub fn steering_phase(p: &Vec3, f: f64, theta: f64, phi: f64, c: f64) -> C64 {
    debug_assert!(f > 0.0);
    let range = p[0] * phi.cos() * theta.cos() + p[1] * theta.sin() * phi.cos() + p[2] * phi.sin();
    let arg = -(4.0 * std::f64::consts::PI * f / c) * range;
    C64::new(arg.cos(), arg.sin())
}

/// Point reflector with one complex reflectivity per sub-aperture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScatteringCenter {
    pub position: [f64; 3],
    pub coeffs: Vec<C64>,
}

impl ScatteringCenter {
    pub fn pos(&self) -> Vec3 {
        Vec3::new(self.position[0], self.position[1], self.position[2])
    }
}

/// One elevation pass: a constant elevation angle and its pulse azimuths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pass {
    pub elevation: f64,
    pub azimuths: Vec<f64>,
}

/// Contiguous azimuth group of pulses within one pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubAperture {
    pub mean_azimuth: f64,
    pub mean_elevation: f64,
    /// Member pulses as (pass index, pulse index).
    pub pulses: Vec<(usize, usize)>,
}

impl SubAperture {
    pub fn look(&self) -> Vec3 {
        look_vector(self.mean_azimuth, self.mean_elevation)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollectionGeometry {
    /// Strictly increasing frequency samples in Hz.
    pub frequencies: Vec<f64>,
    pub passes: Vec<Pass>,
    pub subapertures: Vec<SubAperture>,
    /// Sub-aperture index per pulse, indexed [pass][pulse].
    pub subap_of: Vec<Vec<usize>>,
    pub speed_of_light: f64,
}

impl CollectionGeometry {
    pub fn num_frequencies(&self) -> usize {
        self.frequencies.len()
    }

    pub fn num_passes(&self) -> usize {
        self.passes.len()
    }

    pub fn pulses_per_pass(&self) -> usize {
        self.passes.first().map_or(0, |p| p.azimuths.len())
    }

    pub fn num_subapertures(&self) -> usize {
        self.subapertures.len()
    }

    /// Pulse angles (azimuth, elevation) for pulse `j` of pass `e`.
    pub fn pulse_angles(&self, e: usize, j: usize) -> (f64, f64) {
        (self.passes[e].azimuths[j], self.passes[e].elevation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frequencies.is_empty() {
            return Err(Error::InvalidConfig("no frequency samples".into()));
        }
        if !self.frequencies.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidConfig(
                "frequencies must be strictly increasing".into(),
            ));
        }
        if self.passes.is_empty() {
            return Err(Error::InvalidConfig("no elevation passes".into()));
        }
        let np = self.pulses_per_pass();
        if self.passes.iter().any(|p| p.azimuths.len() != np) {
            return Err(Error::InvalidConfig(
                "all passes must have the same pulse count".into(),
            ));
        }
        // partition check: every pulse in exactly one sub-aperture
        let mut seen = vec![vec![false; np]; self.passes.len()];
        for sa in &self.subapertures {
            for &(e, j) in &sa.pulses {
                if e >= self.passes.len() || j >= np || seen[e][j] {
                    return Err(Error::InvalidConfig(
                        "sub-apertures do not partition the pulses".into(),
                    ));
                }
                seen[e][j] = true;
            }
        }
        if seen.iter().flatten().any(|&s| !s) {
            return Err(Error::InvalidConfig(
                "sub-apertures do not cover all pulses".into(),
            ));
        }
        for (m, sa) in self.subapertures.iter().enumerate() {
            let n = sa.pulses.len() as f64;
            let az: f64 = sa.pulses.iter().map(|&(e, j)| self.passes[e].azimuths[j]).sum::<f64>() / n;
            let el: f64 = sa.pulses.iter().map(|&(e, _)| self.passes[e].elevation).sum::<f64>() / n;
            if (az - sa.mean_azimuth).abs() > 1e-9 || (el - sa.mean_elevation).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "sub-aperture {m} mean angles are not the arithmetic member mean"
                )));
            }
        }
        Ok(())
    }
}

/// Configuration for [`make_geometry`]. Angles in degrees, frequencies in Hz.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub center_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub num_frequencies: usize,
    #[serde(default)]
    pub azimuth_start_deg: f64,
    #[serde(default = "default_azimuth_end")]
    pub azimuth_end_deg: f64,
    pub pulses_per_pass: usize,
    pub elevation_passes_deg: Vec<f64>,
    pub subaperture_span_deg: f64,
    #[serde(default = "default_c")]
    pub speed_of_light: f64,
}

fn default_azimuth_end() -> f64 {
    360.0
}

fn default_c() -> f64 {
    SPEED_OF_LIGHT
}

/// Build a circular-aperture collection: uniformly spaced pulse azimuths per
/// elevation pass, grouped into contiguous sub-apertures of the configured span.
pub fn make_geometry(cfg: &GeometryConfig) -> Result<CollectionGeometry> {
    let range = cfg.azimuth_end_deg - cfg.azimuth_start_deg;
    if range <= 0.0 {
        return Err(Error::InvalidConfig("azimuth range must be positive".into()));
    }
    if cfg.subaperture_span_deg <= 0.0 {
        return Err(Error::InvalidConfig("sub-aperture span must be positive".into()));
    }
    if cfg.subaperture_span_deg > range + 1e-12 {
        return Err(Error::InvalidConfig(
            "sub-aperture span exceeds the azimuth range".into(),
        ));
    }
    if cfg.pulses_per_pass == 0 || cfg.num_frequencies == 0 || cfg.elevation_passes_deg.is_empty() {
        return Err(Error::InvalidConfig(
            "pulse, frequency, and pass counts must be positive".into(),
        ));
    }
    if cfg.center_frequency_hz <= cfg.bandwidth_hz / 2.0 {
        return Err(Error::InvalidConfig("band extends to non-positive frequency".into()));
    }

    let nf = cfg.num_frequencies;
    let frequencies: Vec<f64> = if nf == 1 {
        vec![cfg.center_frequency_hz]
    } else {
        (0..nf)
            .map(|i| {
                cfg.center_frequency_hz - cfg.bandwidth_hz / 2.0
                    + (i as f64) * cfg.bandwidth_hz / ((nf - 1) as f64)
            })
            .collect()
    };

    let bins = ((range / cfg.subaperture_span_deg) - 1e-9).ceil().max(1.0) as usize;
    let dtheta = range / cfg.pulses_per_pass as f64;
    let to_rad = std::f64::consts::PI / 180.0;

    let passes: Vec<Pass> = cfg
        .elevation_passes_deg
        .iter()
        .map(|&el| Pass {
            elevation: el * to_rad,
            // pulse at the center of its azimuth slot
            azimuths: (0..cfg.pulses_per_pass)
                .map(|j| (cfg.azimuth_start_deg + (j as f64 + 0.5) * dtheta) * to_rad)
                .collect(),
        })
        .collect();

    let mut subap_pulses: Vec<Vec<(usize, usize)>> = vec![Vec::new(); bins * passes.len()];
    let mut subap_of = vec![vec![0usize; cfg.pulses_per_pass]; passes.len()];
    for (e, _) in passes.iter().enumerate() {
        for j in 0..cfg.pulses_per_pass {
            let az_deg = cfg.azimuth_start_deg + (j as f64 + 0.5) * dtheta;
            let b = (((az_deg - cfg.azimuth_start_deg) / cfg.subaperture_span_deg) as usize)
                .min(bins - 1);
            let m = e * bins + b;
            subap_of[e][j] = m;
            subap_pulses[m].push((e, j));
        }
    }
    if subap_pulses.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidConfig(
            "sub-aperture span leaves an empty azimuth bin".into(),
        ));
    }

    let subapertures = subap_pulses
        .into_iter()
        .map(|pulses| {
            let n = pulses.len() as f64;
            let mean_azimuth = pulses.iter().map(|&(e, j)| passes[e].azimuths[j]).sum::<f64>() / n;
            let mean_elevation = pulses.iter().map(|&(e, _)| passes[e].elevation).sum::<f64>() / n;
            SubAperture {
                mean_azimuth,
                mean_elevation,
                pulses,
            }
        })
        .collect();

    let geom = CollectionGeometry {
        frequencies,
        passes,
        subapertures,
        subap_of,
        speed_of_light: cfg.speed_of_light,
    };
    geom.validate()?;
    Ok(geom)
}

/// Ground-truth surface behind a scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfacePrimitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
    },
    /// Axis-aligned cylinder along z, with flat caps.
    Cylinder {
        center: [f64; 3],
        radius: f64,
        half_height: f64,
    },
    Mesh {
        vertices: Vec<[f64; 3]>,
        triangles: Vec<[u32; 3]>,
    },
}

impl SurfacePrimitive {
    pub fn bounding_box(&self) -> Aabb {
        match self {
            SurfacePrimitive::Sphere { center, radius } => Aabb::new(
                [center[0] - radius, center[1] - radius, center[2] - radius],
                [center[0] + radius, center[1] + radius, center[2] + radius],
            ),
            SurfacePrimitive::Box {
                center,
                half_extents,
            } => Aabb::new(
                [
                    center[0] - half_extents[0],
                    center[1] - half_extents[1],
                    center[2] - half_extents[2],
                ],
                [
                    center[0] + half_extents[0],
                    center[1] + half_extents[1],
                    center[2] + half_extents[2],
                ],
            ),
            SurfacePrimitive::Cylinder {
                center,
                radius,
                half_height,
            } => Aabb::new(
                [center[0] - radius, center[1] - radius, center[2] - half_height],
                [center[0] + radius, center[1] + radius, center[2] + half_height],
            ),
            SurfacePrimitive::Mesh { vertices, .. } => {
                let mut min = [f64::INFINITY; 3];
                let mut max = [f64::NEG_INFINITY; 3];
                for v in vertices {
                    for d in 0..3 {
                        min[d] = min[d].min(v[d]);
                        max[d] = max[d].max(v[d]);
                    }
                }
                Aabb::new(min, max)
            }
        }
    }

    /// Draw a surface point and its outward unit normal.
    pub fn sample_surface<R: Rng>(&self, rng: &mut R) -> (Vec3, Vec3) {
        match self {
            SurfacePrimitive::Sphere { center, radius } => {
                let n = loop {
                    let v = Vec3::new(
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                    );
                    let norm = v.norm();
                    if norm > 1e-12 {
                        break v / norm;
                    }
                };
                (Vec3::new(center[0], center[1], center[2]) + n * *radius, n)
            }
            SurfacePrimitive::Box {
                center,
                half_extents,
            } => {
                let h = half_extents;
                let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]]; // per axis-pair
                let total: f64 = areas.iter().sum::<f64>() * 2.0;
                let mut pick = rng.gen::<f64>() * total;
                let mut axis = 0;
                let mut sign = 1.0;
                'outer: for a in 0..3 {
                    for s in [1.0, -1.0] {
                        if pick < areas[a] {
                            axis = a;
                            sign = s;
                            break 'outer;
                        }
                        pick -= areas[a];
                    }
                }
                let mut p = [0.0; 3];
                for d in 0..3 {
                    p[d] = if d == axis {
                        sign * h[d]
                    } else {
                        (2.0 * rng.gen::<f64>() - 1.0) * h[d]
                    };
                }
                let mut n = Vec3::zeros();
                n[axis] = sign;
                (
                    Vec3::new(center[0] + p[0], center[1] + p[1], center[2] + p[2]),
                    n,
                )
            }
            SurfacePrimitive::Cylinder {
                center,
                radius,
                half_height,
            } => {
                let side = 2.0 * std::f64::consts::PI * radius * 2.0 * half_height;
                let cap = std::f64::consts::PI * radius * radius;
                let pick = rng.gen::<f64>() * (side + 2.0 * cap);
                let c = Vec3::new(center[0], center[1], center[2]);
                if pick < side {
                    let ang = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
                    let z = (2.0 * rng.gen::<f64>() - 1.0) * half_height;
                    let n = Vec3::new(ang.cos(), ang.sin(), 0.0);
                    (c + Vec3::new(radius * ang.cos(), radius * ang.sin(), z), n)
                } else {
                    let sign = if pick < side + cap { 1.0 } else { -1.0 };
                    let r = radius * rng.gen::<f64>().sqrt();
                    let ang = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
                    (
                        c + Vec3::new(r * ang.cos(), r * ang.sin(), sign * half_height),
                        Vec3::new(0.0, 0.0, sign),
                    )
                }
            }
            SurfacePrimitive::Mesh {
                vertices,
                triangles,
            } => {
                let tri_area = |t: &[u32; 3]| {
                    let a = Vec3::from(vertices[t[0] as usize]);
                    let b = Vec3::from(vertices[t[1] as usize]);
                    let c = Vec3::from(vertices[t[2] as usize]);
                    0.5 * (b - a).cross(&(c - a)).norm()
                };
                let areas: Vec<f64> = triangles.iter().map(tri_area).collect();
                let total: f64 = areas.iter().sum();
                let mut pick = rng.gen::<f64>() * total;
                let mut idx = triangles.len() - 1;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        idx = i;
                        break;
                    }
                    pick -= a;
                }
                let t = &triangles[idx];
                let a = Vec3::from(vertices[t[0] as usize]);
                let b = Vec3::from(vertices[t[1] as usize]);
                let c = Vec3::from(vertices[t[2] as usize]);
                let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                let p = a + (b - a) * u + (c - a) * v;
                let n = (b - a).cross(&(c - a));
                let norm = n.norm();
                let n = if norm > 1e-15 { n / norm } else { Vec3::new(0.0, 0.0, 1.0) };
                (p, n)
            }
        }
    }
}

/// Per-sub-aperture reflectivity model for sampled scatterers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffModel {
    /// Same coefficient in every sub-aperture.
    Constant,
    /// Nonzero only where the sub-aperture look direction faces the surface.
    Persistence,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scene {
    pub surface: SurfacePrimitive,
    pub scatterers: Vec<ScatteringCenter>,
    pub bounding_box: Aabb,
}

impl Scene {
    pub fn num_scatterers(&self) -> usize {
        self.scatterers.len()
    }
}

/// Scene synthesis configuration. JSON-facing; unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub primitive: SurfacePrimitive,
    pub num_scatterers: usize,
    pub coeff_model: CoeffModel,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_true")]
    pub random_phase: bool,
    /// Isotropic jitter applied to sampled surface positions, meters.
    #[serde(default)]
    pub surface_noise_std: f64,
    /// Fractional bounding-box inflation around the primitive.
    #[serde(default = "default_bbox_inflate")]
    pub bbox_inflate: f64,
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

fn default_bbox_inflate() -> f64 {
    0.15
}

/// Sample `num_scatterers` surface points and attach per-sub-aperture
/// coefficients according to the configured model.
pub fn sample_scene(cfg: &SceneConfig, geom: &CollectionGeometry, seed: u64) -> Result<Scene> {
    if cfg.num_scatterers == 0 {
        return Err(Error::InvalidConfig("num_scatterers must be >= 1".into()));
    }
    if cfg.amplitude <= 0.0 {
        return Err(Error::InvalidConfig("amplitude must be positive".into()));
    }
    let bbox = cfg.primitive.bounding_box().inflate(cfg.bbox_inflate);
    let looks: Vec<Vec3> = geom.subapertures.iter().map(|s| s.look()).collect();
    let mut rng = stream(seed, 0x5ce9e);
    let mut scatterers = Vec::with_capacity(cfg.num_scatterers);
    for _ in 0..cfg.num_scatterers {
        let (mut p, n) = cfg.primitive.sample_surface(&mut rng);
        if cfg.surface_noise_std > 0.0 {
            for d in 0..3 {
                p[d] += cfg.surface_noise_std * rng.sample::<f64, _>(StandardNormal);
                p[d] = p[d].clamp(bbox.min[d], bbox.max[d]);
            }
        }
        let phase = if cfg.random_phase {
            rng.gen::<f64>() * 2.0 * std::f64::consts::PI
        } else {
            0.0
        };
        let base = C64::from_polar(cfg.amplitude, phase);
        let coeffs = looks
            .iter()
            .map(|look| match cfg.coeff_model {
                CoeffModel::Constant => base,
                CoeffModel::Persistence => {
                    if look.dot(&n) > 0.0 {
                        base
                    } else {
                        C64::new(0.0, 0.0)
                    }
                }
            })
            .collect();
        scatterers.push(ScatteringCenter {
            position: [p[0], p[1], p[2]],
            coeffs,
        });
    }
    Ok(Scene {
        surface: cfg.primitive.clone(),
        scatterers,
        bounding_box: bbox,
    })
}

/// Raw measurement cube with its collection geometry.
#[derive(Debug, Clone)]
pub struct PhaseHistory {
    /// Complex samples with shape (N_F, N_P, N_el).
    pub samples: Array3<C64>,
    pub geometry: CollectionGeometry,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PhaseHistory {
    /// Sub-aperture measurement vector: samples of every member pulse at every
    /// frequency, ordered (pulse-in-sub-aperture major, frequency minor).
    pub fn subaperture_samples(&self, m: usize) -> Result<Vec<C64>> {
        let sa = self
            .geometry
            .subapertures
            .get(m)
            .ok_or_else(|| Error::IndexOutOfRange(format!("sub-aperture {m}")))?;
        let nf = self.geometry.num_frequencies();
        let mut out = Vec::with_capacity(sa.pulses.len() * nf);
        for &(e, j) in &sa.pulses {
            for i in 0..nf {
                out.push(self.samples[[i, j, e]]);
            }
        }
        Ok(out)
    }
}

/// Simulate the full measurement cube. Noise is circular complex Gaussian with
/// per-sample standard deviation `noise_sigma`, generated per pulse from a
/// counter-derived stream so parallel execution is reproducible.
pub fn simulate_phase_history(
    scene: &Scene,
    geom: &CollectionGeometry,
    noise_sigma: f64,
    seed: u64,
) -> Result<PhaseHistory> {
    if scene.scatterers.is_empty() {
        return Err(Error::EmptyScene);
    }
    geom.validate()?;
    let ns = geom.num_subapertures();
    for (k, s) in scene.scatterers.iter().enumerate() {
        if s.coeffs.len() != ns {
            return Err(Error::ShapeMismatch(format!(
                "scatterer {k} has {} coefficients for {ns} sub-apertures",
                s.coeffs.len()
            )));
        }
    }
    let nf = geom.num_frequencies();
    let np = geom.pulses_per_pass();
    let nel = geom.num_passes();

    let columns: Vec<Vec<C64>> = (0..np * nel)
        .into_par_iter()
        .map(|pulse_id| {
            let (e, j) = (pulse_id / np, pulse_id % np);
            let (theta, phi) = geom.pulse_angles(e, j);
            let m = geom.subap_of[e][j];
            let mut col = vec![C64::new(0.0, 0.0); nf];
            for s in &scene.scatterers {
                let coeff = s.coeffs[m];
                if coeff == C64::new(0.0, 0.0) {
                    continue;
                }
                let p = s.pos();
                for (i, &f) in geom.frequencies.iter().enumerate() {
                    col[i] += coeff * steering_phase(&p, f, theta, phi, geom.speed_of_light);
                }
            }
            if noise_sigma > 0.0 {
                let mut rng = stream2(derive(seed, 0xa01e), j as u64, e as u64);
                let s = noise_sigma / 2f64.sqrt();
                for c in col.iter_mut() {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    *c += C64::new(s * re, s * im);
                }
            }
            col
        })
        .collect();

    let mut samples = Array3::from_elem((nf, np, nel), C64::new(0.0, 0.0));
    for (pulse_id, col) in columns.into_iter().enumerate() {
        let (e, j) = (pulse_id / np, pulse_id % np);
        for (i, v) in col.into_iter().enumerate() {
            samples[[i, j, e]] = v;
        }
    }
    Ok(PhaseHistory {
        samples,
        geometry: geom.clone(),
        noise_sigma,
        seed,
    })
}

/// Noise standard deviation that yields the requested SNR against the mean
/// per-sample power of `clean`.
pub fn noise_sigma_for_snr(clean: &Array3<C64>, snr_db: f64) -> f64 {
    let n = clean.len().max(1) as f64;
    let power: f64 = clean.iter().map(|c| c.norm_sqr()).sum::<f64>() / n;
    (power / 10f64.powf(snr_db / 10.0)).sqrt()
}
