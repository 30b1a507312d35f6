//! Coordinate network f(p; psi): random Fourier-feature embedding into an MLP
//! with a mid-network skip connection, softplus hidden activations, and a
//! tanh output scaled to meters. Spatial gradients are computed analytically
//! by forward tangent propagation; parameter gradients of losses that touch
//! both f and its spatial Jacobian come from the hand-rolled reverse pass in
//! [`backward`].

mod backward;
pub mod analytic;

pub use backward::Gradients;

use crate::rng::stream;
use crate::{Aabb, Error, Result, Vec3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Shard size for deterministic parallel gradient reduction.
pub const GRAD_SHARD: usize = 64;

/// Anything that exposes a differentiable scalar field. The iso-point sampler
/// and mesh extractor work against this trait, so analytic stand-ins can
/// replace a trained network in tests.
pub trait SdfField: Sync {
    fn value(&self, p: &Vec3) -> f64;
    fn gradient(&self, p: &Vec3) -> Vec3;

    fn value_and_gradient(&self, p: &Vec3) -> (f64, Vec3) {
        (self.value(p), self.gradient(p))
    }
}

/// Dense row-major matrix with deterministic dot products.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// out = M v (rows sequential, fixed accumulation order per row).
    pub fn matvec(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for r in 0..self.rows {
            out[r] = dot(self.row(r), v);
        }
    }

    /// out += M^T v.
    pub fn matvec_transpose_add(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for r in 0..self.rows {
            let vr = v[r];
            if vr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r).iter()) {
                *o += vr * w;
            }
        }
    }
}

/// Fixed-order four-accumulator dot product; identical results for identical
/// slices no matter the surrounding batch shape.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let mut acc = [0.0f64; 4];
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Architecture and initialization parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdfConfig {
    /// Number of random Fourier feature rows (embedding size is twice this).
    pub n_fourier: usize,
    /// Standard deviation of the frequency matrix entries.
    pub sigma_ff: f64,
    pub width: usize,
    pub layers: usize,
    /// 1-based hidden layer whose input is concatenated with the embedding.
    pub skip_layer: Option<usize>,
    /// Softplus sharpness.
    pub beta_softplus: f64,
    /// Output scale in meters: f in (-d_max, d_max).
    pub d_max: f64,
    /// Coordinates are shifted/scaled to the unit box before embedding.
    pub center: [f64; 3],
    pub half_extent: f64,
    /// Draw weights from N(0,1) instead of N(0, 1/fan_in).
    #[serde(default)]
    pub literal_gaussian_init: bool,
}

impl Default for SdfConfig {
    fn default() -> Self {
        Self {
            n_fourier: 9,
            sigma_ff: 4.0,
            width: 512,
            layers: 8,
            skip_layer: Some(4),
            beta_softplus: 100.0,
            d_max: 1.0,
            center: [0.0; 3],
            half_extent: 1.0,
            literal_gaussian_init: false,
        }
    }
}

impl SdfConfig {
    /// Default geometry-aware scaling: unit-box normalization over the scene
    /// bounding box and output range of half its diagonal.
    pub fn for_bbox(mut self, bbox: &Aabb) -> Self {
        let c = bbox.center();
        self.center = [c[0], c[1], c[2]];
        let h = (0..3)
            .map(|d| 0.5 * (bbox.max[d] - bbox.min[d]))
            .fold(0.0f64, f64::max);
        self.half_extent = h.max(1e-9);
        self.d_max = 0.5 * bbox.diagonal();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fourier == 0 || self.width == 0 || self.layers == 0 {
            return Err(Error::InvalidConfig("network dims must be positive".into()));
        }
        if let Some(s) = self.skip_layer {
            if s < 2 || s > self.layers {
                return Err(Error::InvalidConfig(
                    "skip layer must lie in 2..=layers".into(),
                ));
            }
        }
        if self.sigma_ff <= 0.0 || self.beta_softplus <= 0.0 || self.d_max <= 0.0 {
            return Err(Error::InvalidConfig(
                "sigma_ff, beta_softplus, d_max must be positive".into(),
            ));
        }
        if self.half_extent <= 0.0 {
            return Err(Error::InvalidConfig("half_extent must be positive".into()));
        }
        Ok(())
    }

    pub fn embed_dim(&self) -> usize {
        2 * self.n_fourier
    }

    /// Fan-in of hidden layer `l` (0-based).
    pub(crate) fn fan_in(&self, l: usize) -> usize {
        let base = if l == 0 { self.embed_dim() } else { self.width };
        if self.skip_layer == Some(l + 1) {
            base + self.embed_dim()
        } else {
            base
        }
    }
}

/// The network: fixed embedding frequencies plus trainable layer parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfNetwork {
    pub config: SdfConfig,
    /// n_fourier x 3 frequency matrix, fixed after init.
    pub b_matrix: Mat,
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

pub(crate) fn softplus(beta: f64, x: f64) -> f64 {
    let bx = beta * x;
    // stable piecewise form of ln(1 + exp(bx)) / beta
    if bx > 30.0 {
        x
    } else if bx < -30.0 {
        bx.exp() / beta
    } else {
        x.max(0.0) + (-bx.abs()).exp().ln_1p() / beta
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl SdfNetwork {
    /// Draw all parameters from the seeded stream; B entries are
    /// N(0, sigma_ff^2), layer parameters N(0, 1/fan_in) by default.
    pub fn init(config: SdfConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, 0x5df);
        let mut b_matrix = Mat::zeros(config.n_fourier, 3);
        for v in b_matrix.data.iter_mut() {
            *v = config.sigma_ff * rng.sample::<f64, _>(StandardNormal);
        }
        let mut weights = Vec::with_capacity(config.layers);
        let mut biases = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let fan_in = config.fan_in(l);
            let std = if config.literal_gaussian_init {
                1.0
            } else {
                1.0 / (fan_in as f64).sqrt()
            };
            let mut w = Mat::zeros(config.width, fan_in);
            for v in w.data.iter_mut() {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
            let b: Vec<f64> = (0..config.width)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            weights.push(w);
            biases.push(b);
        }
        let std_out = if config.literal_gaussian_init {
            1.0
        } else {
            1.0 / (config.width as f64).sqrt()
        };
        let w_out: Vec<f64> = (0..config.width)
            .map(|_| std_out * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let b_out = std_out * rng.sample::<f64, _>(StandardNormal);
        Ok(Self {
            config,
            b_matrix,
            weights,
            biases,
            w_out,
            b_out,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.iter().map(|w| w.data.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
            + self.w_out.len()
            + 1
    }

    /// Normalized coordinates fed to the embedding.
    #[inline]
    fn normalize(&self, p: &Vec3) -> [f64; 3] {
        let c = &self.config.center;
        let h = self.config.half_extent;
        [(p[0] - c[0]) / h, (p[1] - c[1]) / h, (p[2] - c[2]) / h]
    }

    /// gamma(p) = [cos(2 pi B q); sin(2 pi B q)] with q the normalized point.
    pub fn embed(&self, p: &Vec3) -> Vec<f64> {
        let q = self.normalize(p);
        let nf = self.config.n_fourier;
        let mut out = vec![0.0; 2 * nf];
        for r in 0..nf {
            let b = self.b_matrix.row(r);
            let arg = TWO_PI * (b[0] * q[0] + b[1] * q[1] + b[2] * q[2]);
            out[r] = arg.cos();
            out[nf + r] = arg.sin();
        }
        out
    }

    /// Embedding and its spatial derivative rows d gamma / d p (3 columns).
    pub(crate) fn embed_with_tangent(&self, p: &Vec3, gamma: &mut [f64], g: &mut [Vec<f64>; 3]) {
        let q = self.normalize(p);
        let nf = self.config.n_fourier;
        let inv_h = 1.0 / self.config.half_extent;
        for r in 0..nf {
            let b = self.b_matrix.row(r);
            let arg = TWO_PI * (b[0] * q[0] + b[1] * q[1] + b[2] * q[2]);
            let (s, c) = arg.sin_cos();
            gamma[r] = c;
            gamma[nf + r] = s;
            for d in 0..3 {
                let scale = TWO_PI * b[d] * inv_h;
                g[d][r] = -s * scale;
                g[d][nf + r] = c * scale;
            }
        }
    }

    /// Signed distance at `p`.
    pub fn forward(&self, p: &Vec3) -> f64 {
        let beta = self.config.beta_softplus;
        let mut act = self.embed(p);
        let gamma = act.clone();
        let mut buf = vec![0.0; self.config.width];
        for l in 0..self.config.layers {
            let input = if self.config.skip_layer == Some(l + 1) {
                let mut cat = act.clone();
                cat.extend_from_slice(&gamma);
                cat
            } else {
                act
            };
            self.weights[l].matvec(&input, &mut buf);
            act = buf
                .iter()
                .zip(self.biases[l].iter())
                .map(|(z, b)| softplus(beta, z + b))
                .collect();
        }
        let z_out = dot(&self.w_out, &act) + self.b_out;
        self.config.d_max * z_out.tanh()
    }

    /// Batched evaluation; element i is bitwise equal to `forward(points[i])`.
    pub fn forward_batch(&self, points: &[Vec3]) -> Vec<f64> {
        points.par_iter().map(|p| self.forward(p)).collect()
    }

    /// Value and analytic spatial gradient at `p`.
    pub fn value_and_jacobian(&self, p: &Vec3) -> (f64, Vec3) {
        let beta = self.config.beta_softplus;
        let width = self.config.width;
        let embed_dim = self.config.embed_dim();

        let mut gamma = vec![0.0; embed_dim];
        let mut g: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; embed_dim]);
        self.embed_with_tangent(p, &mut gamma, &mut g);

        let mut act = gamma.clone();
        let mut tan: [Vec<f64>; 3] = std::array::from_fn(|d| g[d].clone());
        let mut zbuf = vec![0.0; width];
        let mut sbuf = vec![0.0; width];
        for l in 0..self.config.layers {
            let (input, input_t): (Vec<f64>, [Vec<f64>; 3]) =
                if self.config.skip_layer == Some(l + 1) {
                    let mut cat = act.clone();
                    cat.extend_from_slice(&gamma);
                    let cat_t = std::array::from_fn(|d| {
                        let mut t = tan[d].clone();
                        t.extend_from_slice(&g[d]);
                        t
                    });
                    (cat, cat_t)
                } else {
                    (act.clone(), std::array::from_fn(|d| tan[d].clone()))
                };
            self.weights[l].matvec(&input, &mut zbuf);
            for (z, b) in zbuf.iter_mut().zip(self.biases[l].iter()) {
                *z += b;
            }
            act = zbuf.iter().map(|&z| softplus(beta, z)).collect();
            for d in 0..3 {
                self.weights[l].matvec(&input_t[d], &mut sbuf);
                tan[d] = zbuf
                    .iter()
                    .zip(sbuf.iter())
                    .map(|(&z, &s)| sigmoid(beta * z) * s)
                    .collect();
            }
        }
        let z_out = dot(&self.w_out, &act) + self.b_out;
        let tt = z_out.tanh();
        let dt = 1.0 - tt * tt;
        let value = self.config.d_max * tt;
        let jac = Vec3::new(
            self.config.d_max * dt * dot(&self.w_out, &tan[0]),
            self.config.d_max * dt * dot(&self.w_out, &tan[1]),
            self.config.d_max * dt * dot(&self.w_out, &tan[2]),
        );
        (value, jac)
    }

    pub fn jacobian(&self, p: &Vec3) -> Vec3 {
        self.value_and_jacobian(p).1
    }

    pub fn jacobian_batch(&self, points: &[Vec3]) -> Vec<Vec3> {
        points.par_iter().map(|p| self.jacobian(p)).collect()
    }

    pub fn check_finite(&self) -> Result<()> {
        let finite = self.b_matrix.data.iter().all(|v| v.is_finite())
            && self.weights.iter().all(|w| w.data.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
            && self.w_out.iter().all(|v| v.is_finite())
            && self.b_out.is_finite();
        if finite {
            Ok(())
        } else {
            Err(Error::NonFinite("network parameters".into()))
        }
    }
}

impl SdfField for SdfNetwork {
    fn value(&self, p: &Vec3) -> f64 {
        self.forward(p)
    }

    fn gradient(&self, p: &Vec3) -> Vec3 {
        self.jacobian(p)
    }

    fn value_and_gradient(&self, p: &Vec3) -> (f64, Vec3) {
        self.value_and_jacobian(p)
    }
}
