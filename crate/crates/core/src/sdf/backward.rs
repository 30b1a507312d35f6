//! Reverse-mode parameter gradients for losses L(f(p), J(p)).
//!
//! The forward pass stores both the activation chain and the spatial tangent
//! chain (three directional derivatives); the reverse pass walks both, which
//! carries second-order terms through the softplus and tanh nonlinearities.
//! Batches are split into fixed shards whose partial gradients are reduced in
//! shard order, so results are bitwise reproducible for a fixed shard size.

use super::{dot, sigmoid, softplus, Mat, SdfNetwork, GRAD_SHARD};
use crate::{Error, Result, Vec3};
use rayon::prelude::*;

/// Per-parameter gradient accumulators, congruent with [`SdfNetwork`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

impl Gradients {
    pub fn zeros_like(net: &SdfNetwork) -> Self {
        Self {
            weights: net
                .weights
                .iter()
                .map(|w| Mat::zeros(w.rows, w.cols))
                .collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            w_out: vec![0.0; net.w_out.len()],
            b_out: 0.0,
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(other.weights.iter()) {
            for (x, y) in a.data.iter_mut().zip(b.data.iter()) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(other.biases.iter()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
        for (x, y) in self.w_out.iter_mut().zip(other.w_out.iter()) {
            *x += y;
        }
        self.b_out += other.b_out;
    }

    pub fn scale(&mut self, c: f64) {
        for w in self.weights.iter_mut() {
            w.data.iter_mut().for_each(|x| *x *= c);
        }
        for b in self.biases.iter_mut() {
            b.iter_mut().for_each(|x| *x *= c);
        }
        self.w_out.iter_mut().for_each(|x| *x *= c);
        self.b_out *= c;
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.data.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
            && self.w_out.iter().all(|v| v.is_finite())
            && self.b_out.is_finite()
    }

    /// Max absolute entry; used by divergence checks and tests.
    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = self.b_out.abs();
        for w in &self.weights {
            for v in &w.data {
                m = m.max(v.abs());
            }
        }
        for b in &self.biases {
            for v in b {
                m = m.max(v.abs());
            }
        }
        for v in &self.w_out {
            m = m.max(v.abs());
        }
        m
    }
}

/// Stored forward state for one point.
struct Workspace {
    gamma: Vec<f64>,
    g: [Vec<f64>; 3],
    inputs: Vec<Vec<f64>>,
    inputs_t: Vec<[Vec<f64>; 3]>,
    z: Vec<Vec<f64>>,
    s_pre: Vec<[Vec<f64>; 3]>,
    a: Vec<Vec<f64>>,
    t: Vec<[Vec<f64>; 3]>,
    z_out: f64,
    u: [f64; 3],
}

impl Workspace {
    fn new(net: &SdfNetwork) -> Self {
        let e = net.config.embed_dim();
        let w = net.config.width;
        let layers = net.config.layers;
        Self {
            gamma: vec![0.0; e],
            g: std::array::from_fn(|_| vec![0.0; e]),
            inputs: (0..layers).map(|l| vec![0.0; net.config.fan_in(l)]).collect(),
            inputs_t: (0..layers)
                .map(|l| std::array::from_fn(|_| vec![0.0; net.config.fan_in(l)]))
                .collect(),
            z: (0..layers).map(|_| vec![0.0; w]).collect(),
            s_pre: (0..layers)
                .map(|_| std::array::from_fn(|_| vec![0.0; w]))
                .collect(),
            a: (0..layers).map(|_| vec![0.0; w]).collect(),
            t: (0..layers).map(|_| std::array::from_fn(|_| vec![0.0; w])).collect(),
            z_out: 0.0,
            u: [0.0; 3],
        }
    }
}

fn forward_stored(net: &SdfNetwork, p: &Vec3, ws: &mut Workspace) {
    let beta = net.config.beta_softplus;
    let layers = net.config.layers;
    net.embed_with_tangent(p, &mut ws.gamma, &mut ws.g);

    for l in 0..layers {
        // assemble the layer input and its tangents (skip concatenation)
        {
            let Workspace {
                gamma,
                g,
                inputs,
                inputs_t,
                a,
                t,
                ..
            } = &mut *ws;
            let skip = net.config.skip_layer == Some(l + 1);
            if l == 0 {
                inputs[l].copy_from_slice(gamma);
                for d in 0..3 {
                    inputs_t[l][d].copy_from_slice(&g[d]);
                }
            } else {
                let base = a[l - 1].len();
                inputs[l][..base].copy_from_slice(&a[l - 1]);
                for d in 0..3 {
                    inputs_t[l][d][..base].copy_from_slice(&t[l - 1][d]);
                }
                if skip {
                    inputs[l][base..].copy_from_slice(gamma);
                    for d in 0..3 {
                        inputs_t[l][d][base..].copy_from_slice(&g[d]);
                    }
                }
            }
        }
        net.weights[l].matvec(&ws.inputs[l], &mut ws.z[l]);
        for (z, b) in ws.z[l].iter_mut().zip(net.biases[l].iter()) {
            *z += b;
        }
        for d in 0..3 {
            net.weights[l].matvec(&ws.inputs_t[l][d], &mut ws.s_pre[l][d]);
        }
        for r in 0..net.config.width {
            let z = ws.z[l][r];
            ws.a[l][r] = softplus(beta, z);
            let sg = sigmoid(beta * z);
            for d in 0..3 {
                ws.t[l][d][r] = sg * ws.s_pre[l][d][r];
            }
        }
    }

    let last = layers - 1;
    ws.z_out = dot(&net.w_out, &ws.a[last]) + net.b_out;
    for d in 0..3 {
        ws.u[d] = dot(&net.w_out, &ws.t[last][d]);
    }
}

/// Accumulate the parameter gradient of gf * f(p) + <gj, J(p)> into `grads`.
fn accumulate_point(net: &SdfNetwork, ws: &Workspace, gf: f64, gj: &Vec3, grads: &mut Gradients) {
    let beta = net.config.beta_softplus;
    let width = net.config.width;
    let layers = net.config.layers;
    let d_max = net.config.d_max;
    let last = layers - 1;

    let tt = ws.z_out.tanh();
    let s = 1.0 - tt * tt;
    let sum_gu: f64 = (0..3).map(|d| gj[d] * ws.u[d]).sum();
    let gz_out = gf * d_max * s + d_max * (-2.0 * tt * s) * sum_gu;
    let gu = [gj[0] * d_max * s, gj[1] * d_max * s, gj[2] * d_max * s];

    for r in 0..width {
        grads.w_out[r] += gz_out * ws.a[last][r]
            + gu[0] * ws.t[last][0][r]
            + gu[1] * ws.t[last][1][r]
            + gu[2] * ws.t[last][2][r];
    }
    grads.b_out += gz_out;

    let mut ga: Vec<f64> = net.w_out.iter().map(|w| w * gz_out).collect();
    let mut gt: [Vec<f64>; 3] =
        std::array::from_fn(|d| net.w_out.iter().map(|w| w * gu[d]).collect());

    for l in (0..layers).rev() {
        let fan_in = ws.inputs[l].len();
        let mut gz = vec![0.0; width];
        let mut gs: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; width]);
        for r in 0..width {
            let z = ws.z[l][r];
            let s1 = sigmoid(beta * z);
            let s2 = beta * s1 * (1.0 - s1);
            let mut acc = ga[r] * s1;
            for d in 0..3 {
                acc += gt[d][r] * s2 * ws.s_pre[l][d][r];
                gs[d][r] = gt[d][r] * s1;
            }
            gz[r] = acc;
        }
        // fused parameter update per row
        let (input, it) = (&ws.inputs[l], &ws.inputs_t[l]);
        for r in 0..width {
            let (c0, c1, c2, c3) = (gz[r], gs[0][r], gs[1][r], gs[2][r]);
            let row = grads.weights[l].row_mut(r);
            for c in 0..fan_in {
                row[c] += c0 * input[c] + c1 * it[0][c] + c2 * it[1][c] + c3 * it[2][c];
            }
            grads.biases[l][r] += c0;
        }
        if l == 0 {
            break;
        }
        // propagate to the previous layer; the embedding carries no
        // trainable parameters, so the skip tail is dropped
        let mut ga_next = vec![0.0; fan_in];
        net.weights[l].matvec_transpose_add(&gz, &mut ga_next);
        ga_next.truncate(width);
        ga = ga_next;
        for d in 0..3 {
            let mut gt_next = vec![0.0; fan_in];
            net.weights[l].matvec_transpose_add(&gs[d], &mut gt_next);
            gt_next.truncate(width);
            gt[d] = gt_next;
        }
    }
}

impl SdfNetwork {
    /// Exact parameter gradients of sum_i (gf_i * f(p_i) + <gj_i, J(p_i)>).
    pub fn backward_batch(
        &self,
        points: &[Vec3],
        upstream_f: &[f64],
        upstream_j: &[Vec3],
    ) -> Result<Gradients> {
        if points.len() != upstream_f.len() || points.len() != upstream_j.len() {
            return Err(Error::ShapeMismatch(
                "points and upstream sensitivities".into(),
            ));
        }
        if upstream_f.iter().any(|v| !v.is_finite())
            || upstream_j.iter().any(|v| !v.iter().all(|x| x.is_finite()))
        {
            return Err(Error::NonFinite("upstream sensitivities".into()));
        }
        let shards: Vec<Gradients> = points
            .par_chunks(GRAD_SHARD)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut ws = Workspace::new(self);
                let mut grads = Gradients::zeros_like(self);
                let offset = ci * GRAD_SHARD;
                for (i, p) in chunk.iter().enumerate() {
                    let gf = upstream_f[offset + i];
                    let gj = &upstream_j[offset + i];
                    if gf == 0.0 && *gj == Vec3::zeros() {
                        continue;
                    }
                    forward_stored(self, p, &mut ws);
                    accumulate_point(self, &ws, gf, gj, &mut grads);
                }
                grads
            })
            .collect();
        let mut total = Gradients::zeros_like(self);
        for g in shards {
            total.add_assign(&g);
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdf::SdfConfig;
    use rand::Rng;

    fn tiny_net(seed: u64, skip: bool) -> SdfNetwork {
        SdfNetwork::init(
            SdfConfig {
                n_fourier: 3,
                sigma_ff: 1.5,
                width: 6,
                layers: 3,
                skip_layer: if skip { Some(2) } else { None },
                beta_softplus: 100.0,
                d_max: 1.5,
                center: [0.0; 3],
                half_extent: 1.0,
                literal_gaussian_init: false,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn test_backward_zero_upstream_gives_zero() {
        let net = tiny_net(1, true);
        let points = vec![Vec3::new(0.1, 0.2, 0.3); 5];
        let g = net
            .backward_batch(&points, &[0.0; 5], &vec![Vec3::zeros(); 5])
            .unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn test_backward_shape_mismatch_errors() {
        let net = tiny_net(1, false);
        let out = net.backward_batch(&[Vec3::zeros()], &[1.0, 2.0], &[Vec3::zeros()]);
        assert!(out.is_err());
    }

    /// Finite-difference check in parameter space for an arbitrary loss
    /// closure over (f, J).
    fn check_param_fd<LF>(net: &SdfNetwork, points: &[Vec3], loss: LF, tol: f64)
    where
        LF: Fn(&SdfNetwork) -> (f64, Vec<f64>, Vec<Vec3>),
    {
        let (_, gf, gj) = loss(net);
        let grads = net.backward_batch(points, &gf, &gj).unwrap();

        let h = 1e-6;
        let mut check = |get: &dyn Fn(&mut SdfNetwork) -> &mut f64, g_analytic: f64| {
            let mut plus = net.clone();
            *get(&mut plus) += h;
            let (lp, _, _) = loss(&plus);
            let mut minus = net.clone();
            *get(&mut minus) -= h;
            let (lm, _, _) = loss(&minus);
            let fd = (lp - lm) / (2.0 * h);
            let denom = g_analytic.abs().max(fd.abs()).max(1e-6);
            assert!(
                (fd - g_analytic).abs() / denom <= tol,
                "gradient mismatch: analytic {g_analytic} fd {fd}"
            );
        };

        // sample a spread of parameters from each tensor
        for l in 0..net.config.layers {
            let count = net.weights[l].data.len();
            for idx in [0, count / 3, count - 1] {
                let g = grads.weights[l].data[idx];
                check(&move |n: &mut SdfNetwork| &mut n.weights[l].data[idx], g);
            }
            let g = grads.biases[l][1];
            check(&move |n: &mut SdfNetwork| &mut n.biases[l][1], g);
        }
        let last = net.w_out.len() - 1;
        for idx in [0, last] {
            let g = grads.w_out[idx];
            check(&move |n: &mut SdfNetwork| &mut n.w_out[idx], g);
        }
        check(&|n: &mut SdfNetwork| &mut n.b_out, grads.b_out);
    }

    #[test]
    fn test_backward_value_loss_matches_fd() {
        // L = sum f(p_i)
        for seed in [2u64, 3, 4] {
            let net = tiny_net(seed, seed % 2 == 0);
            let mut rng = crate::rng::stream(seed, 5);
            let points: Vec<Vec3> = (0..4)
                .map(|_| {
                    Vec3::new(
                        rng.gen::<f64>() - 0.5,
                        rng.gen::<f64>() - 0.5,
                        rng.gen::<f64>() - 0.5,
                    )
                })
                .collect();
            let pts = points.clone();
            check_param_fd(
                &net,
                &points,
                move |n| {
                    let l: f64 = pts.iter().map(|p| n.forward(p)).sum();
                    (l, vec![1.0; pts.len()], vec![Vec3::zeros(); pts.len()])
                },
                1e-4,
            );
        }
    }

    #[test]
    fn test_backward_jacobian_norm_loss_matches_fd() {
        // L = sum ||J(p_i)||^2, the second-order path
        for seed in [7u64, 8, 9] {
            let net = tiny_net(seed, seed % 2 == 1);
            let mut rng = crate::rng::stream(seed, 6);
            let points: Vec<Vec3> = (0..4)
                .map(|_| {
                    Vec3::new(
                        rng.gen::<f64>() - 0.5,
                        rng.gen::<f64>() - 0.5,
                        rng.gen::<f64>() - 0.5,
                    )
                })
                .collect();
            let pts = points.clone();
            check_param_fd(
                &net,
                &points,
                move |n| {
                    let jacs: Vec<Vec3> = pts.iter().map(|p| n.jacobian(p)).collect();
                    let l: f64 = jacs.iter().map(|j| j.norm_squared()).sum();
                    // dL/dJ = 2 J
                    (l, vec![0.0; pts.len()], jacs.iter().map(|j| 2.0 * j).collect())
                },
                1e-4,
            );
        }
    }

    #[test]
    fn test_backward_deterministic_across_runs() {
        let net = tiny_net(10, true);
        let mut rng = crate::rng::stream(11, 0);
        let points: Vec<Vec3> = (0..200)
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let gf: Vec<f64> = (0..200).map(|_| rng.gen::<f64>() - 0.5).collect();
        let gj: Vec<Vec3> = (0..200)
            .map(|_| {
                Vec3::new(
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                )
            })
            .collect();
        let a = net.backward_batch(&points, &gf, &gj).unwrap();
        let b = net.backward_batch(&points, &gf, &gj).unwrap();
        assert_eq!(a, b);
    }
}
