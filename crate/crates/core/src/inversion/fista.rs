//! FISTA with complex soft-thresholding for min 0.5 ||y - F x||^2 + lambda ||x||_1.
//!
//! The step size comes from a power-iteration estimate of ||F||^2; a function
//! restart keeps the objective non-increasing, falling back to halved steps if
//! the Lipschitz estimate proves too small.

use super::operator::SubApertureOperator;
use crate::C64;
use ndarray::Array3;
use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub struct FistaOptions {
    pub max_iters: usize,
    /// Relative objective-change stopping tolerance.
    pub tol: f64,
}

impl Default for FistaOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveInfo {
    /// Objective value after every iteration (element 0 is the start).
    pub objective: Vec<f64>,
    pub lambda: f64,
    pub lipschitz: f64,
    /// ||y - F x||^2 at the returned solution.
    pub residual_energy: f64,
    pub iterations: usize,
}

impl SolveInfo {
    pub(crate) fn empty(lambda: f64) -> Self {
        Self {
            objective: Vec::new(),
            lambda,
            lipschitz: 0.0,
            residual_energy: 0.0,
            iterations: 0,
        }
    }
}

/// Magnitude shrinkage preserving phase: out = x * max(|x| - thr, 0)/|x|.
pub fn soft_threshold(x: &Array3<C64>, thr: f64) -> Array3<C64> {
    x.mapv(|c| {
        let mag = c.norm();
        if mag <= thr {
            C64::new(0.0, 0.0)
        } else {
            c * ((mag - thr) / mag)
        }
    })
}

fn l1_norm(x: &Array3<C64>) -> f64 {
    x.iter().map(|c| c.norm()).sum()
}

fn residual(fx: &[C64], y: &[C64]) -> Vec<C64> {
    fx.iter().zip(y.iter()).map(|(a, b)| a - b).collect()
}

fn energy(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

/// Power iteration estimate of the largest eigenvalue of F^H F.
fn lipschitz_estimate(op: &SubApertureOperator, iters: usize) -> f64 {
    let dims = op.grid().dims;
    let mut rng = crate::rng::stream(0xF157A, dims[0] as u64);
    let mut v = Array3::from_shape_fn((dims[0], dims[1], dims[2]), |_| {
        C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    });
    let mut lam = 1.0;
    for _ in 0..iters {
        let w = op.adjoint(&op.forward(&v));
        lam = w.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if lam <= 0.0 {
            return 1.0;
        }
        v = w.mapv(|c| c / lam);
    }
    lam
}

pub fn fista(
    op: &SubApertureOperator,
    y: &[C64],
    lambda: f64,
    opts: &FistaOptions,
) -> (Array3<C64>, SolveInfo) {
    let dims = op.grid().dims;
    let lipschitz = lipschitz_estimate(op, 20) * 1.05;
    let mut step = 1.0 / lipschitz;

    let zero = Array3::from_elem((dims[0], dims[1], dims[2]), C64::new(0.0, 0.0));
    let mut x = zero.clone();
    let mut z = zero;
    let mut fx = op.forward(&x);
    let mut obj = 0.5 * energy(&residual(&fx, y)) + lambda * l1_norm(&x);
    let mut t: f64 = 1.0;

    let mut objective = vec![obj];
    let mut iterations = 0;

    for _ in 0..opts.max_iters {
        iterations += 1;
        let fz = op.forward(&z);
        let grad = op.adjoint(&residual(&fz, y));
        let mut x_new = soft_threshold(&(&z - &grad.mapv(|g| g * step)), lambda * step);
        let mut fx_new = op.forward(&x_new);
        let mut obj_new = 0.5 * energy(&residual(&fx_new, y)) + lambda * l1_norm(&x_new);

        if obj_new > obj {
            // restart: momentum dropped, plain proximal step from x
            t = 1.0;
            let mut guard = 0;
            loop {
                let grad_x = op.adjoint(&residual(&fx, y));
                x_new = soft_threshold(&(&x - &grad_x.mapv(|g| g * step)), lambda * step);
                fx_new = op.forward(&x_new);
                obj_new = 0.5 * energy(&residual(&fx_new, y)) + lambda * l1_norm(&x_new);
                if obj_new <= obj || guard >= 8 {
                    break;
                }
                // Lipschitz estimate too small for a monotone step
                step *= 0.5;
                guard += 1;
            }
            if obj_new > obj {
                x_new = x.clone();
                fx_new = fx.clone();
                obj_new = obj;
            }
        }

        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_new;
        z = &x_new + &(&x_new - &x).mapv(|d| d * beta);
        t = t_new;

        let done = (obj - obj_new).abs() <= opts.tol * obj.abs().max(1e-30);
        x = x_new;
        fx = fx_new;
        obj = obj_new;
        objective.push(obj);
        if done {
            break;
        }
    }

    let residual_energy = energy(&residual(&fx, y));
    (
        x,
        SolveInfo {
            objective,
            lambda,
            lipschitz,
            residual_energy,
            iterations,
        },
    )
}
