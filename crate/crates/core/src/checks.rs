//! Finite-difference suites behind the `gradcheck` command.
//!
//! Every check returns the largest relative error between a taped gradient
//! and central differences of an independently computed objective.

use rand::Rng as _;

use crate::autodiff::{grad_check, Matrix, Tape};
use crate::error::AutodiffError;
use crate::imitation::{imitation_gradient, teacher_trajectory};
use crate::l2o::{init_l2o, l2o_step, L2OParams, L2OState};
use crate::meta::{meta_gradient, MetaLossSpec, SegmentOutcome};
use crate::optimizee::{sample_instance, Batch, OptimizeeInstance, OptimizeeSpec};
use crate::seed;
use crate::teachers::TeacherKind;
use crate::trajectory::rollout_l2o;

pub const FD_EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_rel_err: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

/// A φ with non-trivial output weights so gradients are not dominated by
/// the zero projection of a fresh initialization.
pub fn probe_phi(hidden: usize, seed: u64) -> L2OParams {
    let mut phi = init_l2o(seed, hidden);
    let mut rng = seed::derived_rng(seed, "probe-phi", 0);
    for i in [4, 5] {
        for w in phi.tensor_mut(i).data_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
    }
    phi.output_scale = 0.1;
    phi
}

fn composite(p: &[f64]) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let x = tape.param(Matrix::from_vec(2, 3, p[0..6].to_vec()));
    let w = tape.param(Matrix::from_vec(3, 2, p[6..12].to_vec()));
    let b = tape.param(Matrix::from_vec(1, 2, p[12..14].to_vec()));
    let xw = tape.matmul(x, w);
    let h = tape.add_row(xw, b);
    let t = tape.tanh(h);
    let sq = tape.square(x);
    let cat = tape.concat(t, sq);
    let mid = tape.slice(cat, 1, 3);
    let s = tape.sigmoid(mid);
    let prod = tape.mul(s, mid);
    let diff = tape.sub(prod, mid);
    let scaled = tape.scale(diff, 0.7);
    let root = tape.sum(scaled);
    let grads = tape.backward(root).expect("scalar root");
    let mut flat = Vec::with_capacity(14);
    for (v, shape) in [(x, (2, 3)), (w, (3, 2)), (b, (1, 2))] {
        flat.extend_from_slice(grads.get_or_zeros(v, shape).data());
    }
    (tape.data(root).get(0, 0), flat)
}

/// Every tape primitive in one composite expression.
pub fn tape_primitives(seed: u64) -> Result<f64, AutodiffError> {
    let mut rng = seed::derived_rng(seed, "gradcheck-tape", 0);
    let p: Vec<f64> = (0..14).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, analytic) = composite(&p);
    grad_check(|q| composite(q).0, &analytic, &p, FD_EPS)
}

fn frozen_meta_loss(
    phi: &L2OParams,
    inst: &OptimizeeInstance,
    theta0: &[f64],
    grads: &[Vec<f64>],
    omega: &[f64],
) -> f64 {
    let mut state = L2OState::zeros(theta0.len(), phi.hidden());
    let mut theta = theta0.to_vec();
    let mut total = 0.0;
    for (g, w) in grads.iter().zip(omega) {
        let (u, s) = l2o_step(phi, &state, g).expect("matching dimensions");
        state = s;
        for (t, ui) in theta.iter_mut().zip(&u) {
            *t += ui;
        }
        total += w * inst.loss(&theta, &Batch::Full);
    }
    total
}

/// Meta-loss gradient against the oracle that replays the base run's
/// gradient inputs as constants (quadratic d=3, hidden 4, N=5, one segment).
pub fn meta_frozen_inputs(seed: u64) -> Result<f64, AutodiffError> {
    let phi = probe_phi(4, seed);
    let inst = sample_instance(
        &OptimizeeSpec::quadratic(3),
        seed::derive(seed, "gradcheck-inst", 0),
    )
    .expect("quadratic spec is valid");
    let theta0 = vec![0.3, -0.2, 0.5];
    let omega = vec![1.0, 0.5, 2.0, 1.0, 1.5];
    let spec = MetaLossSpec::new(omega.clone(), 5).expect("valid weights");
    let SegmentOutcome::Done { grad, .. } = meta_gradient(&phi, &mut inst.clone(), &theta0, &spec)
    else {
        return Ok(f64::INFINITY);
    };
    let base = rollout_l2o(&phi, &mut inst.clone(), &theta0, 5);
    let grads: Vec<Vec<f64>> = base.steps.iter().map(|s| s.grad.clone()).collect();
    grad_check(
        |p| frozen_meta_loss(&phi.with_flat(p), &inst, &theta0, &grads, &omega),
        &grad,
        &phi.to_flat(),
        FD_EPS,
    )
}

/// At N=1 the only gradient input is `∇f(θ_0)`, which does not depend on
/// φ, so plain differences of the real loss are the exact oracle.
pub fn meta_single_step(seed: u64) -> Result<f64, AutodiffError> {
    let phi = probe_phi(4, seed);
    let inst = sample_instance(
        &OptimizeeSpec::quadratic(3),
        seed::derive(seed, "gradcheck-inst", 1),
    )
    .expect("quadratic spec is valid");
    let theta0 = vec![-0.4, 0.1, 0.25];
    let spec = MetaLossSpec::uniform(1, 1);
    let SegmentOutcome::Done { grad, .. } = meta_gradient(&phi, &mut inst.clone(), &theta0, &spec)
    else {
        return Ok(f64::INFINITY);
    };
    grad_check(
        |p| rollout_l2o(&phi.with_flat(p), &mut inst.clone(), &theta0, 1).loss_sum(),
        &grad,
        &phi.to_flat(),
        FD_EPS,
    )
}

/// Imitation loss gradient against plain differences of an eager
/// recomputation of `Σ ω_t ‖Δθ^O_t − Δθ^φ_t‖²`.
pub fn imitation(seed: u64) -> Result<f64, AutodiffError> {
    let phi = probe_phi(4, seed);
    let mut inst = sample_instance(
        &OptimizeeSpec::quadratic(3),
        seed::derive(seed, "gradcheck-inst", 2),
    )
    .expect("quadratic spec is valid");
    let theta0 = vec![0.2, 0.4, -0.3];
    let traj = teacher_trajectory(TeacherKind::adam(0.05), &mut inst, &theta0, 6);
    let omega = vec![1.0, 2.0, 0.5, 1.0, 1.0, 3.0];
    let (_, grad) = imitation_gradient(&phi, &traj, &omega).expect("non-empty trajectory");
    let oracle = |p: &[f64]| {
        let phi = phi.with_flat(p);
        let mut state = L2OState::zeros(3, phi.hidden());
        let mut total = 0.0;
        for (s, w) in traj.steps.iter().zip(&omega) {
            let (u, next) = l2o_step(&phi, &state, &s.grad).expect("matching dimensions");
            state = next;
            total += w * s
                .update
                .iter()
                .zip(&u)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        total
    };
    grad_check(oracle, &grad, &phi.to_flat(), FD_EPS)
}

/// All suites under one seed.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>, AutodiffError> {
    Ok(vec![
        CheckResult {
            name: "tape_primitives",
            max_rel_err: tape_primitives(seed)?,
        },
        CheckResult {
            name: "meta_frozen_inputs",
            max_rel_err: meta_frozen_inputs(seed)?,
        },
        CheckResult {
            name: "meta_single_step",
            max_rel_err: meta_single_step(seed)?,
        },
        CheckResult {
            name: "imitation",
            max_rel_err: imitation(seed)?,
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_for_several_seeds() {
        for seed in [0, 1, 7] {
            for r in run_all(seed).unwrap() {
                assert!(r.passed(), "{} seed {seed}: {}", r.name, r.max_rel_err);
            }
        }
    }
}
