//! Evaluative rollouts of any update rule over an optimizee.
//!
//! Step `t` (1-based) takes `g_t = ∇f(θ_{t−1})`, applies `Δθ_t` and records
//! `f(θ_t)`, each loss on a fresh mini-batch whose gradient is the next
//! step's input.

use crate::l2o::{EagerL2O, L2OParams, L2OState};
use crate::optimizee::OptimizeeInstance;
use crate::teachers::{teacher_step, TeacherKind, TeacherState};

/// A loss this many times larger than `max(1, initial loss)` counts as
/// divergence, as does any non-finite loss.
pub const DIVERGENCE_FACTOR: f64 = 1e4;

pub fn is_diverged(loss: f64, initial_loss: f64) -> bool {
    !loss.is_finite() || loss > DIVERGENCE_FACTOR * initial_loss.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProducedBy {
    L2O,
    Teacher(TeacherKind),
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub grad: Vec<f64>,
    pub update: Vec<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub produced_by: ProducedBy,
    /// `f(θ_0)` on the first batch.
    pub initial_loss: f64,
    pub steps: Vec<Step>,
    /// First step whose loss diverged; the trajectory stops before it.
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn loss_sum(&self) -> f64 {
        self.steps.iter().map(|s| s.loss).sum()
    }
}

/// Something that maps a gradient to an additive update.
pub trait UpdateRule {
    fn update(&mut self, g: &[f64]) -> Vec<f64>;
}

impl UpdateRule for EagerL2O {
    fn update(&mut self, g: &[f64]) -> Vec<f64> {
        self.step(g).expect("rollout keeps dimensions consistent")
    }
}

pub struct Teacher {
    pub kind: TeacherKind,
    pub state: TeacherState,
}

impl Teacher {
    pub fn new(kind: TeacherKind, dim: usize) -> Self {
        Self {
            kind,
            state: TeacherState::new(dim),
        }
    }
}

impl UpdateRule for Teacher {
    fn update(&mut self, g: &[f64]) -> Vec<f64> {
        teacher_step(&self.kind, &mut self.state, g).expect("rollout keeps dimensions consistent")
    }
}

/// What the per-step observer sees.
pub struct StepView<'a> {
    pub t: usize,
    pub theta: &'a [f64],
    pub grad: &'a [f64],
    pub update: &'a [f64],
    pub loss: f64,
}

/// Streams an `n`-step rollout through `observe` without storing it.
/// Returns `(initial loss, diverged_at)`.
pub fn stream_rollout<R: UpdateRule>(
    rule: &mut R,
    inst: &mut OptimizeeInstance,
    theta0: &[f64],
    n: usize,
    mut observe: impl FnMut(StepView<'_>),
) -> (f64, Option<usize>) {
    let mut theta = theta0.to_vec();
    let batch = inst.next_batch();
    let (initial, mut g) = inst.loss_and_grad(&theta, &batch);
    for t in 1..=n {
        let update = rule.update(&g);
        for (th, u) in theta.iter_mut().zip(&update) {
            *th += u;
        }
        let batch = inst.next_batch();
        let (loss, g_next) = inst.loss_and_grad(&theta, &batch);
        if is_diverged(loss, initial) {
            return (initial, Some(t));
        }
        observe(StepView {
            t,
            theta: &theta,
            grad: &g,
            update: &update,
            loss,
        });
        g = g_next;
    }
    (initial, None)
}

pub fn rollout<R: UpdateRule>(
    rule: &mut R,
    produced_by: ProducedBy,
    inst: &mut OptimizeeInstance,
    theta0: &[f64],
    n: usize,
) -> Trajectory {
    let mut steps = Vec::with_capacity(n);
    let (initial_loss, diverged_at) = stream_rollout(rule, inst, theta0, n, |v| {
        steps.push(Step {
            grad: v.grad.to_vec(),
            update: v.update.to_vec(),
            loss: v.loss,
        })
    });
    Trajectory {
        produced_by,
        initial_loss,
        steps,
        diverged_at,
    }
}

/// Rolls the learned optimizer for `n` steps from a zero recurrent state.
/// Purely evaluative: no tape, `phi` untouched.
pub fn rollout_l2o(
    phi: &L2OParams,
    inst: &mut OptimizeeInstance,
    theta0: &[f64],
    n: usize,
) -> Trajectory {
    assert!(n >= 1, "rollout horizon must be ≥ 1");
    let mut rule = EagerL2O::new(phi, &L2OState::zeros(theta0.len(), phi.hidden()));
    rollout(&mut rule, ProducedBy::L2O, inst, theta0, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;
    use crate::l2o::init_l2o;
    use crate::optimizee::{init_params, sample_instance, Batch, OptimizeeSpec};

    #[test]
    fn identity_policy_keeps_theta_and_loss() {
        let phi = init_l2o(0, 5);
        let mut inst = sample_instance(&OptimizeeSpec::quadratic(4), 1).unwrap();
        let theta0 = init_params(&inst, 2);
        let traj = rollout_l2o(&phi, &mut inst, &theta0, 12);
        assert_eq!(traj.len(), 12);
        assert!(traj.steps.iter().all(|s| s.loss == traj.initial_loss));
        assert!(traj
            .steps
            .iter()
            .all(|s| s.update.iter().all(|&u| u == 0.0)));
    }

    #[test]
    fn single_step_records_initial_gradient() {
        let phi = init_l2o(0, 3);
        let mut inst = sample_instance(&OptimizeeSpec::quadratic(3), 4).unwrap();
        let theta0 = init_params(&inst, 5);
        let (_, g0) = inst.loss_and_grad(&theta0, &Batch::Full);
        let traj = rollout_l2o(&phi, &mut inst, &theta0, 1);
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.steps[0].grad, g0);
    }

    #[test]
    fn divergence_truncates() {
        struct Push;
        impl UpdateRule for Push {
            fn update(&mut self, g: &[f64]) -> Vec<f64> {
                vec![10.0; g.len()]
            }
        }
        let mut inst = OptimizeeInstance::quadratic_fixture(
            Matrix::from_vec(2, 2, vec![1., 0., 0., 1.]),
            vec![1., 1.],
        );
        let traj = rollout(&mut Push, ProducedBy::Mixed, &mut inst, &[0.0, 0.0], 100);
        let at = traj.diverged_at.expect("pushing by +10 diverges");
        assert_eq!(traj.len(), at - 1);
        assert!(traj.steps.iter().all(|s| s.loss.is_finite()));
    }
}
