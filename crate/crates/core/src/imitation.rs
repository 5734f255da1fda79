//! Imitation of analytical optimizers, mixed with meta-loss epochs, and the
//! self-improving mixed-trajectory alternative.
//!
//! A teacher trajectory is produced without the learned optimizer at all;
//! the learned optimizer then replays the teacher's gradients and is
//! regressed onto the teacher's updates,
//! `L_O(φ) = Σ_t ω_t ‖Δθ_t^O − Δθ_t^φ‖²`.

use rand::Rng as _;

use crate::autodiff::{Matrix, Tape, Value};
use crate::error::{ImitationError, OptimizeeError};
use crate::l2o::{forward, preprocess, L2OParams, L2OState, LstmState};
use crate::meta::{
    flat_grad, tape_params, EpisodeBody, EpisodeRecord, MetaOptimizer, TrainConfig, Trainer,
};
use crate::optimizee::OptimizeeInstance;
use crate::seed::{self, Rng};
use crate::teachers::{teacher_step, TeacherKind, TeacherState};
use crate::trajectory::{rollout, ProducedBy, Teacher, Trajectory};

/// Rolls an analytical optimizer for `n` steps. Independent of any φ.
pub fn teacher_trajectory(
    kind: TeacherKind,
    inst: &mut OptimizeeInstance,
    theta0: &[f64],
    n: usize,
) -> Trajectory {
    assert!(n >= 1, "trajectory horizon must be ≥ 1");
    let mut teacher = Teacher::new(kind, theta0.len());
    rollout(&mut teacher, ProducedBy::Teacher(kind), inst, theta0, n)
}

/// `L_O` over `steps` and its φ-gradient, starting from `state`.
fn imitation_segment(
    phi: &L2OParams,
    traj: &Trajectory,
    omega: &[f64],
    steps: std::ops::Range<usize>,
    state: &L2OState,
) -> (f64, Vec<f64>, L2OState) {
    let mut tape = Tape::new();
    let params = tape_params(&mut tape, phi);
    let mut st: LstmState<Value> = state.map(|m| tape.constant(m.clone()));
    let mut root: Option<Value> = None;
    for t in steps {
        let step = &traj.steps[t];
        let x = tape.constant(preprocess(&step.grad, phi.preprocess_p));
        let (update, next) = forward(&mut tape, &params, phi.hidden(), phi.output_scale, &st, &x);
        let target = tape.constant(Matrix::column(step.update.clone()));
        let diff = tape.sub(target, update);
        let sq = tape.square(diff);
        let s = tape.sum(sq);
        let term = tape.scale(s, omega[t]);
        root = Some(match root {
            Some(r) => tape.add(r, term),
            None => term,
        });
        st = next;
    }
    let root = root.expect("non-empty segment");
    let loss = tape.data(root).get(0, 0);
    let grad = flat_grad(&tape, root, &params, phi);
    (loss, grad, st.map(|v| tape.data(*v).clone()))
}

/// `L_O` and its φ-gradient over the whole trajectory as one segment.
pub fn imitation_gradient(
    phi: &L2OParams,
    traj: &Trajectory,
    omega: &[f64],
) -> Result<(f64, Vec<f64>), ImitationError> {
    if traj.is_empty() {
        return Err(ImitationError::EmptyTrajectory);
    }
    if omega.len() < traj.len() {
        return Err(ImitationError::WeightsTooShort);
    }
    let state = L2OState::zeros(traj.steps[0].grad.len(), phi.hidden());
    let (loss, grad, _) = imitation_segment(phi, traj, omega, 0..traj.len(), &state);
    Ok((loss, grad))
}

/// Replays the teacher's gradients through the learned optimizer in
/// truncated segments, one meta-optimizer step per segment. Returns the
/// summed imitation loss.
pub fn imitation_update(
    phi: &mut L2OParams,
    traj: &Trajectory,
    omega: &[f64],
    opt: &mut MetaOptimizer,
    segment: usize,
) -> Result<f64, ImitationError> {
    if traj.is_empty() {
        return Err(ImitationError::EmptyTrajectory);
    }
    if omega.len() < traj.len() {
        return Err(ImitationError::WeightsTooShort);
    }
    let segment = segment.max(1);
    let mut state = L2OState::zeros(traj.steps[0].grad.len(), phi.hidden());
    let mut total = 0.0;
    let mut start = 0;
    while start < traj.len() {
        let end = (start + segment).min(traj.len());
        let (loss, grad, next) = imitation_segment(phi, traj, omega, start..end, &state);
        total += loss;
        opt.apply(phi, &grad);
        state = next;
        start = end;
    }
    Ok(total)
}

/// Draws the per-episode choice between a meta-loss episode and a teacher
/// episode: `u ~ U(0,1)`, teacher iff `u < r`, teacher picked uniformly.
#[derive(Debug, Clone)]
pub struct EpisodeSampler {
    r: f64,
    rng: Rng,
}

impl EpisodeSampler {
    pub fn new(r: f64, seed: u64) -> Self {
        assert!((0.0..=1.0).contains(&r), "r must lie in [0, 1]");
        Self {
            r,
            rng: seed::rng(seed),
        }
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// `Some(index)` of the teacher for this episode, `None` for a
    /// meta-loss episode.
    pub fn next_teacher(&mut self, teachers: usize) -> Option<usize> {
        let u: f64 = self.rng.random();
        if u < self.r {
            Some(self.rng.random_range(0..teachers))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImitationConfig {
    /// Probability of a teacher episode.
    pub r: f64,
    pub teachers: Vec<TeacherKind>,
    /// Per-step weights; `None` means all ones.
    pub omega: Option<Vec<f64>>,
    pub t_total: u64,
}

impl ImitationConfig {
    pub fn new(r: f64, teachers: Vec<TeacherKind>, t_total: u64) -> Self {
        Self {
            r,
            teachers,
            omega: None,
            t_total,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.r) {
            return Err("r must lie in [0, 1]".into());
        }
        if self.teachers.is_empty() {
            return Err("teacher list must not be empty".into());
        }
        if let Some(w) = &self.omega {
            if w.iter().any(|x| !(*x >= 0.0)) {
                return Err("weights must be non-negative".into());
            }
        }
        Ok(())
    }

    pub fn body(&self, master_seed: u64) -> EpisodeBody {
        EpisodeBody::Imitation {
            sampler: EpisodeSampler::new(self.r, seed::derive(master_seed, "il-episodes", 0)),
            teachers: self.teachers.clone(),
            omega: self.omega.clone(),
        }
    }
}

/// Imitation-regularized training at a fixed horizon for `ic.t_total`
/// epochs.
pub fn il_train(
    phi0: &L2OParams,
    ic: &ImitationConfig,
    tc: &TrainConfig,
    horizon: usize,
) -> Result<(L2OParams, Vec<EpisodeRecord>), OptimizeeError> {
    let mut phi = phi0.clone();
    let mut trainer = Trainer::new(tc.clone(), phi.num_params(), ic.body(tc.seed));
    for _ in 0..ic.t_total {
        trainer.run_epoch(&mut phi, horizon)?;
    }
    Ok((phi, trainer.log))
}

/// Mixture probabilities `(p_0, p_1..p_k)` over {learned optimizer,
/// teachers}, with the teacher mass decaying linearly to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfImprovingSchedule {
    pub teachers: Vec<TeacherKind>,
    /// Initial probability of each teacher; `1/(k+1)` gives a uniform start.
    pub initial: f64,
    pub anneal_epochs: u64,
}

impl SelfImprovingSchedule {
    pub fn uniform(teachers: Vec<TeacherKind>, anneal_epochs: u64) -> Self {
        let initial = 1.0 / (teachers.len() as f64 + 1.0);
        Self {
            teachers,
            initial,
            anneal_epochs,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.teachers.is_empty() {
            return Err("teacher list must not be empty".into());
        }
        if !(self.initial >= 0.0) || self.initial * self.teachers.len() as f64 > 1.0 {
            return Err("teacher probabilities must be non-negative and sum to at most 1".into());
        }
        Ok(())
    }

    pub fn probabilities(&self, epoch: u64) -> Vec<f64> {
        let k = self.teachers.len();
        let frac = if epoch >= self.anneal_epochs {
            0.0
        } else {
            1.0 - epoch as f64 / self.anneal_epochs as f64
        };
        let p = self.initial * frac;
        let mut probs = Vec::with_capacity(k + 1);
        probs.push(1.0 - k as f64 * p);
        probs.extend(std::iter::repeat_n(p, k));
        probs
    }

    pub fn mixer(&self, epoch: u64, dim: usize, seed: u64) -> Mixer {
        Mixer::new(self.probabilities(epoch), &self.teachers, dim, seed)
    }
}

/// Per-step optimizer choice for a mixed trajectory. Every teacher sees
/// every gradient so its state tracks the trajectory, whichever optimizer
/// is applied.
#[derive(Debug, Clone)]
pub struct Mixer {
    probs: Vec<f64>,
    teachers: Vec<(TeacherKind, TeacherState)>,
    rng: Rng,
    pub counts: Vec<usize>,
}

impl Mixer {
    pub fn new(probs: Vec<f64>, teachers: &[TeacherKind], dim: usize, seed: u64) -> Self {
        assert_eq!(probs.len(), teachers.len() + 1);
        Self {
            counts: vec![0; probs.len()],
            probs,
            teachers: teachers
                .iter()
                .map(|k| (*k, TeacherState::new(dim)))
                .collect(),
            rng: seed::rng(seed),
        }
    }

    fn pick(&mut self) -> usize {
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (j, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                last = j;
            }
            acc += p;
            if u < acc {
                return j;
            }
        }
        last
    }

    /// `None` when the learned optimizer's update applies this step,
    /// otherwise the chosen teacher's update.
    pub fn choose_and_observe(&mut self, g: &[f64]) -> Option<Vec<f64>> {
        let updates: Vec<Vec<f64>> = self
            .teachers
            .iter_mut()
            .map(|(k, s)| teacher_step(k, s, g).expect("teacher state sized to the optimizee"))
            .collect();
        let j = self.pick();
        self.counts[j] += 1;
        if j == 0 {
            None
        } else {
            Some(updates[j - 1].clone())
        }
    }
}

pub fn self_improving_train(
    phi0: &L2OParams,
    sis: &SelfImprovingSchedule,
    tc: &TrainConfig,
    horizon: usize,
    epochs: u64,
) -> Result<(L2OParams, Vec<EpisodeRecord>), OptimizeeError> {
    let mut phi = phi0.clone();
    let mut trainer = Trainer::new(
        tc.clone(),
        phi.num_params(),
        EpisodeBody::SelfImproving(sis.clone()),
    );
    for _ in 0..epochs {
        trainer.run_epoch(&mut phi, horizon)?;
    }
    Ok((phi, trainer.log))
}
