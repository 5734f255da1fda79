//! Hand-crafted optimizers: imitation teachers, self-improving mixture
//! components and evaluation baselines. Adam also serves as the
//! meta-optimizer for the learned optimizer's own weights.
//!
//! Every step returns an *additive* update, `θ ← θ + Δθ`.

use std::fmt;
use std::str::FromStr;

use crate::error::DimensionMismatch;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TeacherKind {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Adagrad {
        lr: f64,
        eps: f64,
    },
    RmsProp {
        lr: f64,
        decay: f64,
        eps: f64,
    },
}

impl TeacherKind {
    pub fn sgd(lr: f64) -> Self {
        TeacherKind::Sgd { lr }
    }

    pub fn adam(lr: f64) -> Self {
        TeacherKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn adagrad(lr: f64) -> Self {
        TeacherKind::Adagrad { lr, eps: 1e-10 }
    }

    pub fn rmsprop(lr: f64) -> Self {
        TeacherKind::RmsProp {
            lr,
            decay: 0.9,
            eps: 1e-10,
        }
    }

    /// Adam, SGD and Adagrad at learning rate 0.01.
    pub fn default_ensemble() -> Vec<TeacherKind> {
        vec![Self::adam(0.01), Self::sgd(0.01), Self::adagrad(0.01)]
    }

    pub fn lr(&self) -> f64 {
        match *self {
            TeacherKind::Sgd { lr }
            | TeacherKind::Adam { lr, .. }
            | TeacherKind::Adagrad { lr, .. }
            | TeacherKind::RmsProp { lr, .. } => lr,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TeacherKind::Sgd { .. } => "sgd",
            TeacherKind::Adam { .. } => "adam",
            TeacherKind::Adagrad { .. } => "adagrad",
            TeacherKind::RmsProp { .. } => "rmsprop",
        }
    }

    pub fn is_valid(&self) -> bool {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        self.lr() > 0.0
            && match *self {
                TeacherKind::Sgd { .. } => true,
                TeacherKind::Adam {
                    beta1, beta2, eps, ..
                } => unit(beta1) && unit(beta2) && eps > 0.0,
                TeacherKind::Adagrad { eps, .. } => eps > 0.0,
                TeacherKind::RmsProp { decay, eps, .. } => unit(decay) && eps > 0.0,
            }
    }
}

impl fmt::Display for TeacherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name(), self.lr())
    }
}

/// Parses `adam`, `sgd`, `adagrad`, `rmsprop`, optionally suffixed `@lr`.
impl FromStr for TeacherKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, lr) = match s.split_once('@') {
            Some((n, lr)) => (
                n,
                lr.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("bad learning rate in `{s}`"))?,
            ),
            None => (s, 0.01),
        };
        let kind = match name.trim().to_ascii_lowercase().as_str() {
            "sgd" => Self::sgd(lr),
            "adam" => Self::adam(lr),
            "adagrad" => Self::adagrad(lr),
            "rmsprop" => Self::rmsprop(lr),
            other => return Err(format!("unknown optimizer `{other}`")),
        };
        if kind.is_valid() {
            Ok(kind)
        } else {
            Err(format!("invalid hyperparameters in `{s}`"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Adagrad sum of squares or RMSProp running mean of squares.
    pub acc: Vec<f64>,
}

impl TeacherState {
    pub fn new(dim: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            acc: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }
}

/// Advances `state` by one step on gradient `g` and returns the update.
pub fn teacher_step(
    kind: &TeacherKind,
    state: &mut TeacherState,
    g: &[f64],
) -> Result<Vec<f64>, DimensionMismatch> {
    if g.len() != state.dim() {
        return Err(DimensionMismatch::Mismatch {
            expected: state.dim(),
            got: g.len(),
        });
    }
    state.step += 1;
    let update = match *kind {
        TeacherKind::Sgd { lr } => g.iter().map(|gi| -lr * gi).collect(),
        TeacherKind::Adam {
            lr,
            beta1,
            beta2,
            eps,
        } => {
            let t = state.step as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            g.iter()
                .enumerate()
                .map(|(i, &gi)| {
                    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * gi;
                    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * gi * gi;
                    let m_hat = state.m[i] / c1;
                    let v_hat = state.v[i] / c2;
                    -lr * m_hat / (v_hat.sqrt() + eps)
                })
                .collect()
        }
        TeacherKind::Adagrad { lr, eps } => g
            .iter()
            .zip(state.acc.iter_mut())
            .map(|(&gi, a)| {
                *a += gi * gi;
                -lr * gi / (*a + eps).sqrt()
            })
            .collect(),
        TeacherKind::RmsProp { lr, decay, eps } => g
            .iter()
            .zip(state.acc.iter_mut())
            .map(|(&gi, a)| {
                *a = decay * *a + (1.0 - decay) * gi * gi;
                -lr * gi / (*a + eps).sqrt()
            })
            .collect(),
    };
    Ok(update)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sgd_first_step() {
        let mut s = TeacherState::new(2);
        let u = teacher_step(&TeacherKind::sgd(0.01), &mut s, &[1.0, -2.0]).unwrap();
        assert_eq!(u, vec![-0.01, 0.02]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_first_step_is_sign_times_lr() {
        let mut s = TeacherState::new(2);
        let u = teacher_step(&TeacherKind::adam(0.01), &mut s, &[1.0, -1.0]).unwrap();
        assert!((u[0] + 0.01).abs() < 1e-6);
        assert!((u[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn adagrad_first_step() {
        let mut s = TeacherState::new(1);
        let u = teacher_step(&TeacherKind::adagrad(0.01), &mut s, &[4.0]).unwrap();
        assert!((u[0] + 0.01).abs() < 1e-6);
    }

    #[test]
    fn rmsprop_first_step() {
        // acc = 0.1 g², so Δ = -lr g / sqrt(0.1 g²) = -lr sign(g) / sqrt(0.1)
        let mut s = TeacherState::new(1);
        let u = teacher_step(&TeacherKind::rmsprop(0.01), &mut s, &[3.0]).unwrap();
        assert!((u[0] + 0.01 / 0.1f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch() {
        let mut s = TeacherState::new(3);
        assert!(teacher_step(&TeacherKind::sgd(0.1), &mut s, &[1.0]).is_err());
        assert_eq!(s.step, 0);
    }

    #[test]
    fn parse_names() {
        assert_eq!(
            "adam".parse::<TeacherKind>().unwrap(),
            TeacherKind::adam(0.01)
        );
        assert_eq!(
            "SGD@0.1".parse::<TeacherKind>().unwrap(),
            TeacherKind::sgd(0.1)
        );
        assert!("sgd@-1".parse::<TeacherKind>().is_err());
        assert!("lion".parse::<TeacherKind>().is_err());
    }

    proptest! {
        #[test]
        fn same_inputs_same_output(g in prop::collection::vec(-5.0f64..5.0, 1..6)) {
            for kind in [TeacherKind::sgd(0.01), TeacherKind::adam(0.01), TeacherKind::adagrad(0.01), TeacherKind::rmsprop(0.01)] {
                let mut a = TeacherState::new(g.len());
                let mut b = TeacherState::new(g.len());
                let ua = teacher_step(&kind, &mut a, &g).unwrap();
                let ub = teacher_step(&kind, &mut b, &g).unwrap();
                prop_assert_eq!(ua, ub);
                prop_assert_eq!(a, b);
            }
        }
    }
}
