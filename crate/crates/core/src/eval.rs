//! Multi-seed evaluation of learned and analytical optimizers on unseen
//! optimizee instances.
//!
//! Each seed gets its own instance, initialization and batch stream. The
//! optimizer is driven by mini-batch gradients, while the recorded curve
//! is the full training-set loss at every `log_every` steps (plus step 0
//! and the last step). Seeds run through [`Exec`] and are reduced in seed
//! order, so reports do not depend on the thread count.

use std::collections::HashSet;

use crate::error::EvalError;
use crate::exec::Exec;
use crate::l2o::{EagerL2O, L2OParams, L2OState};
use crate::optimizee::{init_params, sample_instance, Batch, OptimizeeInstance, OptimizeeSpec};
use crate::seed;
use crate::teachers::TeacherKind;
use crate::trajectory::{is_diverged, stream_rollout, Teacher};

#[derive(Debug, Clone, PartialEq)]
pub enum EvalOptimizer {
    Learned(L2OParams),
    Teacher(TeacherKind),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Row label in summaries.
    pub label: String,
    pub optimizer: EvalOptimizer,
    pub optimizee: OptimizeeSpec,
    pub n_eval: usize,
    pub seeds: Vec<u64>,
    pub log_every: usize,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.seeds.is_empty() {
            return Err(EvalError::NoSeeds);
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return Err(EvalError::DuplicateSeeds);
        }
        if self.n_eval == 0 {
            return Err(EvalError::ZeroHorizon);
        }
        if self.log_every == 0 {
            return Err(EvalError::ZeroLogEvery);
        }
        self.optimizee.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedCurve {
    pub seed: u64,
    /// `(step, full-data loss)`, truncated before a divergence.
    pub points: Vec<(usize, f64)>,
    pub diverged_at: Option<usize>,
}

impl SeedCurve {
    /// Loss at the last step, if the seed survived.
    pub fn final_loss(&self) -> Option<f64> {
        match self.diverged_at {
            Some(_) => None,
            None => self.points.last().map(|p| p.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub alive: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub optimizee: String,
    pub n_eval: usize,
    pub curves: Vec<SeedCurve>,
    pub aggregate: Vec<StepStats>,
    pub median_final: f64,
    pub mean_final: f64,
    pub std_final: f64,
}

/// Logged steps: 0, every multiple of `log_every`, and `n`.
pub fn log_steps(n: usize, log_every: usize) -> Vec<usize> {
    let mut steps: Vec<usize> = (0..=n).step_by(log_every).collect();
    if steps.last() != Some(&n) {
        steps.push(n);
    }
    steps
}

/// Evaluates one optimizer on one instance from `theta0`.
pub fn eval_instance(
    optimizer: &EvalOptimizer,
    inst: &mut OptimizeeInstance,
    theta0: &[f64],
    n_eval: usize,
    log_every: usize,
    seed: u64,
) -> SeedCurve {
    let logged = log_steps(n_eval, log_every);
    let mut points = vec![(0, inst.loss(theta0, &Batch::Full))];
    let mut full_diverged = None;
    let initial = points[0].1;
    // The observer needs the instance while the rollout mutates its batch
    // stream, so losses are computed on a clone that shares the data.
    let probe = inst.clone();
    let inst_loss = |theta: &[f64]| probe.loss(theta, &Batch::Full);
    let mut observe = |v: crate::trajectory::StepView<'_>| {
        if full_diverged.is_some() || logged.binary_search(&v.t).is_err() {
            return;
        }
        let loss = inst_loss(v.theta);
        if is_diverged(loss, initial) {
            full_diverged = Some(v.t);
        } else {
            points.push((v.t, loss));
        }
    };
    let (_, diverged_at) = match optimizer {
        EvalOptimizer::Learned(phi) => {
            let mut rule = EagerL2O::new(phi, &L2OState::zeros(theta0.len(), phi.hidden()));
            stream_rollout(&mut rule, inst, theta0, n_eval, &mut observe)
        }
        EvalOptimizer::Teacher(kind) => {
            let mut rule = Teacher::new(*kind, theta0.len());
            stream_rollout(&mut rule, inst, theta0, n_eval, &mut observe)
        }
    };
    let diverged_at = match (diverged_at, full_diverged) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    if let Some(t) = diverged_at {
        points.retain(|p| p.0 < t);
    }
    SeedCurve {
        seed,
        points,
        diverged_at,
    }
}

fn eval_seed(cfg: &EvalConfig, s: u64) -> Result<SeedCurve, EvalError> {
    let mut inst = sample_instance(&cfg.optimizee, seed::derive(s, "eval-instance", 0))?;
    inst.reseed_batches(seed::derive(s, "eval-batches", 0));
    let theta0 = init_params(&inst, seed::derive(s, "eval-theta0", 0));
    Ok(eval_instance(
        &cfg.optimizer,
        &mut inst,
        &theta0,
        cfg.n_eval,
        cfg.log_every,
        s,
    ))
}

pub fn run_eval(cfg: &EvalConfig, exec: Exec) -> Result<EvalReport, EvalError> {
    cfg.validate()?;
    let curves = exec
        .map(cfg.seeds.len(), |i| eval_seed(cfg, cfg.seeds[i]))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::from_curves(
        cfg.label.clone(),
        cfg.optimizee.name().to_string(),
        cfg.n_eval,
        curves,
    ))
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

impl EvalReport {
    pub fn from_curves(
        label: String,
        optimizee: String,
        n_eval: usize,
        curves: Vec<SeedCurve>,
    ) -> Self {
        let steps: Vec<usize> = curves
            .iter()
            .max_by_key(|c| c.points.len())
            .map(|c| c.points.iter().map(|p| p.0).collect())
            .unwrap_or_default();
        let aggregate = steps
            .iter()
            .enumerate()
            .map(|(k, &step)| {
                let xs: Vec<f64> = curves
                    .iter()
                    .filter_map(|c| c.points.get(k).map(|p| p.1))
                    .collect();
                let (mean, std) = mean_std(&xs);
                StepStats {
                    step,
                    alive: xs.len(),
                    mean,
                    std,
                }
            })
            .collect();
        let finals: Vec<f64> = curves.iter().filter_map(SeedCurve::final_loss).collect();
        let (mean_final, std_final) = mean_std(&finals);
        Self {
            label,
            optimizee,
            n_eval,
            aggregate,
            median_final: median(&finals),
            mean_final,
            std_final,
            curves,
        }
    }

    pub fn divergence_rate(&self) -> f64 {
        let d = self
            .curves
            .iter()
            .filter(|c| c.diverged_at.is_some())
            .count();
        d as f64 / self.curves.len() as f64
    }

    /// Trapezoid area under `ln(mean loss)` over steps.
    pub fn log_auc(&self) -> f64 {
        self.aggregate
            .windows(2)
            .map(|w| {
                let a = w[0].mean.max(f64::MIN_POSITIVE).ln();
                let b = w[1].mean.max(f64::MIN_POSITIVE).ln();
                (w[1].step - w[0].step) as f64 * 0.5 * (a + b)
            })
            .sum()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.curves.iter().map(|c| c.seed).collect()
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from("step,seed,loss\n");
        for c in &self.curves {
            for (step, loss) in &c.points {
                s.push_str(&format!("{step},{},{loss}\n", c.seed));
            }
        }
        s
    }

    pub fn summary_row(&self) -> SummaryRow {
        SummaryRow {
            optimizer: self.label.clone(),
            median_final: self.median_final,
            mean_final: self.mean_final,
            std_final: self.std_final,
            divergence_rate: self.divergence_rate(),
            log_auc: self.log_auc(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub optimizer: String,
    pub median_final: f64,
    pub mean_final: f64,
    pub std_final: f64,
    pub divergence_rate: f64,
    pub log_auc: f64,
}

pub const SUMMARY_HEADER: &str =
    "optimizer,median_final,mean_final,std_final,divergence_rate,log_auc";

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.optimizer, r.median_final, r.mean_final, r.std_final, r.divergence_rate, r.log_auc
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<SummaryRow>,
    /// Per row: wins on median final loss, divergence rate, log AUC.
    /// Ties share the win.
    pub winners: Vec<[bool; 3]>,
}

pub fn compare(reports: &[EvalReport]) -> Result<Comparison, EvalError> {
    let first = reports.first().ok_or(EvalError::NoSeeds)?;
    if reports.iter().any(|r| {
        r.optimizee != first.optimizee || r.n_eval != first.n_eval || r.seeds() != first.seeds()
    }) {
        return Err(EvalError::MismatchedReports);
    }
    let rows: Vec<SummaryRow> = reports.iter().map(EvalReport::summary_row).collect();
    let keys: [fn(&SummaryRow) -> f64; 3] =
        [|r| r.median_final, |r| r.divergence_rate, |r| r.log_auc];
    let best: Vec<f64> = keys
        .iter()
        .map(|k| {
            rows.iter()
                .map(k)
                .filter(|x| !x.is_nan())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let winners = rows
        .iter()
        .map(|r| std::array::from_fn(|j| keys[j](r) == best[j]))
        .collect();
    Ok(Comparison { rows, winners })
}

impl Comparison {
    /// The summary rows as CSV.
    pub fn csv(&self) -> String {
        summary_csv(&self.rows)
    }

    /// Plain-text table with `*` on each column's winner.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<24} {:>16} {:>10} {:>16}\n",
            "optimizer", "median_final", "div_rate", "log_auc"
        );
        for (r, w) in self.rows.iter().zip(&self.winners) {
            let mark = |b: bool| if b { "*" } else { " " };
            s.push_str(&format!(
                "{:<24} {:>15.6e}{} {:>9.3}{} {:>15.4}{}\n",
                r.optimizer,
                r.median_final,
                mark(w[0]),
                r.divergence_rate,
                mark(w[1]),
                r.log_auc,
                mark(w[2])
            ));
        }
        s
    }
}
