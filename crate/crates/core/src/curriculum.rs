//! Progressive-unrolling curriculum.
//!
//! Training runs in stages over an increasing ladder of horizons. Each stage
//! trains in periods of `t_period` epochs and validates after every period
//! at a longer horizon than it trains on. A stage keeps going while it is
//! still inside its minimum number of periods or its last period set a new
//! best. Entering a stage resets the working model to the best snapshot
//! and re-scores that snapshot at the new validation horizon to get the
//! stage's baseline. A stage in which no period beats the baseline ends
//! training.
//!
//! The scheduler only talks to a [`StageDriver`], so it can be exercised
//! with scripted validation losses.

use std::fmt;

use crate::error::{CurriculumError, OptimizeeError};
use crate::exec::Exec;
use crate::l2o::L2OParams;
use crate::meta::{validate, EpisodeBody, EpisodeRecord, TrainConfig, Trainer};

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumConfig {
    pub ladder: Vec<usize>,
    pub n_period: usize,
    pub t_period: usize,
    /// Upper bound on periods per stage. Without it a stage whose
    /// validation loss keeps falling never ends.
    pub max_periods: Option<usize>,
}

impl CurriculumConfig {
    pub fn desk() -> Self {
        Self {
            ladder: vec![20, 40, 100, 200],
            n_period: 3,
            t_period: 25,
            max_periods: Some(4),
        }
    }

    pub fn paper() -> Self {
        Self {
            ladder: vec![100, 200, 500, 1000, 1500, 2000, 2500, 3000],
            n_period: 3,
            t_period: 100,
            max_periods: None,
        }
    }

    pub fn validate(&self) -> Result<(), CurriculumError> {
        if self.ladder.len() < 2 {
            return Err(CurriculumError::LadderTooShort);
        }
        if self.ladder[0] == 0 || self.ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CurriculumError::LadderNotIncreasing);
        }
        if self.n_period == 0 {
            return Err(CurriculumError::NPeriod);
        }
        if self.t_period == 0 {
            return Err(CurriculumError::TPeriod);
        }
        if let Some(m) = self.max_periods {
            if m < self.n_period {
                return Err(CurriculumError::MaxPeriods);
            }
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.ladder.len()
    }
}

/// Validation horizon of stage `i`: the next stage's training horizon, or
/// for the last stage the ladder continued by its final ratio.
pub fn n_valid_for(cc: &CurriculumConfig, i: usize) -> Result<usize, CurriculumError> {
    let l = &cc.ladder;
    if l.len() < 2 {
        return Err(CurriculumError::LadderTooShort);
    }
    if i >= l.len() {
        return Err(CurriculumError::StageOutOfRange(i));
    }
    if i + 1 < l.len() {
        return Ok(l[i + 1]);
    }
    let last = l[l.len() - 1] as f64;
    let prev = l[l.len() - 2] as f64;
    Ok((last * last / prev).round() as usize)
}

/// What the scheduler needs from a trainable model.
pub trait StageDriver {
    type Model: Clone;
    type Error;

    fn train_epoch(&mut self, model: &mut Self::Model, n_train: usize) -> Result<(), Self::Error>;

    fn validate(&mut self, model: &Self::Model, n_valid: usize) -> Result<f64, Self::Error>;

    /// Called before the first period of every stage.
    fn on_stage_start(&mut self, _stage: usize) {}
}

/// One validation event. `period == 0` marks the re-baseline at stage entry.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub stage: usize,
    pub period: usize,
    /// Epochs trained so far in the whole run.
    pub epoch: u64,
    pub n_train: usize,
    pub n_valid: usize,
    pub l_val: f64,
    pub l_min: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// No period of this stage beat its baseline.
    Saturated { stage: usize },
    /// Every stage was trained and the last one was still improving.
    LadderExhausted,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopReason::Saturated { stage } => write!(f, "saturated at stage {stage}"),
            StopReason::LadderExhausted => write!(f, "ladder exhausted"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CurriculumOutcome<M> {
    pub best: M,
    pub trace: Vec<TraceRow>,
    pub stop: StopReason,
    /// Stage and period of the returned snapshot, `None` if nothing ever
    /// improved on the initial model.
    pub best_at: Option<(usize, usize)>,
    pub epochs_total: u64,
    /// `Σ epochs × N_train` over the whole run.
    pub iterations_total: u64,
    /// The same count at the moment the returned snapshot was taken.
    pub iterations_at_best: u64,
    /// `Σ epochs × N_train` of each entered stage.
    pub iterations_per_stage: Vec<u64>,
}

impl<M> CurriculumOutcome<M> {
    /// Iterations of every stage up to and including the one the returned
    /// snapshot came from.
    pub fn iterations_through_best_stage(&self) -> u64 {
        let last = self.best_at.map_or(0, |(s, _)| s + 1);
        self.iterations_per_stage.iter().take(last).sum()
    }
}

pub fn curriculum_run<D: StageDriver>(
    driver: &mut D,
    model0: D::Model,
    cc: &CurriculumConfig,
) -> Result<CurriculumOutcome<D::Model>, D::Error>
where
    D::Error: From<CurriculumError>,
{
    cc.validate()?;
    let mut best = model0.clone();
    let mut current = model0;
    let mut best_at = None;
    let mut trace = Vec::new();
    let mut epochs = 0u64;
    let mut iterations = 0u64;
    let mut iterations_at_best = 0u64;
    let mut l_min = f64::INFINITY;
    let mut stage = 0usize;
    let mut per_stage = Vec::new();

    let stop = loop {
        let n_train = cc.ladder[stage];
        let n_valid = n_valid_for(cc, stage)?;
        driver.on_stage_start(stage);

        let mut n = 1usize;
        let mut stop = true;
        let mut last_improved = false;
        per_stage.push(0u64);
        while n <= cc.n_period || last_improved {
            if cc.max_periods.is_some_and(|m| n > m) {
                break;
            }
            for _ in 0..cc.t_period {
                driver.train_epoch(&mut current, n_train)?;
                epochs += 1;
                iterations += n_train as u64;
                per_stage[stage] += n_train as u64;
            }
            let l_val = driver.validate(&current, n_valid)?;
            last_improved = l_val < l_min;
            if last_improved {
                l_min = l_val;
                best = current.clone();
                best_at = Some((stage, n));
                iterations_at_best = iterations;
                stop = false;
            }
            trace.push(TraceRow {
                stage,
                period: n,
                epoch: epochs,
                n_train,
                n_valid,
                l_val,
                l_min,
                improved: last_improved,
            });
            n += 1;
        }

        if stop {
            break StopReason::Saturated { stage };
        }
        stage += 1;
        if stage == cc.stages() {
            break StopReason::LadderExhausted;
        }
        current = best.clone();
        let n_valid = n_valid_for(cc, stage)?;
        l_min = driver.validate(&best, n_valid)?;
        trace.push(TraceRow {
            stage,
            period: 0,
            epoch: epochs,
            n_train: cc.ladder[stage],
            n_valid,
            l_val: l_min,
            l_min,
            improved: false,
        });
    };

    Ok(CurriculumOutcome {
        best,
        trace,
        stop,
        best_at,
        epochs_total: epochs,
        iterations_total: iterations,
        iterations_at_best,
        iterations_per_stage: per_stage,
    })
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from("stage,period,epoch,n_train,n_valid,l_val,l_min,improved\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.stage, r.period, r.epoch, r.n_train, r.n_valid, r.l_val, r.l_min, r.improved
        ));
    }
    s
}

#[derive(Debug, thiserror::Error)]
pub enum CurriculumRunError {
    #[error(transparent)]
    Config(#[from] CurriculumError),
    #[error(transparent)]
    Optimizee(#[from] OptimizeeError),
}

/// Drives a [`Trainer`] and scores with [`validate`]. The meta-optimizer
/// restarts at every stage because the working φ jumps back to the best
/// snapshot there.
pub struct L2ODriver {
    pub trainer: Trainer,
    pub exec: Exec,
}

impl StageDriver for L2ODriver {
    type Model = L2OParams;
    type Error = CurriculumRunError;

    fn train_epoch(
        &mut self,
        model: &mut L2OParams,
        n_train: usize,
    ) -> Result<(), CurriculumRunError> {
        self.trainer.run_epoch(model, n_train)?;
        Ok(())
    }

    fn validate(&mut self, model: &L2OParams, n_valid: usize) -> Result<f64, CurriculumRunError> {
        Ok(validate(model, n_valid, &self.trainer.config, self.exec)?)
    }

    fn on_stage_start(&mut self, stage: usize) {
        if stage > 0 {
            self.trainer.optimizer.reset();
        }
    }
}

pub struct CurriculumRun {
    pub outcome: CurriculumOutcome<L2OParams>,
    pub episodes: Vec<EpisodeRecord>,
}

/// Curriculum training of a learned optimizer; `body` picks plain,
/// imitation-mixed or self-improving epochs.
pub fn curriculum_train(
    phi0: &L2OParams,
    cc: &CurriculumConfig,
    tc: &TrainConfig,
    body: EpisodeBody,
    exec: Exec,
) -> Result<CurriculumRun, CurriculumRunError> {
    let mut driver = L2ODriver {
        trainer: Trainer::new(tc.clone(), phi0.num_params(), body),
        exec,
    };
    let outcome = curriculum_run(&mut driver, phi0.clone(), cc)?;
    Ok(CurriculumRun {
        outcome,
        episodes: driver.trainer.log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// The model is the number of epochs it has been trained for; validation
    /// pops scripted values and records which model it scored.
    struct Scripted {
        values: Vec<f64>,
        next: usize,
        scored: Vec<(u64, usize)>,
        trained_at: Vec<usize>,
    }

    impl Scripted {
        fn new(values: &[f64]) -> Self {
            Self {
                values: values.to_vec(),
                next: 0,
                scored: Vec::new(),
                trained_at: Vec::new(),
            }
        }
    }

    impl StageDriver for Scripted {
        type Model = u64;
        type Error = CurriculumError;

        fn train_epoch(&mut self, model: &mut u64, n_train: usize) -> Result<(), CurriculumError> {
            *model += 1;
            self.trained_at.push(n_train);
            Ok(())
        }

        fn validate(&mut self, model: &u64, n_valid: usize) -> Result<f64, CurriculumError> {
            let v = self.values[self.next % self.values.len()];
            self.next += 1;
            self.scored.push((*model, n_valid));
            Ok(v)
        }
    }

    fn cfg(
        ladder: &[usize],
        n_period: usize,
        t_period: usize,
        max_periods: Option<usize>,
    ) -> CurriculumConfig {
        CurriculumConfig {
            ladder: ladder.to_vec(),
            n_period,
            t_period,
            max_periods,
        }
    }

    #[test]
    fn n_valid_rule() {
        let cc = cfg(&[100, 200, 500], 3, 100, None);
        assert_eq!(n_valid_for(&cc, 0), Ok(200));
        assert_eq!(n_valid_for(&cc, 1), Ok(500));
        assert_eq!(n_valid_for(&cc, 2), Ok(1250));
        assert_eq!(
            n_valid_for(&cc, 3),
            Err(CurriculumError::StageOutOfRange(3))
        );
        assert_eq!(
            n_valid_for(&cfg(&[100], 3, 100, None), 0),
            Err(CurriculumError::LadderTooShort)
        );
    }

    #[test]
    fn config_checks() {
        assert_eq!(
            cfg(&[20, 20], 3, 1, None).validate(),
            Err(CurriculumError::LadderNotIncreasing)
        );
        assert_eq!(
            cfg(&[20, 40], 0, 1, None).validate(),
            Err(CurriculumError::NPeriod)
        );
        assert_eq!(
            cfg(&[20, 40], 1, 0, None).validate(),
            Err(CurriculumError::TPeriod)
        );
        assert_eq!(
            cfg(&[20, 40], 3, 1, Some(2)).validate(),
            Err(CurriculumError::MaxPeriods)
        );
        assert!(CurriculumConfig::paper().validate().is_ok());
        assert!(CurriculumConfig::desk().validate().is_ok());
    }

    #[test]
    fn saturates_in_second_stage() {
        // Stage 0 improves three times and then stalls. Stage 1 only ties
        // its baseline, which does not count as improvement.
        let mut d = Scripted::new(&[5.0, 4.0, 3.0, 3.5, 10.0, 10.0, 10.0, 10.0]);
        let out = curriculum_run(&mut d, 0, &cfg(&[10, 20, 50], 3, 2, None)).unwrap();
        assert_eq!(out.stop, StopReason::Saturated { stage: 1 });
        assert_eq!(out.best, 6);
        assert_eq!(out.best_at, Some((0, 3)));
        let rows: Vec<_> = out
            .trace
            .iter()
            .map(|r| (r.stage, r.period, r.epoch, r.l_val, r.l_min, r.improved))
            .collect();
        assert_eq!(
            rows,
            vec![
                (0, 1, 2, 5.0, 5.0, true),
                (0, 2, 4, 4.0, 4.0, true),
                (0, 3, 6, 3.0, 3.0, true),
                (0, 4, 8, 3.5, 3.0, false),
                (1, 0, 8, 10.0, 10.0, false),
                (1, 1, 10, 10.0, 10.0, false),
                (1, 2, 12, 10.0, 10.0, false),
                (1, 3, 14, 10.0, 10.0, false),
            ]
        );
        // The re-baseline scores the snapshot, and stage 1 resumes from it.
        assert_eq!(d.scored[4], (6, 50));
        assert_eq!(d.scored[5], (8, 50));
        assert_eq!(out.iterations_total, 8 * 10 + 6 * 20);
        assert_eq!(out.iterations_at_best, 6 * 10);
        assert_eq!(out.iterations_per_stage, vec![80, 120]);
        assert_eq!(out.iterations_through_best_stage(), 80);
    }

    #[test]
    fn always_improving_exhausts_the_ladder() {
        let values: Vec<f64> = (0..100).map(|k| 100.0 - k as f64).collect();
        let mut d = Scripted::new(&values);
        let out = curriculum_run(&mut d, 0, &cfg(&[10, 20], 3, 1, Some(5))).unwrap();
        assert_eq!(out.stop, StopReason::LadderExhausted);
        let periods: Vec<_> = out.trace.iter().map(|r| (r.stage, r.period)).collect();
        assert_eq!(
            periods,
            vec![
                (0, 1),
                (0, 2),
                (0, 3),
                (0, 4),
                (0, 5),
                (1, 0),
                (1, 1),
                (1, 2),
                (1, 3),
                (1, 4),
                (1, 5)
            ]
        );
        assert_eq!(out.best_at, Some((1, 5)));
        assert_eq!(out.best, 10);
        assert_eq!(out.iterations_at_best, out.iterations_total);
        assert_eq!(d.trained_at, [vec![10; 5], vec![20; 5]].concat());
    }

    #[test]
    fn single_period_guard_falls_back_to_snapshot() {
        // 3 improves on +inf, so the loop runs one more period (4, no
        // improvement). The re-baseline 2 is then never beaten.
        let mut d = Scripted::new(&[3.0, 4.0, 2.0, 5.0]);
        let out = curriculum_run(&mut d, 0, &cfg(&[10, 20, 30], 1, 3, None)).unwrap();
        assert_eq!(out.stop, StopReason::Saturated { stage: 1 });
        assert_eq!(out.best, 3);
        assert_eq!(out.best_at, Some((0, 1)));
        assert_eq!(out.trace.len(), 4);
        assert_eq!((out.trace[2].period, out.trace[2].l_min), (0, 2.0));
        assert!(!out.trace[3].improved);
    }

    #[test]
    fn trace_csv_header() {
        let csv = trace_csv(&[]);
        assert_eq!(
            csv,
            "stage,period,epoch,n_train,n_valid,l_val,l_min,improved\n"
        );
    }

    proptest! {
        #[test]
        fn scheduler_invariants(
            values in prop::collection::vec(0u8..6, 1..40),
            ladder_len in 2usize..5,
            n_period in 1usize..4,
            extra in 0usize..4,
        ) {
            let ladder: Vec<usize> = (1..=ladder_len).map(|k| 10 * k).collect();
            let values: Vec<f64> = values.into_iter().map(f64::from).collect();
            let cc = cfg(&ladder, n_period, 2, Some(n_period + extra));
            let mut a = Scripted::new(&values);
            let out = curriculum_run(&mut a, 0, &cc).unwrap();
            let mut b = Scripted::new(&values);
            let again = curriculum_run(&mut b, 0, &cc).unwrap();
            prop_assert_eq!(&out.trace, &again.trace);

            // Training horizons never shrink.
            prop_assert!(a.trained_at.windows(2).all(|w| w[0] <= w[1]));

            for s in 0..cc.stages() {
                let rows: Vec<_> = out.trace.iter().filter(|r| r.stage == s && r.period > 0).collect();
                if rows.is_empty() {
                    continue;
                }
                prop_assert!(rows.len() >= n_period);
                prop_assert!(rows.windows(2).all(|w| w[1].l_min <= w[0].l_min));
            }

            // The snapshot carries the lowest loss seen at its stage.
            if let Some((stage, period)) = out.best_at {
                let row = out.trace.iter().find(|r| r.stage == stage && r.period == period).unwrap();
                prop_assert!(row.improved);
                prop_assert!(out.trace.iter().filter(|r| r.stage == stage).all(|r| r.l_val >= row.l_val));
            }
        }
    }
}
