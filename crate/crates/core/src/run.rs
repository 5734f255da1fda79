//! Executes a [`RunConfig`]: trains, evaluates, compares or runs the
//! gradient checks, writing artifacts and a manifest into `out`.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::checks;
use crate::config::{Command, Mode, RunConfig, Target};
use crate::curriculum::{curriculum_train, trace_csv, CurriculumRunError};
use crate::error::{CheckpointError, ConfigError, EvalError, OptimizeeError};
use crate::eval::{compare, run_eval, EvalConfig, EvalOptimizer, EvalReport};
use crate::exec::Exec;
use crate::l2o::{self, init_l2o, L2OParams};
use crate::meta::{episode_csv, EpisodeBody, EpisodeRecord, Trainer};
use crate::seed;

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("checkpoint required")]
    CheckpointRequired,
    #[error("mode `{mode}` does not apply to command `{command}`")]
    ModeMismatch { mode: Mode, command: Command },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Optimizee(#[from] OptimizeeError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumRunError),
    #[error("gradient check failed: {0}")]
    Gradcheck(String),
}

/// Files written by a run, relative to `out`, with their SHA-256.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub command: Command,
    pub artifacts: Vec<(String, String)>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "config_sha256 = {}\nseed = {}\ncommand = {}\n",
            self.config_hash, self.seed, self.command
        );
        for (path, hash) in &self.artifacts {
            s.push_str(&format!("artifact = {path} {hash}\n"));
        }
        s
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Checks that every artifact listed in `out/manifest.txt` exists with
/// the recorded hash. Returns the number of artifacts checked.
pub fn verify_manifest(out: &Path) -> Result<usize, String> {
    let text = fs::read_to_string(out.join(MANIFEST)).map_err(|e| e.to_string())?;
    let mut n = 0;
    for line in text.lines() {
        let Some(rest) = line.strip_prefix("artifact = ") else {
            continue;
        };
        let (path, hash) = rest
            .rsplit_once(' ')
            .ok_or_else(|| format!("malformed line `{line}`"))?;
        let bytes = fs::read(out.join(path)).map_err(|e| format!("{path}: {e}"))?;
        if sha256_hex(&bytes) != hash {
            return Err(format!("{path}: hash mismatch"));
        }
        n += 1;
    }
    Ok(n)
}

struct Writer {
    out: PathBuf,
    artifacts: Vec<(String, String)>,
}

impl Writer {
    fn new(out: &Path) -> Result<Self, RunError> {
        fs::create_dir_all(out).map_err(|source| RunError::Io {
            path: out.to_path_buf(),
            source,
        })?;
        Ok(Self {
            out: out.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), RunError> {
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(|source| RunError::Io { path, source })?;
        self.artifacts.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    fn finish(self, cfg: &RunConfig) -> Result<Manifest, RunError> {
        let manifest = Manifest {
            config_hash: sha256_hex(cfg.to_text().as_bytes()),
            seed: cfg.seed,
            command: cfg.command,
            artifacts: self.artifacts,
        };
        let path = self.out.join(MANIFEST);
        fs::write(&path, manifest.to_text()).map_err(|source| RunError::Io { path, source })?;
        Ok(manifest)
    }
}

fn exec(cfg: &RunConfig) -> Exec {
    if cfg.parallel {
        Exec::default()
    } else {
        Exec::Sequential
    }
}

/// What a training run produced.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub phi: L2OParams,
    pub episodes: Vec<EpisodeRecord>,
    /// Key-value lines describing the run (stop reason, iteration counts).
    pub summary: Vec<(String, String)>,
    pub trace_csv: Option<String>,
}

pub fn initial_phi(cfg: &RunConfig) -> L2OParams {
    init_l2o(seed::derive(cfg.seed, "phi0", 0), cfg.hidden)
}

/// Trains according to `cfg.mode` without touching the filesystem.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome, RunError> {
    let mode = cfg
        .mode
        .ok_or(ConfigError::Missing { key: "mode".into() })?;
    let tc = cfg.train_config();
    let mut phi = initial_phi(cfg);
    let body = match mode {
        Mode::Vanilla | Mode::Aug | Mode::Cl => EpisodeBody::Plain,
        Mode::Il | Mode::ClIl => cfg.imitation_config().body(cfg.seed),
        Mode::SelfImproving => EpisodeBody::SelfImproving(cfg.si_schedule()),
    };
    if mode.uses_curriculum() {
        let run = curriculum_train(&phi, &cfg.curriculum, &tc, body, exec(cfg))?;
        let o = &run.outcome;
        let (best_stage, best_period) = o.best_at.map_or((-1, -1), |(s, p)| (s as i64, p as i64));
        let summary = vec![
            ("mode".into(), mode.to_string()),
            ("stop".into(), o.stop.to_string()),
            ("best_stage".into(), best_stage.to_string()),
            ("best_period".into(), best_period.to_string()),
            ("epochs_total".into(), o.epochs_total.to_string()),
            ("iterations_total".into(), o.iterations_total.to_string()),
            (
                "iterations_at_best".into(),
                o.iterations_at_best.to_string(),
            ),
            (
                "iterations_through_best_stage".into(),
                o.iterations_through_best_stage().to_string(),
            ),
        ];
        return Ok(TrainOutcome {
            phi: o.best.clone(),
            trace_csv: Some(trace_csv(&o.trace)),
            episodes: run.episodes,
            summary,
        });
    }
    let mut trainer = Trainer::new(tc, phi.num_params(), body);
    for _ in 0..cfg.epochs {
        trainer.run_epoch(&mut phi, cfg.n_train)?;
    }
    let iterations = cfg.epochs * cfg.n_train as u64;
    let summary = vec![
        ("mode".into(), mode.to_string()),
        ("epochs_total".into(), cfg.epochs.to_string()),
        ("iterations_total".into(), iterations.to_string()),
    ];
    Ok(TrainOutcome {
        phi,
        episodes: trainer.log,
        summary,
        trace_csv: None,
    })
}

fn load_checkpoint(path: &Path) -> Result<L2OParams, RunError> {
    Ok(l2o::load(path)?)
}

fn eval_config(cfg: &RunConfig, label: String, optimizer: EvalOptimizer) -> EvalConfig {
    EvalConfig {
        label,
        optimizer,
        optimizee: cfg.optimizee_spec(),
        n_eval: cfg.n_eval,
        seeds: cfg.eval_seeds.clone(),
        log_every: cfg.log_every,
    }
}

fn resolve(cfg: &RunConfig, target: &Target) -> Result<(String, EvalOptimizer), RunError> {
    Ok(match target {
        Target::Learned => {
            let path = cfg
                .checkpoint
                .as_ref()
                .ok_or(RunError::CheckpointRequired)?;
            let label = cfg
                .mode
                .map_or_else(|| "l2o".to_string(), |m| m.to_string());
            (label, EvalOptimizer::Learned(load_checkpoint(path)?))
        }
        Target::Checkpoint { label, path } => (
            label.clone(),
            EvalOptimizer::Learned(load_checkpoint(path)?),
        ),
        Target::Teacher(k) => (k.to_string(), EvalOptimizer::Teacher(*k)),
    })
}

pub fn evaluate(cfg: &RunConfig, target: &Target) -> Result<EvalReport, RunError> {
    let (label, optimizer) = resolve(cfg, target)?;
    Ok(run_eval(&eval_config(cfg, label, optimizer), exec(cfg))?)
}

fn kv_text(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Runs `cfg.command`, writing artifacts and the manifest into `cfg.out`.
pub fn dispatch(cfg: &RunConfig) -> Result<Manifest, RunError> {
    cfg.check()?;
    match (cfg.command, cfg.mode) {
        (Command::Gradcheck, Some(mode)) => {
            return Err(RunError::ModeMismatch {
                mode,
                command: cfg.command,
            })
        }
        (Command::Eval | Command::Compare, _)
        | (Command::Train, Some(_))
        | (Command::Gradcheck, None) => {}
        (Command::Train, None) => return Err(ConfigError::Missing { key: "mode".into() }.into()),
    }
    // Resolve checkpoints before creating the output directory so a bad
    // invocation leaves nothing behind.
    if cfg.command == Command::Eval {
        resolve(cfg, &cfg.optimizer)?;
    }
    let mut w = Writer::new(&cfg.out)?;
    w.write("config.txt", cfg.to_text().as_bytes())?;
    match cfg.command {
        Command::Train => {
            let o = train(cfg)?;
            w.write("checkpoint.l2o", &l2o::encode(&o.phi))?;
            w.write("episodes.csv", episode_csv(&o.episodes).as_bytes())?;
            if let Some(trace) = &o.trace_csv {
                w.write("trace.csv", trace.as_bytes())?;
            }
            w.write("summary.txt", kv_text(&o.summary).as_bytes())?;
        }
        Command::Eval => {
            let report = evaluate(cfg, &cfg.optimizer)?;
            w.write("curves.csv", report.curve_csv().as_bytes())?;
            w.write(
                "summary.csv",
                crate::eval::summary_csv(&[report.summary_row()]).as_bytes(),
            )?;
        }
        Command::Compare => {
            let reports = cfg
                .compare
                .iter()
                .map(|t| evaluate(cfg, t))
                .collect::<Result<Vec<_>, _>>()?;
            let table = compare(&reports)?;
            for r in &reports {
                w.write(
                    &format!("curves_{}.csv", file_label(&r.label)),
                    r.curve_csv().as_bytes(),
                )?;
            }
            w.write("summary.csv", table.csv().as_bytes())?;
            w.write("comparison.txt", table.table().as_bytes())?;
        }
        Command::Gradcheck => {
            let results =
                checks::run_all(cfg.seed).map_err(|e| RunError::Gradcheck(e.to_string()))?;
            let mut csv = String::from("check,max_rel_err\n");
            for r in &results {
                csv.push_str(&format!("{},{:e}\n", r.name, r.max_rel_err));
            }
            w.write("gradcheck.csv", csv.as_bytes())?;
            let failed: Vec<_> = results
                .iter()
                .filter(|r| !r.passed())
                .map(|r| r.name)
                .collect();
            if !failed.is_empty() {
                w.finish(cfg)?;
                return Err(RunError::Gradcheck(failed.join(", ")));
            }
        }
    }
    w.finish(cfg)
}

fn file_label(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
