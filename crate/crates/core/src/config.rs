//! Run configuration: a flat `key = value` file plus command-line
//! overrides on top of profile defaults.
//!
//! Lines are UTF-8, `#` starts a comment, blank lines are ignored. Keys may
//! appear once per source. Command-line overrides are applied after the
//! file and are reported as line 0 in errors.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::curriculum::CurriculumConfig;
use crate::error::{ConfigError, CurriculumError};
use crate::imitation::{ImitationConfig, SelfImprovingSchedule};
use crate::meta::{TrainConfig, DEFAULT_VALID_PENALTY};
use crate::optimizee::{Family, OptimizeeSpec};
use crate::teachers::TeacherKind;

macro_rules! keyword_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!(
                        "expected one of {}",
                        [$($text),+].join(", ")
                    )),
                }
            }
        }
    };
}

keyword_enum!(Command {
    Train => "train",
    Eval => "eval",
    Compare => "compare",
    Gradcheck => "gradcheck",
});

keyword_enum!(Mode {
    Vanilla => "vanilla",
    Aug => "aug",
    Cl => "cl",
    Il => "il",
    ClIl => "cl-il",
    SelfImproving => "self-improving",
});

keyword_enum!(Profile {
    Desk => "desk",
    Paper => "paper",
});

keyword_enum!(OptimizeeKind {
    Quadratic => "quadratic",
    Logistic => "logistic",
    TinyMlp => "tiny-mlp",
    Mnist => "mnist",
});

impl Mode {
    pub fn uses_curriculum(self) -> bool {
        matches!(self, Mode::Cl | Mode::ClIl)
    }
}

/// What `eval` runs, or one entry of a `compare` list.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// The checkpoint given by the `checkpoint` key.
    Learned,
    Teacher(TeacherKind),
    /// A named checkpoint, written `label:path`.
    Checkpoint {
        label: String,
        path: PathBuf,
    },
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Learned => f.write_str("l2o"),
            Target::Teacher(k) => write!(f, "{k}"),
            Target::Checkpoint { label, path } => write!(f, "{label}:{}", path.display()),
        }
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "l2o" {
            return Ok(Target::Learned);
        }
        if let Some((label, path)) = s.split_once(':') {
            if label.is_empty() || path.is_empty() {
                return Err(format!("`{s}`: expected `label:path`"));
            }
            return Ok(Target::Checkpoint {
                label: label.to_string(),
                path: PathBuf::from(path),
            });
        }
        s.parse::<TeacherKind>().map(Target::Teacher)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub mode: Option<Mode>,
    pub profile: Profile,
    pub seed: u64,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub parallel: bool,

    pub optimizee: OptimizeeKind,
    pub quadratic_dim: usize,
    pub mnist_limit: Option<usize>,
    pub data_root: Option<PathBuf>,
    pub batch_size: usize,
    pub init_std: f64,

    pub hidden: usize,
    pub meta_lr: f64,
    pub segment: usize,
    pub train_pool: usize,
    pub valid_count: usize,
    pub valid_penalty: f64,
    pub grad_clip: Option<f64>,
    /// Training horizon of the fixed-horizon modes.
    pub n_train: usize,
    /// Epochs of the fixed-horizon modes.
    pub epochs: u64,

    pub curriculum: CurriculumConfig,

    pub r: f64,
    pub teachers: Vec<TeacherKind>,
    pub si_anneal: u64,
    /// Starting probability of each teacher; `None` is `1/(k+1)`.
    pub si_initial: Option<f64>,

    pub n_eval: usize,
    pub eval_seeds: Vec<u64>,
    pub log_every: usize,
    pub optimizer: Target,
    pub compare: Vec<Target>,
}

/// One `key = value` occurrence with the line it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub const KEYS: &[&str] = &[
    "command",
    "mode",
    "profile",
    "seed",
    "out",
    "checkpoint",
    "parallel",
    "optimizee",
    "quadratic_dim",
    "mnist_limit",
    "data_root",
    "batch_size",
    "init_std",
    "hidden",
    "meta_lr",
    "segment",
    "train_pool",
    "valid_count",
    "valid_penalty",
    "grad_clip",
    "n_train",
    "epochs",
    "ladder",
    "n_period",
    "t_period",
    "max_periods",
    "r",
    "teachers",
    "si_anneal",
    "si_initial",
    "n_eval",
    "eval_seeds",
    "log_every",
    "optimizer",
    "compare",
];

/// Splits text into entries. Rejects malformed lines, unknown keys and
/// keys repeated within the text.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut entries: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or(ConfigError::Syntax { line })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(ConfigError::Syntax { line });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                key: key.to_string(),
                line,
            });
        }
        if value.is_empty() {
            return Err(bad(key, line, "empty value"));
        }
        if entries.iter().any(|e| e.key == key) {
            return Err(bad(key, line, "duplicate key"));
        }
        entries.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line,
        });
    }
    Ok(entries)
}

fn bad(key: &str, line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        line,
        message: message.into(),
    }
}

fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

fn parse_optional<T: FromStr>(value: &str) -> Result<Option<T>, String>
where
    T::Err: fmt::Display,
{
    if value == "none" {
        Ok(None)
    } else {
        value.parse().map(Some).map_err(|e: T::Err| e.to_string())
    }
}

fn positive(v: usize, what: &str) -> Result<usize, String> {
    if v == 0 {
        Err(format!("{what} must be ≥ 1"))
    } else {
        Ok(v)
    }
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn opt<T: fmt::Display>(x: &Option<T>) -> String {
    x.as_ref()
        .map_or_else(|| "none".to_string(), ToString::to_string)
}

impl RunConfig {
    /// Defaults for a profile and mode.
    pub fn defaults(profile: Profile, mode: Option<Mode>) -> Self {
        let aug = mode == Some(Mode::Aug);
        match profile {
            Profile::Desk => Self {
                command: Command::Train,
                mode,
                profile,
                seed: 0,
                out: PathBuf::from("runs"),
                checkpoint: None,
                parallel: true,
                optimizee: OptimizeeKind::TinyMlp,
                quadratic_dim: 10,
                mnist_limit: None,
                data_root: None,
                batch_size: 128,
                init_std: 0.01,
                hidden: 20,
                meta_lr: 1e-3,
                segment: 20,
                train_pool: 8,
                valid_count: 5,
                valid_penalty: DEFAULT_VALID_PENALTY,
                grad_clip: None,
                n_train: if aug { 100 } else { 20 },
                epochs: if aug { 500 } else { 300 },
                curriculum: CurriculumConfig::desk(),
                r: 0.3,
                teachers: TeacherKind::default_ensemble(),
                si_anneal: 100,
                si_initial: None,
                n_eval: 2000,
                eval_seeds: (0..10).collect(),
                log_every: 10,
                optimizer: Target::Learned,
                compare: Vec::new(),
            },
            Profile::Paper => Self {
                optimizee: OptimizeeKind::Mnist,
                n_train: if aug { 1000 } else { 100 },
                epochs: 5000,
                curriculum: CurriculumConfig::paper(),
                n_eval: 10_000,
                log_every: 50,
                ..Self::defaults(Profile::Desk, mode)
            }
            .with_profile(profile),
        }
    }

    fn with_profile(mut self, profile: Profile) -> Self {
        self.profile = profile;
        self
    }

    /// Builds a config from file entries and override entries (applied
    /// second). `profile` and `mode` are resolved first since they pick
    /// the defaults.
    pub fn from_entries(file: &[Entry], overrides: &[Entry]) -> Result<Self, ConfigError> {
        let all: Vec<&Entry> = file.iter().chain(overrides).collect();
        let lookup = |key: &str| all.iter().rev().find(|e| e.key == key).copied();
        let profile = match lookup("profile") {
            Some(e) => e.value.parse().map_err(|m| bad("profile", e.line, m))?,
            None => Profile::Desk,
        };
        let mode = match lookup("mode") {
            Some(e) => Some(e.value.parse().map_err(|m| bad("mode", e.line, m))?),
            None => None,
        };
        let mut cfg = Self::defaults(profile, mode);
        for e in all {
            cfg.set(&e.key, &e.value)
                .map_err(|m| bad(&e.key, e.line, m))?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_entries(&parse_entries(text)?, &[])
    }

    /// Assigns one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: fmt::Display,
        {
            v.parse().map_err(|e: T::Err| format!("`{v}`: {e}"))
        }
        match key {
            "command" => self.command = value.parse()?,
            "mode" => self.mode = Some(value.parse()?),
            "profile" => self.profile = value.parse()?,
            "seed" => self.seed = num(value)?,
            "out" => self.out = PathBuf::from(value),
            "checkpoint" => self.checkpoint = parse_optional(value)?,
            "parallel" => self.parallel = num(value)?,
            "optimizee" => self.optimizee = value.parse()?,
            "quadratic_dim" => self.quadratic_dim = positive(num(value)?, key)?,
            "mnist_limit" => self.mnist_limit = parse_optional(value)?,
            "data_root" => self.data_root = parse_optional(value)?,
            "batch_size" => self.batch_size = positive(num(value)?, key)?,
            "init_std" => self.init_std = num(value)?,
            "hidden" => self.hidden = positive(num(value)?, key)?,
            "meta_lr" => self.meta_lr = num(value)?,
            "segment" => self.segment = positive(num(value)?, key)?,
            "train_pool" => self.train_pool = positive(num(value)?, key)?,
            "valid_count" => self.valid_count = positive(num(value)?, key)?,
            "valid_penalty" => self.valid_penalty = num(value)?,
            "grad_clip" => self.grad_clip = parse_optional(value)?,
            "n_train" => self.n_train = positive(num(value)?, key)?,
            "epochs" => self.epochs = num(value)?,
            "ladder" => self.curriculum.ladder = parse_list(value)?,
            "n_period" => {
                let n: usize = num(value)?;
                if n == 0 {
                    return Err(CurriculumError::NPeriod.to_string());
                }
                self.curriculum.n_period = n;
            }
            "t_period" => {
                let n: usize = num(value)?;
                if n == 0 {
                    return Err(CurriculumError::TPeriod.to_string());
                }
                self.curriculum.t_period = n;
            }
            "max_periods" => self.curriculum.max_periods = parse_optional(value)?,
            "r" => self.r = num(value)?,
            "teachers" => self.teachers = parse_list(value)?,
            "si_anneal" => self.si_anneal = num(value)?,
            "si_initial" => {
                self.si_initial = if value == "uniform" {
                    None
                } else {
                    Some(num(value)?)
                };
            }
            "n_eval" => self.n_eval = positive(num(value)?, key)?,
            "eval_seeds" => self.eval_seeds = parse_list(value)?,
            "log_every" => self.log_every = positive(num(value)?, key)?,
            "optimizer" => self.optimizer = value.parse()?,
            "compare" => self.compare = parse_list(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Cross-key checks after all values are in.
    pub fn check(&self) -> Result<(), ConfigError> {
        self.curriculum
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(ConfigError::Invalid)?;
        self.imitation_config()
            .validate()
            .map_err(ConfigError::Invalid)?;
        self.si_schedule()
            .validate()
            .map_err(ConfigError::Invalid)?;
        if self.command == Command::Train && self.mode.is_none() {
            return Err(ConfigError::Missing { key: "mode".into() });
        }
        if self.command == Command::Compare && self.compare.is_empty() {
            return Err(ConfigError::Missing {
                key: "compare".into(),
            });
        }
        if self.eval_seeds.is_empty() {
            return Err(ConfigError::Invalid("eval_seeds must not be empty".into()));
        }
        Ok(())
    }

    pub fn optimizee_spec(&self) -> OptimizeeSpec {
        let mut spec = match self.optimizee {
            OptimizeeKind::Quadratic => OptimizeeSpec::quadratic(self.quadratic_dim),
            OptimizeeKind::Logistic => OptimizeeSpec::logistic_blobs(),
            OptimizeeKind::TinyMlp => OptimizeeSpec::tiny_mlp(),
            OptimizeeKind::Mnist => OptimizeeSpec::mnist_mlp(self.data_root.clone()),
        };
        if let Family::MnistMlp { limit, .. } = &mut spec.family {
            *limit = self.mnist_limit;
        }
        if !matches!(spec.family, Family::Quadratic { .. }) {
            spec.batch_size = self.batch_size;
        }
        spec.init_std = self.init_std;
        spec
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            optimizee: self.optimizee_spec(),
            hidden: self.hidden,
            meta_lr: self.meta_lr,
            segment: self.segment,
            train_pool: self.train_pool,
            valid_count: self.valid_count,
            valid_penalty: self.valid_penalty,
            grad_clip: self.grad_clip,
        }
    }

    pub fn imitation_config(&self) -> ImitationConfig {
        ImitationConfig::new(self.r, self.teachers.clone(), self.epochs)
    }

    pub fn si_schedule(&self) -> SelfImprovingSchedule {
        let mut s = SelfImprovingSchedule::uniform(self.teachers.clone(), self.si_anneal);
        if let Some(p) = self.si_initial {
            s.initial = p;
        }
        s
    }

    /// Every key in a fixed order; parsing the result gives back `self`.
    pub fn to_text(&self) -> String {
        let mode = self.mode.map(|m| m.to_string());
        let pairs: Vec<(&str, String)> = vec![
            ("command", self.command.to_string()),
            ("profile", self.profile.to_string()),
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            (
                "checkpoint",
                opt(&self.checkpoint.as_ref().map(|p| p.display())),
            ),
            ("parallel", self.parallel.to_string()),
            ("optimizee", self.optimizee.to_string()),
            ("quadratic_dim", self.quadratic_dim.to_string()),
            ("mnist_limit", opt(&self.mnist_limit)),
            (
                "data_root",
                opt(&self.data_root.as_ref().map(|p| p.display())),
            ),
            ("batch_size", self.batch_size.to_string()),
            ("init_std", self.init_std.to_string()),
            ("hidden", self.hidden.to_string()),
            ("meta_lr", self.meta_lr.to_string()),
            ("segment", self.segment.to_string()),
            ("train_pool", self.train_pool.to_string()),
            ("valid_count", self.valid_count.to_string()),
            ("valid_penalty", self.valid_penalty.to_string()),
            ("grad_clip", opt(&self.grad_clip)),
            ("n_train", self.n_train.to_string()),
            ("epochs", self.epochs.to_string()),
            ("ladder", join(&self.curriculum.ladder)),
            ("n_period", self.curriculum.n_period.to_string()),
            ("t_period", self.curriculum.t_period.to_string()),
            ("max_periods", opt(&self.curriculum.max_periods)),
            ("r", self.r.to_string()),
            ("teachers", join(&self.teachers)),
            ("si_anneal", self.si_anneal.to_string()),
            (
                "si_initial",
                self.si_initial
                    .map_or_else(|| "uniform".to_string(), |p| p.to_string()),
            ),
            ("n_eval", self.n_eval.to_string()),
            ("eval_seeds", join(&self.eval_seeds)),
            ("log_every", self.log_every.to_string()),
            ("optimizer", self.optimizer.to_string()),
        ];
        let mut s = String::new();
        if let Some(m) = mode {
            s.push_str(&format!("mode = {m}\n"));
        }
        for (k, v) in pairs {
            s.push_str(&format!("{k} = {v}\n"));
        }
        if !self.compare.is_empty() {
            s.push_str(&format!("compare = {}\n", join(&self.compare)));
        }
        s
    }
}
