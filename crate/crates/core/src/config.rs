//! Flat `section.key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown keys and malformed
//! values are rejected with the file and line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::applications::{LandmarkConfig, LandmarkCriterion};
use crate::error::{Error, Result};
use crate::gp::{LevelSpec, ModelConfig, OptimizerConfig, Tau};
use crate::kernels::{Jitter, KernelFamily, NoiseSpec};
use crate::metrics::ElasticOptions;
use crate::preprocess::PreprocessOptions;

/// How the curve or group level is configured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelChoice {
    /// Free when there is more than one curve (or labelled group).
    Auto,
    Absent,
    Free,
    Identity,
}

impl FromStr for LevelChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto" => Ok(Self::Auto),
            "absent" => Ok(Self::Absent),
            "free" => Ok(Self::Free),
            "identity" => Ok(Self::Identity),
            _ => Err(format!("expected auto, absent, free or identity, got `{s}`")),
        }
    }
}

impl LevelChoice {
    fn name(&self) -> &'static str {
        match self {
            Self::Auto => "auto",
            Self::Absent => "absent",
            Self::Free => "free",
            Self::Identity => "identity",
        }
    }

    fn resolve(&self, size: usize, rank: usize) -> LevelSpec {
        match self {
            Self::Auto if size > 1 => LevelSpec::Free { rank },
            Self::Auto | Self::Absent => LevelSpec::Absent,
            Self::Free => LevelSpec::Free { rank },
            Self::Identity => LevelSpec::identity(size),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub input_paths: Vec<PathBuf>,
    pub input_reference: Option<PathBuf>,
    pub input_labels: Vec<i64>,

    pub family: KernelFamily,
    /// `None` means the mean polygon length.
    pub tau: Option<f64>,
    pub rho: Option<f64>,
    pub coords: LevelChoice,
    pub coords_rank: usize,
    pub curves: LevelChoice,
    pub curves_rank: usize,
    pub groups: LevelChoice,
    pub groups_rank: usize,

    pub noise_variance: f64,
    pub noise_shared: bool,
    pub noise_min: f64,
    pub noise_max: f64,
    pub jitter_kind: String,
    pub jitter_value: f64,

    pub preprocess: PreprocessOptions,
    pub template: usize,

    pub restarts: usize,
    pub seed: u64,
    pub annealing: bool,
    pub max_iterations: usize,

    pub grid: usize,

    pub landmarks: LandmarkConfig,

    pub register_grid: Option<usize>,
    pub register_rounds: usize,

    pub ellipse_k: f64,
    pub output_dir: PathBuf,
    pub svg: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let noise = NoiseSpec::default();
        Self {
            input_paths: Vec::new(),
            input_reference: None,
            input_labels: Vec::new(),
            family: KernelFamily::PeriodicMatern32,
            tau: None,
            rho: None,
            coords: LevelChoice::Free,
            coords_rank: 1,
            curves: LevelChoice::Auto,
            curves_rank: 1,
            groups: LevelChoice::Auto,
            groups_rank: 1,
            noise_variance: noise.variance[0],
            noise_shared: noise.shared,
            noise_min: noise.bounds.0,
            noise_max: noise.bounds.1,
            jitter_kind: "constant".into(),
            jitter_value: noise.jitter.constant(),
            preprocess: PreprocessOptions::default(),
            template: 0,
            restarts: OptimizerConfig::default().restarts,
            seed: 0,
            annealing: false,
            max_iterations: OptimizerConfig::default().lbfgs.max_iterations,
            grid: 200,
            landmarks: LandmarkConfig::default(),
            register_grid: None,
            register_rounds: ElasticOptions::default().max_rounds,
            ellipse_k: 1.0,
            output_dir: PathBuf::from("out"),
            svg: true,
        }
    }
}

fn parse_num<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("invalid value `{v}`: {e}"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn parse_auto<T: FromStr>(v: &str) -> std::result::Result<Option<T>, String>
where
    T::Err: std::fmt::Display,
{
    if v == "auto" {
        Ok(None)
    } else {
        parse_num(v).map(Some)
    }
}

fn list(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn show_auto<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), |x| x.to_string())
}

/// `(key, description)` for every accepted key, in output order.
pub const KEYS: &[(&str, &str)] = &[
    ("input.paths", "comma-separated curve files (CSV or JSON collection)"),
    ("input.reference", "curve used to parameterize partial observations"),
    ("input.labels", "comma-separated integer class label per curve"),
    ("model.family", "periodic-rbf, periodic-matern32 or periodic-matern12"),
    ("model.tau", "kernel period; auto uses the mean polygon length"),
    ("model.rho", "length scale; auto fits it"),
    ("model.coords", "coordinate level: free or identity"),
    ("model.coords_rank", "rank of the coordinate factor"),
    ("model.curves", "curve level: auto, absent, free or identity"),
    ("model.curves_rank", "rank of the curve factor"),
    ("model.groups", "group level: auto, absent, free or identity"),
    ("model.groups_rank", "rank of the group factor"),
    ("noise.variance", "initial observation noise variance"),
    ("noise.shared", "one variance for both coordinates"),
    ("noise.min", "lower bound of the noise variance box"),
    ("noise.max", "upper bound of the noise variance box"),
    ("noise.jitter", "constant (kernel offset) or nugget (diagonal)"),
    ("noise.jitter_value", "size of the jitter term"),
    ("preprocess.center", "translate centroids to the origin"),
    ("preprocess.scale", "scale to unit polygon length"),
    ("preprocess.align", "rotation and seed alignment to the template"),
    ("preprocess.template", "index of the template curve"),
    ("optimizer.restarts", "number of likelihood restarts"),
    ("optimizer.seed", "seed for restarts and random draws"),
    ("optimizer.annealing", "simulated annealing before the local search"),
    ("optimizer.max_iterations", "quasi-Newton iteration limit"),
    ("predict.grid", "points on the prediction grid"),
    ("landmarks.p", "number of landmarks"),
    ("landmarks.lambda", "weight of the x deviation in the sequential criterion"),
    ("landmarks.trials", "random subsets tried"),
    ("landmarks.criterion", "imspe or iuea"),
    ("landmarks.candidates", "candidate grid of the sequential criterion"),
    ("landmarks.seed", "seed for subset draws"),
    ("landmarks.p_min", "smallest count in the criterion trace (auto: p)"),
    ("landmarks.p_max", "largest count in the criterion trace (auto: p)"),
    ("register.grid", "registration grid nodes; auto uses the curves as given"),
    ("register.max_rounds", "alternation rounds of the registration"),
    ("plot.ellipse_k", "ellipse semi-axes in standard deviations"),
    ("output.dir", "directory for all outputs"),
    ("output.svg", "write SVG figures"),
];

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key.trim() {
            "input.paths" => self.input_paths = list(v).into_iter().map(PathBuf::from).collect(),
            "input.reference" => self.input_reference = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "input.labels" => {
                self.input_labels = list(v).into_iter().map(parse_num).collect::<std::result::Result<_, _>>()?
            }
            "model.family" => self.family = v.parse().map_err(|e: Error| e.to_string())?,
            "model.tau" => self.tau = parse_auto(v)?,
            "model.rho" => self.rho = parse_auto(v)?,
            "model.coords" => self.coords = v.parse()?,
            "model.coords_rank" => self.coords_rank = parse_num(v)?,
            "model.curves" => self.curves = v.parse()?,
            "model.curves_rank" => self.curves_rank = parse_num(v)?,
            "model.groups" => self.groups = v.parse()?,
            "model.groups_rank" => self.groups_rank = parse_num(v)?,
            "noise.variance" => self.noise_variance = parse_num(v)?,
            "noise.shared" => self.noise_shared = parse_bool(v)?,
            "noise.min" => self.noise_min = parse_num(v)?,
            "noise.max" => self.noise_max = parse_num(v)?,
            "noise.jitter" => {
                if v != "constant" && v != "nugget" {
                    return Err(format!("expected constant or nugget, got `{v}`"));
                }
                self.jitter_kind = v.to_string();
            }
            "noise.jitter_value" => self.jitter_value = parse_num(v)?,
            "preprocess.center" => self.preprocess.center = parse_bool(v)?,
            "preprocess.scale" => self.preprocess.scale = parse_bool(v)?,
            "preprocess.align" => self.preprocess.align = parse_bool(v)?,
            "preprocess.template" => self.template = parse_num(v)?,
            "optimizer.restarts" => self.restarts = parse_num(v)?,
            "optimizer.seed" => self.seed = parse_num(v)?,
            "optimizer.annealing" => self.annealing = parse_bool(v)?,
            "optimizer.max_iterations" => self.max_iterations = parse_num(v)?,
            "predict.grid" => self.grid = parse_num(v)?,
            "landmarks.p" => self.landmarks.p = parse_num(v)?,
            "landmarks.lambda" => self.landmarks.lambda = parse_num(v)?,
            "landmarks.trials" => self.landmarks.n_trials = parse_num(v)?,
            "landmarks.criterion" => {
                self.landmarks.criterion = match v {
                    "imspe" => LandmarkCriterion::Imspe,
                    "iuea" => LandmarkCriterion::Iuea,
                    _ => return Err(format!("expected imspe or iuea, got `{v}`")),
                }
            }
            "landmarks.candidates" => self.landmarks.candidates = parse_num(v)?,
            "landmarks.seed" => self.landmarks.seed = parse_num(v)?,
            "landmarks.p_min" => self.set_range(parse_auto(v)?, true),
            "landmarks.p_max" => self.set_range(parse_auto(v)?, false),
            "register.grid" => self.register_grid = parse_auto(v)?,
            "register.max_rounds" => self.register_rounds = parse_num(v)?,
            "plot.ellipse_k" => self.ellipse_k = parse_num(v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            "output.svg" => self.svg = parse_bool(v)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    fn set_range(&mut self, value: Option<usize>, lower: bool) {
        let (lo, hi) = self.landmarks.p_range.unwrap_or((self.landmarks.p, self.landmarks.p));
        self.landmarks.p_range = match (value, lower) {
            (Some(v), true) => Some((v, hi)),
            (Some(v), false) => Some((lo, v)),
            (None, _) => None,
        };
    }

    /// Current value of `key` as written in a config file.
    pub fn get(&self, key: &str) -> Option<String> {
        let b = |x: bool| x.to_string();
        Some(match key {
            "input.paths" => self.input_paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","),
            "input.reference" => self.input_reference.as_ref().map_or_else(String::new, |p| p.display().to_string()),
            "input.labels" => self.input_labels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(","),
            "model.family" => self.family.name().to_string(),
            "model.tau" => show_auto(&self.tau),
            "model.rho" => show_auto(&self.rho),
            "model.coords" => self.coords.name().to_string(),
            "model.coords_rank" => self.coords_rank.to_string(),
            "model.curves" => self.curves.name().to_string(),
            "model.curves_rank" => self.curves_rank.to_string(),
            "model.groups" => self.groups.name().to_string(),
            "model.groups_rank" => self.groups_rank.to_string(),
            "noise.variance" => self.noise_variance.to_string(),
            "noise.shared" => b(self.noise_shared),
            "noise.min" => self.noise_min.to_string(),
            "noise.max" => self.noise_max.to_string(),
            "noise.jitter" => self.jitter_kind.clone(),
            "noise.jitter_value" => self.jitter_value.to_string(),
            "preprocess.center" => b(self.preprocess.center),
            "preprocess.scale" => b(self.preprocess.scale),
            "preprocess.align" => b(self.preprocess.align),
            "preprocess.template" => self.template.to_string(),
            "optimizer.restarts" => self.restarts.to_string(),
            "optimizer.seed" => self.seed.to_string(),
            "optimizer.annealing" => b(self.annealing),
            "optimizer.max_iterations" => self.max_iterations.to_string(),
            "predict.grid" => self.grid.to_string(),
            "landmarks.p" => self.landmarks.p.to_string(),
            "landmarks.lambda" => self.landmarks.lambda.to_string(),
            "landmarks.trials" => self.landmarks.n_trials.to_string(),
            "landmarks.criterion" => match self.landmarks.criterion {
                LandmarkCriterion::Imspe => "imspe".into(),
                LandmarkCriterion::Iuea => "iuea".into(),
            },
            "landmarks.candidates" => self.landmarks.candidates.to_string(),
            "landmarks.seed" => self.landmarks.seed.to_string(),
            "landmarks.p_min" => show_auto(&self.landmarks.p_range.map(|r| r.0)),
            "landmarks.p_max" => show_auto(&self.landmarks.p_range.map(|r| r.1)),
            "register.grid" => show_auto(&self.register_grid),
            "register.max_rounds" => self.register_rounds.to_string(),
            "plot.ellipse_k" => self.ellipse_k.to_string(),
            "output.dir" => self.output_dir.display().to_string(),
            "output.svg" => b(self.svg),
            _ => return None,
        })
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text, path)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            self.set(k, v).map_err(err)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Every key with its current value and a short description.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, doc) in KEYS {
            let s = key.split('.').next().unwrap_or("");
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = s;
            }
            let _ = writeln!(out, "# {doc}");
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }

    /// Checks that numeric settings lie in their admissible ranges.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.noise_min > 0.0 && self.noise_min <= self.noise_max) {
            return bad(format!("noise box [{}, {}] is empty or non-positive", self.noise_min, self.noise_max));
        }
        if !(self.noise_min..=self.noise_max).contains(&self.noise_variance) {
            return bad(format!(
                "noise variance in box: {} outside [{}, {}]",
                self.noise_variance, self.noise_min, self.noise_max
            ));
        }
        if !(self.jitter_value >= 0.0 && self.jitter_value.is_finite()) {
            return bad(format!("jitter value {} must be nonnegative", self.jitter_value));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0) {
                return bad(format!("tau {t} must be positive"));
            }
        }
        if let Some(r) = self.rho {
            if !(r > 0.0) {
                return bad(format!("rho {r} must be positive"));
            }
        }
        if self.coords == LevelChoice::Absent || self.coords == LevelChoice::Auto {
            return bad("the coordinate level must be free or identity".into());
        }
        if self.coords_rank == 0 || self.curves_rank == 0 || self.groups_rank == 0 {
            return bad("level ranks must be positive".into());
        }
        if self.restarts == 0 {
            return bad("at least one restart is required".into());
        }
        if self.grid < 3 {
            return bad(format!("prediction grid {} must have at least 3 points", self.grid));
        }
        if !(self.ellipse_k >= 0.0) {
            return bad(format!("ellipse scale {} must be nonnegative", self.ellipse_k));
        }
        self.landmarks.validate()
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            variance: [self.noise_variance; 2],
            shared: self.noise_shared,
            bounds: (self.noise_min, self.noise_max),
            jitter: if self.jitter_kind == "nugget" {
                Jitter::Nugget(self.jitter_value)
            } else {
                Jitter::Constant(self.jitter_value)
            },
        }
    }

    /// Model configuration for `n_curves` curves in `n_groups` groups.
    pub fn model(&self, n_curves: usize, n_groups: usize) -> ModelConfig {
        ModelConfig {
            family: self.family,
            tau: self.tau.map_or(Tau::Auto, Tau::Fixed),
            rho: self.rho,
            coords: self.coords.resolve(2, self.coords_rank),
            curves: self.curves.resolve(n_curves, self.curves_rank),
            groups: self.groups.resolve(n_groups, self.groups_rank),
            noise: self.noise(),
            ..ModelConfig::default()
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        let mut o = OptimizerConfig {
            restarts: self.restarts,
            seed: self.seed,
            annealing: self.annealing,
            ..OptimizerConfig::default()
        };
        o.lbfgs.max_iterations = self.max_iterations;
        o
    }

    pub fn elastic(&self) -> ElasticOptions {
        ElasticOptions {
            grid: self.register_grid,
            max_rounds: self.register_rounds,
            ..ElasticOptions::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let d = ExperimentConfig::default();
        let text = d.render();
        let back = ExperimentConfig::parse(&text, Path::new("d.conf")).unwrap();
        assert_eq!(back, d);
        for (key, _) in KEYS {
            assert!(d.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn unknown_key_names_line() {
        let text = "optimizer.seed = 3\n\nmodel.colour = red\n";
        match ExperimentConfig::parse(text, Path::new("exp.conf")) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("model.colour"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn values_and_comments() {
        let text = "# header\nmodel.family = periodic-rbf  # inline\nmodel.tau = 1\nlandmarks.p_min = 4\nlandmarks.p_max = 9\n";
        let c = ExperimentConfig::parse(text, Path::new("x")).unwrap();
        assert_eq!(c.family, KernelFamily::PeriodicRbf);
        assert_eq!(c.tau, Some(1.0));
        assert_eq!(c.landmarks.p_range, Some((4, 9)));
        assert!(ExperimentConfig::parse("optimizer.restarts = many", Path::new("x")).is_err());
        assert!(ExperimentConfig::parse("just text", Path::new("x")).is_err());
    }

    #[test]
    fn validation_quotes_rule() {
        let mut c = ExperimentConfig::default();
        c.noise_variance = 1.0;
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("noise variance in box"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn auto_levels() {
        let c = ExperimentConfig::default();
        assert_eq!(c.model(1, 1).curves, LevelSpec::Absent);
        assert_eq!(c.model(3, 1).curves, LevelSpec::Free { rank: 1 });
        assert_eq!(c.model(3, 2).groups, LevelSpec::Free { rank: 1 });
    }
}
