//! Runtime configuration.
//!
//! Config files are plain `key = value` lines; `#` starts a comment. Later
//! sources override earlier ones: built-in defaults, then a config file,
//! then manifest overrides, then command-line `--set key=value`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_QUESTION: &str =
    "What object makes people feel happy/surprised/sad/angry/feared/disgusted?";

#[derive(Debug, Clone, PartialEq)]
pub struct GazeConfig {
    /// Max pairwise dispersion for fixation, normalized units.
    pub rho_fix: f64,
    /// Max pairwise dispersion for smooth pursuit, normalized units.
    pub rho_sp: f64,
    /// Speed ceiling for fixation, normalized units per second.
    pub v_fix: f64,
    /// Speed ceiling for smooth pursuit, normalized units per second.
    pub v_sp: f64,
    pub min_duration_ms: u64,
    /// Number of trailing samples each classification looks at.
    pub window: usize,
}

impl Default for GazeConfig {
    fn default() -> Self {
        // Speeds are per-frame displacements at 30 fps: 0.001 and 0.01 units/frame.
        Self {
            rho_fix: 0.02,
            rho_sp: 0.05,
            v_fix: 0.03,
            v_sp: 0.3,
            min_duration_ms: 200,
            window: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractorKind {
    Passthrough,
    Mock,
    Linear,
}

impl FromStr for ExtractorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "passthrough" => Ok(Self::Passthrough),
            "mock" => Ok(Self::Mock),
            "linear" => Ok(Self::Linear),
            _ => Err(Error::Config(format!("unknown extractor `{s}` (passthrough|mock|linear)"))),
        }
    }
}

impl fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Passthrough => "passthrough",
            Self::Mock => "mock",
            Self::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            _ => Err(Error::Config(format!("unknown optimizer `{s}` (sgd|adam)"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

/// Fusion-head dimensions. `d_eye` includes the two pupil channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionDims {
    pub d_vis: usize,
    pub d_eye: usize,
    pub r_max: usize,
    pub se_reduction: usize,
}

impl Default for FusionDims {
    fn default() -> Self {
        Self {
            d_vis: 2048,
            d_eye: 130,
            r_max: 10,
            se_reduction: 4,
        }
    }
}

impl FusionDims {
    /// Length of the raw eye embedding before the pupil is appended.
    pub fn d_eye_raw(&self) -> usize {
        self.d_eye - 2
    }

    pub fn gate_width(&self) -> usize {
        2 * self.d_eye
    }

    pub fn se_hidden(&self) -> usize {
        self.gate_width() / self.se_reduction
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_vis == 0 || self.r_max == 0 {
            return Err(Error::Config("fusion.d_vis and fusion.r_max must be positive".into()));
        }
        if self.d_eye < 3 {
            return Err(Error::Config("fusion.d_eye must be at least 3 (embedding + 2 pupil)".into()));
        }
        if self.se_reduction == 0 || self.gate_width() % self.se_reduction != 0 {
            return Err(Error::Config(format!(
                "fusion.se_reduction {} must divide 2*d_eye = {}",
                self.se_reduction,
                self.gate_width()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch: 512,
            epochs: 500,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub gaze: GazeConfig,
    pub trigger_theta: f64,
    pub extractor: ExtractorKind,
    pub extractor_seed: u64,
    pub max_candidates: usize,
    pub question: String,
    pub fusion: FusionDims,
    pub train: TrainConfig,
    pub off_streak: usize,
    pub provider_timeout_ms: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            gaze: GazeConfig::default(),
            trigger_theta: 0.5,
            extractor: ExtractorKind::Passthrough,
            extractor_seed: 7,
            max_candidates: 10,
            question: DEFAULT_QUESTION.to_string(),
            fusion: FusionDims::default(),
            train: TrainConfig::default(),
            off_streak: 15,
            provider_timeout_ms: 5000,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for {key}")))
}

impl Config {
    /// Every recognised key with a one-line description.
    pub const KEYS: &'static [(&'static str, &'static str)] = &[
        ("gaze.rho_fix", "fixation dispersion radius (normalized units)"),
        ("gaze.rho_sp", "smooth-pursuit dispersion radius (normalized units)"),
        ("gaze.v_fix", "fixation speed ceiling (units/s)"),
        ("gaze.v_sp", "smooth-pursuit speed ceiling (units/s)"),
        ("gaze.min_duration_ms", "minimum sustained attention before an event fires"),
        ("gaze.window", "samples per movement classification"),
        ("trigger.theta", "non-neutral probability threshold (p >= theta fires)"),
        ("eye.extractor", "eye feature extractor: passthrough|mock|linear"),
        ("eye.seed", "seed of the mock extractor"),
        ("roi.max_candidates", "regions kept nearest to the gaze point"),
        ("roi.question", "question sent with every vqa request"),
        ("fusion.d_vis", "region feature length"),
        ("fusion.d_eye", "eye feature length including the 2 pupil values"),
        ("fusion.r_max", "candidate slots fed to the visual projection"),
        ("fusion.se_reduction", "gate bottleneck reduction ratio"),
        ("train.lr", "learning rate"),
        ("train.batch", "minibatch size"),
        ("train.epochs", "passes over the training set"),
        ("train.seed", "shuffle/initialisation seed"),
        ("train.optimizer", "sgd|adam"),
        ("pipeline.off_streak", "consecutive neutral frames that end a capture window"),
        ("provider.timeout_ms", "per-request provider timeout"),
    ];

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "gaze.rho_fix" => self.gaze.rho_fix.to_string(),
            "gaze.rho_sp" => self.gaze.rho_sp.to_string(),
            "gaze.v_fix" => self.gaze.v_fix.to_string(),
            "gaze.v_sp" => self.gaze.v_sp.to_string(),
            "gaze.min_duration_ms" => self.gaze.min_duration_ms.to_string(),
            "gaze.window" => self.gaze.window.to_string(),
            "trigger.theta" => self.trigger_theta.to_string(),
            "eye.extractor" => self.extractor.to_string(),
            "eye.seed" => self.extractor_seed.to_string(),
            "roi.max_candidates" => self.max_candidates.to_string(),
            "roi.question" => self.question.clone(),
            "fusion.d_vis" => self.fusion.d_vis.to_string(),
            "fusion.d_eye" => self.fusion.d_eye.to_string(),
            "fusion.r_max" => self.fusion.r_max.to_string(),
            "fusion.se_reduction" => self.fusion.se_reduction.to_string(),
            "train.lr" => self.train.lr.to_string(),
            "train.batch" => self.train.batch.to_string(),
            "train.epochs" => self.train.epochs.to_string(),
            "train.seed" => self.train.seed.to_string(),
            "train.optimizer" => self.train.optimizer.to_string(),
            "pipeline.off_streak" => self.off_streak.to_string(),
            "provider.timeout_ms" => self.provider_timeout_ms.to_string(),
            _ => return None,
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "gaze.rho_fix" => self.gaze.rho_fix = parse(key, v)?,
            "gaze.rho_sp" => self.gaze.rho_sp = parse(key, v)?,
            "gaze.v_fix" => self.gaze.v_fix = parse(key, v)?,
            "gaze.v_sp" => self.gaze.v_sp = parse(key, v)?,
            "gaze.min_duration_ms" => self.gaze.min_duration_ms = parse(key, v)?,
            "gaze.window" => self.gaze.window = parse(key, v)?,
            "trigger.theta" => self.trigger_theta = parse(key, v)?,
            "eye.extractor" => self.extractor = v.parse()?,
            "eye.seed" => self.extractor_seed = parse(key, v)?,
            "roi.max_candidates" => self.max_candidates = parse(key, v)?,
            "roi.question" => self.question = v.to_string(),
            "fusion.d_vis" => self.fusion.d_vis = parse(key, v)?,
            "fusion.d_eye" => self.fusion.d_eye = parse(key, v)?,
            "fusion.r_max" => self.fusion.r_max = parse(key, v)?,
            "fusion.se_reduction" => self.fusion.se_reduction = parse(key, v)?,
            "train.lr" => self.train.lr = parse(key, v)?,
            "train.batch" => self.train.batch = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.seed" => self.train.seed = parse(key, v)?,
            "train.optimizer" => self.train.optimizer = v.parse()?,
            "pipeline.off_streak" => self.off_streak = parse(key, v)?,
            "provider.timeout_ms" => self.provider_timeout_ms = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` text on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, idx + 1, "expected `key = value`"))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::parse(origin, idx + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.fusion.validate()?;
        let g = &self.gaze;
        if g.window < 2 {
            return Err(Error::Config("gaze.window must be at least 2".into()));
        }
        if !(g.rho_fix > 0.0 && g.rho_fix <= g.rho_sp) {
            return Err(Error::Config("need 0 < gaze.rho_fix <= gaze.rho_sp".into()));
        }
        if !(g.v_fix > 0.0 && g.v_fix <= g.v_sp) {
            return Err(Error::Config("need 0 < gaze.v_fix <= gaze.v_sp".into()));
        }
        if !(self.trigger_theta > 0.0 && self.trigger_theta < 1.0) {
            return Err(Error::Config("trigger.theta must lie in (0,1)".into()));
        }
        if self.max_candidates == 0 || self.max_candidates > self.fusion.r_max {
            return Err(Error::Config(format!(
                "roi.max_candidates must be in 1..={} (fusion.r_max)",
                self.fusion.r_max
            )));
        }
        if self.off_streak == 0 {
            return Err(Error::Config("pipeline.off_streak must be positive".into()));
        }
        if self.train.batch == 0 || !(self.train.lr >= 0.0) {
            return Err(Error::Config("train.batch must be positive and train.lr >= 0".into()));
        }
        Ok(())
    }

    /// `key = value` dump of every key, in [`Config::KEYS`] order.
    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|(k, _)| format!("{k} = {}\n", self.get(k).unwrap_or_default()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
        assert_eq!(Config::default().fusion.se_hidden(), 65);
    }

    #[test]
    fn every_key_round_trips() {
        let cfg = Config::default();
        let mut other = Config::default();
        other.gaze.window = 3;
        other.apply_text(&cfg.to_text(), Path::new("mem")).unwrap();
        assert_eq!(other, cfg);
        for (k, _) in Config::KEYS {
            assert!(cfg.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn file_errors_cite_line() {
        let mut cfg = Config::default();
        let err = cfg
            .apply_text("# c\ngaze.window = 4\nbogus = 1\n", Path::new("x.conf"))
            .unwrap_err();
        assert!(err.to_string().starts_with("x.conf:3:"), "{err}");
    }

    #[test]
    fn reduction_must_divide() {
        let mut cfg = Config::default();
        cfg.fusion.se_reduction = 7;
        assert!(cfg.validate().is_err());
    }
}
