//! Flat `key = value` run configuration. Keys use dotted section prefixes
//! (`scene.*`, `train.*`, `model.*`, `eval.*`); `#` starts a comment.
//! Every key must be consumed by the reader — unknown keys abort before
//! any computation.

use crate::detector::{ModelConfig, PredictConfig, TrainConfig, Variant};
use crate::error::{NetError, Result};
use crate::netm::GateMode;
use crate::pyramid::PyramidConfig;
use crate::scenes::SceneConfig;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

/// Parsed key=value file with consumption tracking.
#[derive(Clone, Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
    used: std::collections::BTreeSet<String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(NetError::Config(format!(
                    "line {}: expected key = value, got `{line}`",
                    lineno + 1
                )));
            };
            let key = k.trim().to_string();
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(NetError::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
        }
        Ok(Config {
            values,
            used: Default::default(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Override or insert a key (CLI flags layered over the file).
    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.to_string(), value.to_string());
    }

    fn raw(&mut self, key: &str) -> Option<&str> {
        if self.values.contains_key(key) {
            self.used.insert(key.to_string());
            self.values.get(key).map(|s| s.as_str())
        } else {
            None
        }
    }

    pub fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| NetError::Config(format!("key `{key}`: cannot parse `{s}`"))),
        }
    }

    pub fn get_str(&mut self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    /// Comma-separated list of T.
    pub fn get_list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.raw(key) {
            None => Ok(default),
            Some("") => Ok(Vec::new()),
            Some(s) => s
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| NetError::Config(format!("key `{key}`: cannot parse `{p}`")))
                })
                .collect(),
        }
    }

    /// Error out if any key was never read.
    pub fn finish(&self) -> Result<()> {
        let unknown: Vec<&String> = self.values.keys().filter(|k| !self.used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(NetError::Config(format!(
                "unknown config keys: {}",
                unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )))
        }
    }
}

/// Everything one run needs, resolved from a config file plus flag
/// overrides.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub profile: String,
    pub model: ModelConfig,
    pub scene: SceneConfig,
    pub train: TrainConfig,
    pub predict: PredictConfig,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub seed: u64,
    pub ablate_variants: Vec<Variant>,
    pub ablate_seeds: usize,
    pub eval_iou: f64,
    pub pfp_thresholds: Vec<f64>,
}

impl RunConfig {
    pub fn from_config(cfg: &mut Config) -> Result<RunConfig> {
        let profile = cfg.get_str("profile", "desk");
        let pyramid = match profile.as_str() {
            "desk" => PyramidConfig::desk(),
            "full" => PyramidConfig::full(),
            other => return Err(NetError::Config(format!("unknown profile `{other}`"))),
        };
        let variant = Variant::parse(&cfg.get_str("model.variant", "baseline"))?;
        let gate_mode = GateMode::parse(&cfg.get_str("model.gate", "channelwise"))?;
        let num_classes = cfg.get("model.num_classes", 4usize)?;
        let mut model = ModelConfig::desk(variant);
        model.pyramid = pyramid;
        model.gate_mode = gate_mode;
        model.num_classes = num_classes;
        model.anchors.ratios = cfg.get_list("model.anchor_ratios", model.anchors.ratios.clone())?;
        model.anchors.scale_min = cfg.get("model.anchor_scale_min", model.anchors.scale_min)?;
        model.anchors.scale_max = cfg.get("model.anchor_scale_max", model.anchors.scale_max)?;

        let mut scene = SceneConfig {
            image_size: model.pyramid.input_size,
            ..SceneConfig::default()
        };
        scene.min_objects = cfg.get("scene.min_objects", scene.min_objects)?;
        scene.max_objects = cfg.get("scene.max_objects", scene.max_objects)?;
        scene.noise_mean = cfg.get("scene.noise_mean", scene.noise_mean)?;
        scene.noise_sigma = cfg.get("scene.noise_sigma", scene.noise_sigma)?;
        scene.base_seed = cfg.get("scene.base_seed", 0u64)?;
        scene.validate()?;

        let seed = cfg.get("seed", 0u64)?;
        let mut train = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        train.lr0 = cfg.get("train.lr0", train.lr0)?;
        train.warmup_epochs = cfg.get("train.warmup_epochs", train.warmup_epochs)?;
        train.momentum = cfg.get("train.momentum", train.momentum)?;
        train.weight_decay = cfg.get("train.weight_decay", train.weight_decay)?;
        train.milestones = cfg.get_list("train.milestones", train.milestones)?;
        train.decay_factor = cfg.get("train.decay_factor", train.decay_factor)?;
        train.epochs = cfg.get("train.epochs", train.epochs)?;
        train.batch_size = cfg.get("train.batch_size", train.batch_size)?;
        train.pos_thresh = cfg.get("train.pos_thresh", train.pos_thresh)?;
        train.neg_ratio = cfg.get("train.neg_ratio", train.neg_ratio)?;
        train.validate()?;

        let mut predict = PredictConfig::default();
        predict.score_thresh = cfg.get("eval.score_thresh", predict.score_thresh)?;
        predict.nms_thresh = cfg.get("eval.nms_thresh", predict.nms_thresh)?;
        predict.top_k = cfg.get("eval.top_k", predict.top_k)?;

        let ablate_variants = cfg
            .get_str("ablate.variants", "baseline,netm")
            .split(',')
            .map(|s| Variant::parse(s.trim()))
            .collect::<Result<Vec<_>>>()?;

        let run = RunConfig {
            profile,
            model,
            scene,
            train,
            predict,
            train_scenes: cfg.get("scene.train_count", 500usize)?,
            test_scenes: cfg.get("scene.test_count", 100usize)?,
            seed,
            ablate_variants,
            ablate_seeds: cfg.get("ablate.seeds", 5usize)?,
            eval_iou: cfg.get("eval.iou", 0.5)?,
            pfp_thresholds: cfg.get_list("eval.pfp_thresholds", vec![0.1, 0.3, 0.5, 0.7, 0.9])?,
        };
        cfg.finish()?;
        Ok(run)
    }

    /// Canonical key=value rendering, written into each run directory.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "profile = {}", self.profile);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "model.variant = {}", self.model.variant.name());
        let _ = writeln!(s, "model.gate = {}", self.model.gate_mode.name());
        let _ = writeln!(s, "model.num_classes = {}", self.model.num_classes);
        let _ = writeln!(s, "scene.min_objects = {}", self.scene.min_objects);
        let _ = writeln!(s, "scene.max_objects = {}", self.scene.max_objects);
        let _ = writeln!(s, "scene.base_seed = {}", self.scene.base_seed);
        let _ = writeln!(s, "scene.train_count = {}", self.train_scenes);
        let _ = writeln!(s, "scene.test_count = {}", self.test_scenes);
        let _ = writeln!(s, "train.lr0 = {}", self.train.lr0);
        let _ = writeln!(s, "train.epochs = {}", self.train.epochs);
        let _ = writeln!(s, "train.batch_size = {}", self.train.batch_size);
        let _ = writeln!(
            s,
            "train.milestones = {}",
            self.train.milestones.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(s, "eval.iou = {}", self.eval_iou);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_comments_and_defaults() {
        let mut cfg = Config::parse(
            "# run setup\nmodel.variant = netm\ntrain.epochs = 12  # short\nseed = 3\n",
        )
        .unwrap();
        let run = RunConfig::from_config(&mut cfg).unwrap();
        assert_eq!(run.model.variant, Variant::Netm);
        assert_eq!(run.train.epochs, 12);
        assert_eq!(run.seed, 3);
        assert_eq!(run.train.seed, 3);
        // defaults survive
        assert_eq!(run.train.momentum, 0.9);
        assert_eq!(run.model.num_classes, 4);
    }

    #[test]
    fn unknown_key_is_hard_error() {
        let mut cfg = Config::parse("model.variannt = netm\n").unwrap();
        let err = RunConfig::from_config(&mut cfg).unwrap_err().to_string();
        assert!(err.contains("model.variannt"), "{err}");
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(Config::parse("just a line\n").is_err());
        assert!(Config::parse("a = 1\na = 2\n").is_err());
    }

    #[test]
    fn bad_values_name_the_key() {
        let mut cfg = Config::parse("train.epochs = soon\n").unwrap();
        let err = RunConfig::from_config(&mut cfg).unwrap_err().to_string();
        assert!(err.contains("train.epochs"), "{err}");
    }

    #[test]
    fn render_round_trips_through_parser() {
        let mut cfg = Config::parse("model.variant = netnet\ntrain.epochs = 7\n").unwrap();
        let run = RunConfig::from_config(&mut cfg).unwrap();
        let mut again = Config::parse(&run.render()).unwrap();
        let run2 = RunConfig::from_config(&mut again).unwrap();
        assert_eq!(run2.model.variant, Variant::Netnet);
        assert_eq!(run2.train.epochs, 7);
    }
}
