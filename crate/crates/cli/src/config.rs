//! Flat `key = value` run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use emorec_core::datapipe::{LabelMap, SplitPlan};
use emorec_core::haar::{DetectParams, DEFAULT_GROUP_EPS, DEFAULT_MIN_NEIGHBORS, DEFAULT_SCALE_FACTOR};
use emorec_core::net::{build_alexnet_mini, build_emex, NetworkSpec};
use emorec_core::solver::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkKind {
    Emex,
    AlexnetMini,
}

impl NetworkKind {
    fn parse(s: &str) -> Result<NetworkKind> {
        match s {
            "emex" => Ok(NetworkKind::Emex),
            "alexnet-mini" => Ok(NetworkKind::AlexnetMini),
            other => bail!("unknown network {other:?} (expected emex or alexnet-mini)"),
        }
    }

    pub fn default_input_size(self) -> usize {
        match self {
            NetworkKind::Emex => 28,
            NetworkKind::AlexnetMini => 64,
        }
    }
}

pub const DEFAULT_WIDTH_SCALE: f64 = 0.125;
pub const DEFAULT_TRAIN_PER_CLASS: usize = 444;
pub const DEFAULT_VAL_PER_CLASS: usize = 56;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub network: NetworkKind,
    /// Side of the square network input; `None` uses the network default.
    pub input_size: Option<usize>,
    pub classes: Vec<String>,
    pub positive_class: Option<String>,
    pub width_scale: f64,
    pub dataset: Option<PathBuf>,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub face_cascade: Option<PathBuf>,
    pub mouth_cascade: Option<PathBuf>,
    pub scale_factor: f64,
    pub min_neighbors: usize,
    pub min_size: Option<(usize, usize)>,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            solver: SolverConfig::default(),
            network: NetworkKind::Emex,
            input_size: None,
            classes: Vec::new(),
            positive_class: None,
            width_scale: DEFAULT_WIDTH_SCALE,
            dataset: None,
            train_per_class: DEFAULT_TRAIN_PER_CLASS,
            val_per_class: DEFAULT_VAL_PER_CLASS,
            face_cascade: None,
            mouth_cascade: None,
            scale_factor: DEFAULT_SCALE_FACTOR,
            min_neighbors: DEFAULT_MIN_NEIGHBORS,
            min_size: None,
            output_dir: None,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow!("{key}: cannot parse {value:?}"))
}

/// `N` or `WxH`.
pub fn parse_min_size(value: &str) -> Result<(usize, usize)> {
    let parsed = match value.split_once(['x', 'X']) {
        Some((w, h)) => (w.trim().parse(), h.trim().parse()),
        None => (value.parse(), value.parse()),
    };
    match parsed {
        (Ok(w), Ok(h)) => Ok((w, h)),
        _ => bail!("min_size: expected N or WxH, got {value:?}"),
    }
}

impl RunConfig {
    /// Parses config text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        let path = |v: &str| base.join(v);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", lineno + 1))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                bail!("line {}: duplicate key {key}", lineno + 1);
            }
            let s = &mut cfg.solver;
            (|| -> Result<()> {
                match key {
                    "train_batch_size" => s.train_batch_size = num(key, value)?,
                    "test_batch_size" => s.test_batch_size = num(key, value)?,
                    "test_iterations" => s.test_iterations = num(key, value)?,
                    "test_interval" => s.test_interval = num(key, value)?,
                    "max_iterations" => s.max_iterations = num(key, value)?,
                    "seed" => s.seed = num(key, value)?,
                    "learning_rate" => s.learning_rate = num(key, value)?,
                    "beta1" => s.beta1 = num(key, value)?,
                    "beta2" => s.beta2 = num(key, value)?,
                    "epsilon" => s.epsilon = num(key, value)?,
                    "network" => cfg.network = NetworkKind::parse(value)?,
                    "input_size" => cfg.input_size = Some(num(key, value)?),
                    "classes" => {
                        cfg.classes = value
                            .split(',')
                            .map(|c| c.trim().to_string())
                            .filter(|c| !c.is_empty())
                            .collect()
                    }
                    "positive_class" => cfg.positive_class = Some(value.to_string()),
                    "width_scale" => cfg.width_scale = num(key, value)?,
                    "dataset" => cfg.dataset = Some(path(value)),
                    "train_per_class" => cfg.train_per_class = num(key, value)?,
                    "val_per_class" => cfg.val_per_class = num(key, value)?,
                    "face_cascade" => cfg.face_cascade = Some(path(value)),
                    "mouth_cascade" => cfg.mouth_cascade = Some(path(value)),
                    "scale_factor" => cfg.scale_factor = num(key, value)?,
                    "min_neighbors" => cfg.min_neighbors = num(key, value)?,
                    "min_size" => cfg.min_size = Some(parse_min_size(value)?),
                    "output_dir" => cfg.output_dir = Some(path(value)),
                    _ => bail!("unknown key {key:?}"),
                }
                Ok(())
            })()
            .with_context(|| format!("line {}", lineno + 1))?;
        }
        cfg.solver.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, base).with_context(|| format!("config {}", path.display()))
    }

    pub fn input_size(&self) -> usize {
        self.input_size.unwrap_or(self.network.default_input_size())
    }

    pub fn label_map(&self) -> Result<LabelMap> {
        if self.classes.is_empty() {
            bail!("config does not list any classes");
        }
        Ok(LabelMap::new(&self.classes)?)
    }

    pub fn positive_index(&self, labels: &LabelMap) -> Result<Option<usize>> {
        self.positive_class
            .as_deref()
            .map(|name| {
                labels
                    .index(name)
                    .ok_or_else(|| anyhow!("positive class {name:?} not among {:?}", labels.names()))
            })
            .transpose()
    }

    pub fn network_spec(&self, num_classes: usize) -> Result<NetworkSpec> {
        let s = self.input_size();
        let spec = match self.network {
            NetworkKind::Emex => build_emex([1, s, s], num_classes)?,
            NetworkKind::AlexnetMini => build_alexnet_mini([1, s, s], num_classes, self.width_scale)?,
        };
        Ok(spec)
    }

    pub fn split_plan(&self, num_classes: usize) -> SplitPlan {
        SplitPlan::uniform(num_classes, self.train_per_class, self.val_per_class)
    }

    pub fn detect_params(&self) -> DetectParams {
        DetectParams {
            scale_factor: self.scale_factor,
            min_neighbors: self.min_neighbors,
            group_eps: DEFAULT_GROUP_EPS,
            min_size: self.min_size,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::parse("", Path::new(".")).unwrap();
        assert_eq!(c.solver, SolverConfig::default());
        assert_eq!(c.network, NetworkKind::Emex);
        assert_eq!(c.input_size(), 28);
        assert_eq!((c.train_per_class, c.val_per_class), (444, 56));
    }

    #[test]
    fn full_file() {
        let text = "# experiment\n\
            network = alexnet-mini\n\
            classes = Neutral, Joy\n\
            positive_class = Joy\n\
            max_iterations = 200   # short run\n\
            learning_rate = 0.01\n\
            dataset = data/mouths\n\
            min_size = 40x30\n\
            width_scale = 0.0625\n";
        let c = RunConfig::parse(text, Path::new("/base")).unwrap();
        assert_eq!(c.network, NetworkKind::AlexnetMini);
        assert_eq!(c.input_size(), 64);
        assert_eq!(c.solver.max_iterations, 200);
        assert_eq!(c.solver.learning_rate, 0.01);
        assert_eq!(c.dataset.as_deref(), Some(Path::new("/base/data/mouths")));
        assert_eq!(c.min_size, Some((40, 30)));
        let labels = c.label_map().unwrap();
        assert_eq!(c.positive_index(&labels).unwrap(), Some(0));
        let spec = c.network_spec(2).unwrap();
        assert_eq!(spec.num_classes(), 2);
    }

    #[test]
    fn rejects_unknown_and_bad_values() {
        let base = Path::new(".");
        assert!(RunConfig::parse("colour = red", base).is_err());
        assert!(RunConfig::parse("seed = x", base).is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2", base).is_err());
        assert!(RunConfig::parse("network = vgg", base).is_err());
        assert!(RunConfig::parse("no equals sign", base).is_err());
        assert!(RunConfig::parse("beta1 = 1.0", base).is_err());
        let e = format!("{:#}", RunConfig::parse("\n\nbogus = 1", base).unwrap_err());
        assert!(e.contains("line 3"), "{e}");
    }

    #[test]
    fn min_size_forms() {
        assert_eq!(parse_min_size("24").unwrap(), (24, 24));
        assert_eq!(parse_min_size("30x20").unwrap(), (30, 20));
        assert!(parse_min_size("a").is_err());
    }

    #[test]
    fn positive_class_must_exist() {
        let c = RunConfig::parse("classes = Joy,Neutral\npositive_class = Anger", Path::new(".")).unwrap();
        let labels = c.label_map().unwrap();
        assert!(c.positive_index(&labels).is_err());
    }
}
