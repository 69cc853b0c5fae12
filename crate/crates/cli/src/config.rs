//! Flat `key = value` run configuration with dotted keys.
//!
//! Values are resolved in order: built-in defaults, then the config file,
//! then command-line flags, then `--set key=value` overrides. Every key must
//! be known; the resolved table is written next to each run's outputs and can
//! be fed back through `--config` to repeat the run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use uroadnet::backbone::BackboneConfig;
use uroadnet::data::SyntheticConfig;
use uroadnet::dual_sa::{DualSaConfig, Variant};
use uroadnet::train::{LossWeights, TrainConfig};
use uroadnet::{Error, ModelConfig, Result};

pub const SNAPSHOT_FILE: &str = "resolved_config.txt";

/// Every accepted key with its default.
const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("jobs", "1"),
    ("paths.out", ""),
    ("paths.data", ""),
    ("paths.val", ""),
    ("paths.test", ""),
    ("paths.checkpoint", ""),
    ("paths.input", ""),
    ("paths.pred", ""),
    ("paths.gt", ""),
    ("data.count", "40"),
    ("data.size", "256"),
    ("data.min_roads", "2"),
    ("data.max_roads", "5"),
    ("data.min_width", "2"),
    ("data.max_width", "8"),
    ("data.curvature", "0.3"),
    ("data.max_occlusions", "6"),
    ("data.occlusion_min_radius", "3"),
    ("data.occlusion_max_radius", "9"),
    ("data.distractors", "4"),
    ("data.texture_scale", "24"),
    ("data.noise", "0.04"),
    ("model.variant", "dual-sa"),
    ("model.in_channels", "3"),
    ("model.base_channels", "64"),
    ("model.groups", "8"),
    ("model.stages", "4"),
    ("model.heads", "4"),
    ("model.mlp_ratio", "4"),
    ("model.patch", "8"),
    ("model.offset_bound", "2"),
    ("train.lr", "0.0001"),
    ("train.patience", "10"),
    ("train.decay", "0.5"),
    ("train.epochs", "200"),
    ("train.max_steps", "0"),
    ("train.batch_size", "2"),
    ("train.ce_weight", "1"),
    ("train.dice_weight", "1"),
    ("train.label_rate", "1"),
    ("train.label_rates", ""),
    ("train.val_fraction", "0.2"),
    ("train.augment", "true"),
    ("train.rescale", "false"),
    ("infer.tile", "512"),
    ("infer.overlap", "64"),
    ("infer.threshold", "0.5"),
    ("eval.rho", "2"),
    ("eval.sigma", "0.4"),
    ("eval.road_radius", "3"),
    ("eval.threshold", "0.5"),
    ("eval.rho_sweep", "0.5,1,1.5,2,2.5,3,4,5"),
    ("trace.pairs", "20"),
    ("trace.min_length", "10"),
    ("trace.max_length", "400"),
    ("trace.buckets", "0,25,50,100,200,400"),
    ("trace.tolerance", "2"),
    ("trace.threshold", "0.5"),
    ("trace.snap_radius", "5"),
    ("params.height", "512"),
    ("params.width", "512"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: String,
    values: BTreeMap<String, String>,
    /// Keys given by the file, a flag or `--set` rather than defaulted.
    explicit: BTreeSet<String>,
}

fn parse_line(line: &str, origin: &str) -> Result<Option<(String, String)>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("{origin}: expected `key = value`, got `{line}`")))?;
    Ok(Some((k.trim().to_string(), v.trim().to_string())))
}

impl RunConfig {
    pub fn defaults(command: &str) -> Self {
        RunConfig {
            command: command.to_string(),
            values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            explicit: BTreeSet::new(),
        }
    }

    /// Resolves defaults < file < flags < `--set`.
    pub fn resolve(
        command: &str,
        file: Option<&Path>,
        flags: &[(&str, Option<String>)],
        sets: &[String],
    ) -> Result<Self> {
        let mut cfg = Self::defaults(command);
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            for (i, line) in text.lines().enumerate() {
                if let Some((k, v)) = parse_line(line, &format!("{}:{}", path.display(), i + 1))? {
                    cfg.set(&k, v)?;
                }
            }
        }
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v.clone())?;
            }
        }
        for s in sets {
            let (k, v) = parse_line(s, "--set")?.ok_or_else(|| Error::Config("empty --set".into()))?;
            cfg.set(&k, v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: String) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value;
                self.explicit.insert(key.to_string());
                Ok(())
            }
            None => Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("key is declared")
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| Error::Config(format!("`{key}` = `{raw}`: {e}")))
    }

    pub fn list(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| Error::Config(format!("`{key}` = `{raw}`: {e}")))
            })
            .collect()
    }

    /// A path key; empty means unset.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.raw(key);
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }

    pub fn require_path(&self, key: &str, flag: &str) -> Result<PathBuf> {
        self.path(key)
            .ok_or_else(|| Error::Argument(format!("`{key}` is required (set it with {flag})")))
    }

    pub fn snapshot(&self) -> String {
        let mut s = format!("# uroadnet {}\n", self.command);
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn synthetic(&self) -> Result<SyntheticConfig> {
        let c = SyntheticConfig {
            size: self.get("data.size")?,
            min_roads: self.get("data.min_roads")?,
            max_roads: self.get("data.max_roads")?,
            min_width: self.get("data.min_width")?,
            max_width: self.get("data.max_width")?,
            curvature: self.get("data.curvature")?,
            max_occlusions: self.get("data.max_occlusions")?,
            occlusion_radius: (self.get("data.occlusion_min_radius")?, self.get("data.occlusion_max_radius")?),
            distractors: self.get("data.distractors")?,
            texture_scale: self.get("data.texture_scale")?,
            noise: self.get("data.noise")?,
            seed: self.get("seed")?,
        };
        c.validate()?;
        Ok(c)
    }

    /// Model settings. With `base`, only keys given explicitly replace the
    /// corresponding fields of `base`.
    pub fn model(&self, base: Option<&ModelConfig>) -> Result<ModelConfig> {
        let mut m = match base {
            Some(b) => b.clone(),
            None => ModelConfig {
                variant: Variant::DualSa,
                backbone: BackboneConfig::default(),
                dualsa: DualSaConfig::default(),
            },
        };
        let take = |k: &str| base.is_none() || self.is_explicit(k);
        if take("model.variant") {
            m.variant = self.get("model.variant")?;
        }
        if take("model.in_channels") {
            m.backbone.in_channels = self.get("model.in_channels")?;
        }
        if take("model.base_channels") {
            m.backbone.base_channels = self.get("model.base_channels")?;
        }
        if take("model.groups") {
            m.backbone.groups = self.get("model.groups")?;
        }
        if take("model.stages") {
            m.dualsa.stages = self.get("model.stages")?;
        }
        if take("model.heads") {
            m.dualsa.heads = self.get("model.heads")?;
        }
        if take("model.mlp_ratio") {
            m.dualsa.mlp_ratio = self.get("model.mlp_ratio")?;
        }
        if take("model.patch") {
            m.dualsa.patch = self.get("model.patch")?;
        }
        if take("model.offset_bound") {
            m.dualsa.offset_bound = self.get("model.offset_bound")?;
        }
        m.backbone.validate()?;
        m.dualsa.validate(&m.backbone.all_channels())?;
        Ok(m)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let steps: usize = self.get("train.max_steps")?;
        let t = TrainConfig {
            lr: self.get("train.lr")?,
            patience: self.get("train.patience")?,
            decay: self.get("train.decay")?,
            epochs: self.get("train.epochs")?,
            max_steps: (steps > 0).then_some(steps),
            batch_size: self.get("train.batch_size")?,
            loss: LossWeights {
                ce: self.get("train.ce_weight")?,
                dice: self.get("train.dice_weight")?,
            },
            seed: self.get("seed")?,
            label_rate: self.get("train.label_rate")?,
            augment: self.get("train.augment")?,
            rescale: self.get("train.rescale")?,
        };
        t.validate()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use uroadnet::metrics::{DEFAULT_RHO, DEFAULT_ROAD_RADIUS, DEFAULT_SIGMA};

    #[test]
    fn precedence_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.txt");
        std::fs::write(&file, "# comment\nseed = 3\ntrain.lr = 0.01\n").unwrap();
        let cfg = RunConfig::resolve(
            "train",
            Some(&file),
            &[("train.lr", Some("0.02".into())), ("seed", None)],
            &["train.epochs=7".into()],
        )
        .unwrap();
        assert_eq!(cfg.get::<u64>("seed").unwrap(), 3);
        assert_eq!(cfg.get::<f64>("train.lr").unwrap(), 0.02);
        assert_eq!(cfg.get::<usize>("train.epochs").unwrap(), 7);
        assert!(cfg.is_explicit("seed") && !cfg.is_explicit("jobs"));
        let err = RunConfig::resolve("train", None, &[], &["train.lrr=1".into()]).unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = RunConfig::resolve("params", None, &[("model.variant", Some("baseline".into()))], &[]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join(SNAPSHOT_FILE);
        std::fs::write(&file, cfg.snapshot()).unwrap();
        let back = RunConfig::resolve("params", Some(&file), &[], &[]).unwrap();
        assert_eq!(back.values, cfg.values);
    }

    #[test]
    fn evaluation_defaults_match_tolerances() {
        let cfg = RunConfig::defaults("evaluate");
        assert_eq!(cfg.get::<f64>("eval.rho").unwrap(), DEFAULT_RHO);
        assert_eq!(cfg.get::<f64>("eval.sigma").unwrap(), DEFAULT_SIGMA);
        assert_eq!(cfg.get::<f64>("eval.road_radius").unwrap(), DEFAULT_ROAD_RADIUS);
    }
}
