//! `key = value` run configuration.

use super::{PipelineError, Stage};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Every accepted key with its default; `None` marks keys without a
/// default that are required by the stages that read them.
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("dataset", None),
    ("seed", Some("0")),
    ("stages", Some("parse, fit, refine, facemap, quantize, features, metrics")),
    ("bvh.unit_scale", Some("0.01")),
    ("contacts.height", Some("0.05")),
    ("contacts.up_axis", Some("1")),
    ("fit.model", None),
    ("fit.layout", None),
    ("fit.stage1_frames", Some("12")),
    ("fit.selection", Some("uniform")),
    ("fit.max_iters", Some("500")),
    ("fit.weight.data", Some("400")),
    ("fit.weight.surface", Some("100")),
    ("fit.weight.init", Some("1")),
    ("fit.weight.beta", Some("1")),
    ("fit.weight.theta", Some("1")),
    ("fit.weight.velocity", Some("10")),
    ("fit.prior.theta", Some("0.001")),
    ("fit.prior.beta", Some("0.001")),
    ("refine.rules", Some("head, fingers, ks3sigma")),
    ("refine.window", Some("10")),
    ("refine.head_top", Some("0, 0.22, 0")),
    ("refine.ks_gate", Some("none")),
    ("facemap.templates", None),
    ("facemap.basis", None),
    ("facemap.regularization", Some("1e-8")),
    ("facemap.training_extra", Some("200")),
    ("split.ratios", Some("0.85, 0.075, 0.075")),
    ("quantize.codebook_size", Some("256")),
    ("quantize.segments", Some("face, upper, hands, lower")),
    ("quantize.latent_dim", Some("auto")),
    ("quantize.max_iters", Some("100")),
    ("features.embeddings", None),
    ("features.fusion", None),
    ("metrics.bc_sigma", Some("0.1")),
    ("metrics.beat_threshold", Some("0.1")),
    ("metrics.onset_min", Some("0.3")),
    ("metrics.beat_joints", Some("18, 19, 20, 21")),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    /// Explicit values merged over the defaults.
    pub values: BTreeMap<String, String>,
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut values: BTreeMap<String, String> =
            KEYS.iter().filter_map(|(k, d)| d.map(|d| (k.to_string(), d.to_string()))).collect();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| config_err(format!("line {}: expected `key = value`", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.iter().any(|(key, _)| *key == k) {
                return Err(config_err(format!("line {}: unknown key '{k}'", n + 1)));
            }
            if !seen.insert(k.to_string()) {
                return Err(config_err(format!("line {}: duplicate key '{k}'", n + 1)));
            }
            values.insert(k.to_string(), v.to_string());
        }
        let cfg = RunConfig { base_dir: base_dir.to_path_buf(), values };
        cfg.stages()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(config_err(format!("unknown key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&str, PipelineError> {
        self.values.get(key).map(String::as_str).ok_or_else(|| config_err(format!("missing required key '{key}'")))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T, PipelineError> {
        let v = self.get(key)?;
        v.parse().map_err(|_| config_err(format!("{key}: expected {what}, got '{v}'")))
    }

    pub fn f64(&self, key: &str) -> Result<f64, PipelineError> {
        let v: f64 = self.parsed(key, "a number")?;
        if !v.is_finite() {
            return Err(config_err(format!("{key}: must be finite")));
        }
        Ok(v)
    }

    pub fn usize(&self, key: &str) -> Result<usize, PipelineError> {
        self.parsed(key, "a non-negative integer")
    }

    pub fn u64(&self, key: &str) -> Result<u64, PipelineError> {
        self.parsed(key, "a non-negative integer")
    }

    pub fn list(&self, key: &str) -> Result<Vec<String>, PipelineError> {
        Ok(self.get(key)?.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, PipelineError> {
        self.list(key)?
            .iter()
            .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| config_err(format!("{key}: bad number '{s}'"))))
            .collect()
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, PipelineError> {
        Ok(self.base_dir.join(self.get(key)?))
    }

    /// Stages in execution order.
    pub fn stages(&self) -> Result<Vec<Stage>, PipelineError> {
        let mut stages = Vec::new();
        for name in self.list("stages")? {
            let s = Stage::from_name(&name).ok_or_else(|| config_err(format!("unknown stage '{name}'")))?;
            if stages.contains(&s) {
                return Err(config_err(format!("stage '{name}' listed twice")));
            }
            stages.push(s);
        }
        stages.sort();
        if stages.first() != Some(&Stage::Parse) {
            return Err(config_err("the stage chain must include parse"));
        }
        Ok(stages)
    }

    /// All effective values, defaults included.
    pub fn effective(&self) -> BTreeMap<String, String> {
        self.values.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_comments_and_errors() {
        let c = RunConfig::parse("dataset = d.json # inline\n\nseed=3\n", Path::new("/x")).unwrap();
        assert_eq!(c.u64("seed").unwrap(), 3);
        assert_eq!(c.path("dataset").unwrap(), Path::new("/x/d.json"));
        assert_eq!(c.f64("metrics.bc_sigma").unwrap(), 0.1);
        assert_eq!(c.stages().unwrap().len(), 7);
        let e = RunConfig::parse("stages = parse, dance\n", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("dance"));
        assert!(RunConfig::parse("nope = 1\n", Path::new(".")).is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2\n", Path::new(".")).is_err());
        assert!(RunConfig::parse("stages = fit\n", Path::new(".")).is_err());
    }
}
