use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vegmap_core::imaging::{HueRangeSet, DEFAULT_SAT_MIN};
use vegmap_core::learners::{LearnerConfig, LearnerKind, LearnerParams};
use vegmap_core::tiling::DEFAULT_SHIFTS;

/// Project and CLI defaults. Every CLI flag overrides the matching field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub classes: Vec<ClassConfig>,
    pub sat_min: f64,
    /// Spectrum mass kept when hue ranges are derived automatically.
    pub hue_mass: f64,
    pub max_intervals: usize,
    pub tile_size: u32,
    pub sth: f64,
    pub shifts: u32,
    pub folds: usize,
    pub seed: u64,
    pub loo_fraction: f64,
    pub learners: Vec<String>,
    /// Hyperparameter overrides, one table per learner kind.
    #[serde(rename = "learner")]
    pub learner_params: Vec<LearnerParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub name: String,
    /// `#rrggbb`
    pub color: String,
    /// Keep gray and unsaturated pixels when refining this class's mask.
    #[serde(default)]
    pub keep_achromatic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hue_ranges: Option<HueRangeSet>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            classes: Vec::new(),
            sat_min: DEFAULT_SAT_MIN,
            hue_mass: 0.99,
            max_intervals: 2,
            tile_size: 128,
            sth: 0.9,
            shifts: DEFAULT_SHIFTS,
            folds: 3,
            seed: 0,
            loo_fraction: 0.1,
            learners: LearnerKind::ALL.iter().map(|k| k.short_name().to_string()).collect(),
            learner_params: Vec::new(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.classes.iter().enumerate() {
            if c.name.is_empty() || c.name.contains(['/', '\\', '.']) {
                bail!("class name `{}` must be non-empty and free of path characters", c.name);
            }
            if self.classes[..i].iter().any(|o| o.name == c.name) {
                bail!("class `{}` is listed twice", c.name);
            }
            parse_color(&c.color)?;
        }
        for l in &self.learners {
            l.parse::<LearnerKind>()?;
        }
        for p in &self.learner_params {
            p.validate()?;
        }
        Ok(())
    }

    pub fn class(&self, name: &str) -> Option<&ClassConfig> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn palette(&self) -> Result<Vec<[u8; 3]>> {
        self.classes.iter().map(|c| parse_color(&c.color)).collect()
    }

    /// Learner configuration for `kind`, with overrides from the config.
    pub fn learner(&self, kind: LearnerKind, seed: u64) -> LearnerConfig {
        let params = self
            .learner_params
            .iter()
            .find(|p| p.kind() == kind)
            .cloned()
            .unwrap_or_else(|| LearnerParams::default_for(kind));
        LearnerConfig { params, seed }
    }

    /// Parses a comma-separated learner list such as `knn,lr,tree`.
    pub fn learners_from_list(&self, list: &str, seed: u64) -> Result<Vec<LearnerConfig>> {
        let kinds = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<LearnerKind>())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if kinds.is_empty() {
            bail!("no learners given");
        }
        Ok(kinds.into_iter().map(|k| self.learner(k, seed)).collect())
    }

    pub fn default_learners(&self) -> String {
        self.learners.join(",")
    }
}

pub fn parse_color(text: &str) -> Result<[u8; 3]> {
    let hex = text.strip_prefix('#').unwrap_or(text);
    if hex.len() != 6 {
        bail!("color `{text}` is not of the form #rrggbb");
    }
    let bytes = hex::decode(hex).with_context(|| format!("color `{text}` is not of the form #rrggbb"))?;
    Ok([bytes[0], bytes[1], bytes[2]])
}
