//! Single JSON run configuration. Unknown keys are rejected; dotted
//! `key=value` overrides are applied to the JSON tree before validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::N_FEATURES;
use crate::matching::GeometryNorm;
use crate::model::ModelConfig;
use crate::propagation::SimulationConfig;
use crate::scene::{derive_seed, material_subset, Aabb, MaterialSpec, SceneParams};

/// Independent random streams derived from the master seed.
pub const STREAM_SCENES: u64 = 1;
pub const STREAM_CODEBOOK: u64 = 2;
pub const STREAM_NOISE: u64 = 3;
pub const STREAM_MODEL: u64 = 4;

/// Table 2 confidence threshold.
pub const DEFAULT_TAU: f64 = 0.52;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub spheres_per_scene: usize,
    pub bounds: Aabb,
    pub radius_range: (f64, f64),
    pub min_separation: f64,
    /// Names from the default material table; class labels follow this order.
    pub materials: Vec<String>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let p = SceneParams::default();
        Self {
            spheres_per_scene: p.count,
            bounds: p.bounds,
            radius_range: p.radius_range,
            min_separation: p.min_separation,
            materials: p.materials.iter().map(|m| m.name.clone()).collect(),
        }
    }
}

impl SceneConfig {
    pub fn material_table(&self) -> Result<Vec<MaterialSpec>> {
        let names: Vec<&str> = self.materials.iter().map(String::as_str).collect();
        material_subset(&names)
    }

    pub fn params(&self) -> Result<SceneParams> {
        let p = SceneParams {
            count: self.spheres_per_scene,
            bounds: self.bounds,
            radius_range: self.radius_range,
            min_separation: self.min_separation,
            materials: self.material_table()?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn geometry_norm(&self) -> GeometryNorm {
        GeometryNorm::new(&self.bounds, self.radius_range)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodebookConfig {
    /// Number of configurations C; every entry is observed.
    pub n_entries: usize,
    pub realizations_per_panel: usize,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self { n_entries: 2, realizations_per_panel: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_scenes: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Store traced paths in every record (large; debugging only).
    pub include_paths: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { n_scenes: 2000, train_fraction: 0.8, val_fraction: 0.1, include_paths: false }
    }
}

impl DatasetConfig {
    /// Contiguous train / validation / test index ranges.
    pub fn split(&self) -> [std::ops::Range<u64>; 3] {
        let n = self.n_scenes as u64;
        let n_train = ((self.n_scenes as f64 * self.train_fraction).round() as u64).min(n);
        let n_val = ((self.n_scenes as f64 * self.val_fraction).round() as u64).min(n - n_train);
        [0..n_train, n_train..n_train + n_val, n_train + n_val..n]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub master_seed: u64,
    pub scene: SceneConfig,
    pub simulation: SimulationConfig,
    pub codebook: CodebookConfig,
    pub dataset: DatasetConfig,
    /// Architecture and optimizer. Input channels, grid, class count and
    /// seed are derived from the rest of the configuration.
    pub model: ModelConfig,
    pub tau: f64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            scene: SceneConfig::default(),
            simulation: SimulationConfig::default(),
            codebook: CodebookConfig::default(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            tau: DEFAULT_TAU,
            out_dir: PathBuf::from("run"),
        }
    }
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(json_err)?;
        cfg.resolved()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Apply `a.b.c=value` overrides. Values are parsed as JSON, falling back
    /// to a plain string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut tree = serde_json::to_value(self).map_err(json_err)?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            let mut node = &mut tree;
            let parts: Vec<&str> = key.split('.').collect();
            for (i, p) in parts.iter().enumerate() {
                let obj = node
                    .as_object_mut()
                    .ok_or_else(|| Error::Config(format!("{key}: {p} is not inside an object")))?;
                if i + 1 == parts.len() {
                    if !obj.contains_key(*p) {
                        return Err(Error::Config(format!("unknown key {key}")));
                    }
                    obj.insert((*p).to_string(), value.clone());
                    break;
                }
                node = obj.get_mut(*p).ok_or_else(|| Error::Config(format!("unknown key {key}")))?;
            }
        }
        let cfg: RunConfig = serde_json::from_value(tree).map_err(json_err)?;
        cfg.resolved()
    }

    /// Fill derived model fields and validate every section.
    pub fn resolved(mut self) -> Result<Self> {
        self.model.input_channels = N_FEATURES * self.codebook.n_entries;
        self.model.grid = self.simulation.rx_grid;
        self.model.n_classes = self.scene.materials.len() + 1;
        self.model.seed = derive_seed(self.master_seed, STREAM_MODEL);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        self.scene.params().map_err(cfg)?;
        self.simulation.validate().map_err(cfg)?;
        self.model.validate()?;
        if self.codebook.n_entries == 0 || self.codebook.realizations_per_panel == 0 {
            return Err(Error::Config("codebook needs ≥ 1 entry and ≥ 1 realization per panel".into()));
        }
        let d = &self.dataset;
        if !(d.train_fraction >= 0.0 && d.val_fraction >= 0.0 && d.train_fraction + d.val_fraction <= 1.0) {
            return Err(Error::Config("dataset fractions must be ≥ 0 and sum to ≤ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config("tau must lie in [0, 1]".into()));
        }
        if self.model.n_queries < self.scene.spheres_per_scene {
            return Err(Error::Config("n_queries must be ≥ spheres_per_scene".into()));
        }
        Ok(())
    }

    pub fn stream_seed(&self, stream: u64) -> u64 {
        derive_seed(self.master_seed, stream)
    }

    /// Write the resolved configuration as `config.json` in `dir`.
    pub fn echo_to(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("config.json");
        std::fs::write(&path, self.to_json())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_and_round_trip() {
        let c = RunConfig::default().resolved().unwrap();
        assert_eq!(c.model.input_channels, 20);
        assert_eq!(c.model.n_classes, 6);
        assert_eq!(c.tau, 0.52);
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"bogus": 1}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"model": {"hiden_dim": 3}}"#), Err(Error::Config(_))));
        let c = RunConfig::default();
        assert!(c.with_overrides(&["model.nope=3".into()]).is_err());
    }

    #[test]
    fn overrides_apply_and_validate() {
        let c = RunConfig::default()
            .with_overrides(&[
                "model.epochs=7".into(),
                "scene.materials=[\"metal\",\"glass\",\"wood\"]".into(),
                "scene.spheres_per_scene=3".into(),
            ])
            .unwrap();
        assert_eq!(c.model.epochs, 7);
        assert_eq!(c.model.n_classes, 4);
        assert!(c.with_overrides(&["tau=1.5".into()]).is_err());
        assert!(c.with_overrides(&["model.hidden_dim=30".into()]).is_err());
    }

    #[test]
    fn split_covers_all() {
        let d = DatasetConfig { n_scenes: 2000, ..Default::default() };
        let [a, b, c] = d.split();
        assert_eq!((a.end - a.start, b.end - b.start, c.end - c.start), (1600, 200, 200));
    }
}
