//! TOML configuration for the toolkit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datamodel::{GenerationParams, PromptConfigKind};
use crate::entity::DEFAULT_MIN_TOKEN_LEN;
use crate::error::{Error, Result};
use crate::factual::{ConsistencyMode, LabelMapping};
use crate::harness::{PriceTable, PromptTemplates, RetryPolicy, SyntheticProfile, DEFAULT_SCALES};
use crate::scoring::{presets, FailureThresholds, WeightScheme};
use crate::stats::{BandConvention, TVariant};
use crate::structure::EnumerationConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntityConfig {
    pub min_token_len: usize,
    /// Extra `short<TAB>long` pairs merged into the shipped abbreviation table.
    pub abbreviations: Option<PathBuf>,
    /// Phrase list replacing the shipped lexicon of the reference extractor.
    pub lexicon: Option<PathBuf>,
}

impl Default for EntityConfig {
    fn default() -> Self {
        Self {
            min_token_len: DEFAULT_MIN_TOKEN_LEN,
            abbreviations: None,
            lexicon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactualConfig {
    pub mode: ConsistencyMode,
    pub mapping: LabelMapping<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub alpha: f64,
    pub t_variant: TVariant,
    /// Semantic similarity at or above this counts as "high" in the overlap analysis.
    pub high_semantic: f64,
    pub band_convention: BandConvention,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            t_variant: TVariant::Pooled,
            high_semantic: FailureThresholds::<f64>::default().semantic,
            band_convention: BandConvention::Nearest,
        }
    }
}

/// Remote scoring endpoints; absent entries fall back to the reference backends.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub entity: Option<String>,
    pub embedding: Option<String>,
    pub nli: Option<String>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Http,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub id: String,
    #[serde(default)]
    pub kind: ModelKind,
    #[serde(default)]
    pub url: Option<String>,
    /// Environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    #[serde(default = "default_auth_prefix")]
    pub auth_prefix: String,
    #[serde(default)]
    pub profile: SyntheticProfile,
}

fn default_auth_header() -> String {
    "Authorization".into()
}

fn default_auth_prefix() -> String {
    "Bearer ".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub params: GenerationParams,
    pub retry: RetryPolicy,
    /// Response cache file; relative paths resolve against the output directory.
    pub cache: PathBuf,
    pub configs: Vec<PromptConfigKind>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            params: GenerationParams::default(),
            retry: RetryPolicy::default(),
            cache: PathBuf::from("cache.jsonl"),
            configs: PromptConfigKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub scales: Vec<u64>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            scales: DEFAULT_SCALES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolkitConfig {
    /// Scheme used for VB-Scores in result files.
    pub scheme: String,
    /// User-defined schemes, added to (or replacing same-named) presets.
    pub schemes: Vec<WeightScheme<f64>>,
    pub thresholds: FailureThresholds<f64>,
    pub entity: EntityConfig,
    pub structure: EnumerationConfig,
    pub factual: FactualConfig,
    pub stats: StatsConfig,
    pub backends: BackendsConfig,
    pub models: Vec<ModelConfig>,
    pub prices: PriceTable,
    pub prompts: PromptTemplates,
    pub harness: HarnessConfig,
    pub report: ReportConfig,
    pub parallel: usize,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        Self {
            scheme: "vb".into(),
            schemes: Vec::new(),
            thresholds: FailureThresholds::default(),
            entity: EntityConfig::default(),
            structure: EnumerationConfig::default(),
            factual: FactualConfig::default(),
            stats: StatsConfig::default(),
            backends: BackendsConfig::default(),
            models: Vec::new(),
            prices: PriceTable::default(),
            prompts: PromptTemplates::default(),
            harness: HarnessConfig::default(),
            report: ReportConfig::default(),
            parallel: 1,
        }
    }
}

impl ToolkitConfig {
    pub fn parse(content: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(content).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&content)?;
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.entity.abbreviations, &mut cfg.entity.lexicon]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Presets overlaid with user-defined schemes, sorted by name.
    pub fn all_schemes(&self) -> Vec<WeightScheme<f64>> {
        let mut map: BTreeMap<String, WeightScheme<f64>> =
            presets::all().into_iter().map(|s| (s.name.clone(), s)).collect();
        for s in &self.schemes {
            map.insert(s.name.clone(), s.clone());
        }
        map.into_values().collect()
    }

    pub fn resolve_scheme(&self, name: &str) -> Result<WeightScheme<f64>> {
        self.all_schemes()
            .into_iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::UnknownScheme(name.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.schemes {
            s.validate()?;
        }
        self.resolve_scheme(&self.scheme)?;
        self.thresholds.validate()?;
        self.factual.mapping.validate()?;
        if !(self.stats.alpha > 0.0 && self.stats.alpha < 1.0) {
            return Err(Error::Config(format!("stats.alpha {} is outside (0, 1)", self.stats.alpha)));
        }
        if self.entity.min_token_len == 0 {
            return Err(Error::Config("entity.min_token_len must be positive".into()));
        }
        self.prices.validate()?;
        self.prompts.validate()?;
        self.harness.params.validate()?;
        let mut ids = std::collections::BTreeSet::new();
        for m in &self.models {
            if !ids.insert(&m.id) {
                return Err(Error::Config(format!("model `{}` declared twice", m.id)));
            }
            if m.kind == ModelKind::Http && m.url.is_none() {
                return Err(Error::Config(format!("model `{}` needs a url", m.id)));
            }
        }
        Ok(())
    }
}
