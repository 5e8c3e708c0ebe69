//! Run configuration, read from a single TOML file.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use modssd_core::embedding::{Averaging, DEFAULT_SIF_A};
use modssd_core::interpret::{ClusterConfig, InterpretConfig};
use modssd_core::model::ModeratorProbe;
use modssd_core::reduction::{k_grid, SweepOptions};
use modssd_core::synth::{SynthSpec, TokenSpec};
use modssd_core::ColumnMap;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "SSD_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "ssd-run";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vectors: Option<PathBuf>,
    /// One stopword per line; the bundled English list when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stopwords: Option<PathBuf>,
    /// Terms masked in rendered reports.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    /// `token<TAB>count` table; corpus frequencies when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub word_counts: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub sif_a: f64,
    pub averaging: Averaging,
    pub remove_top_component: bool,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { sif_a: DEFAULT_SIF_A, averaging: Averaging::TokenCount, remove_top_component: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub start: usize,
    pub stop: usize,
    pub step: usize,
    /// Fixed K; skips the need for a sweep artifact.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub coherence_neighbors: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            start: 2,
            stop: 122,
            step: 10,
            k: None,
            coherence_neighbors: SweepOptions::default().coherence_neighbors,
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> Vec<usize> {
        k_grid(self.start, self.stop, self.step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpretSection {
    pub top_n: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub min_cluster_size: usize,
    pub top_m: usize,
    pub excerpt_chars: usize,
    pub restarts: usize,
    /// Search the whole embedding vocabulary rather than corpus tokens.
    pub full_vocabulary: bool,
}

impl Default for InterpretSection {
    fn default() -> Self {
        let d = InterpretConfig::default();
        Self {
            top_n: d.top_n,
            k_min: d.cluster.k_min,
            k_max: d.cluster.k_max,
            min_cluster_size: d.cluster.min_cluster_size,
            top_m: d.top_m,
            excerpt_chars: d.excerpt_chars,
            restarts: d.cluster.restarts,
            full_vocabulary: false,
        }
    }
}

impl InterpretSection {
    pub fn to_core(&self, seed: u64) -> InterpretConfig {
        InterpretConfig {
            top_n: self.top_n,
            top_m: self.top_m,
            excerpt_chars: self.excerpt_chars,
            cluster: ClusterConfig {
                k_min: self.k_min,
                k_max: self.k_max,
                min_cluster_size: self.min_cluster_size,
                restarts: self.restarts,
                seed,
                ..ClusterConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Moderator values for conditional gradients: `"auto"`, `"auto-binary"`,
    /// `"pm1sd"` or a list of standardized values.
    pub m_star: ModeratorProbe,
    pub paths: Paths,
    pub columns: ColumnMap,
    pub embedding: EmbeddingConfig,
    pub sweep: SweepConfig,
    pub interpret: InterpretSection,
    /// Generator settings for `synth`; token mode is always used.
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            m_star: ModeratorProbe::default(),
            paths: Paths::default(),
            columns: ColumnMap::default(),
            embedding: EmbeddingConfig::default(),
            sweep: SweepConfig::default(),
            interpret: InterpretSection::default(),
            synth: SynthSpec { tokens: Some(TokenSpec::default()), ..SynthSpec::default() },
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Loads a config file and resolves its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        let slots = [&mut p.data, &mut p.vectors, &mut p.stopwords, &mut p.lexicon, &mut p.word_counts, &mut p.output];
        for path in slots.into_iter().flatten() {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    /// Output directory: config, then the environment, then the default.
    pub fn output_dir(&self) -> PathBuf {
        self.paths
            .output
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    /// The configuration as echoed into manifests: paths reduced to file
    /// names and the output directory dropped, so relocating a run leaves
    /// its manifests unchanged.
    pub fn canonical(&self) -> RunConfig {
        let mut c = self.clone();
        let name = |p: &Option<PathBuf>| p.as_ref().and_then(|p| p.file_name()).map(PathBuf::from);
        c.paths = Paths {
            data: name(&self.paths.data),
            vectors: name(&self.paths.vectors),
            stopwords: name(&self.paths.stopwords),
            lexicon: name(&self.paths.lexicon),
            word_counts: name(&self.paths.word_counts),
            output: None,
        };
        c
    }

    pub fn require_data(&self) -> Result<&Path, CliError> {
        self.paths.data.as_deref().ok_or_else(|| CliError::Usage("no data path: set paths.data or pass --data".into()))
    }

    pub fn require_vectors(&self) -> Result<&Path, CliError> {
        self.paths
            .vectors
            .as_deref()
            .ok_or_else(|| CliError::Usage("no vector file: set paths.vectors or pass --vectors".into()))
    }
}
