//! Run configuration for the end-to-end pipeline.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channels::ChannelId;
use crate::curation::{TierCutoffs, DEFAULT_CUTOFFS, DEFAULT_PER_PROBE};
use crate::error::{Error, Result};
use crate::eval::DEFAULT_PROBES;
use crate::fusion::{EnsembleSpec, FusionMode};
use crate::retrieval::{BrandFilter, DEFAULT_K};
use crate::standardize::DEFAULT_SAMPLE_SIZE;
use crate::textio::read_text;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPaths {
    pub queries: PathBuf,
    pub gallery: PathBuf,
    #[serde(default)]
    pub descriptions: Option<PathBuf>,
    #[serde(default)]
    pub boxes: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingPaths {
    pub query_image: PathBuf,
    pub gallery_image: PathBuf,
    #[serde(default)]
    pub gallery_text: Option<PathBuf>,
    #[serde(default)]
    pub gallery_bbox: Option<PathBuf>,
}

/// A precomputed score table from a model outside the embedding channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalTable {
    pub model: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    #[serde(default = "default_k")]
    pub k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { k: DEFAULT_K }
    }
}

fn default_k() -> usize {
    DEFAULT_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            sample_size: DEFAULT_SAMPLE_SIZE,
            seed: 0,
        }
    }
}

fn default_sample_size() -> usize {
    DEFAULT_SAMPLE_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurationConfig {
    #[serde(default = "default_cutoffs")]
    pub cutoffs: Vec<usize>,
    #[serde(default = "default_probes")]
    pub probes: Vec<u64>,
    #[serde(default = "default_per_probe")]
    pub per_probe: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            cutoffs: default_cutoffs(),
            probes: default_probes(),
            per_probe: DEFAULT_PER_PROBE,
            seed: 0,
        }
    }
}

fn default_cutoffs() -> Vec<usize> {
    DEFAULT_CUTOFFS.to_vec()
}

fn default_probes() -> Vec<u64> {
    DEFAULT_PROBES.to_vec()
}

fn default_per_probe() -> usize {
    DEFAULT_PER_PROBE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub corpus: CorpusPaths,
    pub embeddings: EmbeddingPaths,
    #[serde(default)]
    pub external: Vec<ExternalTable>,
    pub ensemble: EnsembleSpec,
    /// Brand prefilter for retrieval; absent means no filtering.
    #[serde(default)]
    pub brand: Option<BrandFilter>,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub curation: CurationConfig,
    /// Hash of the config as written, before path resolution.
    #[serde(skip)]
    fingerprint: Option<String>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses and validates a config file. Relative paths are resolved
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&read_text(path)?)?;
        cfg.fingerprint = Some(cfg.hash());
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.corpus.queries);
        fix(&mut self.corpus.gallery);
        if let Some(p) = self.corpus.descriptions.as_mut() {
            fix(p);
        }
        if let Some(p) = self.corpus.boxes.as_mut() {
            fix(p);
        }
        fix(&mut self.embeddings.query_image);
        fix(&mut self.embeddings.gallery_image);
        if let Some(p) = self.embeddings.gallery_text.as_mut() {
            fix(p);
        }
        if let Some(p) = self.embeddings.gallery_bbox.as_mut() {
            fix(p);
        }
        for e in &mut self.external {
            fix(&mut e.path);
        }
    }

    /// Models the configured inputs can produce, in a fixed order.
    pub fn available_models(&self) -> Vec<String> {
        let mut out = vec![ChannelId::Fi2i.model_name().to_string()];
        if self.embeddings.gallery_text.is_some() {
            out.push(ChannelId::T2i.model_name().to_string());
        }
        if self.embeddings.gallery_bbox.is_some() {
            out.push(ChannelId::Bb2i.model_name().to_string());
        }
        out.push(ChannelId::I2i.model_name().to_string());
        out.extend(self.external.iter().map(|e| e.model.clone()));
        out
    }

    pub fn cutoffs(&self) -> Result<TierCutoffs> {
        TierCutoffs::from_slice(&self.curation.cutoffs)
    }

    /// Checks everything that can be checked before any scoring starts.
    pub fn validate(&self) -> Result<()> {
        self.ensemble.validate()?;
        if self.ensemble.mode != FusionMode::SecondHighestTruncated {
            return Err(Error::Config(
                "the pipeline fuses truncated candidate lists; ensemble mode must be second_highest_truncated".into(),
            ));
        }

        let mut names = BTreeSet::new();
        for e in &self.external {
            if e.model.parse::<ChannelId>().is_ok() {
                return Err(Error::Config(format!("external model {:?} shadows a channel", e.model)));
            }
            if !names.insert(e.model.as_str()) {
                return Err(Error::Config(format!("external model {:?} listed twice", e.model)));
            }
        }
        let available = self.available_models();
        for m in &self.ensemble.members {
            if !available.contains(m) {
                return Err(Error::MissingMember(m.clone()));
            }
        }

        if let Some(b) = &self.brand {
            b.validate()?;
        }
        if self.retrieval.k == 0 {
            return Err(Error::Config("retrieval k must be at least 1".into()));
        }
        if self.calibration.sample_size < 2 {
            return Err(Error::Config("calibration sample_size must be at least 2".into()));
        }
        self.cutoffs()?;
        if self.curation.per_probe == 0 {
            return Err(Error::Config("per_probe must be at least 1".into()));
        }
        if let Some(p) = self.curation.probes.iter().find(|&&p| p == 0) {
            return Err(Error::Config(format!("probe index {p}; probes are 1-based")));
        }

        for path in self.input_paths() {
            if !path.is_file() {
                return Err(Error::Config(format!("input {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn input_paths(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = vec![&self.corpus.queries, &self.corpus.gallery];
        out.extend(self.corpus.descriptions.as_deref());
        out.extend(self.corpus.boxes.as_deref());
        out.push(&self.embeddings.query_image);
        out.push(&self.embeddings.gallery_image);
        out.extend(self.embeddings.gallery_text.as_deref());
        out.extend(self.embeddings.gallery_bbox.as_deref());
        out.extend(self.external.iter().map(|e| e.path.as_path()));
        out
    }

    /// Hex SHA-256 of the canonical JSON form. A loaded config hashes as
    /// written, so moving the whole run directory keeps the hash.
    pub fn hash(&self) -> String {
        if let Some(h) = &self.fingerprint {
            return h.clone();
        }
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    /// Header fields stamped on every pipeline output.
    pub fn provenance(&self) -> Vec<(String, String)> {
        vec![
            ("config".to_string(), self.hash()),
            ("calibration_seed".to_string(), self.calibration.seed.to_string()),
            ("curation_seed".to_string(), self.curation.seed.to_string()),
        ]
    }
}
