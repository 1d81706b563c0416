use std::path::{Path, PathBuf};
use std::sync::Arc;

use activeseed::active::{AlConfig, StrategyKind};
use activeseed::dataset::{
    load_dataset, load_mnist, load_schema, pca_project, synthetic, zscore_normalize, Dataset, IdxImages,
};
use activeseed::kernels::KernelKind;
use activeseed::mixture::{ViConfig, ViGrid};
use activeseed::svm::{GridPoint, GridSearchSpec, SmoConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// What to run: datasets, the strategy × kernel matrix and shared settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub datasets: Vec<DatasetEntry>,
    pub strategies: Vec<StrategyKind>,
    pub kernels: Vec<KernelKind>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Subset of fold indices to run; all folds when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_folds: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub settings: CellSettings,
    #[serde(default)]
    pub vi_grid: ViGrid,
    #[serde(default)]
    pub vi: ViConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

fn default_folds() -> usize {
    5
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    #[serde(flatten)]
    pub source: DatasetSource,
    /// Labels per run.
    pub budget: usize,
    #[serde(default = "default_true")]
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        schema: PathBuf,
    },
    TwoMoons {
        n: usize,
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    ThreeProcesses {
        n: usize,
        #[serde(default)]
        seed: u64,
    },
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        pca: Option<usize>,
    },
}

/// Overrides applied to every cell's [`AlConfig`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSearchSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperparameters: Option<GridPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smo: Option<SmoConfig>,
}

impl CellSettings {
    pub fn config(&self, strategy: StrategyKind, kernel: KernelKind, budget: usize, seed: u64) -> AlConfig {
        let mut cfg = AlConfig::new(strategy, kernel, budget);
        cfg.query_size = self.query_size;
        cfg.init_size = self.init_size;
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(e) = self.eta {
            cfg.eta = e;
        }
        if let Some(r) = self.refine {
            cfg.refine = r;
        }
        cfg.grid = self.grid.clone();
        cfg.hyperparameters = self.hyperparameters;
        if let Some(s) = self.smo {
            cfg.smo = s;
        }
        cfg.seed = seed;
        cfg
    }
}

impl RunManifest {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Manifest(m));
        if self.datasets.is_empty() || self.strategies.is_empty() || self.kernels.is_empty() {
            return bad("datasets, strategies and kernels must be non-empty".into());
        }
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate dataset name".into());
        }
        if let Some(d) = self.datasets.iter().find(|d| d.name.is_empty() || d.name.contains(['/', '\\'])) {
            return bad(format!("invalid dataset name '{}'", d.name));
        }
        if self.folds < 2 {
            return bad(format!("{} folds", self.folds));
        }
        if let Some(f) = self.run_folds.iter().flatten().find(|&&f| f >= self.folds) {
            return bad(format!("fold {f} out of {}", self.folds));
        }
        if self.jobs == Some(0) {
            return bad("jobs must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the manifest with output location and parallelism
    /// removed, since neither affects results.
    pub fn hash(&self) -> String {
        let mut m = self.clone();
        m.out = None;
        m.jobs = None;
        let bytes = serde_json::to_vec(&m).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn folds_to_run(&self) -> Vec<usize> {
        match &self.run_folds {
            Some(f) => {
                let mut f = f.clone();
                f.sort_unstable();
                f.dedup();
                f
            }
            None => (0..self.folds).collect(),
        }
    }
}

/// A dataset ready for learning, plus what the labeling views need.
pub struct LoadedDataset {
    pub entry: DatasetEntry,
    pub data: Arc<Dataset>,
    /// Features before normalization and projection.
    pub raw: Arc<Dataset>,
    pub images: Option<Arc<IdxImages>>,
}

impl DatasetEntry {
    /// Loads the data; relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<LoadedDataset, CliError> {
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        let mut images = None;
        let raw = match &self.source {
            DatasetSource::Csv { path, schema } => {
                let schema = load_schema(resolve(schema))?;
                load_dataset(resolve(path), &schema)?
            }
            DatasetSource::TwoMoons { n, noise, seed } => synthetic::two_moons(*n, *noise, *seed),
            DatasetSource::ThreeProcesses { n, seed } => synthetic::three_processes(*n, *seed),
            DatasetSource::Mnist { images: i, labels, limit, .. } => {
                let (d, imgs) = load_mnist(resolve(i), resolve(labels), *limit)?;
                images = Some(Arc::new(imgs));
                d
            }
        };
        let mut raw = raw;
        raw.provenance.name = self.name.clone();
        let mut data = raw.clone();
        if let DatasetSource::Mnist { pca: Some(k), .. } = &self.source {
            data = pca_project(&data, *k)?.0;
        }
        if self.normalize {
            data = zscore_normalize(&data)?;
        }
        Ok(LoadedDataset {
            entry: self.clone(),
            data: Arc::new(data),
            raw: Arc::new(raw),
            images,
        })
    }
}
