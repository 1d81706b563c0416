//! Pool-based active learning with a mixture-model prior.
//!
//! A [`PalSession`] is a step-wise state machine: it proposes queries,
//! accepts labels and retrains. [`run_pal`] drives one with an [`Oracle`].

mod oracle;
mod record;
mod select;
mod session;

use serde::{Deserialize, Serialize};

use crate::kernels::{KernelError, KernelKind};
use crate::mixture::{MixtureError, RefineConfig};
use crate::svm::{GridPoint, GridSearchSpec, SmoConfig, SvmError};

pub use oracle::{ChannelOracle, Oracle, SimulatedOracle};
pub use record::{read_jsonl, write_jsonl, AlRunRecord, RoundRecord};
pub use select::{
    density_init, distribution_score, diversity_score, score_4ds_criteria, select_4ds, select_random, select_us, Criteria,
    FourDsInput, Weights,
};
pub use session::{fit_initial_model, run_pal, Checkpoint, PalSession};

#[derive(Debug, thiserror::Error)]
pub enum ActiveError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("the label budget is exhausted")]
    Finished,
    #[error("sample {0} was not queried")]
    NotQueried(usize),
    #[error("no label for queried sample {0}")]
    MissingLabel(usize),
    #[error("class {class} out of range for sample {id}")]
    BadLabel { id: usize, class: usize },
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("checkpoint diverges from replay in round {0}")]
    CheckpointMismatch(usize),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "us")]
    Uncertainty,
    #[serde(rename = "4ds")]
    FourDs,
}

impl StrategyKind {
    /// Samples queried between retrains unless configured otherwise.
    pub fn default_query_size(self) -> usize {
        match self {
            StrategyKind::FourDs => 5,
            _ => 1,
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StrategyKind::Random => "random",
            StrategyKind::Uncertainty => "us",
            StrategyKind::FourDs => "4ds",
        })
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = ActiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(StrategyKind::Random),
            "us" => Ok(StrategyKind::Uncertainty),
            "4ds" => Ok(StrategyKind::FourDs),
            other => Err(ActiveError::Invalid(format!("unknown strategy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlConfig {
    pub strategy: StrategyKind,
    pub kernel: KernelKind,
    /// Labels to collect in total.
    pub budget: usize,
    /// Queries per round after initialization; `None` uses the strategy default.
    #[serde(default)]
    pub query_size: Option<usize>,
    /// Size of the initialization round; `None` means four per class.
    #[serde(default)]
    pub init_size: Option<usize>,
    /// Weight of the diversity criterion.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Weight step of the criteria adaptation.
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_true")]
    pub refine: bool,
    #[serde(default)]
    pub refine_config: RefineConfig,
    /// `None` uses the default grid for the kernel and data.
    #[serde(default)]
    pub grid: Option<GridSearchSpec>,
    /// Skips tuning when set.
    #[serde(default)]
    pub hyperparameters: Option<GridPoint>,
    #[serde(default)]
    pub smo: SmoConfig,
    #[serde(default)]
    pub seed: u64,
    /// Store wall-clock time per round (makes records non-reproducible).
    #[serde(default)]
    pub record_timing: bool,
}

fn default_lambda() -> f64 {
    0.3
}

fn default_eta() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

impl AlConfig {
    pub fn new(strategy: StrategyKind, kernel: KernelKind, budget: usize) -> Self {
        AlConfig {
            strategy,
            kernel,
            budget,
            query_size: None,
            init_size: None,
            lambda: default_lambda(),
            eta: default_eta(),
            refine: true,
            refine_config: RefineConfig::default(),
            grid: None,
            hyperparameters: None,
            smo: SmoConfig::default(),
            seed: 0,
            record_timing: false,
        }
    }

    pub fn query_size(&self) -> usize {
        self.query_size.unwrap_or_else(|| self.strategy.default_query_size())
    }

    pub fn init_size(&self, n_classes: usize) -> usize {
        self.init_size.unwrap_or(4 * n_classes)
    }

    pub fn validate(&self, n_classes: usize, pool: usize) -> Result<(), ActiveError> {
        let m = self.init_size(n_classes);
        if m == 0 || m > self.budget {
            return Err(ActiveError::Invalid(format!("initial size {m} with budget {}", self.budget)));
        }
        if self.budget > pool {
            return Err(ActiveError::Invalid(format!("budget {} exceeds pool of {pool}", self.budget)));
        }
        let k = self.query_size();
        if k == 0 || k > self.budget {
            return Err(ActiveError::Invalid(format!("query size {k}")));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ActiveError::Invalid(format!("lambda {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(ActiveError::Invalid(format!("eta {}", self.eta)));
        }
        Ok(())
    }
}
