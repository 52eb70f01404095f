//! Run configuration: JSON config file, method presets, CLI overrides, and
//! the fully-resolved form that every run writes into its manifest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use harmsim_core::error::{Error, Result};
use harmsim_core::federation::{AggregationStrategy, Hyper, PhaseGranularity, TrainingMode};
use harmsim_core::losses::TaskLoss;
use harmsim_core::model::NetworkSpec;
use harmsim_core::synthdata::{self, CsvSchema, SiteDataset};

/// Method presets mapping onto the aggregation/prox/harmonisation lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Fedavg,
    Fedprox,
    Fedequal,
    Fedharmony,
    AblationA,
    AblationB,
    AblationC,
}

impl Method {
    /// (equal aggregation, proximal term, harmonisation phases)
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            Method::Fedavg => (false, false, false),
            Method::Fedprox => (false, true, false),
            Method::Fedequal => (true, false, false),
            Method::Fedharmony => (true, true, true),
            Method::AblationA => (false, false, true),
            Method::AblationB => (true, false, true),
            Method::AblationC => (false, true, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Fedavg => "fedavg",
            Method::Fedprox => "fedprox",
            Method::Fedequal => "fedequal",
            Method::Fedharmony => "fedharmony",
            Method::AblationA => "ablation-a",
            Method::AblationB => "ablation-b",
            Method::AblationC => "ablation-c",
        }
    }
}

/// Where the site data comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
#[derive(Default)]
pub enum DataSource {
    #[default]
    Generate,
    Csv {
        path: PathBuf,
        #[serde(default = "default_site_column")]
        site_column: String,
        #[serde(default = "default_target_column")]
        target_column: Option<String>,
        #[serde(default)]
        require_labels: bool,
    },
}

fn default_site_column() -> String {
    "site".into()
}

fn default_target_column() -> Option<String> {
    Some("target".into())
}


/// On-disk configuration. Unknown keys are rejected. Every field has a
/// default, so an empty JSON object is a valid config.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub method: Option<Method>,
    /// Explicit lattice flags; each overrides the preset when set.
    pub equal: Option<bool>,
    pub prox: Option<bool>,
    pub harmonize: Option<bool>,
    /// Empty means every labeled site trains.
    pub labeled_sites: Vec<String>,

    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub local_epochs: Option<usize>,
    pub mu: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub max_rounds: Option<u64>,
    pub patience: Option<u64>,

    pub task_loss: Option<TaskLoss>,
    pub granularity: Option<PhaseGranularity>,
    pub domain_steps: Option<usize>,
    pub confusion_steps: Option<usize>,

    pub input_dim: Option<usize>,
    pub feature_dim: Option<usize>,
    pub repr_hidden: Option<Vec<usize>>,
    pub pred_hidden: Option<Vec<usize>>,
    pub dom_hidden: Option<Vec<usize>>,

    pub data: Option<DataSource>,
    pub noise_sd: Option<f64>,
    /// Worker cap for `compare`; the HARMSIM_THREADS env var overrides.
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }
}

/// Command-line overrides shared by the subcommands; flags beat file values.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub labeled_sites: Option<Vec<String>>,
    pub out: Option<PathBuf>,
}

/// Fully-resolved configuration; written verbatim into each run's manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub method: String,
    pub strategy: AggregationStrategy,
    pub equal: bool,
    pub prox: bool,
    pub harmonize: bool,
    pub labeled_sites: Vec<String>,
    pub hyper: Hyper,
    pub task_loss: TaskLoss,
    pub granularity: PhaseGranularity,
    pub domain_steps: usize,
    pub confusion_steps: usize,
    pub input_dim: usize,
    pub feature_dim: usize,
    pub repr_hidden: Vec<usize>,
    pub pred_hidden: Vec<usize>,
    pub dom_hidden: Vec<usize>,
    pub data: DataSource,
    pub noise_sd: f64,
    pub threads: Option<usize>,
}

impl ResolvedConfig {
    pub fn resolve(file: RunConfig, cli: &CliOverrides) -> Result<Self> {
        let method = cli.method.or(file.method);
        let (preset_equal, preset_prox, preset_harm) =
            method.map(Method::flags).unwrap_or((false, false, false));
        let equal = file.equal.unwrap_or(preset_equal);
        let prox = file.prox.unwrap_or(preset_prox);
        let harmonize = file.harmonize.unwrap_or(preset_harm);
        let defaults = Hyper::default();
        let hyper = Hyper {
            batch_size: file.batch_size.unwrap_or(defaults.batch_size),
            lr: file.lr.unwrap_or(defaults.lr),
            local_epochs: file.local_epochs.unwrap_or(defaults.local_epochs),
            mu: file.mu.unwrap_or(defaults.mu),
            alpha: file.alpha.unwrap_or(defaults.alpha),
            beta: file.beta.unwrap_or(defaults.beta),
            max_rounds: file.max_rounds.unwrap_or(defaults.max_rounds),
            patience: file.patience.unwrap_or(defaults.patience),
        };
        hyper.validate()?;
        let default_mode = TrainingMode::new(BTreeSet::new());
        let resolved = Self {
            seed: cli.seed.or(file.seed).unwrap_or(1),
            out_dir: cli
                .out
                .clone()
                .or(file.out_dir)
                .unwrap_or_else(|| PathBuf::from("runs/out")),
            method: method.map(|m| m.name().to_string()).unwrap_or_else(|| {
                format!(
                    "custom(equal={equal},prox={prox},harm={harmonize})"
                )
            }),
            strategy: if equal {
                AggregationStrategy::FedEqual
            } else {
                AggregationStrategy::FedAvg
            },
            equal,
            prox,
            harmonize,
            labeled_sites: cli
                .labeled_sites
                .clone()
                .unwrap_or(file.labeled_sites),
            hyper,
            task_loss: file.task_loss.unwrap_or_default(),
            granularity: file.granularity.unwrap_or_default(),
            domain_steps: file.domain_steps.unwrap_or(default_mode.domain_steps),
            confusion_steps: file
                .confusion_steps
                .unwrap_or(default_mode.confusion_steps),
            input_dim: file.input_dim.unwrap_or(synthdata::DEFAULT_INPUT_DIM),
            feature_dim: file.feature_dim.unwrap_or(synthdata::DEFAULT_FEATURE_DIM),
            repr_hidden: file.repr_hidden.unwrap_or_else(|| vec![64, 32]),
            pred_hidden: file.pred_hidden.unwrap_or_else(|| vec![32]),
            dom_hidden: file.dom_hidden.unwrap_or_else(|| vec![32]),
            data: file.data.unwrap_or_default(),
            noise_sd: file.noise_sd.unwrap_or(synthdata::DEFAULT_NOISE_SD),
            threads: file.threads,
        };
        if resolved.input_dim < 2 || resolved.feature_dim == 0 {
            return Err(Error::Config("network dims must be positive".into()));
        }
        Ok(resolved)
    }

    pub fn with_method(&self, method: Method) -> Self {
        let (equal, prox, harmonize) = method.flags();
        Self {
            method: method.name().to_string(),
            strategy: if equal {
                AggregationStrategy::FedEqual
            } else {
                AggregationStrategy::FedAvg
            },
            equal,
            prox,
            harmonize,
            ..self.clone()
        }
    }

    /// Load or synthesize the site datasets.
    pub fn datasets(&self) -> Result<Vec<SiteDataset>> {
        match &self.data {
            DataSource::Generate => {
                if self.input_dim == synthdata::DEFAULT_INPUT_DIM {
                    synthdata::default_benchmark(self.seed)
                } else {
                    let specs = synthdata::default_site_specs(self.input_dim, self.seed);
                    synthdata::generate_multisite(
                        &specs,
                        self.input_dim,
                        synthdata::SignalKind::default(),
                        self.noise_sd,
                        self.seed,
                    )
                }
            }
            DataSource::Csv {
                path,
                site_column,
                target_column,
                require_labels,
            } => {
                let schema = CsvSchema {
                    site_column: site_column.clone(),
                    target_column: target_column.clone(),
                    require_labels: *require_labels,
                };
                synthdata::load_csv(path, &schema, (0.7, 0.1, 0.2), self.seed)
            }
        }
    }

    pub fn network_spec(&self, n_sites: usize) -> NetworkSpec {
        let mut repr_layers = self.repr_hidden.clone();
        repr_layers.push(self.feature_dim);
        let mut pred_layers = self.pred_hidden.clone();
        pred_layers.push(1);
        let mut dom_layers = self.dom_hidden.clone();
        dom_layers.push(n_sites);
        NetworkSpec {
            input_dim: self.input_dim,
            repr_layers,
            pred_layers,
            dom_layers,
        }
    }

    /// Training mode against a concrete dataset list. An empty
    /// `labeled_sites` config means every labeled dataset trains.
    pub fn training_mode(&self, datasets: &[SiteDataset]) -> Result<TrainingMode> {
        let labeled: BTreeSet<String> = if self.labeled_sites.is_empty() {
            datasets
                .iter()
                .filter(|d| d.labeled)
                .map(|d| d.site_id.clone())
                .collect()
        } else {
            self.labeled_sites.iter().cloned().collect()
        };
        if labeled.is_empty() {
            return Err(Error::Config("no labeled sites available".into()));
        }
        Ok(TrainingMode {
            harmonize: self.harmonize,
            prox: self.prox,
            labeled_sites: labeled,
            task: self.task_loss,
            granularity: self.granularity,
            domain_steps: self.domain_steps,
            confusion_steps: self.confusion_steps,
        })
    }
}
