//! Protocol engine: broadcast, knowledge-store refresh, local three-phase
//! adversarial training, weight aggregation, and the round loop with
//! validation-based early stopping.
//!
//! Rounds are barriers. Within a round every site works on a private copy of
//! the global weights and a read-only view of the knowledge store; per-site
//! seeds are derived from (root seed, round, site), so execution order can
//! never change results. The coordinator is the only writer of
//! [`ProtocolState`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::knowledge::{assemble_mixed_batch, summarize_features, FeatureSummary, KnowledgeStore};
use crate::losses::TaskLoss;
use crate::model::{
    backward_confusion, backward_domain, backward_task, feature_extract, init_params, Component,
    ModelParams, NetworkSpec,
};
use crate::ndcore::{adam_update, AdamState};
use crate::seeding::mix_seed;
use crate::synthdata::{SiteDataset, Split};

/// Protocol hyperparameters, shared by every site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub batch_size: usize,
    pub lr: f64,
    pub local_epochs: usize,
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub max_rounds: u64,
    pub patience: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr: 1e-4,
            local_epochs: 10,
            mu: 0.01,
            alpha: 1.0,
            beta: 100.0,
            max_rounds: 200,
            patience: 60,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.local_epochs == 0 || self.max_rounds == 0 {
            return Err(Error::Config("counts in Hyper must be positive".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.mu < 0.0 || self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        Ok(())
    }
}

/// How local updates are combined each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationStrategy {
    /// Weighted by local training-sample counts.
    FedAvg,
    /// Equal contribution per site.
    FedEqual,
}

impl std::fmt::Display for AggregationStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AggregationStrategy::FedAvg => write!(f, "fedavg"),
            AggregationStrategy::FedEqual => write!(f, "fedequal"),
        }
    }
}

/// Whether the three training phases run per minibatch (default) or as three
/// full passes per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseGranularity {
    #[default]
    PerBatch,
    PerEpoch,
}

/// Switchboard for the method lattice: harmonisation phases on/off, proximal
/// term on/off, and which sites train locally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMode {
    pub harmonize: bool,
    pub prox: bool,
    pub labeled_sites: BTreeSet<String>,
    #[serde(default)]
    pub task: TaskLoss,
    #[serde(default)]
    pub granularity: PhaseGranularity,
    /// Domain-predictor steps per adversarial cycle.
    #[serde(default = "default_domain_steps")]
    pub domain_steps: usize,
    /// Confusion steps per adversarial cycle.
    #[serde(default = "default_confusion_steps")]
    pub confusion_steps: usize,
}

pub(crate) fn default_domain_steps() -> usize {
    5
}

pub(crate) fn default_confusion_steps() -> usize {
    1
}

impl TrainingMode {
    pub fn new(labeled_sites: BTreeSet<String>) -> Self {
        Self {
            harmonize: false,
            prox: false,
            labeled_sites,
            task: TaskLoss::default(),
            granularity: PhaseGranularity::default(),
            domain_steps: default_domain_steps(),
            confusion_steps: default_confusion_steps(),
        }
    }
}

/// Coordinator-side state between rounds.
#[derive(Debug, Clone)]
pub struct ProtocolState {
    pub round: u64,
    pub global_params: ModelParams<f64>,
    pub store: KnowledgeStore<f64>,
    pub best_val_mae: f64,
    pub rounds_since_improvement: u64,
}

/// Step 2: every site receives the same weights and the full store.
pub fn broadcast(
    state: &ProtocolState,
    n_sites: usize,
) -> Vec<(ModelParams<f64>, KnowledgeStore<f64>)> {
    (0..n_sites)
        .map(|_| (state.global_params.clone(), state.store.clone()))
        .collect()
}

/// Step 3: fresh per-site feature summaries under the current extractor.
/// Every site contributes, labeled or not.
pub fn update_knowledge(
    params: &ModelParams<f64>,
    datasets: &[SiteDataset],
    round_tag: u64,
) -> Result<KnowledgeStore<f64>> {
    let mut store = KnowledgeStore::new(round_tag);
    for (idx, ds) in datasets.iter().enumerate() {
        let rows = ds.rows_of(Split::Train);
        if rows.len() < 2 {
            return Err(Error::InsufficientData {
                site: ds.site_id.clone(),
                rows: rows.len(),
                min: 2,
            });
        }
        let q = feature_extract(&ds.x.select_rows(&rows), params)?;
        store.insert(idx, summarize_features(&q, &ds.site_id)?)?;
    }
    Ok(store)
}

/// Loss diagnostics from one site's local round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalMetrics {
    pub mean_task_loss: f64,
    pub mean_domain_loss: Option<f64>,
    pub mean_confusion_loss: Option<f64>,
    pub steps: usize,
}

struct PhaseRunner<'a> {
    params: ModelParams<f64>,
    anchor: &'a ModelParams<f64>,
    store: &'a KnowledgeStore<f64>,
    hyper: &'a Hyper,
    mode: &'a TrainingMode,
    site_index: usize,
    site_id: &'a str,
    round: u64,
    seed: u64,
    repr_state: AdamState<f64>,
    pred_state: AdamState<f64>,
    dom_state: AdamState<f64>,
    task_losses: Vec<f64>,
    domain_losses: Vec<f64>,
    confusion_losses: Vec<f64>,
}

impl<'a> PhaseRunner<'a> {
    fn check_finite(&self, loss: f64, epoch: usize, phase: usize) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Divergence {
                site: self.site_id.to_string(),
                round: self.round,
                epoch,
                phase,
                value: loss,
            });
        }
        Ok(())
    }

    fn step_component(
        component: &mut Component<f64>,
        state: &mut AdamState<f64>,
        grads: &[f64],
    ) -> Result<()> {
        let mut flat = component.flatten();
        adam_update(&mut flat, grads, state)?;
        component.assign_flat(&flat)
    }

    /// Phase 1: joint Adam step on extractor and predictor under the task
    /// objective (plus the proximal pull when enabled).
    fn phase_task(
        &mut self,
        x: &crate::ndcore::Matrix<f64>,
        y: &[f64],
        epoch: usize,
    ) -> Result<()> {
        let mu = if self.mode.prox { self.hyper.mu } else { 0.0 };
        let out = backward_task(x, y, &self.params, self.anchor, mu, self.mode.task)?;
        self.check_finite(out.loss, epoch, 1)?;
        Self::step_component(&mut self.params.repr, &mut self.repr_state, &out.repr.flatten())?;
        Self::step_component(&mut self.params.pred, &mut self.pred_state, &out.pred.flatten())?;
        self.task_losses.push(out.loss);
        Ok(())
    }

    /// Phase 2: Adam step on the domain predictor over the mixed batch.
    fn phase_domain(
        &mut self,
        x: &crate::ndcore::Matrix<f64>,
        epoch: usize,
        batch_index: usize,
    ) -> Result<()> {
        let q = feature_extract(x, &self.params)?;
        let batch_seed = mix_seed(self.seed, &[epoch as u64, batch_index as u64, 2]);
        let mixed = assemble_mixed_batch(&q, self.site_index, self.store, batch_seed)?;
        let out = backward_domain(&mixed.q, &mixed.d, &self.params)?;
        self.check_finite(out.loss, epoch, 2)?;
        let grads: Vec<f64> = out
            .dom
            .flatten()
            .into_iter()
            .map(|g| self.hyper.alpha * g)
            .collect();
        Self::step_component(&mut self.params.dom, &mut self.dom_state, &grads)?;
        self.domain_losses.push(out.loss);
        Ok(())
    }

    /// Phase 3: Adam step on the extractor under the confusion loss, domain
    /// predictor held fixed.
    fn phase_confusion(
        &mut self,
        x: &crate::ndcore::Matrix<f64>,
        epoch: usize,
    ) -> Result<()> {
        let out = backward_confusion(x, &self.params)?;
        self.check_finite(out.loss, epoch, 3)?;
        let grads: Vec<f64> = out
            .repr
            .flatten()
            .into_iter()
            .map(|g| self.hyper.beta * g)
            .collect();
        Self::step_component(&mut self.params.repr, &mut self.repr_state, &grads)?;
        self.confusion_losses.push(out.loss);
        Ok(())
    }
}

/// Step 4: E local epochs of the three-phase update on one site. Phases 2
/// and 3 are skipped when harmonisation is off; the proximal weight is
/// forced to zero when prox is off. Deterministic in the seed.
pub fn local_round(
    ds: &SiteDataset,
    site_index: usize,
    global: &(ModelParams<f64>, KnowledgeStore<f64>),
    hyper: &Hyper,
    mode: &TrainingMode,
    seed: u64,
    round: u64,
) -> Result<(ModelParams<f64>, LocalMetrics)> {
    let (global_params, store) = global;
    let y_all = ds.y.as_ref().ok_or_else(|| {
        Error::Protocol(format!("site {} cannot train without targets", ds.site_id))
    })?;
    let train_rows = ds.rows_of(Split::Train);
    if train_rows.is_empty() {
        return Err(Error::InsufficientData {
            site: ds.site_id.clone(),
            rows: 0,
            min: 1,
        });
    }

    let mut runner = PhaseRunner {
        params: global_params.clone(),
        anchor: global_params,
        store,
        hyper,
        mode,
        site_index,
        site_id: &ds.site_id,
        round,
        seed,
        repr_state: AdamState::new(global_params.repr.param_len(), hyper.lr),
        pred_state: AdamState::new(global_params.pred.param_len(), hyper.lr),
        dom_state: AdamState::new(global_params.dom.param_len(), hyper.lr),
        task_losses: Vec::new(),
        domain_losses: Vec::new(),
        confusion_losses: Vec::new(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0xEC]));
    for epoch in 0..hyper.local_epochs {
        let mut order = train_rows.clone();
        order.shuffle(&mut rng);
        let batches: Vec<Vec<usize>> = order
            .chunks(hyper.batch_size)
            .map(|c| c.to_vec())
            .collect();
        let batch_xy = |batch: &[usize]| {
            let x = ds.x.select_rows(batch);
            let y: Vec<f64> = batch.iter().map(|&r| y_all[r]).collect();
            (x, y)
        };
        let dom_steps = mode.domain_steps.max(1);
        let conf_steps = mode.confusion_steps.max(1);
        match mode.granularity {
            PhaseGranularity::PerBatch => {
                for (bi, batch) in batches.iter().enumerate() {
                    let (x, y) = batch_xy(batch);
                    runner.phase_task(&x, &y, epoch)?;
                    if mode.harmonize {
                        for it in 0..dom_steps {
                            runner.phase_domain(&x, epoch, bi * dom_steps + it)?;
                        }
                        for _ in 0..conf_steps {
                            runner.phase_confusion(&x, epoch)?;
                        }
                    }
                }
            }
            PhaseGranularity::PerEpoch => {
                for batch in &batches {
                    let (x, y) = batch_xy(batch);
                    runner.phase_task(&x, &y, epoch)?;
                }
                if mode.harmonize {
                    for it in 0..dom_steps {
                        for (bi, batch) in batches.iter().enumerate() {
                            let (x, _) = batch_xy(batch);
                            runner.phase_domain(&x, epoch, bi * dom_steps + it)?;
                        }
                    }
                    for _ in 0..conf_steps {
                        for batch in &batches {
                            let (x, _) = batch_xy(batch);
                            runner.phase_confusion(&x, epoch)?;
                        }
                    }
                }
            }
        }
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let metrics = LocalMetrics {
        mean_task_loss: mean(&runner.task_losses),
        mean_domain_loss: (!runner.domain_losses.is_empty()).then(|| mean(&runner.domain_losses)),
        mean_confusion_loss: (!runner.confusion_losses.is_empty())
            .then(|| mean(&runner.confusion_losses)),
        steps: runner.task_losses.len(),
    };
    Ok((runner.params, metrics))
}

/// Coordinate-wise weighted mean, separately per component. Shared by both
/// strategies so equal weights produce bit-identical results through either
/// entry point.
fn weighted_mean_params(
    params: &[&ModelParams<f64>],
    weights: &[f64],
) -> Result<ModelParams<f64>> {
    let first = params[0];
    let combine = |select: fn(&ModelParams<f64>) -> &Component<f64>| -> Result<Component<f64>> {
        let dims = select(first).dims();
        for p in params {
            if select(p).dims() != dims {
                return Err(Error::dim(
                    "aggregation",
                    format!("{:?}", dims),
                    format!("{:?}", select(p).dims()),
                ));
            }
        }
        let mut acc = vec![0.0; select(first).param_len()];
        for (p, &w) in params.iter().zip(weights) {
            for (a, v) in acc.iter_mut().zip(select(p).flatten()) {
                *a += w * v;
            }
        }
        Component::from_flat(&dims, &acc)
    };
    Ok(ModelParams {
        repr: combine(|p| &p.repr)?,
        pred: combine(|p| &p.pred)?,
        dom: combine(|p| &p.dom)?,
    })
}

/// Step 5, sample-weighted: coordinate-wise mean with weights N_h / sum N.
pub fn aggregate_fedavg(updates: &[(ModelParams<f64>, usize)]) -> Result<ModelParams<f64>> {
    if updates.is_empty() {
        return Err(Error::EmptyInput("aggregation updates".into()));
    }
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::EmptyInput("aggregation sample counts".into()));
    }
    let params: Vec<&ModelParams<f64>> = updates.iter().map(|(p, _)| p).collect();
    let weights: Vec<f64> = updates
        .iter()
        .map(|(_, n)| *n as f64 / total as f64)
        .collect();
    weighted_mean_params(&params, &weights)
}

/// Step 5, site-equal: plain mean over sites, separately per component.
pub fn aggregate_fedequal(updates: &[ModelParams<f64>]) -> Result<ModelParams<f64>> {
    if updates.is_empty() {
        return Err(Error::EmptyInput("aggregation updates".into()));
    }
    let params: Vec<&ModelParams<f64>> = updates.iter().collect();
    let h = updates.len() as f64;
    let weights = vec![1.0 / h; updates.len()];
    weighted_mean_params(&params, &weights)
}

/// Everything one site sends to the coordinator in one round. The wire form
/// of this struct is the complete privacy surface: one weight set (labeled
/// sites only) and one per-feature Gaussian summary. No per-row data.
#[derive(Debug, Clone)]
pub struct SiteUpload {
    pub site_id: String,
    pub summary: FeatureSummary<f64>,
    pub params: Option<ModelParams<f64>>,
}

/// Flat wire encoding of model weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlatParams {
    pub repr: Vec<f64>,
    pub pred: Vec<f64>,
    pub dom: Vec<f64>,
}

impl FlatParams {
    pub fn from_params(params: &ModelParams<f64>) -> Self {
        Self {
            repr: params.repr.flatten(),
            pred: params.pred.flatten(),
            dom: params.dom.flatten(),
        }
    }
}

#[derive(Serialize)]
struct SiteUploadWire<'a> {
    site_id: &'a str,
    summary: &'a FeatureSummary<f64>,
    params: Option<FlatParams>,
}

impl SiteUpload {
    /// The exact bytes that cross the site-to-coordinator boundary.
    pub fn wire_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&SiteUploadWire {
            site_id: &self.site_id,
            summary: &self.summary,
            params: self.params.as_ref().map(FlatParams::from_params),
        })?)
    }
}

/// One line of the JSON-lines round log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub per_site_train_loss: BTreeMap<String, f64>,
    pub per_site_val_mae: BTreeMap<String, f64>,
    pub mean_val_mae: f64,
    pub aggregation: String,
}

/// Outcome of one full round, exposed for auditing and tests.
pub struct RoundOutcome {
    pub uploads: Vec<SiteUpload>,
    pub record: RoundRecord,
}

/// Execute one round: refresh the store, run labeled sites' local training,
/// aggregate, and score validation MAE. Mutates `state` in place.
pub fn execute_round(
    state: &mut ProtocolState,
    datasets: &[SiteDataset],
    hyper: &Hyper,
    strategy: AggregationStrategy,
    mode: &TrainingMode,
    root_seed: u64,
) -> Result<RoundOutcome> {
    let round = state.round;
    state.store = update_knowledge(&state.global_params, datasets, round)?;

    let mut uploads = Vec::with_capacity(datasets.len());
    let mut per_site_train_loss = BTreeMap::new();
    for (idx, ds) in datasets.iter().enumerate() {
        let summary = state
            .store
            .get(idx)
            .expect("store was just rebuilt for every site")
            .clone();
        let trains = ds.labeled && mode.labeled_sites.contains(&ds.site_id);
        if trains {
            // conceptually the broadcast copy; sites own their clone
            let global = (state.global_params.clone(), state.store.clone());
            let seed = mix_seed(root_seed, &[round, idx as u64]);
            let (params, metrics) = local_round(ds, idx, &global, hyper, mode, seed, round)?;
            per_site_train_loss.insert(ds.site_id.clone(), metrics.mean_task_loss);
            uploads.push(SiteUpload {
                site_id: ds.site_id.clone(),
                summary,
                params: Some(params),
            });
        } else {
            uploads.push(SiteUpload {
                site_id: ds.site_id.clone(),
                summary,
                params: None,
            });
        }
    }

    let trained: Vec<&SiteUpload> = uploads.iter().filter(|u| u.params.is_some()).collect();
    if trained.is_empty() {
        return Err(Error::Protocol(
            "no labeled site produced an update this round".into(),
        ));
    }
    state.global_params = match strategy {
        AggregationStrategy::FedAvg => {
            let pairs: Vec<(ModelParams<f64>, usize)> = trained
                .iter()
                .map(|u| (u.params.clone().unwrap(), u.summary.n_samples))
                .collect();
            aggregate_fedavg(&pairs)?
        }
        AggregationStrategy::FedEqual => {
            let list: Vec<ModelParams<f64>> =
                trained.iter().map(|u| u.params.clone().unwrap()).collect();
            aggregate_fedequal(&list)?
        }
    };
    if !state.global_params.is_finite() {
        return Err(Error::Divergence {
            site: "aggregate".into(),
            round,
            epoch: 0,
            phase: 5,
            value: f64::NAN,
        });
    }

    // validation MAE on sites the protocol may see labels for
    let all_val = eval::mae_per_site(&state.global_params, datasets, Split::Val)?;
    let per_site_val_mae: BTreeMap<String, f64> = all_val
        .into_iter()
        .filter(|(site, _)| mode.labeled_sites.contains(site))
        .collect();
    if per_site_val_mae.is_empty() {
        return Err(Error::Protocol("no labeled site has validation rows".into()));
    }
    let mean_val_mae = eval::average_mae(&per_site_val_mae);

    if mean_val_mae < state.best_val_mae {
        state.best_val_mae = mean_val_mae;
        state.rounds_since_improvement = 0;
    } else {
        state.rounds_since_improvement += 1;
    }
    state.round += 1;

    Ok(RoundOutcome {
        uploads,
        record: RoundRecord {
            round,
            per_site_train_loss,
            per_site_val_mae,
            mean_val_mae,
            aggregation: strategy.to_string(),
        },
    })
}

/// A finished protocol run: the best-validation snapshot and the round log.
#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub best_params: ModelParams<f64>,
    pub best_round: u64,
    pub best_val_mae: f64,
    pub rounds_run: u64,
    pub records: Vec<RoundRecord>,
}

fn validate_inputs(
    datasets: &[SiteDataset],
    spec: &NetworkSpec,
    hyper: &Hyper,
    mode: &TrainingMode,
) -> Result<()> {
    spec.validate()?;
    hyper.validate()?;
    if datasets.is_empty() {
        return Err(Error::EmptyInput("datasets".into()));
    }
    if spec.n_sites() != datasets.len() {
        return Err(Error::Config(format!(
            "domain predictor emits {} classes but there are {} sites",
            spec.n_sites(),
            datasets.len()
        )));
    }
    for ds in datasets {
        ds.validate()?;
        if ds.x.cols() != spec.input_dim {
            return Err(Error::dim(
                format!("site {} inputs", ds.site_id).as_str(),
                format!("{} cols", ds.x.cols()),
                format!("{} expected", spec.input_dim),
            ));
        }
    }
    if mode.labeled_sites.is_empty() {
        return Err(Error::Config("labeled_sites must not be empty".into()));
    }
    let known: BTreeSet<&str> = datasets.iter().map(|d| d.site_id.as_str()).collect();
    for site in &mode.labeled_sites {
        if !known.contains(site.as_str()) {
            return Err(Error::Config(format!("unknown labeled site '{site}'")));
        }
    }
    if !datasets
        .iter()
        .any(|d| d.labeled && mode.labeled_sites.contains(&d.site_id))
    {
        return Err(Error::Config(
            "no dataset is both labeled and listed in labeled_sites".into(),
        ));
    }
    Ok(())
}

/// Loop broadcast -> update knowledge -> local rounds -> aggregate until the
/// mean validation MAE stops improving for `patience` rounds or `max_rounds`
/// is reached. Returns the best-validation snapshot, not the last round.
pub fn run_protocol(
    datasets: &[SiteDataset],
    spec: &NetworkSpec,
    hyper: &Hyper,
    strategy: AggregationStrategy,
    mode: &TrainingMode,
    seed: u64,
) -> Result<ProtocolRun> {
    validate_inputs(datasets, spec, hyper, mode)?;
    let init = init_params::<f64>(spec, mix_seed(seed, &[0x1217]))?;
    let mut state = ProtocolState {
        round: 0,
        global_params: init.clone(),
        store: KnowledgeStore::new(0),
        best_val_mae: f64::INFINITY,
        rounds_since_improvement: 0,
    };
    let mut best_params = init;
    let mut best_round = 0;
    let mut records = Vec::new();
    while state.round < hyper.max_rounds {
        let before_best = state.best_val_mae;
        let outcome = execute_round(&mut state, datasets, hyper, strategy, mode, seed)?;
        if state.best_val_mae < before_best {
            best_params = state.global_params.clone();
            best_round = outcome.record.round;
        }
        records.push(outcome.record);
        if state.rounds_since_improvement >= hyper.patience {
            break;
        }
    }
    Ok(ProtocolRun {
        best_params,
        best_round,
        best_val_mae: state.best_val_mae,
        rounds_run: state.round,
        records,
    })
}

/// Versioned checkpoint: spec, flat weights, hyperparameters, round index.
/// JSON floats round-trip exactly, so reloads are bit-exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: NetworkSpec,
    pub params: FlatParams,
    pub hyper: Hyper,
    pub round: u64,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(spec: &NetworkSpec, params: &ModelParams<f64>, hyper: &Hyper, round: u64) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            spec: spec.clone(),
            params: FlatParams::from_params(params),
            hyper: hyper.clone(),
            round,
        }
    }

    pub fn to_params(&self) -> Result<ModelParams<f64>> {
        Ok(ModelParams {
            repr: Component::from_flat(&self.spec.repr_dims(), &self.params.repr)?,
            pred: Component::from_flat(&self.spec.pred_dims(), &self.params.pred)?,
            dom: Component::from_flat(&self.spec.dom_dims(), &self.params.dom)?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}

/// Round log as JSON lines, one record per round.
pub fn round_log_string(records: &[RoundRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}
