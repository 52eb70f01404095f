//! Synthetic multi-site regression benchmark with injected site effects,
//! plus CSV ingestion for user data.
//!
//! Each subject draws a scalar target from the site's target range; half the
//! input features are a fixed smooth nonlinear function of the target (the
//! signal of interest), the other half carry nothing but per-site shift and
//! scale (the confound). The site's shift/scale then distorts all features,
//! so the benchmark has both recoverable signal and removable site effect.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::Matrix;
use crate::scalar::Real;
use crate::seeding::mix_seed;

/// Row assignment within one site's data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One site's data: feature matrix, optional targets, and the split cover.
#[derive(Debug, Clone)]
pub struct SiteDataset {
    pub site_id: String,
    pub x: Matrix<f64>,
    /// Present iff the site is labeled.
    pub y: Option<Vec<f64>>,
    pub labeled: bool,
    pub split: Vec<Split>,
}

impl SiteDataset {
    pub fn n_rows(&self) -> usize {
        self.x.rows()
    }

    pub fn rows_of(&self, split: Split) -> Vec<usize> {
        self.split
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == split).then_some(i))
            .collect()
    }

    pub fn x_of(&self, split: Split) -> Matrix<f64> {
        self.x.select_rows(&self.rows_of(split))
    }

    pub fn y_of(&self, split: Split) -> Option<Vec<f64>> {
        self.y
            .as_ref()
            .map(|y| self.rows_of(split).iter().map(|&r| y[r]).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.split.len() != self.n_rows() {
            return Err(Error::LengthMismatch {
                context: format!("site {} split cover", self.site_id),
                expected: self.n_rows(),
                got: self.split.len(),
            });
        }
        if self.labeled != self.y.is_some() {
            return Err(Error::Config(format!(
                "site {}: targets present iff labeled",
                self.site_id
            )));
        }
        if let Some(y) = &self.y {
            if y.len() != self.n_rows() {
                return Err(Error::LengthMismatch {
                    context: format!("site {} targets", self.site_id),
                    expected: self.n_rows(),
                    got: y.len(),
                });
            }
        }
        Ok(())
    }
}

/// Per-site distortion and population description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteEffectSpec {
    pub feature_shift: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub target_range: (f64, f64),
    pub n_subjects: usize,
}

impl SiteEffectSpec {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.feature_shift.len() != d || self.feature_scale.len() != d {
            return Err(Error::Config(format!(
                "site effect vectors must have length {d}"
            )));
        }
        if self.feature_scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("feature scales must be positive".into()));
        }
        if self.target_range.0 >= self.target_range.1 {
            return Err(Error::Config(format!(
                "target range ({}, {}) must be increasing",
                self.target_range.0, self.target_range.1
            )));
        }
        if self.n_subjects < 10 {
            return Err(Error::Config(format!(
                "need at least 10 subjects per site, got {}",
                self.n_subjects
            )));
        }
        Ok(())
    }
}

/// Shape of the target-to-feature signal map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SignalKind {
    /// Fixed random two-layer tanh network from the normalized target into
    /// the informative features.
    RandomTwoLayer { hidden: usize },
    /// Plain linear map; useful for analytic sanity checks.
    Linear,
}

impl Default for SignalKind {
    fn default() -> Self {
        SignalKind::RandomTwoLayer { hidden: 4 }
    }
}

/// Concrete signal map, built once per generation and shared by all sites.
pub(crate) enum SignalFn {
    TwoLayer {
        w1: Vec<f64>,
        b1: Vec<f64>,
        /// hidden x n_informative
        w2: Vec<Vec<f64>>,
    },
    Linear {
        w: Vec<f64>,
    },
}

impl SignalFn {
    pub(crate) fn build(kind: SignalKind, n_informative: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match kind {
            SignalKind::RandomTwoLayer { hidden } => {
                let hidden = hidden.max(1);
                let w1: Vec<f64> = (0..hidden).map(|_| rng.random_range(-0.5..0.5)).collect();
                let b1: Vec<f64> = (0..hidden).map(|_| rng.random_range(-1.0..1.0)).collect();
                let scale = 1.0 / (hidden as f64).sqrt();
                let w2: Vec<Vec<f64>> = (0..hidden)
                    .map(|_| {
                        (0..n_informative)
                            .map(|_| scale * rng.random_range(-1.0..1.0))
                            .collect()
                    })
                    .collect();
                SignalFn::TwoLayer { w1, b1, w2 }
            }
            SignalKind::Linear => SignalFn::Linear {
                w: (0..n_informative)
                    .map(|_| rng.random_range(-2.0..2.0))
                    .collect(),
            },
        }
    }

    /// Orthonormal basis of the subspace of informative-feature space the
    /// signal can occupy (ignoring the constant offset).
    pub(crate) fn informative_span(&self) -> Vec<Vec<f64>> {
        let rows: Vec<Vec<f64>> = match self {
            SignalFn::TwoLayer { w2, .. } => w2.clone(),
            SignalFn::Linear { w } => vec![w.clone()],
        };
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for mut v in rows {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= dot * bi;
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                for vi in &mut v {
                    *vi /= norm;
                }
                basis.push(v);
            }
        }
        basis
    }

    pub(crate) fn eval(&self, y_norm: f64) -> Vec<f64> {
        match self {
            SignalFn::TwoLayer { w1, b1, w2 } => {
                let hidden: Vec<f64> = w1
                    .iter()
                    .zip(b1)
                    .map(|(&w, &b)| (w * y_norm + b).tanh())
                    .collect();
                let n_out = w2[0].len();
                (0..n_out)
                    .map(|j| hidden.iter().zip(w2).map(|(&h, row)| h * row[j]).sum())
                    .collect()
            }
            SignalFn::Linear { w } => w.iter().map(|&wi| wi * y_norm).collect(),
        }
    }
}

/// Deterministic split cover. Train takes floor(f_train * n), validation
/// floor(f_val * n), and test the remaining rows.
pub fn split_dataset(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<Vec<Split>> {
    let (ft, fv, fe) = fractions;
    if (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must sum to 1, got {ft} + {fv} + {fe}"
        )));
    }
    if ft <= 0.0 || fv <= 0.0 || fe <= 0.0 {
        return Err(Error::Config("split fractions must be positive".into()));
    }
    let n_train = (ft * n as f64).floor() as usize;
    let n_val = (fv * n as f64).floor() as usize;
    let n_test = n - n_train - n_val;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "split of {n} rows leaves an empty part: ({n_train}, {n_val}, {n_test})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut split = vec![Split::Test; n];
    for &i in order.iter().take(n_train) {
        split[i] = Split::Train;
    }
    for &i in order.iter().skip(n_train).take(n_val) {
        split[i] = Split::Val;
    }
    Ok(split)
}

/// Generate one dataset per site spec. Deterministic in the seed.
pub fn generate_multisite(
    specs: &[SiteEffectSpec],
    d: usize,
    signal: SignalKind,
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<SiteDataset>> {
    if specs.len() < 2 {
        return Err(Error::Config("need at least two sites".into()));
    }
    if d < 2 {
        return Err(Error::Config("need input dimension >= 2".into()));
    }
    if noise_sd < 0.0 {
        return Err(Error::Config("noise_sd must be non-negative".into()));
    }
    for spec in specs {
        spec.validate(d)?;
    }
    let n_informative = d / 2;

    // target normalization over the union of site ranges, so the signal map
    // is one shared function of the target
    let lo = specs
        .iter()
        .map(|s| s.target_range.0)
        .fold(f64::INFINITY, f64::min);
    let hi = specs
        .iter()
        .map(|s| s.target_range.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);

    let signal_fn = SignalFn::build(signal, n_informative, mix_seed(seed, &[0]));

    // first pass: targets and clean signal values for every subject
    let mut site_targets: Vec<Vec<f64>> = Vec::with_capacity(specs.len());
    let mut site_signals: Vec<Vec<Vec<f64>>> = Vec::with_capacity(specs.len());
    for (h, spec) in specs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[1, h as u64]));
        let (lo_h, hi_h) = spec.target_range;
        let y: Vec<f64> = (0..spec.n_subjects)
            .map(|_| rng.random_range(lo_h..hi_h))
            .collect();
        let signals: Vec<Vec<f64>> = y
            .iter()
            .map(|&v| signal_fn.eval((v - mid) / half))
            .collect();
        site_targets.push(y);
        site_signals.push(signals);
    }

    // per-dimension signal std over the pooled population, for noise scaling
    let total: usize = specs.iter().map(|s| s.n_subjects).sum();
    let mut signal_std = vec![0.0; n_informative];
    for j in 0..n_informative {
        let mean: f64 = site_signals
            .iter()
            .flat_map(|s| s.iter().map(|row| row[j]))
            .sum::<f64>()
            / total as f64;
        let var: f64 = site_signals
            .iter()
            .flat_map(|s| s.iter().map(|row| (row[j] - mean).powi(2)))
            .sum::<f64>()
            / total as f64;
        signal_std[j] = var.sqrt();
    }

    // second pass: noise, carrier dimensions, site effect, split
    let mut datasets = Vec::with_capacity(specs.len());
    for (h, spec) in specs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[2, h as u64]));
        let n = spec.n_subjects;
        let mut x = Matrix::<f64>::zeros(n, d);
        for r in 0..n {
            for j in 0..n_informative {
                let noise = noise_sd * signal_std[j] * f64::standard_normal(&mut rng);
                let latent = site_signals[h][r][j] + noise;
                x[(r, j)] = spec.feature_scale[j] * latent + spec.feature_shift[j];
            }
            for j in n_informative..d {
                let latent = f64::standard_normal(&mut rng);
                x[(r, j)] = spec.feature_scale[j] * latent + spec.feature_shift[j];
            }
        }
        let split = split_dataset(n, (0.7, 0.1, 0.2), mix_seed(seed, &[3, h as u64]))?;
        let ds = SiteDataset {
            site_id: format!("site{h}"),
            x,
            y: Some(site_targets[h].clone()),
            labeled: true,
            split,
        };
        ds.validate()?;
        datasets.push(ds);
    }
    Ok(datasets)
}

/// Input dimension of the default benchmark.
pub const DEFAULT_INPUT_DIM: usize = 16;
/// Feature (embedding) dimension the default network uses.
pub const DEFAULT_FEATURE_DIM: usize = 16;
/// Default noise level, as a fraction of per-dimension signal std.
pub const DEFAULT_NOISE_SD: f64 = 0.1;

/// Default 4-site specs: subject counts {50, 182, 99, 56} (70% training
/// splits of {35, 127, 69, 39}), heterogeneous target ranges, small shifts
/// on the informative half and strong shift/scale on the carrier half.
pub fn default_site_specs(d: usize, seed: u64) -> Vec<SiteEffectSpec> {
    let counts = [50usize, 182, 99, 56];
    let ranges = [(10.0, 28.0), (6.0, 40.0), (8.0, 30.0), (9.0, 29.0)];
    let n_informative = d / 2;
    counts
        .iter()
        .zip(ranges)
        .enumerate()
        .map(|(h, (&n_subjects, target_range))| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[7, h as u64]));
            let mut feature_shift = Vec::with_capacity(d);
            let mut feature_scale = Vec::with_capacity(d);
            for j in 0..d {
                if j < n_informative {
                    let sign = if rng.random_range(0..2) == 0 { -1.0 } else { 1.0 };
                    feature_shift.push(sign * rng.random_range(0.4..0.8));
                    feature_scale.push(1.0);
                } else {
                    let sign = if rng.random_range(0..2) == 0 { -1.0 } else { 1.0 };
                    feature_shift.push(sign * rng.random_range(0.6..1.2));
                    feature_scale.push(1.0);
                }
            }
            SiteEffectSpec {
                feature_shift,
                feature_scale,
                target_range,
                n_subjects,
            }
        })
        .collect()
}

/// Default benchmark site specs. Informative-dim shifts are projected onto
/// the orthogonal complement of the signal span, so the injected site effect
/// is non-biological by construction and removable in principle.
pub fn default_benchmark_specs(seed: u64) -> Vec<SiteEffectSpec> {
    let mut specs = default_site_specs(DEFAULT_INPUT_DIM, seed);
    let n_inf = DEFAULT_INPUT_DIM / 2;
    let signal = SignalFn::build(SignalKind::default(), n_inf, mix_seed(seed, &[0]));
    let span = signal.informative_span();
    for spec in &mut specs {
        let raw: Vec<f64> = spec.feature_shift[..n_inf].to_vec();
        let target_norm: f64 = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = raw;
        for b in &span {
            let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            for (j, vi) in v.iter().enumerate() {
                spec.feature_shift[j] = vi / norm * target_norm;
            }
        }
    }
    specs
}

/// The default benchmark: 4 sites, D = 16, two-layer signal map, 10% noise.
pub fn default_benchmark(seed: u64) -> Result<Vec<SiteDataset>> {
    generate_multisite(
        &default_benchmark_specs(seed),
        DEFAULT_INPUT_DIM,
        SignalKind::default(),
        DEFAULT_NOISE_SD,
        seed,
    )
}

/// Column naming for CSV files. Features are every column that is neither
/// the site column nor the target column, in header order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub site_column: String,
    pub target_column: Option<String>,
    /// Reject files with missing targets instead of marking sites unlabeled.
    #[serde(default)]
    pub require_labels: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            site_column: "site".into(),
            target_column: Some("target".into()),
            require_labels: false,
        }
    }
}

/// Write datasets as one CSV: site column, target column, then features.
/// Values print in shortest round-trip form, so reloading is bit-exact.
pub fn write_csv(datasets: &[SiteDataset], path: &Path, schema: &CsvSchema) -> Result<()> {
    let d = datasets
        .first()
        .map(|ds| ds.x.cols())
        .ok_or_else(|| Error::EmptyInput("no datasets to write".into()))?;
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec![schema.site_column.clone()];
    if let Some(t) = &schema.target_column {
        header.push(t.clone());
    }
    header.extend((0..d).map(|j| format!("x{j}")));
    writer
        .write_record(&header)
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
    for ds in datasets {
        for r in 0..ds.n_rows() {
            let mut record = vec![ds.site_id.clone()];
            if schema.target_column.is_some() {
                record.push(match &ds.y {
                    Some(y) => format!("{}", y[r]),
                    None => String::new(),
                });
            }
            record.extend(ds.x.row(r).iter().map(|v| format!("{v}")));
            writer.write_record(&record).map_err(|e| Error::Parse {
                line: r + 2,
                message: e.to_string(),
            })?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn csv_line(err: &csv::Error) -> usize {
    err.position().map(|p| p.line() as usize).unwrap_or(0)
}

/// Load one CSV into one dataset per distinct site value (sites in sorted
/// order). Splits are assigned per site from the given fractions and seed.
pub fn load_csv(
    path: &Path,
    schema: &CsvSchema,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Vec<SiteDataset>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let site_idx = headers
        .iter()
        .position(|h| h == schema.site_column)
        .ok_or_else(|| {
            Error::Config(format!(
                "site column '{}' not found in header",
                schema.site_column
            ))
        })?;
    let target_idx = match &schema.target_column {
        Some(name) => match headers.iter().position(|h| h == name.as_str()) {
            Some(i) => Some(i),
            None if schema.require_labels => {
                return Err(Error::Config(format!(
                    "target column '{name}' not found but labels are required"
                )))
            }
            None => None,
        },
        None if schema.require_labels => {
            return Err(Error::Config(
                "labels required but no target column configured".into(),
            ))
        }
        None => None,
    };
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|&i| i != site_idx && Some(i) != target_idx)
        .collect();
    if feature_idx.is_empty() {
        return Err(Error::Config("no feature columns in file".into()));
    }

    let mut by_site: BTreeMap<String, (Vec<f64>, Vec<Option<f64>>)> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: csv_line(&e),
            message: e.to_string(),
        })?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(0);
        let site = record
            .get(site_idx)
            .ok_or_else(|| Error::Parse {
                line,
                message: "missing site field".into(),
            })?
            .to_string();
        let entry = by_site.entry(site).or_default();
        for &fi in &feature_idx {
            let raw = record.get(fi).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing field {fi}"),
            })?;
            let value: f64 = raw.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric cell '{raw}'"),
            })?;
            entry.0.push(value);
        }
        let target = match target_idx {
            Some(ti) => {
                let raw = record.get(ti).unwrap_or("").trim();
                if raw.is_empty() {
                    None
                } else {
                    Some(raw.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("non-numeric target '{raw}'"),
                    })?)
                }
            }
            None => None,
        };
        entry.1.push(target);
    }

    let d = feature_idx.len();
    let mut datasets = Vec::with_capacity(by_site.len());
    for (idx, (site_id, (flat, targets))) in by_site.into_iter().enumerate() {
        let n = targets.len();
        if n < 10 {
            return Err(Error::InsufficientData {
                site: site_id,
                rows: n,
                min: 10,
            });
        }
        let all_labeled = targets.iter().all(Option::is_some);
        if schema.require_labels && !all_labeled {
            return Err(Error::Config(format!(
                "site {site_id} has rows without targets but labels are required"
            )));
        }
        let x = Matrix::from_vec(n, d, flat)?;
        let split = split_dataset(n, fractions, mix_seed(seed, &[idx as u64]))?;
        let ds = SiteDataset {
            site_id,
            x,
            y: all_labeled.then(|| targets.into_iter().map(Option::unwrap).collect()),
            labeled: all_labeled,
            split,
        };
        ds.validate()?;
        datasets.push(ds);
    }
    Ok(datasets)
}
