//! Evaluation battery: per-site MAE, the site-classification probe, PCA
//! feature projection, the feature-overlap score, and paired significance
//! testing.
//!
//! The probe accuracy is balanced (mean per-site recall), so chance is
//! exactly 100/H percent regardless of how unbalanced the site sizes are.

use std::collections::BTreeMap;

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses;
use crate::model::{
    self, component_softmax_ce_backward, feature_extract, predict_label, Component, ModelParams,
};
use crate::ndcore::{adam_update, softmax_rows, AdamState, Matrix};
use crate::stats::student_t_two_sided_p;
use crate::synthdata::{SiteDataset, Split};

/// Converged-model metrics in the shape of the comparison tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub per_site_mae: BTreeMap<String, f64>,
    pub average_mae: f64,
    pub sca_percent: f64,
}

/// Mean absolute error per site over the chosen split, for every dataset
/// that carries targets. The average across sites is unweighted.
pub fn mae_per_site(
    params: &ModelParams<f64>,
    datasets: &[SiteDataset],
    split: Split,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for ds in datasets {
        let Some(y_all) = &ds.y else { continue };
        let rows = ds.rows_of(split);
        if rows.is_empty() {
            return Err(Error::EmptyInput(format!(
                "site {} has no rows in split {split:?}",
                ds.site_id
            )));
        }
        let x = ds.x.select_rows(&rows);
        let y: Vec<f64> = rows.iter().map(|&r| y_all[r]).collect();
        let q = feature_extract(&x, params)?;
        let y_hat = predict_label(&q, params)?;
        let mae = y
            .iter()
            .zip(&y_hat)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / y.len() as f64;
        out.insert(ds.site_id.clone(), mae);
    }
    Ok(out)
}

/// Unweighted mean over sites.
pub fn average_mae(per_site: &BTreeMap<String, f64>) -> f64 {
    per_site.values().sum::<f64>() / per_site.len() as f64
}

/// Absolute per-subject errors on a split, in row order; paired-test input.
pub fn abs_errors(
    params: &ModelParams<f64>,
    ds: &SiteDataset,
    split: Split,
) -> Result<Vec<f64>> {
    let y_all = ds
        .y
        .as_ref()
        .ok_or_else(|| Error::EmptyInput(format!("site {} has no targets", ds.site_id)))?;
    let rows = ds.rows_of(split);
    let x = ds.x.select_rows(&rows);
    let q = feature_extract(&x, params)?;
    let y_hat = predict_label(&q, params)?;
    Ok(rows
        .iter()
        .zip(&y_hat)
        .map(|(&r, &p)| (y_all[r] - p).abs())
        .collect())
}

/// Training budget for the site-classification probe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub hidden_layers: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub val_fraction: f64,
    pub patience: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![32],
            epochs: 200,
            lr: 1e-3,
            val_fraction: 0.2,
            patience: 20,
        }
    }
}

/// Train a fresh softmax classifier on (features, site labels) with early
/// stopping on a held-out slice of the training rows. Deterministic in the
/// seed.
pub fn fit_site_probe(
    q_train: &Matrix<f64>,
    d_train: &[usize],
    n_sites: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<Component<f64>> {
    if q_train.rows() != d_train.len() {
        return Err(Error::LengthMismatch {
            context: "probe labels".into(),
            expected: q_train.rows(),
            got: d_train.len(),
        });
    }
    if q_train.rows() < 4 {
        return Err(Error::InsufficientData {
            site: "probe training set".into(),
            rows: q_train.rows(),
            min: 4,
        });
    }
    let mut dims = Vec::new();
    let mut fan_in = q_train.cols();
    for &w in &cfg.hidden_layers {
        dims.push((fan_in, w));
        fan_in = w;
    }
    dims.push((fan_in, n_sites));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..q_train.rows()).collect();
    order.shuffle(&mut rng);
    let n_val = ((q_train.rows() as f64 * cfg.val_fraction).round() as usize)
        .clamp(1, q_train.rows() - 1);
    let (val_idx, fit_idx) = order.split_at(n_val);
    let q_fit = q_train.select_rows(fit_idx);
    let d_fit: Vec<usize> = fit_idx.iter().map(|&i| d_train[i]).collect();
    let q_val = q_train.select_rows(val_idx);
    let d_val: Vec<usize> = val_idx.iter().map(|&i| d_train[i]).collect();

    let mut probe = model::init_component_params::<f64>(&dims, seed ^ 0x5eed);
    let mut state = AdamState::new(probe.param_len(), cfg.lr);
    let mut best = probe.clone();
    let mut best_val = f64::INFINITY;
    let mut since_improvement = 0usize;
    for _ in 0..cfg.epochs {
        let (grads, _) = component_softmax_ce_backward(&probe, &q_fit, &d_fit)?;
        let mut flat = probe.flatten();
        adam_update(&mut flat, &grads.flatten(), &mut state)?;
        probe.assign_flat(&flat)?;

        let logits = probe.forward(&q_val)?;
        let val_loss = losses::domain_loss(&softmax_rows(&logits), &d_val)?;
        if val_loss < best_val {
            best_val = val_loss;
            best = probe.clone();
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= cfg.patience {
                break;
            }
        }
    }
    Ok(best)
}

/// Balanced accuracy in percent: mean per-site recall of the probe's argmax
/// prediction. Chance is 100/H.
pub fn probe_balanced_accuracy(
    probe: &Component<f64>,
    q: &Matrix<f64>,
    d: &[usize],
    n_sites: usize,
) -> Result<f64> {
    if q.rows() != d.len() {
        return Err(Error::LengthMismatch {
            context: "probe evaluation labels".into(),
            expected: q.rows(),
            got: d.len(),
        });
    }
    let logits = probe.forward(q)?;
    let mut correct = vec![0usize; n_sites];
    let mut counts = vec![0usize; n_sites];
    for (r, &label) in d.iter().enumerate() {
        if label >= n_sites {
            return Err(Error::LabelOutOfRange {
                label,
                n_sites,
            });
        }
        counts[label] += 1;
        let row = logits.row(r);
        let mut arg = 0;
        for (c, &v) in row.iter().enumerate() {
            if v > row[arg] {
                arg = c;
            }
        }
        if arg == label {
            correct[label] += 1;
        }
    }
    let mut recall_sum = 0.0;
    let mut present = 0usize;
    for s in 0..n_sites {
        if counts[s] > 0 {
            recall_sum += correct[s] as f64 / counts[s] as f64;
            present += 1;
        }
    }
    if present == 0 {
        return Err(Error::EmptyInput("probe evaluation set".into()));
    }
    Ok(100.0 * recall_sum / present as f64)
}

/// Retrain a fresh domain probe on frozen training-split features and report
/// its balanced accuracy on the test split, in percent.
pub fn scanner_classification_accuracy(
    params: &ModelParams<f64>,
    datasets: &[SiteDataset],
    probe_cfg: &ProbeConfig,
    seed: u64,
) -> Result<f64> {
    if datasets.len() < 2 {
        return Err(Error::Config(
            "site classification needs at least two sites".into(),
        ));
    }
    let n_sites = datasets.len();
    let (q_train, d_train) = stacked_features(params, datasets, Split::Train)?;
    let (q_test, d_test) = stacked_features(params, datasets, Split::Test)?;
    let probe = fit_site_probe(&q_train, &d_train, n_sites, probe_cfg, seed)?;
    probe_balanced_accuracy(&probe, &q_test, &d_test, n_sites)
}

/// Extract and stack features for one split across all sites; labels are
/// dataset-order site indices (the same indexing the protocol uses).
pub fn stacked_features(
    params: &ModelParams<f64>,
    datasets: &[SiteDataset],
    split: Split,
) -> Result<(Matrix<f64>, Vec<usize>)> {
    let mut q_all: Option<Matrix<f64>> = None;
    let mut labels = Vec::new();
    for (idx, ds) in datasets.iter().enumerate() {
        let rows = ds.rows_of(split);
        if rows.is_empty() {
            continue;
        }
        let q = feature_extract(&ds.x.select_rows(&rows), params)?;
        labels.extend(std::iter::repeat_n(idx, q.rows()));
        q_all = Some(match q_all {
            None => q,
            Some(acc) => acc.vstack(&q)?,
        });
    }
    let q = q_all.ok_or_else(|| Error::EmptyInput(format!("no rows in split {split:?}")))?;
    Ok((q, labels))
}

/// PCA of a feature matrix via eigendecomposition of the feature covariance.
#[derive(Debug, Clone)]
pub struct PcaResult {
    /// N x k projections of the centered data.
    pub projections: Matrix<f64>,
    /// k x F; each row is one orthonormal component, sign-fixed so its first
    /// non-negligible coordinate is positive.
    pub components: Matrix<f64>,
    /// Variance captured by each returned component, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Trace of the covariance; ratio denominators.
    pub total_variance: f64,
    /// Number of requested components backed by non-degenerate variance;
    /// less than k signals rank deficiency.
    pub effective_k: usize,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors as columns), unsorted.
fn jacobi_eigh(a: &Matrix<f64>) -> (Vec<f64>, Matrix<f64>) {
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Matrix::<f64>::identity(n);
    let frob: f64 = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-14 * (1.0 + frob);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues = (0..n).map(|i| m[(i, i)]).collect();
    (eigenvalues, v)
}

/// Mean-centered PCA. Components are orthonormal and ordered by
/// non-increasing explained variance.
pub fn pca_project(q: &Matrix<f64>, k: usize) -> Result<PcaResult> {
    let (n, f) = q.shape();
    if k > f {
        return Err(Error::Config(format!("pca k={k} exceeds feature dim {f}")));
    }
    if n <= k {
        return Err(Error::InsufficientData {
            site: "pca input".into(),
            rows: n,
            min: k + 1,
        });
    }
    let means = q.column_means();
    let centered = Matrix::from_fn(n, f, |r, c| q[(r, c)] - means[c]);
    let cov = centered
        .transpose()
        .matmul(&centered)?;
    let denom = (n - 1) as f64;
    let cov = Matrix::from_fn(f, f, |r, c| cov[(r, c)] / denom);

    let (eigenvalues, vectors) = jacobi_eigh(&cov);
    let total_variance: f64 = eigenvalues.iter().sum();
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap());

    let mut components = Matrix::<f64>::zeros(k, f);
    let mut explained = Vec::with_capacity(k);
    let mut effective_k = 0usize;
    let rank_tol = 1e-12 * total_variance.max(1e-300);
    for (row, &col) in order.iter().take(k).enumerate() {
        let mut comp: Vec<f64> = (0..f).map(|i| vectors[(i, col)]).collect();
        // sign convention: first coordinate of non-trivial magnitude positive
        if let Some(&lead) = comp.iter().find(|v| v.abs() > 1e-12) {
            if lead < 0.0 {
                for v in &mut comp {
                    *v = -*v;
                }
            }
        }
        components.row_mut(row).copy_from_slice(&comp);
        let ev = eigenvalues[col].max(0.0);
        explained.push(ev);
        if ev > rank_tol {
            effective_k += 1;
        }
    }
    let projections = centered.matmul(&components.transpose())?;
    Ok(PcaResult {
        projections,
        components,
        explained_variance: explained,
        total_variance,
        effective_k,
    })
}

/// Mean pairwise distance between per-site feature centroids divided by the
/// pooled within-site standard deviation. Lower means more overlap.
pub fn site_overlap_score(q: &Matrix<f64>, site_labels: &[usize]) -> Result<f64> {
    if q.rows() != site_labels.len() {
        return Err(Error::LengthMismatch {
            context: "overlap labels".into(),
            expected: q.rows(),
            got: site_labels.len(),
        });
    }
    let n_sites = site_labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n_sites];
    for &s in site_labels {
        counts[s] += 1;
    }
    let present: Vec<usize> = (0..n_sites).filter(|&s| counts[s] > 0).collect();
    if present.len() < 2 {
        return Err(Error::Config(
            "overlap score needs at least two sites".into(),
        ));
    }
    let f = q.cols();
    let mut centroids: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &s in &present {
        centroids.insert(s, vec![0.0; f]);
    }
    for (r, &s) in site_labels.iter().enumerate() {
        let c = centroids.get_mut(&s).unwrap();
        for (j, &v) in q.row(r).iter().enumerate() {
            c[j] += v;
        }
    }
    for (&s, c) in centroids.iter_mut() {
        for v in c.iter_mut() {
            *v /= counts[s] as f64;
        }
    }
    // pooled within-site variance per feature, averaged over features
    let mut within = vec![0.0; f];
    for (r, &s) in site_labels.iter().enumerate() {
        let c = &centroids[&s];
        for (j, &v) in q.row(r).iter().enumerate() {
            within[j] += (v - c[j]) * (v - c[j]);
        }
    }
    let dof = (q.rows() - present.len()) as f64;
    let pooled_var = within.iter().sum::<f64>() / (f as f64 * dof.max(1.0));
    let pooled_std = pooled_var.sqrt().max(1e-12);

    let mut dist_sum = 0.0;
    let mut pairs = 0usize;
    for (i, &a) in present.iter().enumerate() {
        for &b in &present[i + 1..] {
            let ca = &centroids[&a];
            let cb = &centroids[&b];
            let d2: f64 = ca.iter().zip(cb).map(|(x, y)| (x - y) * (x - y)).sum();
            dist_sum += d2.sqrt();
            pairs += 1;
        }
    }
    Ok(dist_sum / pairs as f64 / pooled_std)
}

/// Paired two-sided t-test result. `tied` marks the degenerate zero-variance
/// path, reported as (t = 0, p = 1).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t: f64,
    pub p: f64,
    pub tied: bool,
}

/// Standard paired two-sided t-test; the p-value comes from the regularized
/// incomplete beta evaluation of the t-distribution tail.
pub fn paired_ttest(errors_a: &[f64], errors_b: &[f64]) -> Result<PairedTTest> {
    if errors_a.len() != errors_b.len() {
        return Err(Error::LengthMismatch {
            context: "paired t-test".into(),
            expected: errors_a.len(),
            got: errors_b.len(),
        });
    }
    let n = errors_a.len();
    if n < 2 {
        return Err(Error::InsufficientData {
            site: "paired t-test".into(),
            rows: n,
            min: 2,
        });
    }
    let diffs: Vec<f64> = errors_a.iter().zip(errors_b).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
    if var == 0.0 {
        return Ok(PairedTTest {
            t: 0.0,
            p: 1.0,
            tied: true,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let p = student_t_two_sided_p(t, (n - 1) as f64);
    Ok(PairedTTest { t, p, tied: false })
}
