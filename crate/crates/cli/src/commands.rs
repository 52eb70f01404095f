//! Subcommand implementations: dataset generation, training runs, the
//! method comparison table, and the fit-stability experiment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use harmsim_core::error::{Error, Result};
use harmsim_core::eval::{
    self, abs_errors, average_mae, mae_per_site, pca_project, scanner_classification_accuracy,
    site_overlap_score, stacked_features, PairedTTest, ProbeConfig, RoundMetrics,
};
use harmsim_core::federation::{run_protocol, round_log_string, Checkpoint, ProtocolRun};
use harmsim_core::knowledge::{fit_stability_experiment, StabilityRow};
use harmsim_core::model::{feature_extract, NetworkSpec};
use harmsim_core::seeding::mix_seed;
use harmsim_core::synthdata::{self, write_csv, CsvSchema, SiteDataset, Split};
use harmsim_core::ModelParams;

use crate::config::{DataSource, Method, ResolvedConfig};

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn write_manifest(resolved: &ResolvedConfig, dir: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Manifest<'a> {
        config: &'a ResolvedConfig,
    }
    let text = serde_json::to_string_pretty(&Manifest { config: resolved })?;
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

/// Everything a finished training run exposes to the caller.
pub struct TrainArtifacts {
    pub resolved: ResolvedConfig,
    pub run: ProtocolRun,
    pub datasets: Vec<SiteDataset>,
    pub spec: NetworkSpec,
    pub metrics: RoundMetrics,
    pub overlap: f64,
    pub wall_seconds: f64,
}

/// Run the protocol under a resolved config and evaluate the returned model.
pub fn run_training(resolved: &ResolvedConfig) -> Result<TrainArtifacts> {
    let datasets = resolved.datasets()?;
    let spec = resolved.network_spec(datasets.len());
    let mode = resolved.training_mode(&datasets)?;
    let started = Instant::now();
    let run = run_protocol(
        &datasets,
        &spec,
        &resolved.hyper,
        resolved.strategy,
        &mode,
        resolved.seed,
    )?;
    let wall_seconds = started.elapsed().as_secs_f64();

    let eval_seed = mix_seed(resolved.seed, &[0xE7A1]);
    let per_site_mae = mae_per_site(&run.best_params, &datasets, Split::Test)?;
    let sca_percent = scanner_classification_accuracy(
        &run.best_params,
        &datasets,
        &ProbeConfig::default(),
        eval_seed,
    )?;
    let metrics = RoundMetrics {
        average_mae: average_mae(&per_site_mae),
        per_site_mae,
        sca_percent,
    };
    let (q, d) = stacked_features(&run.best_params, &datasets, Split::Test)?;
    let overlap = site_overlap_score(&q, &d)?;
    Ok(TrainArtifacts {
        resolved: resolved.clone(),
        run,
        datasets,
        spec,
        metrics,
        overlap,
        wall_seconds,
    })
}

fn run_id(resolved: &ResolvedConfig) -> String {
    format!("{}-seed{}", resolved.method, resolved.seed)
}

fn write_metrics_csv(art: &TrainArtifacts, dir: &Path) -> Result<()> {
    let mut out = String::from("run_id,method,site,split,mae,sca,overlap,rounds\n");
    let id = run_id(&art.resolved);
    for (site, mae) in &art.metrics.per_site_mae {
        writeln!(
            out,
            "{id},{},{site},test,{mae},{},{},{}",
            art.resolved.method, art.metrics.sca_percent, art.overlap, art.run.rounds_run
        )
        .expect("string write");
    }
    std::fs::write(dir.join("metrics.csv"), out)?;
    Ok(())
}

fn write_pca_csv(art: &TrainArtifacts, dir: &Path) -> Result<()> {
    let (q, labels) = stacked_features(&art.run.best_params, &art.datasets, Split::Test)?;
    let pca = pca_project(&q, 2)?;
    let mut out = String::from("site,pc1,pc2\n");
    for (r, &label) in labels.iter().enumerate() {
        writeln!(
            out,
            "{},{},{}",
            art.datasets[label].site_id,
            pca.projections[(r, 0)],
            pca.projections[(r, 1)]
        )
        .expect("string write");
    }
    std::fs::write(dir.join("pca.csv"), out)?;
    Ok(())
}

/// Train one configuration and write the full artifact set.
pub fn cmd_train(resolved: &ResolvedConfig) -> Result<TrainArtifacts> {
    ensure_dir(&resolved.out_dir)?;
    let art = run_training(resolved)?;
    let dir = &resolved.out_dir;
    write_manifest(resolved, dir)?;
    std::fs::write(dir.join("round_log.jsonl"), round_log_string(&art.run.records)?)?;
    let checkpoint = Checkpoint::new(
        &art.spec,
        &art.run.best_params,
        &resolved.hyper,
        art.run.best_round,
    );
    checkpoint.save(&dir.join("checkpoint.json"))?;
    std::fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&art.metrics)?,
    )?;
    write_metrics_csv(&art, dir)?;
    write_pca_csv(&art, dir)?;
    let store = harmsim_core::federation::update_knowledge(
        &art.run.best_params,
        &art.datasets,
        art.run.best_round,
    )?;
    std::fs::write(dir.join("knowledge_store.json"), store.export_json()?)?;

    println!(
        "{}: {} rounds ({:.1}s wall), best round {} (val MAE {:.4}); test MAE {:.4}, SCA {:.1}%, overlap {:.3}",
        run_id(resolved),
        art.run.rounds_run,
        art.wall_seconds,
        art.run.best_round,
        art.run.best_val_mae,
        art.metrics.average_mae,
        art.metrics.sca_percent,
        art.overlap,
    );
    Ok(art)
}

/// Generate the synthetic benchmark and write one CSV per site plus a
/// manifest with the seed, the site-effect specs, and the split assignment.
pub fn cmd_generate(resolved: &ResolvedConfig) -> Result<()> {
    if matches!(resolved.data, DataSource::Csv { .. }) {
        return Err(Error::Config(
            "generate synthesizes data; the config points at a CSV source".into(),
        ));
    }
    ensure_dir(&resolved.out_dir)?;
    let specs = if resolved.input_dim == synthdata::DEFAULT_INPUT_DIM {
        synthdata::default_benchmark_specs(resolved.seed)
    } else {
        synthdata::default_site_specs(resolved.input_dim, resolved.seed)
    };
    let datasets = synthdata::generate_multisite(
        &specs,
        resolved.input_dim,
        synthdata::SignalKind::default(),
        resolved.noise_sd,
        resolved.seed,
    )?;

    let schema = CsvSchema::default();
    #[derive(Serialize)]
    struct SiteEntry {
        site_id: String,
        file: String,
        n_rows: usize,
        n_train: usize,
        split: Vec<Split>,
    }
    let mut sites = Vec::new();
    for ds in &datasets {
        let file = format!("{}.csv", ds.site_id);
        write_csv(std::slice::from_ref(ds), &resolved.out_dir.join(&file), &schema)?;
        sites.push(SiteEntry {
            site_id: ds.site_id.clone(),
            file,
            n_rows: ds.n_rows(),
            n_train: ds.rows_of(Split::Train).len(),
            split: ds.split.clone(),
        });
    }
    #[derive(Serialize)]
    struct GenerateManifest<'a> {
        seed: u64,
        input_dim: usize,
        noise_sd: f64,
        signal: synthdata::SignalKind,
        specs: &'a [synthdata::SiteEffectSpec],
        sites: Vec<SiteEntry>,
    }
    let manifest = GenerateManifest {
        seed: resolved.seed,
        input_dim: resolved.input_dim,
        noise_sd: resolved.noise_sd,
        signal: synthdata::SignalKind::default(),
        specs: &specs,
        sites,
    };
    std::fs::write(
        resolved.out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    println!(
        "wrote {} site files to {}",
        datasets.len(),
        resolved.out_dir.display()
    );
    Ok(())
}

/// One comparison row plus the per-subject test errors needed for paired
/// significance tests.
pub struct CompareRow {
    pub method: Method,
    pub metrics: RoundMetrics,
    pub overlap: f64,
    pub rounds: u64,
    pub per_site_errors: BTreeMap<String, Vec<f64>>,
}

pub struct CompareOutput {
    pub rows: Vec<CompareRow>,
    pub significance: Vec<SiteSignificance>,
    pub table: String,
}

pub struct SiteSignificance {
    pub site: String,
    pub best: Method,
    pub runner_up: Method,
    pub test: PairedTTest,
}

fn worker_cap(resolved: &ResolvedConfig, n_jobs: usize) -> usize {
    if let Ok(raw) = std::env::var("HARMSIM_THREADS") {
        if let Ok(n) = raw.trim().parse::<usize>() {
            return n.clamp(1, n_jobs);
        }
    }
    let default = resolved.threads.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    default.clamp(1, n_jobs)
}

/// Run every method on identical data and seed; write a comparison CSV and
/// return an aligned text table. Methods may run in parallel; each writes
/// into its own subdirectory.
pub fn cmd_compare(resolved: &ResolvedConfig, methods: &[Method]) -> Result<CompareOutput> {
    if methods.len() < 2 {
        return Err(Error::Config(
            "compare needs at least two methods (--method, repeatable)".into(),
        ));
    }
    ensure_dir(&resolved.out_dir)?;
    write_manifest(resolved, &resolved.out_dir)?;

    let configs: Vec<ResolvedConfig> = methods
        .iter()
        .map(|&m| {
            let mut sub = resolved.with_method(m);
            sub.out_dir = resolved.out_dir.join(m.name());
            sub
        })
        .collect();

    let cap = worker_cap(resolved, configs.len());
    let mut results: Vec<Option<Result<TrainArtifacts>>> =
        (0..configs.len()).map(|_| None).collect();
    for wave in configs.chunks(cap).zip_longest_indices() {
        let (start, chunk) = wave;
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|cfg| scope.spawn(move || cmd_train(cfg)))
                .collect();
            for (offset, handle) in handles.into_iter().enumerate() {
                results[start + offset] = Some(
                    handle
                        .join()
                        .unwrap_or_else(|_| Err(Error::Protocol("worker panicked".into()))),
                );
            }
        });
    }

    let mut rows = Vec::with_capacity(methods.len());
    for (method, result) in methods.iter().zip(results) {
        let art = result.expect("every job ran")?;
        let mut per_site_errors = BTreeMap::new();
        for ds in &art.datasets {
            if ds.y.is_some() {
                per_site_errors.insert(
                    ds.site_id.clone(),
                    abs_errors(&art.run.best_params, ds, Split::Test)?,
                );
            }
        }
        rows.push(CompareRow {
            method: *method,
            metrics: art.metrics,
            overlap: art.overlap,
            rounds: art.run.rounds_run,
            per_site_errors,
        });
    }

    // paired t-test between the two best methods per site
    let sites: Vec<String> = rows[0].metrics.per_site_mae.keys().cloned().collect();
    let mut significance = Vec::new();
    for site in &sites {
        let mut ranked: Vec<&CompareRow> = rows.iter().collect();
        ranked.sort_by(|a, b| {
            a.metrics.per_site_mae[site]
                .partial_cmp(&b.metrics.per_site_mae[site])
                .unwrap()
        });
        let (best, runner_up) = (ranked[0], ranked[1]);
        let test = eval::paired_ttest(
            &best.per_site_errors[site],
            &runner_up.per_site_errors[site],
        )?;
        significance.push(SiteSignificance {
            site: site.clone(),
            best: best.method,
            runner_up: runner_up.method,
            test,
        });
    }

    // CSV
    let mut csv = String::from("method");
    for site in &sites {
        write!(csv, ",mae_{site}").expect("string write");
    }
    csv.push_str(",average_mae,sca_percent,overlap,rounds\n");
    for row in &rows {
        write!(csv, "{}", row.method.name()).expect("string write");
        for site in &sites {
            write!(csv, ",{}", row.metrics.per_site_mae[site]).expect("string write");
        }
        writeln!(
            csv,
            ",{},{},{},{}",
            row.metrics.average_mae, row.metrics.sca_percent, row.overlap, row.rounds
        )
        .expect("string write");
    }
    std::fs::write(resolved.out_dir.join("comparison.csv"), &csv)?;

    // aligned text table
    let mut table = format!("{:<12}", "method");
    for site in &sites {
        table.push_str(&format!("{:>10}", site));
    }
    table.push_str(&format!("{:>10}{:>8}{:>9}{:>8}\n", "avg_mae", "sca", "overlap", "rounds"));
    for row in &rows {
        table.push_str(&format!("{:<12}", row.method.name()));
        for site in &sites {
            table.push_str(&format!("{:>10.3}", row.metrics.per_site_mae[site]));
        }
        table.push_str(&format!(
            "{:>10.3}{:>8.1}{:>9.3}{:>8}\n",
            row.metrics.average_mae, row.metrics.sca_percent, row.overlap, row.rounds
        ));
    }
    for sig in &significance {
        table.push_str(&format!(
            "{}: best {} vs {} -> t = {:.3}, p = {:.4}{}\n",
            sig.site,
            sig.best.name(),
            sig.runner_up.name(),
            sig.test.t,
            sig.test.p,
            if sig.test.tied { " (tied)" } else { "" }
        ));
    }
    print!("{table}");
    Ok(CompareOutput {
        rows,
        significance,
        table,
    })
}

/// Small helper: iterate chunks while tracking the absolute start index.
trait ChunkIndices<'a, T> {
    fn zip_longest_indices(self) -> Vec<(usize, &'a [T])>;
}

impl<'a, T> ChunkIndices<'a, T> for std::slice::Chunks<'a, T> {
    fn zip_longest_indices(self) -> Vec<(usize, &'a [T])> {
        let mut start = 0;
        let mut out = Vec::new();
        for chunk in self {
            out.push((start, chunk));
            start += chunk.len();
        }
        out
    }
}

/// Where `stability` takes its feature values from.
pub struct StabilityArgs {
    pub checkpoint: Option<PathBuf>,
    pub site: Option<String>,
    pub feature_index: usize,
    pub features_csv: Option<PathBuf>,
    pub column: Option<String>,
    pub sample_sizes: Vec<usize>,
    pub repeats: usize,
    pub with_replacement: bool,
}

impl Default for StabilityArgs {
    fn default() -> Self {
        Self {
            checkpoint: None,
            site: None,
            feature_index: 0,
            features_csv: None,
            column: None,
            sample_sizes: vec![5, 10, 20, 30, 50, 100],
            repeats: 100,
            with_replacement: true,
        }
    }
}

fn stability_values(resolved: &ResolvedConfig, args: &StabilityArgs) -> Result<Vec<f64>> {
    if let Some(csv_path) = &args.features_csv {
        let mut reader = csv::ReaderBuilder::new().from_path(csv_path)?;
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let idx = match &args.column {
            Some(name) => headers
                .iter()
                .position(|h| h == name.as_str())
                .ok_or_else(|| Error::Config(format!("column '{name}' not in {csv_path:?}")))?,
            None => 0,
        };
        let mut values = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let raw = record.get(idx).unwrap_or("");
            values.push(raw.trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric cell '{raw}'"),
            })?);
        }
        return Ok(values);
    }
    let ckpt_path = args.checkpoint.as_ref().ok_or_else(|| {
        Error::Config("stability needs --checkpoint or --features-csv".into())
    })?;
    let checkpoint = Checkpoint::load(ckpt_path)?;
    let params: ModelParams = checkpoint.to_params()?;
    let datasets = resolved.datasets()?;
    let ds = match &args.site {
        Some(name) => datasets
            .iter()
            .find(|d| &d.site_id == name)
            .ok_or_else(|| Error::Config(format!("unknown site '{name}'")))?,
        None => datasets
            .iter()
            .max_by_key(|d| d.rows_of(Split::Train).len())
            .expect("datasets nonempty"),
    };
    let q = feature_extract(&ds.x_of(Split::Train), &params)?;
    if args.feature_index >= q.cols() {
        return Err(Error::Config(format!(
            "feature index {} out of range ({} features)",
            args.feature_index,
            q.cols()
        )));
    }
    Ok((0..q.rows()).map(|r| q[(r, args.feature_index)]).collect())
}

/// Fit-stability comparison of the direct Gaussian fit against the Box-Cox
/// pipeline over increasing subsample sizes; writes stability.csv.
pub fn cmd_stability(resolved: &ResolvedConfig, args: &StabilityArgs) -> Result<Vec<StabilityRow<f64>>> {
    ensure_dir(&resolved.out_dir)?;
    let values = stability_values(resolved, args)?;
    let sizes: Vec<usize> = args
        .sample_sizes
        .iter()
        .copied()
        .filter(|&s| s <= values.len())
        .collect();
    if sizes.is_empty() {
        return Err(Error::Config(format!(
            "no sample size fits the {} available values",
            values.len()
        )));
    }
    let rows = fit_stability_experiment(
        &values,
        &sizes,
        args.repeats,
        mix_seed(resolved.seed, &[0x57AB]),
        args.with_replacement,
    )?;
    let mut csv = String::from("method,sample_size,std_of_mean\n");
    for row in &rows {
        writeln!(csv, "{},{},{}", row.method, row.sample_size, row.std_of_mean)
            .expect("string write");
    }
    std::fs::write(resolved.out_dir.join("stability.csv"), &csv)?;
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(csv.as_bytes());
    Ok(rows)
}

/// Exit-code contract: 0 success, 2 config error, 3 numerical divergence,
/// 4 I/O error, 1 anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parse { .. } => 2,
        Error::Divergence { .. } => 3,
        Error::Io(_) | Error::Json(_) => 4,
        _ => 1,
    }
}
