//! Default-benchmark invariants: the injected site effect is learnable from
//! raw inputs, visible through an untrained extractor, and removable in
//! principle when the shift/scale parameters are known.

use harmsim_core::eval::{
    fit_site_probe, probe_balanced_accuracy, scanner_classification_accuracy, ProbeConfig,
};
use harmsim_core::model::{init_params, NetworkSpec};
use harmsim_core::ndcore::Matrix;
use harmsim_core::synthdata::{default_benchmark, default_benchmark_specs, SiteDataset, Split};

fn stacked_raw(datasets: &[SiteDataset], split: Split) -> (Matrix<f64>, Vec<usize>) {
    let mut m: Option<Matrix<f64>> = None;
    let mut labels = Vec::new();
    for (i, ds) in datasets.iter().enumerate() {
        let x = ds.x_of(split);
        labels.extend(std::iter::repeat(i).take(x.rows()));
        m = Some(match m {
            None => x,
            Some(acc) => acc.vstack(&x).unwrap(),
        });
    }
    (m.unwrap(), labels)
}

fn linear_probe_accuracy(datasets: &[SiteDataset], seed: u64) -> f64 {
    let cfg = ProbeConfig {
        hidden_layers: vec![],
        epochs: 400,
        lr: 1e-2,
        val_fraction: 0.2,
        patience: 40,
    };
    let (xtr, dtr) = stacked_raw(datasets, Split::Train);
    let (xte, dte) = stacked_raw(datasets, Split::Test);
    let probe = fit_site_probe(&xtr, &dtr, datasets.len(), &cfg, seed).unwrap();
    probe_balanced_accuracy(&probe, &xte, &dte, datasets.len()).unwrap()
}

#[test]
fn raw_inputs_expose_the_site_effect_to_a_linear_probe() {
    for seed in 1..=3u64 {
        let datasets = default_benchmark(seed).unwrap();
        let acc = linear_probe_accuracy(&datasets, seed);
        assert!(acc > 80.0, "seed {seed}: raw linear probe only {acc:.1}%");
    }
}

#[test]
fn known_shift_and_scale_invert_the_site_effect() {
    // knowing the per-site distortion, undoing it drops a linear probe to
    // chance within ten points
    for seed in 1..=2u64 {
        let specs = default_benchmark_specs(seed);
        let mut datasets = default_benchmark(seed).unwrap();
        for (ds, spec) in datasets.iter_mut().zip(&specs) {
            for r in 0..ds.x.rows() {
                for c in 0..ds.x.cols() {
                    ds.x[(r, c)] =
                        (ds.x[(r, c)] - spec.feature_shift[c]) / spec.feature_scale[c];
                }
            }
        }
        let acc = linear_probe_accuracy(&datasets, seed);
        assert!(
            (acc - 25.0).abs() <= 10.0,
            "seed {seed}: probe after inverse transform at {acc:.1}%"
        );
    }
}

#[test]
fn untrained_extractor_still_leaks_site_information() {
    for seed in 1..=3u64 {
        let datasets = default_benchmark(seed).unwrap();
        let spec = NetworkSpec::desk_default(16, 16, 4);
        let params = init_params::<f64>(&spec, seed).unwrap();
        let sca =
            scanner_classification_accuracy(&params, &datasets, &ProbeConfig::default(), seed)
                .unwrap();
        assert!(sca > 60.0, "seed {seed}: untrained-extractor SCA {sca:.1}%");
    }
}
