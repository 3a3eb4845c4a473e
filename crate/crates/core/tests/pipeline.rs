//! Public-API walk through: build and train a network, serialize it, corrupt
//! an input, propagate it with every registered method and score the results.

use fgprop_core::corruption::{corrupt, input_covariance, NoiseSetting};
use fgprop_core::metrics::{nemenyi_test, psd_sqrt, wasserstein2, ScoreTable};
use fgprop_core::net::{read_model, train, write_model, Loss, TrainConfig};
use fgprop_core::propagate::{propagate_mc, FgConfig, Registry, UtParams};
use fgprop_core::{Dataset, Gaussian, Network, RegressionSample};
use nalgebra::{DMatrix, DVector};

fn toy_images() -> Dataset {
    // Two 4x4 classes: bright left half or bright right half.
    let samples = (0..40)
        .map(|i| {
            let left = i % 2 == 0;
            let shade = 0.6 + 0.01 * i as f64;
            let input = (0..16).map(|p| if (p % 4 < 2) == left { shade } else { 0.1 }).collect();
            let target = if left { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
            RegressionSample::new(input, target)
        })
        .collect();
    Dataset::new(samples, Some((4, 4))).unwrap()
}

#[test]
fn train_serialize_propagate_score() {
    let data = toy_images();
    let init = Network::residual_mlp(16, 8, 2, 3).unwrap();
    let cfg = TrainConfig { epochs: 40, learning_rate: 0.05, batch_size: 8, seed: 3, loss: Loss::CrossEntropy };
    let (net, report) = train(&init, &data.samples, &cfg).unwrap();
    assert!(report.final_loss() < report.initial_loss);

    let mut bytes = Vec::new();
    write_model(&net, &mut bytes).unwrap();
    let net = read_model(bytes.as_slice()).unwrap();
    // Samples are stored in single precision, so one round trip rounds and
    // the next is exact.
    let restored = Dataset::from_bytes(&data.to_bytes()).unwrap();
    assert_eq!(restored.len(), data.len());
    for (a, b) in restored.samples.iter().zip(&data.samples) {
        assert!((&a.input - &b.input).amax() < 1e-7);
    }
    assert_eq!(Dataset::from_bytes(&restored.to_bytes()).unwrap(), restored);

    let setting = NoiseSetting::new(0.1, 3).unwrap();
    let mean = corrupt(&data.samples[0].input, &NoiseSetting::new(0.0, 3).unwrap(), (4, 4), 0).unwrap();
    let input = Gaussian::new(mean, input_covariance(&setting, (4, 4)).unwrap()).unwrap();
    let reference = propagate_mc(&net, &input, 20_000, 99).unwrap();

    let registry = Registry::standard(FgConfig::default(), UtParams::default(), 2000);
    let methods = registry.select(&["fg", "ekf", "ut", "mc"]).unwrap();
    let mut scores = Vec::new();
    for m in &methods {
        let out = m.propagate(&net, &input, 5).unwrap();
        assert_eq!(out.dim(), 2);
        let w2 = wasserstein2(&out, &reference, false).unwrap();
        assert!(w2.is_finite() && w2 >= 0.0, "{}: {w2}", m.name());
        scores.push(w2);
    }
    assert!(registry.select(&["fg", "nope"]).is_err());
    assert!(registry.select(&["fg", "fg"]).is_err());

    let table = ScoreTable::new(methods.iter().map(|m| m.name().to_string()).collect(), vec![scores.clone(), scores]).unwrap();
    let nem = nemenyi_test(&table, 0.05).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(nem.separates(i, j), nem.separates(j, i));
        }
    }
}

#[test]
fn metric_closed_forms() {
    let s = psd_sqrt(&DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]))).unwrap();
    assert!((s - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).amax() < 1e-12);

    let one = |v: f64| Gaussian::new(DVector::from_element(1, 5.0), DMatrix::from_element(1, 1, v)).unwrap();
    assert!((wasserstein2(&one(1.0), &one(4.0), false).unwrap() - 1.0).abs() < 1e-12);

    let diag = |a: f64, b: f64| Gaussian::new(DVector::zeros(2), DMatrix::from_diagonal(&DVector::from_vec(vec![a, b]))).unwrap();
    let w = wasserstein2(&diag(1.0, 4.0), &diag(9.0, 16.0), false).unwrap();
    assert!((w - 8f64.sqrt()).abs() < 1e-12);

    let a = Gaussian::new(DVector::from_vec(vec![0.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
    let b = a.with_mean(DVector::from_vec(vec![3.0, 4.0])).unwrap();
    assert!((wasserstein2(&a, &b, true).unwrap() - 5.0).abs() < 1e-12);
    assert_eq!(wasserstein2(&a, &b, false).unwrap(), 0.0);
}

#[test]
fn two_methods_with_maximal_rank_gap_are_separated() {
    let rows = vec![vec![0.1, 0.2]; 500];
    let table = ScoreTable::new(vec!["a".into(), "b".into()], rows).unwrap();
    assert!(nemenyi_test(&table, 0.001).unwrap().separates(0, 1));
}
