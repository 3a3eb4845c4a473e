use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LayerKind, Network};
use crate::dataset::RegressionSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// `(1/n) Σ ‖d_i − d̂_i‖²`.
    Mse,
    /// Softmax cross-entropy over logits; targets are one-hot or class
    /// probabilities.
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: Loss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.05,
            batch_size: 32,
            seed: 0,
            loss: Loss::Mse,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    /// Full-data loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

fn stack(data: &[RegressionSample], idx: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let din = data[idx[0]].input.len();
    let dout = data[idx[0]].target.len();
    let mut x = DMatrix::zeros(din, idx.len());
    let mut y = DMatrix::zeros(dout, idx.len());
    for (c, &i) in idx.iter().enumerate() {
        x.set_column(c, &data[i].input);
        y.set_column(c, &data[i].target);
    }
    (x, y)
}

fn softmax_columns(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = z.clone();
    for mut col in p.column_iter_mut() {
        let m = col.max();
        col.apply(|v| *v = (*v - m).exp());
        let s = col.sum();
        col /= s;
    }
    p
}

/// Mean loss over the columns of `pred` and its gradient with respect to `pred`.
fn loss_and_grad(loss: Loss, pred: &DMatrix<f64>, target: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let n = pred.ncols() as f64;
    match loss {
        Loss::Mse => {
            let diff = pred - target;
            (diff.norm_squared() / n, diff * (2.0 / n))
        }
        Loss::CrossEntropy => {
            let p = softmax_columns(pred);
            let mut value = 0.0;
            for (pc, tc) in p.column_iter().zip(target.column_iter()) {
                for (pk, tk) in pc.iter().zip(tc.iter()) {
                    if *tk != 0.0 {
                        value -= tk * pk.max(1e-300).ln();
                    }
                }
            }
            (value / n, (p - target) / n)
        }
    }
}

/// Mean training loss of `net` on `data`.
pub fn evaluate_loss(net: &Network, data: &[RegressionSample], loss: Loss) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, y) = stack(data, &idx);
    let pred = net.output_batch(&x)?;
    Ok(loss_and_grad(loss, &pred, &y).0)
}

/// Plain mini-batch gradient descent. Deterministic for a fixed seed; the
/// weights stay single-precision representable after every update.
pub fn train(net: &Network, data: &[RegressionSample], config: &TrainConfig) -> Result<(Network, TrainReport)> {
    if data.is_empty() {
        return Err(Error::Config("training data is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    for s in data {
        if s.input.len() != net.input_dim() {
            return Err(Error::Shape { expected: net.input_dim(), got: s.input.len() });
        }
        if s.target.len() != net.output_dim() {
            return Err(Error::Shape { expected: net.output_dim(), got: s.target.len() });
        }
    }

    let mut net = net.clone();
    let initial_loss = evaluate_loss(&net, data, config.loss)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let (x, y) = stack(data, batch);
            let acts = net.forward_batch(&x)?;
            let (value, grad_out) = loss_and_grad(config.loss, acts.last().unwrap(), &y);
            if !value.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let updates = backward(&net, &acts, grad_out);
            for (pos, dw, db) in updates {
                if let LayerKind::Affine { weight, bias } = &mut net.layers_mut()[pos].kind {
                    weight.zip_apply(&dw, |w, g| *w = (*w - config.learning_rate * g) as f32 as f64);
                    bias.zip_apply(&db, |b, g| *b = (*b - config.learning_rate * g) as f32 as f64);
                }
            }
        }
        let l = evaluate_loss(&net, data, config.loss)?;
        if !l.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        epoch_losses.push(l);
    }
    Ok((net, TrainReport { initial_loss, epoch_losses }))
}

/// Reverse-mode pass over the DAG. Returns `(layer position, dW, db)` for
/// every affine layer that receives gradient.
fn backward(
    net: &Network,
    acts: &[DMatrix<f64>],
    grad_out: DMatrix<f64>,
) -> Vec<(usize, DMatrix<f64>, DVector<f64>)> {
    let layers = net.layers();
    let mut grads: Vec<Option<DMatrix<f64>>> = vec![None; layers.len()];
    *grads.last_mut().unwrap() = Some(grad_out);
    let mut updates = Vec::new();

    let accumulate = |grads: &mut Vec<Option<DMatrix<f64>>>, pos: usize, g: DMatrix<f64>| {
        match &mut grads[pos] {
            Some(acc) => *acc += g,
            slot @ None => *slot = Some(g),
        }
    };

    for pos in (1..layers.len()).rev() {
        let Some(g) = grads[pos].take() else { continue };
        let layer = &layers[pos];
        let src: Vec<usize> = layer.inputs.iter().map(|id| net.index[id]).collect();
        match &layer.kind {
            LayerKind::Input { .. } => {}
            LayerKind::Affine { weight, .. } => {
                let dw = &g * acts[src[0]].transpose();
                let db = g.column_sum();
                let gin = weight.transpose() * &g;
                updates.push((pos, dw, db));
                accumulate(&mut grads, src[0], gin);
            }
            LayerKind::Relu => {
                let pre = &acts[src[0]];
                let gin = g.zip_map(pre, |gv, p| if p > 0.0 { gv } else { 0.0 });
                accumulate(&mut grads, src[0], gin);
            }
            LayerKind::Add => {
                accumulate(&mut grads, src[0], g.clone());
                accumulate(&mut grads, src[1], g);
            }
        }
    }
    updates
}

/// Fraction of samples whose arg-max output matches the arg-max target.
pub fn classification_accuracy(net: &Network, data: &[RegressionSample]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for s in data {
        let out = net.output(&s.input)?;
        if out.argmax().0 == s.target.argmax().0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetworkBuilder;

    fn line_data() -> Vec<RegressionSample> {
        (0..100)
            .map(|i| {
                let x = -1.0 + 2.0 * i as f64 / 99.0;
                RegressionSample::new(vec![x], vec![2.0 * x + 1.0])
            })
            .collect()
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let net = Network::mlp(&[1, 1], 3).unwrap();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let (trained, report) = train(&net, &line_data(), &cfg).unwrap();
        assert_eq!(trained, net);
        assert!(report.epoch_losses.is_empty());
    }

    #[test]
    fn fits_a_line_to_closed_form_least_squares() {
        let data = line_data();
        // Closed-form least squares oracle for y = w x + b.
        let n = data.len() as f64;
        let (sx, sy, sxx, sxy) = data.iter().fold((0.0, 0.0, 0.0, 0.0), |acc, s| {
            let (x, y) = (s.input[0], s.target[0]);
            (acc.0 + x, acc.1 + y, acc.2 + x * x, acc.3 + x * y)
        });
        let w_ls = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let b_ls = (sy - w_ls * sx) / n;

        let net = Network::mlp(&[1, 1], 11).unwrap();
        let cfg = TrainConfig { epochs: 300, learning_rate: 0.05, batch_size: 10, seed: 1, loss: Loss::Mse };
        let (trained, report) = train(&net, &data, &cfg).unwrap();
        let LayerKind::Affine { weight, bias } = &trained.layers()[1].kind else { panic!() };
        assert!((weight[(0, 0)] - w_ls).abs() < 1e-2, "w = {}", weight[(0, 0)]);
        assert!((bias[0] - b_ls).abs() < 1e-2, "b = {}", bias[0]);
        assert!(report.final_loss() < report.initial_loss);
    }

    #[test]
    fn training_is_reproducible() {
        let data = line_data();
        let net = Network::mlp(&[1, 4, 1], 2).unwrap();
        let cfg = TrainConfig { epochs: 5, ..Default::default() };
        let (a, _) = train(&net, &data, &cfg).unwrap();
        let (b, _) = train(&net, &data, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_reports_epoch() {
        let data = line_data();
        let mut b = NetworkBuilder::new(1);
        b.affine(0, DMatrix::from_element(1, 1, 1.0), DVector::zeros(1));
        let net = b.build().unwrap();
        let cfg = TrainConfig { epochs: 50, learning_rate: 1e6, batch_size: 100, seed: 0, loss: Loss::Mse };
        assert!(matches!(train(&net, &data, &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn gradients_match_finite_differences() {
        // Check backward() on a residual net against numeric loss derivatives.
        let net = Network::residual_mlp(3, 4, 2, 5).unwrap();
        let data: Vec<_> = (0..6)
            .map(|i| {
                let f = i as f64;
                RegressionSample::new(vec![0.3 * f - 0.7, 0.5 - 0.2 * f, 0.1 * f * f - 0.4], vec![0.2 * f, -0.1 * f])
            })
            .collect();
        let idx: Vec<usize> = (0..data.len()).collect();
        let (x, y) = stack(&data, &idx);
        for loss in [Loss::Mse, Loss::CrossEntropy] {
            let y = if loss == Loss::CrossEntropy { softmax_columns(&y) } else { y.clone() };
            let acts = net.forward_batch(&x).unwrap();
            let (_, g) = loss_and_grad(loss, acts.last().unwrap(), &y);
            let updates = backward(&net, &acts, g);
            for (pos, dw, _) in updates {
                for (r, c) in [(0usize, 0usize), (1, 2), (0, 1)] {
                    if r >= dw.nrows() || c >= dw.ncols() {
                        continue;
                    }
                    let eps = 1e-6;
                    let bump = |delta: f64| {
                        let mut n2 = net.clone();
                        if let LayerKind::Affine { weight, .. } = &mut n2.layers_mut()[pos].kind {
                            weight[(r, c)] += delta;
                        }
                        let pred = n2.output_batch(&x).unwrap();
                        loss_and_grad(loss, &pred, &y).0
                    };
                    let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps);
                    assert!((numeric - dw[(r, c)]).abs() < 1e-6, "{loss:?} layer {pos}: {numeric} vs {}", dw[(r, c)]);
                }
            }
        }
    }
}
