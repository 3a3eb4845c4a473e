//! A small feedforward network engine: affine, ReLU and additive skip layers
//! arranged in a DAG, with exact Jacobians and truncation to any layer.

mod io;
mod train;

pub use io::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION};
pub use train::{classification_accuracy, evaluate_loss, train, Loss, TrainConfig, TrainReport};

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type LayerId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    /// The single network input; has no sources.
    Input { dim: usize },
    /// `W·x + b` with `W` of shape `out × in`.
    Affine {
        weight: DMatrix<f64>,
        bias: DVector<f64>,
    },
    Relu,
    /// Elementwise sum of exactly two sources of equal dimension.
    Add,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Affine { .. } => "affine",
            LayerKind::Relu => "relu",
            LayerKind::Add => "add",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub id: LayerId,
    pub kind: LayerKind,
    pub inputs: Vec<LayerId>,
}

/// A validated, topologically ordered layer DAG. The last layer is the
/// network output.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    dims: Vec<usize>,
    index: HashMap<LayerId, usize>,
}

impl Network {
    /// Validates `layers` and builds a network whose output is the last layer.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Graph("network has no layers".into()));
        }
        let mut index = HashMap::with_capacity(layers.len());
        let mut dims = Vec::with_capacity(layers.len());
        let mut inputs_seen = 0usize;
        for (pos, layer) in layers.iter().enumerate() {
            if index.insert(layer.id, pos).is_some() {
                return Err(Error::Graph(format!("duplicate layer id {}", layer.id)));
            }
            let mut source_dims = Vec::with_capacity(layer.inputs.len());
            for src in &layer.inputs {
                match index.get(src) {
                    Some(&p) if p < pos => source_dims.push(dims[p]),
                    _ => {
                        return Err(Error::Graph(format!(
                            "layer {} reads layer {src}, which does not precede it",
                            layer.id
                        )))
                    }
                }
            }
            let arity = |n: usize| -> Result<()> {
                if layer.inputs.len() != n {
                    return Err(Error::Graph(format!(
                        "{} layer {} needs {n} source(s), has {}",
                        layer.kind.name(),
                        layer.id,
                        layer.inputs.len()
                    )));
                }
                Ok(())
            };
            let dim = match &layer.kind {
                LayerKind::Input { dim } => {
                    arity(0)?;
                    inputs_seen += 1;
                    if *dim == 0 {
                        return Err(Error::Graph("input dimension must be positive".into()));
                    }
                    *dim
                }
                LayerKind::Affine { weight, bias } => {
                    arity(1)?;
                    if weight.ncols() != source_dims[0] {
                        return Err(Error::Graph(format!(
                            "affine layer {} expects {} inputs but its source has {}",
                            layer.id,
                            weight.ncols(),
                            source_dims[0]
                        )));
                    }
                    if bias.len() != weight.nrows() || weight.nrows() == 0 {
                        return Err(Error::Graph(format!(
                            "affine layer {}: bias length {} does not match {} weight rows",
                            layer.id,
                            bias.len(),
                            weight.nrows()
                        )));
                    }
                    weight.nrows()
                }
                LayerKind::Relu => {
                    arity(1)?;
                    source_dims[0]
                }
                LayerKind::Add => {
                    arity(2)?;
                    if source_dims[0] != source_dims[1] {
                        return Err(Error::Graph(format!(
                            "add layer {} joins dimensions {} and {}",
                            layer.id, source_dims[0], source_dims[1]
                        )));
                    }
                    source_dims[0]
                }
            };
            dims.push(dim);
        }
        if inputs_seen != 1 || !matches!(layers[0].kind, LayerKind::Input { .. }) {
            return Err(Error::Graph(
                "network needs exactly one input layer, placed first".into(),
            ));
        }
        Ok(Self {
            layers,
            dims,
            index,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_id(&self) -> LayerId {
        self.layers[0].id
    }

    pub fn output_id(&self) -> LayerId {
        self.layers[self.layers.len() - 1].id
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    /// Position of `id` in topological order.
    pub fn position(&self, id: LayerId) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownLayer(id))
    }

    pub fn layer_dim(&self, id: LayerId) -> Result<usize> {
        Ok(self.dims[self.position(id)?])
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match &l.kind {
                LayerKind::Affine { weight, bias } => weight.len() + bias.len(),
                _ => 0,
            })
            .sum()
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: len,
            });
        }
        Ok(())
    }

    /// Activations of every layer, in topological order.
    pub fn forward(&self, x: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        self.check_input(x.len())?;
        let mut acts: Vec<DVector<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let src = |k: usize| &acts[self.index[&layer.inputs[k]]];
            let a = match &layer.kind {
                LayerKind::Input { .. } => x.clone(),
                LayerKind::Affine { weight, bias } => weight * src(0) + bias,
                LayerKind::Relu => src(0).map(|v| v.max(0.0)),
                LayerKind::Add => src(0) + src(1),
            };
            acts.push(a);
        }
        Ok(acts)
    }

    /// Network output at `x`.
    pub fn output(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.forward(x)?.pop().expect("network has layers"))
    }

    /// Batched forward pass; columns of `xs` are samples. Returns per-layer
    /// activation matrices in topological order.
    pub fn forward_batch(&self, xs: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_input(xs.nrows())?;
        let mut acts: Vec<DMatrix<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let src = |k: usize| &acts[self.index[&layer.inputs[k]]];
            let a = match &layer.kind {
                LayerKind::Input { .. } => xs.clone(),
                LayerKind::Affine { weight, bias } => {
                    let mut out = weight * src(0);
                    for mut col in out.column_iter_mut() {
                        col += bias;
                    }
                    out
                }
                LayerKind::Relu => src(0).map(|v| v.max(0.0)),
                LayerKind::Add => src(0) + src(1),
            };
            acts.push(a);
        }
        Ok(acts)
    }

    /// Batched network output; columns of `xs` are samples.
    pub fn output_batch(&self, xs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_batch(xs)?.pop().expect("network has layers"))
    }

    /// Forward-mode tangent propagation: returns `(activation, J·seed)` at
    /// layer `target`, where `J` is the Jacobian of that layer's activation
    /// with respect to the network input at `x`. `seed` has `input_dim` rows.
    ///
    /// ReLU uses the subgradient 0 at exactly 0.
    pub fn push_tangent(
        &self,
        x: &DVector<f64>,
        target: LayerId,
        seed: &DMatrix<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let stop = self.position(target)?;
        self.check_input(x.len())?;
        if seed.nrows() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: seed.nrows(),
            });
        }
        let mut acts: Vec<DVector<f64>> = Vec::with_capacity(stop + 1);
        let mut tangents: Vec<DMatrix<f64>> = Vec::with_capacity(stop + 1);
        for layer in &self.layers[..=stop] {
            let at = |k: usize| self.index[&layer.inputs[k]];
            let (a, t) = match &layer.kind {
                LayerKind::Input { .. } => (x.clone(), seed.clone()),
                LayerKind::Affine { weight, bias } => {
                    let s = at(0);
                    (weight * &acts[s] + bias, weight * &tangents[s])
                }
                LayerKind::Relu => {
                    let s = at(0);
                    let pre = &acts[s];
                    let mut t = tangents[s].clone();
                    for (i, mut row) in t.row_iter_mut().enumerate() {
                        if pre[i] <= 0.0 {
                            row.fill(0.0);
                        }
                    }
                    (pre.map(|v| v.max(0.0)), t)
                }
                LayerKind::Add => {
                    let (s0, s1) = (at(0), at(1));
                    (&acts[s0] + &acts[s1], &tangents[s0] + &tangents[s1])
                }
            };
            acts.push(a);
            tangents.push(t);
        }
        Ok((acts.pop().unwrap(), tangents.pop().unwrap()))
    }

    /// Exact Jacobian of layer `target`'s activation with respect to the input.
    pub fn jacobian(&self, x: &DVector<f64>, target: LayerId) -> Result<DMatrix<f64>> {
        let n = self.input_dim();
        Ok(self.push_tangent(x, target, &DMatrix::identity(n, n))?.1)
    }

    /// Central-difference Jacobian of layer `target`, column `j` being
    /// `(f(x + eps·e_j) − f(x − eps·e_j)) / (2·eps)`.
    pub fn finite_diff_jacobian(
        &self,
        x: &DVector<f64>,
        target: LayerId,
        eps: f64,
    ) -> Result<DMatrix<f64>> {
        if !(eps > 0.0) {
            return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
        }
        let pos = self.position(target)?;
        self.check_input(x.len())?;
        let mut jac = DMatrix::zeros(self.dims[pos], x.len());
        for j in 0..x.len() {
            let mut hi = x.clone();
            hi[j] += eps;
            let mut lo = x.clone();
            lo[j] -= eps;
            let d = (&self.forward(&hi)?[pos] - &self.forward(&lo)?[pos]) / (2.0 * eps);
            jac.set_column(j, &d);
        }
        Ok(jac)
    }

    /// The sub-network computing layer `target`: its ancestors in the
    /// original order, with original ids, ending at `target`.
    pub fn truncate(&self, target: LayerId) -> Result<Network> {
        let stop = self.position(target)?;
        let mut keep = vec![false; stop + 1];
        keep[stop] = true;
        for pos in (0..=stop).rev() {
            if keep[pos] {
                for src in &self.layers[pos].inputs {
                    keep[self.index[src]] = true;
                }
            }
        }
        if !keep[0] {
            return Err(Error::Graph(format!(
                "layer {target} is not reachable from the input"
            )));
        }
        let layers = self.layers[..=stop]
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(l, _)| l.clone())
            .collect();
        Network::new(layers)
    }

    /// Plain MLP `dims[0] → dims[1] → … → dims[last]` with ReLU between
    /// affine layers and none after the last one.
    pub fn mlp(dims: &[usize], seed: u64) -> Result<Network> {
        if dims.len() < 2 {
            return Err(Error::Config("an MLP needs at least input and output sizes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = NetworkBuilder::new(dims[0]);
        let mut cur = b.input();
        for (i, w) in dims.windows(2).enumerate() {
            let (weight, bias) = glorot_uniform(&mut rng, w[0], w[1]);
            cur = b.affine(cur, weight, bias);
            if i + 2 < dims.len() {
                cur = b.relu(cur);
            }
        }
        b.build()
    }

    /// Four-affine-layer residual MLP:
    ///
    /// ```text
    /// h1 = relu(A1 x);  h2 = relu(A2 h1);  s = h1 + h2;  h3 = relu(A3 s);  y = A4 h3
    /// ```
    pub fn residual_mlp(input: usize, width: usize, output: usize, seed: u64) -> Result<Network> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = NetworkBuilder::new(input);
        let x = b.input();
        let (w, c) = glorot_uniform(&mut rng, input, width);
        let a1 = b.affine(x, w, c);
        let h1 = b.relu(a1);
        let (w, c) = glorot_uniform(&mut rng, width, width);
        let a2 = b.affine(h1, w, c);
        let h2 = b.relu(a2);
        let s = b.add(h2, h1);
        let (w, c) = glorot_uniform(&mut rng, width, width);
        let a3 = b.affine(s, w, c);
        let h3 = b.relu(a3);
        let (w, c) = glorot_uniform(&mut rng, width, output);
        b.affine(h3, w, c);
        b.build()
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}

/// Glorot-uniform weights in `±√(6 / (fan_in + fan_out))`, zero bias, rounded
/// to single precision so the model file stores them exactly.
pub fn glorot_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> (DMatrix<f64>, DVector<f64>) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let weight = DMatrix::from_fn(fan_out, fan_in, |_, _| {
        rng.random_range(-limit..limit) as f32 as f64
    });
    (weight, DVector::zeros(fan_out))
}

/// Incremental construction of a [`Network`]; validation happens in `build`.
#[derive(Debug, Clone)]
pub struct NetworkBuilder {
    layers: Vec<Layer>,
}

impl NetworkBuilder {
    pub fn new(input_dim: usize) -> Self {
        Self {
            layers: vec![Layer {
                id: 0,
                kind: LayerKind::Input { dim: input_dim },
                inputs: vec![],
            }],
        }
    }

    pub fn input(&self) -> LayerId {
        0
    }

    fn push(&mut self, kind: LayerKind, inputs: Vec<LayerId>) -> LayerId {
        let id = self.layers.len();
        self.layers.push(Layer { id, kind, inputs });
        id
    }

    pub fn affine(&mut self, src: LayerId, weight: DMatrix<f64>, bias: DVector<f64>) -> LayerId {
        self.push(LayerKind::Affine { weight, bias }, vec![src])
    }

    pub fn relu(&mut self, src: LayerId) -> LayerId {
        self.push(LayerKind::Relu, vec![src])
    }

    pub fn add(&mut self, a: LayerId, b: LayerId) -> LayerId {
        self.push(LayerKind::Add, vec![a, b])
    }

    pub fn build(self) -> Result<Network> {
        Network::new(self.layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn identity_affine_forward() {
        let mut b = NetworkBuilder::new(2);
        b.affine(0, DMatrix::identity(2, 2), DVector::zeros(2));
        let net = b.build().unwrap();
        assert_eq!(net.output(&v(&[3.0, 4.0])).unwrap(), v(&[3.0, 4.0]));
    }

    #[test]
    fn relu_clamps_negative_preactivation() {
        let mut b = NetworkBuilder::new(2);
        let a = b.affine(0, DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[1.0]));
        b.relu(a);
        let net = b.build().unwrap();
        assert_eq!(net.output(&v(&[-2.0, -3.0])).unwrap(), v(&[0.0]));
    }

    #[test]
    fn wrong_input_length_is_a_shape_error() {
        let net = Network::mlp(&[3, 2], 0).unwrap();
        assert!(matches!(
            net.forward(&v(&[1.0, 2.0])),
            Err(Error::Shape { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn affine_jacobian_is_weight() {
        let net = Network::mlp(&[3, 2], 5).unwrap();
        let LayerKind::Affine { weight, .. } = &net.layers()[1].kind else {
            panic!()
        };
        let j = net.jacobian(&v(&[0.3, -1.0, 2.0]), net.output_id()).unwrap();
        assert_eq!(&j, weight);
        let fd = net
            .finite_diff_jacobian(&v(&[0.3, -1.0, 2.0]), net.output_id(), 1e-3)
            .unwrap();
        assert!((fd - weight).abs().max() < 1e-9);
    }

    #[test]
    fn relu_jacobian_is_indicator() {
        let mut b = NetworkBuilder::new(2);
        b.relu(0);
        let net = b.build().unwrap();
        let j = net.jacobian(&v(&[2.0, -1.0]), net.output_id()).unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        // Subgradient at exactly zero is 0.
        let j0 = net.jacobian(&v(&[0.0, 1.0]), net.output_id()).unwrap();
        assert_eq!(j0[(0, 0)], 0.0);
        let fd = net.finite_diff_jacobian(&v(&[1.0, 3.0]), net.output_id(), 1e-5).unwrap();
        assert!((fd[(0, 0)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_layer_is_a_lookup_error() {
        let net = Network::mlp(&[2, 2], 0).unwrap();
        assert!(matches!(net.jacobian(&v(&[0.0, 0.0]), 99), Err(Error::UnknownLayer(99))));
        assert!(matches!(net.truncate(42), Err(Error::UnknownLayer(42))));
    }

    #[test]
    fn validation_catches_bad_graphs() {
        let add_mismatch = vec![
            Layer { id: 0, kind: LayerKind::Input { dim: 2 }, inputs: vec![] },
            Layer {
                id: 1,
                kind: LayerKind::Affine { weight: DMatrix::zeros(3, 2), bias: DVector::zeros(3) },
                inputs: vec![0],
            },
            Layer { id: 2, kind: LayerKind::Add, inputs: vec![0, 1] },
        ];
        assert!(matches!(Network::new(add_mismatch), Err(Error::Graph(_))));

        let bad_bias = vec![
            Layer { id: 0, kind: LayerKind::Input { dim: 2 }, inputs: vec![] },
            Layer {
                id: 1,
                kind: LayerKind::Affine { weight: DMatrix::zeros(3, 2), bias: DVector::zeros(2) },
                inputs: vec![0],
            },
        ];
        assert!(matches!(Network::new(bad_bias), Err(Error::Graph(_))));

        let forward_ref = vec![
            Layer { id: 0, kind: LayerKind::Input { dim: 2 }, inputs: vec![] },
            Layer { id: 1, kind: LayerKind::Relu, inputs: vec![2] },
            Layer { id: 2, kind: LayerKind::Relu, inputs: vec![0] },
        ];
        assert!(matches!(Network::new(forward_ref), Err(Error::Graph(_))));

        let two_inputs = vec![
            Layer { id: 0, kind: LayerKind::Input { dim: 2 }, inputs: vec![] },
            Layer { id: 1, kind: LayerKind::Input { dim: 2 }, inputs: vec![] },
        ];
        assert!(matches!(Network::new(two_inputs), Err(Error::Graph(_))));
    }

    #[test]
    fn truncate_at_output_is_identity() {
        let net = Network::residual_mlp(4, 3, 2, 1).unwrap();
        assert_eq!(net.truncate(net.output_id()).unwrap(), net);
    }

    #[test]
    fn truncate_inside_residual_block_keeps_skip_source() {
        let net = Network::residual_mlp(4, 3, 2, 1).unwrap();
        // ids: 0 x, 1 a1, 2 h1, 3 a2, 4 h2, 5 add(h2, h1), ...
        let t = net.truncate(5).unwrap();
        let ids: Vec<_> = t.layers().iter().map(|l| l.id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(t.layers()[5].inputs, vec![4, 2]);
        // Truncating at the second branch drops nothing upstream of it but the add.
        let t4 = net.truncate(4).unwrap();
        assert_eq!(t4.layers().len(), 5);
        assert_eq!(t4.output_dim(), 3);
    }

    #[test]
    fn batch_forward_matches_single() {
        let net = Network::residual_mlp(5, 4, 3, 9).unwrap();
        let xs = DMatrix::from_fn(5, 7, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let out = net.output_batch(&xs).unwrap();
        for j in 0..7 {
            let single = net.output(&xs.column(j).into_owned()).unwrap();
            assert!((out.column(j) - single).abs().max() < 1e-12);
        }
    }

    #[test]
    fn glorot_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, b) = glorot_uniform(&mut rng, 10, 6);
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(w.iter().all(|v| v.abs() <= limit && (*v as f32) as f64 == *v));
        assert!(b.iter().all(|v| *v == 0.0));
    }
}
