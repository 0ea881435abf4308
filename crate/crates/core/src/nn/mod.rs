//! Small fully-connected networks with hand-written backpropagation.
//!
//! Activations are column-per-sample matrices (`features x batch`). Each
//! dense layer computes `z = W x + b`, optional batch normalization, the
//! activation, then (training only) inverted dropout.

mod adam;
mod checkpoint;
mod classify;
mod loss;
mod surrogate;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_mlp, read_mlp, save_mlp, write_mlp};
pub use classify::{classify_pixels, PixelClassification};
pub use loss::{cross_entropy, mse, LossKind};
pub use surrogate::{
    generate_oracle_dataset, oracle_spectrum, surrogate_mse, train_surrogate, GeometryParams, Surrogate,
    SurrogateCache, SurrogateConfig, SurrogateGrads, SurrogateReport, MAX_BOXES, PERIODS_NM, SHAPE_DIM,
    THICKNESSES_NM,
};
pub use train::{train, train_standardized, Targets, TrainConfig, TrainReport, Trainer};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
    Softmax,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Identity => 2,
            Activation::Softmax => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Activation::Relu,
            1 => Activation::Sigmoid,
            2 => Activation::Identity,
            3 => Activation::Softmax,
            _ => return None,
        })
    }

    fn apply(self, m: &mut DMatrix<f64>) {
        match self {
            Activation::Relu => m.apply(|v| *v = v.max(0.0)),
            Activation::Sigmoid => m.apply(|v| *v = sigmoid(*v)),
            Activation::Identity => {}
            Activation::Softmax => {
                for mut col in m.column_iter_mut() {
                    let max = col.max();
                    col.apply(|v| *v = (*v - max).exp());
                    let s = col.sum();
                    col /= s;
                }
            }
        }
    }

    /// Gradient w.r.t. the activation input given the gradient w.r.t. its output.
    fn backprop(self, out: &DMatrix<f64>, pre: &DMatrix<f64>, grad: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Activation::Relu => grad.zip_map(pre, |g, p| if p > 0.0 { g } else { 0.0 }),
            Activation::Sigmoid => grad.zip_map(out, |g, y| g * y * (1.0 - y)),
            Activation::Identity => grad.clone(),
            Activation::Softmax => {
                let mut d = grad.clone();
                for (j, mut col) in d.column_iter_mut().enumerate() {
                    let y = out.column(j);
                    let dot = y.dot(&grad.column(j));
                    for i in 0..col.len() {
                        col[i] = y[i] * (grad[(i, j)] - dot);
                    }
                }
                d
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Batch normalization with learnable scale/shift and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    pub running_mean: DVector<f64>,
    pub running_var: DVector<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: DVector::from_element(features, 1.0),
            beta: DVector::zeros(features),
            running_mean: DVector::zeros(features),
            running_var: DVector::from_element(features, 1.0),
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// out x in
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
    pub batch_norm: Option<BatchNorm>,
    pub dropout: f64,
}

impl Dense {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Shape of one layer for [`Mlp::new`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub size: usize,
    pub activation: Activation,
    #[serde(default)]
    pub batch_norm: bool,
    #[serde(default)]
    pub dropout: f64,
}

impl LayerSpec {
    pub fn new(size: usize, activation: Activation) -> Self {
        Self {
            size,
            activation,
            batch_norm: false,
            dropout: 0.0,
        }
    }

    pub fn with_batch_norm(mut self) -> Self {
        self.batch_norm = true;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout = rate;
        self
    }
}

/// Hidden ReLU layers followed by an output layer.
pub fn layer_stack(hidden: &[usize], output: usize, head: Activation) -> Vec<LayerSpec> {
    hidden
        .iter()
        .map(|&h| LayerSpec::new(h, Activation::Relu))
        .chain(std::iter::once(LayerSpec::new(output, head)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Whether dropout and batch statistics are active.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn reborrow(&mut self) -> Mode<'_> {
        match self {
            Mode::Eval => Mode::Eval,
            Mode::Train(rng) => Mode::Train(rng),
        }
    }
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: DMatrix<f64>,
    inv_std: DVector<f64>,
    batch_mean: DVector<f64>,
    batch_var: DVector<f64>,
    train: bool,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: DMatrix<f64>,
    bn: Option<BnCache>,
    pre: DMatrix<f64>,
    out: DMatrix<f64>,
    mask: Option<DMatrix<f64>>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    layers: Vec<LayerCache>,
}

/// Where the incoming gradient attaches to the network output.
pub enum OutputGrad<'a> {
    /// Gradient w.r.t. the network output.
    Activations(&'a DMatrix<f64>),
    /// Gradient w.r.t. the input of the output activation (e.g. softmax logits).
    PreActivation(&'a DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub gamma: Option<DVector<f64>>,
    pub beta: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    /// Gradient w.r.t. the network input, `in x batch`.
    pub input: DMatrix<f64>,
}

impl Gradients {
    /// Slices in [`Mlp::param_slices_mut`] order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weights.as_slice());
            out.push(l.bias.as_slice());
            if let (Some(g), Some(b)) = (&l.gamma, &l.beta) {
                out.push(g.as_slice());
                out.push(b.as_slice());
            }
        }
        out
    }
}

impl Mlp {
    pub fn new(input_dim: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if input_dim == 0 || specs.is_empty() {
            return Err(Error::InvalidArgument("network needs an input and at least one layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = input_dim;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            if s.size == 0 {
                return Err(Error::InvalidArgument(format!("layer {i} has zero width")));
            }
            if !(0.0..1.0).contains(&s.dropout) {
                return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", s.dropout)));
            }
            if s.activation == Activation::Softmax && i + 1 != specs.len() {
                return Err(Error::InvalidArgument("softmax is only allowed on the output layer".into()));
            }
            let limit = match s.activation {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + s.size) as f64).sqrt(),
            };
            let weights = DMatrix::from_fn(s.size, fan_in, |_, _| rng.random_range(-limit..limit));
            layers.push(Dense {
                weights,
                bias: DVector::zeros(s.size),
                activation: s.activation,
                batch_norm: s.batch_norm.then(|| BatchNorm::new(s.size)),
                dropout: s.dropout,
            });
            fan_in = s.size;
        }
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::DimensionMismatch(format!("layer {i} bias length")));
            }
            if i > 0 && layers[i - 1].output_dim() != l.input_dim() {
                return Err(Error::DimensionMismatch(format!("layer {i} input width")));
            }
            if let Some(bn) = &l.batch_norm {
                let n = l.output_dim();
                if bn.gamma.len() != n || bn.beta.len() != n || bn.running_mean.len() != n || bn.running_var.len() != n {
                    return Err(Error::DimensionMismatch(format!("layer {i} batch-norm size")));
                }
            }
            if !(0.0..1.0).contains(&l.dropout) {
                return Err(Error::InvalidArgument(format!("layer {i} dropout {}", l.dropout)));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn output_activation(&self) -> Activation {
        self.layers[self.layers.len() - 1].activation
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len() + l.batch_norm.as_ref().map_or(0, |b| 2 * b.gamma.len()))
            .sum()
    }

    /// Trainable parameters: per layer weights, bias, then BN gamma and beta.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weights.as_mut_slice());
            out.push(l.bias.as_mut_slice());
            if let Some(bn) = &mut l.batch_norm {
                out.push(bn.gamma.as_mut_slice());
                out.push(bn.beta.as_mut_slice());
            }
        }
        out
    }

    pub fn forward_batch(&self, x: &DMatrix<f64>, mut mode: Mode<'_>) -> Result<(DMatrix<f64>, Cache)> {
        if x.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input has {} features, network expects {}",
                x.nrows(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite network input".into()));
        }
        let batch = x.ncols();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let mut z = &layer.weights * &cur;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            let mut bn_cache = None;
            if let Some(bn) = &layer.batch_norm {
                let train = matches!(mode, Mode::Train(_));
                let (mean, var) = if train {
                    let mean = z.column_mean();
                    let var = DVector::from_fn(z.nrows(), |i, _| {
                        z.row(i).iter().map(|v| (v - mean[i]).powi(2)).sum::<f64>() / batch as f64
                    });
                    (mean, var)
                } else {
                    (bn.running_mean.clone(), bn.running_var.clone())
                };
                let inv_std = var.map(|v| 1.0 / (v + bn.eps).sqrt());
                let xhat = DMatrix::from_fn(z.nrows(), batch, |i, j| (z[(i, j)] - mean[i]) * inv_std[i]);
                z = DMatrix::from_fn(z.nrows(), batch, |i, j| bn.gamma[i] * xhat[(i, j)] + bn.beta[i]);
                bn_cache = Some(BnCache {
                    xhat,
                    inv_std,
                    batch_mean: mean,
                    batch_var: var,
                    train,
                });
            }
            let pre = z;
            let mut out = pre.clone();
            layer.activation.apply(&mut out);
            let mut mask = None;
            if let Mode::Train(rng) = &mut mode {
                if layer.dropout > 0.0 {
                    let keep = 1.0 - layer.dropout;
                    mask = Some(DMatrix::from_fn(out.nrows(), batch, |_, _| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    }));
                }
            }
            let next = match &mask {
                Some(m) => out.component_mul(m),
                None => out.clone(),
            };
            caches.push(LayerCache {
                input: std::mem::replace(&mut cur, next),
                bn: bn_cache,
                pre,
                out,
                mask,
            });
        }
        Ok((cur, Cache { layers: caches }))
    }

    pub fn forward(&self, x: &[f64], mode: Mode<'_>) -> Result<(Vec<f64>, Cache)> {
        let (y, cache) = self.forward_batch(&DMatrix::from_column_slice(x.len(), 1, x), mode)?;
        Ok((y.as_slice().to_vec(), cache))
    }

    /// Eval-mode forward pass.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_batch(x, Mode::Eval)?.0)
    }

    pub fn backward(&self, cache: &Cache, grad: OutputGrad<'_>) -> Result<Gradients> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::DimensionMismatch("cache was produced by a different network".into()));
        }
        for (l, c) in self.layers.iter().zip(&cache.layers) {
            if c.input.nrows() != l.input_dim() || c.out.nrows() != l.output_dim() {
                return Err(Error::DimensionMismatch("stale forward cache".into()));
            }
        }
        let batch = cache.layers[0].input.ncols();
        let last = cache.layers.len() - 1;
        let (mut upstream, skip_activation) = match grad {
            OutputGrad::Activations(g) => (g.clone(), false),
            OutputGrad::PreActivation(g) => {
                if cache.layers[last].mask.is_some() {
                    return Err(Error::InvalidArgument(
                        "pre-activation gradient needs an output layer without dropout".into(),
                    ));
                }
                (g.clone(), true)
            }
        };
        if upstream.nrows() != self.output_dim() || upstream.ncols() != batch {
            return Err(Error::DimensionMismatch("output gradient shape".into()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        for (idx, (layer, c)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let dy = if idx == last && skip_activation {
                upstream
            } else {
                let da = match &c.mask {
                    Some(m) => upstream.component_mul(m),
                    None => upstream,
                };
                layer.activation.backprop(&c.out, &c.pre, &da)
            };
            let (dz, gamma, beta) = match (&layer.batch_norm, &c.bn) {
                (Some(bn), Some(bc)) => {
                    let n = dy.nrows();
                    let dgamma = DVector::from_fn(n, |i, _| dy.row(i).dot(&bc.xhat.row(i)));
                    let dbeta = DVector::from_fn(n, |i, _| dy.row(i).sum());
                    let dz = if bc.train {
                        let b = batch as f64;
                        DMatrix::from_fn(n, batch, |i, j| {
                            let dxhat = dy[(i, j)] * bn.gamma[i];
                            let sum_dxhat = dbeta[i] * bn.gamma[i];
                            let sum_dxhat_xhat = dgamma[i] * bn.gamma[i];
                            bc.inv_std[i] / b * (b * dxhat - sum_dxhat - bc.xhat[(i, j)] * sum_dxhat_xhat)
                        })
                    } else {
                        DMatrix::from_fn(n, batch, |i, j| dy[(i, j)] * bn.gamma[i] * bc.inv_std[i])
                    };
                    (dz, Some(dgamma), Some(dbeta))
                }
                _ => (dy, None, None),
            };
            let dw = &dz * c.input.transpose();
            let db = DVector::from_fn(dz.nrows(), |i, _| dz.row(i).sum());
            upstream = layer.weights.transpose() * &dz;
            grads.push(LayerGrad {
                weights: dw,
                bias: db,
                gamma,
                beta,
            });
        }
        grads.reverse();
        Ok(Gradients {
            layers: grads,
            input: upstream,
        })
    }

    /// Blends batch statistics from a training forward pass into the running estimates.
    pub fn update_running_stats(&mut self, cache: &Cache) {
        for (l, c) in self.layers.iter_mut().zip(&cache.layers) {
            if let (Some(bn), Some(bc)) = (&mut l.batch_norm, &c.bn) {
                if !bc.train {
                    continue;
                }
                let m = bn.momentum;
                let n = bc.xhat.ncols() as f64;
                let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                bn.running_mean = &bn.running_mean * (1.0 - m) + &bc.batch_mean * m;
                bn.running_var = &bn.running_var * (1.0 - m) + &bc.batch_var * (m * unbiased);
            }
        }
    }

    /// Folds `x -> (x - mean) / std` into the first layer so the network accepts raw inputs.
    pub fn fold_input_standardization(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        let first = &mut self.layers[0];
        if mean.len() != first.input_dim() || std.len() != first.input_dim() {
            return Err(Error::DimensionMismatch("standardization length".into()));
        }
        for c in 0..first.input_dim() {
            let s = std[c];
            for r in 0..first.output_dim() {
                let w = first.weights[(r, c)] / s;
                first.bias[r] -= w * mean[c];
                first.weights[(r, c)] = w;
            }
        }
        Ok(())
    }
}

/// Per-feature mean and standard deviation over the columns of `x`
/// (standard deviation floored at `1e-12` relative to the largest).
pub fn feature_stats(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.ncols().max(1) as f64;
    let mean: Vec<f64> = (0..x.nrows()).map(|i| x.row(i).sum() / n).collect();
    let mut std: Vec<f64> = (0..x.nrows())
        .map(|i| (x.row(i).iter().map(|v| (v - mean[i]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    let floor = std.iter().cloned().fold(0.0, f64::max).max(1.0) * 1e-12;
    std.iter_mut().for_each(|s| *s = s.max(floor));
    (mean, std)
}

/// Applies `(x - mean) / std` row-wise in place.
pub fn standardize(x: &mut DMatrix<f64>, mean: &[f64], std: &[f64]) {
    for mut col in x.column_iter_mut() {
        for i in 0..col.len() {
            col[i] = (col[i] - mean[i]) / std[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_net(seed: u64, sizes: &[usize], head: Activation, bn: bool) -> Mlp {
        let mut specs = layer_stack(&sizes[1..sizes.len() - 1], sizes[sizes.len() - 1], head);
        if bn {
            let n = specs.len();
            specs[..n - 1].iter_mut().for_each(|s| s.batch_norm = true);
        }
        let mut net = Mlp::new(sizes[0], &specs, seed).unwrap();
        // non-trivial biases and BN parameters
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        for l in net.layers_mut() {
            l.bias.apply(|v| *v = rng.random_range(-0.3..0.3));
            if let Some(bn) = &mut l.batch_norm {
                bn.gamma.apply(|v| *v = rng.random_range(0.5..1.5));
                bn.beta.apply(|v| *v = rng.random_range(-0.2..0.2));
                bn.running_mean.apply(|v| *v = rng.random_range(-0.2..0.2));
                bn.running_var.apply(|v| *v = rng.random_range(0.5..1.5));
            }
        }
        net
    }

    fn loss_of(net: &Mlp, x: &DMatrix<f64>, w: &DMatrix<f64>, train_seed: Option<u64>) -> f64 {
        let y = match train_seed {
            Some(s) => {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                net.forward_batch(x, Mode::Train(&mut rng)).unwrap().0
            }
            None => net.forward_batch(x, Mode::Eval).unwrap().0,
        };
        y.component_mul(w).sum()
    }

    /// Central finite differences of a random linear functional of the output.
    fn check_gradients(net: &Mlp, x: &DMatrix<f64>, train_seed: Option<u64>, tol: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let w = DMatrix::from_fn(net.output_dim(), x.ncols(), |_, _| rng.random_range(-1.0..1.0));
        let (_, cache) = match train_seed {
            Some(s) => {
                let mut r = ChaCha8Rng::seed_from_u64(s);
                net.forward_batch(x, Mode::Train(&mut r)).unwrap()
            }
            None => net.forward_batch(x, Mode::Eval).unwrap(),
        };
        let grads = net.backward(&cache, OutputGrad::Activations(&w)).unwrap();
        let h = 1e-6;
        let analytic: Vec<f64> = grads.slices().concat();
        let mut probe = net.clone();
        let n_params = analytic.len();
        let mut idx = 0;
        for s in 0..probe.param_slices_mut().len() {
            let len = probe.param_slices_mut()[s].len();
            for i in 0..len {
                let orig = probe.param_slices_mut()[s][i];
                probe.param_slices_mut()[s][i] = orig + h;
                let lp = loss_of(&probe, x, &w, train_seed);
                probe.param_slices_mut()[s][i] = orig - h;
                let lm = loss_of(&probe, x, &w, train_seed);
                probe.param_slices_mut()[s][i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = analytic[idx];
                let scale = an.abs().max(fd.abs());
                if scale > 1e-6 {
                    assert!((an - fd).abs() / scale < tol, "param {idx}/{n_params}: {an} vs {fd}");
                }
                idx += 1;
            }
        }
        // input gradient
        for r in 0..x.nrows() {
            for c in 0..x.ncols() {
                let mut xp = x.clone();
                xp[(r, c)] += h;
                let mut xm = x.clone();
                xm[(r, c)] -= h;
                let fd = (loss_of(net, &xp, &w, train_seed) - loss_of(net, &xm, &w, train_seed)) / (2.0 * h);
                let an = grads.input[(r, c)];
                let scale = an.abs().max(fd.abs());
                if scale > 1e-6 {
                    assert!((an - fd).abs() / scale < tol, "input ({r},{c}): {an} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn identity_network_passes_input_through() {
        let layer = Dense {
            weights: DMatrix::identity(3, 3),
            bias: DVector::zeros(3),
            activation: Activation::Identity,
            batch_norm: None,
            dropout: 0.0,
        };
        let net = Mlp::from_layers(vec![layer]).unwrap();
        let (y, _) = net.forward(&[0.5, -2.0, 7.0], Mode::Eval).unwrap();
        assert_eq!(y, vec![0.5, -2.0, 7.0]);
    }

    #[test]
    fn sigmoid_head_is_bounded() {
        let net = random_net(3, &[4, 16, 5], Activation::Sigmoid, false);
        let x = DMatrix::from_fn(4, 10, |i, j| (i as f64 - j as f64) * 3.0);
        let y = net.predict(&x).unwrap();
        assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn eval_mode_is_deterministic_despite_dropout() {
        let specs = [LayerSpec::new(8, Activation::Relu).with_dropout(0.5), LayerSpec::new(2, Activation::Identity)];
        let net = Mlp::new(3, &specs, 1).unwrap();
        let x = DMatrix::from_fn(3, 4, |i, j| (i + j) as f64 * 0.1);
        assert_eq!(net.predict(&x).unwrap(), net.predict(&x).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (train, _) = net.forward_batch(&x, Mode::Train(&mut rng)).unwrap();
        assert_ne!(train, net.predict(&x).unwrap());
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let net = random_net(1, &[3, 4, 2], Activation::Identity, false);
        assert!(net.forward(&[1.0, 2.0], Mode::Eval).is_err());
        assert!(net.forward(&[1.0, f64::NAN, 0.0], Mode::Eval).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = random_net(2, &[3, 5, 2], Activation::Sigmoid, false);
        let x = DMatrix::from_fn(3, 4, |i, j| (i * j) as f64 * 0.2 - 0.3);
        let (_, cache) = net.forward_batch(&x, Mode::Eval).unwrap();
        let g = net.backward(&cache, OutputGrad::Activations(&DMatrix::zeros(2, 4))).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let a = random_net(2, &[3, 5, 2], Activation::Identity, false);
        let b = random_net(2, &[3, 6, 2], Activation::Identity, false);
        let (_, cache) = a.forward(&[0.1, 0.2, 0.3], Mode::Eval).unwrap();
        assert!(b.backward(&cache, OutputGrad::Activations(&DMatrix::zeros(2, 1))).is_err());
    }

    #[test]
    fn tiny_net_matches_finite_differences() {
        let net = random_net(7, &[2, 3, 1], Activation::Identity, false);
        let x = DMatrix::from_row_slice(2, 3, &[0.3, -0.8, 1.1, 0.5, 0.2, -0.4]);
        check_gradients(&net, &x, None, 1e-4);
    }

    #[test]
    fn random_nets_match_finite_differences() {
        for seed in 0..100u64 {
            let head = [Activation::Identity, Activation::Sigmoid, Activation::Softmax][seed as usize % 3];
            let bn = seed % 2 == 0;
            let net = random_net(seed, &[3, 6, 5, 4], head, bn);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
            let x = DMatrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
            check_gradients(&net, &x, None, 1e-4);
            if bn {
                check_gradients(&net, &x, Some(seed), 1e-4);
            }
        }
    }

    #[test]
    fn dropout_gradient_matches_finite_differences() {
        let specs = [
            LayerSpec::new(6, Activation::Relu).with_dropout(0.3).with_batch_norm(),
            LayerSpec::new(2, Activation::Sigmoid),
        ];
        let net = Mlp::new(3, &specs, 5).unwrap();
        let x = DMatrix::from_fn(3, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.6);
        check_gradients(&net, &x, Some(77), 1e-4);
    }

    #[test]
    fn folded_standardization_matches_explicit() {
        let net = random_net(4, &[3, 5, 2], Activation::Identity, false);
        let x = DMatrix::from_fn(3, 7, |i, j| 10.0 * i as f64 + j as f64);
        let (mean, std) = feature_stats(&x);
        let mut xs = x.clone();
        standardize(&mut xs, &mean, &std);
        let expected = net.predict(&xs).unwrap();
        let mut folded = net.clone();
        folded.fold_input_standardization(&mean, &std).unwrap();
        let got = folded.predict(&x).unwrap();
        assert!((expected - got).amax() < 1e-12);
    }
}
