use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cross_entropy, mse, Activation, AdamConfig, AdamState, LossKind, Mlp, Mode, OutputGrad};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// `outputs x samples`
    Values(DMatrix<f64>),
    Classes(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(m) => m.ncols(),
            Targets::Classes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Values(m) => Targets::Values(m.select_columns(idx)),
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            seed: 0,
            loss: LossKind::Mse,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss of every epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

/// Minibatch optimizer state shared by plain and end-to-end training.
/// One seeded generator drives both the shuffles and the dropout masks.
pub struct Trainer {
    rng: ChaCha8Rng,
    adam: AdamState,
    loss: LossKind,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            adam: AdamState::new(cfg.adam),
            loss: cfg.loss,
        }
    }

    pub fn shuffled(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.rng);
        idx
    }

    /// One Adam update on a minibatch. Returns the loss and its gradient
    /// w.r.t. the network input.
    pub fn step(&mut self, net: &mut Mlp, x: &DMatrix<f64>, targets: &Targets, epoch: usize) -> Result<(f64, DMatrix<f64>)> {
        if x.ncols() != targets.len() {
            return Err(Error::DimensionMismatch("one target per input column expected".into()));
        }
        let (y, cache) = net.forward_batch(x, Mode::Train(&mut self.rng))?;
        let (loss, grad, pre) = match (self.loss, targets) {
            (LossKind::Mse, Targets::Values(t)) => {
                let (l, g) = mse(&y, t)?;
                (l, g, false)
            }
            (LossKind::CrossEntropy, Targets::Classes(c)) => {
                if net.output_activation() != Activation::Softmax {
                    return Err(Error::InvalidArgument("cross-entropy needs a softmax output".into()));
                }
                let (l, g) = cross_entropy(&y, c)?;
                (l, g, true)
            }
            _ => return Err(Error::InvalidArgument("loss kind does not match the target type".into())),
        };
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let grads = net.backward(
            &cache,
            if pre { OutputGrad::PreActivation(&grad) } else { OutputGrad::Activations(&grad) },
        )?;
        if grads.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence { epoch });
        }
        self.adam.step(net.param_slices_mut(), &grads.slices(), epoch)?;
        net.update_running_stats(&cache);
        Ok((loss, grads.input))
    }
}

/// Minibatch training; samples are the columns of `x`.
pub fn train(net: &mut Mlp, x: &DMatrix<f64>, targets: &Targets, cfg: &TrainConfig) -> Result<TrainReport> {
    if x.ncols() == 0 || x.ncols() != targets.len() {
        return Err(Error::DimensionMismatch("training set is empty or targets do not match".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut trainer = Trainer::new(cfg);
    let mut report = TrainReport { epoch_loss: Vec::with_capacity(cfg.epochs), steps: 0 };
    for epoch in 0..cfg.epochs {
        let order = trainer.shuffled(x.ncols());
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let xb = x.select_columns(idx);
            let tb = targets.select(idx);
            let (loss, _) = trainer.step(net, &xb, &tb, epoch)?;
            total += loss;
            batches += 1;
            report.steps += 1;
        }
        report.epoch_loss.push(total / batches as f64);
    }
    Ok(report)
}

/// Trains on standardized inputs, then folds the standardization into the
/// first layer so the returned net takes raw inputs.
pub fn train_standardized(net: &mut Mlp, x: &DMatrix<f64>, targets: &Targets, cfg: &TrainConfig) -> Result<TrainReport> {
    let (mean, std) = super::feature_stats(x);
    let mut xs = x.clone();
    super::standardize(&mut xs, &mean, &std);
    let report = train(net, &xs, targets, cfg)?;
    net.fold_input_standardization(&mean, &std)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{layer_stack, LayerSpec};
    use rand::Rng;

    #[test]
    fn regression_loss_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(2, 400, |_, _| rng.random_range(-1.0f64..1.0));
        let t = DMatrix::from_fn(1, 400, |_, j| 0.5 + 0.3 * (2.0 * x[(0, j)]).sin() * x[(1, j)]);
        let mut net = Mlp::new(2, &layer_stack(&[32, 32], 1, Activation::Sigmoid), 1).unwrap();
        let cfg = TrainConfig { epochs: 200, batch_size: 32, adam: AdamConfig::with_lr(3e-3), ..Default::default() };
        let r = train(&mut net, &x, &Targets::Values(t), &cfg).unwrap();
        assert!(r.epoch_loss.last().unwrap() < &(0.2 * r.epoch_loss[0]), "{:?}", (r.epoch_loss[0], r.epoch_loss.last()));
    }

    #[test]
    fn classifier_learns_separable_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 300;
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let x = DMatrix::from_fn(2, n, |r, j| {
            let c = labels[j] as f64;
            (if r == 0 { c.cos() } else { c.sin() }) * 2.0 + rng.random_range(-0.3..0.3)
        });
        let specs = [LayerSpec::new(16, Activation::Relu).with_batch_norm(), LayerSpec::new(3, Activation::Softmax)];
        let mut net = Mlp::new(2, &specs, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 32,
            loss: LossKind::CrossEntropy,
            adam: AdamConfig::with_lr(1e-2),
            ..Default::default()
        };
        train(&mut net, &x, &Targets::Classes(labels.clone()), &cfg).unwrap();
        let p = net.predict(&x).unwrap();
        let correct = (0..n).filter(|&j| p.column(j).imax() == labels[j]).count();
        assert!(correct as f64 / n as f64 > 0.97);
    }

    #[test]
    fn training_is_reproducible() {
        let x = DMatrix::from_fn(3, 50, |i, j| ((i * 13 + j * 7) % 11) as f64 / 11.0);
        let t = Targets::Values(DMatrix::from_fn(2, 50, |i, j| ((i + j) % 2) as f64));
        let specs = [LayerSpec::new(8, Activation::Relu).with_dropout(0.2), LayerSpec::new(2, Activation::Sigmoid)];
        let cfg = TrainConfig { epochs: 5, batch_size: 8, seed: 9, ..Default::default() };
        let mut a = Mlp::new(3, &specs, 0).unwrap();
        let mut b = a.clone();
        let ra = train(&mut a, &x, &t, &cfg).unwrap();
        let rb = train(&mut b, &x, &t, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_is_reported() {
        let x = DMatrix::from_element(1, 4, 1.0);
        let t = Targets::Values(DMatrix::from_element(1, 4, 1e200));
        let mut net = Mlp::new(1, &layer_stack(&[], 1, Activation::Identity), 0).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 4, ..Default::default() };
        assert!(matches!(train(&mut net, &x, &t, &cfg), Err(Error::Divergence { epoch: 0 })));
    }

    #[test]
    fn mismatched_loss_and_targets_fail() {
        let x = DMatrix::from_element(1, 2, 1.0);
        let mut net = Mlp::new(1, &layer_stack(&[], 2, Activation::Identity), 0).unwrap();
        let cfg = TrainConfig { loss: LossKind::CrossEntropy, ..Default::default() };
        assert!(train(&mut net, &x, &Targets::Classes(vec![0, 1]), &cfg).is_err());
    }

    #[test]
    fn tiny_net_learns_identity() {
        let x = DMatrix::from_fn(1, 64, |_, j| j as f64 / 63.0);
        let mut net = Mlp::new(1, &layer_stack(&[4], 1, Activation::Identity), 0).unwrap();
        let cfg = TrainConfig { epochs: 300, batch_size: 16, adam: AdamConfig::with_lr(1e-2), ..Default::default() };
        let r = train(&mut net, &x, &Targets::Values(x.clone()), &cfg).unwrap();
        let (loss, _) = mse(&net.predict(&x).unwrap(), &x).unwrap();
        assert!(loss < 1e-3, "{loss} after {:?}", r.epoch_loss.last());
    }

    #[test]
    fn xor_is_separated_exactly() {
        let x = DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let labels = vec![0, 1, 1, 0];
        let mut net = Mlp::new(2, &layer_stack(&[8], 2, Activation::Softmax), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 500,
            batch_size: 4,
            loss: LossKind::CrossEntropy,
            adam: AdamConfig { step_size: 1000, ..AdamConfig::with_lr(3e-2) },
            ..Default::default()
        };
        train(&mut net, &x, &Targets::Classes(labels.clone()), &cfg).unwrap();
        let p = net.predict(&x).unwrap();
        assert!((0..4).all(|j| p.column(j).imax() == labels[j]), "{p}");
    }
}
