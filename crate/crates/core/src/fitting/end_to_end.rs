//! Joint training of projector physics and a decoder.
//!
//! The encoder is linear in the transmission curves: `S = A beta` with
//! `A[k][b] = T_k(omega_b) w_b`. Loss gradients w.r.t. the decoder input are
//! pulled back through `A` and the Jacobian of each transmission curve.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cmt::CmtModel;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, mse, AdamConfig, AdamState, LossKind, Mlp, Mode, OutputGrad, Targets, TrainConfig, Trainer};
use crate::spectra::SpectralGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndToEndConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub decoder_adam: AdamConfig,
    pub cmt_lr: f64,
    pub freeze_cmt: bool,
}

impl Default for EndToEndConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 256,
            seed: 0,
            loss: LossKind::Mse,
            decoder_adam: AdamConfig::default(),
            cmt_lr: 1e-3,
            freeze_cmt: false,
        }
    }
}

impl EndToEndConfig {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            loss: self.loss,
            adam: self.decoder_adam,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndToEndReport {
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct EndToEndResult {
    pub models: Vec<CmtModel>,
    pub decoder: Mlp,
    pub report: EndToEndReport,
}

/// `k x bands` matrix with rows `T_k(omega_b) w_b`.
pub fn encoding_matrix(models: &[CmtModel], grid: &SpectralGrid) -> Result<DMatrix<f64>> {
    let mut a = DMatrix::zeros(models.len(), grid.bands());
    for (i, m) in models.iter().enumerate() {
        let t = m.transmission_response(grid)?;
        for (b, (&v, &w)) in t.iter().zip(grid.weights()).enumerate() {
            a[(i, b)] = v * w;
        }
    }
    Ok(a)
}

/// `A * spectra` with a fixed per-column summation order, so encoding a
/// column subset gives bit-identical results to encoding everything.
pub fn encode_columns(a: &DMatrix<f64>, spectra: &DMatrix<f64>) -> DMatrix<f64> {
    let (k, bands) = a.shape();
    DMatrix::from_fn(k, spectra.ncols(), |r, j| {
        let mut s = 0.0;
        for b in 0..bands {
            s += a[(r, b)] * spectra[(b, j)];
        }
        s
    })
}

fn check(models: &[CmtModel], decoder: &Mlp, grid: &SpectralGrid, spectra: &DMatrix<f64>, targets: &Targets) -> Result<()> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("need at least one projector model".into()));
    }
    if decoder.input_dim() != models.len() {
        return Err(Error::DimensionMismatch(format!(
            "decoder takes {} inputs for {} projectors",
            decoder.input_dim(),
            models.len()
        )));
    }
    if spectra.nrows() != grid.bands() {
        return Err(Error::DimensionMismatch("spectra rows must equal grid bands".into()));
    }
    if spectra.ncols() == 0 || spectra.ncols() != targets.len() {
        return Err(Error::DimensionMismatch("need one target per spectrum".into()));
    }
    Ok(())
}

/// Gradient of the loss w.r.t. every model's parameters, given the
/// gradient w.r.t. the encoded batch (`k x batch`).
fn pull_back(
    models: &[CmtModel],
    grid: &SpectralGrid,
    spectra: &DMatrix<f64>,
    d_encoded: &DMatrix<f64>,
) -> Result<Vec<Vec<f64>>> {
    let d_a = d_encoded * spectra.transpose();
    models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let g = m.grad_transmission(grid)?;
            let d_t = DMatrix::from_fn(grid.bands(), 1, |b, _| d_a[(i, b)] * grid.weights()[b]);
            Ok(g.jacobian.tr_mul(&d_t).as_slice().to_vec())
        })
        .collect()
}

/// Trains `decoder` on encoded `spectra` (columns) while optimizing the
/// projector models. With `freeze_cmt` the run is exactly decoder-only
/// training on `encode_columns(encoding_matrix(models), spectra)`.
pub fn end_to_end_train(
    models: &[CmtModel],
    decoder: &Mlp,
    grid: &SpectralGrid,
    spectra: &DMatrix<f64>,
    targets: &Targets,
    cfg: &EndToEndConfig,
) -> Result<EndToEndResult> {
    check(models, decoder, grid, spectra, targets)?;
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut models = models.to_vec();
    let mut decoder = decoder.clone();
    let mut trainer = Trainer::new(&cfg.train_config());
    let mut cmt_adam: Vec<AdamState> = models
        .iter()
        .map(|_| {
            AdamState::new(AdamConfig {
                lr: cfg.cmt_lr,
                ..cfg.decoder_adam
            })
        })
        .collect();
    let mut report = EndToEndReport {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        steps: 0,
    };
    let mut a = encoding_matrix(&models, grid)?;
    for epoch in 0..cfg.epochs {
        let order = trainer.shuffled(spectra.ncols());
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let sb = spectra.select_columns(idx);
            let xb = encode_columns(&a, &sb);
            let tb = targets.select(idx);
            let (loss, dx) = trainer.step(&mut decoder, &xb, &tb, epoch)?;
            if !cfg.freeze_cmt {
                let grads = pull_back(&models, grid, &sb, &dx)?;
                for ((m, g), adam) in models.iter_mut().zip(&grads).zip(&mut cmt_adam) {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Divergence { epoch });
                    }
                    let mut p = m.params();
                    adam.step(vec![p.as_mut_slice()], &[g.as_slice()], epoch)?;
                    *m = m.with_params(&p)?;
                }
                a = encoding_matrix(&models, grid)?;
            }
            total += loss;
            batches += 1;
            report.steps += 1;
        }
        report.epoch_loss.push(total / batches as f64);
    }
    Ok(EndToEndResult {
        models,
        decoder,
        report,
    })
}

/// Eval-mode loss of the whole chain and its gradient w.r.t. all model
/// parameters (concatenated in model order).
pub fn composite_loss_and_grad(
    models: &[CmtModel],
    decoder: &Mlp,
    grid: &SpectralGrid,
    spectra: &DMatrix<f64>,
    targets: &Targets,
    loss: LossKind,
) -> Result<(f64, Vec<f64>)> {
    check(models, decoder, grid, spectra, targets)?;
    let x = encode_columns(&encoding_matrix(models, grid)?, spectra);
    let (y, cache) = decoder.forward_batch(&x, Mode::Eval)?;
    let (value, grad, pre) = match (loss, targets) {
        (LossKind::Mse, Targets::Values(t)) => {
            let (l, g) = mse(&y, t)?;
            (l, g, false)
        }
        (LossKind::CrossEntropy, Targets::Classes(c)) => {
            let (l, g) = cross_entropy(&y, c)?;
            (l, g, true)
        }
        _ => return Err(Error::InvalidArgument("loss kind does not match the target type".into())),
    };
    let g = decoder.backward(
        &cache,
        if pre { OutputGrad::PreActivation(&grad) } else { OutputGrad::Activations(&grad) },
    )?;
    let grads = pull_back(models, grid, spectra, &g.input)?;
    Ok((value, grads.concat()))
}
