//! Inverse design: fit coupled-mode models to target transmission curves,
//! and train encoder physics jointly with a decoder network.

mod end_to_end;
mod geometry;

pub use end_to_end::{
    composite_loss_and_grad, encode_columns, encoding_matrix, end_to_end_train, EndToEndConfig, EndToEndReport,
    EndToEndResult,
};
pub use geometry::{fit_geometry, GeometryFit};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmt::{CmtModel, N_PORTS};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState};
use crate::projector::ProjectorBank;
use crate::spectra::SpectralGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_modes: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Adam steps per epoch; the learning-rate schedule advances per epoch.
    pub iters_per_epoch: usize,
    pub step_size: usize,
    pub gamma: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Stop a restart once its MSE drops below this.
    pub tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_modes: 8,
            lr: 1e-2,
            epochs: 150,
            iters_per_epoch: 20,
            step_size: 50,
            gamma: 0.1,
            restarts: 5,
            seed: 0,
            tol: 1e-9,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.epochs == 0 || self.iters_per_epoch == 0 || self.restarts == 0 || self.n_modes == 0 {
            return Err(Error::InvalidArgument(
                "fit needs positive lr, epochs, iterations, restarts and modes".into(),
            ));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            step_size: self.step_size,
            gamma: self.gamma,
            ..AdamConfig::default()
        }
    }

    pub(crate) fn restart_rng(&self, restart: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ (restart as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartReport {
    pub restart: usize,
    /// Lowest MSE seen in this restart (NaN if it diverged immediately).
    pub best_mse: f64,
    /// MSE at the end of every epoch.
    pub trajectory: Vec<f64>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub best_restart: usize,
    pub mse: f64,
    pub restarts: Vec<RestartReport>,
}

fn curve_mse(values: &[f64], target: &[f64]) -> f64 {
    values.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / target.len() as f64
}

fn check_target(target: &[f64], grid: &SpectralGrid) -> Result<()> {
    if target.len() != grid.bands() {
        return Err(Error::DimensionMismatch(format!(
            "target has {} samples, grid has {} bands",
            target.len(),
            grid.bands()
        )));
    }
    if target.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("target values must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Resonances spread evenly over the grid with jitter; couplings of random
/// sign with `kappa^2 = u * span`, `u ~ U(0.005, 0.05)`.
pub fn initial_model(n_modes: usize, grid: &SpectralGrid, rng: &mut impl Rng) -> Result<CmtModel> {
    let (lo, hi) = grid.omega_range();
    let span = hi - lo;
    let spacing = span / n_modes as f64;
    let freqs = (0..n_modes)
        .map(|m| lo + spacing * (m as f64 + 0.5 + rng.random_range(-0.4..0.4)))
        .collect();
    let coupling: Vec<f64> = (0..n_modes * N_PORTS)
        .map(|_| {
            let k = (rng.random_range(0.005..0.05) * span).sqrt();
            if rng.random_bool(0.5) {
                k
            } else {
                -k
            }
        })
        .collect();
    CmtModel::with_swap_background(freqs, &coupling)
}

/// Adam descent from `init`. Returns the best model seen and its report.
fn descend(init: &CmtModel, target: &[f64], grid: &SpectralGrid, cfg: &FitConfig, restart: usize) -> (CmtModel, RestartReport) {
    let mut params = init.params();
    let mut best = (init.clone(), f64::INFINITY);
    let mut adam = AdamState::new(cfg.adam());
    let mut trajectory = Vec::with_capacity(cfg.epochs);
    let n = target.len() as f64;
    'outer: for epoch in 0..cfg.epochs {
        let mut last = f64::NAN;
        for _ in 0..cfg.iters_per_epoch {
            let Ok(model) = init.with_params(&params) else { break 'outer };
            let Ok(g) = model.grad_transmission(grid) else { break 'outer };
            let mse = curve_mse(&g.values, target);
            if !mse.is_finite() {
                break 'outer;
            }
            if mse < best.1 {
                best = (model, mse);
            }
            last = mse;
            if mse < cfg.tol {
                trajectory.push(mse);
                break 'outer;
            }
            let resid: Vec<f64> = g.values.iter().zip(target).map(|(a, b)| 2.0 * (a - b) / n).collect();
            let grad = g.jacobian.tr_mul(&DMatrix::from_column_slice(resid.len(), 1, &resid));
            if adam.step(vec![params.as_mut_slice()], &[grad.as_slice()], epoch).is_err() {
                break 'outer;
            }
        }
        trajectory.push(last);
    }
    // score the final parameters too
    if let Ok(model) = init.with_params(&params) {
        if let Ok(values) = model.transmission_response(grid) {
            let mse = curve_mse(&values, target);
            if mse < best.1 {
                best = (model, mse);
            }
        }
    }
    let diverged = !best.1.is_finite();
    (
        best.0,
        RestartReport {
            restart,
            best_mse: if diverged { f64::NAN } else { best.1 },
            trajectory,
            diverged,
        },
    )
}

fn finish(runs: Vec<(CmtModel, RestartReport)>) -> Result<(CmtModel, FitReport)> {
    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, (_, r))| !r.diverged)
        .min_by(|a, b| a.1 .1.best_mse.total_cmp(&b.1 .1.best_mse))
        .map(|(i, _)| i);
    let restarts: Vec<RestartReport> = runs.iter().map(|(_, r)| r.clone()).collect();
    match best {
        Some(i) => Ok((
            runs[i].0.clone(),
            FitReport {
                best_restart: i,
                mse: runs[i].1.best_mse,
                restarts,
            },
        )),
        None => Err(Error::FitFailure {
            restarts: runs.len(),
            report: Box::new(FitReport {
                best_restart: 0,
                mse: f64::NAN,
                restarts,
            }),
        }),
    }
}

/// Multi-restart fit of a `cfg.n_modes` model to `target`.
pub fn fit_projector(target: &[f64], grid: &SpectralGrid, cfg: &FitConfig) -> Result<(CmtModel, FitReport)> {
    cfg.validate()?;
    check_target(target, grid)?;
    let mut runs = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let init = initial_model(cfg.n_modes, grid, &mut cfg.restart_rng(r))?;
        runs.push(descend(&init, target, grid, cfg, r));
    }
    finish(runs)
}

/// Single descent from a given model (the model's own mode count is used).
pub fn fit_projector_from(init: &CmtModel, target: &[f64], grid: &SpectralGrid, cfg: &FitConfig) -> Result<(CmtModel, FitReport)> {
    cfg.validate()?;
    check_target(target, grid)?;
    finish(vec![descend(init, target, grid, cfg, 0)])
}

pub struct BankFit {
    pub models: Vec<Option<CmtModel>>,
    pub reports: Vec<Option<FitReport>>,
    pub failures: Vec<(usize, Error)>,
    /// Transmission curves of the fitted models with the target's affine
    /// metadata; absent if any curve failed.
    pub realized: Option<ProjectorBank>,
}

impl BankFit {
    pub fn mean_mse(&self) -> f64 {
        let v: Vec<f64> = self.reports.iter().flatten().map(|r| r.mse).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }
}

/// Fits every curve of a physical bank independently (in parallel). Curve
/// `i` uses seed `cfg.seed + i`.
pub fn fit_bank(targets: &ProjectorBank, cfg: &FitConfig) -> Result<BankFit> {
    if !targets.is_physical() {
        return Err(Error::InvalidArgument("fit_bank needs a bank remapped into [0, 1]".into()));
    }
    cfg.validate()?;
    let grid = targets.grid();
    let results: Vec<Result<(CmtModel, FitReport)>> = (0..targets.k())
        .into_par_iter()
        .map(|i| {
            let c = FitConfig {
                seed: cfg.seed.wrapping_add(i as u64),
                ..*cfg
            };
            fit_projector(&targets.curve(i), grid, &c)
        })
        .collect();
    let mut models = Vec::new();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((m, rep)) => {
                models.push(Some(m));
                reports.push(Some(rep));
            }
            Err(e) => {
                models.push(None);
                reports.push(None);
                failures.push((i, e));
            }
        }
    }
    let realized = if failures.is_empty() {
        let mut curves = DMatrix::zeros(targets.k(), grid.bands());
        for (i, m) in models.iter().enumerate() {
            let t = m.as_ref().unwrap().transmission_response(grid)?;
            curves.row_mut(i).copy_from_slice(&t);
        }
        Some(targets.with_curves(curves)?)
    } else {
        None
    };
    Ok(BankFit {
        models,
        reports,
        failures,
        realized,
    })
}

/// Bank whose curves are the transmissions of `models`.
pub fn realized_bank(models: &[CmtModel], grid: &SpectralGrid) -> Result<ProjectorBank> {
    let mut curves = DMatrix::zeros(models.len(), grid.bands());
    for (i, m) in models.iter().enumerate() {
        curves.row_mut(i).copy_from_slice(&m.transmission_response(grid)?);
    }
    ProjectorBank::new(grid.clone(), curves)
}
