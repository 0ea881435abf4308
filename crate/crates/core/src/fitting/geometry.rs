//! Fitting through the geometry surrogate: search the continuous shape
//! vector for a fixed period, thickness and box count.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_target, curve_mse, FitConfig};
use crate::error::{Error, Result};
use crate::nn::{mse, AdamState, GeometryParams, Mode, Surrogate, SHAPE_DIM};
use crate::spectra::SpectralGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryFit {
    pub geometry: GeometryParams,
    pub mse: f64,
    pub best_restart: usize,
    /// Per restart, the surrogate MSE at the end of every epoch.
    pub trajectories: Vec<Vec<f64>>,
}

/// Projected Adam on the shape entries (clamped to `[0, 1]`), multi-restart.
pub fn fit_geometry(
    target: &[f64],
    grid: &SpectralGrid,
    surrogate: &Surrogate,
    template: &GeometryParams,
    cfg: &FitConfig,
) -> Result<GeometryFit> {
    cfg.validate()?;
    check_target(target, grid)?;
    template.validate()?;
    if surrogate.bands() != grid.bands() {
        return Err(Error::DimensionMismatch("surrogate and grid band counts differ".into()));
    }
    let active = 4 * template.n_boxes;
    let t = DMatrix::from_column_slice(target.len(), 1, target);
    let geoms = [*template];
    let mut best: Option<(GeometryParams, f64, usize)> = None;
    let mut trajectories = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let mut rng = cfg.restart_rng(r);
        let mut shape = vec![0.0; SHAPE_DIM];
        shape[..active].iter_mut().for_each(|v| *v = rng.random::<f64>());
        let mut adam = AdamState::new(cfg.adam());
        let mut traj = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let mut last = f64::NAN;
            for _ in 0..cfg.iters_per_epoch {
                let s = DMatrix::from_column_slice(SHAPE_DIM, 1, &shape);
                let (y, cache) = surrogate.forward_batch(&geoms, Some(&s), Mode::Eval)?;
                let (loss, grad) = mse(&y, &t)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                last = loss;
                let g = surrogate.backward(&cache, &grad)?;
                let mut dg = g.shape.as_slice().to_vec();
                dg[active..].fill(0.0);
                adam.step(vec![shape.as_mut_slice()], &[dg.as_slice()], epoch)?;
                shape.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            }
            traj.push(last);
        }
        let mut geometry = *template;
        geometry.shape.copy_from_slice(&shape);
        let y = surrogate.predict(&geometry, grid)?;
        let m = curve_mse(&y, target);
        if best.as_ref().is_none_or(|b| m < b.1) {
            best = Some((geometry, m, r));
        }
        trajectories.push(traj);
    }
    let (geometry, mse, best_restart) = best.expect("at least one restart");
    Ok(GeometryFit {
        geometry,
        mse,
        best_restart,
        trajectories,
    })
}
