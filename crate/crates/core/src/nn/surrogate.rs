//! Geometry-to-transmission surrogate with a continuous shape branch and a
//! learned embedding branch for the categorical period and thickness.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand::seq::{IndexedRandom, SliceRandom};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mse, Activation, AdamConfig, AdamState, LayerSpec, Mlp, Mode, OutputGrad};
use crate::error::{Error, Result};
use crate::spectra::SpectralGrid;

pub const MAX_BOXES: usize = 5;
/// Width, height, x and y of each box.
pub const SHAPE_DIM: usize = 4 * MAX_BOXES;
pub const PERIODS_NM: [u32; 3] = [250, 500, 750];
pub const THICKNESSES_NM: [u32; 11] = [50, 75, 100, 125, 150, 175, 200, 225, 250, 275, 300];

const EMBED_DIM: usize = 8;
const CONTINUOUS_WIDTH: usize = 128;
const CATEGORICAL_WIDTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryParams {
    pub shape: [f64; SHAPE_DIM],
    pub n_boxes: usize,
    pub period_nm: u32,
    pub thickness_nm: u32,
}

impl GeometryParams {
    pub fn new(shape: [f64; SHAPE_DIM], n_boxes: usize, period_nm: u32, thickness_nm: u32) -> Result<Self> {
        let g = Self {
            shape,
            n_boxes,
            period_nm,
            thickness_nm,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_BOXES).contains(&self.n_boxes) {
            return Err(Error::InvalidArgument(format!("box count {} outside 1..={MAX_BOXES}", self.n_boxes)));
        }
        if self.shape.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("shape entries must lie in [0, 1]".into()));
        }
        self.period_index()?;
        self.thickness_index()?;
        Ok(())
    }

    pub fn period_index(&self) -> Result<usize> {
        PERIODS_NM
            .iter()
            .position(|&p| p == self.period_nm)
            .ok_or_else(|| Error::InvalidArgument(format!("period {} nm not in {PERIODS_NM:?}", self.period_nm)))
    }

    pub fn thickness_index(&self) -> Result<usize> {
        THICKNESSES_NM
            .iter()
            .position(|&t| t == self.thickness_nm)
            .ok_or_else(|| Error::InvalidArgument(format!("thickness {} nm not in {THICKNESSES_NM:?}", self.thickness_nm)))
    }

    /// Shape vector with the slots of absent boxes zeroed.
    pub fn canonical_shape(&self) -> [f64; SHAPE_DIM] {
        let mut s = self.shape;
        s[4 * self.n_boxes.min(MAX_BOXES)..].fill(0.0);
        s
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        let mut shape = [0.0; SHAPE_DIM];
        shape.iter_mut().for_each(|v| *v = rng.random::<f64>());
        Self {
            shape,
            n_boxes: rng.random_range(1..=MAX_BOXES),
            period_nm: *PERIODS_NM.choose(rng).unwrap(),
            thickness_nm: *THICKNESSES_NM.choose(rng).unwrap(),
        }
    }
}

/// Synthetic ground truth: one Lorentzian dip per box on a baseline set by
/// the thickness. Dip position, width and depth are smooth in the box
/// parameters; the period shifts every dip. Values stay in (0, 1).
pub fn oracle_spectrum(g: &GeometryParams, grid: &SpectralGrid) -> Result<Vec<f64>> {
    g.validate()?;
    let p = g.period_index()? as f64 / (PERIODS_NM.len() - 1) as f64;
    let t = g.thickness_index()? as f64 / (THICKNESSES_NM.len() - 1) as f64;
    let s = g.canonical_shape();
    let baseline = 0.92 - 0.2 * t;
    let dips: Vec<(f64, f64, f64)> = (0..g.n_boxes)
        .map(|i| {
            let (w, h, x, y) = (s[4 * i], s[4 * i + 1], s[4 * i + 2], s[4 * i + 3]);
            let center = 0.1 + 0.55 * w + 0.15 * x * h + 0.1 * p + 0.1 * t;
            let width = 0.04 + 0.06 * h + 0.02 * y;
            let depth = 0.25 + 0.5 * (0.5 * h + 0.5 * y) * (1.0 - 0.3 * x);
            (center, width, depth)
        })
        .collect();
    let (lo, hi) = grid.omega_range();
    Ok(grid
        .omega()
        .iter()
        .map(|&w| {
            let u = (w - lo) / (hi - lo);
            dips.iter().fold(baseline, |acc, &(c, gamma, d)| {
                acc * (1.0 - d * gamma * gamma / ((u - c).powi(2) + gamma * gamma))
            })
        })
        .collect())
}

pub fn generate_oracle_dataset(n: usize, grid: &SpectralGrid, seed: u64) -> Result<Vec<(GeometryParams, Vec<f64>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let g = GeometryParams::random(&mut rng);
            Ok((g, oracle_spectrum(&g, grid)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dropout: f64,
    pub adam: AdamConfig,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 128,
            seed: 0,
            dropout: 0.1,
            adam: AdamConfig {
                lr: 1e-3,
                step_size: 25,
                gamma: 0.3,
                ..AdamConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    pub epoch_loss: Vec<f64>,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    continuous: Mlp,
    categorical: Mlp,
    head: Mlp,
    /// EMBED_DIM x periods
    period_embedding: DMatrix<f64>,
    /// EMBED_DIM x thicknesses
    thickness_embedding: DMatrix<f64>,
}

pub struct SurrogateCache {
    continuous: super::Cache,
    categorical: super::Cache,
    head: super::Cache,
    period_idx: Vec<usize>,
    thickness_idx: Vec<usize>,
}

pub struct SurrogateGrads {
    /// In [`Surrogate::param_slices_mut`] order.
    pub params: Vec<Vec<f64>>,
    /// SHAPE_DIM x batch gradient w.r.t. the canonical shape vectors.
    pub shape: DMatrix<f64>,
}

impl Surrogate {
    pub fn new(bands: usize, dropout: f64, seed: u64) -> Result<Self> {
        if bands == 0 {
            return Err(Error::InvalidArgument("surrogate needs at least one output band".into()));
        }
        let hidden = |n| LayerSpec::new(n, Activation::Relu).with_batch_norm().with_dropout(dropout);
        let continuous = Mlp::new(SHAPE_DIM, &[hidden(CONTINUOUS_WIDTH), hidden(CONTINUOUS_WIDTH)], seed)?;
        let categorical = Mlp::new(2 * EMBED_DIM, &[LayerSpec::new(CATEGORICAL_WIDTH, Activation::Relu)], seed + 1)?;
        let head = Mlp::new(
            CONTINUOUS_WIDTH + CATEGORICAL_WIDTH,
            &[hidden(256), hidden(128), LayerSpec::new(bands, Activation::Sigmoid)],
            seed + 2,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
        let mut embed = |n| DMatrix::from_fn(EMBED_DIM, n, |_, _| rng.random_range(-1.0..1.0));
        Ok(Self {
            continuous,
            categorical,
            period_embedding: embed(PERIODS_NM.len()),
            thickness_embedding: embed(THICKNESSES_NM.len()),
            head,
        })
    }

    pub fn bands(&self) -> usize {
        self.head.output_dim()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.continuous.param_slices_mut();
        out.extend(self.categorical.param_slices_mut());
        out.extend(self.head.param_slices_mut());
        out.push(self.period_embedding.as_mut_slice());
        out.push(self.thickness_embedding.as_mut_slice());
        out
    }

    fn update_running_stats(&mut self, cache: &SurrogateCache) {
        self.continuous.update_running_stats(&cache.continuous);
        self.categorical.update_running_stats(&cache.categorical);
        self.head.update_running_stats(&cache.head);
    }

    /// Predicts `bands x batch` transmissions. `shapes` overrides the
    /// canonical shape of each geometry when given (used for gradient-based
    /// geometry search).
    pub fn forward_batch(
        &self,
        geoms: &[GeometryParams],
        shapes: Option<&DMatrix<f64>>,
        mut mode: Mode<'_>,
    ) -> Result<(DMatrix<f64>, SurrogateCache)> {
        let b = geoms.len();
        let mut period_idx = Vec::with_capacity(b);
        let mut thickness_idx = Vec::with_capacity(b);
        for g in geoms {
            g.validate()?;
            period_idx.push(g.period_index()?);
            thickness_idx.push(g.thickness_index()?);
        }
        let xc = match shapes {
            Some(s) => {
                if s.nrows() != SHAPE_DIM || s.ncols() != b {
                    return Err(Error::DimensionMismatch("shape override size".into()));
                }
                s.clone()
            }
            None => DMatrix::from_fn(SHAPE_DIM, b, |i, j| geoms[j].canonical_shape()[i]),
        };
        let xe = DMatrix::from_fn(2 * EMBED_DIM, b, |i, j| {
            if i < EMBED_DIM {
                self.period_embedding[(i, period_idx[j])]
            } else {
                self.thickness_embedding[(i - EMBED_DIM, thickness_idx[j])]
            }
        });
        let (hc, continuous) = self.continuous.forward_batch(&xc, mode.reborrow())?;
        let (he, categorical) = self.categorical.forward_batch(&xe, mode.reborrow())?;
        let mut joint = DMatrix::zeros(CONTINUOUS_WIDTH + CATEGORICAL_WIDTH, b);
        joint.rows_mut(0, CONTINUOUS_WIDTH).copy_from(&hc);
        joint.rows_mut(CONTINUOUS_WIDTH, CATEGORICAL_WIDTH).copy_from(&he);
        let (y, head) = self.head.forward_batch(&joint, mode)?;
        Ok((
            y,
            SurrogateCache {
                continuous,
                categorical,
                head,
                period_idx,
                thickness_idx,
            },
        ))
    }

    pub fn backward(&self, cache: &SurrogateCache, grad: &DMatrix<f64>) -> Result<SurrogateGrads> {
        let gh = self.head.backward(&cache.head, OutputGrad::Activations(grad))?;
        let gc_in = gh.input.rows(0, CONTINUOUS_WIDTH).into_owned();
        let ge_in = gh.input.rows(CONTINUOUS_WIDTH, CATEGORICAL_WIDTH).into_owned();
        let gc = self.continuous.backward(&cache.continuous, OutputGrad::Activations(&gc_in))?;
        let ge = self.categorical.backward(&cache.categorical, OutputGrad::Activations(&ge_in))?;
        let mut dp = DMatrix::zeros(EMBED_DIM, PERIODS_NM.len());
        let mut dt = DMatrix::zeros(EMBED_DIM, THICKNESSES_NM.len());
        for j in 0..cache.period_idx.len() {
            for i in 0..EMBED_DIM {
                dp[(i, cache.period_idx[j])] += ge.input[(i, j)];
                dt[(i, cache.thickness_idx[j])] += ge.input[(EMBED_DIM + i, j)];
            }
        }
        let mut params: Vec<Vec<f64>> = gc.slices().iter().map(|s| s.to_vec()).collect();
        params.extend(ge.slices().iter().map(|s| s.to_vec()));
        params.extend(gh.slices().iter().map(|s| s.to_vec()));
        params.push(dp.as_slice().to_vec());
        params.push(dt.as_slice().to_vec());
        Ok(SurrogateGrads { params, shape: gc.input })
    }

    /// Eval-mode transmission curve for one geometry.
    pub fn predict(&self, g: &GeometryParams, grid: &SpectralGrid) -> Result<Vec<f64>> {
        if grid.bands() != self.bands() {
            return Err(Error::DimensionMismatch(format!(
                "surrogate outputs {} bands, grid has {}",
                self.bands(),
                grid.bands()
            )));
        }
        let (y, _) = self.forward_batch(std::slice::from_ref(g), None, Mode::Eval)?;
        Ok(y.as_slice().to_vec())
    }

    pub fn predict_batch(&self, geoms: &[GeometryParams]) -> Result<DMatrix<f64>> {
        Ok(self.forward_batch(geoms, None, Mode::Eval)?.0)
    }
}

fn targets_matrix(data: &[(GeometryParams, Vec<f64>)], idx: &[usize], bands: usize) -> Result<DMatrix<f64>> {
    let mut t = DMatrix::zeros(bands, idx.len());
    for (c, &i) in idx.iter().enumerate() {
        if data[i].1.len() != bands {
            return Err(Error::DimensionMismatch(format!("sample {i} has {} bands", data[i].1.len())));
        }
        t.column_mut(c).copy_from_slice(&data[i].1);
    }
    Ok(t)
}

/// Mean squared error of eval-mode predictions over a dataset.
pub fn surrogate_mse(sur: &Surrogate, data: &[(GeometryParams, Vec<f64>)]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(1024) {
        let geoms: Vec<GeometryParams> = chunk.iter().map(|&i| data[i].0).collect();
        let y = sur.predict_batch(&geoms)?;
        let t = targets_matrix(data, chunk, sur.bands())?;
        total += (y - t).norm_squared();
        count += chunk.len() * sur.bands();
    }
    Ok(total / count.max(1) as f64)
}

pub fn train_surrogate(
    sur: &mut Surrogate,
    train: &[(GeometryParams, Vec<f64>)],
    val: &[(GeometryParams, Vec<f64>)],
    cfg: &SurrogateConfig,
) -> Result<SurrogateReport> {
    if train.is_empty() || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("surrogate training needs samples and a positive batch size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.adam);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let geoms: Vec<GeometryParams> = idx.iter().map(|&i| train[i].0).collect();
            let t = targets_matrix(train, idx, sur.bands())?;
            let (y, cache) = sur.forward_batch(&geoms, None, Mode::Train(&mut rng))?;
            let (loss, grad) = mse(&y, &t)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let g = sur.backward(&cache, &grad)?;
            let grads: Vec<&[f64]> = g.params.iter().map(|v| v.as_slice()).collect();
            adam.step(sur.param_slices_mut(), &grads, epoch)?;
            sur.update_running_stats(&cache);
            total += loss;
            batches += 1;
        }
        epoch_loss.push(total / batches as f64);
    }
    let val_mse = if val.is_empty() { f64::NAN } else { surrogate_mse(sur, val)? };
    Ok(SurrogateReport { epoch_loss, val_mse })
}
