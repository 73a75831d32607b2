//! Feature sparsification, the semantic sparsity loss, and the pointwise
//! linear utility head.
//!
//! Sparsification keeps a channel component iff it exceeds the threshold
//! `kappa` (strictly), and the sparsity loss is the mean L1 mass of the
//! surviving components over all N*L cells. The utility head maps a cell's
//! feature vector to `ReLU(w . f + b)`; absent cells always have utility
//! zero regardless of the bias, since an absent cell carries nothing to
//! transmit.
//!
//! The threshold indicator is not differentiable in `kappa`; its backward
//! pass uses a logistic surrogate at the fixed temperature
//! [`KAPPA_SURROGATE_TEMP`] while the forward stays hard.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, MetaUtilityMap, SparseFeatureMap};

/// Temperature of the logistic surrogate used for `d/d kappa`.
pub const KAPPA_SURROGATE_TEMP: f64 = 0.1;

/// Channel-activation threshold and sparsity weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderParams {
    pub kappa: f64,
    pub lambda: f64,
}

impl EncoderParams {
    pub fn new(kappa: f64, lambda: f64) -> Result<Self> {
        if lambda < 0.0 {
            return Err(Error::invalid(format!(
                "sparsity weight lambda must be non-negative (got {lambda})"
            )));
        }
        Ok(EncoderParams { kappa, lambda })
    }
}

/// Pointwise linear utility head: `u = ReLU(w . f + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FueParams {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl FueParams {
    pub fn new(weight: Vec<f64>, bias: f64) -> Self {
        FueParams { weight, bias }
    }

    fn check_dim(&self, grid: &GridSpec) -> Result<()> {
        if self.weight.len() != grid.channels() {
            return Err(Error::Dimension {
                expected: grid.channels(),
                got: self.weight.len(),
            });
        }
        Ok(())
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Zero out components not strictly above `kappa`; cells whose masked
/// vector is entirely zero disappear from the map.
pub fn sparsify(map: &SparseFeatureMap, kappa: f64) -> SparseFeatureMap {
    let mut out = SparseFeatureMap::new(map.grid, map.agent_id);
    for (l, v) in map.iter() {
        let masked: Vec<f64> = v.iter().map(|&x| if x > kappa { x } else { 0.0 }).collect();
        out.insert(l, masked).expect("same grid and dimension");
    }
    out
}

fn check_shared_grid(maps: &[SparseFeatureMap]) -> Result<GridSpec> {
    let first = maps
        .first()
        .ok_or_else(|| Error::invalid("semantic loss needs at least one feature map"))?;
    for m in maps {
        if m.grid != first.grid {
            return Err(Error::GridMismatch(format!(
                "map for agent {} has a different grid", m.agent_id
            )));
        }
    }
    Ok(first.grid)
}

/// Mean over N*L cells of the L1 norm of the kappa-masked feature vectors.
pub fn semantic_loss(maps: &[SparseFeatureMap], kappa: f64) -> Result<f64> {
    let grid = check_shared_grid(maps)?;
    let denom = (maps.len() as f64) * grid.num_cells() as f64;
    let mut total = 0.0;
    for map in maps {
        for (_, v) in map.iter() {
            for &x in v {
                if x > kappa {
                    total += x.abs();
                }
            }
        }
    }
    Ok(total / denom)
}

/// The smoothed variant that replaces the hard indicator with a logistic of
/// temperature [`KAPPA_SURROGATE_TEMP`]; this is the function whose `kappa`
/// derivative the backward pass reports.
pub fn semantic_loss_smoothed(maps: &[SparseFeatureMap], kappa: f64) -> Result<f64> {
    let grid = check_shared_grid(maps)?;
    let denom = (maps.len() as f64) * grid.num_cells() as f64;
    let mut total = 0.0;
    for map in maps {
        for (_, v) in map.iter() {
            for &x in v {
                total += x.abs() * logistic((x - kappa) / KAPPA_SURROGATE_TEMP);
            }
        }
    }
    Ok(total / denom)
}

/// Gradients of the semantic loss: per-component (hard mask) and the
/// surrogate `d/d kappa`.
#[derive(Debug, Clone)]
pub struct SemanticLossGrad {
    /// Per map, per stored cell: gradient w.r.t. each feature component.
    /// Zero-gradient cells are absent.
    pub per_map: Vec<SparseFeatureMap>,
    pub d_kappa: f64,
}

pub fn semantic_loss_grad(maps: &[SparseFeatureMap], kappa: f64) -> Result<SemanticLossGrad> {
    let grid = check_shared_grid(maps)?;
    let denom = (maps.len() as f64) * grid.num_cells() as f64;
    let mut per_map = Vec::with_capacity(maps.len());
    let mut d_kappa = 0.0;
    for map in maps {
        let mut grad = SparseFeatureMap::new(map.grid, map.agent_id);
        for (l, v) in map.iter() {
            let g: Vec<f64> = v
                .iter()
                .map(|&x| if x > kappa { x.signum() / denom } else { 0.0 })
                .collect();
            grad.insert(l, g).expect("same grid and dimension");
            for &x in v {
                let s = logistic((x - kappa) / KAPPA_SURROGATE_TEMP);
                d_kappa += x.abs() * s * (1.0 - s) * (-1.0 / KAPPA_SURROGATE_TEMP) / denom;
            }
        }
        per_map.push(grad);
    }
    Ok(SemanticLossGrad { per_map, d_kappa })
}

/// Apply the utility head to every stored cell; zero utilities (including
/// every absent cell) are omitted from the output map.
pub fn fue_forward(map: &SparseFeatureMap, params: &FueParams) -> Result<MetaUtilityMap> {
    params.check_dim(&map.grid)?;
    let mut out = MetaUtilityMap::new(map.grid, map.agent_id);
    for (l, v) in map.iter() {
        let pre: f64 = v.iter().zip(&params.weight).map(|(x, w)| x * w).sum::<f64>() + params.bias;
        out.insert(l, pre.max(0.0))?;
    }
    Ok(out)
}
