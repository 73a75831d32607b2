//! Train-time relaxation of the discrete transmission policy.
//!
//! Two gates make the mask differentiable: a per-(agent, cell) logistic
//! importance gate `alpha = sigmoid((u - tau) / eta)` and a per-cell
//! cross-agent softmax `beta = softmax((u + g) / gamma)` with optional
//! Gumbel noise `g`. Their product is the soft mask. The straight-through
//! forward keeps the deterministic top-1 policy; as both temperatures go to
//! zero the soft mask converges pointwise to it wherever utilities keep a
//! margin from `tau` and from argmax ties.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, MetaUtilityMap, SparseFeatureMap};
use crate::sched::SelectionMask;
use crate::seed;

/// Logistic importance gate in (0, 1).
pub fn importance_gate(u: f64, tau: f64, eta: f64) -> Result<f64> {
    if eta.is_nan() || eta <= 0.0 {
        return Err(Error::invalid(format!(
            "importance gate temperature must be positive (got {eta})"
        )));
    }
    Ok(1.0 / (1.0 + (-(u - tau) / eta).exp()))
}

/// Temperature softmax over agents of `(u + g) / gamma`. A missing noise
/// vector means no injected noise.
pub fn gumbel_softmax(scores: &[f64], gamma: f64, noise: Option<&[f64]>) -> Result<Vec<f64>> {
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::invalid(format!(
            "softmax temperature must be positive (got {gamma})"
        )));
    }
    if let Some(g) = noise {
        if g.len() != scores.len() {
            return Err(Error::Dimension {
                expected: scores.len(),
                got: g.len(),
            });
        }
    }
    let logits: Vec<f64> = scores
        .iter()
        .enumerate()
        .map(|(i, &u)| (u + noise.map_or(0.0, |g| g[i])) / gamma)
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|&e| e / sum).collect())
}

/// One standard Gumbel draw, `-ln(-ln eps)` with `eps ~ U(0, 1)`.
pub fn sample_gumbel<R: Rng>(rng: &mut R) -> f64 {
    let eps: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    -(-eps.ln()).ln()
}

/// Fixed Gumbel noise per (agent, cell), seeded so repeated sampling with
/// the same key reproduces the same field.
#[derive(Debug, Clone, Default)]
pub struct NoiseField {
    values: BTreeMap<(u16, u32), f64>,
}

impl NoiseField {
    /// Draw independent noise for every provided (agent, cell) pair. Each
    /// pair gets its own stream, so the field does not depend on iteration
    /// order.
    pub fn sample<I>(pairs: I, seed_parts: &[u64]) -> Self
    where
        I: IntoIterator<Item = (u16, u32)>,
    {
        let mut values = BTreeMap::new();
        for (agent, cell) in pairs {
            let mut rng = seed::rng(
                &[seed_parts, &[0x6B31u64, agent as u64, cell as u64]].concat(),
            );
            values.insert((agent, cell), sample_gumbel(&mut rng));
        }
        NoiseField { values }
    }

    pub fn get(&self, agent: u16, cell: u32) -> f64 {
        self.values.get(&(agent, cell)).copied().unwrap_or(0.0)
    }
}

/// Gate values for one cell across its participating agents.
#[derive(Debug, Clone)]
pub struct CellGates {
    pub alpha: Vec<f64>,
    pub gumbel: Vec<f64>,
    pub beta: Vec<f64>,
    /// Soft mask `alpha * beta`.
    pub m_soft: Vec<f64>,
    /// Deterministic straight-through forward mask.
    pub m_fwd: Vec<bool>,
}

/// Compute both gates and the straight-through forward for one cell.
///
/// The forward selects the argmax agent (ties to the lowest id) iff its
/// utility is at least `tau`; a zero utility marks an absent candidate and
/// is never selected.
pub fn ste_cell(
    utilities: &[f64],
    tau: f64,
    eta: f64,
    gamma: f64,
    noise: Option<&[f64]>,
) -> Result<CellGates> {
    if let Some(bad) = utilities.iter().find(|u| !u.is_finite()) {
        return Err(Error::invalid(format!(
            "utilities must be finite (got {bad})"
        )));
    }
    let alpha: Vec<f64> = utilities
        .iter()
        .map(|&u| importance_gate(u, tau, eta))
        .collect::<Result<_>>()?;
    let gumbel: Vec<f64> = match noise {
        Some(g) => g.to_vec(),
        None => vec![0.0; utilities.len()],
    };
    let beta = gumbel_softmax(utilities, gamma, noise)?;
    let m_soft: Vec<f64> = alpha.iter().zip(&beta).map(|(a, b)| a * b).collect();

    let mut m_fwd = vec![false; utilities.len()];
    if let Some((winner, &u_max)) = utilities
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
    {
        if u_max >= tau && u_max > 0.0 {
            m_fwd[winner] = true;
        }
    }
    Ok(CellGates {
        alpha,
        gumbel,
        beta,
        m_soft,
        m_fwd,
    })
}

/// Soft and hard masks for a whole frame of utility maps.
#[derive(Debug, Clone)]
pub struct GateField {
    /// Cells present in at least one map, ascending.
    pub cells: Vec<u32>,
    /// Per cell: gate values over all agents (absent agents have utility 0).
    pub gates: Vec<CellGates>,
    /// The straight-through forward as a selection mask; equals the
    /// deterministic inference policy on the same inputs.
    pub forward: SelectionMask,
}

impl GateField {
    /// Largest |soft - forward| deviation over all (agent, cell) entries.
    pub fn max_deviation(&self) -> f64 {
        let mut worst = 0.0f64;
        for g in &self.gates {
            for (i, &soft) in g.m_soft.iter().enumerate() {
                let hard = if g.m_fwd[i] { 1.0 } else { 0.0 };
                worst = worst.max((soft - hard).abs());
            }
        }
        worst
    }
}

/// Evaluate the straight-through mask over sparse utility maps.
pub fn ste_mask(
    utilities: &[MetaUtilityMap],
    tau: f64,
    eta: f64,
    gamma: f64,
    noise: Option<&NoiseField>,
) -> Result<GateField> {
    let mut cells: Vec<u32> = Vec::new();
    for m in utilities {
        cells.extend(m.cells());
    }
    cells.sort_unstable();
    cells.dedup();

    let mut gates = Vec::with_capacity(cells.len());
    let mut forward = SelectionMask::new(utilities.len());
    for &l in &cells {
        let us: Vec<f64> = utilities.iter().map(|m| m.utility(l)).collect();
        let noise_vec: Option<Vec<f64>> = noise.map(|field| {
            (0..utilities.len())
                .map(|i| field.get(i as u16, l))
                .collect()
        });
        let cell = ste_cell(&us, tau, eta, gamma, noise_vec.as_deref())?;
        for (i, &sel) in cell.m_fwd.iter().enumerate() {
            if sel {
                forward.select(i, l);
            }
        }
        gates.push(cell);
    }
    Ok(GateField {
        cells,
        gates,
        forward,
    })
}

/// Channelwise maximum over all maps providing each cell; cells provided by
/// no map stay absent.
pub fn fuse_max(
    grid: GridSpec,
    agent_id: u16,
    maps: &[&SparseFeatureMap],
) -> Result<SparseFeatureMap> {
    for m in maps {
        if m.grid != grid {
            return Err(Error::GridMismatch(format!(
                "fusion input from agent {} has a different grid",
                m.agent_id
            )));
        }
    }
    let mut fused = SparseFeatureMap::new(grid, agent_id);
    let mut cells: Vec<u32> = maps.iter().flat_map(|m| m.cells()).collect();
    cells.sort_unstable();
    cells.dedup();
    for l in cells {
        let mut acc: Option<Vec<f64>> = None;
        for m in maps {
            if let Some(v) = m.get(l) {
                match acc.as_mut() {
                    None => acc = Some(v.to_vec()),
                    Some(a) => {
                        for (slot, &x) in a.iter_mut().zip(v) {
                            if x > *slot {
                                *slot = x;
                            }
                        }
                    }
                }
            }
        }
        if let Some(v) = acc {
            fused.insert(l, v)?;
        }
    }
    Ok(fused)
}

/// Training hyperparameters: gate temperatures with their annealing
/// endpoints, the sparsity weight, and the optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    /// Initial utility threshold (learnable).
    pub tau: f64,
    pub eta0: f64,
    pub eta1: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    /// Semantic loss weight.
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            tau: 0.05,
            eta0: 0.9,
            eta1: 0.1,
            gamma0: 0.9,
            gamma1: 0.1,
            lambda: 0.01,
            learning_rate: 0.5,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta0", self.eta0),
            ("eta1", self.eta1),
            ("gamma0", self.gamma0),
            ("gamma1", self.gamma1),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::invalid(format!(
                    "temperature {name} must be positive (got {v})"
                )));
            }
        }
        if self.lambda < 0.0 {
            return Err(Error::invalid(format!(
                "lambda must be non-negative (got {})",
                self.lambda
            )));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::invalid(format!(
                "learning rate must be positive (got {})",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        Ok(())
    }

    pub fn eta_at(&self, epoch: usize) -> f64 {
        anneal(self.eta0, self.eta1, epoch, self.epochs)
    }

    pub fn gamma_at(&self, epoch: usize) -> f64 {
        anneal(self.gamma0, self.gamma1, epoch, self.epochs)
    }
}

/// Geometric interpolation from `start` to `end` over `epochs` steps; the
/// final epoch lands exactly on `end`.
pub fn anneal(start: f64, end: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs <= 1 || epoch + 1 >= epochs {
        return end;
    }
    let t = epoch as f64 / (epochs - 1) as f64;
    start * (end / start).powf(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::sched::top1_mask;

    #[test]
    fn gate_midpoint_and_known_values() {
        for eta in [0.1, 0.5, 2.0] {
            assert_eq!(importance_gate(0.3, 0.3, eta).unwrap(), 0.5);
        }
        // (u - tau)/eta = ln 3 gives sigmoid = 3/4.
        let v = importance_gate(3f64.ln(), 0.0, 1.0).unwrap();
        assert!((v - 0.75).abs() < 1e-12);
        // Saturation.
        let v = importance_gate(0.1, 0.0, 1e-3).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
        assert!(importance_gate(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn softmax_known_values() {
        let b = gumbel_softmax(&[0.0, 0.0], 1.0, None).unwrap();
        assert_eq!(b, vec![0.5, 0.5]);

        let b = gumbel_softmax(&[2f64.ln(), 0.0], 1.0, None).unwrap();
        assert!((b[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((b[1] - 1.0 / 3.0).abs() < 1e-12);

        let b = gumbel_softmax(&[2.0, 1.0], 1e-3, None).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-6);
        assert!(b[1] < 1e-6);

        assert!(gumbel_softmax(&[0.0], 0.0, None).is_err());
        assert!(gumbel_softmax(&[0.0, 1.0], 1.0, Some(&[0.0])).is_err());
    }

    #[test]
    fn softmax_sums_to_one_with_noise() {
        let mut rng = seed::rng(&[42]);
        for _ in 0..200 {
            let n = rng.random_range(1..6);
            let us: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 3.0).collect();
            let noise: Vec<f64> = (0..n).map(|_| sample_gumbel(&mut rng)).collect();
            let b = gumbel_softmax(&us, 0.9, Some(&noise)).unwrap();
            let sum: f64 = b.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(b.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn ste_forward_matches_deterministic_rule() {
        let g = ste_cell(&[0.9, 0.5], 0.2, 0.5, 0.5, None).unwrap();
        assert_eq!(g.m_fwd, vec![true, false]);

        // All below tau: nobody transmits.
        let g = ste_cell(&[0.1, 0.15], 0.2, 0.5, 0.5, None).unwrap();
        assert_eq!(g.m_fwd, vec![false, false]);

        // Tie goes to the lowest agent id.
        let g = ste_cell(&[0.5, 0.5], 0.2, 0.5, 0.5, None).unwrap();
        assert_eq!(g.m_fwd, vec![true, false]);

        // Zero utility is an absent candidate even when tau is zero.
        let g = ste_cell(&[0.0, 0.0], 0.0, 0.5, 0.5, None).unwrap();
        assert_eq!(g.m_fwd, vec![false, false]);
    }

    #[test]
    fn soft_mask_converges_to_forward_at_low_temperature() {
        // Margins of at least 0.1 from tau and between agents.
        let g = ste_cell(&[0.05, 0.08], 0.2, 1e-3, 1e-3, None).unwrap();
        for (i, &soft) in g.m_soft.iter().enumerate() {
            let hard = if g.m_fwd[i] { 1.0 } else { 0.0 };
            assert!((soft - hard).abs() < 1e-6);
        }
        let g = ste_cell(&[0.9, 0.5, 0.31], 0.2, 1e-3, 1e-3, None).unwrap();
        for (i, &soft) in g.m_soft.iter().enumerate() {
            let hard = if g.m_fwd[i] { 1.0 } else { 0.0 };
            assert!((soft - hard).abs() < 1e-6);
        }
    }

    #[test]
    fn beta_varies_with_noise_but_stays_on_simplex() {
        let mut rng = seed::rng(&[7]);
        let us = [0.4, 0.6, 0.2];
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..20 {
            let noise: Vec<f64> = (0..3).map(|_| sample_gumbel(&mut rng)).collect();
            let g = ste_cell(&us, 0.1, 0.9, 0.9, Some(&noise)).unwrap();
            let sum: f64 = g.beta.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            seen.insert(format!("{:.12}", g.beta[0]));
        }
        assert!(seen.len() > 1, "noise should move the softmax");
    }

    #[test]
    fn ste_mask_agrees_with_top1_mask() {
        let grid = GridSpec::new(4, 4, 2, 1.0).unwrap();
        let mut rng = seed::rng(&[19]);
        for trial in 0..50 {
            let mut maps = Vec::new();
            for a in 0..3u16 {
                let mut m = MetaUtilityMap::new(grid, a);
                for l in 0..grid.num_cells() {
                    if rng.random::<f64>() < 0.6 {
                        m.insert(l, rng.random::<f64>() * 2.0).unwrap();
                    }
                }
                maps.push(m);
            }
            let tau = 0.3;
            let field = ste_mask(&maps, tau, 0.5, 0.5, None).unwrap();
            let reference = top1_mask(&maps, tau).unwrap();
            assert_eq!(field.forward, reference, "trial {trial}");
        }
    }

    #[test]
    fn noise_field_is_deterministic_and_order_free() {
        let pairs = vec![(0u16, 3u32), (1, 3), (0, 7)];
        let a = NoiseField::sample(pairs.clone(), &[11, 2]);
        let mut reversed = pairs.clone();
        reversed.reverse();
        let b = NoiseField::sample(reversed, &[11, 2]);
        for &(agent, cell) in &pairs {
            assert_eq!(a.get(agent, cell), b.get(agent, cell));
        }
        assert_eq!(a.get(5, 5), 0.0);
    }

    #[test]
    fn fuse_max_is_channelwise() {
        let grid = GridSpec::new(2, 2, 2, 1.0).unwrap();
        let mut a = SparseFeatureMap::new(grid, 0);
        a.insert(0, vec![1.0, 0.0]).unwrap();
        a.insert(1, vec![0.5, 0.5]).unwrap();
        let mut b = SparseFeatureMap::new(grid, 1);
        b.insert(0, vec![0.0, 2.0]).unwrap();

        let fused = fuse_max(grid, 0, &[&a, &b]).unwrap();
        assert_eq!(fused.get(0).unwrap(), &[1.0, 2.0]);
        assert_eq!(fused.get(1).unwrap(), &[0.5, 0.5]);
        assert!(!fused.contains(2));

        let single = fuse_max(grid, 0, &[&a]).unwrap();
        assert_eq!(single.get(0), a.get(0));
        assert_eq!(single.get(1), a.get(1));

        let other = GridSpec::new(3, 2, 2, 1.0).unwrap();
        let c = SparseFeatureMap::new(other, 2);
        assert!(fuse_max(grid, 0, &[&a, &c]).is_err());
    }

    #[test]
    fn fuse_max_keeps_negative_components_of_sole_provider() {
        let grid = GridSpec::new(1, 2, 2, 1.0).unwrap();
        let mut a = SparseFeatureMap::new(grid, 0);
        a.insert(0, vec![-1.0, 0.5]).unwrap();
        let fused = fuse_max(grid, 0, &[&a]).unwrap();
        assert_eq!(fused.get(0).unwrap(), &[-1.0, 0.5]);
    }

    #[test]
    fn annealing_hits_endpoints_and_decreases() {
        let epochs = 12;
        let mut prev = f64::INFINITY;
        for e in 0..epochs {
            let t = anneal(0.9, 0.1, e, epochs);
            assert!(t <= prev);
            prev = t;
        }
        assert_eq!(anneal(0.9, 0.1, 0, epochs), 0.9);
        assert_eq!(anneal(0.9, 0.1, epochs - 1, epochs), 0.1);
        assert_eq!(anneal(0.9, 0.1, 0, 1), 0.1);
    }
}
