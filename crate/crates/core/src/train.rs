//! End-to-end toy pipeline: synthetic features -> sparsify -> utility head
//! -> gated selection -> max fusion -> per-cell logistic occupancy decoder,
//! trained by plain gradient descent with manual reverse-mode gradients.
//!
//! Two parallel evaluations run per step. The straight-through forward uses
//! the hard threshold, hard top-1 mask and hard fusion; its losses are what
//! training reports. The gradient comes from the smoothed surrogate, where
//! the sparsifier is logistic in `kappa`, the mask is `alpha * beta`, and
//! fusion takes the channelwise max of the soft-mask-weighted features, so
//! gradients reach every agent's utility head through the softmax. As the
//! gate temperatures anneal toward zero the two evaluations coincide.

use serde::{Deserialize, Serialize};

use crate::encoder::{
    fue_forward, semantic_loss, semantic_loss_grad, semantic_loss_smoothed, sparsify,
    EncoderParams, FueParams, KAPPA_SURROGATE_TEMP,
};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, SparseFeatureMap};
use crate::relax::{NoiseField, TrainParams};
use crate::scene::{synth_all_features, Scenario};
use crate::sched::{top1_mask, SelectionMask};
use crate::wire::payload_cost;

/// Per-cell logistic occupancy decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyHead {
    pub weight: Vec<f64>,
    pub bias: f64,
}

/// Everything the pipeline learns.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub enc: EncoderParams,
    pub fue: FueParams,
    pub head: ToyHead,
    /// Utility threshold, learned jointly.
    pub tau: f64,
}

impl ModelParams {
    /// Deterministic starting point: a uniform positive utility head (so
    /// gates start live), a zero decoder, and small seeded jitter to break
    /// symmetry.
    pub fn init(c: usize, enc: EncoderParams, tau: f64, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = crate::seed::rng(&[seed, 0x1217]);
        let base = 1.0 / c as f64;
        let fue_weight: Vec<f64> = (0..c)
            .map(|_| base * (1.0 + 0.1 * (rng.random::<f64>() - 0.5)))
            .collect();
        ModelParams {
            enc,
            fue: FueParams::new(fue_weight, 0.05),
            head: ToyHead {
                weight: vec![0.0; c],
                bias: 0.0,
            },
            tau,
        }
    }

    pub fn check_dims(&self, grid: &GridSpec) -> Result<()> {
        if self.fue.weight.len() != grid.channels() {
            return Err(Error::Dimension {
                expected: grid.channels(),
                got: self.fue.weight.len(),
            });
        }
        if self.head.weight.len() != grid.channels() {
            return Err(Error::Dimension {
                expected: grid.channels(),
                got: self.head.weight.len(),
            });
        }
        Ok(())
    }
}

/// Gradients for every trainable group.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub fue_weight: Vec<f64>,
    pub fue_bias: f64,
    pub tau: f64,
    pub kappa: f64,
    pub head_weight: Vec<f64>,
    pub head_bias: f64,
}

impl Gradients {
    pub fn zeros(c: usize) -> Self {
        Gradients {
            fue_weight: vec![0.0; c],
            fue_bias: 0.0,
            tau: 0.0,
            kappa: 0.0,
            head_weight: vec![0.0; c],
            head_bias: 0.0,
        }
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.fue_weight.iter_mut().zip(&other.fue_weight) {
            *a += b;
        }
        self.fue_bias += other.fue_bias;
        self.tau += other.tau;
        self.kappa += other.kappa;
        for (a, b) in self.head_weight.iter_mut().zip(&other.head_weight) {
            *a += b;
        }
        self.head_bias += other.head_bias;
    }

    fn scale(&mut self, s: f64) {
        for a in self.fue_weight.iter_mut() {
            *a *= s;
        }
        self.fue_bias *= s;
        self.tau *= s;
        self.kappa *= s;
        for a in self.head_weight.iter_mut() {
            *a *= s;
        }
        self.head_bias *= s;
    }
}

/// A scenario with its features and ground truth materialized once.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub grid: GridSpec,
    pub features: Vec<SparseFeatureMap>,
    pub occupancy: Vec<bool>,
}

impl PreparedScene {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        Ok(PreparedScene {
            grid: scenario.grid,
            features: synth_all_features(scenario)?,
            occupancy: scenario.occupancy(),
        })
    }

    /// Every (agent, cell) pair holding features; the Gumbel noise domain.
    pub fn provider_pairs(&self) -> Vec<(u16, u32)> {
        self.features
            .iter()
            .enumerate()
            .flat_map(|(i, m)| m.cells().map(move |l| (i as u16, l)).collect::<Vec<_>>())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub task: f64,
    pub semantic: f64,
    pub total: f64,
}

/// Smoothness margins of the surrogate at the evaluated point, for
/// screening gradient checks away from ReLU and fusion-argmax kinks.
#[derive(Debug, Clone, Copy)]
pub struct Margins {
    /// Smallest |w . s + b| over live cells.
    pub relu: f64,
    /// Smallest gap between the best and second-best fusion candidate.
    pub fuse_gap: f64,
}

struct CellCache {
    cell: u32,
    providers: Vec<usize>,
    /// Soft-sparsified features per provider.
    s: Vec<Vec<f64>>,
    /// Utility head pre-activations per provider.
    pre: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    m_soft: Vec<f64>,
    /// Channelwise winning provider position.
    fuse_argmax: Vec<usize>,
    fused: Vec<f64>,
    /// Decoder logit.
    z: f64,
    occupied: bool,
}

struct SoftCaches {
    cells: Vec<CellCache>,
    /// Ground-truth splits of cells no agent observes.
    empty_occupied: usize,
    empty_free: usize,
    eta: f64,
    gamma: f64,
    lambda: f64,
    margins: Margins,
}

/// Forward evaluation: reported straight-through losses plus the caches of
/// the smoothed surrogate for the backward pass.
pub struct ForwardPass {
    /// Losses of the deterministic forward (these are what training logs).
    pub hard: LossReport,
    /// Losses of the smoothed surrogate (what the gradient differentiates).
    pub soft: LossReport,
    /// Deterministic top-1 mask of the forward pass.
    pub forward_mask: SelectionMask,
    caches: SoftCaches,
}

impl ForwardPass {
    pub fn margins(&self) -> Margins {
        self.caches.margins
    }

    /// Hash of every discrete branch the surrogate took (fusion argmax per
    /// channel, ReLU activation per provider). Finite differences are only
    /// meaningful between evaluations with equal signatures.
    pub fn discrete_signature(&self) -> u64 {
        soft_signature(&self.caches)
    }
}

fn soft_signature(caches: &SoftCaches) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for cell in &caches.cells {
        cell.cell.hash(&mut h);
        for &p in &cell.fuse_argmax {
            p.hash(&mut h);
        }
        for &pre in &cell.pre {
            (pre > 0.0).hash(&mut h);
        }
    }
    h.finish()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable binary cross-entropy from the logit.
fn bce_from_logit(z: f64, y: bool) -> f64 {
    let y = if y { 1.0 } else { 0.0 };
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn soft_pass(
    prepared: &PreparedScene,
    params: &ModelParams,
    lambda: f64,
    eta: f64,
    gamma: f64,
    noise: Option<&NoiseField>,
) -> Result<(SoftCaches, LossReport)> {
    let grid = prepared.grid;
    let c = grid.channels();
    let l_total = grid.num_cells() as f64;
    let kappa = params.enc.kappa;

    let mut cells: Vec<u32> = prepared.features.iter().flat_map(|m| m.cells()).collect();
    cells.sort_unstable();
    cells.dedup();

    let mut caches = Vec::with_capacity(cells.len());
    let mut task = 0.0;
    let mut relu_margin = f64::INFINITY;
    let mut fuse_gap = f64::INFINITY;

    for &l in &cells {
        let providers: Vec<usize> = (0..prepared.features.len())
            .filter(|&i| prepared.features[i].contains(l))
            .collect();
        let mut s = Vec::with_capacity(providers.len());
        let mut pre = Vec::with_capacity(providers.len());
        let mut u = Vec::with_capacity(providers.len());
        for &i in &providers {
            let f = prepared.features[i].get(l).expect("provider has the cell");
            let sv: Vec<f64> = f
                .iter()
                .map(|&x| x * logistic((x - kappa) / KAPPA_SURROGATE_TEMP))
                .collect();
            let p: f64 =
                sv.iter().zip(&params.fue.weight).map(|(x, w)| x * w).sum::<f64>() + params.fue.bias;
            relu_margin = relu_margin.min(p.abs());
            pre.push(p);
            u.push(p.max(0.0));
            s.push(sv);
        }
        let alpha: Vec<f64> = u
            .iter()
            .map(|&ui| logistic((ui - params.tau) / eta))
            .collect();
        let noise_vec: Vec<f64> = providers
            .iter()
            .map(|&i| noise.map_or(0.0, |n| n.get(i as u16, l)))
            .collect();
        let beta = crate::relax::gumbel_softmax(&u, gamma, Some(&noise_vec))?;
        let m_soft: Vec<f64> = alpha.iter().zip(&beta).map(|(a, b)| a * b).collect();

        let mut fused = vec![f64::NEG_INFINITY; c];
        let mut fuse_argmax = vec![0usize; c];
        for j in 0..c {
            let mut best = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            let mut best_p = 0usize;
            for (p, sv) in s.iter().enumerate() {
                let v = m_soft[p] * sv[j];
                if v > best {
                    second = best;
                    best = v;
                    best_p = p;
                } else if v > second {
                    second = v;
                }
            }
            fused[j] = best;
            fuse_argmax[j] = best_p;
            if second.is_finite() {
                fuse_gap = fuse_gap.min(best - second);
            }
        }

        let z: f64 =
            fused.iter().zip(&params.head.weight).map(|(x, w)| x * w).sum::<f64>()
                + params.head.bias;
        let occupied = prepared.occupancy[l as usize];
        task += bce_from_logit(z, occupied);

        caches.push(CellCache {
            cell: l,
            providers,
            s,
            pre,
            alpha,
            beta,
            m_soft,
            fuse_argmax,
            fused,
            z,
            occupied,
        });
    }

    // Cells nobody observes decode from the bias alone.
    let mut empty_occupied = 0usize;
    let mut empty_free = 0usize;
    let covered: std::collections::BTreeSet<u32> = cells.iter().copied().collect();
    for l in 0..grid.num_cells() {
        if !covered.contains(&l) {
            if prepared.occupancy[l as usize] {
                empty_occupied += 1;
            } else {
                empty_free += 1;
            }
        }
    }
    task += empty_occupied as f64 * bce_from_logit(params.head.bias, true);
    task += empty_free as f64 * bce_from_logit(params.head.bias, false);
    task /= l_total;

    let semantic = semantic_loss_smoothed(&prepared.features, kappa)?;
    let report = LossReport {
        task,
        semantic,
        total: task + lambda * semantic,
    };
    Ok((
        SoftCaches {
            cells: caches,
            empty_occupied,
            empty_free,
            eta,
            gamma,
            lambda,
            margins: Margins {
                relu: relu_margin,
                fuse_gap,
            },
        },
        report,
    ))
}

/// The smoothed-surrogate loss alone; this is the function whose gradient
/// [`toy_backward`] returns, suitable for finite-difference checks.
pub fn soft_loss(
    prepared: &PreparedScene,
    params: &ModelParams,
    lambda: f64,
    eta: f64,
    gamma: f64,
    noise: Option<&NoiseField>,
) -> Result<f64> {
    let (_, report) = soft_pass(prepared, params, lambda, eta, gamma, noise)?;
    Ok(report.total)
}

/// Surrogate loss plus its discrete-branch signature, for conditioning-aware
/// finite-difference probes.
pub fn soft_probe(
    prepared: &PreparedScene,
    params: &ModelParams,
    lambda: f64,
    eta: f64,
    gamma: f64,
    noise: Option<&NoiseField>,
) -> Result<(f64, u64)> {
    let (caches, report) = soft_pass(prepared, params, lambda, eta, gamma, noise)?;
    Ok((report.total, soft_signature(&caches)))
}

fn hard_pass(
    prepared: &PreparedScene,
    params: &ModelParams,
    lambda: f64,
) -> Result<(LossReport, SelectionMask)> {
    let grid = prepared.grid;
    let l_total = grid.num_cells() as f64;
    let sparse: Vec<SparseFeatureMap> = prepared
        .features
        .iter()
        .map(|m| sparsify(m, params.enc.kappa))
        .collect();
    let utilities = sparse
        .iter()
        .map(|m| fue_forward(m, &params.fue))
        .collect::<Result<Vec<_>>>()?;
    let mask = top1_mask(&utilities, params.tau)?;

    let mut task = 0.0;
    let mut selected_cells = std::collections::BTreeMap::new();
    for (agent, cell) in mask.iter() {
        selected_cells.insert(cell, agent);
    }
    for l in 0..grid.num_cells() {
        let z = match selected_cells.get(&l) {
            Some(&agent) => {
                let f = sparse[agent].get(l).expect("selected cells are stored");
                f.iter().zip(&params.head.weight).map(|(x, w)| x * w).sum::<f64>()
                    + params.head.bias
            }
            None => params.head.bias,
        };
        task += bce_from_logit(z, prepared.occupancy[l as usize]);
    }
    task /= l_total;
    let semantic = semantic_loss(&prepared.features, params.enc.kappa)?;
    Ok((
        LossReport {
            task,
            semantic,
            total: task + lambda * semantic,
        },
        mask,
    ))
}

/// Run the full pipeline on one scenario: straight-through losses for
/// reporting plus surrogate caches for the backward pass.
pub fn toy_forward(
    scenario: &Scenario,
    params: &ModelParams,
    lambda: f64,
    eta: f64,
    gamma: f64,
    noise: Option<&NoiseField>,
) -> Result<ForwardPass> {
    let prepared = PreparedScene::new(scenario)?;
    toy_forward_prepared(&prepared, params, lambda, eta, gamma, noise)
}

pub fn toy_forward_prepared(
    prepared: &PreparedScene,
    params: &ModelParams,
    lambda: f64,
    eta: f64,
    gamma: f64,
    noise: Option<&NoiseField>,
) -> Result<ForwardPass> {
    params.check_dims(&prepared.grid)?;
    let (caches, soft) = soft_pass(prepared, params, lambda, eta, gamma, noise)?;
    let (hard, forward_mask) = hard_pass(prepared, params, lambda)?;
    Ok(ForwardPass {
        hard,
        soft,
        forward_mask,
        caches,
    })
}

/// Exact reverse-mode gradient of the smoothed surrogate loss.
pub fn toy_backward(
    prepared: &PreparedScene,
    params: &ModelParams,
    pass: &ForwardPass,
) -> Result<Gradients> {
    let caches = &pass.caches;
    let grid = prepared.grid;
    let c = grid.channels();
    let l_total = grid.num_cells() as f64;
    let kappa = params.enc.kappa;
    let mut g = Gradients::zeros(c);

    for cache in &caches.cells {
        let n_prov = cache.providers.len();
        let y = if cache.occupied { 1.0 } else { 0.0 };
        let dz = (logistic(cache.z) - y) / l_total;
        g.head_bias += dz;
        let mut d_fused = vec![0.0; c];
        for (j, slot) in d_fused.iter_mut().enumerate() {
            g.head_weight[j] += dz * cache.fused[j];
            *slot = dz * params.head.weight[j];
        }

        // Fusion max routes each channel to its winning provider.
        let mut d_m = vec![0.0; n_prov];
        let mut d_s = vec![vec![0.0; c]; n_prov];
        for j in 0..c {
            let p = cache.fuse_argmax[j];
            d_m[p] += d_fused[j] * cache.s[p][j];
            d_s[p][j] += d_fused[j] * cache.m_soft[p];
        }

        // m = alpha * beta.
        let d_alpha: Vec<f64> = d_m.iter().zip(&cache.beta).map(|(d, b)| d * b).collect();
        let d_beta: Vec<f64> = d_m.iter().zip(&cache.alpha).map(|(d, a)| d * a).collect();

        // Softmax Jacobian back to the utility scores.
        let dot: f64 = d_beta.iter().zip(&cache.beta).map(|(d, b)| d * b).sum();
        let mut d_u: Vec<f64> = cache
            .beta
            .iter()
            .zip(&d_beta)
            .map(|(b, d)| b * (d - dot) / caches.gamma)
            .collect();

        // Importance gate: alpha = sigmoid((u - tau) / eta).
        for p in 0..n_prov {
            let a = cache.alpha[p];
            let slope = d_alpha[p] * a * (1.0 - a) / caches.eta;
            d_u[p] += slope;
            g.tau -= slope;
        }

        // Utility head: u = ReLU(w . s + b).
        for p in 0..n_prov {
            if cache.pre[p] <= 0.0 {
                continue;
            }
            let dpre = d_u[p];
            g.fue_bias += dpre;
            for (j, slot) in d_s[p].iter_mut().enumerate() {
                g.fue_weight[j] += dpre * cache.s[p][j];
                *slot += dpre * params.fue.weight[j];
            }
        }

        // Soft sparsifier: s = f * sigmoid((f - kappa) / T), data fixed.
        for (p, &agent) in cache.providers.iter().enumerate() {
            let f = prepared.features[agent]
                .get(cache.cell)
                .expect("provider has the cell");
            for (j, &ds) in d_s[p].iter().enumerate() {
                if ds == 0.0 {
                    continue;
                }
                let t = logistic((f[j] - kappa) / KAPPA_SURROGATE_TEMP);
                g.kappa += ds * f[j] * t * (1.0 - t) * (-1.0 / KAPPA_SURROGATE_TEMP);
            }
        }
    }

    // Unobserved cells feed the decoder bias directly.
    let s0 = logistic(params.head.bias);
    g.head_bias += (caches.empty_free as f64 * s0
        + caches.empty_occupied as f64 * (s0 - 1.0))
        / l_total;

    // Semantic path.
    let sem = semantic_loss_grad(&prepared.features, kappa)?;
    g.kappa += caches.lambda * sem.d_kappa;

    Ok(g)
}

/// Selected-cell count and total data-channel bytes under the current
/// deterministic policy with no budget cap.
pub fn policy_footprint(prepared: &PreparedScene, params: &ModelParams) -> Result<(usize, u64)> {
    let sparse: Vec<SparseFeatureMap> = prepared
        .features
        .iter()
        .map(|m| sparsify(m, params.enc.kappa))
        .collect();
    let utilities = sparse
        .iter()
        .map(|m| fue_forward(m, &params.fue))
        .collect::<Result<Vec<_>>>()?;
    let mask = top1_mask(&utilities, params.tau)?;
    let mut bytes = 0u64;
    for agent in 0..mask.n_agents() {
        let n = mask.agent_cells(agent).len();
        if n > 0 {
            bytes += payload_cost(n, prepared.grid.channels());
        }
    }
    Ok((mask.total_selected(), bytes))
}

/// One row of training telemetry (straight-through losses, mean over the
/// scenario set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_task: f64,
    pub loss_semantic: f64,
    pub bytes: f64,
    pub selected_cells: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub metrics: Vec<EpochMetrics>,
}

/// Plain gradient descent over the scenario set with geometric temperature
/// annealing and fresh seeded Gumbel noise each step.
pub fn train_toy(
    scenarios: &[Scenario],
    init: ModelParams,
    tp: &TrainParams,
) -> Result<TrainOutcome> {
    tp.validate()?;
    if scenarios.is_empty() {
        return Err(Error::invalid("training needs at least one scenario"));
    }
    let prepared: Vec<PreparedScene> = scenarios
        .iter()
        .map(PreparedScene::new)
        .collect::<Result<_>>()?;
    let c = prepared[0].grid.channels();
    let mut params = init;
    params.enc.lambda = tp.lambda;
    let mut metrics = Vec::with_capacity(tp.epochs);

    for epoch in 0..tp.epochs {
        let eta = tp.eta_at(epoch);
        let gamma = tp.gamma_at(epoch);
        let mut grad = Gradients::zeros(c);
        let mut loss_task = 0.0;
        let mut loss_semantic = 0.0;
        let mut bytes = 0.0;
        let mut cells = 0.0;
        for (idx, scene) in prepared.iter().enumerate() {
            let noise = NoiseField::sample(
                scene.provider_pairs(),
                &[tp.seed, epoch as u64, idx as u64],
            );
            let pass = toy_forward_prepared(scene, &params, tp.lambda, eta, gamma, Some(&noise))?;
            if !pass.hard.total.is_finite() || !pass.soft.total.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!(
                        "non-finite loss (hard {}, soft {})",
                        pass.hard.total, pass.soft.total
                    ),
                });
            }
            grad.add(&toy_backward(scene, &params, &pass)?);
            loss_task += pass.hard.task;
            loss_semantic += pass.hard.semantic;
            let (n_cells, n_bytes) = policy_footprint(scene, &params)?;
            cells += n_cells as f64;
            bytes += n_bytes as f64;
        }
        let inv = 1.0 / prepared.len() as f64;
        grad.scale(inv);
        metrics.push(EpochMetrics {
            epoch,
            loss_task: loss_task * inv,
            loss_semantic: loss_semantic * inv,
            bytes: bytes * inv,
            selected_cells: cells * inv,
        });

        let lr = tp.learning_rate;
        for (w, d) in params.fue.weight.iter_mut().zip(&grad.fue_weight) {
            *w -= lr * d;
        }
        params.fue.bias -= lr * grad.fue_bias;
        for (w, d) in params.head.weight.iter_mut().zip(&grad.head_weight) {
            *w -= lr * d;
        }
        params.head.bias -= lr * grad.head_bias;
        // Thresholds stay in their admissible ranges by projection.
        params.tau = (params.tau - lr * grad.tau).max(0.0);
        params.enc.kappa -= lr * grad.kappa;
    }

    Ok(TrainOutcome { params, metrics })
}

/// Serializable form of [`ModelParams`] for the parameter file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub fue: ParamsFue,
    pub enc: ParamsEnc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<ParamsHead>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sched: Option<ParamsSched>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFue {
    pub w: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsEnc {
    pub kappa: f64,
    pub lambda: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsHead {
    pub d: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSched {
    pub tau: f64,
}

impl ParamsFile {
    pub fn from_model(m: &ModelParams) -> Self {
        ParamsFile {
            fue: ParamsFue {
                w: m.fue.weight.clone(),
                b: m.fue.bias,
            },
            enc: ParamsEnc {
                kappa: m.enc.kappa,
                lambda: m.enc.lambda,
            },
            head: Some(ParamsHead {
                d: m.head.weight.clone(),
                bias: m.head.bias,
            }),
            sched: Some(ParamsSched { tau: m.tau }),
        }
    }

    /// Rebuild model parameters; a missing head defaults to zero and a
    /// missing threshold to `fallback_tau`.
    pub fn into_model(self, fallback_tau: f64) -> Result<ModelParams> {
        let c = self.fue.w.len();
        let enc = EncoderParams::new(self.enc.kappa, self.enc.lambda)?;
        let head = match self.head {
            Some(h) => {
                if h.d.len() != c {
                    return Err(Error::Dimension {
                        expected: c,
                        got: h.d.len(),
                    });
                }
                ToyHead {
                    weight: h.d,
                    bias: h.bias,
                }
            }
            None => ToyHead {
                weight: vec![0.0; c],
                bias: 0.0,
            },
        };
        Ok(ModelParams {
            enc,
            fue: FueParams::new(self.fue.w, self.fue.b),
            head,
            tau: self.sched.map_or(fallback_tau, |s| s.tau),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("params serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("params file: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scenario, SceneOptions};

    fn small_scenario(sigma: f64, seed: u64) -> Scenario {
        let grid = GridSpec::new(6, 8, 4, 1.0).unwrap();
        let opts = SceneOptions {
            sensing_radius: 6.0,
            noise_sigma: sigma,
            feature_amplitude: 1.0,
        };
        generate_scenario(2, 3, grid, seed, opts).unwrap()
    }

    fn base_params() -> ModelParams {
        ModelParams::init(4, EncoderParams::new(0.02, 1.0).unwrap(), 0.05, 9)
    }

    #[test]
    fn forward_is_deterministic() {
        let scn = small_scenario(0.1, 3);
        let params = base_params();
        let prepared = PreparedScene::new(&scn).unwrap();
        let noise = NoiseField::sample(prepared.provider_pairs(), &[1, 2]);
        let a = toy_forward(&scn, &params, 1.0, 0.5, 0.5, Some(&noise)).unwrap();
        let b = toy_forward(&scn, &params, 1.0, 0.5, 0.5, Some(&noise)).unwrap();
        assert_eq!(a.hard, b.hard);
        assert_eq!(a.soft, b.soft);
        assert_eq!(a.forward_mask, b.forward_mask);
    }

    #[test]
    fn zero_decoder_sits_at_chance_loss() {
        let scn = small_scenario(0.0, 3);
        let params = base_params(); // head starts at zero
        let pass = toy_forward(&scn, &params, 0.0, 0.5, 0.5, None).unwrap();
        assert!((pass.hard.task - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn constructed_decoder_beats_chance() {
        let scn = small_scenario(0.0, 3);
        let mut params = base_params();
        // Occupied cells activate even channels, empty cells odd channels;
        // a hand-built contrast decoder separates them.
        params.head.weight = vec![4.0, -4.0, 4.0, -4.0];
        params.head.bias = -0.5;
        let pass = toy_forward(&scn, &params, 0.0, 0.5, 0.5, None).unwrap();
        assert!(pass.hard.task < std::f64::consts::LN_2);
    }

    #[test]
    fn empty_selection_degenerates_to_prior() {
        let scn = small_scenario(0.0, 3);
        let mut params = base_params();
        params.tau = 1e9; // nothing passes the threshold
        let pass = toy_forward(&scn, &params, 0.0, 0.5, 0.5, None).unwrap();
        assert_eq!(pass.forward_mask.total_selected(), 0);
        assert!((pass.hard.task - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn tau_gradient_mirrors_gate_slope() {
        // d alpha / d tau = -d alpha / d u, so the tau gradient must be the
        // negative of the total gate slope; with everything else fixed this
        // shows up as opposite signs of coupled perturbations.
        let scn = small_scenario(0.05, 4);
        let prepared = PreparedScene::new(&scn).unwrap();
        let params = base_params();
        let noise = NoiseField::sample(prepared.provider_pairs(), &[5]);
        let h = 1e-6;
        let mut up = params.clone();
        up.tau += h;
        let mut down = params.clone();
        down.tau -= h;
        let fd_tau = (soft_loss(&prepared, &up, 1.0, 0.5, 0.5, Some(&noise)).unwrap()
            - soft_loss(&prepared, &down, 1.0, 0.5, 0.5, Some(&noise)).unwrap())
            / (2.0 * h);
        let pass = toy_forward_prepared(&prepared, &params, 1.0, 0.5, 0.5, Some(&noise)).unwrap();
        let g = toy_backward(&prepared, &params, &pass).unwrap();
        assert!((fd_tau - g.tau).abs() <= 1e-6 * g.tau.abs().max(1.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let scn = small_scenario(0.08, 11);
        let prepared = PreparedScene::new(&scn).unwrap();
        let params = base_params();
        let lambda = 0.7;
        let (eta, gamma) = (0.5, 0.5);
        let noise = NoiseField::sample(prepared.provider_pairs(), &[21]);
        let pass = toy_forward_prepared(&prepared, &params, lambda, eta, gamma, Some(&noise)).unwrap();
        let g = toy_backward(&prepared, &params, &pass).unwrap();
        let m = pass.margins();
        assert!(m.relu > 1e-4 && m.fuse_gap > 1e-4, "degenerate test point");

        let h = 1e-5;
        let rel = |fd: f64, an: f64| (fd - an).abs() / an.abs().max(1e-6);
        let eval = |p: &ModelParams| soft_loss(&prepared, p, lambda, eta, gamma, Some(&noise)).unwrap();

        for j in 0..4 {
            let mut up = params.clone();
            up.fue.weight[j] += h;
            let mut dn = params.clone();
            dn.fue.weight[j] -= h;
            let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
            assert!(rel(fd, g.fue_weight[j]) < 1e-4, "fue w[{j}]: {fd} vs {}", g.fue_weight[j]);
        }
        for j in 0..4 {
            let mut up = params.clone();
            up.head.weight[j] += h;
            let mut dn = params.clone();
            dn.head.weight[j] -= h;
            let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
            assert!(rel(fd, g.head_weight[j]) < 1e-4, "head w[{j}]");
        }
        for (name, field, analytic) in [
            ("fue_bias", 0, g.fue_bias),
            ("tau", 1, g.tau),
            ("kappa", 2, g.kappa),
            ("head_bias", 3, g.head_bias),
        ] {
            let mut up = params.clone();
            let mut dn = params.clone();
            match field {
                0 => {
                    up.fue.bias += h;
                    dn.fue.bias -= h;
                }
                1 => {
                    up.tau += h;
                    dn.tau -= h;
                }
                2 => {
                    up.enc.kappa += h;
                    dn.enc.kappa -= h;
                }
                _ => {
                    up.head.bias += h;
                    dn.head.bias -= h;
                }
            }
            let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
            assert!(rel(fd, analytic) < 1e-4, "{name}: fd={fd} analytic={analytic}");
        }
    }

    #[test]
    fn lambda_zero_kills_semantic_kappa_path() {
        let scn = small_scenario(0.0, 6);
        let prepared = PreparedScene::new(&scn).unwrap();
        let params = base_params();
        let pass0 = toy_forward_prepared(&prepared, &params, 0.0, 0.5, 0.5, None).unwrap();
        let g0 = toy_backward(&prepared, &params, &pass0).unwrap();
        let pass1 = toy_forward_prepared(&prepared, &params, 5.0, 0.5, 0.5, None).unwrap();
        let g1 = toy_backward(&prepared, &params, &pass1).unwrap();
        let sem = semantic_loss_grad(&prepared.features, params.enc.kappa).unwrap();
        let diff = g1.kappa - g0.kappa;
        assert!((diff - 5.0 * sem.d_kappa).abs() < 1e-12);
    }

    #[test]
    fn training_reduces_task_loss_and_is_deterministic() {
        let scn = small_scenario(0.0, 3);
        let tp = TrainParams {
            epochs: 30,
            ..TrainParams::default()
        };
        let init = base_params();
        let out1 = train_toy(std::slice::from_ref(&scn), init.clone(), &tp).unwrap();
        let out2 = train_toy(&[scn], init, &tp).unwrap();
        assert_eq!(out1.metrics, out2.metrics);
        let first = out1.metrics.first().unwrap().loss_task;
        let last = out1.metrics.last().unwrap().loss_task;
        assert!(last < first, "no descent: {first} -> {last}");
    }

    #[test]
    fn heavy_sparsity_pressure_shrinks_bytes() {
        let scn = small_scenario(0.0, 3);
        let init = base_params();
        let light = TrainParams {
            lambda: 0.0,
            epochs: 30,
            ..TrainParams::default()
        };
        let heavy = TrainParams {
            lambda: 10.0,
            epochs: 30,
            ..TrainParams::default()
        };
        let out_light = train_toy(std::slice::from_ref(&scn), init.clone(), &light).unwrap();
        let out_heavy = train_toy(&[scn], init, &heavy).unwrap();
        let b_light = out_light.metrics.last().unwrap().bytes;
        let b_heavy = out_heavy.metrics.last().unwrap().bytes;
        assert!(
            b_heavy < b_light,
            "sparsity pressure did not shrink bytes: {b_heavy} vs {b_light}"
        );
        // And the semantic loss itself is pushed down.
        let s_light = out_light.metrics.last().unwrap().loss_semantic;
        let s_heavy = out_heavy.metrics.last().unwrap().loss_semantic;
        assert!(s_heavy < s_light);
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        // Enormous feature amplitudes make the decoder logits overflow
        // after the first update.
        let grid = GridSpec::new(6, 8, 4, 1.0).unwrap();
        let opts = SceneOptions {
            sensing_radius: 6.0,
            noise_sigma: 0.0,
            feature_amplitude: 1e200,
        };
        let scn = generate_scenario(2, 3, grid, 3, opts).unwrap();
        let tp = TrainParams {
            learning_rate: 1e3,
            lambda: 0.0,
            epochs: 8,
            ..TrainParams::default()
        };
        match train_toy(&[scn], base_params(), &tp) {
            Err(Error::Training { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn params_file_round_trip() {
        let m = ModelParams {
            enc: EncoderParams::new(0.03, 2.0).unwrap(),
            fue: FueParams::new(vec![0.1, 0.2, 0.3, 0.4], -0.05),
            head: ToyHead {
                weight: vec![1.0, -1.0, 0.5, 0.0],
                bias: 0.2,
            },
            tau: 0.07,
        };
        let text = ParamsFile::from_model(&m).to_toml();
        let back = ParamsFile::from_toml(&text).unwrap().into_model(0.0).unwrap();
        assert_eq!(back, m);

        // The minimal spec'd keys suffice.
        let minimal = "[fue]\nw = [1.0, 0.0, 0.0, 0.0]\nb = 0.1\n[enc]\nkappa = 0.05\nlambda = 1.5\n";
        let m = ParamsFile::from_toml(minimal).unwrap().into_model(0.3).unwrap();
        assert_eq!(m.tau, 0.3);
        assert_eq!(m.head.weight, vec![0.0; 4]);
        assert_eq!(m.enc.lambda, 1.5);
    }
}
