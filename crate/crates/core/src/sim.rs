//! Two-phase broadcast exchange simulator.
//!
//! Per frame: every agent quantizes and broadcasts its utility map on the
//! control channel, every agent independently decodes all maps and runs the
//! identical scheduler (the masks are asserted equal), agents with admitted
//! cells broadcast FP8 feature payloads on the data channel under the byte
//! budget, and a designated ego agent fuses its own local map with the
//! decoded payloads and runs the toy occupancy decoder.
//!
//! Byte accounting uses the broadcast convention: each payload is
//! transmitted once and received by all, so total cost sums over
//! transmitting agents; a single-agent scene exchanges nothing. The ego's
//! own map never travels (fusion is local), but its admitted cells are
//! still broadcast for the other agents' benefit and therefore count.

use serde::Serialize;

use crate::encoder::sparsify;
use crate::error::{Error, Result};
use crate::grid::{MetaUtilityMap, SparseFeatureMap};
use crate::relax::fuse_max;
use crate::scene::{synth_all_features, Scenario};
use crate::sched::{frame_utility, schedule, RankedCandidate, SchedulerConfig, SelectionMask};
use crate::seed;
use crate::train::ModelParams;
use crate::wire::{decode_features, decode_utility, encode_features, encode_utility, entry_cost};

/// Link model: bandwidth, frame rate, and the derived per-frame byte budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommBudget {
    /// Data-channel bandwidth in bits per second.
    pub bandwidth_bps: f64,
    /// Control-channel bandwidth in bits per second (defaults to the data
    /// channel's).
    pub control_bandwidth_bps: f64,
    /// Frames per second.
    pub frame_rate: f64,
    /// Constant added to the reported end-to-end latency for local compute.
    pub compute_latency_ms: f64,
}

impl CommBudget {
    pub fn new(bandwidth_bps: f64, frame_rate: f64) -> Result<Self> {
        if bandwidth_bps.is_nan() || bandwidth_bps <= 0.0 || frame_rate.is_nan() || frame_rate <= 0.0 {
            return Err(Error::invalid(format!(
                "bandwidth and frame rate must be positive (got {bandwidth_bps}, {frame_rate})"
            )));
        }
        Ok(CommBudget {
            bandwidth_bps,
            control_bandwidth_bps: bandwidth_bps,
            frame_rate,
            compute_latency_ms: 0.0,
        })
    }

    /// Per-frame data budget in whole bytes.
    pub fn budget_bytes(&self) -> u64 {
        budget_from_bandwidth(self.bandwidth_bps, self.frame_rate).expect("validated fields")
    }
}

/// Bytes available per frame: bandwidth over frame rate, in bytes, rounded
/// down.
pub fn budget_from_bandwidth(bandwidth_bps: f64, frame_rate: f64) -> Result<u64> {
    if bandwidth_bps.is_nan() || bandwidth_bps <= 0.0 || frame_rate.is_nan() || frame_rate <= 0.0 {
        return Err(Error::invalid(format!(
            "bandwidth and frame rate must be positive (got {bandwidth_bps}, {frame_rate})"
        )));
    }
    Ok((bandwidth_bps / frame_rate / 8.0).floor() as u64)
}

/// Serial-link transmission time for `bytes` at `bandwidth_bps`.
pub fn transmit_latency_ms(bytes: u64, bandwidth_bps: f64) -> f64 {
    bytes as f64 * 8.0 / bandwidth_bps * 1e3
}

/// Everything observable about one simulated frame.
#[derive(Debug, Clone, Serialize)]
pub struct FrameReport {
    pub frame_id: u32,
    pub n_agents: usize,
    pub ego: u16,
    pub budget_bytes: u64,
    /// Control-channel message size per agent (zero when nothing travels).
    pub utility_bytes_per_agent: Vec<u64>,
    /// Data-channel message size per agent.
    pub feature_bytes_per_agent: Vec<u64>,
    pub total_control_bytes: u64,
    pub total_feature_bytes: u64,
    pub total_bytes: u64,
    /// Sum of the admitted per-entry costs; this is what the budget caps.
    pub admitted_entry_bytes: u64,
    pub selected_cells_per_agent: Vec<usize>,
    pub total_selected_cells: usize,
    pub frame_utility: f64,
    pub control_latency_ms: f64,
    pub data_latency_ms: f64,
    pub compute_latency_ms: f64,
    /// Toy occupancy loss after fusion at the ego.
    pub toy_task_loss: f64,
    /// Priority-ordered candidate list, the scheduler's byproduct.
    pub priorities: Vec<RankedCandidate>,
    #[serde(skip)]
    pub mask: SelectionMask,
}


fn bce_from_logit(z: f64, y: bool) -> f64 {
    let y = if y { 1.0 } else { 0.0 };
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Toy decoder loss over all cells of the fused map at the ego.
fn ego_task_loss(scenario: &Scenario, fused: &SparseFeatureMap, params: &ModelParams) -> f64 {
    let occupancy = scenario.occupancy();
    let mut loss = 0.0;
    for l in 0..scenario.grid.num_cells() {
        let z = match fused.get(l) {
            Some(f) => {
                f.iter()
                    .zip(&params.head.weight)
                    .map(|(x, w)| x * w)
                    .sum::<f64>()
                    + params.head.bias
            }
            None => params.head.bias,
        };
        loss += bce_from_logit(z, occupancy[l as usize]);
    }
    loss / scenario.grid.num_cells() as f64
}

struct FramePipeline {
    sparse: Vec<SparseFeatureMap>,
    utilities: Vec<MetaUtilityMap>,
}

fn frame_pipeline(scenario: &Scenario, params: &ModelParams) -> Result<FramePipeline> {
    params.check_dims(&scenario.grid)?;
    let features = synth_all_features(scenario)?;
    let sparse: Vec<SparseFeatureMap> = features
        .iter()
        .map(|m| sparsify(m, params.enc.kappa))
        .collect();
    let utilities = sparse
        .iter()
        .map(|m| crate::encoder::fue_forward(m, &params.fue))
        .collect::<Result<Vec<_>>>()?;
    Ok(FramePipeline { sparse, utilities })
}

/// Simulate one scheduled exchange frame.
pub fn run_frame(
    scenario: &Scenario,
    params: &ModelParams,
    cfg: &SchedulerConfig,
    budget: &CommBudget,
    ego: u16,
    frame_id: u32,
) -> Result<FrameReport> {
    let n = scenario.n_agents();
    if (ego as usize) >= n {
        return Err(Error::invalid(format!(
            "ego agent {ego} outside 0..{n}"
        )));
    }
    let grid = scenario.grid;
    let pipeline = frame_pipeline(scenario, params)?;
    let exchanging = n > 1;

    // Control phase: every agent broadcasts its quantized utility map.
    let mut utility_msgs = Vec::with_capacity(n);
    let mut utility_bytes_per_agent = vec![0u64; n];
    for (i, map) in pipeline.utilities.iter().enumerate() {
        let bytes = encode_utility(map, cfg.tau, frame_id)?;
        if exchanging {
            utility_bytes_per_agent[i] = bytes.len() as u64;
        }
        utility_msgs.push(bytes);
    }

    // Every agent independently decodes all maps and schedules. The inputs
    // are byte-identical, so the masks must agree; any disagreement is a
    // consistency fault.
    let cost = entry_cost(grid.channels());
    let mut agreed: Option<crate::sched::ScheduleResult> = None;
    for _agent in 0..n {
        let decoded: Vec<MetaUtilityMap> = utility_msgs
            .iter()
            .map(|bytes| decode_utility(bytes, &grid).map(|(_, m)| m))
            .collect::<Result<_>>()?;
        let result = schedule(&decoded, cost, cfg)?;
        match &agreed {
            None => agreed = Some(result),
            Some(first) => {
                if first.mask != result.mask {
                    return Err(Error::invalid(format!(
                        "consistency fault: agent {_agent} computed a different mask"
                    )));
                }
            }
        }
    }
    let result = agreed.expect("at least one agent");
    let decoded_utilities: Vec<MetaUtilityMap> = utility_msgs
        .iter()
        .map(|bytes| decode_utility(bytes, &grid).map(|(_, m)| m))
        .collect::<Result<_>>()?;

    // Data phase: agents with admitted cells broadcast feature payloads.
    let mut feature_bytes_per_agent = vec![0u64; n];
    let mut payloads: Vec<Option<Vec<u8>>> = vec![None; n];
    if exchanging {
        for agent in 0..n {
            let cells = result.mask.agent_cells(agent);
            if cells.is_empty() {
                continue;
            }
            let bytes = encode_features(&pipeline.sparse[agent], cells.iter().copied(), frame_id)?;
            feature_bytes_per_agent[agent] = bytes.len() as u64;
            payloads[agent] = Some(bytes);
        }
    }

    // Fusion at the ego: its own sparsified map is local and free; remote
    // payloads arrive FP8-rounded.
    let mut received: Vec<SparseFeatureMap> = Vec::new();
    for (agent, payload) in payloads.iter().enumerate() {
        if agent == ego as usize {
            continue;
        }
        if let Some(bytes) = payload {
            let (_, map) = decode_features(bytes, &grid)?;
            received.push(map);
        }
    }
    let mut fusion_inputs: Vec<&SparseFeatureMap> = vec![&pipeline.sparse[ego as usize]];
    fusion_inputs.extend(received.iter());
    let fused = fuse_max(grid, ego, &fusion_inputs)?;
    let toy_task_loss = ego_task_loss(scenario, &fused, params);

    let total_control_bytes: u64 = utility_bytes_per_agent.iter().sum();
    let total_feature_bytes: u64 = feature_bytes_per_agent.iter().sum();
    let admitted_entry_bytes = result.admitted_cost();
    debug_assert!(admitted_entry_bytes <= cfg.budget_bytes);

    Ok(FrameReport {
        frame_id,
        n_agents: n,
        ego,
        budget_bytes: cfg.budget_bytes,
        utility_bytes_per_agent,
        feature_bytes_per_agent,
        total_control_bytes,
        total_feature_bytes,
        total_bytes: total_control_bytes + total_feature_bytes,
        admitted_entry_bytes,
        selected_cells_per_agent: (0..n).map(|i| result.mask.agent_cells(i).len()).collect(),
        total_selected_cells: result.mask.total_selected(),
        frame_utility: frame_utility(&decoded_utilities, &result.mask)?,
        control_latency_ms: transmit_latency_ms(total_control_bytes, budget.control_bandwidth_bps),
        data_latency_ms: transmit_latency_ms(total_feature_bytes, budget.bandwidth_bps),
        compute_latency_ms: budget.compute_latency_ms,
        toy_task_loss,
        priorities: result.ranked.clone(),
        mask: result.mask,
    })
}

/// The raw wire messages one frame exchanges: every agent's utility map
/// plus the admitted feature payloads, as (label, bytes) pairs for replay.
pub fn frame_messages(
    scenario: &Scenario,
    params: &ModelParams,
    cfg: &SchedulerConfig,
    frame_id: u32,
) -> Result<Vec<(String, Vec<u8>)>> {
    let grid = scenario.grid;
    let pipeline = frame_pipeline(scenario, params)?;
    let mut messages = Vec::new();
    let mut utility_msgs = Vec::new();
    for (i, map) in pipeline.utilities.iter().enumerate() {
        let bytes = encode_utility(map, cfg.tau, frame_id)?;
        messages.push((format!("frame{frame_id}_agent{i}_utility.jgsw"), bytes.clone()));
        utility_msgs.push(bytes);
    }
    let decoded: Vec<MetaUtilityMap> = utility_msgs
        .iter()
        .map(|bytes| decode_utility(bytes, &grid).map(|(_, m)| m))
        .collect::<Result<_>>()?;
    let result = schedule(&decoded, entry_cost(grid.channels()), cfg)?;
    if scenario.n_agents() > 1 {
        for agent in 0..scenario.n_agents() {
            let cells = result.mask.agent_cells(agent);
            if cells.is_empty() {
                continue;
            }
            let bytes =
                encode_features(&pipeline.sparse[agent], cells.iter().copied(), frame_id)?;
            messages.push((format!("frame{frame_id}_agent{agent}_features.jgsw"), bytes));
        }
    }
    Ok(messages)
}

/// Comparison mode: every agent broadcasts its full sparsified feature map,
/// no utility exchange and no budget.
pub fn baseline_broadcast(
    scenario: &Scenario,
    params: &ModelParams,
    budget: &CommBudget,
    ego: u16,
    frame_id: u32,
) -> Result<FrameReport> {
    let n = scenario.n_agents();
    if (ego as usize) >= n {
        return Err(Error::invalid(format!("ego agent {ego} outside 0..{n}")));
    }
    let grid = scenario.grid;
    let pipeline = frame_pipeline(scenario, params)?;
    let exchanging = n > 1;

    let mut feature_bytes_per_agent = vec![0u64; n];
    let mut mask = SelectionMask::new(n);
    let mut received: Vec<SparseFeatureMap> = Vec::new();
    let mut admitted_entry_bytes = 0u64;
    for (agent, map) in pipeline.sparse.iter().enumerate() {
        for l in map.cells() {
            mask.select(agent, l);
        }
        if !exchanging || map.is_empty() {
            continue;
        }
        admitted_entry_bytes += map.nonzero_cell_count() as u64 * entry_cost(grid.channels());
        let bytes = encode_features(map, map.cells(), frame_id)?;
        feature_bytes_per_agent[agent] = bytes.len() as u64;
        if agent != ego as usize {
            let (_, decoded) = decode_features(&bytes, &grid)?;
            received.push(decoded);
        }
    }

    let mut fusion_inputs: Vec<&SparseFeatureMap> = vec![&pipeline.sparse[ego as usize]];
    fusion_inputs.extend(received.iter());
    let fused = fuse_max(grid, ego, &fusion_inputs)?;
    let toy_task_loss = ego_task_loss(scenario, &fused, params);

    let total_feature_bytes: u64 = feature_bytes_per_agent.iter().sum();
    Ok(FrameReport {
        frame_id,
        n_agents: n,
        ego,
        budget_bytes: u64::MAX,
        utility_bytes_per_agent: vec![0; n],
        feature_bytes_per_agent,
        total_control_bytes: 0,
        total_feature_bytes,
        total_bytes: total_feature_bytes,
        admitted_entry_bytes,
        selected_cells_per_agent: (0..n).map(|i| mask.agent_cells(i).len()).collect(),
        total_selected_cells: mask.total_selected(),
        frame_utility: frame_utility(&pipeline.utilities, &mask)?,
        control_latency_ms: 0.0,
        data_latency_ms: transmit_latency_ms(total_feature_bytes, budget.bandwidth_bps),
        compute_latency_ms: budget.compute_latency_ms,
        toy_task_loss,
        priorities: Vec::new(),
        mask,
    })
}

/// One (agent count, seed) observation of a scaling sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub n_agents: usize,
    pub seed: u64,
    /// Scheduled-mode data-channel bytes.
    pub bytes_total: u64,
    /// Naive-broadcast data-channel bytes on the same scene.
    pub bytes_baseline: u64,
    pub cells_selected: usize,
    pub frame_utility: f64,
    pub latency_ms: f64,
    pub toy_loss: f64,
}

/// Per-agent-count aggregate over seeds.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub n_agents: usize,
    pub mean_total_bytes: f64,
    pub mean_baseline_bytes: f64,
    pub mean_selected_cells: f64,
    pub mean_frame_utility: f64,
    pub mean_toy_loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub rows: Vec<SweepRow>,
}

/// Scene template for sweeps: the geometry stays fixed while the agent
/// count varies.
#[derive(Debug, Clone, Copy)]
pub struct SweepScene {
    pub grid: crate::grid::GridSpec,
    pub n_objects: usize,
    pub options: crate::scene::SceneOptions,
}

/// Run scheduled and baseline frames over every (agent count, seed) pair on
/// a fixed scene extent.
pub fn scaling_sweep(
    scene: &SweepScene,
    params: &ModelParams,
    cfg: &SchedulerConfig,
    budget: &CommBudget,
    agent_counts: &[usize],
    seeds: &[u64],
) -> Result<SweepResult> {
    let mut points = Vec::with_capacity(agent_counts.len() * seeds.len());
    for &n in agent_counts {
        for &base_seed in seeds {
            let scenario_seed = seed::mix(&[base_seed, n as u64]);
            let scenario = crate::scene::generate_scenario(
                n,
                scene.n_objects,
                scene.grid,
                scenario_seed,
                scene.options,
            )?;
            let scheduled = run_frame(&scenario, params, cfg, budget, 0, 0)?;
            let baseline = baseline_broadcast(&scenario, params, budget, 0, 0)?;
            points.push(SweepPoint {
                n_agents: n,
                seed: base_seed,
                bytes_total: scheduled.total_feature_bytes,
                bytes_baseline: baseline.total_feature_bytes,
                cells_selected: scheduled.total_selected_cells,
                frame_utility: scheduled.frame_utility,
                latency_ms: scheduled.data_latency_ms,
                toy_loss: scheduled.toy_task_loss,
            });
        }
    }
    let rows = agent_counts
        .iter()
        .map(|&n| {
            let group: Vec<&SweepPoint> = points.iter().filter(|p| p.n_agents == n).collect();
            let k = group.len() as f64;
            SweepRow {
                n_agents: n,
                mean_total_bytes: group.iter().map(|p| p.bytes_total as f64).sum::<f64>() / k,
                mean_baseline_bytes: group.iter().map(|p| p.bytes_baseline as f64).sum::<f64>() / k,
                mean_selected_cells: group.iter().map(|p| p.cells_selected as f64).sum::<f64>() / k,
                mean_frame_utility: group.iter().map(|p| p.frame_utility).sum::<f64>() / k,
                mean_toy_loss: group.iter().map(|p| p.toy_loss).sum::<f64>() / k,
            }
        })
        .collect();
    Ok(SweepResult { points, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderParams;
    use crate::grid::GridSpec;
    use crate::scene::{generate_scenario, SceneOptions};
    use crate::sched::TopK;

    fn setup(n_agents: usize, seed: u64) -> (Scenario, ModelParams, SchedulerConfig, CommBudget) {
        let grid = GridSpec::new(12, 12, 4, 1.0).unwrap();
        let opts = SceneOptions {
            sensing_radius: 10.0,
            noise_sigma: 0.0,
            feature_amplitude: 1.0,
        };
        let scenario = generate_scenario(n_agents, 4, grid, seed, opts).unwrap();
        let params = ModelParams::init(4, EncoderParams::new(0.02, 1.0).unwrap(), 0.05, 1);
        let budget = CommBudget::new(20e6, 10.0).unwrap();
        let cfg = SchedulerConfig::new(0.05, budget.budget_bytes(), TopK::One).unwrap();
        (scenario, params, cfg, budget)
    }

    #[test]
    fn budget_from_bandwidth_examples() {
        assert_eq!(budget_from_bandwidth(20e6, 10.0).unwrap(), 250_000);
        assert_eq!(budget_from_bandwidth(20e6, 20.0).unwrap(), 125_000);
        assert_eq!(budget_from_bandwidth(8e6, 1.0).unwrap(), 1_000_000);
        assert!(budget_from_bandwidth(0.0, 10.0).is_err());
        assert!(budget_from_bandwidth(20e6, -1.0).is_err());
    }

    #[test]
    fn latency_arithmetic() {
        // 43.84 KiB at 20 Mbps.
        let bytes = (43.84 * 1024.0) as u64;
        let ms = transmit_latency_ms(bytes, 20e6);
        assert!((17.0..=18.5).contains(&ms), "latency {ms} ms");
    }

    #[test]
    fn frame_is_deterministic_and_consistent() {
        let (scenario, params, cfg, budget) = setup(3, 5);
        let a = run_frame(&scenario, &params, &cfg, &budget, 0, 1).unwrap();
        let b = run_frame(&scenario, &params, &cfg, &budget, 0, 1).unwrap();
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.total_bytes, b.total_bytes);
        assert!(a.mask.is_top1());
        assert!(a.admitted_entry_bytes <= cfg.budget_bytes);
    }

    #[test]
    fn zero_budget_sends_nothing() {
        let (scenario, params, _, budget) = setup(3, 5);
        let cfg = SchedulerConfig::new(0.05, 0, TopK::One).unwrap();
        let report = run_frame(&scenario, &params, &cfg, &budget, 0, 0).unwrap();
        assert_eq!(report.total_feature_bytes, 0);
        assert_eq!(report.total_selected_cells, 0);
        // Control maps still travel.
        assert!(report.total_control_bytes > 0);
    }

    #[test]
    fn single_agent_exchanges_nothing() {
        let (scenario, params, cfg, budget) = setup(1, 5);
        let report = run_frame(&scenario, &params, &cfg, &budget, 0, 0).unwrap();
        assert_eq!(report.total_feature_bytes, 0);
        assert_eq!(report.total_control_bytes, 0);
        let base = baseline_broadcast(&scenario, &params, &budget, 0, 0).unwrap();
        assert_eq!(base.total_feature_bytes, 0);
    }

    #[test]
    fn scheduled_never_exceeds_baseline() {
        for seed in 0..20u64 {
            let (scenario, params, cfg, budget) = setup(4, seed);
            let scheduled = run_frame(&scenario, &params, &cfg, &budget, 0, 0).unwrap();
            let baseline = baseline_broadcast(&scenario, &params, &budget, 0, 0).unwrap();
            assert!(
                scheduled.total_feature_bytes <= baseline.total_feature_bytes,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn identical_views_halve_traffic() {
        let (mut scenario, params, cfg, budget) = setup(2, 5);
        // Same pose, same radius, no noise: indistinguishable views.
        scenario.agents[1].x = scenario.agents[0].x;
        scenario.agents[1].y = scenario.agents[0].y;
        let scheduled = run_frame(&scenario, &params, &cfg, &budget, 0, 0).unwrap();
        let baseline = baseline_broadcast(&scenario, &params, &budget, 0, 0).unwrap();
        assert!(scheduled.total_feature_bytes > 0);
        assert!(
            2 * scheduled.total_feature_bytes == baseline.total_feature_bytes,
            "scheduled {} baseline {}",
            scheduled.total_feature_bytes,
            baseline.total_feature_bytes
        );
        assert!(scheduled.mask.is_top1());
        // The tie-break sends everything from agent 0.
        assert_eq!(scheduled.feature_bytes_per_agent[1], 0);
    }

    #[test]
    fn ego_fuses_own_features_for_free() {
        let (scenario, params, _, budget) = setup(2, 7);
        let cfg = SchedulerConfig::new(0.05, 0, TopK::One).unwrap();
        let report = run_frame(&scenario, &params, &cfg, &budget, 0, 0).unwrap();
        // With nothing received the loss still reflects the ego's own view,
        // which beats an empty fusion only through the decoder; here we
        // just check it is finite and present.
        assert!(report.toy_task_loss.is_finite());
    }

    #[test]
    fn lone_agent_sweep_reports_zero_exchange() {
        let scene = SweepScene {
            grid: GridSpec::new(8, 8, 4, 1.0).unwrap(),
            n_objects: 2,
            options: SceneOptions::default(),
        };
        let params = ModelParams::init(4, EncoderParams::new(0.02, 1.0).unwrap(), 0.05, 1);
        let budget = CommBudget::new(20e6, 10.0).unwrap();
        let cfg = SchedulerConfig::new(0.05, budget.budget_bytes(), TopK::One).unwrap();
        let result = scaling_sweep(&scene, &params, &cfg, &budget, &[1], &[1, 2, 3, 4]).unwrap();
        for p in &result.points {
            assert_eq!(p.bytes_total, 0);
            assert_eq!(p.bytes_baseline, 0);
        }
    }

    #[test]
    fn empty_feature_maps_cost_nothing_in_both_modes() {
        let (scenario, mut params, cfg, budget) = setup(3, 9);
        params.enc.kappa = 1e9; // sparsify removes every component
        let scheduled = run_frame(&scenario, &params, &cfg, &budget, 0, 0).unwrap();
        let baseline = baseline_broadcast(&scenario, &params, &budget, 0, 0).unwrap();
        assert_eq!(scheduled.total_feature_bytes, 0);
        assert_eq!(baseline.total_feature_bytes, 0);
        assert_eq!(scheduled.total_selected_cells, 0);
    }

    #[test]
    fn sweep_shape_and_coverage_bound() {
        let scene = SweepScene {
            grid: GridSpec::new(12, 12, 4, 1.0).unwrap(),
            n_objects: 4,
            options: SceneOptions {
                sensing_radius: 12.0,
                noise_sigma: 0.0,
                feature_amplitude: 1.0,
            },
        };
        let params = ModelParams::init(4, EncoderParams::new(0.02, 1.0).unwrap(), 0.05, 1);
        let budget = CommBudget::new(20e6, 10.0).unwrap();
        let cfg = SchedulerConfig::new(0.05, budget.budget_bytes(), TopK::One).unwrap();
        let result =
            scaling_sweep(&scene, &params, &cfg, &budget, &[2, 4], &[1, 2, 3]).unwrap();
        assert_eq!(result.points.len(), 6);
        assert_eq!(result.rows.len(), 2);
        let cells = scene.grid.num_cells() as usize;
        for p in &result.points {
            assert!(p.cells_selected <= cells);
            assert!(p.bytes_total <= p.bytes_baseline);
        }
    }
}
