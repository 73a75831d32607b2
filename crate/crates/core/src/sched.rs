//! Deterministic transmission scheduling.
//!
//! The per-cell value of a selection is the sum of selected utilities minus
//! half the pairwise min-overlap of every selected pair, so picking the
//! single best agent per cell is optimal (see [`oracle_cell_best`] for the
//! exhaustive check). The inference policy is: threshold at `tau`, keep the
//! top-1 agent per cell (ties to the lowest agent id), then greedily admit
//! candidates by utility-to-cost ratio until the byte budget is exhausted.
//! Under uniform costs the greedy prefix is exactly optimal
//! ([`oracle_knapsack`] is the exact DP cross-check).
//!
//! Every function here is pure: identical inputs give bit-identical
//! outputs on every agent, which is what makes decentralized operation
//! possible.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::MetaUtilityMap;

/// Per-agent sets of selected cell indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMask {
    selected: Vec<BTreeSet<u32>>,
}

impl SelectionMask {
    pub fn new(n_agents: usize) -> Self {
        SelectionMask {
            selected: vec![BTreeSet::new(); n_agents],
        }
    }

    pub fn n_agents(&self) -> usize {
        self.selected.len()
    }

    pub fn select(&mut self, agent: usize, cell: u32) {
        self.selected[agent].insert(cell);
    }

    pub fn is_selected(&self, agent: usize, cell: u32) -> bool {
        self.selected
            .get(agent)
            .is_some_and(|cells| cells.contains(&cell))
    }

    /// Cells selected for one agent, in increasing order.
    pub fn agent_cells(&self, agent: usize) -> &BTreeSet<u32> {
        &self.selected[agent]
    }

    pub fn total_selected(&self) -> usize {
        self.selected.iter().map(BTreeSet::len).sum()
    }

    /// All selected `(agent, cell)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.selected
            .iter()
            .enumerate()
            .flat_map(|(i, cells)| cells.iter().map(move |&l| (i, l)))
    }

    /// Union of selected cells across agents.
    pub fn selected_cells(&self) -> BTreeSet<u32> {
        self.selected.iter().flatten().copied().collect()
    }

    /// Cells selected by more than one agent (empty in top-1 form).
    pub fn duplicated_cells(&self) -> Vec<u32> {
        let mut seen = BTreeSet::new();
        let mut dup = BTreeSet::new();
        for cells in &self.selected {
            for &l in cells {
                if !seen.insert(l) {
                    dup.insert(l);
                }
            }
        }
        dup.into_iter().collect()
    }

    /// True when every cell is selected by at most one agent.
    pub fn is_top1(&self) -> bool {
        self.duplicated_cells().is_empty()
    }
}

/// One transmission candidate: an (agent, cell) pair with its utility and
/// byte cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub agent: u16,
    pub cell: u32,
    pub utility: f64,
    pub cost: u64,
}

impl Candidate {
    pub fn new(agent: u16, cell: u32, utility: f64, cost: u64) -> Result<Self> {
        if cost == 0 {
            return Err(Error::invalid(format!(
                "candidate (agent {agent}, cell {cell}) has zero cost"
            )));
        }
        if !utility.is_finite() || utility < 0.0 {
            return Err(Error::invalid(format!(
                "candidate (agent {agent}, cell {cell}) has invalid utility {utility}"
            )));
        }
        Ok(Candidate {
            agent,
            cell,
            utility,
            cost,
        })
    }

    /// Utility-to-cost ratio; finite because cost is positive.
    pub fn ratio(&self) -> f64 {
        self.utility / self.cost as f64
    }
}

/// How many agents may be selected per cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TopK {
    One,
    /// Redundancy ablation switch: keep the two highest utilities per cell.
    Two,
}

impl TryFrom<u8> for TopK {
    type Error = Error;

    fn try_from(k: u8) -> Result<Self> {
        match k {
            1 => Ok(TopK::One),
            2 => Ok(TopK::Two),
            other => Err(Error::invalid(format!("top_k must be 1 or 2 (got {other})"))),
        }
    }
}

/// Scheduler settings. Argmax ties always break to the lowest agent id so
/// that every agent reaches the same decision without coordination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    /// Utility threshold.
    pub tau: f64,
    /// Data-channel byte budget per frame.
    pub budget_bytes: u64,
    pub top_k: TopK,
}

impl SchedulerConfig {
    pub fn new(tau: f64, budget_bytes: u64, top_k: TopK) -> Result<Self> {
        if tau.is_nan() || tau < 0.0 {
            return Err(Error::invalid(format!(
                "tau must be non-negative (got {tau})"
            )));
        }
        Ok(SchedulerConfig {
            tau,
            budget_bytes,
            top_k,
        })
    }
}

/// Value of one cell under a selection: selected utilities minus half the
/// pairwise min-overlap of every ordered selected pair.
pub fn cell_utility(utilities: &[f64], selected: &[bool]) -> Result<f64> {
    if utilities.len() != selected.len() {
        return Err(Error::Dimension {
            expected: utilities.len(),
            got: selected.len(),
        });
    }
    for &u in utilities {
        if !u.is_finite() || u < 0.0 {
            return Err(Error::invalid(format!("utilities must be non-negative (got {u})")));
        }
    }
    let mut total = 0.0;
    for (i, (&u, &m)) in utilities.iter().zip(selected).enumerate() {
        if !m {
            continue;
        }
        total += u;
        for (j, (&v, &mj)) in utilities.iter().zip(selected).enumerate() {
            if j > i && mj {
                total -= u.min(v);
            }
        }
    }
    Ok(total)
}

/// Sum of [`cell_utility`] over every cell of the frame.
pub fn frame_utility(utilities: &[MetaUtilityMap], mask: &SelectionMask) -> Result<f64> {
    if utilities.len() != mask.n_agents() {
        return Err(Error::Dimension {
            expected: utilities.len(),
            got: mask.n_agents(),
        });
    }
    check_shared_grid(utilities)?;
    // Unselected cells contribute zero, so only visit selected ones.
    let mut total = 0.0;
    for l in mask.selected_cells() {
        let us: Vec<f64> = (0..utilities.len())
            .filter(|&i| mask.is_selected(i, l))
            .map(|i| utilities[i].utility(l))
            .collect();
        let all = vec![true; us.len()];
        total += cell_utility(&us, &all)?;
    }
    Ok(total)
}

fn check_shared_grid(utilities: &[MetaUtilityMap]) -> Result<()> {
    if let Some(first) = utilities.first() {
        for u in utilities {
            if u.grid != first.grid {
                return Err(Error::GridMismatch(format!(
                    "utility map for agent {} has a different grid",
                    u.agent_id
                )));
            }
        }
    }
    Ok(())
}

/// Per cell, the agents with the `k` highest utilities at or above `tau`,
/// ties to the lowest agent id. Cells absent from every map are never
/// selected.
fn topk_mask_impl(utilities: &[MetaUtilityMap], tau: f64, k: usize) -> Result<SelectionMask> {
    check_shared_grid(utilities)?;
    let mut cells = BTreeSet::new();
    for map in utilities {
        cells.extend(map.cells());
    }
    let mut mask = SelectionMask::new(utilities.len());
    for l in cells {
        let mut ranked: Vec<(usize, f64)> = utilities
            .iter()
            .enumerate()
            .filter_map(|(i, map)| map.get(l).map(|u| (i, u)))
            .filter(|&(_, u)| u >= tau)
            .collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        for &(agent, _) in ranked.iter().take(k) {
            mask.select(agent, l);
        }
    }
    Ok(mask)
}

/// The inference-time per-cell policy: select the single highest-utility
/// agent per cell when that utility is at least `tau`.
pub fn top1_mask(utilities: &[MetaUtilityMap], tau: f64) -> Result<SelectionMask> {
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::invalid(format!("tau must be non-negative (got {tau})")));
    }
    topk_mask_impl(utilities, tau, 1)
}

/// A candidate with its final priority-order position and admission flag:
/// the byproduct exposed to lower transport layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub agent: u16,
    pub cell: u32,
    pub utility: f64,
    pub cost: u64,
    pub ratio: f64,
    pub admitted: bool,
}

/// Scheduler output: the admitted mask plus the full priority ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleResult {
    pub mask: SelectionMask,
    /// All candidates sorted by descending priority.
    pub ranked: Vec<RankedCandidate>,
}

impl ScheduleResult {
    /// Total cost of the admitted candidates.
    pub fn admitted_cost(&self) -> u64 {
        self.ranked
            .iter()
            .filter(|r| r.admitted)
            .map(|r| r.cost)
            .sum()
    }

    pub fn admitted_count(&self) -> usize {
        self.ranked.iter().filter(|r| r.admitted).count()
    }

    pub fn admitted_utility(&self) -> f64 {
        self.ranked
            .iter()
            .filter(|r| r.admitted)
            .map(|r| r.utility)
            .sum()
    }
}

fn priority_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.ratio()
        .partial_cmp(&a.ratio())
        .unwrap_or(Ordering::Equal)
        .then(
            b.utility
                .partial_cmp(&a.utility)
                .unwrap_or(Ordering::Equal),
        )
        .then(a.cell.cmp(&b.cell))
        .then(a.agent.cmp(&b.agent))
}

/// Sort candidates by utility-to-cost ratio and admit the longest prefix
/// whose cumulative cost fits the budget. Admission stops at the first
/// candidate that would overflow; there is no skip-and-continue.
pub fn greedy_admit(
    candidates: &[Candidate],
    budget_bytes: u64,
    n_agents: usize,
) -> Result<ScheduleResult> {
    for c in candidates {
        if c.cost == 0 {
            return Err(Error::invalid(format!(
                "candidate (agent {}, cell {}) has zero cost",
                c.agent, c.cell
            )));
        }
        if c.agent as usize >= n_agents {
            return Err(Error::invalid(format!(
                "candidate agent {} outside 0..{n_agents}",
                c.agent
            )));
        }
    }
    let mut order: Vec<&Candidate> = candidates.iter().collect();
    order.sort_by(|a, b| priority_order(a, b));

    let mut mask = SelectionMask::new(n_agents);
    let mut ranked = Vec::with_capacity(order.len());
    let mut spent = 0u64;
    let mut open = true;
    for c in order {
        let admitted = open
            && spent
                .checked_add(c.cost)
                .is_some_and(|total| total <= budget_bytes);
        if admitted {
            spent += c.cost;
            mask.select(c.agent as usize, c.cell);
        } else {
            open = false;
        }
        ranked.push(RankedCandidate {
            agent: c.agent,
            cell: c.cell,
            utility: c.utility,
            cost: c.cost,
            ratio: c.ratio(),
            admitted,
        });
    }
    Ok(ScheduleResult { mask, ranked })
}

/// Full policy: per-cell top-k thresholded selection followed by greedy
/// budget admission with a uniform per-entry cost.
pub fn schedule(
    utilities: &[MetaUtilityMap],
    cost_per_entry: u64,
    cfg: &SchedulerConfig,
) -> Result<ScheduleResult> {
    if cfg.tau.is_nan() || cfg.tau < 0.0 {
        return Err(Error::invalid(format!(
            "tau must be non-negative (got {})",
            cfg.tau
        )));
    }
    let k = match cfg.top_k {
        TopK::One => 1,
        TopK::Two => 2,
    };
    let pre_mask = topk_mask_impl(utilities, cfg.tau, k)?;
    let mut candidates = Vec::with_capacity(pre_mask.total_selected());
    for (agent, cell) in pre_mask.iter() {
        let utility = utilities[agent].utility(cell);
        candidates.push(Candidate::new(agent as u16, cell, utility, cost_per_entry)?);
    }
    greedy_admit(&candidates, cfg.budget_bytes, utilities.len())
}

/// Exhaustive per-cell oracle: enumerate all 2^N agent subsets and return
/// the best cell value with one subset attaining it.
pub fn oracle_cell_best(utilities: &[f64]) -> Result<(f64, Vec<usize>)> {
    let n = utilities.len();
    if n > 20 {
        return Err(Error::capacity(format!(
            "subset enumeration limited to 20 agents (got {n})"
        )));
    }
    for &u in utilities {
        if !u.is_finite() || u < 0.0 {
            return Err(Error::invalid(format!("utilities must be non-negative (got {u})")));
        }
    }
    let mut best = 0.0f64;
    let mut best_subset: Vec<usize> = Vec::new();
    for bits in 0u32..(1u32 << n) {
        let selected: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
        let value = cell_utility(utilities, &selected)?;
        if value > best {
            best = value;
            best_subset = (0..n).filter(|&i| selected[i]).collect();
        }
    }
    Ok((best, best_subset))
}

/// Exact 0/1 knapsack over integer byte costs by dynamic programming.
/// Limited to one million DP cells.
pub fn oracle_knapsack(candidates: &[Candidate], budget_bytes: u64) -> Result<(f64, Vec<usize>)> {
    let n = candidates.len();
    let capacity = budget_bytes as usize;
    let dp_cells = (n + 1).saturating_mul(capacity + 1);
    if dp_cells > 1_000_000 {
        return Err(Error::capacity(format!(
            "knapsack DP would need {dp_cells} cells (limit 1,000,000)"
        )));
    }
    for c in candidates {
        if c.cost == 0 {
            return Err(Error::invalid(format!(
                "candidate (agent {}, cell {}) has zero cost",
                c.agent, c.cell
            )));
        }
    }
    // dp[i][b]: best value using the first i candidates within budget b.
    let width = capacity + 1;
    let mut dp = vec![0.0f64; (n + 1) * width];
    for i in 1..=n {
        let cost = candidates[i - 1].cost as usize;
        let value = candidates[i - 1].utility;
        for b in 0..width {
            let skip = dp[(i - 1) * width + b];
            dp[i * width + b] = if cost <= b {
                skip.max(dp[(i - 1) * width + b - cost] + value)
            } else {
                skip
            };
        }
    }
    // Backtrack one optimal subset.
    let mut chosen = Vec::new();
    let mut b = capacity;
    for i in (1..=n).rev() {
        if dp[i * width + b] != dp[(i - 1) * width + b] {
            chosen.push(i - 1);
            b -= candidates[i - 1].cost as usize;
        }
    }
    chosen.reverse();
    Ok((dp[n * width + capacity], chosen))
}
