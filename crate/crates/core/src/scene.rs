//! Seeded synthetic multi-agent scenes.
//!
//! Stands in for a real sensor-plus-encoder front end: agents get poses and
//! circular sensing ranges, objects occupy cell footprints, and per-agent
//! visibility fields model distance falloff plus ray-cast occlusion. Feature
//! vectors are generated from two fixed orthogonal signatures (occupied /
//! empty) scaled by visibility, with optional per-cell Gaussian noise.
//!
//! Everything here is a pure function of (inputs, seed). Agent placements
//! are drawn sequentially from a dedicated stream, so scenarios that differ
//! only in agent count share a common prefix of poses — adding agents never
//! moves or removes existing coverage.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, SparseFeatureMap};
use crate::seed;

const STREAM_AGENTS: u64 = 0xA6E7;
const STREAM_OBJECTS: u64 = 0x0B7E;
const STREAM_NOISE: u64 = 0x701E;

/// Visibility multiplier applied behind each occluding object on a ray.
pub const OCCLUSION_FACTOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub agent_id: u16,
    /// Position in meters, x along columns, y along rows.
    pub x: f64,
    pub y: f64,
    pub sensing_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectBox {
    /// Center in meters.
    pub center: (f64, f64),
    /// Covered cell indices; non-empty, all valid.
    pub footprint: BTreeSet<u32>,
}

/// A complete synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub grid: GridSpec,
    pub agents: Vec<AgentPose>,
    pub objects: Vec<ObjectBox>,
    pub seed: u64,
    /// Gaussian feature noise level.
    pub noise_sigma: f64,
    /// Scale of the occupied/empty signature vectors.
    pub feature_amplitude: f64,
}

impl Scenario {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// Per-cell ground-truth occupancy.
    pub fn occupancy(&self) -> Vec<bool> {
        let mut occ = vec![false; self.grid.num_cells() as usize];
        for obj in &self.objects {
            for &l in &obj.footprint {
                occ[l as usize] = true;
            }
        }
        occ
    }
}

/// Generation knobs beyond entity counts.
#[derive(Debug, Clone, Copy)]
pub struct SceneOptions {
    pub sensing_radius: f64,
    pub noise_sigma: f64,
    pub feature_amplitude: f64,
}

impl Default for SceneOptions {
    fn default() -> Self {
        SceneOptions {
            sensing_radius: 20.0,
            noise_sigma: 0.0,
            feature_amplitude: 1.0,
        }
    }
}

/// Deterministically generate a scenario with `n_agents` agents on distinct
/// cells and `n_objects` small rectangular objects inside the grid.
pub fn generate_scenario(
    n_agents: usize,
    n_objects: usize,
    grid: GridSpec,
    seed: u64,
    opts: SceneOptions,
) -> Result<Scenario> {
    if n_agents == 0 {
        return Err(Error::invalid("a scenario needs at least one agent"));
    }
    if opts.sensing_radius.is_nan() || opts.sensing_radius <= 0.0 {
        return Err(Error::invalid(format!(
            "sensing_radius must be positive (got {})",
            opts.sensing_radius
        )));
    }
    if opts.noise_sigma < 0.0 {
        return Err(Error::invalid(format!(
            "noise sigma must be non-negative (got {})",
            opts.noise_sigma
        )));
    }
    let cells = grid.num_cells() as usize;
    if n_agents > cells {
        return Err(Error::capacity(format!(
            "cannot place {n_agents} agents on {cells} cells without overlap"
        )));
    }

    let mut agents_rng = seed::rng(&[seed, STREAM_AGENTS]);
    let mut taken = BTreeSet::new();
    let mut agents = Vec::with_capacity(n_agents);
    for agent_id in 0..n_agents {
        // Rejection-sample a free cell; the density guard above bounds the
        // expected number of attempts, the hard cap keeps this total.
        let mut attempts = 0usize;
        let cell = loop {
            let row = agents_rng.random_range(0..grid.h as u32) as u16;
            let col = agents_rng.random_range(0..grid.w as u32) as u16;
            let l = grid.cell_index(row, col)?;
            if taken.insert(l) {
                break l;
            }
            attempts += 1;
            if attempts > 64 * cells {
                return Err(Error::capacity(format!(
                    "could not place agent {agent_id} on a free cell"
                )));
            }
        };
        let (x, y) = grid.cell_center(cell)?;
        agents.push(AgentPose {
            agent_id: agent_id as u16,
            x,
            y,
            sensing_radius: opts.sensing_radius,
        });
    }

    let mut objects_rng = seed::rng(&[seed, STREAM_OBJECTS]);
    let mut objects = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let row = objects_rng.random_range(0..grid.h as u32) as i64;
        let col = objects_rng.random_range(0..grid.w as u32) as i64;
        let half_h = objects_rng.random_range(0..2i64);
        let half_w = objects_rng.random_range(0..2i64);
        let mut footprint = BTreeSet::new();
        for r in (row - half_h).max(0)..=(row + half_h).min(grid.h as i64 - 1) {
            for c in (col - half_w).max(0)..=(col + half_w).min(grid.w as i64 - 1) {
                footprint.insert(grid.cell_index(r as u16, c as u16)?);
            }
        }
        let center_cell = grid.cell_index(row as u16, col as u16)?;
        objects.push(ObjectBox {
            center: grid.cell_center(center_cell)?,
            footprint,
        });
    }

    Ok(Scenario {
        grid,
        agents,
        objects,
        seed,
        noise_sigma: opts.noise_sigma,
        feature_amplitude: opts.feature_amplitude,
    })
}

/// Per-agent visibility scores in (0, 1]; cells with zero visibility are
/// absent.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityField {
    pub agent_id: u16,
    entries: BTreeMap<u32, f64>,
}

impl VisibilityField {
    pub fn visibility(&self, l: u32) -> f64 {
        self.entries.get(&l).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.entries.iter().map(|(&l, &v)| (l, v))
    }

    pub fn visible_cells(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Map from cell index to the objects covering it.
fn object_cover(scenario: &Scenario) -> Vec<Vec<u16>> {
    let mut cover = vec![Vec::new(); scenario.grid.num_cells() as usize];
    for (obj_id, obj) in scenario.objects.iter().enumerate() {
        for &l in &obj.footprint {
            cover[l as usize].push(obj_id as u16);
        }
    }
    cover
}

/// Distinct objects crossed by the open segment from `(ax, ay)` to the
/// target cell center, excluding the agent's own cell and the target cell.
fn occluders(
    grid: &GridSpec,
    cover: &[Vec<u16>],
    ax: f64,
    ay: f64,
    agent_cell: u32,
    target: u32,
) -> usize {
    let (tx, ty) = grid.cell_center(target).expect("valid cell");
    let dx = tx - ax;
    let dy = ty - ay;
    let dist = (dx * dx + dy * dy).sqrt();
    if dist == 0.0 {
        return 0;
    }
    let step = grid.cell_size / 4.0;
    let n_steps = (dist / step).ceil() as usize;
    let mut hit = BTreeSet::new();
    for k in 1..n_steps {
        let t = k as f64 / n_steps as f64;
        let x = ax + dx * t;
        let y = ay + dy * t;
        let Some(cell) = grid.cell_at(x, y) else {
            continue;
        };
        if cell == target || cell == agent_cell {
            continue;
        }
        for &obj in &cover[cell as usize] {
            hit.insert(obj);
        }
    }
    hit.len()
}

/// Per agent: visibility 1 at its own cell, linear falloff with distance,
/// zero at and beyond the sensing radius, attenuated by
/// [`OCCLUSION_FACTOR`] behind each distinct occluding object.
pub fn compute_visibility(scenario: &Scenario) -> Vec<VisibilityField> {
    let grid = &scenario.grid;
    let cover = object_cover(scenario);
    scenario
        .agents
        .iter()
        .map(|agent| {
            let mut entries = BTreeMap::new();
            // An out-of-grid pose gets no own-cell exclusion but still
            // sees by distance.
            let agent_cell = grid.cell_at(agent.x, agent.y).unwrap_or(u32::MAX);
            for l in 0..grid.num_cells() {
                let (cx, cy) = grid.cell_center(l).expect("valid cell");
                let dx = cx - agent.x;
                let dy = cy - agent.y;
                let dist = (dx * dx + dy * dy).sqrt();
                let falloff = (1.0 - dist / agent.sensing_radius).clamp(0.0, 1.0);
                if falloff <= 0.0 {
                    continue;
                }
                let k = occluders(grid, &cover, agent.x, agent.y, agent_cell, l);
                let vis = falloff * OCCLUSION_FACTOR.powi(k as i32);
                if vis > 0.0 {
                    entries.insert(l, vis);
                }
            }
            VisibilityField {
                agent_id: agent.agent_id,
                entries,
            }
        })
        .collect()
}

/// The two fixed orthogonal unit signatures, scaled by `amplitude`:
/// occupied cells use even channels, empty cells odd channels.
pub fn signature(c: usize, occupied: bool, amplitude: f64) -> Vec<f64> {
    let count = if occupied { c.div_ceil(2) } else { c / 2 };
    let mut v = vec![0.0; c];
    if count == 0 {
        return v;
    }
    let value = amplitude / (count as f64).sqrt();
    let start = if occupied { 0 } else { 1 };
    for j in (start..c).step_by(2) {
        v[j] = value;
    }
    v
}

/// Generate agent `agent_id`'s feature map: `visibility * signature + noise`
/// on visible cells, nothing elsewhere. Noise is seeded per
/// (scenario seed, agent, cell).
pub fn synth_features(
    scenario: &Scenario,
    visibility: &VisibilityField,
    agent_id: u16,
) -> Result<SparseFeatureMap> {
    if visibility.agent_id != agent_id {
        return Err(Error::invalid(format!(
            "visibility field belongs to agent {}, not {agent_id}",
            visibility.agent_id
        )));
    }
    let grid = scenario.grid;
    let c = grid.channels();
    let occupancy = scenario.occupancy();
    let sig_occupied = signature(c, true, scenario.feature_amplitude);
    let sig_empty = signature(c, false, scenario.feature_amplitude);
    let mut map = SparseFeatureMap::new(grid, agent_id);
    for (l, vis) in visibility.iter() {
        let sig = if occupancy[l as usize] {
            &sig_occupied
        } else {
            &sig_empty
        };
        let mut v: Vec<f64> = sig.iter().map(|&s| vis * s).collect();
        if scenario.noise_sigma > 0.0 {
            let mut rng = seed::rng(&[scenario.seed, STREAM_NOISE, agent_id as u64, l as u64]);
            let normal = Normal::new(0.0, scenario.noise_sigma)
                .map_err(|e| Error::invalid(format!("bad noise sigma: {e}")))?;
            for x in v.iter_mut() {
                *x += normal.sample(&mut rng);
            }
        }
        map.insert(l, v)?;
    }
    Ok(map)
}

/// Convenience: visibility and features for every agent.
pub fn synth_all_features(scenario: &Scenario) -> Result<Vec<SparseFeatureMap>> {
    compute_visibility(scenario)
        .iter()
        .map(|field| synth_features(scenario, field, field.agent_id))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(16, 16, 4, 1.0).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scenario(5, 3, grid(), 7, SceneOptions::default()).unwrap();
        let b = generate_scenario(5, 3, grid(), 7, SceneOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_agent_no_objects() {
        let s = generate_scenario(1, 0, grid(), 7, SceneOptions::default()).unwrap();
        assert_eq!(s.agents.len(), 1);
        assert!(s.objects.is_empty());
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_scenario(5, 0, grid(), 7, SceneOptions::default()).unwrap();
        let b = generate_scenario(5, 0, grid(), 8, SceneOptions::default()).unwrap();
        let pos = |s: &Scenario| -> Vec<(u64, u64)> {
            s.agents
                .iter()
                .map(|a| (a.x.to_bits(), a.y.to_bits()))
                .collect()
        };
        assert_ne!(pos(&a), pos(&b));
    }

    #[test]
    fn agents_do_not_overlap() {
        let g = GridSpec::new(4, 4, 2, 1.0).unwrap();
        let s = generate_scenario(16, 0, g, 3, SceneOptions::default()).unwrap();
        let cells: BTreeSet<u32> = s
            .agents
            .iter()
            .map(|a| g.cell_at(a.x, a.y).unwrap())
            .collect();
        assert_eq!(cells.len(), 16);
        assert!(generate_scenario(17, 0, g, 3, SceneOptions::default()).is_err());
    }

    #[test]
    fn agent_prefix_is_nested() {
        let small = generate_scenario(3, 4, grid(), 11, SceneOptions::default()).unwrap();
        let large = generate_scenario(8, 4, grid(), 11, SceneOptions::default()).unwrap();
        assert_eq!(&large.agents[..3], &small.agents[..]);
        assert_eq!(large.objects, small.objects);
    }

    #[test]
    fn visibility_at_own_cell_is_one() {
        let s = generate_scenario(2, 0, grid(), 5, SceneOptions::default()).unwrap();
        let vis = compute_visibility(&s);
        for (agent, field) in s.agents.iter().zip(&vis) {
            let own = s.grid.cell_at(agent.x, agent.y).unwrap();
            assert_eq!(field.visibility(own), 1.0);
        }
    }

    #[test]
    fn visibility_zero_beyond_radius() {
        let g = GridSpec::new(1, 32, 2, 1.0).unwrap();
        let mut s = generate_scenario(1, 0, g, 5, SceneOptions::default()).unwrap();
        s.agents[0].x = 0.5;
        s.agents[0].y = 0.5;
        s.agents[0].sensing_radius = 4.0;
        let field = &compute_visibility(&s)[0];
        // Cell centers at 4.5m and beyond are out of range.
        for col in 4..32 {
            assert_eq!(field.visibility(col), 0.0, "col {col}");
        }
        assert!(field.visibility(3) > 0.0);
    }

    #[test]
    fn occlusion_attenuates_by_factor() {
        let g = GridSpec::new(1, 16, 2, 1.0).unwrap();
        let mut clear = generate_scenario(1, 0, g, 5, SceneOptions::default()).unwrap();
        clear.agents[0].x = 0.5;
        clear.agents[0].y = 0.5;
        clear.agents[0].sensing_radius = 30.0;
        let mut blocked = clear.clone();
        blocked.objects.push(ObjectBox {
            center: g.cell_center(5).unwrap(),
            footprint: BTreeSet::from([5u32]),
        });
        let vis_clear = &compute_visibility(&clear)[0];
        let vis_blocked = &compute_visibility(&blocked)[0];
        // Behind the object: exactly the occlusion factor.
        for col in 6..16 {
            assert_eq!(
                vis_blocked.visibility(col),
                OCCLUSION_FACTOR * vis_clear.visibility(col),
                "col {col}"
            );
        }
        // In front of (and at) the object: unchanged.
        for col in 0..=5 {
            assert_eq!(vis_blocked.visibility(col), vis_clear.visibility(col));
        }
    }

    #[test]
    fn visibility_non_increasing_along_row() {
        let g = GridSpec::new(1, 24, 2, 1.0).unwrap();
        let mut s = generate_scenario(1, 0, g, 9, SceneOptions::default()).unwrap();
        s.agents[0].x = 0.5;
        s.agents[0].y = 0.5;
        s.objects.push(ObjectBox {
            center: g.cell_center(7).unwrap(),
            footprint: BTreeSet::from([7u32]),
        });
        let field = &compute_visibility(&s)[0];
        let mut prev = f64::INFINITY;
        for col in 0..24 {
            let v = field.visibility(col);
            assert!(v <= prev + 1e-12, "col {col}: {v} > {prev}");
            prev = v;
        }
    }

    #[test]
    fn signatures_are_orthogonal_units() {
        for c in [2usize, 3, 4, 64] {
            let occ = signature(c, true, 1.0);
            let emp = signature(c, false, 1.0);
            let dot: f64 = occ.iter().zip(&emp).map(|(a, b)| a * b).sum();
            assert_eq!(dot, 0.0);
            let norm_occ: f64 = occ.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm_occ - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_features_follow_generative_rule() {
        let g = GridSpec::new(8, 8, 4, 1.0).unwrap();
        let mut s = generate_scenario(1, 0, g, 2, SceneOptions::default()).unwrap();
        s.objects.push(ObjectBox {
            center: g.cell_center(10).unwrap(),
            footprint: BTreeSet::from([10u32]),
        });
        let vis = compute_visibility(&s);
        let map = synth_features(&s, &vis[0], 0).unwrap();
        let own = g.cell_at(s.agents[0].x, s.agents[0].y).unwrap();
        // Empty cell at full visibility: exactly the empty signature.
        assert_eq!(map.get(own).unwrap(), signature(4, false, 1.0).as_slice());
        // Occupied cell: visibility times the occupied signature.
        let v10 = vis[0].visibility(10);
        if v10 > 0.0 {
            let expected: Vec<f64> = signature(4, true, 1.0).iter().map(|s| s * v10).collect();
            assert_eq!(map.get(10).unwrap(), expected.as_slice());
        }
        // Cells without visibility are absent.
        for l in 0..g.num_cells() {
            if vis[0].visibility(l) == 0.0 {
                assert!(!map.contains(l));
            }
        }
    }

    #[test]
    fn feature_norm_tracks_visibility_when_noiseless() {
        let s = generate_scenario(2, 2, grid(), 21, SceneOptions::default()).unwrap();
        let vis = compute_visibility(&s);
        let map = synth_features(&s, &vis[1], 1).unwrap();
        for (l, v) in map.iter() {
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - vis[1].visibility(l)).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_is_seeded_per_agent_and_cell() {
        let opts = SceneOptions {
            noise_sigma: 0.3,
            ..SceneOptions::default()
        };
        let s = generate_scenario(2, 1, grid(), 33, opts).unwrap();
        let vis = compute_visibility(&s);
        let a1 = synth_features(&s, &vis[0], 0).unwrap();
        let a2 = synth_features(&s, &vis[0], 0).unwrap();
        assert_eq!(a1, a2);
        let b = synth_features(&s, &vis[1], 1).unwrap();
        // Shared cells must differ between agents (independent noise).
        let shared: Vec<u32> = a1.cells().filter(|&l| b.contains(l)).collect();
        assert!(shared.iter().any(|&l| a1.get(l) != b.get(l)));
    }

    #[test]
    fn wrong_visibility_owner_rejected() {
        let s = generate_scenario(2, 0, grid(), 5, SceneOptions::default()).unwrap();
        let vis = compute_visibility(&s);
        assert!(synth_features(&s, &vis[0], 1).is_err());
    }

    #[test]
    fn coverage_monotone_in_agent_count() {
        let union = |s: &Scenario| -> BTreeSet<u32> {
            compute_visibility(s)
                .iter()
                .flat_map(|f| f.visible_cells().collect::<Vec<_>>())
                .collect()
        };
        let mut prev = BTreeSet::new();
        for n in [1usize, 2, 4, 7] {
            let s = generate_scenario(n, 2, grid(), 13, SceneOptions::default()).unwrap();
            let u = union(&s);
            assert!(prev.is_subset(&u), "coverage shrank at n={n}");
            prev = u;
        }
    }
}
