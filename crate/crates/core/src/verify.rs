//! Randomized optimality and consistency checks.
//!
//! These are the machine-checkable counterparts of the scheduler's
//! guarantees: per-cell singleton optimality against exhaustive subset
//! enumeration, greedy-equals-DP under uniform costs, and pointwise
//! convergence of the relaxed mask to the deterministic policy as the
//! temperatures anneal. Utilities are drawn from a dyadic lattice so that
//! every sum is exact in f64 and the equality checks are meaningful.

use rand::Rng;

use crate::error::Result;
use crate::grid::{GridSpec, MetaUtilityMap};
use crate::relax::ste_cell;
use crate::sched::{
    greedy_admit, oracle_cell_best, oracle_knapsack, schedule, Candidate, SchedulerConfig, TopK,
};
use crate::seed;

/// Outcome of one check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub trials: usize,
    pub passed: bool,
    pub detail: String,
    /// Populated on failure with the first offending instance.
    pub counterexample: Option<String>,
}

impl CheckReport {
    fn pass(name: &'static str, trials: usize, detail: String) -> Self {
        CheckReport {
            name,
            trials,
            passed: true,
            detail,
            counterexample: None,
        }
    }

    fn fail(name: &'static str, trials: usize, detail: String, example: String) -> Self {
        CheckReport {
            name,
            trials,
            passed: false,
            detail,
            counterexample: Some(example),
        }
    }
}

/// Draw from the dyadic lattice {0, 1/4096, ..., 10} so subset sums stay
/// exact in f64.
fn dyadic_utility<R: Rng>(rng: &mut R) -> f64 {
    rng.random_range(0u32..=40_960) as f64 / 4096.0
}

/// Per-cell singleton optimality: the exhaustive oracle over all agent
/// subsets must equal the best single utility, attained by a singleton, in
/// every trial.
pub fn check_singleton_optimality(trials: usize, seed_key: u64) -> Result<CheckReport> {
    const NAME: &str = "theorem_singleton_optimality";
    let mut rng = seed::rng(&[seed_key, 0x51]);
    for trial in 0..trials {
        let n = rng.random_range(2..=8);
        let us: Vec<f64> = (0..n).map(|_| dyadic_utility(&mut rng)).collect();
        let (best, subset) = oracle_cell_best(&us)?;
        let max = us.iter().cloned().fold(0.0f64, f64::max);
        if best != max || subset.len() > 1 {
            return Ok(CheckReport::fail(
                NAME,
                trials,
                format!("failed at trial {trial}"),
                format!("utilities {us:?}: oracle best {best} via subset {subset:?}, expected {max}"),
            ));
        }
    }
    Ok(CheckReport::pass(
        NAME,
        trials,
        format!("oracle optimum equals max utility and a singleton attains it in all {trials} trials"),
    ))
}

/// Greedy admission equals the exact knapsack optimum under uniform costs,
/// bit for bit.
pub fn check_greedy_optimality(instances: usize, seed_key: u64) -> Result<CheckReport> {
    const NAME: &str = "theorem_greedy_equal_cost";
    let mut rng = seed::rng(&[seed_key, 0x52]);
    for trial in 0..instances {
        let n = rng.random_range(1..=30);
        let cost = rng.random_range(1u64..=100);
        let candidates: Vec<Candidate> = (0..n)
            .map(|i| Candidate::new(0, i as u32, dyadic_utility(&mut rng), cost))
            .collect::<Result<_>>()?;
        let budget = rng.random_range(0..=cost * (n as u64 + 1));
        let greedy = greedy_admit(&candidates, budget, 1)?;
        let greedy_value = greedy.admitted_utility();
        let (dp_value, _) = oracle_knapsack(&candidates, budget)?;
        if greedy_value != dp_value {
            return Ok(CheckReport::fail(
                NAME,
                instances,
                format!("failed at instance {trial}"),
                format!(
                    "n={n} cost={cost} budget={budget}: greedy {greedy_value} vs DP {dp_value}"
                ),
            ));
        }
    }
    Ok(CheckReport::pass(
        NAME,
        instances,
        format!("greedy utility equals the knapsack optimum exactly on all {instances} uniform-cost instances"),
    ))
}

/// The temperature ladder the consistency check walks down.
pub const CONSISTENCY_LADDER: [f64; 5] = [0.9, 0.5, 0.1, 1e-2, 1e-3];

/// Relaxed-vs-deterministic mask consistency: on utility fields with a
/// margin around `tau` and around each cell's argmax, and no injected
/// noise, the max |soft - forward| deviation must fall monotonically along
/// the ladder and reach 1e-6 at temperature 1e-3.
pub fn check_scheduler_consistency(cells: usize, seed_key: u64) -> Result<CheckReport> {
    const NAME: &str = "prop_scheduler_consistency";
    const MARGIN: f64 = 0.05;
    let tau = 0.5;
    let mut rng = seed::rng(&[seed_key, 0x53]);

    // Margin-respecting random utility vectors.
    let mut fields: Vec<Vec<f64>> = Vec::with_capacity(cells);
    for _ in 0..cells {
        loop {
            let n = rng.random_range(2..=8);
            let us: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
            if us.iter().any(|u| (u - tau).abs() < MARGIN) {
                continue;
            }
            let mut sorted = us.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if sorted[0] - sorted[1] < MARGIN {
                continue;
            }
            fields.push(us);
            break;
        }
    }

    let mut deviations = Vec::with_capacity(CONSISTENCY_LADDER.len());
    for &temp in &CONSISTENCY_LADDER {
        let mut worst = 0.0f64;
        for us in &fields {
            let gates = ste_cell(us, tau, temp, temp, None)?;
            for (i, &soft) in gates.m_soft.iter().enumerate() {
                let hard = if gates.m_fwd[i] { 1.0 } else { 0.0 };
                worst = worst.max((soft - hard).abs());
            }
        }
        deviations.push(worst);
    }

    for pair in deviations.windows(2) {
        if pair[1] >= pair[0] || pair[1].is_nan() {
            return Ok(CheckReport::fail(
                NAME,
                cells,
                "deviation not monotonically decreasing".to_string(),
                format!("ladder {CONSISTENCY_LADDER:?} gave deviations {deviations:?}"),
            ));
        }
    }
    let last = *deviations.last().unwrap();
    if last >= 1e-6 {
        return Ok(CheckReport::fail(
            NAME,
            cells,
            format!("residual deviation {last:.3e} at temperature 1e-3"),
            format!("deviations {deviations:?}"),
        ));
    }
    Ok(CheckReport::pass(
        NAME,
        cells,
        format!(
            "max deviation fell monotonically {:?} and reached {last:.3e} at 1e-3",
            deviations
                .iter()
                .map(|d| format!("{d:.3e}"))
                .collect::<Vec<_>>()
        ),
    ))
}

/// Negative control: feed the top-1 validator a deliberately redundant
/// top-2 schedule; the violation must be reported.
pub fn check_top1_violation_detector() -> Result<CheckReport> {
    const NAME: &str = "negative_control_top1_detector";
    let grid = GridSpec::new(2, 2, 2, 1.0)?;
    let mut a = MetaUtilityMap::new(grid, 0);
    let mut b = MetaUtilityMap::new(grid, 1);
    for l in 0..4 {
        a.insert(l, 0.8)?;
        b.insert(l, 0.6)?;
    }
    let cfg = SchedulerConfig::new(0.1, 1 << 20, TopK::Two)?;
    let result = schedule(&[a, b], 6, &cfg)?;
    let duplicated = result.mask.duplicated_cells();
    if result.mask.is_top1() || duplicated.is_empty() {
        return Ok(CheckReport::fail(
            NAME,
            1,
            "injected top-2 mask was not flagged".to_string(),
            format!("mask {:?}", result.mask),
        ));
    }
    Ok(CheckReport::pass(
        NAME,
        1,
        format!(
            "injected top-2 mask correctly reported as violating top-1 (cells {duplicated:?})"
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass_at_reduced_scale() {
        let a = check_singleton_optimality(500, 3).unwrap();
        assert!(a.passed, "{:?}", a.counterexample);
        let b = check_greedy_optimality(100, 3).unwrap();
        assert!(b.passed, "{:?}", b.counterexample);
        let c = check_scheduler_consistency(100, 3).unwrap();
        assert!(c.passed, "{:?}", c.counterexample);
        let d = check_top1_violation_detector().unwrap();
        assert!(d.passed, "{:?}", d.counterexample);
    }

    #[test]
    fn reports_are_deterministic() {
        let a = check_scheduler_consistency(50, 9).unwrap();
        let b = check_scheduler_consistency(50, 9).unwrap();
        assert_eq!(a.detail, b.detail);
    }
}
