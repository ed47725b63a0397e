//! Safe sets as unions of closed dose intervals, the certified expansion
//! rule, and the true-function reachability and safe-path oracles.
//!
//! Expansion exploits the monotone metric-in-gap structure: a certified dose
//! `d` with positive safety slack certifies the whole dose interval within
//! metric radius `slack / L`, which inverts to a closed dose interval. The
//! expansion scan runs over evaluation-grid points inside the previous set;
//! the eval grid is finer than the anchor grid and interval bookkeeping
//! merges gaps below one eval-grid cell, so the approximation error is one
//! cell.
//!
//! The reachability operator and the safe-path margin are oracles: they read
//! the true response and exist to validate the algorithmic safe sets, never
//! to drive recommendations.

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundsTable, EvalGrid};
use crate::error::{Error, Result};
use crate::kernel::DoseMetric;

/// Union of disjoint, sorted, nonempty closed dose intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeSet {
    intervals: Vec<(f64, f64)>,
    pub round: u32,
}

impl SafeSet {
    pub fn singleton(dose: f64) -> Self {
        Self { intervals: vec![(dose, dose)], round: 0 }
    }

    /// Build from arbitrary intervals, normalizing with the given merge gap.
    pub fn from_intervals(intervals: Vec<(f64, f64)>, merge_gap: f64, round: u32) -> Result<Self> {
        let normalized = normalize(intervals, merge_gap);
        if normalized.is_empty() {
            return Err(Error::DegenerateAdmissible { context: "empty safe set".into() });
        }
        Ok(Self { intervals: normalized, round })
    }

    /// The whole dose domain, for unconstrained policies.
    pub fn whole_domain(max_dose: f64) -> Self {
        Self { intervals: vec![(0.0, max_dose)], round: 0 }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn contains(&self, dose: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| dose >= lo - 1e-12 && dose <= hi + 1e-12)
    }

    /// Total length of the interval union.
    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|(lo, hi)| hi - lo).sum()
    }

    /// `self` is contained in `other`, allowing `tolerance` of dilation.
    pub fn subset_of(&self, other: &SafeSet, tolerance: f64) -> bool {
        self.intervals.iter().all(|&(lo, hi)| {
            other
                .intervals
                .iter()
                .any(|&(olo, ohi)| lo >= olo - tolerance && hi <= ohi + tolerance)
        })
    }
}

fn normalize(mut intervals: Vec<(f64, f64)>, merge_gap: f64) -> Vec<(f64, f64)> {
    intervals.retain(|(lo, hi)| lo.is_finite() && hi.is_finite() && lo <= hi);
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
    for (lo, hi) in intervals {
        match out.last_mut() {
            Some(last) if lo - last.1 < merge_gap => last.1 = last.1.max(hi),
            _ => out.push((lo, hi)),
        }
    }
    out
}

/// One application of the certified expansion rule.
///
/// Every eval-grid point `d` inside `prev` with positive slack
/// `min(lower(d) - t_min, t_max - upper(d))` certifies the dose interval of
/// metric radius `slack / L` around it; a saturated radius certifies the
/// whole domain. The result always contains `prev`.
pub fn expand_safe_set(
    prev: &SafeSet,
    table: &BoundsTable,
    eval: &EvalGrid,
    metric: &DoseMetric,
    lipschitz: f64,
    t_min: f64,
    t_max: f64,
    max_dose: f64,
) -> SafeSet {
    let mut intervals = prev.intervals.clone();
    for (j, &d) in eval.doses.iter().enumerate() {
        if !prev.contains(d) {
            continue;
        }
        let slack = (table.lower[j] - t_min).min(t_max - table.upper[j]);
        if slack <= 0.0 {
            continue;
        }
        let radius = match metric.inverse(slack / lipschitz) {
            Ok(r) => r,
            Err(Error::MetricSaturation { .. }) => max_dose,
            Err(_) => continue,
        };
        intervals.push(((d - radius).max(0.0), (d + radius).min(max_dose)));
    }
    SafeSet {
        intervals: normalize(intervals, eval.cell),
        round: table.round,
    }
}

/// Fixpoint of the true-function reachability operator on a dose grid.
#[derive(Debug, Clone)]
pub struct ReachabilityClosure {
    pub epsilon: f64,
    pub intervals: Vec<(f64, f64)>,
    pub iterations: u32,
    pub grid: Vec<f64>,
}

impl ReachabilityClosure {
    pub fn as_safe_set(&self) -> SafeSet {
        SafeSet { intervals: self.intervals.clone(), round: 0 }
    }
}

/// Iterate the reachability operator to its fixpoint on a grid mask.
///
/// A point `d'` joins when some currently-reachable `d` satisfies
/// `f(d) - L q(d, d') - eps >= t_min` and `f(d) + L q(d, d') + eps <= t_max`.
/// Endpoints of `s0` are inserted into the grid so singleton initial sets
/// participate. Iteration count is the number of productive applications.
pub fn reachability_closure<F: Fn(f64) -> f64>(
    truth: F,
    s0: &SafeSet,
    epsilon: f64,
    lipschitz: f64,
    metric: &DoseMetric,
    grid: &[f64],
    t_min: f64,
    t_max: f64,
) -> ReachabilityClosure {
    let mut doses: Vec<f64> = grid.to_vec();
    for &(lo, hi) in s0.intervals() {
        doses.push(lo);
        doses.push(hi);
    }
    doses.sort_by(f64::total_cmp);
    doses.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let f: Vec<f64> = doses.iter().map(|&d| truth(d)).collect();
    // Reach radius in dose units per point, or infinity when saturated.
    let radius: Vec<f64> = doses
        .iter()
        .zip(&f)
        .map(|(_, &fd)| {
            let slack = (fd - epsilon - t_min).min(t_max - epsilon - fd);
            if slack < 0.0 {
                return f64::NEG_INFINITY;
            }
            match metric.inverse(slack / lipschitz) {
                Ok(r) => r,
                Err(_) => f64::INFINITY,
            }
        })
        .collect();

    let mut mask: Vec<bool> = doses.iter().map(|&d| s0.contains(d)).collect();
    let mut iterations = 0u32;
    loop {
        let mut next = mask.clone();
        for i in 0..doses.len() {
            if !mask[i] || radius[i] == f64::NEG_INFINITY {
                continue;
            }
            for (j, nj) in next.iter_mut().enumerate() {
                if !*nj && (doses[j] - doses[i]).abs() <= radius[i] + 1e-12 {
                    *nj = true;
                }
            }
        }
        if next == mask {
            break;
        }
        mask = next;
        iterations += 1;
    }

    let mut intervals = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..doses.len() {
        match (mask[i], run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                intervals.push((doses[s], doses[i - 1]));
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        intervals.push((doses[s], doses[doses.len() - 1]));
    }
    ReachabilityClosure { epsilon, intervals, iterations, grid: doses }
}

/// Safe-path margin between two doses under the true response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafePathReport {
    pub d1: f64,
    pub d2: f64,
    /// `min over [d1, d2] of min(t_max - eps - f, f - t_min - eps)`.
    pub margin: f64,
    pub exists: bool,
}

/// Compute the safe-path margin by fine-grid minimization over `[d1, d2]`.
pub fn safe_path<F: Fn(f64) -> f64>(
    truth: F,
    d1: f64,
    d2: f64,
    t_min: f64,
    t_max: f64,
    epsilon: f64,
    resolution: usize,
) -> SafePathReport {
    let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
    let resolution = resolution.max(2);
    let mut margin = f64::INFINITY;
    for i in 0..resolution {
        let d = lo + (hi - lo) * i as f64 / (resolution - 1) as f64;
        let f = truth(d);
        margin = margin.min((t_max - epsilon - f).min(f - t_min - epsilon));
    }
    SafePathReport { d1: lo, d2: hi, margin, exists: margin > 0.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{build_dose_grid, build_eval_grid, compute_bounds};

    fn abs_metric() -> DoseMetric {
        DoseMetric::AbsoluteDifference
    }

    /// Bounds table with constant tightened bounds [lo, hi] everywhere.
    fn flat_table(eval: &EvalGrid, lo: f64, hi: f64) -> BoundsTable {
        let grid_for_table = crate::bounds::DoseGrid {
            context: vec![],
            doses: eval.doses.clone(),
            lambda: 1.0,
            metric_step: 1.0,
        };
        let eval_identity = EvalGrid {
            doses: eval.doses.clone(),
            anchor_of: (0..eval.doses.len()).collect(),
            anchor_pos: (0..eval.doses.len()).collect(),
            cell: eval.cell,
        };
        let means: Vec<f64> = eval.doses.iter().map(|_| 0.5 * (lo + hi)).collect();
        let vars: Vec<f64> = eval.doses.iter().map(|_| ((hi - lo) / 2.0).powi(2)).collect();
        compute_bounds(1, 1.0, &grid_for_table, &eval_identity, &means, &vars, &abs_metric(), 1.0)
    }

    fn grids(max_dose: f64) -> (crate::bounds::DoseGrid, EvalGrid) {
        let (grid, _) =
            build_dose_grid(&abs_metric(), 10.0, &[], max_dose, 2.0, None).unwrap();
        let eval = build_eval_grid(&grid, max_dose, 4);
        (grid, eval)
    }

    #[test]
    fn singleton_expansion_hand_case() {
        // Safe point with tightened bounds [90, 120], band [70, 180], L = 10:
        // slack = min(20, 60) = 20, radius 2 in absolute metric.
        let (_, eval) = grids(10.0);
        let table = flat_table(&eval, 90.0, 120.0);
        let prev = SafeSet::singleton(5.0);
        let next =
            expand_safe_set(&prev, &table, &eval, &abs_metric(), 10.0, 70.0, 180.0, 10.0);
        assert_eq!(next.intervals().len(), 1);
        let (lo, hi) = next.intervals()[0];
        assert!((lo - 3.0).abs() < 1e-9, "lo = {lo}");
        assert!((hi - 7.0).abs() < 1e-9, "hi = {hi}");
        assert!(prev.subset_of(&next, 0.0));
    }

    #[test]
    fn no_slack_leaves_set_unchanged() {
        let (_, eval) = grids(10.0);
        // Upper bound above t_max everywhere: slack <= 0.
        let table = flat_table(&eval, 90.0, 200.0);
        let prev = SafeSet::from_intervals(vec![(2.0, 4.0)], 0.0, 0).unwrap();
        let next =
            expand_safe_set(&prev, &table, &eval, &abs_metric(), 10.0, 70.0, 180.0, 10.0);
        assert_eq!(next.intervals(), prev.intervals());
    }

    #[test]
    fn zero_slack_boundary_is_no_expansion() {
        let (_, eval) = grids(10.0);
        // lower == t_min exactly: radius zero.
        let table = flat_table(&eval, 70.0, 120.0);
        let prev = SafeSet::from_intervals(vec![(2.0, 4.0)], 0.0, 0).unwrap();
        let next =
            expand_safe_set(&prev, &table, &eval, &abs_metric(), 10.0, 70.0, 180.0, 10.0);
        assert_eq!(next.intervals(), prev.intervals());
    }

    #[test]
    fn expansion_is_monotone_and_clipped_to_domain() {
        let (_, eval) = grids(10.0);
        let table = flat_table(&eval, 100.0, 140.0);
        let prev = SafeSet::singleton(9.5);
        let next =
            expand_safe_set(&prev, &table, &eval, &abs_metric(), 10.0, 70.0, 180.0, 10.0);
        assert!(prev.subset_of(&next, 0.0));
        let (_, hi) = *next.intervals().last().unwrap();
        assert!(hi <= 10.0);
    }

    #[test]
    fn closure_with_epsilon_exceeding_slack_is_initial_set() {
        let truth = |_d: f64| 125.0;
        let s0 = SafeSet::singleton(2.0);
        let grid: Vec<f64> = (0..101).map(|i| i as f64 * 0.1).collect();
        // Slack is min(55, 55) = 55; epsilon beyond that freezes the set.
        let closure = reachability_closure(
            truth,
            &s0,
            60.0,
            10.0,
            &abs_metric(),
            &grid,
            70.0,
            180.0,
        );
        assert_eq!(closure.intervals, vec![(2.0, 2.0)]);
        assert_eq!(closure.iterations, 0);
    }

    #[test]
    fn closure_linear_response_matches_interval_arithmetic() {
        // f(d) = 160 - 10 d on [0, 10], band [70, 180], eps = 1, L = 10.
        // f - 1 >= 70 gives d <= 8.9; f + 1 <= 180 holds for d >= -1.9.
        let truth = |d: f64| 160.0 - 10.0 * d;
        let s0 = SafeSet::singleton(2.0);
        let grid: Vec<f64> = (0..=1000).map(|i| i as f64 * 0.01).collect();
        let closure = reachability_closure(
            truth,
            &s0,
            1.0,
            10.0,
            &abs_metric(),
            &grid,
            70.0,
            180.0,
        );
        assert_eq!(closure.intervals.len(), 1);
        let (lo, hi) = closure.intervals[0];
        // Exact closure is [0, 8.9]; the grid fixpoint stops within
        // cell * L / slope + cell of the edge.
        let tol = 0.01 * (10.0 / 10.0) + 0.01;
        assert!(lo <= 1e-12, "lo = {lo}");
        assert!((hi - 8.9).abs() <= tol + 1e-9, "hi = {hi}");
        assert!(closure.iterations > 0);
    }

    #[test]
    fn closure_is_a_fixpoint() {
        let truth = |d: f64| 160.0 - 10.0 * d;
        let grid: Vec<f64> = (0..=500).map(|i| i as f64 * 0.02).collect();
        let s0 = SafeSet::singleton(2.0);
        let c1 = reachability_closure(
            &truth,
            &s0,
            1.0,
            10.0,
            &abs_metric(),
            &grid,
            70.0,
            180.0,
        );
        // Re-seeding with the closure changes nothing.
        let c2 = reachability_closure(
            &truth,
            &c1.as_safe_set(),
            1.0,
            10.0,
            &abs_metric(),
            &grid,
            70.0,
            180.0,
        );
        assert_eq!(c1.intervals, c2.intervals);
        assert_eq!(c2.iterations, 0);
    }

    #[test]
    fn safe_path_constant_inside_band() {
        let report = safe_path(|_| 112.5, 1.0, 5.0, 70.0, 180.0, 5.0, 1000);
        let expected = (180.0f64 - 5.0 - 112.5).min(112.5 - 70.0 - 5.0);
        assert!((report.margin - expected).abs() < 1e-12);
        assert!(report.exists);
    }

    #[test]
    fn safe_path_touching_threshold_has_zero_margin() {
        // Dips to exactly t_min + eps at the midpoint.
        let truth = |d: f64| 75.0 + (d - 3.0).abs() * 10.0;
        let report = safe_path(truth, 1.0, 5.0, 70.0, 180.0, 5.0, 4001);
        assert!(report.margin.abs() < 1e-9, "margin = {}", report.margin);
        assert!(!report.exists);
    }

    #[test]
    fn safe_path_monotone_response_attains_endpoint_margins() {
        // Monotone from 150 down to 100 over [0, 5]: margin = min(25, 25).
        let truth = |d: f64| 150.0 - 10.0 * d;
        let report = safe_path(truth, 0.0, 5.0, 70.0, 180.0, 5.0, 10_000);
        assert!((report.margin - 25.0).abs() < 1e-9);
        assert!(report.exists);
        // Swapped endpoints give the same answer.
        let swapped = safe_path(truth, 5.0, 0.0, 70.0, 180.0, 5.0, 10_000);
        assert_eq!(report, swapped);
    }

    #[test]
    fn safe_set_merges_sub_cell_gaps() {
        let set =
            SafeSet::from_intervals(vec![(0.0, 1.0), (1.005, 2.0), (3.0, 4.0)], 0.01, 0)
                .unwrap();
        assert_eq!(set.intervals().len(), 2);
        assert_eq!(set.intervals()[0], (0.0, 2.0));
        assert!((set.measure() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_safe_set_is_rejected() {
        assert!(SafeSet::from_intervals(vec![], 0.0, 0).is_err());
        assert!(SafeSet::from_intervals(vec![(2.0, 1.0)], 0.0, 0).is_err());
    }
}
