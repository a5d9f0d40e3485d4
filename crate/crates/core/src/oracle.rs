//! Independent brute-force references for the analytical machinery.
//!
//! Nothing here reuses the closed-form update or the policy's case logic:
//! values come from exhaustive enumeration over gridded states and actions,
//! so these routines are deliberately slow and serve as ground truth in
//! tests. The deterministic grid DP enumerates state-to-state moves on the
//! exact SoC dynamics (efficiencies frozen at the starting SoC of each
//! interval), which reproduces the piecewise-efficiency benchmark model's
//! feasible set in the grid limit.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::policy::act;
use crate::storage::StorageSpec;
use crate::valuation::{interp_slice, soc_grid, DayChain, ValueCube};

/// Piecewise-linear value function integral with O(1) queries.
struct IntegralTable {
    prefix: Vec<f64>,
    slice: Vec<f64>,
    capacity: f64,
}

impl IntegralTable {
    fn new(slice: &[f64], capacity: f64) -> Self {
        let m = slice.len();
        let h = capacity / (m - 1) as f64;
        let mut prefix = Vec::with_capacity(m);
        let mut acc = 0.0;
        prefix.push(0.0);
        for k in 1..m {
            acc += 0.5 * (slice[k - 1] + slice[k]) * h;
            prefix.push(acc);
        }
        Self {
            prefix,
            slice: slice.to_vec(),
            capacity,
        }
    }

    fn value_at(&self, e: f64) -> f64 {
        let m = self.slice.len();
        let h = self.capacity / (m - 1) as f64;
        let e = e.clamp(0.0, self.capacity);
        let k = ((e / h).floor() as usize).min(m - 2);
        let v_e = interp_slice(&self.slice, self.capacity, e);
        self.prefix[k] + 0.5 * (self.slice[k] + v_e) * (e - k as f64 * h)
    }
}

/// Terminal value function shared by all oracles: the integral of the
/// terminal marginal-value slice, i.e. the penalty device credits stored
/// energy up to the floor.
fn terminal_value_fn(spec: &StorageSpec, e: f64) -> f64 {
    crate::valuation::TERMINAL_PENALTY_VALUE * e.min(spec.terminal_floor)
}

/// Best action on a uniform action grid for one dispatch interval:
/// maximizes `price*(p-b) - c*p + V(e_next)` where `V` integrates `v_slice`.
/// Returns `(p, b, objective)`.
pub fn enumerate_single_stage(
    v_slice: &[f64],
    price: f64,
    spec: &StorageSpec,
    e_prev: f64,
    action_points: usize,
) -> (f64, f64, f64) {
    assert!(action_points >= 2);
    let table = IntegralTable::new(v_slice, spec.capacity);
    let (b_max, p_max) = spec.effective_limits(e_prev);
    let eta_b = spec.eta_charge.at_fraction(e_prev / spec.capacity);
    let eta_p = spec.eta_discharge.at_fraction(e_prev / spec.capacity);

    let mut best = (0.0, 0.0, f64::NEG_INFINITY);
    let mut consider = |p: f64, b: f64| {
        let e_next = (e_prev - p / eta_p + b * eta_b).clamp(0.0, spec.capacity);
        let obj = price * (p - b) - spec.marginal_cost * p + table.value_at(e_next);
        if obj > best.2 {
            best = (p, b, obj);
        }
    };
    for k in 0..=action_points {
        let frac = k as f64 / action_points as f64;
        consider(0.0, b_max * frac);
        if price >= 0.0 {
            consider(p_max * frac, 0.0);
        }
    }
    best
}

/// Exact backward induction over (node, SoC grid) with gridded actions.
#[derive(Debug, Clone, Serialize)]
pub struct StochasticDpResult {
    pub soc_grid: Vec<f64>,
    /// `start_values[i][m]`: max expected profit from stage 0 at node `i`
    /// with starting SoC `soc_grid[m]` (terminal device included).
    pub start_values: Vec<Vec<f64>>,
    /// `policy[t][i][m] = (p, b)`.
    pub policy: Vec<Vec<Vec<(f64, f64)>>>,
}

impl StochasticDpResult {
    pub fn value_at(&self, node: usize, e: f64, capacity: f64) -> f64 {
        interp_slice(&self.start_values[node], capacity, e)
    }
}

pub fn exhaustive_stochastic_dp(
    chain: &DayChain,
    spec: &StorageSpec,
    soc_points: usize,
    action_points: usize,
) -> Result<StochasticDpResult> {
    let t_stages = chain.t_stages;
    let n = chain.n_nodes();
    if t_stages > 8 || n > 3 || soc_points > 51 || action_points > 101 {
        return Err(Error::InstanceTooLarge(format!(
            "T={t_stages}, N={n}, soc={soc_points}, actions={action_points}"
        )));
    }
    spec.validate()?;
    let grid = soc_grid(spec.capacity, soc_points);
    let mut policy = vec![vec![vec![(0.0, 0.0); soc_points]; n]; t_stages];

    // W[i][m]: value from the start of the *next* stage at node i.
    let mut w_next: Vec<Vec<f64>> = Vec::new();
    let mut w_cur = vec![vec![0.0; soc_points]; n];
    for t in (0..t_stages).rev() {
        for i in 0..n {
            let price = chain.node_price(t, i);
            // Expected continuation after stage t's dispatch, as a function
            // of end-of-stage SoC on the grid.
            let continuation: Vec<f64> = if t == t_stages - 1 {
                grid.iter().map(|&e| terminal_value_fn(spec, e)).collect()
            } else {
                let row = chain.row(t, i);
                let mut mix = vec![0.0; soc_points];
                for (j, &p) in row.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    for (acc, &wv) in mix.iter_mut().zip(&w_next[j]) {
                        *acc += p * wv;
                    }
                }
                mix
            };
            for (m_idx, &e) in grid.iter().enumerate() {
                let (b_max, p_max) = spec.effective_limits(e);
                let eta_b = spec.eta_charge.at_fraction(e / spec.capacity);
                let eta_p = spec.eta_discharge.at_fraction(e / spec.capacity);
                let mut best = f64::NEG_INFINITY;
                let mut best_action = (0.0, 0.0);
                let mut consider = |p: f64, b: f64| {
                    let e_next = (e - p / eta_p + b * eta_b).clamp(0.0, spec.capacity);
                    let obj = price * (p - b) - spec.marginal_cost * p
                        + interp_slice(&continuation, spec.capacity, e_next);
                    if obj > best {
                        best = obj;
                        best_action = (p, b);
                    }
                };
                for k in 0..=action_points {
                    let frac = k as f64 / action_points as f64;
                    consider(0.0, b_max * frac);
                    if price >= 0.0 {
                        consider(p_max * frac, 0.0);
                    }
                }
                w_cur[i][m_idx] = best;
                policy[t][i][m_idx] = best_action;
            }
        }
        w_next = w_cur.clone();
    }

    Ok(StochasticDpResult {
        soc_grid: grid,
        start_values: w_next,
        policy,
    })
}

/// Exact expected profit of the analytical policy under the instance's
/// Markov chain: the policy is followed verbatim (`act` on node prices) and
/// only the SoC dimension is discretized, on `eval_points` samples.
pub fn evaluate_policy_exact(
    cube: &ValueCube,
    chain: &DayChain,
    spec: &StorageSpec,
    eval_points: usize,
    start_node: usize,
    start_soc: f64,
) -> Result<f64> {
    let t_stages = chain.t_stages;
    let n = chain.n_nodes();
    let grid = soc_grid(spec.capacity, eval_points);

    let mut u_next: Vec<Vec<f64>> = Vec::new();
    let mut u_cur = vec![vec![0.0; eval_points]; n];
    for t in (0..t_stages).rev() {
        for (i, u_row) in u_cur.iter_mut().enumerate() {
            let price = chain.node_price(t, i);
            for (m_idx, &e) in grid.iter().enumerate() {
                let (p, b) = act(cube, t, price, e, spec)?;
                let e_next = spec.soc_step(e, p, b)?;
                let cash = price * (p - b) - spec.marginal_cost * p;
                let cont = if t == t_stages - 1 {
                    terminal_value_fn(spec, e_next)
                } else {
                    let row = chain.row(t, i);
                    row.iter()
                        .enumerate()
                        .filter(|(_, &pr)| pr > 0.0)
                        .map(|(j, &pr)| pr * interp_slice(&u_next[j], spec.capacity, e_next))
                        .sum()
                };
                u_row[m_idx] = cash + cont;
            }
        }
        u_next = u_cur.clone();
    }
    Ok(interp_slice(&u_next[start_node], spec.capacity, start_soc))
}

/// Result of the deterministic grid DP.
#[derive(Debug, Clone, Serialize)]
pub struct GridDpResult {
    /// Cash profit of the optimal path (terminal device excluded).
    pub cash_profit: f64,
    /// Optimal objective including the terminal device.
    pub objective: f64,
    pub final_soc: f64,
    pub grid_points: usize,
    /// The optimal path's (discharge, charge) per stage.
    pub actions: Vec<(f64, f64)>,
}

/// Exact DP over state-to-state moves on a uniform SoC grid for a
/// deterministic price path, refined until the objective changes by less
/// than 0.1%. Handles SoC-dependent (stepped or affine) efficiency exactly:
/// each move evaluates the curves at the interval's starting SoC.
pub fn grid_dp_variable_eff(
    prices: &[f64],
    spec: &StorageSpec,
    start_soc: f64,
    base_points: usize,
    max_refinements: usize,
) -> Result<GridDpResult> {
    spec.validate()?;
    let mut last: Option<GridDpResult> = None;
    let mut points = base_points.max(51);
    for _ in 0..=max_refinements {
        let result = grid_dp_at_resolution(prices, spec, start_soc, points)?;
        if let Some(prev) = &last {
            let denom = prev.objective.abs().max(result.objective.abs()).max(1e-9);
            if (result.objective - prev.objective).abs() / denom < 1e-3 {
                return Ok(result);
            }
        }
        last = Some(result);
        points = (points - 1) * 2 + 1;
    }
    Err(Error::NoConvergence)
}

/// Best move from SoC `e` at one stage: enumerate every grid landing inside
/// the reachable band plus the two exact full-power corners, valuing the
/// landing SoC by linear interpolation of `w_next`. Returns
/// `(cash, target SoC, objective)`.
fn best_move(
    e: f64,
    price: f64,
    spec: &StorageSpec,
    grid: &[f64],
    h: f64,
    w_next: &[f64],
) -> (f64, f64, f64) {
    let tol = 1e-9;
    let eta_b = spec.eta_charge.at_fraction(e / spec.capacity);
    let eta_p = spec.eta_discharge.at_fraction(e / spec.capacity);
    let (b_max, p_max) = spec.effective_limits(e);
    let e_hi = e + b_max * eta_b;
    let e_lo = if price < 0.0 { e } else { e - p_max / eta_p };
    let k_lo = ((e_lo - tol) / h).ceil().max(0.0) as usize;
    let k_hi = (((e_hi + tol) / h).floor() as usize).min(grid.len() - 1);

    let mut best = (0.0, e, f64::NEG_INFINITY);
    let mut consider = |target: f64| {
        let target = target.clamp(e_lo.max(0.0), e_hi.min(spec.capacity));
        let (p, b) = if target > e {
            (0.0, (target - e) / eta_b)
        } else {
            ((e - target) * eta_p, 0.0)
        };
        if p > spec.power + tol || b > spec.power + tol {
            return;
        }
        let cash = price * (p - b) - spec.marginal_cost * p;
        let obj = cash + interp_slice(w_next, spec.capacity, target);
        if obj > best.2 {
            best = (cash, target, obj);
        }
    };
    for k in k_lo..=k_hi.max(k_lo) {
        consider(grid[k.min(grid.len() - 1)]);
    }
    consider(e);
    consider(e_hi);
    if price >= 0.0 {
        consider(e_lo);
    }
    best
}

fn grid_dp_at_resolution(
    prices: &[f64],
    spec: &StorageSpec,
    start_soc: f64,
    points: usize,
) -> Result<GridDpResult> {
    let t_stages = prices.len();
    let grid = soc_grid(spec.capacity, points);
    let h = spec.capacity / (points - 1) as f64;

    // Keep every stage's value table so the forward walk can follow the
    // optimum through off-grid corner landings.
    let mut w_all: Vec<Vec<f64>> = Vec::with_capacity(t_stages + 1);
    w_all.push(grid.iter().map(|&e| terminal_value_fn(spec, e)).collect());
    for t in (0..t_stages).rev() {
        let w_next = &w_all[w_all.len() - 1];
        let mut w_cur = vec![0.0f64; points];
        for (m_idx, &e) in grid.iter().enumerate() {
            let (_, _, obj) = best_move(e, prices[t], spec, &grid, h, w_next);
            w_cur[m_idx] = obj;
        }
        w_all.push(w_cur);
    }
    w_all.reverse(); // w_all[t] is now the value table at the start of stage t.

    let objective = interp_slice(&w_all[0], spec.capacity, start_soc);
    let mut e = start_soc.clamp(0.0, spec.capacity);
    let mut cash_total = 0.0;
    let mut actions = Vec::with_capacity(t_stages);
    for (t, &price) in prices.iter().enumerate() {
        let (cash, target, _) = best_move(e, price, spec, &grid, h, &w_all[t + 1]);
        cash_total += cash;
        let eta_b = spec.eta_charge.at_fraction(e / spec.capacity);
        let eta_p = spec.eta_discharge.at_fraction(e / spec.capacity);
        if target > e {
            actions.push((0.0, (target - e) / eta_b));
        } else {
            actions.push(((e - target) * eta_p, 0.0));
        }
        e = target;
    }
    Ok(GridDpResult {
        cash_profit: cash_total,
        objective,
        final_soc: e,
        grid_points: points,
        actions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::EfficiencyCurve;
    use crate::valuation::{backward_pass, integrate_slice, q_update};

    fn spec_const(eta: f64, cost: f64) -> StorageSpec {
        StorageSpec {
            power: 0.5,
            capacity: 1.0,
            marginal_cost: cost,
            terminal_floor: 0.0,
            eta_charge: EfficiencyCurve::constant(eta),
            eta_discharge: EfficiencyCurve::constant(eta),
            interval_min: 5,
        }
    }

    #[test]
    fn integral_table_matches_direct_integration() {
        let v: Vec<f64> = (0..11).map(|k| 100.0 - 10.0 * k as f64).collect();
        let table = IntegralTable::new(&v, 1.0);
        for step in 0..=20 {
            let e = step as f64 / 20.0;
            let direct = integrate_slice(&v, 1.0, e);
            assert!((table.value_at(e) - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn single_stage_low_price_full_charge() {
        let spec = spec_const(0.9, 0.0);
        let v = vec![50.0; 21];
        let (p, b, _) = enumerate_single_stage(&v, 10.0, &spec, 0.2, 1000);
        assert_eq!(p, 0.0);
        let (b_max, _) = spec.effective_limits(0.2);
        assert!((b - b_max).abs() < 1e-9);
    }

    #[test]
    fn single_stage_boundary_price_indifferent() {
        let spec = spec_const(0.9, 0.0);
        let v = vec![50.0; 21];
        // price = v*eta exactly: objective flat in b across [0, b_max].
        let price = 45.0;
        let (b_max, _) = spec.effective_limits(0.2);
        let table = IntegralTable::new(&v, 1.0);
        let obj_idle = table.value_at(0.2);
        let obj_full = price * (-b_max) + table.value_at(0.2 + b_max * 0.9);
        assert!((obj_idle - obj_full).abs() < 1e-9);
    }

    #[test]
    fn single_stage_one_shot_discharge() {
        let spec = spec_const(1.0, 10.0);
        let v = vec![0.0; 21];
        let (p, b, obj) = enumerate_single_stage(&v, 60.0, &spec, 1.0, 1000);
        assert_eq!(b, 0.0);
        assert!((p - 0.5).abs() < 1e-9);
        assert!((obj - 0.5 * 50.0).abs() < 1e-9);
    }

    #[test]
    fn act_matches_enumeration_on_staircase() {
        let spec = spec_const(0.9, 5.0);
        // Random-ish staircase, non-increasing.
        let v = vec![90.0, 90.0, 72.0, 71.0, 55.0, 55.0, 55.0, 31.0, 12.0, 12.0, 0.0];
        let cube = crate::policy::single_slice_cube(&v, 1.0);
        for (lambda, e_prev) in [(20.0, 0.3), (52.0, 0.45), (75.0, 0.8), (110.0, 0.62)] {
            let (p, b) = act(&cube, 0, lambda, e_prev, &spec).unwrap();
            let ours = crate::policy::one_step_objective(&v, lambda, &spec, e_prev, p, b).unwrap();
            let (_, _, best) = enumerate_single_stage(&v, lambda, &spec, e_prev, 20_000);
            assert!(
                ours >= best - 1e-6 * best.abs() - 1e-4,
                "act objective {ours} below enumerated {best} at lambda={lambda}, e={e_prev}"
            );
        }
    }

    #[test]
    fn stochastic_dp_one_stage_flat_prices_no_profit() {
        let spec = spec_const(0.9, 0.0);
        let chain = DayChain::degenerate(&[20.0], 5);
        let res = exhaustive_stochastic_dp(&chain, &spec, 21, 50).unwrap();
        // Starting empty there is nothing to discharge and charging costs
        // money with no future: value 0.
        assert!((res.value_at(0, 0.0, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn stochastic_dp_two_stage_spread_by_hand() {
        // Two stages, deterministic up-transition from price 10 to 50,
        // eta = 1, c = 0, P = 0.5, start empty: charge 0.5 at 10, sell at
        // 50 -> profit 0.5 * 40 = 20.
        let spec = StorageSpec {
            power: 0.5,
            capacity: 1.0,
            marginal_cost: 0.0,
            terminal_floor: 0.0,
            eta_charge: EfficiencyCurve::constant(1.0),
            eta_discharge: EfficiencyCurve::constant(1.0),
            interval_min: 5,
        };
        let chain = DayChain {
            t_stages: 2,
            interval_min: 5,
            cuts: vec![30.0],
            reps: vec![10.0, 50.0],
            offsets: vec![0.0, 0.0],
            hourly: vec![vec![0.0, 1.0, 0.0, 1.0]; 24],
        };
        let res = exhaustive_stochastic_dp(&chain, &spec, 21, 100).unwrap();
        assert!((res.value_at(0, 0.0, 1.0) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn stochastic_dp_rejects_large_instances() {
        let spec = spec_const(0.9, 0.0);
        let chain = DayChain::degenerate(&[20.0; 9], 5);
        assert!(matches!(
            exhaustive_stochastic_dp(&chain, &spec, 21, 50),
            Err(Error::InstanceTooLarge(_))
        ));
    }

    #[test]
    fn grid_dp_single_interval_discharge() {
        let mut spec = spec_const(1.0, 10.0);
        spec.eta_discharge = EfficiencyCurve::constant(0.9);
        // One interval, price 60 > c, start full: discharge min(P, E*eta).
        let res = grid_dp_variable_eff(&[60.0], &spec, 1.0, 201, 4).unwrap();
        let p = 0.5f64.min(1.0 * 0.9);
        assert!((res.cash_profit - (60.0 - 10.0) * p).abs() < 1e-6);
    }

    #[test]
    fn grid_dp_square_wave_hand_optimum() {
        // eta=1, c=0, P=0.5, E=1: prices alternate 10, 10, 50, 50. Buy one
        // full battery at 10, sell at 50: profit 40.
        let spec = StorageSpec {
            power: 0.5,
            capacity: 1.0,
            marginal_cost: 0.0,
            terminal_floor: 0.0,
            eta_charge: EfficiencyCurve::constant(1.0),
            eta_discharge: EfficiencyCurve::constant(1.0),
            interval_min: 5,
        };
        let res = grid_dp_variable_eff(&[10.0, 10.0, 50.0, 50.0], &spec, 0.0, 201, 4).unwrap();
        assert!((res.cash_profit - 40.0).abs() < 1e-9);
    }

    #[test]
    fn grid_dp_negative_prices_charge_only() {
        let spec = spec_const(0.9, 0.0);
        let prices = vec![-10.0, -5.0, -20.0, -1.0];
        let res = grid_dp_variable_eff(&prices, &spec, 0.0, 201, 4).unwrap();
        // Paid to charge; profit strictly positive, and no discharge can
        // have happened (final SoC > 0 and cash > 0 despite no sales).
        assert!(res.cash_profit > 0.0);
        assert!(res.final_soc > 0.0);
    }

    #[test]
    fn grid_dp_monotone_in_action_refinement() {
        let spec = spec_const(0.9, 10.0);
        let prices: Vec<f64> = (0..24)
            .map(|t| if t % 2 == 0 { 15.0 } else { 80.0 })
            .collect();
        let coarse = grid_dp_at_resolution(&prices, &spec, 0.0, 101).unwrap();
        let fine = grid_dp_at_resolution(&prices, &spec, 0.0, 401).unwrap();
        assert!(fine.objective >= coarse.objective - 1e-9);
    }

    #[test]
    fn q_update_partial_band_cross_checked_by_enumeration() {
        // Spec example: two-segment v, price inside the partial-charge band
        // -> q = price/eta_b, cross-checked against the enumeration oracle
        // via finite differences of the one-step optimum.
        let spec = spec_const(0.9, 0.0);
        let m = 101;
        let v: Vec<f64> = (0..m)
            .map(|k| if k < 50 { 80.0 } else { 30.0 })
            .collect();
        let price = 40.0; // 30*0.9 < 40 <= 80*0.9 at mid SoC
        let q = q_update(&v, price, &spec, false);
        let e = 0.3;
        let k = 30;
        assert!((q[k] - price / 0.9).abs() < 1e-9);
        let de = 0.01;
        let (_, _, obj_hi) = enumerate_single_stage(&v, price, &spec, e + de, 40_000);
        let (_, _, obj_lo) = enumerate_single_stage(&v, price, &spec, e - de, 40_000);
        let fd = (obj_hi - obj_lo) / (2.0 * de);
        assert!(
            (fd - q[k]).abs() < 0.05 * q[k],
            "finite-difference {fd} vs analytical {}",
            q[k]
        );
    }

    /// Start-of-interval efficiency makes full-power moves across a stepped
    /// breakpoint path-dependent: the whole interval's bulk pays the
    /// starting segment's rate, so exiting the 70% top segment costs a lump
    /// the marginal policy cannot price. On a day that rides through the
    /// breakpoints the grid-DP optimum therefore beats the analytical
    /// dispatch by a real margin. This test pins that known gap so it is
    /// visible rather than hidden by instance selection.
    #[test]
    fn start_of_interval_breakpoint_gap_is_real() {
        let step = EfficiencyCurve::Step {
            breaks: vec![0.2, 0.9],
            values: vec![0.8, 0.9, 0.7],
        };
        let mut spec = spec_const(0.9, 0.0);
        spec.power = 1.0 / 12.0;
        spec.eta_charge = step.clone();
        spec.eta_discharge = step;
        // Negative overnight prices top the battery into the 70% segment;
        // morning and evening peaks force the exit toll repeatedly.
        let mut prices = Vec::with_capacity(288);
        for t in 0..288 {
            let hour = t / 12;
            let level = match hour {
                0..=4 => -8.0,
                5..=8 => 95.0,
                9..=12 => 30.0,
                13..=16 => -10.0,
                17..=20 => 97.0,
                _ => 25.0,
            };
            prices.push(level + (t % 5) as f64 * 0.3);
        }
        let base = chrono::NaiveDate::from_ymd_opt(2019, 3, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let points = prices
            .iter()
            .enumerate()
            .map(|(k, p)| (base + chrono::Duration::minutes(5 * k as i64), *p))
            .collect();
        let rtp = crate::pricedata::PriceSeries::new("Z", 5, points).unwrap();
        let opts = crate::simulate::SimOptions {
            initial_soc: Some(0.0),
            ..Default::default()
        };
        let pf = crate::simulate::run_perfect_forecast(&rtp, &spec, &opts).unwrap();
        let oracle = grid_dp_variable_eff(&prices, &spec, 0.0, 401, 5).unwrap();
        let gap = (oracle.cash_profit - pf.trace.revenue()) / oracle.cash_profit;
        assert!(
            gap > 0.002,
            "expected a visible optimality gap on breakpoint-riding days, got {gap:.5}"
        );
        assert!(
            gap < 0.25,
            "dispatch should still capture most of the optimum, gap {gap:.5}"
        );
    }

    #[test]
    fn backward_pass_policy_near_oracle_small_instance() {
        // T=6, N=3 instance with a profitable spread; the analytical policy
        // evaluated exactly under the chain reaches >= 99% of the oracle.
        // Power is a realistic fraction of capacity per interval; at
        // half-the-battery-per-stage ratings the piecewise marginal value
        // machinery is too coarse for tiny horizons.
        let mut spec = spec_const(0.9, 0.0);
        spec.power = 0.15;
        let chain = DayChain {
            t_stages: 6,
            interval_min: 5,
            cuts: vec![30.0, 70.0],
            reps: vec![15.0, 50.0, 95.0],
            offsets: vec![0.0; 6],
            hourly: vec![vec![0.5, 0.3, 0.2, 0.2, 0.5, 0.3, 0.1, 0.4, 0.5]; 24],
        };
        let oracle = exhaustive_stochastic_dp(&chain, &spec, 21, 100).unwrap();
        let cube = backward_pass(&chain, &spec, 1000).unwrap();
        let start_soc = 0.5;
        for node in 0..3 {
            let opt = oracle.value_at(node, start_soc, 1.0);
            let achieved =
                evaluate_policy_exact(&cube, &chain, &spec, 1001, node, start_soc).unwrap();
            assert!(
                achieved >= 0.99 * opt - 1e-9,
                "node {node}: achieved {achieved} vs oracle {opt}"
            );
        }
    }
}
