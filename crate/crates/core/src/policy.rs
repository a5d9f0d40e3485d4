//! Dispatch policy: realized price + current SoC -> charge/discharge action.
//!
//! The policy reads the marginal value slice of the node containing the
//! realized price and applies the same five-case split as the valuation
//! update, except that partial actions come from inverting the sampled
//! value function. On flat stretches of the slice the inverse saturates the
//! indifference region: charge targets take the largest qualifying SoC,
//! discharge targets the smallest, so both partial actions are deterministic.

use crate::error::{Error, Result};
use crate::storage::StorageSpec;
use crate::valuation::{interp_slice, ValueCube};

/// Largest SoC (linearly interpolated) at which the slice stays at or above
/// `target`; 0 when even `v(0)` is below, `capacity` when even `v(E)`
/// qualifies. This is the charge-side inverse. The scan runs from the top so
/// it also picks the rightmost crossing of slices that are not monotone
/// (variable-efficiency value functions are not projected).
pub fn inverse_v(v_slice: &[f64], capacity: f64, target: f64) -> f64 {
    let m = v_slice.len();
    let h = capacity / (m - 1) as f64;
    if v_slice[m - 1] >= target {
        return capacity;
    }
    for k in (0..m - 1).rev() {
        if v_slice[k] >= target {
            // v[k] >= target > v[k+1]: interpolate inside this segment.
            let (hi, lo) = (v_slice[k], v_slice[k + 1]);
            return k as f64 * h + h * (hi - target) / (hi - lo);
        }
    }
    0.0
}

/// Smallest SoC at which the slice has dropped to `target` or below; the
/// discharge-side inverse (saturates flat stretches from the left, leftmost
/// crossing on non-monotone slices).
pub fn inverse_v_lower(v_slice: &[f64], capacity: f64, target: f64) -> f64 {
    let m = v_slice.len();
    let h = capacity / (m - 1) as f64;
    if v_slice[0] <= target {
        return 0.0;
    }
    for k in 1..m {
        if v_slice[k] <= target {
            let (hi, lo) = (v_slice[k - 1], v_slice[k]);
            return (k - 1) as f64 * h + h * (hi - target) / (hi - lo);
        }
    }
    capacity
}

/// Dispatch decision for stage `t`: discharge and charge in MWh per
/// interval, feasible by construction (`0 <= p <= min(P, e*eta_p)`,
/// `0 <= b <= min(P, (E-e)/eta_b)`, `p*b = 0`, `p = 0` at negative prices).
pub fn act(
    cube: &ValueCube,
    t: usize,
    lambda: f64,
    e_prev: f64,
    spec: &StorageSpec,
) -> Result<(f64, f64)> {
    if t >= cube.t_stages {
        return Err(Error::StageOutOfRange {
            stage: t,
            t_stages: cube.t_stages,
        });
    }
    let capacity = spec.capacity;
    if e_prev < -crate::storage::SOC_TOLERANCE
        || e_prev > capacity + crate::storage::SOC_TOLERANCE
    {
        return Err(Error::SocOutOfBounds {
            soc: e_prev,
            capacity,
            context: "act".into(),
        });
    }
    let e_prev = e_prev.clamp(0.0, capacity);
    let node = cube.node_of(t, lambda);
    let v = cube.slice(t, node);

    let eta_b = spec.eta_charge.at_fraction(e_prev / capacity);
    let eta_p = spec.eta_discharge.at_fraction(e_prev / capacity);
    let c = spec.marginal_cost;
    let (b_max, p_max) = spec.effective_limits(e_prev);

    let v_at = interp_slice(v, capacity, e_prev);
    let v_hi = interp_slice(v, capacity, e_prev + b_max * eta_b);
    let thr_full_charge = v_hi * eta_b;
    let thr_charge = v_at * eta_b;

    // Discharge side first (never at negative prices). Checking it before
    // the charge cases resolves exact threshold ties toward saturating the
    // indifference region: on a strictly decreasing slice the inverse lands
    // back at e_prev (a hold), and on a flat stretch it sells through it.
    // Two-level price paths hit these ties exactly; holding there strands
    // energy the valuation priced for sale.
    if lambda >= 0.0 {
        let v_lo = interp_slice(v, capacity, e_prev - p_max / eta_p);
        let thr_hold = (v_at / eta_p + c).max(0.0);
        let thr_discharge = (v_lo / eta_p + c).max(0.0);
        if lambda > thr_discharge {
            return Ok((p_max, 0.0));
        }
        if lambda >= thr_hold {
            let target = inverse_v_lower(v, capacity, (lambda - c) * eta_p);
            let beta = (e_prev - target) * eta_p;
            return Ok((beta.clamp(0.0, p_max), 0.0));
        }
    }
    if lambda <= thr_full_charge {
        return Ok((0.0, b_max));
    }
    if lambda <= thr_charge {
        let target = inverse_v(v, capacity, lambda / eta_b);
        let alpha = (target - e_prev) / eta_b;
        return Ok((0.0, alpha.clamp(0.0, b_max)));
    }
    Ok((0.0, 0.0))
}

/// One-step objective of an action under a marginal-value slice:
/// `lambda*(p - b) - c*p + integral of v up to the landing SoC`.
pub fn one_step_objective(
    v_slice: &[f64],
    lambda: f64,
    spec: &StorageSpec,
    e_prev: f64,
    p: f64,
    b: f64,
) -> Result<f64> {
    let e_next = spec.soc_step(e_prev, p, b)?;
    Ok(lambda * (p - b) - spec.marginal_cost * p
        + crate::valuation::integrate_slice(v_slice, spec.capacity, e_next))
}

/// Convenience for tests: a one-stage cube holding a single slice.
pub fn single_slice_cube(v_slice: &[f64], capacity: f64) -> ValueCube {
    let mut cube = ValueCube::new_empty(1, 1, v_slice.len(), capacity, Vec::new(), vec![0.0]);
    cube.set_slice(0, 0, v_slice);
    cube
}
