//! Physical battery model: ratings, SoC-dependent efficiency, SoC evolution.
//!
//! Power is expressed in MWh per dispatch interval throughout (the CLI
//! converts a MW rating once at configuration time), so the SoC step
//! `e = e_prev - p/eta_p + b*eta_b` needs no unit factors. Efficiencies are
//! always evaluated at the interval's starting SoC.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SOC_TOLERANCE: f64 = 1e-9;

/// One-way efficiency as a function of SoC fraction in [0, 1].
///
/// `Step` segments are left-closed: with breaks `[0.2, 0.9]` and values
/// `[0.8, 0.9, 0.7]`, the curve is 0.8 on [0, 0.2), 0.9 on [0.2, 0.9) and
/// 0.7 on [0.9, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EfficiencyCurve {
    Constant { value: f64 },
    Affine { slope: f64, intercept: f64 },
    Step { breaks: Vec<f64>, values: Vec<f64> },
}

impl EfficiencyCurve {
    pub fn constant(value: f64) -> Self {
        EfficiencyCurve::Constant { value }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v <= 1.0;
        match self {
            EfficiencyCurve::Constant { value } => {
                if !ok(*value) {
                    return Err(Error::InvalidSpec(format!("efficiency {value} outside (0,1]")));
                }
            }
            EfficiencyCurve::Affine { slope, intercept } => {
                // An affine curve on [0,1] attains its extremes at the ends.
                if !ok(*intercept) || !ok(intercept + slope) {
                    return Err(Error::InvalidSpec(
                        "affine efficiency leaves (0,1] on [0,1]".into(),
                    ));
                }
            }
            EfficiencyCurve::Step { breaks, values } => {
                if values.is_empty() || breaks.len() + 1 != values.len() {
                    return Err(Error::InvalidSpec(
                        "step efficiency needs K values and K-1 breaks".into(),
                    ));
                }
                if !breaks.windows(2).all(|w| w[0] < w[1])
                    || breaks.iter().any(|b| *b <= 0.0 || *b >= 1.0)
                {
                    return Err(Error::InvalidSpec(
                        "step breaks must be strictly increasing inside (0,1)".into(),
                    ));
                }
                if values.iter().any(|v| !ok(*v)) {
                    return Err(Error::InvalidSpec("step efficiency outside (0,1]".into()));
                }
            }
        }
        Ok(())
    }

    /// Evaluate at SoC fraction `x`; at a breakpoint the left-closed segment
    /// applies.
    pub fn at_fraction(&self, x: f64) -> f64 {
        match self {
            EfficiencyCurve::Constant { value } => *value,
            EfficiencyCurve::Affine { slope, intercept } => intercept + slope * x,
            EfficiencyCurve::Step { breaks, values } => {
                let seg = breaks.partition_point(|&b| b <= x);
                values[seg]
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, EfficiencyCurve::Constant { .. })
    }
}

/// Battery ratings and cost parameters. `power` is MWh per interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageSpec {
    pub power: f64,
    pub capacity: f64,
    /// Marginal discharge cost, $/MWh discharged.
    pub marginal_cost: f64,
    /// Terminal SoC floor e_f, MWh.
    pub terminal_floor: f64,
    pub eta_charge: EfficiencyCurve,
    pub eta_discharge: EfficiencyCurve,
    pub interval_min: u32,
}

impl StorageSpec {
    pub fn validate(&self) -> Result<()> {
        if self.power <= 0.0 || !self.power.is_finite() {
            return Err(Error::InvalidSpec("power must be positive".into()));
        }
        if self.capacity <= 0.0 || !self.capacity.is_finite() {
            return Err(Error::InvalidSpec("capacity must be positive".into()));
        }
        if self.marginal_cost < 0.0 {
            return Err(Error::InvalidSpec("marginal cost must be nonnegative".into()));
        }
        if !(0.0..=self.capacity).contains(&self.terminal_floor) {
            return Err(Error::InvalidSpec(format!(
                "terminal floor {} outside [0, {}]",
                self.terminal_floor, self.capacity
            )));
        }
        self.eta_charge.validate()?;
        self.eta_discharge.validate()
    }

    fn check_soc(&self, e: f64, context: &str) -> Result<()> {
        if e < -SOC_TOLERANCE || e > self.capacity + SOC_TOLERANCE {
            return Err(Error::SocOutOfBounds {
                soc: e,
                capacity: self.capacity,
                context: context.into(),
            });
        }
        Ok(())
    }

    /// Charge efficiency at starting SoC `e` (MWh).
    pub fn eta_charge_at(&self, e: f64) -> Result<f64> {
        self.check_soc(e, "eta_charge_at")?;
        Ok(self.eta_charge.at_fraction((e / self.capacity).clamp(0.0, 1.0)))
    }

    /// Discharge efficiency at starting SoC `e` (MWh).
    pub fn eta_discharge_at(&self, e: f64) -> Result<f64> {
        self.check_soc(e, "eta_discharge_at")?;
        Ok(self
            .eta_discharge
            .at_fraction((e / self.capacity).clamp(0.0, 1.0)))
    }

    pub fn has_constant_efficiency(&self) -> bool {
        self.eta_charge.is_constant() && self.eta_discharge.is_constant()
    }

    /// Largest feasible charge and discharge this interval from `e_prev`:
    /// `b_max = min(P, (E - e_prev)/eta_b)`, `p_max = min(P, e_prev*eta_p)`.
    pub fn effective_limits(&self, e_prev: f64) -> (f64, f64) {
        let e = e_prev.clamp(0.0, self.capacity);
        let eta_b = self.eta_charge.at_fraction(e / self.capacity);
        let eta_p = self.eta_discharge.at_fraction(e / self.capacity);
        let b_max = self.power.min((self.capacity - e) / eta_b).max(0.0);
        let p_max = self.power.min(e * eta_p).max(0.0);
        (b_max, p_max)
    }

    /// SoC after dispatching discharge `p` and charge `b` (MWh per interval)
    /// from `e_prev`, with efficiencies frozen at `e_prev`. An action landing
    /// outside `[0, E]` beyond tolerance is reported as infeasible; inside
    /// tolerance the result is clamped exactly to the bounds.
    pub fn soc_step(&self, e_prev: f64, p: f64, b: f64) -> Result<f64> {
        debug_assert!(p >= 0.0 && b >= 0.0);
        self.check_soc(e_prev, "soc_step")?;
        let eta_p = self.eta_discharge_at(e_prev)?;
        let eta_b = self.eta_charge_at(e_prev)?;
        let e = e_prev - p / eta_p + b * eta_b;
        if e < -SOC_TOLERANCE || e > self.capacity + SOC_TOLERANCE {
            return Err(Error::InfeasibleAction {
                discharge: p,
                charge: b,
                from: e_prev,
                to: e,
            });
        }
        Ok(e.clamp(0.0, self.capacity))
    }
}

/// One dispatch interval of a simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub ts: NaiveDateTime,
    pub price: f64,
    /// Discharge, MWh per interval (market side).
    pub discharge: f64,
    /// Charge, MWh per interval (market side).
    pub charge: f64,
    /// SoC at the end of the interval, MWh.
    pub soc: f64,
    /// price*(p - b) - c*p.
    pub cashflow: f64,
}

/// Per-interval record of a simulated run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DispatchTrace {
    pub rows: Vec<TraceRow>,
}

impl DispatchTrace {
    pub fn revenue(&self) -> f64 {
        self.rows.iter().map(|r| r.cashflow).sum()
    }

    pub fn discharged(&self) -> f64 {
        self.rows.iter().map(|r| r.discharge).sum()
    }

    /// Check every trace invariant: bounds on p, b and SoC, no simultaneous
    /// charge/discharge, no discharge at negative prices, and cash-flow
    /// arithmetic.
    pub fn validate(&self, spec: &StorageSpec) -> Result<()> {
        let tol = SOC_TOLERANCE;
        for (k, r) in self.rows.iter().enumerate() {
            let ctx = |what: &str| format!("trace row {k} ({}): {what}", r.ts);
            if r.discharge < -tol || r.discharge > spec.power + tol {
                return Err(Error::InvalidSpec(ctx("discharge outside [0, P]")));
            }
            if r.charge < -tol || r.charge > spec.power + tol {
                return Err(Error::InvalidSpec(ctx("charge outside [0, P]")));
            }
            if r.soc < -tol || r.soc > spec.capacity + tol {
                return Err(Error::InvalidSpec(ctx("SoC outside [0, E]")));
            }
            if r.discharge * r.charge > tol {
                return Err(Error::InvalidSpec(ctx("simultaneous charge and discharge")));
            }
            if r.price < 0.0 && r.discharge > tol {
                return Err(Error::InvalidSpec(ctx("discharge at negative price")));
            }
            let cash = r.price * (r.discharge - r.charge) - spec.marginal_cost * r.discharge;
            if (cash - r.cashflow).abs() > 1e-6 * (1.0 + cash.abs()) {
                return Err(Error::InvalidSpec(ctx("cash flow mismatch")));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "timestamp,price,p,b,soc,cashflow")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.ts.format(crate::pricedata::TS_FORMAT),
                r.price,
                r.discharge,
                r.charge,
                r.soc,
                r.cashflow
            )?;
        }
        Ok(())
    }

    pub fn read_csv(source: impl std::io::Read) -> Result<Self> {
        use std::io::BufRead;
        let reader = std::io::BufReader::new(source);
        let mut rows = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || (lineno == 0 && trimmed.starts_with("timestamp")) {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').collect();
            let malformed = |reason: &str| Error::MalformedRow {
                line: lineno + 1,
                reason: reason.into(),
            };
            if fields.len() != 6 {
                return Err(malformed("expected 6 fields"));
            }
            let ts = NaiveDateTime::parse_from_str(fields[0], crate::pricedata::TS_FORMAT)
                .map_err(|_| malformed("bad timestamp"))?;
            let nums: Vec<f64> = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| malformed("bad number"))?;
            rows.push(TraceRow {
                ts,
                price: nums[0],
                discharge: nums[1],
                charge: nums[2],
                soc: nums[3],
                cashflow: nums[4],
            });
        }
        Ok(DispatchTrace { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec_const(eta: f64) -> StorageSpec {
        StorageSpec {
            power: 0.5,
            capacity: 1.0,
            marginal_cost: 0.0,
            terminal_floor: 0.0,
            eta_charge: EfficiencyCurve::constant(eta),
            eta_discharge: EfficiencyCurve::constant(eta),
            interval_min: 5,
        }
    }

    fn stepped_80_90_70() -> EfficiencyCurve {
        EfficiencyCurve::Step {
            breaks: vec![0.2, 0.9],
            values: vec![0.8, 0.9, 0.7],
        }
    }

    #[test]
    fn constant_curve_everywhere() {
        let spec = spec_const(0.9);
        assert_eq!(spec.eta_charge_at(0.0).unwrap(), 0.9);
        assert_eq!(spec.eta_charge_at(0.73).unwrap(), 0.9);
    }

    #[test]
    fn step_curve_segments() {
        let c = stepped_80_90_70();
        assert_eq!(c.at_fraction(0.5), 0.9);
        assert_eq!(c.at_fraction(0.95), 0.7);
        assert_eq!(c.at_fraction(0.0), 0.8);
        // Left-closed at breakpoints.
        assert_eq!(c.at_fraction(0.2), 0.9);
        assert_eq!(c.at_fraction(0.9), 0.7);
        assert_eq!(c.at_fraction(1.0), 0.7);
    }

    #[test]
    fn soc_out_of_bounds_errors() {
        let spec = spec_const(0.9);
        assert!(spec.eta_charge_at(1.5).is_err());
        assert!(spec.eta_charge_at(-0.1).is_err());
    }

    #[test]
    fn soc_step_charge() {
        let spec = spec_const(0.9);
        let e = spec.soc_step(0.5, 0.0, 0.1).unwrap();
        assert!((e - 0.59).abs() < 1e-12);
    }

    #[test]
    fn soc_step_discharge() {
        let spec = spec_const(0.9);
        let e = spec.soc_step(0.5, 0.09, 0.0).unwrap();
        assert!((e - 0.4).abs() < 1e-12);
    }

    #[test]
    fn soc_step_with_step_curve() {
        let mut spec = spec_const(0.9);
        spec.eta_charge = stepped_80_90_70();
        let e = spec.soc_step(0.1, 0.0, 0.1).unwrap();
        assert!((e - 0.18).abs() < 1e-12);
    }

    #[test]
    fn soc_step_infeasible() {
        let spec = spec_const(0.9);
        assert!(matches!(
            spec.soc_step(0.9, 0.0, 0.5),
            Err(Error::InfeasibleAction { .. })
        ));
    }

    #[test]
    fn limits_full_and_empty() {
        let spec = spec_const(0.9);
        let (b_max, p_max) = spec.effective_limits(1.0);
        assert_eq!(b_max, 0.0);
        assert_eq!(p_max, 0.5);
        let (b_max, p_max) = spec.effective_limits(0.0);
        assert_eq!(p_max, 0.0);
        assert_eq!(b_max, 0.5);
    }

    #[test]
    fn limits_near_full() {
        let spec = spec_const(0.9);
        let (b_max, _) = spec.effective_limits(0.96);
        assert!((b_max - 0.04 / 0.9).abs() < 1e-12);
        // Charging b_max from 0.96 lands exactly on E.
        let e = spec.soc_step(0.96, 0.0, b_max).unwrap();
        assert!((e - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn idle_step_is_identity(e in 0.0f64..=1.0) {
            let spec = spec_const(0.9);
            prop_assert_eq!(spec.soc_step(e, 0.0, 0.0).unwrap(), e);
        }

        #[test]
        fn limits_land_inside_bounds(e in 0.0f64..=1.0, frac in 0.0f64..=1.0) {
            let mut spec = spec_const(0.9);
            spec.eta_charge = stepped_80_90_70();
            let (b_max, p_max) = spec.effective_limits(e);
            let after_charge = spec.soc_step(e, 0.0, b_max * frac).unwrap();
            prop_assert!(after_charge <= spec.capacity + SOC_TOLERANCE);
            let after_discharge = spec.soc_step(e, p_max * frac, 0.0).unwrap();
            prop_assert!(after_discharge >= -SOC_TOLERANCE);
        }

        #[test]
        fn round_trip_loses_energy(e in 0.2f64..=0.8, amount in 0.01f64..=0.1) {
            let spec = spec_const(0.9);
            let up = spec.soc_step(e, 0.0, amount).unwrap();
            // Discharging the same market-side energy ends strictly below e.
            let down = spec.soc_step(up, amount, 0.0).unwrap();
            prop_assert!(down < e);
        }
    }
}
