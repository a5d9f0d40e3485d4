//! Backward analytical SDP pass over marginal value functions.
//!
//! The state of the recursion is, per price node, the derivative of the
//! value-to-go with respect to end-of-interval SoC, discretized on `M`
//! equally spaced SoC samples. Each backward step applies the closed-form
//! five-case update ([`q_update`]) at every node, then mixes the node
//! results through the hour's transition row ([`expect_over_transitions`]).
//! Nodes whose transition row is all-zero (never observed in training) get
//! a sentinel and are filled from the nearest stage of the same node.
//!
//! Stage `t` of the finished [`ValueCube`] holds the marginal value of SoC
//! at the *end* of interval `t`, conditioned on interval `t`'s price node —
//! exactly what the dispatch policy needs when interval `t`'s price is
//! revealed. Stage `T-1` is the terminal slice.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::markov::{TransitionModel, HOURS_PER_DAY};
use crate::pricedata::PriceSeries;
use crate::storage::StorageSpec;

/// Terminal marginal value below the SoC floor, $/MWh.
pub const TERMINAL_PENALTY_VALUE: f64 = 1000.0;

/// A day's chain for the backward pass: per-node representative prices with
/// a per-stage additive offset (zero for RTP grids, the hour's DAP for bias
/// grids), node boundaries in the same offset space, and one transition
/// matrix per hour of day.
#[derive(Debug, Clone)]
pub struct DayChain {
    pub t_stages: usize,
    pub interval_min: u32,
    /// N-1 finite node boundaries (empty for a single-node chain).
    pub cuts: Vec<f64>,
    /// N representative values.
    pub reps: Vec<f64>,
    /// Per-stage additive price offset, length `t_stages`.
    pub offsets: Vec<f64>,
    /// Row-major N*N matrix per hour of day.
    pub hourly: Vec<Vec<f64>>,
}

impl DayChain {
    /// Chain for one operating day under a trained model. Bias-grid models
    /// need the day's hourly DAP to value the nodes; RTP grids do not.
    pub fn from_model(
        model: &TransitionModel,
        class: usize,
        dap_day: Option<&PriceSeries>,
        day: chrono::NaiveDate,
        t_stages: usize,
        interval_min: u32,
    ) -> Result<Self> {
        let offsets = match model.grid.kind {
            crate::markov::GridKind::Rtp => vec![0.0; t_stages],
            crate::markov::GridKind::Bias => {
                let dap = dap_day.ok_or_else(|| {
                    Error::MissingArtifact("bias-grid model needs day-ahead prices".into())
                })?;
                let mut offsets = Vec::with_capacity(t_stages);
                for t in 0..t_stages {
                    let minutes = t as i64 * i64::from(interval_min);
                    let ts = day.and_hms_opt(0, 0, 0).unwrap() + chrono::Duration::minutes(minutes);
                    let hourly = dap
                        .value_for_hour_of(ts)
                        .ok_or(Error::UncoveredHour(crate::pricedata::hour_start(ts)))?;
                    offsets.push(hourly);
                }
                offsets
            }
        };
        let hourly = (0..HOURS_PER_DAY)
            .map(|h| model.matrix(class, h).to_vec())
            .collect();
        Ok(Self {
            t_stages,
            interval_min,
            cuts: model.grid.cuts().to_vec(),
            reps: model.grid.reps().to_vec(),
            offsets,
            hourly,
        })
    }

    /// Single-node deterministic chain whose stage prices are `prices`
    /// (used for perfect-forecast and forecast-driven deterministic passes).
    pub fn degenerate(prices: &[f64], interval_min: u32) -> Self {
        Self {
            t_stages: prices.len(),
            interval_min,
            cuts: Vec::new(),
            reps: vec![0.0],
            offsets: prices.to_vec(),
            hourly: vec![vec![1.0]; HOURS_PER_DAY],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.reps.len()
    }

    pub fn hour_of_stage(&self, t: usize) -> usize {
        (t * self.interval_min as usize / 60) % HOURS_PER_DAY
    }

    /// Node price at stage `t`: representative value plus stage offset.
    pub fn node_price(&self, t: usize, i: usize) -> f64 {
        self.reps[i] + self.offsets[t]
    }

    /// Transition row out of node `i` for the step `t -> t+1`.
    pub fn row(&self, t: usize, i: usize) -> &[f64] {
        let n = self.n_nodes();
        let m = &self.hourly[self.hour_of_stage(t)];
        &m[i * n..(i + 1) * n]
    }

    /// Node containing realized price `lambda` at stage `t`.
    pub fn node_of(&self, t: usize, lambda: f64) -> usize {
        let shifted = lambda - self.offsets[t];
        self.cuts.partition_point(|&c| c <= shifted)
    }
}

/// Discretized value-function derivatives over (stage, node, SoC sample).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueCube {
    pub t_stages: usize,
    pub n_nodes: usize,
    pub m_segments: usize,
    pub capacity: f64,
    pub soc_grid: Vec<f64>,
    /// Node boundaries and per-stage offsets, for realized-price lookup.
    pub cuts: Vec<f64>,
    pub offsets: Vec<f64>,
    /// Row-major (t, i, m).
    values: Vec<f64>,
    /// Sentinels for (t, i) slices produced from an all-zero transition row.
    missing: Vec<bool>,
}

impl ValueCube {
    pub fn new_empty(
        t_stages: usize,
        n_nodes: usize,
        m_segments: usize,
        capacity: f64,
        cuts: Vec<f64>,
        offsets: Vec<f64>,
    ) -> Self {
        Self {
            t_stages,
            n_nodes,
            m_segments,
            capacity,
            soc_grid: soc_grid(capacity, m_segments),
            cuts,
            offsets,
            values: vec![0.0; t_stages * n_nodes * m_segments],
            missing: vec![false; t_stages * n_nodes],
        }
    }

    pub fn slice(&self, t: usize, i: usize) -> &[f64] {
        let base = (t * self.n_nodes + i) * self.m_segments;
        &self.values[base..base + self.m_segments]
    }

    pub fn slice_mut(&mut self, t: usize, i: usize) -> &mut [f64] {
        let base = (t * self.n_nodes + i) * self.m_segments;
        &mut self.values[base..base + self.m_segments]
    }

    pub fn set_slice(&mut self, t: usize, i: usize, slice: &[f64]) {
        self.slice_mut(t, i).copy_from_slice(slice);
    }

    pub fn is_missing(&self, t: usize, i: usize) -> bool {
        self.missing[t * self.n_nodes + i]
    }

    pub fn set_missing(&mut self, t: usize, i: usize, missing: bool) {
        self.missing[t * self.n_nodes + i] = missing;
    }

    pub fn node_of(&self, t: usize, lambda: f64) -> usize {
        let shifted = lambda - self.offsets[t];
        self.cuts.partition_point(|&c| c <= shifted)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `m` equally spaced SoC samples spanning `[0, capacity]`.
pub fn soc_grid(capacity: f64, m: usize) -> Vec<f64> {
    assert!(m >= 2, "need at least 2 SoC samples");
    let h = capacity / (m - 1) as f64;
    (0..m).map(|k| k as f64 * h).collect()
}

/// Linear interpolation of a sampled slice at SoC `e`, clamped to the grid.
#[inline]
pub fn interp_slice(slice: &[f64], capacity: f64, e: f64) -> f64 {
    let m = slice.len();
    let h = capacity / (m - 1) as f64;
    let x = e.clamp(0.0, capacity) / h;
    let k = (x.floor() as usize).min(m - 2);
    let frac = x - k as f64;
    slice[k] * (1.0 - frac) + slice[k + 1] * frac
}

/// Integral of the piecewise-linear sampled slice from 0 to `e` (the value
/// function recovered from its sampled derivative, up to a constant).
pub fn integrate_slice(slice: &[f64], capacity: f64, e: f64) -> f64 {
    let m = slice.len();
    let h = capacity / (m - 1) as f64;
    let e = e.clamp(0.0, capacity);
    let k = ((e / h).floor() as usize).min(m - 2);
    let mut acc = 0.0;
    for i in 0..k {
        acc += 0.5 * (slice[i] + slice[i + 1]) * h;
    }
    let v_e = interp_slice(slice, capacity, e);
    acc + 0.5 * (slice[k] + v_e) * (e - k as f64 * h)
}

/// Terminal marginal-value slice: `TERMINAL_PENALTY_VALUE` at SoC samples at
/// or below the floor `e_f`, zero above. A zero floor disables the device
/// entirely (the physical `e >= 0` bound needs no penalty).
pub fn terminal_value(spec: &StorageSpec, m: usize) -> Vec<f64> {
    let grid = soc_grid(spec.capacity, m);
    grid.iter()
        .map(|&e| {
            if spec.terminal_floor > 0.0 && e <= spec.terminal_floor {
                TERMINAL_PENALTY_VALUE
            } else {
                0.0
            }
        })
        .collect()
}

/// Closed-form marginal-value update: from the next value slice `v` and a
/// node price, produce the marginal value `q` of starting SoC for the
/// dispatch interval, on the same SoC grid.
///
/// At each sample `e` the five cases split on the price relative to the
/// marginal value of charging to the limit, charging partially, holding,
/// discharging partially, and discharging to the limit, with the power
/// rating replaced by the effective limits near the SoC boundaries. When a
/// full-power case fires but the binding limit is the SoC bound rather than
/// the rating, the marginal unit of starting SoC is not carried to the
/// landing SoC: an extra unit substitutes a purchase (worth `price/eta_b`)
/// or is sold on top (worth `(price-c)*eta_p`), so those corners take the
/// partial-action marginals. With `negative_price` the discharge cases are
/// disabled, matching the no-discharge constraint at negative prices.
pub fn q_update(
    v_slice: &[f64],
    node_price: f64,
    spec: &StorageSpec,
    negative_price: bool,
) -> Vec<f64> {
    let m = v_slice.len();
    let capacity = spec.capacity;
    let c = spec.marginal_cost;
    let grid = soc_grid(capacity, m);
    let mut q = Vec::with_capacity(m);
    for (k, &e) in grid.iter().enumerate() {
        let frac = e / capacity;
        let eta_b = spec.eta_charge.at_fraction(frac);
        let eta_p = spec.eta_discharge.at_fraction(frac);
        let soc_bound_charge = (capacity - e) / eta_b < spec.power;
        let soc_bound_discharge = e * eta_p < spec.power;
        let b_max = spec.power.min((capacity - e) / eta_b).max(0.0);
        let p_max = spec.power.min(e * eta_p).max(0.0);

        let v_at = v_slice[k];
        let v_hi = interp_slice(v_slice, capacity, e + b_max * eta_b);
        let thr_full_charge = v_hi * eta_b;
        let thr_charge = v_at * eta_b;

        let value = if node_price <= thr_full_charge {
            if soc_bound_charge {
                node_price / eta_b
            } else {
                v_hi
            }
        } else if node_price <= thr_charge {
            node_price / eta_b
        } else if negative_price {
            // Discharge is forbidden; the hold band extends upward.
            v_at
        } else {
            let v_lo = interp_slice(v_slice, capacity, e - p_max / eta_p);
            let thr_hold = (v_at / eta_p + c).max(0.0);
            let thr_discharge = (v_lo / eta_p + c).max(0.0);
            if node_price <= thr_hold {
                v_at
            } else if node_price <= thr_discharge || soc_bound_discharge {
                (node_price - c) * eta_p
            } else {
                v_lo
            }
        };
        q.push(value);
    }
    debug_assert!(q.iter().all(|x| x.is_finite()), "non-finite q value");
    q
}

/// Case thresholds of the five-case update at one SoC sample, in order.
/// Exposed for the threshold-ordering invariant checks.
pub fn q_update_thresholds(v_slice: &[f64], spec: &StorageSpec, k: usize) -> [f64; 4] {
    let m = v_slice.len();
    let capacity = spec.capacity;
    let grid = soc_grid(capacity, m);
    let e = grid[k];
    let frac = e / capacity;
    let eta_b = spec.eta_charge.at_fraction(frac);
    let eta_p = spec.eta_discharge.at_fraction(frac);
    let b_max = spec.power.min((capacity - e) / eta_b).max(0.0);
    let p_max = spec.power.min(e * eta_p).max(0.0);
    let v_at = v_slice[k];
    let v_hi = interp_slice(v_slice, capacity, e + b_max * eta_b);
    let v_lo = interp_slice(v_slice, capacity, e - p_max / eta_p);
    [
        v_hi * eta_b,
        v_at * eta_b,
        (v_at / eta_p + spec.marginal_cost).max(0.0),
        (v_lo / eta_p + spec.marginal_cost).max(0.0),
    ]
}

/// Probability-weighted mix of per-next-node q slices; an all-zero row
/// yields `None` (a missing slice to be interpolated later).
pub fn expect_over_transitions(q_slices: &[Vec<f64>], row: &[f64]) -> Option<Vec<f64>> {
    debug_assert_eq!(q_slices.len(), row.len());
    if row.iter().all(|&p| p == 0.0) {
        return None;
    }
    let m = q_slices[0].len();
    let mut out = vec![0.0; m];
    for (j, &p) in row.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (o, &qv) in out.iter_mut().zip(&q_slices[j]) {
            *o += p * qv;
        }
    }
    Some(out)
}

/// In-place projection onto non-increasing sequences (least-squares,
/// pool-adjacent-violators). Guards the case thresholds against
/// floating-point noise when the value function is provably monotone.
pub fn project_non_increasing(slice: &mut [f64]) {
    // PAV on the reversed (non-decreasing) problem: maintain a stack of
    // blocks (mean, count) and merge while decreasing.
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(slice.len());
    for &x in slice.iter() {
        let mut mean = x;
        let mut count = 1usize;
        while let Some(&(m_prev, c_prev)) = blocks.last() {
            if m_prev < mean {
                let total = c_prev + count;
                mean = (m_prev * c_prev as f64 + mean * count as f64) / total as f64;
                count = total;
                blocks.pop();
            } else {
                break;
            }
        }
        blocks.push((mean, count));
    }
    let mut idx = 0;
    for (mean, count) in blocks {
        for _ in 0..count {
            slice[idx] = mean;
            idx += 1;
        }
    }
}

/// Replace missing slices: each takes the non-missing slice of the same
/// node at the nearest stage (ties toward the later stage). A node missing
/// at every stage falls back to the across-node mean at each stage, with a
/// warning.
pub fn interpolate_missing(cube: &mut ValueCube) {
    let (t_stages, n_nodes, m) = (cube.t_stages, cube.n_nodes, cube.m_segments);
    let mut never_present = Vec::new();
    for i in 0..n_nodes {
        let present: Vec<usize> = (0..t_stages).filter(|&t| !cube.is_missing(t, i)).collect();
        if present.is_empty() {
            never_present.push(i);
            continue;
        }
        for t in 0..t_stages {
            if !cube.is_missing(t, i) {
                continue;
            }
            // Nearest present stage; tie toward the later one.
            let nearest = *present
                .iter()
                .min_by_key(|&&s| {
                    let d = s.abs_diff(t);
                    (d, if s > t { 0 } else { 1 })
                })
                .unwrap();
            let src = cube.slice(nearest, i).to_vec();
            cube.set_slice(t, i, &src);
            cube.set_missing(t, i, false);
        }
    }
    if !never_present.is_empty() {
        log::warn!(
            "{} node(s) unvisited at every stage; filling with the per-stage mean slice",
            never_present.len()
        );
        for t in 0..t_stages {
            let mut mean = vec![0.0; m];
            let mut count = 0usize;
            for i in 0..n_nodes {
                if never_present.contains(&i) {
                    continue;
                }
                for (acc, &v) in mean.iter_mut().zip(cube.slice(t, i)) {
                    *acc += v;
                }
                count += 1;
            }
            assert!(count > 0, "no visited node at stage {t}");
            for v in &mut mean {
                *v /= count as f64;
            }
            for &i in &never_present {
                cube.set_slice(t, i, &mean);
                cube.set_missing(t, i, false);
            }
        }
    }
}

/// Full backward pass: terminal slice at the last stage, then stage `t`
/// computed from stage `t+1` alone. During the recursion a missing slice is
/// stood in for by the nearest later non-missing slice of the same node;
/// the finished cube is then run through [`interpolate_missing`] so persisted
/// slices follow the nearest-stage rule in both directions.
pub fn backward_pass(chain: &DayChain, spec: &StorageSpec, m: usize) -> Result<ValueCube> {
    let t_stages = chain.t_stages;
    let n = chain.n_nodes();
    if t_stages == 0 {
        return Err(Error::BadCube("zero stages".into()));
    }
    spec.validate()?;
    let mut cube = ValueCube::new_empty(
        t_stages,
        n,
        m,
        spec.capacity,
        chain.cuts.clone(),
        chain.offsets.clone(),
    );
    let project = spec.has_constant_efficiency();

    let terminal = terminal_value(spec, m);
    for i in 0..n {
        cube.set_slice(t_stages - 1, i, &terminal);
    }
    // Working copy per node: the slice the next q_update should consume
    // (equals the cube slice when present, else the nearest later one).
    let mut working: Vec<Vec<f64>> = vec![terminal; n];

    let mut q_slices: Vec<Vec<f64>> = Vec::with_capacity(n);
    for t in (0..t_stages - 1).rev() {
        q_slices.clear();
        for (j, w) in working.iter().enumerate() {
            let price = chain.node_price(t + 1, j);
            q_slices.push(q_update(w, price, spec, price < 0.0));
        }
        for (i, w) in working.iter_mut().enumerate() {
            match expect_over_transitions(&q_slices, chain.row(t, i)) {
                Some(mut slice) => {
                    if project {
                        project_non_increasing(&mut slice);
                    }
                    cube.set_slice(t, i, &slice);
                    *w = slice;
                }
                None => {
                    cube.set_missing(t, i, true);
                    cube.set_slice(t, i, w);
                }
            }
        }
    }
    interpolate_missing(&mut cube);
    Ok(cube)
}

// --- persistence -----------------------------------------------------------

const CUBE_MAGIC: &[u8; 4] = b"VCUB";
const CUBE_VERSION: u32 = 1;

impl ValueCube {
    /// Binary layout (all little-endian): magic `VCUB`, u32 version, u32 T,
    /// u32 N, u32 M, f64 capacity, M f64 SoC samples, N-1 f64 cuts, T f64
    /// offsets, then T*N*M f64 values row-major in (t, i, m).
    pub fn save_binary(&self, mut out: impl Write) -> Result<()> {
        out.write_all(CUBE_MAGIC)?;
        out.write_all(&CUBE_VERSION.to_le_bytes())?;
        for dim in [self.t_stages, self.n_nodes, self.m_segments] {
            out.write_all(&(u32::try_from(dim).expect("dimension fits u32")).to_le_bytes())?;
        }
        out.write_all(&self.capacity.to_le_bytes())?;
        for xs in [&self.soc_grid, &self.cuts, &self.offsets, &self.values] {
            for x in xs.iter() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load_binary(mut source: impl Read) -> Result<Self> {
        let bad = |what: &str| Error::BadCube(what.into());
        let mut magic = [0u8; 4];
        source.read_exact(&mut magic)?;
        if &magic != CUBE_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u32buf = [0u8; 4];
        source.read_exact(&mut u32buf)?;
        if u32::from_le_bytes(u32buf) != CUBE_VERSION {
            return Err(bad("unsupported version"));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            source.read_exact(&mut u32buf)?;
            *d = u32::from_le_bytes(u32buf) as usize;
        }
        let [t_stages, n_nodes, m_segments] = dims;
        let mut f64buf = [0u8; 8];
        let mut read_f64s = |source: &mut dyn Read, count: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                source.read_exact(&mut f64buf)?;
                out.push(f64::from_le_bytes(f64buf));
            }
            Ok(out)
        };
        let capacity = read_f64s(&mut source, 1)?[0];
        let soc_grid = read_f64s(&mut source, m_segments)?;
        let cuts = read_f64s(&mut source, n_nodes.saturating_sub(1))?;
        let offsets = read_f64s(&mut source, t_stages)?;
        let values = read_f64s(&mut source, t_stages * n_nodes * m_segments)?;
        Ok(Self {
            t_stages,
            n_nodes,
            m_segments,
            capacity,
            soc_grid,
            cuts,
            offsets,
            values,
            missing: vec![false; t_stages * n_nodes],
        })
    }
}
