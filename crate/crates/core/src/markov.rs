//! Price discretization and hourly Markov transition training.
//!
//! Prices (or DAP-RTP biases) are discretized into `N` nodes: evenly spaced
//! interior intervals on a configured band plus an unbounded node on each
//! end for negative prices / spikes. Transition matrices are estimated per
//! hour of day by counting consecutive observation pairs; matrices may be
//! split further by calendar class (seasonal or weekly). A row with no
//! observations stays all-zero and is resolved later by value-function
//! interpolation.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pricedata::{CalendarScheme, PriceSeries};

pub const HOURS_PER_DAY: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Rtp,
    Bias,
}

/// Price nodes: `cuts` holds the N-1 finite boundaries, so node `i` covers
/// `[cuts[i-1], cuts[i])`, with the lowest node unbounded below and the
/// highest unbounded above. `reps` holds one representative value per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeGrid {
    pub kind: GridKind,
    cuts: Vec<f64>,
    reps: Vec<f64>,
}

impl NodeGrid {
    pub fn from_parts(kind: GridKind, cuts: Vec<f64>, reps: Vec<f64>) -> Result<Self> {
        if reps.len() < 2 {
            return Err(Error::InvalidGrid("need at least 2 nodes".into()));
        }
        if cuts.len() + 1 != reps.len() {
            return Err(Error::InvalidGrid(format!(
                "{} cuts do not delimit {} nodes",
                cuts.len(),
                reps.len()
            )));
        }
        if !cuts.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidGrid("cuts must be strictly increasing".into()));
        }
        for i in 1..reps.len() - 1 {
            if reps[i] < cuts[i - 1] || reps[i] >= cuts[i] {
                return Err(Error::InvalidGrid(format!(
                    "representative {} of interior node {i} outside [{}, {})",
                    reps[i],
                    cuts[i - 1],
                    cuts[i]
                )));
            }
        }
        Ok(Self { kind, cuts, reps })
    }

    /// Evenly spaced interior nodes on `[low, high)` plus two unbounded spike
    /// nodes. Interior representatives are interval midpoints; spike
    /// representatives are the mean of training prices falling in the spike
    /// region, falling back to the adjacent bound when the region is empty.
    pub fn build(
        kind: GridKind,
        interior_count: usize,
        low: f64,
        high: f64,
        training: &PriceSeries,
    ) -> Result<Self> {
        if low >= high || !low.is_finite() || !high.is_finite() {
            return Err(Error::InvalidGrid(format!("low {low} must be below high {high}")));
        }
        if interior_count == 0 {
            return Err(Error::InvalidGrid("need at least 1 interior node".into()));
        }
        if training.n_observed() == 0 {
            return Err(Error::EmptyTraining);
        }
        let width = (high - low) / interior_count as f64;
        let cuts: Vec<f64> = (0..=interior_count)
            .map(|k| low + width * k as f64)
            .collect();
        let mut reps = Vec::with_capacity(interior_count + 2);
        reps.push(spike_mean(training, |p| p < low).unwrap_or_else(|| {
            log::warn!("no training prices below {low}; spike representative falls back to bound");
            low
        }));
        for k in 0..interior_count {
            reps.push(low + width * (k as f64 + 0.5));
        }
        reps.push(spike_mean(training, |p| p >= high).unwrap_or_else(|| {
            log::warn!("no training prices at or above {high}; spike representative falls back to bound");
            high
        }));
        Self::from_parts(kind, cuts, reps)
    }

    pub fn n_nodes(&self) -> usize {
        self.reps.len()
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn reps(&self) -> &[f64] {
        &self.reps
    }

    pub fn lower_bound(&self, i: usize) -> f64 {
        if i == 0 {
            f64::NEG_INFINITY
        } else {
            self.cuts[i - 1]
        }
    }

    pub fn upper_bound(&self, i: usize) -> f64 {
        if i == self.cuts.len() {
            f64::INFINITY
        } else {
            self.cuts[i]
        }
    }

    /// The unique node whose half-open interval contains `price`.
    pub fn assign(&self, price: f64) -> usize {
        self.cuts.partition_point(|&c| c <= price)
    }
}

fn spike_mean(training: &PriceSeries, pred: impl Fn(f64) -> bool) -> Option<f64> {
    let (n, sum) = training
        .observed()
        .filter(|(_, p)| pred(*p))
        .fold((0usize, 0.0), |(n, s), (_, p)| (n + 1, s + p));
    (n > 0).then(|| sum / n as f64)
}

/// Hourly transition matrices over a node grid, one set per calendar class.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    pub grid: NodeGrid,
    pub scheme: CalendarScheme,
    pub stage_independent: bool,
    /// `matrices[class][hour]` is a row-major N*N matrix.
    matrices: Vec<Vec<Vec<f64>>>,
}

impl TransitionModel {
    pub fn n_nodes(&self) -> usize {
        self.grid.n_nodes()
    }

    /// Row-major N*N matrix for (class, hour).
    pub fn matrix(&self, class: usize, hour: usize) -> &[f64] {
        &self.matrices[class][hour]
    }

    pub fn row(&self, class: usize, hour: usize, node: usize) -> &[f64] {
        let n = self.n_nodes();
        &self.matrices[class][hour][node * n..(node + 1) * n]
    }

    /// Fraction of (class, hour, node) rows with observations.
    pub fn row_coverage(&self) -> f64 {
        let n = self.n_nodes();
        let mut total = 0usize;
        let mut covered = 0usize;
        for class in &self.matrices {
            for m in class {
                for i in 0..n {
                    total += 1;
                    if m[i * n..(i + 1) * n].iter().any(|&p| p > 0.0) {
                        covered += 1;
                    }
                }
            }
        }
        covered as f64 / total as f64
    }
}

/// Estimate hourly transition probabilities from consecutive observation
/// pairs. A pair is counted only when both slots are observed and adjacent
/// on the lattice; the pair's hour and class come from the first point.
/// With `stage_independent`, every row of a matrix is the hour's marginal
/// distribution of next-step nodes.
pub fn train_transitions(
    training: &PriceSeries,
    grid: NodeGrid,
    scheme: CalendarScheme,
    stage_independent: bool,
) -> Result<TransitionModel> {
    if training.n_observed() < 2 {
        return Err(if training.n_observed() == 0 {
            Error::EmptyTraining
        } else {
            Error::TrainingTooShort
        });
    }
    let n = grid.n_nodes();
    let n_classes = scheme.n_classes();
    let mut counts = vec![vec![vec![0u64; n * n]; HOURS_PER_DAY]; n_classes];

    let slots = training.slots();
    for idx in 0..slots.len().saturating_sub(1) {
        let (Some(cur), Some(next)) = (slots[idx], slots[idx + 1]) else {
            continue;
        };
        let ts = training.ts_of_slot(idx);
        let class = scheme.class_of(ts);
        let hour = chrono::Timelike::hour(&ts) as usize;
        let i = grid.assign(cur);
        let j = grid.assign(next);
        counts[class][hour][i * n + j] += 1;
    }

    let mut matrices = vec![vec![vec![0.0f64; n * n]; HOURS_PER_DAY]; n_classes];
    for c in 0..n_classes {
        for h in 0..HOURS_PER_DAY {
            let cnt = &counts[c][h];
            let m = &mut matrices[c][h];
            if stage_independent {
                let total: u64 = cnt.iter().sum();
                if total == 0 {
                    continue;
                }
                let mut marginal = vec![0.0f64; n];
                for i in 0..n {
                    for j in 0..n {
                        marginal[j] += cnt[i * n + j] as f64;
                    }
                }
                for p in &mut marginal {
                    *p /= total as f64;
                }
                for i in 0..n {
                    m[i * n..(i + 1) * n].copy_from_slice(&marginal);
                }
            } else {
                for i in 0..n {
                    let denom: u64 = cnt[i * n..(i + 1) * n].iter().sum();
                    if denom == 0 {
                        continue;
                    }
                    for j in 0..n {
                        m[i * n + j] = cnt[i * n + j] as f64 / denom as f64;
                    }
                }
            }
        }
    }

    Ok(TransitionModel {
        grid,
        scheme,
        stage_independent,
        matrices,
    })
}

/// Per-stage node values for one operating day: bias grids shift every
/// node's representative by the DAP of the stage's hour, RTP grids pass
/// through unchanged. Returns `stages x nodes`, row-major per stage.
pub fn realized_node_values(
    grid: &NodeGrid,
    dap_day: &PriceSeries,
    date: chrono::NaiveDate,
    interval_min: u32,
) -> Result<Vec<Vec<f64>>> {
    let stages = (24 * 60 / interval_min) as usize;
    let midnight = date.and_hms_opt(0, 0, 0).unwrap();
    let mut out = Vec::with_capacity(stages);
    for t in 0..stages {
        let ts = midnight + chrono::Duration::minutes(t as i64 * i64::from(interval_min));
        let offset = match grid.kind {
            GridKind::Rtp => 0.0,
            GridKind::Bias => dap_day
                .value_for_hour_of(ts)
                .ok_or(Error::UncoveredHour(crate::pricedata::hour_start(ts)))?,
        };
        out.push(grid.reps().iter().map(|r| r + offset).collect());
    }
    Ok(out)
}

// --- persistence -----------------------------------------------------------

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    kind: GridKind,
    scheme: CalendarScheme,
    stage_independent: bool,
    grid: GridSection,
    /// Keyed by class label; each class holds 24 N*N matrices (nested rows).
    classes: std::collections::BTreeMap<String, ClassSection>,
}

#[derive(Serialize, Deserialize)]
struct GridSection {
    bounds: Vec<f64>,
    reps: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ClassSection {
    hours: Vec<Vec<Vec<f64>>>,
}

impl TransitionModel {
    pub fn save_json(&self, out: impl Write) -> Result<()> {
        let n = self.n_nodes();
        let mut classes = std::collections::BTreeMap::new();
        for (c, label) in self.scheme.class_labels().iter().enumerate() {
            let hours = self.matrices[c]
                .iter()
                .map(|m| m.chunks(n).map(<[f64]>::to_vec).collect())
                .collect();
            classes.insert((*label).to_string(), ClassSection { hours });
        }
        let file = ModelFile {
            version: MODEL_FORMAT_VERSION,
            kind: self.grid.kind,
            scheme: self.scheme,
            stage_independent: self.stage_independent,
            grid: GridSection {
                bounds: self.grid.cuts().to_vec(),
                reps: self.grid.reps().to_vec(),
            },
            classes,
        };
        serde_json::to_writer_pretty(out, &file)?;
        Ok(())
    }

    pub fn load_json(source: impl Read) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(source)?;
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::BadModelFile(format!(
                "unsupported version {}",
                file.version
            )));
        }
        let grid = NodeGrid::from_parts(file.kind, file.grid.bounds, file.grid.reps)?;
        let n = grid.n_nodes();
        let labels = file.scheme.class_labels();
        let mut matrices = Vec::with_capacity(labels.len());
        for label in labels {
            let class = file
                .classes
                .get(*label)
                .ok_or_else(|| Error::BadModelFile(format!("missing class `{label}`")))?;
            if class.hours.len() != HOURS_PER_DAY {
                return Err(Error::BadModelFile(format!(
                    "class `{label}` has {} hours",
                    class.hours.len()
                )));
            }
            let mut per_hour = Vec::with_capacity(HOURS_PER_DAY);
            for rows in &class.hours {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::BadModelFile(format!(
                        "class `{label}` matrix is not {n}x{n}"
                    )));
                }
                per_hour.push(rows.concat());
            }
            matrices.push(per_hour);
        }
        let model = TransitionModel {
            grid,
            scheme: file.scheme,
            stage_independent: file.stage_independent,
            matrices,
        };
        model.validate_rows()?;
        Ok(model)
    }

    fn validate_rows(&self) -> Result<()> {
        let n = self.n_nodes();
        for class in &self.matrices {
            for m in class {
                for i in 0..n {
                    let row = &m[i * n..(i + 1) * n];
                    if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                        return Err(Error::BadModelFile(format!(
                            "row {i} has probabilities outside [0,1]"
                        )));
                    }
                    let sum: f64 = row.iter().sum();
                    if sum != 0.0 && (sum - 1.0).abs() > 1e-9 {
                        return Err(Error::BadModelFile(format!("row {i} sums to {sum}")));
                    }
                }
            }
        }
        Ok(())
    }
}
