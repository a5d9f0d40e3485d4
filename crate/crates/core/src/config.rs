//! Run configuration: a single JSON document per run, with CLI flags able
//! to override the top-level fields.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::GridKind;
use crate::pricedata::CalendarScheme;
use crate::storage::{EfficiencyCurve, StorageSpec};

/// Arbitrage setting: the eight Markov-model variants plus two benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "RT-Idp")]
    RtIdp,
    #[serde(rename = "RT-Dep")]
    RtDep,
    #[serde(rename = "RT-Dep-S")]
    RtDepS,
    #[serde(rename = "RT-Dep-W")]
    RtDepW,
    #[serde(rename = "DB-Idp")]
    DbIdp,
    #[serde(rename = "DB-Dep")]
    DbDep,
    #[serde(rename = "DB-Dep-S")]
    DbDepS,
    #[serde(rename = "DB-Dep-W")]
    DbDepW,
    #[serde(rename = "BEN-DA")]
    BenDa,
    #[serde(rename = "BEN-PF")]
    BenPf,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::RtIdp,
        Variant::RtDep,
        Variant::RtDepS,
        Variant::RtDepW,
        Variant::DbIdp,
        Variant::DbDep,
        Variant::DbDepS,
        Variant::DbDepW,
        Variant::BenDa,
        Variant::BenPf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::RtIdp => "RT-Idp",
            Variant::RtDep => "RT-Dep",
            Variant::RtDepS => "RT-Dep-S",
            Variant::RtDepW => "RT-Dep-W",
            Variant::DbIdp => "DB-Idp",
            Variant::DbDep => "DB-Dep",
            Variant::DbDepS => "DB-Dep-S",
            Variant::DbDepW => "DB-Dep-W",
            Variant::BenDa => "BEN-DA",
            Variant::BenPf => "BEN-PF",
        }
    }

    pub fn is_benchmark(&self) -> bool {
        matches!(self, Variant::BenDa | Variant::BenPf)
    }

    /// Grid kind for model-based variants.
    pub fn grid_kind(&self) -> Option<GridKind> {
        match self {
            Variant::RtIdp | Variant::RtDep | Variant::RtDepS | Variant::RtDepW => {
                Some(GridKind::Rtp)
            }
            Variant::DbIdp | Variant::DbDep | Variant::DbDepS | Variant::DbDepW => {
                Some(GridKind::Bias)
            }
            _ => None,
        }
    }

    pub fn scheme(&self) -> CalendarScheme {
        match self {
            Variant::RtDepS | Variant::DbDepS => CalendarScheme::Seasonal,
            Variant::RtDepW | Variant::DbDepW => CalendarScheme::Weekly,
            _ => CalendarScheme::None,
        }
    }

    pub fn stage_independent(&self) -> bool {
        matches!(self, Variant::RtIdp | Variant::DbIdp)
    }

    /// Whether the variant needs day-ahead prices over the test range.
    pub fn needs_test_dap(&self) -> bool {
        matches!(self.grid_kind(), Some(GridKind::Bias)) || *self == Variant::BenDa
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Storage block of the run config. Power is a MW rating; the conversion to
/// MWh-per-interval happens once, in [`StorageConfig::to_spec`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StorageConfig {
    #[serde(rename = "P_MW")]
    pub p_mw: f64,
    #[serde(rename = "E_MWh")]
    pub e_mwh: f64,
    #[serde(rename = "cost_per_MWh")]
    pub cost_per_mwh: f64,
    #[serde(rename = "e_f_MWh", default)]
    pub e_f_mwh: f64,
    pub efficiency: EfficiencyCurve,
    /// Optional separate discharge curve; defaults to `efficiency`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficiency_discharge: Option<EfficiencyCurve>,
}

impl StorageConfig {
    pub fn to_spec(&self, interval_min: u32) -> Result<StorageSpec> {
        let spec = StorageSpec {
            power: self.p_mw * f64::from(interval_min) / 60.0,
            capacity: self.e_mwh,
            marginal_cost: self.cost_per_mwh,
            terminal_floor: self.e_f_mwh,
            eta_charge: self.efficiency.clone(),
            eta_discharge: self
                .efficiency_discharge
                .clone()
                .unwrap_or_else(|| self.efficiency.clone()),
            interval_min,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn p2e(&self) -> f64 {
        self.p_mw / self.e_mwh
    }

    /// Same battery at a different power-to-energy ratio and discharge cost.
    pub fn with_p2e_and_cost(&self, p2e: f64, cost: f64) -> StorageConfig {
        let mut out = self.clone();
        out.p_mw = p2e * self.e_mwh;
        out.cost_per_mwh = cost;
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    pub kind: GridKind,
    pub interior: usize,
    pub low: f64,
    pub high: f64,
}

impl GridConfig {
    /// Paper defaults: 20 interior nodes on [0, 200] for RTP, 10 interior
    /// nodes on [-50, 50] for the DAP-RTP bias.
    pub fn default_for(kind: GridKind) -> Self {
        match kind {
            GridKind::Rtp => GridConfig {
                kind,
                interior: 20,
                low: 0.0,
                high: 200.0,
            },
            GridKind::Bias => GridConfig {
                kind,
                interior: 10,
                low: -50.0,
                high: 50.0,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataConfig {
    #[serde(default)]
    pub rtp_train: Vec<PathBuf>,
    #[serde(default)]
    pub dap_train: Vec<PathBuf>,
    #[serde(default)]
    pub rtp_test: Vec<PathBuf>,
    #[serde(default)]
    pub dap_test: Vec<PathBuf>,
    /// Price interval of RTP files, minutes.
    #[serde(default = "default_interval")]
    pub interval_min: u32,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            rtp_train: Vec::new(),
            dap_train: Vec::new(),
            rtp_test: Vec::new(),
            dap_test: Vec::new(),
            interval_min: default_interval(),
        }
    }
}

fn default_interval() -> u32 {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(rename = "P2E")]
    pub p2e: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub zone: String,
    pub variant: Variant,
    #[serde(default)]
    pub data: DataConfig,
    /// Node grid; defaults to the variant's paper layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<CalendarScheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_independent: Option<bool>,
    pub storage: StorageConfig,
    #[serde(default = "default_segments")]
    pub soc_segments: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_soc: Option<f64>,
    /// Trained model JSON (written by `train`, consumed by `simulate`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_file: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_version() -> u32 {
    1
}

fn default_segments() -> usize {
    1000
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::Config {
            field: "config".into(),
            reason: format!("{}: {e}", path.as_ref().display()),
        })?;
        let cfg: RunConfig = serde_json::from_reader(std::io::BufReader::new(file))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::Config {
                field: "version".into(),
                reason: format!("unsupported version {}", self.version),
            });
        }
        if self.zone.is_empty() {
            return Err(Error::Config {
                field: "zone".into(),
                reason: "zone must be set".into(),
            });
        }
        if self.soc_segments < 2 {
            return Err(Error::Config {
                field: "soc_segments".into(),
                reason: "need at least 2 SoC samples".into(),
            });
        }
        self.storage.to_spec(self.data.interval_min).map(|_| ())
    }

    /// Grid layout: explicit block, else the variant's default.
    pub fn grid_config(&self) -> Result<GridConfig> {
        if let Some(g) = &self.grid {
            return Ok(g.clone());
        }
        let kind = self.variant.grid_kind().ok_or_else(|| Error::Config {
            field: "grid".into(),
            reason: format!("variant {} does not train a grid", self.variant),
        })?;
        Ok(GridConfig::default_for(kind))
    }

    pub fn scheme(&self) -> CalendarScheme {
        self.scheme.unwrap_or_else(|| self.variant.scheme())
    }

    pub fn stage_independent(&self) -> bool {
        self.stage_independent
            .unwrap_or_else(|| self.variant.stage_independent())
    }

    pub fn sim_options(&self) -> crate::simulate::SimOptions {
        crate::simulate::SimOptions {
            soc_segments: self.soc_segments,
            initial_soc: self.initial_soc,
            horizon: self.horizon,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_round_trip_names() {
        for v in Variant::ALL {
            assert_eq!(Variant::from_str(v.name()).unwrap(), v);
        }
        assert!(matches!(
            Variant::from_str("RT-Bogus"),
            Err(Error::UnknownVariant(_))
        ));
    }

    #[test]
    fn variant_properties() {
        assert_eq!(Variant::DbDepS.grid_kind(), Some(GridKind::Bias));
        assert_eq!(Variant::DbDepS.scheme(), CalendarScheme::Seasonal);
        assert!(Variant::RtIdp.stage_independent());
        assert!(!Variant::RtDep.stage_independent());
        assert!(Variant::BenDa.needs_test_dap());
        assert!(!Variant::BenPf.needs_test_dap());
    }

    #[test]
    fn storage_block_parses_spec_field_names() {
        let json = r#"{
            "P_MW": 0.5,
            "E_MWh": 1.0,
            "cost_per_MWh": 10.0,
            "e_f_MWh": 0.0,
            "efficiency": {"kind": "constant", "value": 0.9}
        }"#;
        let cfg: StorageConfig = serde_json::from_str(json).unwrap();
        let spec = cfg.to_spec(5).unwrap();
        assert!((spec.power - 0.5 / 12.0).abs() < 1e-12);
        assert_eq!(spec.capacity, 1.0);
        assert_eq!(cfg.p2e(), 0.5);
    }

    #[test]
    fn step_efficiency_parses() {
        let json = r#"{"kind": "step", "breaks": [0.2, 0.9], "values": [0.8, 0.9, 0.7]}"#;
        let curve: EfficiencyCurve = serde_json::from_str(json).unwrap();
        assert_eq!(curve.at_fraction(0.95), 0.7);
    }

    #[test]
    fn config_defaults_follow_variant() {
        let json = r#"{
            "zone": "NYC",
            "variant": "DB-Dep",
            "storage": {
                "P_MW": 0.5, "E_MWh": 1.0, "cost_per_MWh": 10.0,
                "efficiency": {"kind": "constant", "value": 0.9}
            },
            "out_dir": "runs/x"
        }"#;
        let cfg: RunConfig = serde_json::from_str(json).unwrap();
        cfg.validate().unwrap();
        let grid = cfg.grid_config().unwrap();
        assert_eq!(grid.interior, 10);
        assert_eq!(grid.low, -50.0);
        assert_eq!(cfg.scheme(), CalendarScheme::None);
        assert_eq!(cfg.soc_segments, 1000);
    }

    #[test]
    fn bad_storage_rejected_with_field() {
        let json = r#"{
            "zone": "NYC",
            "variant": "BEN-PF",
            "storage": {
                "P_MW": -1.0, "E_MWh": 1.0, "cost_per_MWh": 10.0,
                "efficiency": {"kind": "constant", "value": 0.9}
            },
            "out_dir": "runs/x"
        }"#;
        let cfg: RunConfig = serde_json::from_str(json).unwrap();
        assert!(cfg.validate().is_err());
    }
}
