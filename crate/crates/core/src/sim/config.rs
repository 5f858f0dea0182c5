use serde::{Deserialize, Serialize};

use crate::client::{ClientConfig, Strategy};
use crate::model::{cycle_period, search_radius, Geometry, ModelError};

/// Simulation parameters. Field names double as the config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub addressing_bots: u32,
    pub region_bots: u32,
    pub regions: u32,
    /// Regions per map row; rows are `regions / region_columns`.
    pub region_columns: u32,
    /// `m`, grids per region.
    pub grids_per_region: u32,
    /// Cycles between churn draws.
    pub dynamics_period: u64,
    pub p_join: f64,
    pub p_leave: f64,
    pub cycles: u64,
    /// `k`, objects in the world.
    pub objects: u32,
    /// `l`, grid side in world units.
    pub grid_side: f64,
    /// Client speed in world units per cycle.
    pub velocity: f64,
    /// Defaults to the half diagonal of a region.
    pub r_search: Option<f64>,
    /// Defaults to the grid side.
    pub perception_range: Option<f64>,
    /// Cache byte budget; unbounded when absent.
    pub cache_capacity: Option<u64>,
    pub cache_refresh_period: u64,
    pub replicas: u32,
    pub objects_per_computer: u32,
    pub strategy: Strategy,
    pub dynamics: bool,
    pub seed: u64,
    pub ring_bits: u32,
    /// Load sampling window in cycles; no sampling when absent.
    pub load_window: Option<u64>,
    pub file_types: u32,
    pub files_per_type: u32,
    pub file_bytes: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            addressing_bots: 100,
            region_bots: 100,
            regions: 20,
            region_columns: 5,
            grids_per_region: 9,
            dynamics_period: 10,
            p_join: 0.1,
            p_leave: 0.1,
            cycles: 1000,
            objects: 100,
            grid_side: 100.0,
            velocity: 10.0,
            r_search: None,
            perception_range: None,
            cache_capacity: None,
            cache_refresh_period: 50,
            replicas: 3,
            objects_per_computer: 10,
            strategy: Strategy::Proximity,
            dynamics: false,
            seed: 42,
            ring_bits: 32,
            load_window: None,
            file_types: 2,
            files_per_type: 2,
            file_bytes: 64,
        }
    }
}

impl SimConfig {
    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, value) in [("p_join", self.p_join), ("p_leave", self.p_leave)] {
            if !(0.0..=1.0).contains(&value) {
                out.push(format!("{name} out of [0,1]"));
            }
        }
        for (name, value) in [
            ("addressing_bots", self.addressing_bots),
            ("region_bots", self.region_bots),
            ("regions", self.regions),
            ("region_columns", self.region_columns),
            ("grids_per_region", self.grids_per_region),
            ("replicas", self.replicas),
            ("objects_per_computer", self.objects_per_computer),
            ("file_types", self.file_types),
            ("files_per_type", self.files_per_type),
        ] {
            if value < 1 {
                out.push(format!("{name} must be at least 1"));
            }
        }
        for (name, value) in [("dynamics_period", self.dynamics_period), ("cache_refresh_period", self.cache_refresh_period)] {
            if value < 1 {
                out.push(format!("{name} must be at least 1"));
            }
        }
        if self.load_window == Some(0) {
            out.push("load_window must be at least 1".into());
        }
        if self.grids_per_region >= 1 && search_radius(1.0, self.grids_per_region).is_err() {
            out.push("m must be a perfect square".into());
        }
        if self.region_columns >= 1 && self.regions % self.region_columns != 0 {
            out.push("regions must be a multiple of region_columns".into());
        }
        if !(self.grid_side.is_finite() && self.grid_side > 0.0) {
            out.push("grid_side must be > 0".into());
        }
        if !(self.velocity.is_finite() && self.velocity >= 0.0) {
            out.push("velocity must be >= 0".into());
        }
        for (name, value) in [("r_search", self.r_search), ("perception_range", self.perception_range)] {
            if value.is_some_and(|v| !(v.is_finite() && v >= 0.0)) {
                out.push(format!("{name} must be >= 0"));
            }
        }
        if !(1..=63).contains(&self.ring_bits) {
            out.push("ring_bits must be in 1..=63".into());
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(violations))
        }
    }

    pub fn geometry(&self) -> Result<Geometry, ModelError> {
        Geometry::from_regions(self.region_columns, self.regions / self.region_columns, self.grid_side, self.grids_per_region)
    }

    pub fn d_r(&self) -> f64 {
        search_radius(self.grid_side, self.grids_per_region).unwrap_or(0.0)
    }

    pub fn client_config(&self) -> ClientConfig {
        ClientConfig {
            r_search: self.r_search.unwrap_or_else(|| self.d_r()),
            perception_range: self.perception_range.unwrap_or(self.grid_side),
            cache_capacity: self.cache_capacity,
        }
    }

    /// Cycles between retrieval cycles, `⌈√2·d_r / v⌉`; every cycle when the client stands still.
    pub fn retrieval_period(&self) -> u64 {
        cycle_period(self.d_r(), self.velocity).unwrap_or(1)
    }

    pub fn logical_computers(&self) -> u32 {
        self.objects.div_ceil(self.objects_per_computer.max(1))
    }

    /// Parses a JSON config; absent fields keep their defaults.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            ConfigError::Parse { line: inner.line(), path: e.path().to_string(), message: inner.to_string() }
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("config line {line}, field `{path}`: {message}")]
    Parse { line: usize, path: String, message: String },
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
}
