//! Urban HUDN layouts: buildings, macro/small base-station sites and the UE
//! candidate grid, plus sampled activation events.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::math;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Euclidean distance in the ground plane.
    pub fn ground_distance(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        math::sqrt(dx * dx + dy * dy)
    }

    /// 3D distance `sqrt(d^2 + h^2)`.
    pub fn distance(&self, other: &Point3) -> f64 {
        let d = self.ground_distance(other);
        let h = self.z - other.z;
        math::sqrt(d * d + h * h)
    }
}

/// Axis-aligned box obstacle standing on the ground.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Building {
    /// Lower-left ground corner `(x, y)`.
    pub origin: [f64; 2],
    pub width: f64,
    pub length: f64,
    pub height: f64,
}

impl Building {
    pub fn min_corner(&self) -> [f64; 3] {
        [self.origin[0], self.origin[1], 0.0]
    }

    pub fn max_corner(&self) -> [f64; 3] {
        [
            self.origin[0] + self.width,
            self.origin[1] + self.length,
            self.height,
        ]
    }

    /// Closed footprint test.
    pub fn covers(&self, x: f64, y: f64) -> bool {
        x >= self.origin[0]
            && x <= self.origin[0] + self.width
            && y >= self.origin[1]
            && y <= self.origin[1] + self.length
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Macro,
    Small,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BsSite {
    pub id: usize,
    pub tier: Tier,
    pub position: Point3,
    /// Transmit-power ceiling in watts.
    pub p_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Side of the square cell, metres.
    pub side_length: f64,
    pub n_macro: usize,
    pub n_small: usize,
    pub n_buildings: usize,
    pub building_width: f64,
    pub building_length: f64,
    pub building_height: f64,
    /// UE grid pitch, metres. Must divide `side_length`.
    pub grid_resolution: f64,
    pub macro_height: f64,
    pub small_height: f64,
    pub ue_height: f64,
    /// Antenna height above the roof for sites on a building footprint.
    pub roof_clearance: f64,
    pub macro_power_dbm: f64,
    pub small_power_dbm: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            side_length: 200.0,
            n_macro: 5,
            n_small: 100,
            n_buildings: 20,
            building_width: 20.0,
            building_length: 20.0,
            building_height: 30.0,
            grid_resolution: 5.0,
            macro_height: 25.0,
            small_height: 10.0,
            ue_height: 1.5,
            roof_clearance: 1.0,
            macro_power_dbm: 50.0,
            small_power_dbm: 20.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(&'static str),
    #[error("requested {requested} active UEs but the grid has {available} points")]
    TooManyUes { requested: usize, available: usize },
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let positive = [
            (self.side_length, "side_length must be positive"),
            (self.grid_resolution, "grid_resolution must be positive"),
            (self.building_width, "building_width must be positive"),
            (self.building_length, "building_length must be positive"),
            (self.building_height, "building_height must be positive"),
            (self.macro_height, "macro_height must be positive"),
            (self.small_height, "small_height must be positive"),
            (self.ue_height, "ue_height must be positive"),
        ];
        for (v, msg) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ScenarioError::InvalidConfig(msg));
            }
        }
        if !(self.roof_clearance.is_finite() && self.roof_clearance >= 0.0) {
            return Err(ScenarioError::InvalidConfig(
                "roof_clearance must be non-negative",
            ));
        }
        if self.n_macro == 0 {
            return Err(ScenarioError::InvalidConfig("at least one macro site required"));
        }
        let cells = self.side_length / self.grid_resolution;
        if (cells - libm::round(cells)).abs() > 1e-9 * cells.max(1.0) || libm::round(cells) < 1.0 {
            return Err(ScenarioError::InvalidConfig(
                "grid_resolution must divide side_length",
            ));
        }
        if self.n_buildings > 0
            && (self.building_width > self.side_length || self.building_length > self.side_length)
        {
            return Err(ScenarioError::InvalidConfig(
                "buildings must fit inside the cell",
            ));
        }
        if !(self.macro_power_dbm.is_finite() && self.small_power_dbm.is_finite()) {
            return Err(ScenarioError::InvalidConfig("site powers must be finite"));
        }
        if self.n_small > 0 && self.macro_power_dbm <= self.small_power_dbm {
            return Err(ScenarioError::InvalidConfig(
                "macro power must exceed small-cell power",
            ));
        }
        Ok(())
    }

    /// Grid points per side.
    pub fn grid_side(&self) -> usize {
        libm::round(self.side_length / self.grid_resolution) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub buildings: Vec<Building>,
    pub sites: Vec<BsSite>,
    /// UE candidate positions, row-major by x then y.
    pub grid: Vec<Point3>,
}

impl Scenario {
    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn p_max(&self) -> Vec<f64> {
        self.sites.iter().map(|s| s.p_max).collect()
    }

    /// SHA-256 over a canonical little-endian encoding of the whole scenario.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        let c = &self.config;
        h.update(b"hudn-scenario-v1");
        for v in [
            c.side_length,
            c.building_width,
            c.building_length,
            c.building_height,
            c.grid_resolution,
            c.macro_height,
            c.small_height,
            c.ue_height,
            c.roof_clearance,
            c.macro_power_dbm,
            c.small_power_dbm,
        ] {
            h.update(v.to_le_bytes());
        }
        for v in [c.n_macro, c.n_small, c.n_buildings] {
            h.update((v as u64).to_le_bytes());
        }
        h.update(c.seed.to_le_bytes());
        for b in &self.buildings {
            for v in [b.origin[0], b.origin[1], b.width, b.length, b.height] {
                h.update(v.to_le_bytes());
            }
        }
        for s in &self.sites {
            h.update((s.id as u64).to_le_bytes());
            h.update([matches!(s.tier, Tier::Macro) as u8]);
            for v in [s.position.x, s.position.y, s.position.z, s.p_max] {
                h.update(v.to_le_bytes());
            }
        }
        for p in &self.grid {
            for v in [p.x, p.y, p.z] {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

/// Macro ground positions, evenly spread over the cell.
///
/// One site sits at the centre; a perfect square `k^2` forms a `k x k`
/// lattice of cell centres; `k^2 + 1` is the centre plus that lattice (so
/// five macros give the centre and the four quarter-diagonal points); any
/// other count is a ring of radius `L/4` around the centre.
pub fn macro_layout(n: usize, side: f64) -> Vec<[f64; 2]> {
    let c = side / 2.0;
    let square = |n: usize| -> Option<usize> {
        let k = libm::round(math::sqrt(n as f64)) as usize;
        (k >= 2 && k * k == n).then_some(k)
    };
    let lattice = |k: usize| -> Vec<[f64; 2]> {
        let step = side / k as f64;
        let mut out = Vec::with_capacity(k * k);
        for a in 0..k {
            for b in 0..k {
                out.push([(a as f64 + 0.5) * step, (b as f64 + 0.5) * step]);
            }
        }
        out
    };
    match n {
        0 => Vec::new(),
        1 => alloc::vec![[c, c]],
        _ => {
            if let Some(k) = square(n) {
                lattice(k)
            } else if let Some(k) = square(n - 1) {
                let mut out = alloc::vec![[c, c]];
                out.extend(lattice(k));
                out
            } else {
                let r = side / 4.0;
                (0..n)
                    .map(|m| {
                        let a = 2.0 * PI * m as f64 / n as f64;
                        [c + r * libm::cos(a), c + r * libm::sin(a)]
                    })
                    .collect()
            }
        }
    }
}

fn mount_height(buildings: &[Building], x: f64, y: f64, default: f64, clearance: f64) -> f64 {
    buildings
        .iter()
        .filter(|b| b.covers(x, y))
        .map(|b| b.height + clearance)
        .fold(None, |m: Option<f64>, h| Some(m.map_or(h, |m| m.max(h))))
        .unwrap_or(default)
}

/// Builds the scenario for `config`. Pure in `(config, config.seed)`.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<Scenario, ScenarioError> {
    config.validate()?;
    let side = config.side_length;

    let mut brng = rng_from_seed(derive_seed(config.seed, "scenario/buildings"));
    let buildings: Vec<Building> = (0..config.n_buildings)
        .map(|_| {
            let x = brng.gen::<f64>() * (side - config.building_width);
            let y = brng.gen::<f64>() * (side - config.building_length);
            Building {
                origin: [x, y],
                width: config.building_width,
                length: config.building_length,
                height: config.building_height,
            }
        })
        .collect();

    let macro_w = math::dbm_to_watts(config.macro_power_dbm);
    let small_w = math::dbm_to_watts(config.small_power_dbm);
    let mut sites = Vec::with_capacity(config.n_macro + config.n_small);
    for [x, y] in macro_layout(config.n_macro, side) {
        let z = mount_height(&buildings, x, y, config.macro_height, config.roof_clearance);
        sites.push(BsSite {
            id: sites.len(),
            tier: Tier::Macro,
            position: Point3::new(x, y, z),
            p_max: macro_w,
        });
    }
    let mut srng = rng_from_seed(derive_seed(config.seed, "scenario/small-sites"));
    for _ in 0..config.n_small {
        let x = srng.gen::<f64>() * side;
        let y = srng.gen::<f64>() * side;
        let z = mount_height(&buildings, x, y, config.small_height, config.roof_clearance);
        sites.push(BsSite {
            id: sites.len(),
            tier: Tier::Small,
            position: Point3::new(x, y, z),
            p_max: small_w,
        });
    }

    let n = config.grid_side();
    let step = config.grid_resolution;
    let mut grid = Vec::with_capacity(n * n);
    for ix in 0..n {
        for iy in 0..n {
            grid.push(Point3::new(
                (ix as f64 + 0.5) * step,
                (iy as f64 + 0.5) * step,
                config.ue_height,
            ));
        }
    }

    Ok(Scenario {
        config: config.clone(),
        buildings,
        sites,
        grid,
    })
}

/// One activation pattern: the grid indices of the active UEs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Sorted, distinct grid indices.
    pub active_ue: Vec<usize>,
}

impl Event {
    pub fn new(mut active_ue: Vec<usize>) -> Self {
        active_ue.sort_unstable();
        active_ue.dedup();
        Self { active_ue }
    }

    /// Number of active UEs (`K_a`).
    pub fn k_a(&self) -> usize {
        self.active_ue.len()
    }
}

/// Draws `k_a` distinct grid points uniformly without replacement.
pub fn sample_event(scenario: &Scenario, k_a: usize, seed: u64) -> Result<Event, ScenarioError> {
    sample_event_from(scenario.grid.len(), k_a, seed)
}

pub fn sample_event_from(grid_len: usize, k_a: usize, seed: u64) -> Result<Event, ScenarioError> {
    if k_a > grid_len {
        return Err(ScenarioError::TooManyUes {
            requested: k_a,
            available: grid_len,
        });
    }
    let mut rng = rng_from_seed(seed);
    let mut idx = rand::seq::index::sample(&mut rng, grid_len, k_a).into_vec();
    idx.sort_unstable();
    Ok(Event { active_ue: idx })
}
