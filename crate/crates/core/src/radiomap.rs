//! Large-scale channel gains on the UE grid.
//!
//! Gains follow the two-branch power law `D * w^-theta`, with the branch
//! chosen by a purely geometric line-of-sight test against the building
//! boxes. Gains are kept linear; dB only appears at IO boundaries.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::math;
use crate::scenario::{Building, Point3, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathLossParams {
    /// LoS gain at unit distance (linear).
    pub d_los: f64,
    /// NLoS gain at unit distance (linear).
    pub d_nlos: f64,
    pub theta_los: f64,
    pub theta_nlos: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self {
            d_los: 10.38,
            d_nlos: 14.54,
            theta_los: 2.09,
            theta_nlos: 3.75,
        }
    }
}

impl PathLossParams {
    pub fn validate(&self) -> Result<(), RadioMapError> {
        let all_pos = [self.d_los, self.d_nlos, self.theta_los, self.theta_nlos]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !all_pos {
            return Err(RadioMapError::InvalidParams("path-loss parameters must be positive"));
        }
        if self.theta_nlos <= self.theta_los {
            return Err(RadioMapError::InvalidParams(
                "NLoS exponent must exceed the LoS exponent",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RadioMapError {
    #[error("invalid path-loss parameters: {0}")]
    InvalidParams(&'static str),
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("grid point {grid} coincides with site {site}")]
    Coincident { grid: usize, site: usize },
}

/// Dense `grid points x sites` matrix of linear gains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadioMap {
    pub gains: Matrix,
    pub scenario_digest: [u8; 32],
}

impl RadioMap {
    pub fn n_points(&self) -> usize {
        self.gains.rows()
    }

    pub fn n_sites(&self) -> usize {
        self.gains.cols()
    }

    /// Gain rows of the given grid points.
    pub fn rows_for(&self, grid_indices: &[usize]) -> Matrix {
        self.gains.select_rows(grid_indices)
    }
}

/// True iff the open segment `tx -> rx` touches any building box.
///
/// Boxes are closed, so a segment running along a face counts as blocked,
/// while a segment that only meets a box at one of its own endpoints does not.
pub fn los_blocked(tx: &Point3, rx: &Point3, buildings: &[Building]) -> bool {
    buildings.iter().any(|b| segment_hits_box(tx, rx, b))
}

fn segment_hits_box(a: &Point3, b: &Point3, bx: &Building) -> bool {
    let o = [a.x, a.y, a.z];
    let d = [b.x - a.x, b.y - a.y, b.z - a.z];
    let lo = bx.min_corner();
    let hi = bx.max_corner();
    let mut t_in = f64::NEG_INFINITY;
    let mut t_out = f64::INFINITY;
    for k in 0..3 {
        if d[k] == 0.0 {
            if o[k] < lo[k] || o[k] > hi[k] {
                return false;
            }
        } else {
            let t1 = (lo[k] - o[k]) / d[k];
            let t2 = (hi[k] - o[k]) / d[k];
            let (near, far) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            t_in = t_in.max(near);
            t_out = t_out.min(far);
            if t_in > t_out {
                return false;
            }
        }
    }
    // Clip to the segment; a contact only at t = 0 or t = 1 does not count.
    let lo_t = t_in.max(0.0);
    let hi_t = t_out.min(1.0);
    lo_t < hi_t || (lo_t == hi_t && lo_t > 0.0 && lo_t < 1.0)
}

/// `D w^-theta` for the LoS or NLoS branch.
pub fn path_gain(w: f64, los: bool, params: &PathLossParams) -> Result<f64, RadioMapError> {
    if !(w > 0.0) || !w.is_finite() {
        return Err(RadioMapError::NonPositiveDistance(w));
    }
    Ok(if los {
        params.d_los * math::pow(w, -params.theta_los)
    } else {
        params.d_nlos * math::pow(w, -params.theta_nlos)
    })
}

/// Gain for one grid point / site pair, with the 1 m near-field clamp.
pub fn link_gain(
    ue: &Point3,
    site: &Point3,
    buildings: &[Building],
    params: &PathLossParams,
) -> Result<f64, RadioMapError> {
    let w = ue.distance(site);
    if w == 0.0 {
        return Err(RadioMapError::NonPositiveDistance(w));
    }
    let los = !los_blocked(site, ue, buildings);
    path_gain(w.max(1.0), los, params)
}

/// Gain matrix for every grid point and site of `scenario`.
pub fn build_radio_map(
    scenario: &Scenario,
    params: &PathLossParams,
) -> Result<RadioMap, RadioMapError> {
    params.validate()?;
    let rows = scenario.grid.len();
    let cols = scenario.sites.len();
    let mut data = Vec::with_capacity(rows * cols);
    for (gi, ue) in scenario.grid.iter().enumerate() {
        for site in &scenario.sites {
            let g = link_gain(ue, &site.position, &scenario.buildings, params).map_err(|e| {
                match e {
                    RadioMapError::NonPositiveDistance(_) => RadioMapError::Coincident {
                        grid: gi,
                        site: site.id,
                    },
                    other => other,
                }
            })?;
            data.push(g);
        }
    }
    Ok(RadioMap {
        gains: Matrix::from_vec(rows, cols, data),
        scenario_digest: scenario.digest(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, BsSite, ScenarioConfig, Tier};

    fn bld(x: f64, y: f64, w: f64, l: f64, h: f64) -> Building {
        Building {
            origin: [x, y],
            width: w,
            length: l,
            height: h,
        }
    }

    #[test]
    fn no_buildings_never_blocks() {
        let a = Point3::new(0.0, 0.0, 10.0);
        let b = Point3::new(100.0, 50.0, 1.5);
        assert!(!los_blocked(&a, &b, &[]));
    }

    #[test]
    fn through_center_blocks() {
        let box_ = bld(40.0, 40.0, 20.0, 20.0, 30.0);
        let a = Point3::new(0.0, 50.0, 10.0);
        let b = Point3::new(100.0, 50.0, 10.0);
        assert!(los_blocked(&a, &b, &[box_]));
    }

    #[test]
    fn grazing_a_face_blocks() {
        // Segment lies in the plane y = 60 (the box's far face) at height 10.
        let box_ = bld(40.0, 40.0, 20.0, 20.0, 30.0);
        let a = Point3::new(0.0, 60.0, 10.0);
        let b = Point3::new(100.0, 60.0, 10.0);
        assert!(los_blocked(&a, &b, &[box_]));
        // Just outside the face is clear.
        let a = Point3::new(0.0, 60.000_001, 10.0);
        let b = Point3::new(100.0, 60.000_001, 10.0);
        assert!(!los_blocked(&a, &b, &[box_]));
        // Skimming the roof plane.
        let a = Point3::new(0.0, 50.0, 30.0);
        let b = Point3::new(100.0, 50.0, 30.0);
        assert!(los_blocked(&a, &b, &[box_]));
    }

    #[test]
    fn passing_beside_or_above_is_clear() {
        let box_ = bld(40.0, 40.0, 20.0, 20.0, 30.0);
        let a = Point3::new(0.0, 70.0, 10.0);
        let b = Point3::new(100.0, 70.0, 10.0);
        assert!(!los_blocked(&a, &b, &[box_]));
        let a = Point3::new(0.0, 50.0, 31.0);
        let b = Point3::new(100.0, 50.0, 31.0);
        assert!(!los_blocked(&a, &b, &[box_]));
    }

    #[test]
    fn endpoint_touching_a_box_is_clear() {
        // The UE stands against the wall and the link leaves away from it.
        let box_ = bld(40.0, 40.0, 20.0, 20.0, 30.0);
        let ue = Point3::new(40.0, 50.0, 1.5);
        let bs = Point3::new(0.0, 50.0, 10.0);
        assert!(!los_blocked(&bs, &ue, &[box_]));
    }

    #[test]
    fn path_gain_reference_values() {
        let p = PathLossParams::default();
        assert!((path_gain(1.0, true, &p).unwrap() - 10.38).abs() < 1e-12);
        assert!((path_gain(1.0, false, &p).unwrap() - 14.54).abs() < 1e-12);
        // 10.38 * 100^-2.09 = 10.38 * 10^-4.18
        let expect = 10.38 * 10f64.powf(-4.18);
        let got = path_gain(100.0, true, &p).unwrap();
        assert!((got - expect).abs() < 1e-15);
        assert!((got - 6.86e-4).abs() < 5e-6);
        assert_eq!(
            path_gain(0.0, true, &p),
            Err(RadioMapError::NonPositiveDistance(0.0))
        );
        assert!(path_gain(-3.0, false, &p).is_err());
    }

    #[test]
    fn gain_decreases_along_a_clear_ray() {
        let p = PathLossParams::default();
        let site = Point3::new(0.0, 0.0, 10.0);
        for los in [true, false] {
            let mut last = f64::INFINITY;
            for k in 1..200 {
                let ue = Point3::new(k as f64, 0.0, 1.5);
                let w = ue.distance(&site).max(1.0);
                let g = path_gain(w, los, &p).unwrap();
                assert!(g <= last);
                last = g;
            }
        }
    }

    #[test]
    fn single_entry_map() {
        let cfg = ScenarioConfig {
            side_length: 10.0,
            grid_resolution: 10.0,
            n_macro: 1,
            n_small: 0,
            n_buildings: 0,
            ..ScenarioConfig::default()
        };
        let mut s = generate_scenario(&cfg).unwrap();
        s.sites = alloc::vec![BsSite {
            id: 0,
            tier: Tier::Macro,
            position: Point3::new(2.0, 1.0, 25.0),
            p_max: 100.0,
        }];
        let p = PathLossParams::default();
        let map = build_radio_map(&s, &p).unwrap();
        assert_eq!(map.gains.shape(), (1, 1));
        let w = s.grid[0].distance(&s.sites[0].position);
        assert_eq!(map.gains[(0, 0)], path_gain(w, true, &p).unwrap());
    }

    #[test]
    fn default_scenario_shape_and_positivity() {
        let cfg = ScenarioConfig {
            grid_resolution: 10.0,
            ..ScenarioConfig::default()
        };
        let s = generate_scenario(&cfg).unwrap();
        let map = build_radio_map(&s, &PathLossParams::default()).unwrap();
        assert_eq!(map.gains.shape(), (400, 105));
        assert!(map.gains.as_slice().iter().all(|g| g.is_finite() && *g > 0.0));
        assert_eq!(map.scenario_digest, s.digest());
    }

    #[test]
    fn coincident_point_is_an_error() {
        let cfg = ScenarioConfig {
            side_length: 10.0,
            grid_resolution: 10.0,
            n_macro: 1,
            n_small: 0,
            n_buildings: 0,
            ue_height: 25.0,
            ..ScenarioConfig::default()
        };
        let s = generate_scenario(&cfg).unwrap();
        // Macro at the centre (5, 5, 25) and the lone grid point at the same place.
        assert_eq!(
            build_radio_map(&s, &PathLossParams::default()),
            Err(RadioMapError::Coincident { grid: 0, site: 0 })
        );
    }
}
