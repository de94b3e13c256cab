//! Distance, slope and energy models for steps and whole paths.
//!
//! Distances are 3D Euclidean lengths in meters (map units times the world
//! scale). Step energy is length times a slope-dependent per-meter rate: an
//! up-slope costs `(beta / 45deg) * eta_us` per meter, a down-slope or flat
//! step costs `1 - (beta / 45deg) * eta_ds` per meter, so flat travel costs
//! exactly 1 u/m. The energy unit `u` is left abstract (per-vehicle).

use std::f64::consts::FRAC_PI_2;
use std::f64::consts::FRAC_PI_4;

use thiserror::Error;

use crate::terrain::{DemGrid, TerrainError};

#[derive(Debug, Error)]
pub enum CostError {
    #[error("slope and energy are undefined for coincident points")]
    CoincidentPoints,
    #[error("up-slope rate eta_us must be positive, got {0}")]
    BadEtaUs(f64),
    #[error("down-slope rate eta_ds must be in [0, 1), got {0}")]
    BadEtaDs(f64),
    #[error("energy weight must be non-negative and finite, got {0}")]
    BadWeight(f64),
    #[error("path must contain at least one point")]
    EmptyPath,
    #[error("path points {0} and {1} are identical")]
    DuplicatePoint(usize, usize),
    #[error("point {index} has z {z} but the map surface is {surface} there")]
    OffSurface { index: usize, z: f64, surface: f64 },
    #[error(transparent)]
    Terrain(#[from] TerrainError),
}

/// A 3D point in map units (z in map z-units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }
}

/// Parameters of the energy model plus the objective's energy weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    /// Up-slope energy per meter at the 45 degree normalization slope (u/m).
    pub eta_us: f64,
    /// Down-slope energy reduction per meter at 45 degrees (u/m).
    pub eta_ds: f64,
    /// Weight of energy in the combined objective `distance + w * energy`.
    pub energy_weight: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            eta_us: 25.0,
            eta_ds: 0.25,
            energy_weight: 1.0,
        }
    }
}

impl CostModel {
    pub fn new(eta_us: f64, eta_ds: f64, energy_weight: f64) -> Result<Self, CostError> {
        if !eta_us.is_finite() || eta_us <= 0.0 {
            return Err(CostError::BadEtaUs(eta_us));
        }
        if !eta_ds.is_finite() || eta_ds < 0.0 || eta_ds >= 1.0 {
            return Err(CostError::BadEtaDs(eta_ds));
        }
        if !energy_weight.is_finite() || energy_weight < 0.0 {
            return Err(CostError::BadWeight(energy_weight));
        }
        Ok(CostModel {
            eta_us,
            eta_ds,
            energy_weight,
        })
    }

    pub fn with_energy_weight(self, energy_weight: f64) -> Result<Self, CostError> {
        CostModel::new(self.eta_us, self.eta_ds, energy_weight)
    }
}

/// Straight-line 3D distance between two points, in meters.
pub fn point_distance(p: Point3, q: Point3, world_scale_m: f64) -> f64 {
    let dx = p.x - q.x;
    let dy = p.y - q.y;
    let dz = p.z - q.z;
    (dx * dx + dy * dy + dz * dz).sqrt() * world_scale_m
}

fn horizontal_distance(p: Point3, q: Point3) -> f64 {
    let dx = p.x - q.x;
    let dy = p.y - q.y;
    (dx * dx + dy * dy).sqrt()
}

/// Unsigned slope angle of the segment `p -> q` in radians: `atan(|dz| / h)`,
/// `pi/2` for purely vertical pairs. Scale-free because the world scale
/// applies to all three axes equally.
pub fn slope_angle(p: Point3, q: Point3) -> Result<f64, CostError> {
    if p == q {
        return Err(CostError::CoincidentPoints);
    }
    let h = horizontal_distance(p, q);
    let dz = (p.z - q.z).abs();
    if h == 0.0 {
        return Ok(FRAC_PI_2);
    }
    Ok((dz / h).atan())
}

/// Energy of the directed step `p -> q` in u. Up-slope when `z_q > z_p`,
/// down-slope (including flat) otherwise.
pub fn step_energy(
    p: Point3,
    q: Point3,
    model: &CostModel,
    world_scale_m: f64,
) -> Result<f64, CostError> {
    let beta = slope_angle(p, q)?;
    let rate = if q.z > p.z {
        beta / FRAC_PI_4 * model.eta_us
    } else {
        1.0 - beta / FRAC_PI_4 * model.eta_ds
    };
    Ok(point_distance(p, q, world_scale_m) * rate)
}

/// Ordered sequence of points lying on a map surface.
///
/// Construction checks that consecutive points are distinct and that each
/// point's z equals the bilinear surface of the map it was built against.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    points: Vec<Point3>,
}

impl GridPath {
    /// Builds from (x, y) coordinates, sampling z from the map surface.
    pub fn from_xy<I>(map: &DemGrid, coords: I) -> Result<Self, CostError>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut points = Vec::new();
        for (x, y) in coords {
            let z = map.elevation_at(x, y)?;
            points.push(Point3::new(x, y, z));
        }
        Self::validate(map, points)
    }

    /// Builds from integer cells, using the exact cell elevations.
    pub fn from_cells<I>(map: &DemGrid, cells: I) -> Result<Self, CostError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        Self::from_xy(map, cells.into_iter().map(|(x, y)| (x as f64, y as f64)))
    }

    /// Builds from full 3D points, verifying they lie on the map surface.
    pub fn from_points(map: &DemGrid, points: Vec<Point3>) -> Result<Self, CostError> {
        for (i, p) in points.iter().enumerate() {
            let surface = map.elevation_at(p.x, p.y)?;
            if p.z != surface {
                return Err(CostError::OffSurface {
                    index: i,
                    z: p.z,
                    surface,
                });
            }
        }
        Self::validate(map, points)
    }

    fn validate(_map: &DemGrid, points: Vec<Point3>) -> Result<Self, CostError> {
        if points.is_empty() {
            return Err(CostError::EmptyPath);
        }
        for i in 1..points.len() {
            if points[i] == points[i - 1] {
                return Err(CostError::DuplicatePoint(i - 1, i));
            }
        }
        Ok(GridPath { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Point3 {
        self.points[0]
    }

    pub fn last(&self) -> Point3 {
        *self.points.last().expect("paths are non-empty")
    }
}

/// Total 3D length of a path in meters; zero for a single point.
pub fn path_distance(path: &GridPath, world_scale_m: f64) -> f64 {
    let pts = path.points();
    let mut total = 0.0;
    for pair in pts.windows(2) {
        total += point_distance(pair[0], pair[1], world_scale_m);
    }
    total
}

/// Total energy of a path in u; zero for a single point.
pub fn path_energy(path: &GridPath, model: &CostModel, world_scale_m: f64) -> f64 {
    let pts = path.points();
    let mut total = 0.0;
    for pair in pts.windows(2) {
        total += step_energy(pair[0], pair[1], model, world_scale_m)
            .expect("consecutive path points are distinct");
    }
    total
}

/// Combined objective `distance + w * energy`.
pub fn path_objective(path: &GridPath, model: &CostModel, world_scale_m: f64) -> f64 {
    path_distance(path, world_scale_m) + model.energy_weight * path_energy(path, model, world_scale_m)
}
