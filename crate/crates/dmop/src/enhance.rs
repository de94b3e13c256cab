//! Path enhancement: lift a coarse-grid path onto a higher-resolution map,
//! keep only its turning points, and reconnect them with natural cubic
//! splines so staircase segments become smooth curves on the fine terrain.

use thiserror::Error;

use crate::cost::{CostError, GridPath, Point3};
use crate::terrain::{DemGrid, TerrainError};

/// Spline samples per knot interval used by [`enhance`].
pub const DEFAULT_SAMPLES_PER_SEGMENT: usize = 8;

/// Direction comparisons treat unit-vector component differences below this
/// as equal; elevation deltas below it count as flat.
const GEOM_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EnhanceError {
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("scale factor must be >= 1")]
    BadFactor,
    #[error("knots {0} and {1} coincide in 2D; chord parameterization undefined")]
    CoincidentKnots(usize, usize),
    #[error("samples per segment must be >= 1")]
    BadSampleCount,
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
}

/// Maps a coarse path onto a map `factor` times finer: x and y scale by
/// `factor`, z is re-sampled from the fine surface. Point count is preserved.
pub fn upscale_path(
    path: &GridPath,
    factor: usize,
    highres: &DemGrid,
) -> Result<GridPath, EnhanceError> {
    upscale_points(
        &path
            .points()
            .iter()
            .map(|p| (p.x, p.y))
            .collect::<Vec<_>>(),
        factor,
        highres,
    )
}

/// [`upscale_path`] on raw 2D coordinates (the z column of an external file
/// belongs to the coarse map and is discarded).
pub fn upscale_points(
    coords: &[(f64, f64)],
    factor: usize,
    highres: &DemGrid,
) -> Result<GridPath, EnhanceError> {
    if factor < 1 {
        return Err(EnhanceError::BadFactor);
    }
    let f = factor as f64;
    Ok(GridPath::from_xy(
        highres,
        coords.iter().map(|&(x, y)| (x * f, y * f)),
    )?)
}

fn direction_2d(a: Point3, b: Point3) -> Option<(f64, f64)> {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let len = (dx * dx + dy * dy).sqrt();
    if len < GEOM_EPS {
        return None;
    }
    Some((dx / len, dy / len))
}

fn z_sign(a: Point3, b: Point3) -> i8 {
    let dz = b.z - a.z;
    if dz > GEOM_EPS {
        1
    } else if dz < -GEOM_EPS {
        -1
    } else {
        0
    }
}

/// Keeps the first and last points plus every interior point where the 2D
/// direction changes or the sign of the elevation delta flips between the
/// adjoining segments; constant-direction constant-slope runs collapse.
pub fn extract_turning_points(path: &GridPath) -> Vec<Point3> {
    let pts = path.points();
    if pts.len() <= 2 {
        return pts.to_vec();
    }
    let mut out = vec![pts[0]];
    for i in 1..pts.len() - 1 {
        let before = direction_2d(pts[i - 1], pts[i]);
        let after = direction_2d(pts[i], pts[i + 1]);
        let dir_change = match (before, after) {
            (Some(a), Some(b)) => (a.0 - b.0).abs() > 1e-9 || (a.1 - b.1).abs() > 1e-9,
            // a purely vertical segment has no 2D direction; keep the point
            _ => true,
        };
        let slope_change = z_sign(pts[i - 1], pts[i]) != z_sign(pts[i], pts[i + 1]);
        if dir_change || slope_change {
            out.push(pts[i]);
        }
    }
    out.push(pts[pts.len() - 1]);
    out
}

/// Natural cubic spline through `(t_i, y_i)` knots: second derivatives are
/// zero at both ends, interior ones come from the standard tridiagonal
/// system solved with the Thomas algorithm.
struct NaturalCubic {
    t: Vec<f64>,
    y: Vec<f64>,
    second: Vec<f64>,
}

impl NaturalCubic {
    fn fit(t: &[f64], y: &[f64]) -> Self {
        let n = t.len();
        debug_assert!(n >= 2 && y.len() == n);
        let mut second = vec![0.0; n];
        if n > 2 {
            let m = n - 2;
            let mut sub = vec![0.0; m];
            let mut diag = vec![0.0; m];
            let mut sup = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for i in 0..m {
                let h0 = t[i + 1] - t[i];
                let h1 = t[i + 2] - t[i + 1];
                sub[i] = h0;
                diag[i] = 2.0 * (h0 + h1);
                sup[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
            }
            // Thomas algorithm
            for i in 1..m {
                let w = sub[i] / diag[i - 1];
                diag[i] -= w * sup[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            second[m] = rhs[m - 1] / diag[m - 1];
            for i in (0..m - 1).rev() {
                second[i + 1] = (rhs[i] - sup[i] * second[i + 2]) / diag[i];
            }
        }
        NaturalCubic {
            t: t.to_vec(),
            y: y.to_vec(),
            second,
        }
    }

    fn eval(&self, at: f64) -> f64 {
        let n = self.t.len();
        let i = match self.t.binary_search_by(|probe| probe.total_cmp(&at)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.clamp(1, n - 1) - 1,
        };
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - at) / h;
        let b = (at - self.t[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[i + 1]) * h * h
                / 6.0
    }
}

/// Interpolates a smooth path through the knots with natural cubic splines
/// on x(t) and y(t), parameterized by cumulative 2D chord length. Knots are
/// emitted verbatim (the spline passes through them exactly); intermediate
/// samples are clamped into map bounds and re-sampled onto the surface.
pub fn spline_through(
    knots: &[Point3],
    samples_per_segment: usize,
    highres: &DemGrid,
) -> Result<GridPath, EnhanceError> {
    if knots.len() < 2 {
        return Err(EnhanceError::TooFewPoints(knots.len()));
    }
    if samples_per_segment < 1 {
        return Err(EnhanceError::BadSampleCount);
    }
    let mut t = Vec::with_capacity(knots.len());
    t.push(0.0);
    for i in 1..knots.len() {
        let dx = knots[i].x - knots[i - 1].x;
        let dy = knots[i].y - knots[i - 1].y;
        let chord = (dx * dx + dy * dy).sqrt();
        if chord < GEOM_EPS {
            return Err(EnhanceError::CoincidentKnots(i - 1, i));
        }
        t.push(t[i - 1] + chord);
    }
    let xs: Vec<f64> = knots.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = knots.iter().map(|p| p.y).collect();
    let sx = NaturalCubic::fit(&t, &xs);
    let sy = NaturalCubic::fit(&t, &ys);

    let max_x = (highres.width() - 1) as f64;
    let max_y = (highres.height() - 1) as f64;
    let mut coords: Vec<(f64, f64)> = Vec::new();
    let push = |x: f64, y: f64, coords: &mut Vec<(f64, f64)>| {
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        if let Some(&(px, py)) = coords.last() {
            if (px - x).abs() < GEOM_EPS && (py - y).abs() < GEOM_EPS {
                return;
            }
        }
        coords.push((x, y));
    };
    for i in 0..knots.len() - 1 {
        push(knots[i].x, knots[i].y, &mut coords);
        for s in 1..samples_per_segment {
            let frac = s as f64 / samples_per_segment as f64;
            let at = t[i] + frac * (t[i + 1] - t[i]);
            push(sx.eval(at), sy.eval(at), &mut coords);
        }
    }
    let last = knots[knots.len() - 1];
    push(last.x, last.y, &mut coords);
    Ok(GridPath::from_xy(highres, coords)?)
}

/// The full enhancement: upscale, extract turning points, reconnect with
/// splines. Endpoints of the result equal the upscaled endpoints exactly.
/// A single-point path is just upscaled.
pub fn enhance(
    path: &GridPath,
    factor: usize,
    highres: &DemGrid,
) -> Result<GridPath, EnhanceError> {
    let upscaled = upscale_path(path, factor, highres)?;
    if upscaled.len() < 2 {
        return Ok(upscaled);
    }
    let knots = extract_turning_points(&upscaled);
    spline_through(&knots, DEFAULT_SAMPLES_PER_SEGMENT, highres)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Largest absolute turn angle (radians) between consecutive 2D segment
    /// directions of a path.
    fn max_turn_angle(path: &GridPath) -> f64 {
        let pts = path.points();
        let mut worst = 0.0f64;
        for w in pts.windows(3) {
            let a = direction_2d(w[0], w[1]).unwrap();
            let b = direction_2d(w[1], w[2]).unwrap();
            let dot = (a.0 * b.0 + a.1 * b.1).clamp(-1.0, 1.0);
            worst = worst.max(dot.acos());
        }
        worst
    }

    fn path_2d_length(path: &GridPath) -> f64 {
        path.points()
            .windows(2)
            .map(|w| {
                let dx = w[1].x - w[0].x;
                let dy = w[1].y - w[0].y;
                (dx * dx + dy * dy).sqrt()
            })
            .sum()
    }

    #[test]
    fn upscale_scales_coordinates_and_resamples_z() {
        let low = DemGrid::flat(10, 10, 2.0, 0.0).unwrap();
        let high = DemGrid::generate(4, 20, 20, 0.5).unwrap();
        let path = GridPath::from_cells(&low, [(3, 4), (4, 5), (5, 5)]).unwrap();
        let up = upscale_path(&path, 2, &high).unwrap();
        assert_eq!(up.len(), path.len());
        let p = up.points()[0];
        assert_eq!((p.x, p.y), (6.0, 8.0));
        assert_eq!(p.z, high.at(6, 8));
    }

    #[test]
    fn upscale_factor_one_is_identity_on_same_map() {
        let map = DemGrid::generate(9, 12, 12, 0.5).unwrap();
        let path = GridPath::from_cells(&map, [(0, 0), (1, 1), (2, 1)]).unwrap();
        let up = upscale_path(&path, 1, &map).unwrap();
        assert_eq!(up.points(), path.points());
    }

    #[test]
    fn extract_keeps_single_direction_change() {
        let map = DemGrid::flat(5, 5, 1.0, 1.0).unwrap();
        let path =
            GridPath::from_cells(&map, [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2)]).unwrap();
        let knots = extract_turning_points(&path);
        let coords: Vec<(f64, f64)> = knots.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(coords, vec![(0.0, 0.0), (2.0, 0.0), (2.0, 2.0)]);
    }

    #[test]
    fn extract_collapses_straight_flat_path() {
        let map = DemGrid::flat(8, 8, 1.0, 0.5).unwrap();
        let path = GridPath::from_cells(&map, (0..8).map(|i| (i, 3))).unwrap();
        let knots = extract_turning_points(&path);
        assert_eq!(knots.len(), 2);
    }

    #[test]
    fn extract_keeps_ridge_crest() {
        // straight 2D path over a tent ridge: z rises to x=5 then falls
        let mut cells = Vec::new();
        for y in 0..3 {
            for x in 0..11i32 {
                let _ = y;
                let z = 1.0 - (x - 5).abs() as f64 / 5.0;
                cells.push(z);
            }
        }
        let map = DemGrid::new(11, 3, 1.0, cells).unwrap();
        let path = GridPath::from_cells(&map, (0..11).map(|x| (x, 1))).unwrap();
        let knots = extract_turning_points(&path);
        let coords: Vec<(f64, f64)> = knots.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(coords, vec![(0.0, 1.0), (5.0, 1.0), (10.0, 1.0)]);
    }

    #[test]
    fn extract_is_idempotent() {
        let map = DemGrid::generate(17, 20, 20, 0.5).unwrap();
        let path = GridPath::from_cells(
            &map,
            [(0, 0), (1, 1), (2, 2), (3, 2), (4, 2), (5, 3), (6, 4), (7, 4)],
        )
        .unwrap();
        let knots = extract_turning_points(&path);
        let knot_path = GridPath::from_points(&map, knots.clone()).unwrap();
        assert_eq!(extract_turning_points(&knot_path), knots);
    }

    #[test]
    fn spline_of_two_points_is_straight() {
        let map = DemGrid::flat(20, 20, 1.0, 0.0).unwrap();
        let knots = vec![Point3::new(2.0, 2.0, 0.0), Point3::new(10.0, 6.0, 0.0)];
        let out = spline_through(&knots, 8, &map).unwrap();
        assert_eq!(out.first(), knots[0]);
        assert_eq!(out.last(), knots[1]);
        // all samples on the straight segment
        for p in out.points() {
            let cross = (p.x - 2.0) * (6.0 - 2.0) - (p.y - 2.0) * (10.0 - 2.0);
            assert!(cross.abs() < 1e-9, "off-line sample ({}, {})", p.x, p.y);
        }
    }

    #[test]
    fn spline_of_collinear_knots_stays_collinear() {
        let map = DemGrid::flat(20, 20, 1.0, 0.0).unwrap();
        let knots = vec![
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(4.0, 4.0, 0.0),
            Point3::new(9.0, 9.0, 0.0),
            Point3::new(15.0, 15.0, 0.0),
        ];
        let out = spline_through(&knots, 8, &map).unwrap();
        for p in out.points() {
            assert!((p.x - p.y).abs() < 1e-9);
        }
    }

    #[test]
    fn spline_passes_through_knots_exactly() {
        let map = DemGrid::generate(23, 30, 30, 0.5).unwrap();
        let knots = vec![
            Point3::new(2.0, 2.0, map.at(2, 2)),
            Point3::new(10.0, 4.0, map.at(10, 4)),
            Point3::new(14.0, 14.0, map.at(14, 14)),
            Point3::new(20.0, 9.0, map.at(20, 9)),
        ];
        let out = spline_through(&knots, 8, &map).unwrap();
        for k in &knots {
            assert!(
                out.points()
                    .iter()
                    .any(|p| p.x == k.x && p.y == k.y && p.z == k.z),
                "knot ({}, {}) missing from output",
                k.x,
                k.y
            );
        }
    }

    #[test]
    fn spline_smooths_an_l_corner() {
        let map = DemGrid::flat(20, 20, 1.0, 0.0).unwrap();
        let raw = GridPath::from_cells(
            &map,
            [(2, 2), (3, 2), (4, 2), (5, 2), (5, 3), (5, 4), (5, 5)],
        )
        .unwrap();
        let knots = extract_turning_points(&raw);
        let smooth = spline_through(&knots, 8, &map).unwrap();
        let raw_turn = max_turn_angle(&raw);
        let smooth_turn = max_turn_angle(&smooth);
        assert!((raw_turn - std::f64::consts::FRAC_PI_2).abs() < 1e-9);
        assert!(smooth_turn < raw_turn, "{smooth_turn} !< {raw_turn}");
    }

    #[test]
    fn spline_rejects_degenerate_input() {
        let map = DemGrid::flat(5, 5, 1.0, 0.0).unwrap();
        assert!(matches!(
            spline_through(&[Point3::new(0.0, 0.0, 0.0)], 8, &map),
            Err(EnhanceError::TooFewPoints(1))
        ));
        let dup = vec![Point3::new(1.0, 1.0, 0.0), Point3::new(1.0, 1.0, 0.5)];
        assert!(matches!(
            spline_through(&dup, 8, &map),
            Err(EnhanceError::CoincidentKnots(0, 1))
        ));
    }

    #[test]
    fn enhance_straight_path_stays_straight() {
        let low = DemGrid::flat(10, 10, 2.0, 0.0).unwrap();
        let high = DemGrid::flat(20, 20, 1.0, 0.0).unwrap();
        let path = GridPath::from_cells(&low, (1..8).map(|i| (i, 4))).unwrap();
        let out = enhance(&path, 2, &high).unwrap();
        for p in out.points() {
            assert!((p.y - 8.0).abs() < 1e-9);
        }
        assert_eq!((out.first().x, out.first().y), (2.0, 8.0));
        assert_eq!((out.last().x, out.last().y), (14.0, 8.0));
    }

    #[test]
    fn enhance_preserves_endpoints_exactly() {
        let high = DemGrid::generate(31, 40, 40, 0.5).unwrap();
        let low = high.downscale(2).unwrap();
        let path = GridPath::from_cells(
            &low,
            [(1, 1), (2, 2), (3, 2), (4, 3), (5, 4), (6, 4), (7, 5)],
        )
        .unwrap();
        let out = enhance(&path, 2, &high).unwrap();
        assert_eq!((out.first().x, out.first().y), (2.0, 2.0));
        assert_eq!((out.last().x, out.last().y), (14.0, 10.0));
    }

    #[test]
    fn enhance_zigzag_shortens_and_smooths() {
        let high = DemGrid::flat(40, 40, 1.0, 0.3).unwrap();
        let low = DemGrid::flat(20, 20, 2.0, 0.3).unwrap();
        // staircase toward the diagonal
        let mut cells = Vec::new();
        let (mut x, mut y) = (2, 2);
        cells.push((x, y));
        for i in 0..10 {
            if i % 2 == 0 {
                x += 1;
            } else {
                y += 1;
            }
            cells.push((x, y));
        }
        let path = GridPath::from_cells(&low, cells).unwrap();
        let up = upscale_path(&path, 2, &high).unwrap();
        let out = enhance(&path, 2, &high).unwrap();
        assert!(path_2d_length(&out) <= 1.05 * path_2d_length(&up));
        assert!(max_turn_angle(&out) < max_turn_angle(&up));
    }

    #[test]
    fn enhanced_paths_stay_in_bounds_and_on_surface() {
        let high = DemGrid::generate(77, 40, 40, 0.6).unwrap();
        let low = high.downscale(2).unwrap();
        // hug the border to provoke overshoot and clamping
        let path = GridPath::from_cells(
            &low,
            [(0, 0), (1, 0), (2, 1), (3, 0), (4, 0), (5, 1), (6, 0)],
        )
        .unwrap();
        let out = enhance(&path, 2, &high).unwrap();
        for p in out.points() {
            assert!(p.x >= 0.0 && p.x <= 39.0 && p.y >= 0.0 && p.y <= 39.0);
            assert_eq!(p.z, high.elevation_at(p.x, p.y).unwrap());
        }
    }
}
