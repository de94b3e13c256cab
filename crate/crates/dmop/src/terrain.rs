//! 2.5D digital elevation maps.
//!
//! A [`DemGrid`] is a rectangular grid of elevations in map z-units with a
//! uniform world scale (meters per map unit, identical on all three axes).
//! The module covers synthetic terrain generation, block-mean downscaling,
//! bilinear elevation queries and a plain-text file format.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Meters per map unit when nothing else is requested. A 100x100 grid then
/// spans 10 km x 10 km with elevations in [0, 2] reaching 200 m.
pub const DEFAULT_WORLD_SCALE_M: f64 = 100.0;

/// Elevation range that generated maps are rescaled to.
pub const GENERATED_Z_MAX: f64 = 2.0;

/// Largest tolerated single-cell deviation from the neighborhood mean in a
/// generated map, in map z-units.
const MAX_SPIKE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum TerrainError {
    #[error("grid must be at least 2x2, got {width}x{height}")]
    TooSmall { width: usize, height: usize },
    #[error("roughness must be in (0, 1], got {0}")]
    BadRoughness(f64),
    #[error("world scale must be positive and finite, got {0}")]
    BadWorldScale(f64),
    #[error("non-finite elevation at cell ({x}, {y})")]
    NonFiniteElevation { x: usize, y: usize },
    #[error("elevation grid has {got} cells, expected {expected}")]
    CellCountMismatch { got: usize, expected: usize },
    #[error("downscale factor must be >= 2, got {0}")]
    BadFactor(usize),
    #[error("dimensions {width}x{height} not divisible by factor {factor}")]
    NotDivisible {
        width: usize,
        height: usize,
        factor: usize,
    },
    #[error("coordinates ({x}, {y}) outside grid bounds")]
    OutOfBounds { x: f64, y: f64 },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Rectangular 2.5D elevation grid, row-major, `elevations[y * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemGrid {
    width: usize,
    height: usize,
    world_scale_m: f64,
    elevations: Vec<f64>,
}

impl DemGrid {
    /// Builds a grid from raw elevations, validating shape and finiteness.
    pub fn new(
        width: usize,
        height: usize,
        world_scale_m: f64,
        elevations: Vec<f64>,
    ) -> Result<Self, TerrainError> {
        if width < 2 || height < 2 {
            return Err(TerrainError::TooSmall { width, height });
        }
        if !world_scale_m.is_finite() || world_scale_m <= 0.0 {
            return Err(TerrainError::BadWorldScale(world_scale_m));
        }
        if elevations.len() != width * height {
            return Err(TerrainError::CellCountMismatch {
                got: elevations.len(),
                expected: width * height,
            });
        }
        for (i, z) in elevations.iter().enumerate() {
            if !z.is_finite() {
                return Err(TerrainError::NonFiniteElevation {
                    x: i % width,
                    y: i / width,
                });
            }
        }
        Ok(DemGrid {
            width,
            height,
            world_scale_m,
            elevations,
        })
    }

    /// Constant-elevation grid, handy for flat-world tests.
    pub fn flat(width: usize, height: usize, world_scale_m: f64, z: f64) -> Result<Self, TerrainError> {
        DemGrid::new(width, height, world_scale_m, vec![z; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn world_scale_m(&self) -> f64 {
        self.world_scale_m
    }

    pub fn elevations(&self) -> &[f64] {
        &self.elevations
    }

    /// Elevation of the cell at integer coordinates. Panics out of bounds;
    /// use [`DemGrid::elevation_at`] for checked fractional queries.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        assert!(x < self.width && y < self.height, "cell out of bounds");
        self.elevations[y * self.width + x]
    }

    pub fn min_elevation(&self) -> f64 {
        self.elevations.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_elevation(&self) -> f64 {
        self.elevations.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Generates rolling-hill terrain by midpoint displacement, deterministic
    /// for a fixed seed. Output elevations are rescaled to exactly
    /// [0, [`GENERATED_Z_MAX`]] and contain no single-cell spikes larger than
    /// 0.5 z-units relative to the neighborhood mean.
    pub fn generate(
        seed: u64,
        width: usize,
        height: usize,
        roughness: f64,
    ) -> Result<Self, TerrainError> {
        if width < 2 || height < 2 {
            return Err(TerrainError::TooSmall { width, height });
        }
        if !(roughness > 0.0 && roughness <= 1.0) {
            return Err(TerrainError::BadRoughness(roughness));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        // Diamond-square needs a (2^k + 1)-sized square; generate the
        // smallest one covering the request and crop.
        let n = (width.max(height) - 1).next_power_of_two().max(2);
        let size = n + 1;
        let mut grid = vec![0.0f64; size * size];
        let idx = |x: usize, y: usize| y * size + x;

        for &(x, y) in &[(0, 0), (n, 0), (0, n), (n, n)] {
            grid[idx(x, y)] = rng.gen_range(-1.0..1.0);
        }

        // Rougher terrain decays the displacement amplitude more slowly per
        // octave; the cap of 0.75 keeps the finest-level noise small against
        // the overall relief, which is what rules out spikes.
        let decay = 0.35 + 0.4 * roughness;
        let mut amplitude = 1.0;
        let mut step = n;
        while step >= 2 {
            let half = step / 2;
            // Diamond step: centers of squares.
            let mut y = half;
            while y < size {
                let mut x = half;
                while x < size {
                    let avg = (grid[idx(x - half, y - half)]
                        + grid[idx(x + half, y - half)]
                        + grid[idx(x - half, y + half)]
                        + grid[idx(x + half, y + half)])
                        / 4.0;
                    grid[idx(x, y)] = avg + rng.gen_range(-amplitude..amplitude);
                    x += step;
                }
                y += step;
            }
            // Square step: edge midpoints, averaging the in-bounds diamond
            // neighbors (3 of them on the border).
            let mut y = 0;
            while y < size {
                let mut x = if (y / half) % 2 == 0 { half } else { 0 };
                while x < size {
                    let mut sum = 0.0;
                    let mut count = 0.0;
                    if x >= half {
                        sum += grid[idx(x - half, y)];
                        count += 1.0;
                    }
                    if x + half < size {
                        sum += grid[idx(x + half, y)];
                        count += 1.0;
                    }
                    if y >= half {
                        sum += grid[idx(x, y - half)];
                        count += 1.0;
                    }
                    if y + half < size {
                        sum += grid[idx(x, y + half)];
                        count += 1.0;
                    }
                    grid[idx(x, y)] = sum / count + rng.gen_range(-amplitude..amplitude);
                    x += step;
                }
                y += half;
            }
            amplitude *= decay;
            step = half;
        }

        let mut elevations = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                elevations.push(grid[idx(x, y)]);
            }
        }

        rescale_to_range(&mut elevations, 0.0, GENERATED_Z_MAX);
        // The decay cap makes spikes essentially impossible, but the contract
        // is unconditional: smooth and rescale until it holds.
        let mut passes = 0;
        while max_spike(&elevations, width, height) > MAX_SPIKE {
            smooth_once(&mut elevations, width, height);
            rescale_to_range(&mut elevations, 0.0, GENERATED_Z_MAX);
            passes += 1;
            assert!(passes < 64, "terrain smoothing failed to converge");
        }

        DemGrid::new(width, height, DEFAULT_WORLD_SCALE_M, elevations)
    }

    /// Block-mean downscale by an integer factor. Each output cell is the
    /// arithmetic mean of the corresponding `factor`x`factor` input block and
    /// the world scale grows by the same factor, so physical extents are
    /// preserved.
    pub fn downscale(&self, factor: usize) -> Result<Self, TerrainError> {
        if factor < 2 {
            return Err(TerrainError::BadFactor(factor));
        }
        if self.width % factor != 0 || self.height % factor != 0 {
            return Err(TerrainError::NotDivisible {
                width: self.width,
                height: self.height,
                factor,
            });
        }
        let out_w = self.width / factor;
        let out_h = self.height / factor;
        if out_w < 2 || out_h < 2 {
            return Err(TerrainError::TooSmall {
                width: out_w,
                height: out_h,
            });
        }
        let inv = 1.0 / (factor * factor) as f64;
        let mut elevations = Vec::with_capacity(out_w * out_h);
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut sum = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        sum += self.at(ox * factor + dx, oy * factor + dy);
                    }
                }
                elevations.push(sum * inv);
            }
        }
        DemGrid::new(out_w, out_h, self.world_scale_m * factor as f64, elevations)
    }

    /// Bilinear elevation at fractional map coordinates. Exact cell values at
    /// integer coordinates; rejects queries outside `[0, w-1] x [0, h-1]`.
    pub fn elevation_at(&self, x: f64, y: f64) -> Result<f64, TerrainError> {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 || x > max_x || y > max_y {
            return Err(TerrainError::OutOfBounds { x, y });
        }
        let x0 = (x.floor() as usize).min(self.width - 2);
        let y0 = (y.floor() as usize).min(self.height - 2);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let z00 = self.at(x0, y0);
        let z10 = self.at(x0 + 1, y0);
        let z01 = self.at(x0, y0 + 1);
        let z11 = self.at(x0 + 1, y0 + 1);
        let top = z00 + (z10 - z00) * fx;
        let bottom = z01 + (z11 - z01) * fx;
        Ok(top + (bottom - top) * fy)
    }

    /// Canonical text serialization; see the crate README for the format.
    /// `Display`-formatted floats reparse to the identical bit pattern, which
    /// is what makes save/load a lossless round trip.
    pub fn to_dem_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "DEM2 {} {} {}",
            self.width, self.height, self.world_scale_m
        );
        for y in 0..self.height {
            for x in 0..self.width {
                if x > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{}", self.at(x, y));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the DEM text format. Never panics on malformed input.
    pub fn parse(text: &str) -> Result<Self, TerrainError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| TerrainError::Parse {
                line: 1,
                msg: "empty input".to_string(),
            })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "DEM2" {
            return Err(TerrainError::Parse {
                line: 1,
                msg: format!("expected header `DEM2 <width> <height> <scale>`, got `{header}`"),
            });
        }
        let width: usize = fields[1].parse().map_err(|_| TerrainError::Parse {
            line: 1,
            msg: format!("bad width `{}`", fields[1]),
        })?;
        let height: usize = fields[2].parse().map_err(|_| TerrainError::Parse {
            line: 1,
            msg: format!("bad height `{}`", fields[2]),
        })?;
        let world_scale_m: f64 = fields[3].parse().map_err(|_| TerrainError::Parse {
            line: 1,
            msg: format!("bad world scale `{}`", fields[3]),
        })?;
        if width < 2 || height < 2 {
            return Err(TerrainError::TooSmall { width, height });
        }
        if width.checked_mul(height).is_none() || width * height > 64 * 1024 * 1024 {
            return Err(TerrainError::Parse {
                line: 1,
                msg: format!("grid {width}x{height} too large"),
            });
        }
        let mut elevations = Vec::with_capacity(width * height);
        let mut rows = 0usize;
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            if rows == height {
                return Err(TerrainError::Parse {
                    line: lineno + 1,
                    msg: format!("more than {height} data rows"),
                });
            }
            let mut cols = 0usize;
            for tok in line.split_whitespace() {
                let z: f64 = tok.parse().map_err(|_| TerrainError::Parse {
                    line: lineno + 1,
                    msg: format!("non-numeric cell `{tok}`"),
                })?;
                elevations.push(z);
                cols += 1;
            }
            if cols != width {
                return Err(TerrainError::Parse {
                    line: lineno + 1,
                    msg: format!("row has {cols} cells, expected {width}"),
                });
            }
            rows += 1;
        }
        if rows != height {
            return Err(TerrainError::Parse {
                line: text.lines().count(),
                msg: format!("found {rows} data rows, header declared {height}"),
            });
        }
        DemGrid::new(width, height, world_scale_m, elevations)
    }

    pub fn save(&self, path: &Path) -> Result<(), TerrainError> {
        fs::write(path, self.to_dem_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TerrainError> {
        let text = fs::read_to_string(path)?;
        DemGrid::parse(&text)
    }

    /// SHA-256 of the canonical serialization, hex-encoded. Identifies a map
    /// in benchmark manifests and CLI output.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_dem_string().as_bytes());
        let mut out = String::with_capacity(64);
        for byte in digest {
            let _ = write!(out, "{byte:02x}");
        }
        out
    }
}

fn rescale_to_range(values: &mut [f64], lo: f64, hi: f64) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range <= 0.0 {
        values.fill(lo);
        return;
    }
    let scale = (hi - lo) / range;
    for v in values.iter_mut() {
        *v = lo + (*v - min) * scale;
    }
}

/// Max deviation of any cell from the mean of its in-bounds 4-neighbors.
fn max_spike(values: &[f64], width: usize, height: usize) -> f64 {
    let mut worst = 0.0f64;
    for y in 0..height {
        for x in 0..width {
            let mut sum = 0.0;
            let mut count = 0.0;
            if x > 0 {
                sum += values[y * width + x - 1];
                count += 1.0;
            }
            if x + 1 < width {
                sum += values[y * width + x + 1];
                count += 1.0;
            }
            if y > 0 {
                sum += values[(y - 1) * width + x];
                count += 1.0;
            }
            if y + 1 < height {
                sum += values[(y + 1) * width + x];
                count += 1.0;
            }
            worst = worst.max((values[y * width + x] - sum / count).abs());
        }
    }
    worst
}

fn smooth_once(values: &mut Vec<f64>, width: usize, height: usize) {
    let src = values.clone();
    for y in 0..height {
        for x in 0..width {
            let mut sum = 4.0 * src[y * width + x];
            let mut count = 4.0;
            if x > 0 {
                sum += src[y * width + x - 1];
                count += 1.0;
            }
            if x + 1 < width {
                sum += src[y * width + x + 1];
                count += 1.0;
            }
            if y > 0 {
                sum += src[(y - 1) * width + x];
                count += 1.0;
            }
            if y + 1 < height {
                sum += src[(y + 1) * width + x];
                count += 1.0;
            }
            values[y * width + x] = sum / count;
        }
    }
}
