//! Probabilistic winner-take-all global elevation map.
//!
//! Per-frame estimates are placed in the world with the base pose. Each
//! covered cell is overwritten by the new measurement with probability equal
//! to its share of the combined precision, after flooring the measurement
//! variance at half the prior and rejecting measurements that are much less
//! certain than the prior.

use crate::geometry::{Pose, YawFrame};
use crate::predictor::ElevationEstimate;
use crate::rng::{hash_words, uniform_at};
use crate::sensing::GridGeometry;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Cells per side.
    pub extent: usize,
    pub resolution: f64,
    pub init_variance: f64,
    pub floor_factor: f64,
    pub validity_factor: f64,
    /// Standard deviation below which an update is always valid (m).
    pub absolute_gate: f64,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            extent: 200,
            resolution: 0.04,
            init_variance: 4.0,
            floor_factor: 0.5,
            validity_factor: 1.5,
            absolute_gate: 0.2,
            seed: 0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.extent == 0 || !(self.resolution > 0.0) {
            return bad("map extent and resolution must be positive");
        }
        if !(self.init_variance > 0.0) {
            return bad("init_variance must be > 0");
        }
        if !(self.floor_factor > 0.0 && self.floor_factor < 1.0) {
            return bad("floor_factor must lie in (0, 1)");
        }
        if !(self.validity_factor > 1.0) {
            return bad("validity_factor must be > 1");
        }
        if !(self.absolute_gate > 0.0) {
            return bad("absolute_gate must be > 0");
        }
        Ok(())
    }

    /// Variance below which updates are always valid.
    pub fn gate_variance(&self) -> f64 {
        self.absolute_gate * self.absolute_gate
    }
}

/// World-frame elevation and variance layers on a square grid.
///
/// Cell `(i, j)` covers `[ (ox + i) r, (ox + i + 1) r ) x [ (oy + j) r, (oy + j + 1) r )`
/// where `(ox, oy)` is the integer origin cell and `r` the resolution, so
/// recentering always moves by whole cells on a fixed world lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMap {
    extent: usize,
    resolution: f64,
    origin_cell: (i64, i64),
    init_elevation: f64,
    init_variance: f64,
    elevation: Vec<f64>,
    variance: Vec<f64>,
}

impl GlobalMap {
    /// Raw constructor used by deserialization.
    pub fn from_layers(
        extent: usize,
        resolution: f64,
        origin_cell: (i64, i64),
        init_elevation: f64,
        init_variance: f64,
        elevation: Vec<f64>,
        variance: Vec<f64>,
    ) -> Result<Self> {
        let n = extent * extent;
        if elevation.len() != n || variance.len() != n {
            return Err(Error::ShapeMismatch {
                expected: (extent, extent),
                got: (elevation.len(), variance.len()),
            });
        }
        if elevation.iter().any(|z| !z.is_finite())
            || variance.iter().any(|v| !(*v > 0.0) || !v.is_finite())
        {
            return Err(Error::Config(
                "map layers must be finite with positive variance".into(),
            ));
        }
        Ok(Self {
            extent,
            resolution,
            origin_cell,
            init_elevation,
            init_variance,
            elevation,
            variance,
        })
    }

    pub fn extent(&self) -> usize {
        self.extent
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin_cell(&self) -> (i64, i64) {
        self.origin_cell
    }

    /// World xy of the lower corner of cell `(0, 0)`.
    pub fn origin(&self) -> (f64, f64) {
        (
            self.origin_cell.0 as f64 * self.resolution,
            self.origin_cell.1 as f64 * self.resolution,
        )
    }

    pub fn init_elevation(&self) -> f64 {
        self.init_elevation
    }

    pub fn init_variance(&self) -> f64 {
        self.init_variance
    }

    pub fn elevation(&self) -> &[f64] {
        &self.elevation
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.extent + j
    }

    /// Global lattice coordinates of a world point.
    #[inline]
    pub fn lattice(&self, x: f64, y: f64) -> (i64, i64) {
        (
            (x / self.resolution).floor() as i64,
            (y / self.resolution).floor() as i64,
        )
    }

    #[inline]
    fn local(&self, g: (i64, i64)) -> Option<(usize, usize)> {
        let i = g.0 - self.origin_cell.0;
        let j = g.1 - self.origin_cell.1;
        let e = self.extent as i64;
        (i >= 0 && j >= 0 && i < e && j < e).then_some((i as usize, j as usize))
    }

    /// Map cell containing a world point.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        self.local(self.lattice(x, y))
    }

    /// World xy of a cell center.
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (self.origin_cell.0 + i as i64) as f64 * self.resolution + 0.5 * self.resolution,
            (self.origin_cell.1 + j as i64) as f64 * self.resolution + 0.5 * self.resolution,
        )
    }

    pub fn get(&self, i: usize, j: usize) -> (f64, f64) {
        let k = self.index(i, j);
        (self.elevation[k], self.variance[k])
    }

    /// Elevation and variance at a world point, if inside the map.
    pub fn sample(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        self.cell_at(x, y).map(|(i, j)| self.get(i, j))
    }

    fn origin_for_center(&self, x: f64, y: f64) -> (i64, i64) {
        let (gx, gy) = self.lattice(x, y);
        let half = (self.extent / 2) as i64;
        (gx - half, gy - half)
    }
}

/// Flat map at the ground height implied by a standing base pose, centered
/// on the base, with uniform `init_variance`.
pub fn init_map(base_pose: &Pose, standing_height: f64, cfg: &FusionConfig) -> GlobalMap {
    let n = cfg.extent * cfg.extent;
    let ground = base_pose.translation.z - standing_height;
    let mut map = GlobalMap {
        extent: cfg.extent,
        resolution: cfg.resolution,
        origin_cell: (0, 0),
        init_elevation: ground,
        init_variance: cfg.init_variance,
        elevation: vec![ground; n],
        variance: vec![cfg.init_variance; n],
    };
    map.origin_cell = map.origin_for_center(base_pose.translation.x, base_pose.translation.y);
    map
}

/// Measurement variance floored at `floor_factor` times the prior.
#[inline]
pub fn effective_variance(sigma2_t: f64, sigma2_prior: f64, cfg: &FusionConfig) -> f64 {
    sigma2_t.max(cfg.floor_factor * sigma2_prior)
}

/// Whether a floored measurement variance may replace the prior.
#[inline]
pub fn is_valid_update(effective: f64, sigma2_prior: f64, cfg: &FusionConfig) -> bool {
    effective < cfg.validity_factor * sigma2_prior || effective < cfg.gate_variance()
}

/// Probability that a measurement with floored variance `effective`
/// overwrites the prior.
#[inline]
pub fn win_probability(effective: f64, sigma2_prior: f64) -> f64 {
    let a = 1.0 / effective;
    a / (a + 1.0 / sigma2_prior)
}

/// Result of a single-cell update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellUpdate {
    pub elevation: f64,
    pub variance: f64,
    pub valid: bool,
    pub won: bool,
}

/// One stochastic winner-take-all step.
#[inline]
pub fn fuse_cell(
    h_t: f64,
    sigma2_t: f64,
    h_prior: f64,
    sigma2_prior: f64,
    xi: f64,
    cfg: &FusionConfig,
) -> CellUpdate {
    let eff = effective_variance(sigma2_t, sigma2_prior, cfg);
    let valid = is_valid_update(eff, sigma2_prior, cfg);
    let won = valid && xi < win_probability(eff, sigma2_prior);
    if won {
        CellUpdate {
            elevation: h_t,
            variance: eff,
            valid,
            won,
        }
    } else {
        CellUpdate {
            elevation: h_prior,
            variance: sigma2_prior,
            valid,
            won,
        }
    }
}

/// Per-frame update counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FuseStats {
    pub frame: u64,
    /// Estimate cells that landed in the map.
    pub covered: usize,
    /// Updates passing the validity gate.
    pub valid: usize,
    /// Valid updates that overwrote the cell.
    pub won: usize,
    /// Updates failing the validity gate.
    pub rejected: usize,
    pub recentered: bool,
}

/// Places an estimate in the world and fuses it cell by cell.
///
/// Each estimate cell maps to the map cell under its world position. The
/// stochastic draw for a cell depends only on `(seed, frame, lattice cell,
/// estimate cell)`. If any estimate cell falls outside the map, the map is
/// first recentered on the base.
pub fn fuse_frame(
    map: &mut GlobalMap,
    est: &ElevationEstimate,
    geometry: &GridGeometry,
    base_pose: &Pose,
    frame: u64,
    cfg: &FusionConfig,
) -> Result<FuseStats> {
    if est.shape() != geometry.shape() {
        return Err(Error::ShapeMismatch {
            expected: geometry.shape(),
            got: est.shape(),
        });
    }
    let yf = YawFrame::from_pose(base_pose);
    let base_z = base_pose.translation.z;
    let mut stats = FuseStats {
        frame,
        ..FuseStats::default()
    };

    // Corners bound the footprint of the rotated rectangle.
    let (rows, cols) = geometry.shape();
    let corners = [(0, 0), (rows - 1, 0), (0, cols - 1), (rows - 1, cols - 1)];
    let outside = corners.iter().any(|&(r, c)| {
        let (x, y) = geometry.cell_center(r, c);
        let w = yf.xy_to_world(x, y);
        map.cell_at(w.x, w.y).is_none()
    });
    if outside {
        recenter(map, (yf.origin.x, yf.origin.y));
        stats.recentered = true;
    }

    let stream = hash_words(&[frame, 0x6675_7365]);
    let mean = est.mean();
    let lv = est.log_variance();
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = geometry.cell_center(r, c);
            let w = yf.xy_to_world(x, y);
            let g = map.lattice(w.x, w.y);
            let Some((i, j)) = map.local(g) else { continue };
            stats.covered += 1;
            let k = map.index(i, j);
            let e = geometry.index(r, c);
            let key = hash_words(&[g.0 as u64, g.1 as u64, e as u64]);
            let xi = uniform_at(cfg.seed, stream, key);
            let u = fuse_cell(
                mean[e] + base_z,
                lv[e].exp(),
                map.elevation[k],
                map.variance[k],
                xi,
                cfg,
            );
            if u.valid {
                stats.valid += 1;
            } else {
                stats.rejected += 1;
            }
            if u.won {
                stats.won += 1;
                map.elevation[k] = u.elevation;
                map.variance[k] = u.variance;
            }
        }
    }
    Ok(stats)
}

/// Moves the map window so that `center` falls in the middle cell. Cells
/// that stay inside keep their content; new cells take init values.
pub fn recenter(map: &mut GlobalMap, center: (f64, f64)) {
    let target = map.origin_for_center(center.0, center.1);
    shift_to(map, target);
}

/// Moves the map window to a new origin cell.
pub fn shift_to(map: &mut GlobalMap, origin_cell: (i64, i64)) {
    let (di, dj) = (
        origin_cell.0 - map.origin_cell.0,
        origin_cell.1 - map.origin_cell.1,
    );
    if (di, dj) == (0, 0) {
        return;
    }
    let e = map.extent as i64;
    let mut elevation = vec![map.init_elevation; map.elevation.len()];
    let mut variance = vec![map.init_variance; map.variance.len()];
    for i in 0..e {
        let si = i + di;
        if si < 0 || si >= e {
            continue;
        }
        for j in 0..e {
            let sj = j + dj;
            if sj < 0 || sj >= e {
                continue;
            }
            let dst = (i * e + j) as usize;
            let src = (si * e + sj) as usize;
            elevation[dst] = map.elevation[src];
            variance[dst] = map.variance[src];
        }
    }
    map.elevation = elevation;
    map.variance = variance;
    map.origin_cell = origin_cell;
}

/// Egocentric samples `(x, y, z, u)`: base-frame grid coordinates,
/// base-relative elevation and variance (m^2).
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub rows: usize,
    pub cols: usize,
    pub points: Vec<[f64; 4]>,
}

impl QueryResult {
    pub fn get(&self, r: usize, c: usize) -> [f64; 4] {
        self.points[r * self.cols + c]
    }
}

/// Nearest-cell lookup at the controller grid points around the base.
///
/// `drift` shifts the world sampling positions (not the reported x, y).
/// Points outside the map report the init elevation and variance.
pub fn query(
    map: &GlobalMap,
    base_pose: &Pose,
    geometry: &GridGeometry,
    drift: Option<(f64, f64)>,
) -> QueryResult {
    let yf = YawFrame::from_pose(base_pose);
    let (dx, dy) = drift.unwrap_or((0.0, 0.0));
    let base_z = base_pose.translation.z;
    let mut points = Vec::with_capacity(geometry.len());
    for r in 0..geometry.rows {
        for c in 0..geometry.cols {
            let (x, y) = geometry.cell_center(r, c);
            let w = yf.xy_to_world(x, y);
            let (z, u) = map
                .sample(w.x + dx, w.y + dy)
                .unwrap_or((map.init_elevation, map.init_variance));
            points.push([x, y, z - base_z, u]);
        }
    }
    QueryResult {
        rows: geometry.rows,
        cols: geometry.cols,
        points,
    }
}
