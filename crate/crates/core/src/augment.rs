//! Training-input synthesis: degrades clean label grids into noisy,
//! partially observed inputs, and corrupts raw depth clouds.
//!
//! The grid pipeline runs in a fixed order: additive noise, border crop,
//! occlusion, elevation clipping, dropout, outliers.

use nalgebra::Point3;
use rand::seq::index;
use rand::Rng;

use crate::sensing::{CameraModel, Frame, LocalGrid, PointCloud};
use crate::{Error, Result};

/// Virtual sensor used for shadow-casting occlusion, in the base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionConfig {
    /// Probability that a sample receives occlusion at all.
    pub probability: f64,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Sensor height relative to the base.
    pub z_range: (f64, f64),
    /// Heading offset from base x.
    pub yaw_range: (f64, f64),
    /// Full horizontal field of view (rad).
    pub fov_range: (f64, f64),
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            probability: 0.9,
            x_range: (-0.1, 0.4),
            y_range: (-0.15, 0.15),
            z_range: (-0.1, 0.5),
            yaw_range: (-0.3, 0.3),
            fov_range: (1.2, 2.6),
        }
    }
}

/// Bounds from which clip limits are sampled (base-relative m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipConfig {
    pub low_range: (f64, f64),
    pub high_range: (f64, f64),
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            low_range: (-2.0, -1.0),
            high_range: (0.2, 1.2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Per-sample noise magnitude `a` drawn here; cells get `U(-a, a)`.
    pub noise_mag_range: (f64, f64),
    /// Up to this many cells are cropped from each border.
    pub crop_max_cells: usize,
    pub occlusion: Option<OcclusionConfig>,
    pub clip: Option<ClipConfig>,
    pub missing_ratio_range: (f64, f64),
    pub outlier_ratio_range: (f64, f64),
    /// Outlier elevations are uniform over this interval.
    pub outlier_elevation_range: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_mag_range: (0.0, 0.04),
            crop_max_cells: 4,
            occlusion: Some(OcclusionConfig::default()),
            clip: Some(ClipConfig::default()),
            missing_ratio_range: (0.0, 0.3),
            outlier_ratio_range: (0.0, 0.03),
            outlier_elevation_range: (-1.5, 0.5),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Configuration that returns the label unchanged.
    pub fn identity() -> Self {
        Self {
            noise_mag_range: (0.0, 0.0),
            crop_max_cells: 0,
            occlusion: None,
            clip: None,
            missing_ratio_range: (0.0, 0.0),
            outlier_ratio_range: (0.0, 0.0),
            outlier_elevation_range: (0.0, 0.0),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, r: (f64, f64)| {
            if r.0.is_finite() && r.1.is_finite() && r.0 <= r.1 {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{name} range {r:?} is not well-ordered"
                )))
            }
        };
        let ratio = |name: &str, r: (f64, f64)| {
            ordered(name, r)?;
            if r.0 < 0.0 || r.1 > 1.0 {
                return Err(Error::Config(format!("{name} range {r:?} outside [0, 1]")));
            }
            Ok(())
        };
        ordered("noise_mag", self.noise_mag_range)?;
        if self.noise_mag_range.0 < 0.0 {
            return Err(Error::Config("noise magnitude must be >= 0".into()));
        }
        ratio("missing_ratio", self.missing_ratio_range)?;
        ratio("outlier_ratio", self.outlier_ratio_range)?;
        ordered("outlier_elevation", self.outlier_elevation_range)?;
        if let Some(o) = &self.occlusion {
            if !(0.0..=1.0).contains(&o.probability) {
                return Err(Error::Config("occlusion probability outside [0, 1]".into()));
            }
            ordered("occlusion.x", o.x_range)?;
            ordered("occlusion.y", o.y_range)?;
            ordered("occlusion.z", o.z_range)?;
            ordered("occlusion.yaw", o.yaw_range)?;
            ordered("occlusion.fov", o.fov_range)?;
            if o.fov_range.0 <= 0.0 {
                return Err(Error::Config("occlusion fov must be > 0".into()));
            }
        }
        if let Some(c) = &self.clip {
            ordered("clip.low", c.low_range)?;
            ordered("clip.high", c.high_range)?;
            if c.low_range.1 > c.high_range.0 {
                return Err(Error::Config("clip low range overlaps high range".into()));
            }
        }
        Ok(())
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, r: (f64, f64)) -> f64 {
    let u: f64 = rng.gen();
    r.0 + (r.1 - r.0) * u
}

/// Produces a degraded copy of `label`. The label itself is untouched.
pub fn augment<R: Rng + ?Sized>(label: &LocalGrid, cfg: &AugmentConfig, rng: &mut R) -> LocalGrid {
    let g = *label.geometry();
    let (rows, cols) = g.shape();
    let mut out = label.clone();

    let mag = draw(rng, cfg.noise_mag_range);
    if mag > 0.0 {
        for i in 0..g.len() {
            if let Some(z) = out.get_index(i) {
                out.set_index(i, Some(z + mag * (2.0 * rng.gen::<f64>() - 1.0)));
            }
        }
    }

    if cfg.crop_max_cells > 0 {
        let k = cfg.crop_max_cells;
        let [top, bottom, left, right] = [(); 4].map(|_| rng.gen_range(0..=k));
        for r in 0..rows {
            for c in 0..cols {
                if r < bottom
                    || r >= rows.saturating_sub(top)
                    || c < right
                    || c >= cols.saturating_sub(left)
                {
                    out.set(r, c, None);
                }
            }
        }
    }

    if let Some(o) = &cfg.occlusion {
        if rng.gen::<f64>() < o.probability {
            let sensor = Point3::new(
                draw(rng, o.x_range),
                draw(rng, o.y_range),
                draw(rng, o.z_range),
            );
            let heading = draw(rng, o.yaw_range);
            let fov = draw(rng, o.fov_range);
            let hidden = shadow_mask(label, &sensor, heading, fov);
            for (i, h) in hidden.iter().enumerate() {
                if *h {
                    out.set_index(i, None);
                }
            }
        }
    }

    if let Some(c) = &cfg.clip {
        let lo = draw(rng, c.low_range);
        let hi = draw(rng, c.high_range);
        for i in 0..g.len() {
            if let Some(z) = out.get_index(i) {
                out.set_index(i, Some(z.clamp(lo, hi)));
            }
        }
    }

    let missing = draw(rng, cfg.missing_ratio_range);
    if missing > 0.0 {
        for i in 0..g.len() {
            if rng.gen::<f64>() < missing {
                out.set_index(i, None);
            }
        }
    }

    let outliers = draw(rng, cfg.outlier_ratio_range);
    if outliers > 0.0 {
        for i in 0..g.len() {
            if rng.gen::<f64>() < outliers {
                out.set_index(i, Some(draw(rng, cfg.outlier_elevation_range)));
            }
        }
    }
    out
}

/// Cells not visible from a virtual sensor: outside its horizontal field of
/// view, or with the sight line blocked by a taller cell of `surface`.
/// Invalid surface cells neither block nor are visible.
pub fn shadow_mask(surface: &LocalGrid, sensor: &Point3<f64>, heading: f64, fov: f64) -> Vec<bool> {
    let g = *surface.geometry();
    let res = g.resolution;
    let mut hidden = vec![true; g.len()];
    for r in 0..g.rows {
        for c in 0..g.cols {
            let i = g.index(r, c);
            let Some(z) = surface.get_index(i) else {
                continue;
            };
            let (x, y) = g.cell_center(r, c);
            let (dx, dy) = (x - sensor.x, y - sensor.y);
            let dist = dx.hypot(dy);
            if dist > 0.5 * res {
                let rel = crate::geometry::wrap_angle(dy.atan2(dx) - heading);
                if rel.abs() > 0.5 * fov {
                    continue;
                }
            }
            let steps = (2.0 * dist / res).ceil() as usize;
            let mut blocked = false;
            for s in 1..steps {
                let f = s as f64 / steps as f64;
                let Some((rr, cc)) = g.cell_of(sensor.x + f * dx, sensor.y + f * dy) else {
                    continue;
                };
                if (rr, cc) == (r, c) {
                    continue;
                }
                if let Some(h) = surface.get(rr, cc) {
                    if h > sensor.z + f * (z - sensor.z) + 1e-9 {
                        blocked = true;
                        break;
                    }
                }
            }
            hidden[i] = blocked;
        }
    }
    hidden
}

/// Drops `floor(missing * n)` points uniformly and replaces
/// `floor(artifact * n)` survivors with uniform points inside the camera
/// frustum (uniform in image plane and in range).
pub fn corrupt_cloud<R: Rng + ?Sized>(
    cloud: &PointCloud,
    missing: f64,
    artifact: f64,
    camera: &CameraModel,
    rng: &mut R,
) -> PointCloud {
    let n = cloud.len();
    let missing = missing.clamp(0.0, 1.0);
    let artifact = artifact.clamp(0.0, 1.0);
    let drop = ((missing * n as f64).floor() as usize).min(n);
    let mut keep = vec![true; n];
    for i in index::sample(rng, n, drop) {
        keep[i] = false;
    }
    let mut points: Vec<Point3<f64>> = cloud
        .points
        .iter()
        .zip(&keep)
        .filter_map(|(p, k)| k.then_some(*p))
        .collect();

    let replace = ((artifact * n as f64).floor() as usize).min(points.len());
    let to_camera_frame = cloud.frame == Frame::Base;
    for i in index::sample(rng, points.len(), replace) {
        let u: f64 = rng.gen_range(-1.0..=1.0);
        let v: f64 = rng.gen_range(-1.0..=1.0);
        let range = camera.max_range() * rng.gen::<f64>();
        let dir = camera.ray_camera(u, v);
        let local = Point3::from(dir * range);
        points[i] = if to_camera_frame {
            local
        } else {
            camera.pose * local
        };
    }
    PointCloud::new(points, cloud.frame)
}
