//! Depth simulation on heightfields and projection into local grids.

use nalgebra::{Point3, UnitQuaternion, Vector3};

use crate::geometry::{pose_xyz_rpy, Pose, YawFrame};
use crate::terrain::Heightfield;
use crate::{Error, Result, RobotProfile};

/// Elevation written into local-grid cells that received no points (m,
/// base-relative).
pub const SENTINEL: f64 = -10.0;

/// Shape and placement of a robot-centric grid in the yaw-aligned base frame.
///
/// Rows run along base x (forward), columns along base y (left).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub rows: usize,
    pub cols: usize,
    pub resolution: f64,
    pub center_offset: (f64, f64),
}

impl GridGeometry {
    pub fn new(rows: usize, cols: usize, resolution: f64, center_offset: (f64, f64)) -> Self {
        assert!(rows > 0 && cols > 0 && resolution > 0.0);
        Self {
            rows,
            cols,
            resolution,
            center_offset,
        }
    }

    /// Local scan grid of a robot profile (4 cm cells).
    pub fn local_for(profile: RobotProfile) -> Self {
        match profile {
            RobotProfile::QuadrupedA => Self::new(51, 31, 0.04, (1.0, 0.0)),
            RobotProfile::BipedT => Self::new(31, 31, 0.04, (0.6, 0.0)),
        }
    }

    /// Controller query map of a robot profile (8 cm cells).
    pub fn controller_for(profile: RobotProfile) -> Self {
        match profile {
            RobotProfile::QuadrupedA => Self::new(36, 14, 0.08, (0.6, 0.0)),
            RobotProfile::BipedT => Self::new(18, 13, 0.08, (0.32, 0.0)),
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn index(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    /// Base-frame xy of a cell center.
    #[inline]
    pub fn cell_center(&self, r: usize, c: usize) -> (f64, f64) {
        (
            self.center_offset.0 + (r as f64 - 0.5 * (self.rows as f64 - 1.0)) * self.resolution,
            self.center_offset.1 + (c as f64 - 0.5 * (self.cols as f64 - 1.0)) * self.resolution,
        )
    }

    /// Cell containing a base-frame xy point.
    #[inline]
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fr = ((x - self.center_offset.0) / self.resolution + 0.5 * self.rows as f64).floor();
        let fc = ((y - self.center_offset.1) / self.resolution + 0.5 * self.cols as f64).floor();
        if fr < 0.0 || fc < 0.0 || fr >= self.rows as f64 || fc >= self.cols as f64 {
            return None;
        }
        Some((fr as usize, fc as usize))
    }
}

/// Robot-frame 2.5-D scan: base-relative elevations plus a validity mask.
///
/// Invalid cells always hold the sentinel elevation.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGrid {
    geometry: GridGeometry,
    sentinel: f64,
    elevations: Vec<f64>,
    valid: Vec<bool>,
}

impl LocalGrid {
    /// All cells empty.
    pub fn empty(geometry: GridGeometry) -> Self {
        Self::empty_with_sentinel(geometry, SENTINEL)
    }

    pub fn empty_with_sentinel(geometry: GridGeometry, sentinel: f64) -> Self {
        Self {
            geometry,
            sentinel,
            elevations: vec![sentinel; geometry.len()],
            valid: vec![false; geometry.len()],
        }
    }

    /// Builds a grid from per-cell optional elevations.
    pub fn from_cells(geometry: GridGeometry, cells: &[Option<f64>]) -> Result<Self> {
        if cells.len() != geometry.len() {
            return Err(Error::ShapeMismatch {
                expected: geometry.shape(),
                got: (cells.len(), 1),
            });
        }
        let mut g = Self::empty(geometry);
        for (i, c) in cells.iter().enumerate() {
            g.set_index(i, *c);
        }
        Ok(g)
    }

    /// Builds a grid from raw elevations and a mask; invalid cells are reset
    /// to the sentinel.
    pub fn from_parts(
        geometry: GridGeometry,
        sentinel: f64,
        mut elevations: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if elevations.len() != geometry.len() || valid.len() != geometry.len() {
            return Err(Error::ShapeMismatch {
                expected: geometry.shape(),
                got: (elevations.len(), valid.len()),
            });
        }
        for (z, v) in elevations.iter_mut().zip(&valid) {
            if !*v {
                *z = sentinel;
            }
        }
        Ok(Self {
            geometry,
            sentinel,
            elevations,
            valid,
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn shape(&self) -> (usize, usize) {
        self.geometry.shape()
    }

    pub fn sentinel(&self) -> f64 {
        self.sentinel
    }

    /// Elevations including sentinel values.
    pub fn elevations(&self) -> &[f64] {
        &self.elevations
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.get_index(self.geometry.index(r, c))
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> Option<f64> {
        self.valid[i].then_some(self.elevations[i])
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, z: Option<f64>) {
        let i = self.geometry.index(r, c);
        self.set_index(i, z);
    }

    #[inline]
    pub fn set_index(&mut self, i: usize, z: Option<f64>) {
        match z {
            Some(z) => {
                self.elevations[i] = z;
                self.valid[i] = true;
            }
            None => {
                self.elevations[i] = self.sentinel;
                self.valid[i] = false;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    World,
    Base,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>, frame: Frame) -> Self {
        Self { points, frame }
    }

    pub fn empty(frame: Frame) -> Self {
        Self::new(Vec::new(), frame)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Concatenates same-frame clouds.
    pub fn merge(clouds: impl IntoIterator<Item = PointCloud>) -> PointCloud {
        let mut out = PointCloud::empty(Frame::World);
        for (k, c) in clouds.into_iter().enumerate() {
            if k == 0 {
                out.frame = c.frame;
            }
            debug_assert_eq!(out.frame, c.frame);
            out.points.extend(c.points);
        }
        out
    }
}

/// Pinhole depth camera. Camera frame: x forward, y left, z up.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    horizontal_fov: f64,
    vertical_fov: f64,
    cols: usize,
    rows: usize,
    max_range: f64,
    /// World <- camera.
    pub pose: Pose,
}

impl CameraModel {
    pub fn new(
        horizontal_fov: f64,
        vertical_fov: f64,
        cols: usize,
        rows: usize,
        max_range: f64,
        pose: Pose,
    ) -> Result<Self> {
        let fov_ok = |f: f64| f > 0.0 && f < std::f64::consts::PI;
        if !fov_ok(horizontal_fov) || !fov_ok(vertical_fov) {
            return Err(Error::Config(format!(
                "camera fov ({horizontal_fov}, {vertical_fov}) must lie in (0, pi)"
            )));
        }
        if cols == 0 || rows == 0 {
            return Err(Error::Config("camera needs at least one pixel".into()));
        }
        if !(max_range > 0.0) {
            return Err(Error::Config(format!("max_range {max_range} must be > 0")));
        }
        Ok(Self {
            horizontal_fov,
            vertical_fov,
            cols,
            rows,
            max_range,
            pose,
        })
    }

    pub fn horizontal_fov(&self) -> f64 {
        self.horizontal_fov
    }

    pub fn vertical_fov(&self) -> f64 {
        self.vertical_fov
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.cols, self.rows)
    }

    pub fn max_range(&self) -> f64 {
        self.max_range
    }

    /// Camera-frame unit ray through normalized image coordinates
    /// `u, v in [-1, 1]` (u right, v down).
    pub fn ray_camera(&self, u: f64, v: f64) -> Vector3<f64> {
        let th = (0.5 * self.horizontal_fov).tan();
        let tv = (0.5 * self.vertical_fov).tan();
        Vector3::new(1.0, -u * th, -v * tv).normalize()
    }

    /// World-frame unit rays, one per pixel center, row-major.
    pub fn rays_world(&self) -> Vec<Vector3<f64>> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            let v = 2.0 * (i as f64 + 0.5) / self.rows as f64 - 1.0;
            for j in 0..self.cols {
                let u = 2.0 * (j as f64 + 0.5) / self.cols as f64 - 1.0;
                out.push(self.pose.rotation * self.ray_camera(u, v));
            }
        }
        out
    }

    pub fn with_pose(&self, pose: Pose) -> Self {
        Self {
            pose,
            ..self.clone()
        }
    }
}

/// Cameras rigidly mounted on the base.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    /// Intrinsics with base <- camera mount poses.
    pub cameras: Vec<CameraModel>,
}

impl CameraRig {
    /// Default front rig: the quadruped carries two front cameras (a far
    /// and a near one), the biped a single far camera.
    pub fn for_profile(profile: RobotProfile, count: usize) -> Self {
        let far = |z: f64| {
            CameraModel::new(
                87f64.to_radians(),
                58f64.to_radians(),
                96,
                72,
                6.0,
                pose_xyz_rpy(0.35, 0.0, z, 0.0, 0.6, 0.0),
            )
            .expect("static intrinsics")
        };
        let near = |z: f64| {
            CameraModel::new(
                87f64.to_radians(),
                58f64.to_radians(),
                96,
                72,
                6.0,
                pose_xyz_rpy(0.38, 0.0, z, 0.0, 1.05, 0.0),
            )
            .expect("static intrinsics")
        };
        let mut cameras = match profile {
            RobotProfile::QuadrupedA => vec![far(0.05), near(0.0)],
            RobotProfile::BipedT => vec![far(0.1), near(0.05)],
        };
        cameras.truncate(count.max(1));
        Self { cameras }
    }

    /// Cameras placed in the world for a base pose.
    pub fn posed(&self, base_pose: &Pose) -> Vec<CameraModel> {
        self.cameras
            .iter()
            .map(|c| c.with_pose(base_pose * c.pose))
            .collect()
    }
}

/// Nearest intersection of a ray with the 2.5-D surface within `max_range`.
///
/// Each cell is a column of ground from minus infinity to its elevation
/// (void cells have none) plus an optional overlay slab. Traversal is a 2-D
/// DDA over the cells the ray's xy-projection crosses.
pub fn raycast(
    field: &Heightfield,
    origin: Point3<f64>,
    direction: Vector3<f64>,
    max_range: f64,
) -> Option<Point3<f64>> {
    debug_assert!((direction.norm() - 1.0).abs() < 1e-6);
    let res = field.resolution();
    let (lx, ly) = field.extent();
    let mut t0: f64 = 0.0;
    let mut t1: f64 = max_range;
    for (o, d, hi) in [(origin.x, direction.x, lx), (origin.y, direction.y, ly)] {
        if d == 0.0 {
            if o < 0.0 || o >= hi {
                return None;
            }
        } else {
            let a = -o / d;
            let b = (hi - o) / d;
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    if !(t0 <= t1) {
        return None;
    }

    let start = origin + direction * t0;
    let clamp_cell = |v: f64, n: usize| ((v / res).floor().max(0.0) as usize).min(n - 1);
    let mut ix = clamp_cell(start.x, field.length());
    let mut iy = clamp_cell(start.y, field.width());

    let axis = |o: f64, d: f64, i: usize| -> (i64, f64, f64) {
        if d > 0.0 {
            (1, ((i + 1) as f64 * res - o) / d, res / d)
        } else if d < 0.0 {
            (-1, (i as f64 * res - o) / d, -res / d)
        } else {
            (0, f64::INFINITY, f64::INFINITY)
        }
    };
    let (sx, mut next_x, dtx) = axis(origin.x, direction.x, ix);
    let (sy, mut next_y, dty) = axis(origin.y, direction.y, iy);

    let mut t_enter = t0;
    loop {
        let t_exit = next_x.min(next_y).min(t1).max(t_enter);
        if let Some(t) = cell_hit(field, ix, iy, &origin, &direction, t_enter, t_exit) {
            return Some(origin + direction * t);
        }
        if t_exit >= t1 {
            return None;
        }
        if next_x < next_y {
            let n = ix as i64 + sx;
            if n < 0 || n >= field.length() as i64 {
                return None;
            }
            ix = n as usize;
            t_enter = next_x;
            next_x += dtx;
        } else {
            let n = iy as i64 + sy;
            if n < 0 || n >= field.width() as i64 {
                return None;
            }
            iy = n as usize;
            t_enter = next_y;
            next_y += dty;
        }
    }
}

fn cell_hit(
    field: &Heightfield,
    ix: usize,
    iy: usize,
    o: &Point3<f64>,
    d: &Vector3<f64>,
    ta: f64,
    tb: f64,
) -> Option<f64> {
    let za = o.z + d.z * ta;
    let zb = o.z + d.z * tb;
    let mut best: Option<f64> = None;
    let mut offer = |t: f64| {
        if best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    if let Some(g) = field.ground(ix, iy) {
        if za <= g {
            offer(ta);
        } else if zb <= g {
            offer(((g - o.z) / d.z).clamp(ta, tb));
        }
    }
    if let Some(s) = field.overlay(ix, iy) {
        if za >= s.bottom && za <= s.top {
            offer(ta);
        } else if za > s.top && zb <= s.top {
            offer(((s.top - o.z) / d.z).clamp(ta, tb));
        } else if za < s.bottom && zb >= s.bottom {
            offer(((s.bottom - o.z) / d.z).clamp(ta, tb));
        }
    }
    best
}

/// One ray per pixel; hits become world points, misses are dropped.
pub fn render_depth(field: &Heightfield, camera: &CameraModel) -> PointCloud {
    let origin = Point3::from(camera.pose.translation.vector);
    let points = camera
        .rays_world()
        .into_iter()
        .filter_map(|d| raycast(field, origin, d, camera.max_range))
        .collect();
    PointCloud::new(points, Frame::World)
}

/// Bins a cloud into a local grid keeping the maximum base-relative z per
/// cell. Points outside the footprint are discarded.
pub fn project_to_grid(cloud: &PointCloud, base_pose: &Pose, geometry: &GridGeometry) -> LocalGrid {
    let frame = YawFrame::from_pose(base_pose);
    let mut grid = LocalGrid::empty(*geometry);
    for p in &cloud.points {
        let local = match cloud.frame {
            Frame::World => frame.to_local(p),
            Frame::Base => *p,
        };
        if let Some((r, c)) = geometry.cell_of(local.x, local.y) {
            let i = geometry.index(r, c);
            if !grid.valid[i] || local.z > grid.elevations[i] {
                grid.elevations[i] = local.z;
                grid.valid[i] = true;
            }
        }
    }
    grid
}

/// Exact top-surface elevation under each cell center (a vertical raycast
/// per cell), base-relative. Void or off-field cells are invalid.
pub fn label_grid(field: &Heightfield, base_pose: &Pose, geometry: &GridGeometry) -> LocalGrid {
    let frame = YawFrame::from_pose(base_pose);
    let mut grid = LocalGrid::empty(*geometry);
    for r in 0..geometry.rows {
        for c in 0..geometry.cols {
            let (x, y) = geometry.cell_center(r, c);
            let w = frame.xy_to_world(x, y);
            let z = field.top_surface_at(w.x, w.y).map(|z| z - frame.origin.z);
            grid.set(r, c, z);
        }
    }
    grid
}

/// Input/label pair for one pose: the label is the exact surface, the input
/// is what the cameras actually see after projection (occlusions included).
pub fn sample_scan(
    field: &Heightfield,
    base_pose: &Pose,
    cameras: &[CameraModel],
    geometry: &GridGeometry,
) -> (LocalGrid, LocalGrid) {
    let cloud = PointCloud::merge(cameras.iter().map(|c| render_depth(field, c)));
    let input = project_to_grid(&cloud, base_pose, geometry);
    let label = label_grid(field, base_pose, geometry);
    (input, label)
}

/// Rotation that points the camera x-axis along `dir`.
pub fn look_rotation(dir: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::rotation_between(&Vector3::x(), dir)
        .unwrap_or_else(|| UnitQuaternion::from_euler_angles(0.0, 0.0, std::f64::consts::PI))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pose_xyz_yaw;
    use crate::terrain::Slab;
    use nalgebra::Isometry3;

    fn flat(z: f64) -> Heightfield {
        Heightfield::flat(100, 100, 0.04, z)
    }

    #[test]
    fn vertical_ray_hits_flat_ground() {
        let f = flat(0.0);
        let hit = raycast(&f, Point3::new(2.0, 2.0, 1.0), -Vector3::z(), 10.0).unwrap();
        assert!((hit - Point3::new(2.0, 2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn vertical_ray_hits_box_top() {
        let mut f = flat(0.0);
        for ix in 40..60 {
            for iy in 40..60 {
                f.set_ground(ix, iy, Some(0.5));
            }
        }
        let hit = raycast(&f, Point3::new(2.0, 2.0, 2.0), -Vector3::z(), 10.0).unwrap();
        assert!((hit.z - 0.5).abs() < 1e-12);
    }

    #[test]
    fn horizontal_ray_above_terrain_misses() {
        let f = flat(0.0);
        assert!(raycast(&f, Point3::new(0.5, 0.5, 1.0), Vector3::x(), 100.0).is_none());
    }

    #[test]
    fn ray_respects_max_range() {
        let f = flat(0.0);
        let d = Vector3::new(1.0, 0.0, -0.5).normalize();
        assert!(raycast(&f, Point3::new(0.1, 2.0, 1.0), d, 2.2).is_none());
        assert!(raycast(&f, Point3::new(0.1, 2.0, 1.0), d, 2.3).is_some());
    }

    #[test]
    fn side_wall_hit() {
        let mut f = flat(0.0);
        for ix in 50..100 {
            for iy in 0..100 {
                f.set_ground(ix, iy, Some(1.0));
            }
        }
        let hit = raycast(&f, Point3::new(1.0, 2.0, 0.5), Vector3::x(), 10.0).unwrap();
        assert!((hit.x - 2.0).abs() < 1e-12 && (hit.z - 0.5).abs() < 1e-12);
    }

    #[test]
    fn void_cells_let_rays_through() {
        let mut f = flat(0.0);
        f.set_ground(50, 50, None);
        let hit = raycast(&f, Point3::new(2.02, 2.02, 1.0), -Vector3::z(), 10.0);
        assert!(hit.is_none());
    }

    #[test]
    fn overlay_slab_blocks_from_below_and_above() {
        let mut f = flat(0.0);
        f.set_overlay(
            50,
            50,
            Some(Slab {
                bottom: 1.0,
                top: 1.2,
            }),
        );
        let p = Point3::new(2.02, 2.02, 0.5);
        let up = raycast(&f, p, Vector3::z(), 10.0).unwrap();
        assert!((up.z - 1.0).abs() < 1e-12);
        let down = raycast(&f, Point3::new(2.02, 2.02, 3.0), -Vector3::z(), 10.0).unwrap();
        assert!((down.z - 1.2).abs() < 1e-12);
    }

    #[test]
    fn single_center_ray_lands_on_ground() {
        let f = flat(0.0);
        // Camera 1 m above ground, pitched 45 degrees down along +x.
        let pose = pose_xyz_rpy(1.0, 2.0, 1.0, 0.0, std::f64::consts::FRAC_PI_4, 0.0);
        let cam = CameraModel::new(1.0, 1.0, 1, 1, 10.0, pose).unwrap();
        let cloud = render_depth(&f, &cam);
        assert_eq!(cloud.len(), 1);
        let p = cloud.points[0];
        assert!((p - Point3::new(2.0, 2.0, 0.0)).norm() < 1e-9, "{p:?}");
    }

    #[test]
    fn sky_facing_camera_sees_nothing() {
        let f = flat(0.0);
        let pose = pose_xyz_rpy(2.0, 2.0, 1.0, 0.0, -1.2, 0.0);
        let cam = CameraModel::new(0.8, 0.6, 16, 12, 10.0, pose).unwrap();
        assert!(render_depth(&f, &cam).is_empty());
    }

    #[test]
    fn render_is_deterministic() {
        let f = crate::terrain::generate(&crate::terrain::TerrainSpec::new(
            crate::terrain::TerrainFamily::Boxes,
            0.7,
            3,
            RobotProfile::QuadrupedA,
        ));
        let base = pose_xyz_yaw(3.0, 2.0, 0.8, 0.3);
        let rig = CameraRig::for_profile(RobotProfile::QuadrupedA, 2);
        let cams = rig.posed(&base);
        let a = render_depth(&f, &cams[0]);
        let b = render_depth(&f, &cams[0]);
        assert_eq!(a, b);
        assert!(a.len() > 1000);
    }

    #[test]
    fn camera_validation() {
        let p = Isometry3::identity();
        assert!(CameraModel::new(0.0, 1.0, 1, 1, 1.0, p).is_err());
        assert!(CameraModel::new(1.0, 3.2, 1, 1, 1.0, p).is_err());
        assert!(CameraModel::new(1.0, 1.0, 0, 1, 1.0, p).is_err());
        assert!(CameraModel::new(1.0, 1.0, 1, 1, 0.0, p).is_err());
    }

    #[test]
    fn projection_keeps_max_z() {
        let g = GridGeometry::new(10, 10, 0.1, (0.0, 0.0));
        let base = pose_xyz_yaw(0.0, 0.0, 0.0, 0.0);
        let cloud = PointCloud::new(
            vec![Point3::new(0.01, 0.01, 0.1), Point3::new(0.02, 0.03, 0.3)],
            Frame::World,
        );
        let grid = project_to_grid(&cloud, &base, &g);
        let (r, c) = g.cell_of(0.01, 0.01).unwrap();
        assert_eq!(grid.get(r, c), Some(0.3));
        assert_eq!(grid.valid_count(), 1);
    }

    #[test]
    fn empty_cloud_gives_all_sentinel() {
        let g = GridGeometry::local_for(RobotProfile::BipedT);
        let grid = project_to_grid(&PointCloud::empty(Frame::World), &Pose::identity(), &g);
        assert_eq!(grid.valid_count(), 0);
        assert!(grid.elevations().iter().all(|&z| z == SENTINEL));
    }

    #[test]
    fn far_points_are_discarded() {
        let g = GridGeometry::new(50, 50, 0.04, (0.0, 0.0));
        let cloud = PointCloud::new(vec![Point3::new(10.0, 0.0, 0.2)], Frame::World);
        let grid = project_to_grid(&cloud, &Pose::identity(), &g);
        assert_eq!(grid.valid_count(), 0);
    }

    #[test]
    fn projection_uses_yaw_only() {
        let g = GridGeometry::new(20, 20, 0.1, (0.0, 0.0));
        let tilted = pose_xyz_rpy(1.0, 1.0, 0.5, 0.3, 0.2, std::f64::consts::FRAC_PI_2);
        // World point 0.55 m "ahead" along world +y, i.e. base +x after yaw.
        let cloud = PointCloud::new(vec![Point3::new(1.0, 1.55, 0.0)], Frame::World);
        let grid = project_to_grid(&cloud, &tilted, &g);
        let (r, c) = g.cell_of(0.55, 0.0).unwrap();
        assert!((grid.get(r, c).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn flat_label_is_minus_base_height() {
        let f = flat(0.0);
        let g = GridGeometry::local_for(RobotProfile::QuadrupedA);
        let label = label_grid(&f, &pose_xyz_yaw(1.0, 2.0, 0.6, 0.4), &g);
        assert_eq!(label.valid_count(), g.len());
        assert!(label.elevations().iter().all(|&z| (z + 0.6).abs() < 1e-12));
    }

    #[test]
    fn label_of_void_is_invalid() {
        let mut f = flat(0.0);
        let g = GridGeometry::new(5, 5, 0.04, (0.0, 0.0));
        let base = pose_xyz_yaw(2.02, 2.02, 0.6, 0.0);
        let (ix, iy) = f.cell_at(2.02, 2.02).unwrap();
        f.set_ground(ix, iy, None);
        let label = label_grid(&f, &base, &g);
        assert_eq!(label.get(2, 2), None);
        assert_eq!(label.elevations()[g.index(2, 2)], SENTINEL);
        assert_eq!(label.valid_count(), 24);
    }

    #[test]
    fn label_matches_downward_raycast() {
        let spec = crate::terrain::TerrainSpec::new(
            crate::terrain::TerrainFamily::FloatingBoxes,
            1.0,
            5,
            RobotProfile::QuadrupedA,
        );
        let f = crate::terrain::generate(&spec);
        let base = pose_xyz_yaw(3.0, 2.0, 0.6, 0.7);
        let g = GridGeometry::local_for(RobotProfile::QuadrupedA);
        let label = label_grid(&f, &base, &g);
        let frame = YawFrame::from_pose(&base);
        for r in 0..g.rows {
            for c in 0..g.cols {
                let (x, y) = g.cell_center(r, c);
                let w = frame.xy_to_world(x, y);
                let hit = raycast(&f, Point3::new(w.x, w.y, 10.0), -Vector3::z(), 100.0)
                    .map(|p| p.z - 0.6);
                match (hit, label.get(r, c)) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9),
                    (None, None) => {}
                    other => panic!("mismatch {other:?}"),
                }
            }
        }
    }

    #[test]
    fn tall_box_occludes_cells_behind_it() {
        let mut f = flat(0.0);
        // 1 m wall spanning y, 1.4 m ahead of the base.
        for ix in 60..63 {
            for iy in 0..100 {
                f.set_ground(ix, iy, Some(1.0));
            }
        }
        let base = pose_xyz_yaw(1.0, 2.0, 0.6, 0.0);
        let g = GridGeometry::local_for(RobotProfile::QuadrupedA);
        let rig = CameraRig::for_profile(RobotProfile::QuadrupedA, 2);
        let (input, label) = sample_scan(&f, &base, &rig.posed(&base), &g);
        assert_eq!(label.valid_count(), g.len());
        // Cells just behind the wall (x in (1.52, 1.9) base frame) are hidden.
        let mut behind = 0;
        for r in 0..g.rows {
            let (x, _) = g.cell_center(r, 0);
            if x > 1.56 && x < 1.9 {
                for c in 0..g.cols {
                    assert!(
                        input.get(r, c).is_none(),
                        "cell ({r},{c}) visible behind wall"
                    );
                    behind += 1;
                }
            }
        }
        assert!(behind > 0);
        assert!(input.valid_count() > 100);
    }

    #[test]
    fn grid_cell_center_round_trip() {
        for g in [
            GridGeometry::local_for(RobotProfile::QuadrupedA),
            GridGeometry::controller_for(RobotProfile::BipedT),
        ] {
            for r in 0..g.rows {
                for c in 0..g.cols {
                    let (x, y) = g.cell_center(r, c);
                    assert_eq!(g.cell_of(x, y), Some((r, c)));
                }
            }
        }
    }
}
