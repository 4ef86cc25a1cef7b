//! Procedural ground-truth terrains.
//!
//! Every family is laid out along the tile's x-axis: a start zone, a feature
//! zone and an end zone. Difficulty in `[0, 1]` linearly interpolates each
//! family's governing parameter between its easy and hard endpoints.

mod families;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::rng;
use crate::{Error, Result, RobotProfile};

pub use families::{governing_parameter, Ramp};

/// Default cell size, matching the local-grid resolution.
pub const DEFAULT_RESOLUTION: f64 = 0.04;

/// Vertical extent of an overlay box hovering over one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slab {
    pub bottom: f64,
    pub top: f64,
}

/// Rectangular 2.5-D grid of ground elevations.
///
/// Cell `(ix, iy)` covers `x in [ix*res, (ix+1)*res)` and
/// `y in [iy*res, (iy+1)*res)`; storage is row-major with `ix` as the row.
/// Each cell is a column of solid ground from minus infinity up to its
/// elevation; void cells have no ground at all. Optional overlay slabs model
/// floating boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Heightfield {
    length: usize,
    width: usize,
    resolution: f64,
    elevations: Vec<f64>,
    void: Vec<bool>,
    overlay: Vec<Option<Slab>>,
    floor: Option<f64>,
}

impl Heightfield {
    /// Flat field at elevation `z`.
    pub fn flat(length: usize, width: usize, resolution: f64, z: f64) -> Self {
        assert!(
            length >= 2 && width >= 2,
            "heightfield must be at least 2x2"
        );
        assert!(resolution > 0.0, "resolution must be positive");
        let n = length * width;
        Self {
            length,
            width,
            resolution,
            elevations: vec![z; n],
            void: vec![false; n],
            overlay: Vec::new(),
            floor: None,
        }
    }

    /// Builds a field from raw rows; `NaN` marks void cells.
    pub fn from_elevations(
        length: usize,
        width: usize,
        resolution: f64,
        elevations: Vec<f64>,
    ) -> Result<Self> {
        if length < 2 || width < 2 || elevations.len() != length * width {
            return Err(Error::ShapeMismatch {
                expected: (length, width),
                got: (elevations.len(), 1),
            });
        }
        if !(resolution > 0.0) {
            return Err(Error::Config(format!(
                "resolution {resolution} must be > 0"
            )));
        }
        let void = elevations
            .iter()
            .map(|z| !z.is_finite())
            .collect::<Vec<_>>();
        let elevations = elevations
            .into_iter()
            .map(|z| if z.is_finite() { z } else { 0.0 })
            .collect();
        Ok(Self {
            length,
            width,
            resolution,
            elevations,
            void,
            overlay: Vec::new(),
            floor: None,
        })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// Metric size `(x, y)`.
    pub fn extent(&self) -> (f64, f64) {
        (
            self.length as f64 * self.resolution,
            self.width as f64 * self.resolution,
        )
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix * self.width + iy
    }

    /// Ground elevation, `None` for void cells.
    #[inline]
    pub fn ground(&self, ix: usize, iy: usize) -> Option<f64> {
        let i = self.index(ix, iy);
        (!self.void[i]).then_some(self.elevations[i])
    }

    #[inline]
    pub fn is_void(&self, ix: usize, iy: usize) -> bool {
        self.void[self.index(ix, iy)]
    }

    #[inline]
    pub fn overlay(&self, ix: usize, iy: usize) -> Option<Slab> {
        if self.overlay.is_empty() {
            None
        } else {
            self.overlay[self.index(ix, iy)]
        }
    }

    pub fn has_overlay(&self) -> bool {
        self.overlay.iter().any(Option::is_some)
    }

    /// Height of the sparse-terrain floor, if the generator added one.
    pub fn floor(&self) -> Option<f64> {
        self.floor
    }

    pub fn set_ground(&mut self, ix: usize, iy: usize, z: Option<f64>) {
        let i = self.index(ix, iy);
        match z {
            Some(z) => {
                self.elevations[i] = z;
                self.void[i] = false;
            }
            None => {
                self.elevations[i] = 0.0;
                self.void[i] = true;
            }
        }
    }

    pub fn set_overlay(&mut self, ix: usize, iy: usize, slab: Option<Slab>) {
        if self.overlay.is_empty() {
            if slab.is_none() {
                return;
            }
            self.overlay = vec![None; self.length * self.width];
        }
        let i = self.index(ix, iy);
        self.overlay[i] = slab;
    }

    pub(crate) fn set_floor(&mut self, floor: Option<f64>) {
        self.floor = floor;
    }

    /// Highest solid surface in a cell: overlay top or ground.
    #[inline]
    pub fn top_surface(&self, ix: usize, iy: usize) -> Option<f64> {
        let g = self.ground(ix, iy);
        match (g, self.overlay(ix, iy)) {
            (Some(g), Some(s)) => Some(g.max(s.top)),
            (None, Some(s)) => Some(s.top),
            (g, None) => g,
        }
    }

    /// Cell containing a world xy point.
    #[inline]
    pub fn cell_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = (x / self.resolution).floor();
        let fy = (y / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.length as f64 || fy >= self.width as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    /// Top surface under a world xy point.
    pub fn top_surface_at(&self, x: f64, y: f64) -> Option<f64> {
        self.cell_at(x, y)
            .and_then(|(ix, iy)| self.top_surface(ix, iy))
    }

    /// Cell-center coordinates.
    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            (ix as f64 + 0.5) * self.resolution,
            (iy as f64 + 0.5) * self.resolution,
        )
    }

    /// Largest finite surface elevation, including overlay tops.
    pub fn max_surface(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for ix in 0..self.length {
            for iy in 0..self.width {
                if let Some(z) = self.top_surface(ix, iy) {
                    best = Some(best.map_or(z, |b: f64| b.max(z)));
                }
            }
        }
        best
    }

    /// Raw elevations with `NaN` in void cells, row-major.
    pub fn elevations_with_nan(&self) -> Vec<f64> {
        self.elevations
            .iter()
            .zip(&self.void)
            .map(|(&z, &v)| if v { f64::NAN } else { z })
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn overlay_cells(&self) -> &[Option<Slab>] {
        &self.overlay
    }
}

/// Terrain families: the locomotion curriculum primitives plus three
/// mapping-only mesh families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TerrainFamily {
    Rough,
    StairDown,
    StairUp,
    Boxes,
    Obstacles,
    ClimbUp,
    ClimbDown,
    ClimbConsecutive,
    Gap,
    Pallets,
    Stones,
    Beam,
    StackedBoxes,
    RandomHeightfield,
    FloatingBoxes,
}

impl TerrainFamily {
    pub const ALL: [TerrainFamily; 15] = [
        TerrainFamily::Rough,
        TerrainFamily::StairDown,
        TerrainFamily::StairUp,
        TerrainFamily::Boxes,
        TerrainFamily::Obstacles,
        TerrainFamily::ClimbUp,
        TerrainFamily::ClimbDown,
        TerrainFamily::ClimbConsecutive,
        TerrainFamily::Gap,
        TerrainFamily::Pallets,
        TerrainFamily::Stones,
        TerrainFamily::Beam,
        TerrainFamily::StackedBoxes,
        TerrainFamily::RandomHeightfield,
        TerrainFamily::FloatingBoxes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TerrainFamily::Rough => "rough",
            TerrainFamily::StairDown => "stair-down",
            TerrainFamily::StairUp => "stair-up",
            TerrainFamily::Boxes => "boxes",
            TerrainFamily::Obstacles => "obstacles",
            TerrainFamily::ClimbUp => "climb-up",
            TerrainFamily::ClimbDown => "climb-down",
            TerrainFamily::ClimbConsecutive => "climb-consecutive",
            TerrainFamily::Gap => "gap",
            TerrainFamily::Pallets => "pallets",
            TerrainFamily::Stones => "stones",
            TerrainFamily::Beam => "beam",
            TerrainFamily::StackedBoxes => "stacked-boxes",
            TerrainFamily::RandomHeightfield => "random-heightfield",
            TerrainFamily::FloatingBoxes => "floating-boxes",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Self::ALL.into_iter().find(|f| f.name() == norm)
    }

    /// Sparse terrains get a floor below the footholds.
    pub fn is_sparse(self) -> bool {
        matches!(
            self,
            TerrainFamily::Gap
                | TerrainFamily::Pallets
                | TerrainFamily::Stones
                | TerrainFamily::Beam
        )
    }

    /// Terrains that must be crossed: goals lie in the far-end zone.
    pub fn is_crossing(self) -> bool {
        matches!(
            self,
            TerrainFamily::ClimbUp
                | TerrainFamily::ClimbDown
                | TerrainFamily::ClimbConsecutive
                | TerrainFamily::Gap
                | TerrainFamily::Pallets
                | TerrainFamily::Beam
        )
    }
}

/// Fully determines one generated terrain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainSpec {
    pub family: TerrainFamily,
    difficulty: f64,
    pub seed: u64,
    pub profile: RobotProfile,
}

impl TerrainSpec {
    /// Difficulty is clamped into `[0, 1]` (NaN becomes 0).
    pub fn new(family: TerrainFamily, difficulty: f64, seed: u64, profile: RobotProfile) -> Self {
        let difficulty = if difficulty.is_nan() {
            0.0
        } else {
            difficulty.clamp(0.0, 1.0)
        };
        Self {
            family,
            difficulty,
            seed,
            profile,
        }
    }

    pub fn difficulty(&self) -> f64 {
        self.difficulty
    }
}

/// Tile geometry shared by all families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainLayout {
    pub length_m: f64,
    pub width_m: f64,
    pub resolution: f64,
    /// End of the start zone along x (m).
    pub start_end: f64,
    /// Start of the goal zone along x (m).
    pub goal_start: f64,
    /// Sparse families get a visible floor; `false` leaves true voids.
    pub sparse_floor: bool,
}

impl Default for TerrainLayout {
    fn default() -> Self {
        Self {
            length_m: 8.0,
            width_m: 4.0,
            resolution: DEFAULT_RESOLUTION,
            start_end: 2.0,
            goal_start: 6.0,
            sparse_floor: true,
        }
    }
}

impl TerrainLayout {
    pub fn cells(&self) -> (usize, usize) {
        (
            ((self.length_m / self.resolution).round() as usize).max(2),
            ((self.width_m / self.resolution).round() as usize).max(2),
        )
    }

    /// Center of the feature zone along x.
    pub fn feature_center(&self) -> f64 {
        0.5 * (self.start_end + self.goal_start)
    }
}

/// Generates the terrain for `spec` on the default layout.
pub fn generate(spec: &TerrainSpec) -> Heightfield {
    generate_with(spec, &TerrainLayout::default())
}

pub fn generate_with(spec: &TerrainSpec, layout: &TerrainLayout) -> Heightfield {
    families::build(spec, layout)
}

/// A goal pose on the terrain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Goal {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Samples a goal on a non-void, non-floor cell.
///
/// Crossing families restrict candidates to the far-end zone; all others
/// accept any cell.
pub fn sample_goal(spec: &TerrainSpec, field: &Heightfield, rng_seed: u64) -> Result<Goal> {
    sample_goal_with(spec, field, &TerrainLayout::default(), rng_seed)
}

pub fn sample_goal_with(
    spec: &TerrainSpec,
    field: &Heightfield,
    layout: &TerrainLayout,
    rng_seed: u64,
) -> Result<Goal> {
    let min_x = if spec.family.is_crossing() {
        layout.goal_start
    } else {
        f64::NEG_INFINITY
    };
    let floor = field.floor();
    let mut candidates = Vec::new();
    for ix in 0..field.length() {
        for iy in 0..field.width() {
            let (cx, _) = field.cell_center(ix, iy);
            if cx < min_x {
                continue;
            }
            let Some(z) = field.ground(ix, iy) else {
                continue;
            };
            if floor.is_some_and(|f| (z - f).abs() < 1e-9) {
                continue;
            }
            candidates.push((ix, iy));
        }
    }
    let mut rng = rng::stream(rng_seed, 0x6f61_6c73);
    let &(ix, iy) = candidates.choose(&mut rng).ok_or(Error::NoValidGoal)?;
    let (x, y) = field.cell_center(ix, iy);
    let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    Ok(Goal { x, y, yaw })
}

/// Locomotion training proportions per family.
pub fn default_proportions() -> BTreeMap<TerrainFamily, f64> {
    use TerrainFamily::*;
    [
        (Rough, 0.05),
        (StairDown, 0.05),
        (StairUp, 0.05),
        (Boxes, 0.05),
        (Obstacles, 0.05),
        (ClimbUp, 0.20),
        (ClimbDown, 0.05),
        (ClimbConsecutive, 0.05),
        (Gap, 0.05),
        (Pallets, 0.05),
        (Stones, 0.30),
        (Beam, 0.05),
    ]
    .into_iter()
    .collect()
}

/// Mapping-model training mix: the locomotion terrains plus stacked boxes,
/// random heightfields and floating boxes in equal quarters.
pub fn mapping_proportions() -> BTreeMap<TerrainFamily, f64> {
    let mut out: BTreeMap<TerrainFamily, f64> = default_proportions()
        .into_iter()
        .map(|(f, p)| (f, 0.25 * p))
        .collect();
    out.insert(TerrainFamily::StackedBoxes, 0.25);
    out.insert(TerrainFamily::RandomHeightfield, 0.25);
    out.insert(TerrainFamily::FloatingBoxes, 0.25);
    out
}

/// Splits `count` terrains across families by largest-remainder rounding,
/// assigning each a uniform difficulty and its own seed. Output order is
/// shuffled deterministically.
pub fn mix(
    proportions: &BTreeMap<TerrainFamily, f64>,
    count: usize,
    seed: u64,
    profile: RobotProfile,
) -> Result<Vec<TerrainSpec>> {
    let sum: f64 = proportions.values().sum();
    if (sum - 1.0).abs() > 1e-9 || proportions.values().any(|p| !(*p >= 0.0)) {
        return Err(Error::BadProportions(sum));
    }
    let counts = largest_remainder(proportions, count);
    let mut rng = rng::stream(seed, 0x6d69_78);
    let mut specs = Vec::with_capacity(count);
    for (family, n) in counts {
        for _ in 0..n {
            let difficulty = rng.gen::<f64>();
            specs.push(TerrainSpec::new(family, difficulty, rng.gen(), profile));
        }
    }
    specs.shuffle(&mut rng);
    Ok(specs)
}

fn largest_remainder(
    proportions: &BTreeMap<TerrainFamily, f64>,
    count: usize,
) -> Vec<(TerrainFamily, usize)> {
    let mut rows: Vec<(TerrainFamily, usize, f64)> = proportions
        .iter()
        .map(|(&f, &p)| {
            let exact = p * count as f64;
            // Guard against 0.3*100 = 30.000000000000004 style drift.
            let floor = (exact + 1e-9).floor();
            (f, floor as usize, (exact - floor).max(0.0))
        })
        .collect();
    let assigned: usize = rows.iter().map(|r| r.1).sum();
    let mut left = count.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[b].2.total_cmp(&rows[a].2).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(rows.len() * 2) {
        if left == 0 {
            break;
        }
        rows[i].1 += 1;
        left -= 1;
    }
    rows.into_iter().map(|(f, n, _)| (f, n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(specs: &[TerrainSpec]) -> BTreeMap<TerrainFamily, usize> {
        let mut m = BTreeMap::new();
        for s in specs {
            *m.entry(s.family).or_insert(0) += 1;
        }
        m
    }

    #[test]
    fn difficulty_is_clamped() {
        let s = TerrainSpec::new(TerrainFamily::Gap, 2.0, 1, RobotProfile::QuadrupedA);
        assert_eq!(s.difficulty(), 1.0);
        let s = TerrainSpec::new(TerrainFamily::Gap, -1.0, 1, RobotProfile::QuadrupedA);
        assert_eq!(s.difficulty(), 0.0);
    }

    #[test]
    fn mix_single_family() {
        let props = [(TerrainFamily::Stones, 1.0)].into_iter().collect();
        let specs = mix(&props, 10, 3, RobotProfile::QuadrupedA).unwrap();
        assert_eq!(specs.len(), 10);
        assert!(specs.iter().all(|s| s.family == TerrainFamily::Stones));
    }

    #[test]
    fn mix_default_hundred() {
        let specs = mix(&default_proportions(), 100, 5, RobotProfile::QuadrupedA).unwrap();
        let c = counts(&specs);
        assert_eq!(c[&TerrainFamily::Stones], 30);
        assert_eq!(c[&TerrainFamily::ClimbUp], 20);
        for f in [
            TerrainFamily::Rough,
            TerrainFamily::StairDown,
            TerrainFamily::StairUp,
            TerrainFamily::Boxes,
            TerrainFamily::Obstacles,
            TerrainFamily::ClimbDown,
            TerrainFamily::ClimbConsecutive,
            TerrainFamily::Gap,
            TerrainFamily::Pallets,
            TerrainFamily::Beam,
        ] {
            assert_eq!(c[&f], 5, "{f:?}");
        }
    }

    #[test]
    fn mix_rejects_bad_sum() {
        let props = [(TerrainFamily::Rough, 0.5), (TerrainFamily::Gap, 0.6)]
            .into_iter()
            .collect();
        assert!(matches!(
            mix(&props, 10, 0, RobotProfile::QuadrupedA),
            Err(Error::BadProportions(_))
        ));
    }

    #[test]
    fn mix_rounding_totals_count() {
        let props = [
            (TerrainFamily::Rough, 1.0 / 3.0),
            (TerrainFamily::Gap, 1.0 / 3.0),
            (TerrainFamily::Beam, 1.0 / 3.0),
        ]
        .into_iter()
        .collect();
        for n in [0, 1, 2, 7, 100] {
            let specs = mix(&props, n, 1, RobotProfile::BipedT).unwrap();
            assert_eq!(specs.len(), n);
        }
        let c = counts(&mix(&props, 7, 1, RobotProfile::BipedT).unwrap());
        assert_eq!(c.values().copied().collect::<Vec<_>>(), vec![3, 2, 2]);
    }

    #[test]
    fn mapping_mix_sums_to_one() {
        let s: f64 = mapping_proportions().values().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn goal_on_all_void_field_fails() {
        let mut f = Heightfield::flat(4, 4, 0.1, 0.0);
        for ix in 0..4 {
            for iy in 0..4 {
                f.set_ground(ix, iy, None);
            }
        }
        let spec = TerrainSpec::new(TerrainFamily::Rough, 0.5, 1, RobotProfile::QuadrupedA);
        assert!(matches!(sample_goal(&spec, &f, 1), Err(Error::NoValidGoal)));
    }

    #[test]
    fn goal_anywhere_on_rough() {
        let spec = TerrainSpec::new(TerrainFamily::Rough, 0.5, 9, RobotProfile::QuadrupedA);
        let f = generate(&spec);
        let (lx, ly) = f.extent();
        let mut min_x = f64::INFINITY;
        for s in 0..200 {
            let g = sample_goal(&spec, &f, s).unwrap();
            assert!(g.x >= 0.0 && g.x < lx && g.y >= 0.0 && g.y < ly);
            min_x = min_x.min(g.x);
        }
        assert!(min_x < 2.0, "rough goals should cover the whole tile");
    }

    #[test]
    fn goal_far_end_on_beam() {
        let spec = TerrainSpec::new(TerrainFamily::Beam, 0.7, 4, RobotProfile::QuadrupedA);
        let f = generate(&spec);
        let layout = TerrainLayout::default();
        for s in 0..100 {
            let g = sample_goal(&spec, &f, s).unwrap();
            assert!(g.x >= layout.goal_start);
            let (ix, iy) = f.cell_at(g.x, g.y).unwrap();
            assert!(f.ground(ix, iy).is_some());
            assert_ne!(f.ground(ix, iy), f.floor());
        }
    }

    #[test]
    fn family_names_round_trip() {
        for f in TerrainFamily::ALL {
            assert_eq!(TerrainFamily::parse(f.name()), Some(f));
        }
        assert_eq!(
            TerrainFamily::parse("climb_up"),
            Some(TerrainFamily::ClimbUp)
        );
    }
}
