use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Heightfield, Slab, TerrainFamily, TerrainLayout, TerrainSpec};
use crate::rng;
use crate::RobotProfile;

/// Linear difficulty ramp between the easy and hard endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ramp {
    pub easy: f64,
    pub hard: f64,
}

impl Ramp {
    const fn new(easy: f64, hard: f64) -> Self {
        Self { easy, hard }
    }

    pub fn at(&self, difficulty: f64) -> f64 {
        self.easy + (self.hard - self.easy) * difficulty
    }
}

/// The ramp of a family's governing parameter.
///
/// Units: noise amplitude / heights / widths in meters, stair slope in
/// radians, obstacle and floating-box density in boxes per square meter.
pub fn governing_parameter(family: TerrainFamily, profile: RobotProfile) -> Ramp {
    use RobotProfile::*;
    use TerrainFamily::*;
    let quad = profile == QuadrupedA;
    match family {
        Rough => Ramp::new(0.0, if quad { 0.2 } else { 0.15 }),
        StairDown | StairUp => Ramp::new(5f64.to_radians(), 45f64.to_radians()),
        Boxes => Ramp::new(0.05, if quad { 0.4 } else { 0.3 }),
        Obstacles => Ramp::new(0.0, 0.5),
        ClimbUp => Ramp::new(0.1, if quad { 1.0 } else { 0.48 }),
        ClimbDown => Ramp::new(0.2, if quad { 1.0 } else { 0.88 }),
        ClimbConsecutive => Ramp::new(0.05, if quad { 0.5 } else { 0.3 }),
        Gap => Ramp::new(0.1, if quad { 1.1 } else { 0.6 }),
        Pallets => Ramp::new(0.4, 0.16),
        Stones => STONE_SIZE,
        Beam => Ramp::new(0.9, 0.18),
        StackedBoxes => Ramp::new(0.1, 0.6),
        RandomHeightfield => Ramp::new(0.05, 1.0),
        FloatingBoxes => Ramp::new(0.2, 1.5),
    }
}

fn second_ring_height(profile: RobotProfile) -> Ramp {
    Ramp::new(
        0.05,
        if profile == RobotProfile::QuadrupedA {
            0.4
        } else {
            0.3
        },
    )
}

fn pallet_gap(profile: RobotProfile) -> Ramp {
    Ramp::new(
        0.08,
        if profile == RobotProfile::QuadrupedA {
            0.35
        } else {
            0.2
        },
    )
}

fn pallet_height_step(profile: RobotProfile) -> Ramp {
    Ramp::new(
        0.0,
        if profile == RobotProfile::QuadrupedA {
            0.3
        } else {
            0.2
        },
    )
}

pub(super) const STONE_SIZE: Ramp = Ramp::new(0.6, 0.25);
pub(super) const STONE_GAP: Ramp = Ramp::new(0.05, 0.3);
pub(super) const STONE_JITTER: Ramp = Ramp::new(0.05, 0.15);

/// Stair tread depth range (m).
const STAIR_RUN: (f64, f64) = (0.25, 0.35);
const STAIR_CORRIDOR: (f64, f64) = (1.0, 2.5);
const STAIR_WALL_THICKNESS: (f64, f64) = (0.1, 0.3);
const STAIR_WALL_RISE: (f64, f64) = (0.1, 0.6);
const FLOOR_RANGE: (f64, f64) = (-1.5, -0.35);
/// Edge perturbation as a fraction of the climb height / gap distance.
const CLIMB_EDGE_JITTER: f64 = 0.2;
const GAP_EDGE_JITTER: f64 = 0.1;
const GAP_SIDE_OFFSET: f64 = 0.3;

struct Builder<'a> {
    field: Heightfield,
    rng: ChaCha8Rng,
    layout: &'a TerrainLayout,
    /// Value written into "no foothold" cells of sparse terrains.
    hole: Option<f64>,
}

impl Builder<'_> {
    fn mid_y(&self) -> f64 {
        0.5 * self.field.extent().1
    }

    fn uniform(&mut self, (lo, hi): (f64, f64)) -> f64 {
        if hi > lo {
            self.rng.gen_range(lo..hi)
        } else {
            lo
        }
    }

    fn symmetric(&mut self, a: f64) -> f64 {
        self.uniform((-a, a))
    }

    /// Writes `f(x, y)` into every cell; `None` leaves the cell unchanged.
    fn paint(&mut self, mut f: impl FnMut(f64, f64) -> Option<Option<f64>>) {
        for ix in 0..self.field.length() {
            for iy in 0..self.field.width() {
                let (x, y) = self.field.cell_center(ix, iy);
                if let Some(z) = f(x, y) {
                    self.field.set_ground(ix, iy, z);
                }
            }
        }
    }

    /// Per-cell elevation jitter on the cells touching the line `x = edge`.
    fn jitter_edge(&mut self, edge: f64, amplitude: f64) {
        if amplitude <= 0.0 {
            return;
        }
        let res = self.field.resolution();
        for ix in 0..self.field.length() {
            let cx = (ix as f64 + 0.5) * res;
            if (cx - edge).abs() >= res {
                continue;
            }
            for iy in 0..self.field.width() {
                if let Some(z) = self.field.ground(ix, iy) {
                    if self.hole == Some(z) {
                        continue;
                    }
                    let dz = self.symmetric(amplitude);
                    self.field.set_ground(ix, iy, Some(z + dz));
                }
            }
        }
    }

    /// Adds `dz` to all cells inside an axis-aligned footprint.
    fn add_box(&mut self, cx: f64, cy: f64, sx: f64, sy: f64, dz: f64) {
        let res = self.field.resolution();
        for_cells_in(&mut self.field, cx, cy, sx, sy, res, |ix, iy, f| {
            if let Some(z) = f.ground(ix, iy) {
                f.set_ground(ix, iy, Some(z + dz));
            }
        });
    }

    fn random_footprint(&mut self, size: (f64, f64)) -> (f64, f64, f64, f64) {
        let (lx, ly) = self.field.extent();
        let cx = self.uniform((0.0, lx));
        let cy = self.uniform((0.0, ly));
        let sx = self.uniform(size);
        let sy = self.uniform(size);
        (cx, cy, sx, sy)
    }
}

fn for_cells_in(
    field: &mut Heightfield,
    cx: f64,
    cy: f64,
    sx: f64,
    sy: f64,
    res: f64,
    mut f: impl FnMut(usize, usize, &mut Heightfield),
) {
    let x0 = (((cx - 0.5 * sx) / res).floor().max(0.0)) as usize;
    let x1 = (((cx + 0.5 * sx) / res).ceil().max(0.0) as usize).min(field.length());
    let y0 = (((cy - 0.5 * sy) / res).floor().max(0.0)) as usize;
    let y1 = (((cy + 0.5 * sy) / res).ceil().max(0.0) as usize).min(field.width());
    for ix in x0..x1 {
        for iy in y0..y1 {
            let (px, py) = field.cell_center(ix, iy);
            if (px - cx).abs() <= 0.5 * sx && (py - cy).abs() <= 0.5 * sy {
                f(ix, iy, field);
            }
        }
    }
}

pub(super) fn build(spec: &TerrainSpec, layout: &TerrainLayout) -> Heightfield {
    let (length, width) = layout.cells();
    let field = Heightfield::flat(length, width, layout.resolution, 0.0);
    let family_tag = spec.family as u64;
    let profile_tag = spec.profile as u64;
    let rng = rng::stream(spec.seed, rng::hash_words(&[family_tag, profile_tag]));
    let mut b = Builder {
        field,
        rng,
        layout,
        hole: None,
    };
    if spec.family.is_sparse() && layout.sparse_floor {
        let floor = b.uniform(FLOOR_RANGE);
        b.hole = Some(floor);
        b.field.set_floor(Some(floor));
    }
    let d = spec.difficulty();
    let main = governing_parameter(spec.family, spec.profile).at(d);
    use TerrainFamily::*;
    match spec.family {
        Rough => rough(&mut b, main),
        StairUp => stairs(&mut b, main, true),
        StairDown => stairs(&mut b, main, false),
        Boxes => boxes(&mut b, main),
        Obstacles => obstacles(&mut b, main),
        ClimbUp => climb(&mut b, main, true),
        ClimbDown => climb(&mut b, main, false),
        ClimbConsecutive => climb_consecutive(&mut b, main, second_ring_height(spec.profile).at(d)),
        Gap => gap(&mut b, main),
        Pallets => pallets(
            &mut b,
            main,
            pallet_gap(spec.profile).at(d),
            pallet_height_step(spec.profile).at(d),
        ),
        Stones => stones(&mut b, main, STONE_GAP.at(d), STONE_JITTER.at(d)),
        Beam => beam(&mut b, main),
        StackedBoxes => stacked_boxes(&mut b, main),
        RandomHeightfield => random_heightfield(&mut b, main),
        FloatingBoxes => floating_boxes(&mut b, main),
    }
    b.field
}

fn rough(b: &mut Builder, amplitude: f64) {
    let mut values = Vec::with_capacity(b.field.length() * b.field.width());
    for _ in 0..b.field.length() * b.field.width() {
        values.push(b.symmetric(amplitude));
    }
    let mut it = values.into_iter();
    b.paint(|_, _| it.next().map(Some));
}

fn stairs(b: &mut Builder, slope: f64, ascending: bool) {
    let run = b.uniform(STAIR_RUN);
    let rise = run * slope.tan();
    let x0 = b.layout.start_end;
    let span = b.layout.goal_start - x0;
    let steps = (span / run).floor().max(1.0) as usize;
    let top = steps as f64 * rise;
    let corridor = b.uniform(STAIR_CORRIDOR);
    let wall_left = b.uniform(STAIR_WALL_THICKNESS);
    let wall_right = b.uniform(STAIR_WALL_THICKNESS);
    let rise_left = b.uniform(STAIR_WALL_RISE);
    let rise_right = b.uniform(STAIR_WALL_RISE);
    let mid = b.mid_y();
    let step_height = |x: f64| -> f64 {
        let k = if x < x0 {
            0
        } else {
            (((x - x0) / run).floor() as usize + 1).min(steps)
        };
        let up = k as f64 * rise;
        if ascending {
            up
        } else {
            top - up
        }
    };
    let stair_end = x0 + steps as f64 * run;
    b.paint(|x, y| {
        let z = step_height(x);
        if x < x0 || x >= stair_end {
            return Some(Some(z));
        }
        let off = y - mid;
        let half = 0.5 * corridor;
        if off.abs() <= half {
            Some(Some(z))
        } else if off > half && off <= half + wall_left {
            Some(Some(z + rise_left))
        } else if off < -half && -off <= half + wall_right {
            Some(Some(z + rise_right))
        } else {
            Some(Some(0.0))
        }
    });
}

fn boxes(b: &mut Builder, max_height: f64) {
    let (lx, ly) = b.field.extent();
    let count = (lx * ly).round() as usize;
    for _ in 0..count {
        let (cx, cy, sx, sy) = b.random_footprint((0.3, 1.0));
        let dz = b.symmetric(max_height);
        b.add_box(cx, cy, sx, sy, dz);
    }
}

fn obstacles(b: &mut Builder, density: f64) {
    let (lx, ly) = b.field.extent();
    let tilt = b.uniform((0.0, 0.2));
    let dir = b.uniform((-std::f64::consts::PI, std::f64::consts::PI));
    let (gx, gy) = (tilt.tan() * dir.cos(), tilt.tan() * dir.sin());
    let (mx, my) = (0.5 * lx, 0.5 * ly);
    b.paint(|x, y| Some(Some(gx * (x - mx) + gy * (y - my))));
    let count = (density * lx * ly).round() as usize;
    for _ in 0..count {
        let (cx, cy, s, _) = b.random_footprint((0.2, 0.6));
        let h = b.uniform((0.1, 0.4));
        let sign = if b.rng.gen::<bool>() { 1.0 } else { -1.0 };
        b.add_box(cx, cy, s, s, sign * h);
    }
}

fn climb(b: &mut Builder, height: f64, up: bool) {
    let edge = b.layout.feature_center();
    let (near, far) = if up { (0.0, height) } else { (height, 0.0) };
    b.paint(|x, _| Some(Some(if x < edge { near } else { far })));
    b.jitter_edge(edge, CLIMB_EDGE_JITTER * height);
}

fn climb_consecutive(b: &mut Builder, first: f64, second: f64) {
    let c = b.layout.feature_center();
    let (inner, outer) = (0.5, 1.25);
    b.paint(|x, _| {
        let d = (x - c).abs();
        Some(Some(if d < inner {
            first + second
        } else if d < outer {
            first
        } else {
            0.0
        }))
    });
    b.jitter_edge(c - outer, CLIMB_EDGE_JITTER * first);
    b.jitter_edge(c - inner, CLIMB_EDGE_JITTER * second);
    b.jitter_edge(c + inner, CLIMB_EDGE_JITTER * second);
    b.jitter_edge(c + outer, CLIMB_EDGE_JITTER * first);
}

fn gap(b: &mut Builder, distance: f64) {
    let c = b.layout.feature_center();
    let (lo, hi) = (c - 0.5 * distance, c + 0.5 * distance);
    let far = b.symmetric(GAP_SIDE_OFFSET * distance);
    let hole = b.hole;
    b.paint(|x, _| {
        Some(if x < lo {
            Some(0.0)
        } else if x < hi {
            hole
        } else {
            Some(far)
        })
    });
    let res = b.field.resolution();
    // Jitter the last solid cell on each side of the gap.
    b.jitter_edge(lo - 0.5 * res, GAP_EDGE_JITTER * distance);
    b.jitter_edge(hi + 0.5 * res, GAP_EDGE_JITTER * distance);
}

fn pallets(b: &mut Builder, beam_width: f64, gap_width: f64, height_step: f64) {
    let theta = b.uniform((-0.5, 0.5));
    let parity = b.rng.gen::<bool>() as usize;
    let (x0, x1) = (b.layout.start_end, b.layout.goal_start);
    let mid = b.mid_y();
    let period = beam_width + gap_width;
    let hole = b.hole;
    let (c, s) = (theta.cos(), theta.sin());
    b.paint(|x, y| {
        if x < x0 || x >= x1 {
            return Some(Some(0.0));
        }
        let u = (x - x0) * c + (y - mid) * s;
        let k = (u / period).floor();
        let within = u - k * period;
        if within >= gap_width {
            let level = ((k as i64).rem_euclid(2) as usize + parity) % 2;
            Some(Some(level as f64 * height_step))
        } else {
            Some(hole)
        }
    });
}

fn stones(b: &mut Builder, size: f64, gap: f64, jitter: f64) {
    let pad = 1.0;
    let pitch = size + gap;
    let (lx, ly) = b.field.extent();
    let nx = ((lx - pad) / pitch).ceil() as usize + 1;
    let ny = (ly / pitch).ceil() as usize + 1;
    let mut stones = Vec::with_capacity(nx * ny);
    for _ in 0..nx * ny {
        let ox = b.uniform((0.0, gap));
        let oy = b.uniform((0.0, gap));
        let h = b.symmetric(jitter);
        stones.push((ox, oy, h));
    }
    let hole = b.hole;
    b.paint(|x, y| {
        if x < pad {
            return Some(Some(0.0));
        }
        let u = x - pad;
        let i = (u / pitch).floor() as usize;
        let j = (y / pitch).floor() as usize;
        let (ox, oy, h) = stones[(i.min(nx - 1)) * ny + j.min(ny - 1)];
        let lu = u - i as f64 * pitch - ox;
        let lv = y - j as f64 * pitch - oy;
        if (0.0..size).contains(&lu) && (0.0..size).contains(&lv) {
            Some(Some(h))
        } else {
            Some(hole)
        }
    });
}

fn beam(b: &mut Builder, width: f64) {
    let yaw = b.symmetric(0.1);
    let roll = b.symmetric(0.1);
    let rise = b.symmetric(0.2);
    let (x0, x1) = (b.layout.start_end, b.layout.goal_start);
    let c = 0.5 * (x0 + x1);
    let half_len = 0.5 * (x1 - x0);
    let mid = b.mid_y();
    let hole = b.hole;
    let (cy, sy) = (yaw.cos(), yaw.sin());
    b.paint(|x, y| {
        if x < x0 {
            return Some(Some(0.0));
        }
        if x >= x1 {
            return Some(Some(rise));
        }
        let a = (x - c) * cy + (y - mid) * sy;
        let l = -(x - c) * sy + (y - mid) * cy;
        if l.abs() <= 0.5 * width {
            let t = ((a + half_len) / (2.0 * half_len)).clamp(0.0, 1.0);
            Some(Some(rise * t + roll.tan() * l))
        } else {
            Some(hole)
        }
    });
}

fn stacked_boxes(b: &mut Builder, max_height: f64) {
    let (lx, ly) = b.field.extent();
    let count = (1.5 * lx * ly).round() as usize;
    let res = b.field.resolution();
    for _ in 0..count {
        let (cx, cy, sx, sy) = b.random_footprint((0.2, 1.0));
        let h = b.uniform((0.05, max_height.max(0.05)));
        let mut base = f64::NEG_INFINITY;
        for_cells_in(&mut b.field, cx, cy, sx, sy, res, |ix, iy, f| {
            if let Some(z) = f.ground(ix, iy) {
                base = base.max(z);
            }
        });
        if base.is_finite() {
            let top = base + h;
            for_cells_in(&mut b.field, cx, cy, sx, sy, res, |ix, iy, f| {
                f.set_ground(ix, iy, Some(top));
            });
        }
    }
}

fn random_heightfield(b: &mut Builder, amplitude: f64) {
    let spacing = b.uniform((0.3, 1.5));
    let (lx, ly) = b.field.extent();
    let nx = (lx / spacing).ceil() as usize + 2;
    let ny = (ly / spacing).ceil() as usize + 2;
    let mut knots = Vec::with_capacity(nx * ny);
    for _ in 0..nx * ny {
        knots.push(b.symmetric(amplitude));
    }
    b.paint(|x, y| {
        let u = x / spacing;
        let v = y / spacing;
        let (i, j) = (u.floor() as usize, v.floor() as usize);
        let (fu, fv) = (u - i as f64, v - j as f64);
        let k = |a: usize, c: usize| knots[a.min(nx - 1) * ny + c.min(ny - 1)];
        let z = (1.0 - fu) * (1.0 - fv) * k(i, j)
            + fu * (1.0 - fv) * k(i + 1, j)
            + (1.0 - fu) * fv * k(i, j + 1)
            + fu * fv * k(i + 1, j + 1);
        Some(Some(z))
    });
}

fn floating_boxes(b: &mut Builder, density: f64) {
    let (lx, ly) = b.field.extent();
    let count = (density * lx * ly).round() as usize;
    let res = b.field.resolution();
    for _ in 0..count {
        let (cx, cy, sx, sy) = b.random_footprint((0.2, 1.0));
        let bottom = b.uniform((0.2, 1.2));
        let top = bottom + b.uniform((0.05, 0.4));
        for_cells_in(&mut b.field, cx, cy, sx, sy, res, |ix, iy, f| {
            let slab = match f.overlay(ix, iy) {
                Some(s) => Slab {
                    bottom: s.bottom.min(bottom),
                    top: s.top.max(top),
                },
                None => Slab { bottom, top },
            };
            f.set_overlay(ix, iy, Some(slab));
        });
    }
}
