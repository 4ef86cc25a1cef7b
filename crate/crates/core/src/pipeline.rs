//! End-to-end orchestration shared by the CLI and the demo.

use std::collections::BTreeMap;

use rand::Rng;

use crate::augment::{augment, corrupt_cloud, AugmentConfig};
use crate::fusion::{fuse_frame, init_map, query, FuseStats, FusionConfig, GlobalMap, QueryResult};
use crate::geometry::{pose_xyz_yaw, wrap_angle, Pose, YawFrame};
use crate::predictor::{
    baseline_predict, beta_nll, evaluate, evaluate_baseline, predict, ElevationEstimate, GatedNet,
    Sample,
};
use crate::rng::{hash_words, stream};
use crate::sensing::{
    label_grid, project_to_grid, render_depth, CameraRig, GridGeometry, LocalGrid, PointCloud,
};
use crate::terrain::{self, Heightfield, TerrainFamily, TerrainSpec};
use crate::{Error, Result, RobotProfile};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub count: usize,
    pub profile: RobotProfile,
    pub proportions: BTreeMap<TerrainFamily, f64>,
    pub augment: AugmentConfig,
    /// Scan poses drawn per generated terrain.
    pub samples_per_terrain: usize,
    /// Uniform jitter on the base height above the standing height (m).
    pub height_jitter: f64,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn new(count: usize, profile: RobotProfile, seed: u64) -> Self {
        Self {
            count,
            profile,
            proportions: terrain::mapping_proportions(),
            augment: AugmentConfig::default(),
            samples_per_terrain: 8,
            height_jitter: 0.05,
            seed,
        }
    }
}

/// Input/label pairs sharing one grid geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub geometry: GridGeometry,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Splits off the trailing `fraction` as a held-out set.
    pub fn split(&self, fraction: f64) -> (&[Sample], &[Sample]) {
        let held = ((self.samples.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
        self.samples.split_at(self.samples.len() - held)
    }
}

/// Highest surface near `(x, y)`, used to place a standing base.
fn support_height(field: &Heightfield, x: f64, y: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for dx in [-0.2, 0.0, 0.2] {
        for dy in [-0.15, 0.0, 0.15] {
            if let Some(z) = field.top_surface_at(x + dx, y + dy) {
                best = best.max(z);
            }
        }
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

/// Random standing pose over a terrain tile.
pub fn random_scan_pose<R: Rng + ?Sized>(
    field: &Heightfield,
    profile: RobotProfile,
    height_jitter: f64,
    rng: &mut R,
) -> Pose {
    let (lx, ly) = field.extent();
    let x = rng.gen_range(0.3..(lx - 0.3).max(0.31));
    let y = rng.gen_range(0.3..(ly - 0.3).max(0.31));
    let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let jitter = if height_jitter > 0.0 {
        rng.gen_range(-height_jitter..height_jitter)
    } else {
        0.0
    };
    let z = support_height(field, x, y) + profile.standing_height() + jitter;
    pose_xyz_yaw(x, y, z, yaw)
}

/// Samples label grids from random poses over generated terrains and
/// degrades each into a training input.
pub fn synthesize_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    if cfg.count == 0 {
        return Err(Error::EmptyDataset);
    }
    if cfg.samples_per_terrain == 0 {
        return Err(Error::Config("samples_per_terrain must be >= 1".into()));
    }
    cfg.augment.validate()?;
    let geometry = GridGeometry::local_for(cfg.profile);
    let terrains = cfg.count.div_ceil(cfg.samples_per_terrain);
    let specs = terrain::mix(&cfg.proportions, terrains, cfg.seed, cfg.profile)?;
    let mut samples = Vec::with_capacity(cfg.count);
    for (t, spec) in specs.iter().enumerate() {
        let field = terrain::generate(spec);
        let first = t * cfg.samples_per_terrain;
        for k in first..(first + cfg.samples_per_terrain).min(cfg.count) {
            let mut pose_rng = stream(cfg.seed, hash_words(&[0x706f_7365, k as u64]));
            let pose = random_scan_pose(&field, cfg.profile, cfg.height_jitter, &mut pose_rng);
            let label = label_grid(&field, &pose, &geometry);
            let mut aug_rng = stream(
                cfg.seed ^ cfg.augment.seed,
                hash_words(&[0x6175_67, k as u64]),
            );
            let input = augment(&label, &cfg.augment, &mut aug_rng);
            samples.push(Sample { input, label });
        }
    }
    Ok(Dataset { geometry, samples })
}

/// One scripted stop: the base turns in place to `yaw`, then walks straight
/// to `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Scripted base motion sampled at a fixed frame interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub waypoints: Vec<Waypoint>,
    /// Walking speed (m/s).
    pub speed: f64,
    /// In-place turn rate (rad/s).
    pub turn_rate: f64,
    /// Time between frames (s).
    pub frame_dt: f64,
}

/// Sampled trajectory with the frame at which each waypoint was reached.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrack {
    pub poses: Vec<Pose>,
    pub arrivals: Vec<usize>,
}

impl Trajectory {
    /// Walk `length` metres along +x from `start`, turn around, walk back.
    pub fn pass_turn_return(start: (f64, f64), length: f64) -> Self {
        let (x, y) = start;
        let pi = std::f64::consts::PI;
        Self {
            waypoints: vec![
                Waypoint { x, y, yaw: 0.0 },
                Waypoint {
                    x: x + length,
                    y,
                    yaw: 0.0,
                },
                Waypoint {
                    x: x + length,
                    y,
                    yaw: pi,
                },
                Waypoint { x, y, yaw: pi },
            ],
            speed: 0.8,
            turn_rate: 1.0,
            frame_dt: 0.1,
        }
    }

    /// Parses `x,y,yaw;x,y,yaw;...`.
    pub fn parse_waypoints(s: &str) -> Result<Vec<Waypoint>> {
        s.split(';')
            .filter(|p| !p.trim().is_empty())
            .map(|p| {
                let v: Vec<f64> = p
                    .split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Config(format!("waypoint `{p}`: {e}")))?;
                match v[..] {
                    [x, y, yaw] => Ok(Waypoint { x, y, yaw }),
                    _ => Err(Error::Config(format!("waypoint `{p}` needs x,y,yaw"))),
                }
            })
            .collect()
    }

    pub fn format_waypoints(&self) -> String {
        self.waypoints
            .iter()
            .map(|w| format!("{},{},{}", w.x, w.y, w.yaw))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::Config(
                "trajectory needs at least one waypoint".into(),
            ));
        }
        for (name, v) in [
            ("speed", self.speed),
            ("turn_rate", self.turn_rate),
            ("frame_dt", self.frame_dt),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Standing poses along the script, resting on the terrain support.
    pub fn sample(&self, field: &Heightfield, profile: RobotProfile) -> Result<PoseTrack> {
        self.validate()?;
        let pose = |x: f64, y: f64, yaw: f64| {
            pose_xyz_yaw(
                x,
                y,
                support_height(field, x, y) + profile.standing_height(),
                yaw,
            )
        };
        let first = self.waypoints[0];
        let (mut x, mut y, mut yaw) = (first.x, first.y, first.yaw);
        let mut poses = vec![pose(x, y, yaw)];
        let mut arrivals = vec![0];
        let turn_step = self.turn_rate * self.frame_dt;
        let walk_step = self.speed * self.frame_dt;
        for w in &self.waypoints[1..] {
            let total = wrap_angle(w.yaw - yaw);
            let turns = (total.abs() / turn_step).ceil() as usize;
            let start_yaw = yaw;
            for k in 1..=turns {
                yaw = wrap_angle(start_yaw + total * k as f64 / turns as f64);
                poses.push(pose(x, y, yaw));
            }
            let (dx, dy) = (w.x - x, w.y - y);
            let steps = (dx.hypot(dy) / walk_step).ceil() as usize;
            let (sx, sy) = (x, y);
            for k in 1..=steps {
                let f = k as f64 / steps as f64;
                x = sx + dx * f;
                y = sy + dy * f;
                poses.push(pose(x, y, yaw));
            }
            arrivals.push(poses.len() - 1);
        }
        Ok(PoseTrack { poses, arrivals })
    }
}

/// Per-frame estimator used by the mapping simulation.
#[derive(Debug, Clone)]
pub enum Predictor {
    Baseline,
    Trained(GatedNet),
}

impl Predictor {
    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Baseline => "baseline",
            Predictor::Trained(_) => "trained",
        }
    }

    pub fn predict(&self, input: &LocalGrid) -> Result<ElevationEstimate> {
        match self {
            Predictor::Baseline => Ok(baseline_predict(input)),
            Predictor::Trained(net) => predict(net, input),
        }
    }
}

/// Everything a mapping simulation needs besides the terrain and predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: RobotProfile,
    pub terrain: TerrainSpec,
    pub trajectory: Trajectory,
    pub cameras: usize,
    pub fusion: FusionConfig,
    /// Fraction of depth points dropped per camera frame.
    pub missing_ratio: f64,
    /// Fraction of depth points replaced by random frustum points.
    pub artifact_ratio: f64,
    /// Record wall-clock time per frame.
    pub timing: bool,
    pub seed: u64,
}

impl RunConfig {
    /// Pass-turn-return over an ascending staircase with clean depth.
    pub fn new(profile: RobotProfile, seed: u64) -> Self {
        Self {
            profile,
            terrain: TerrainSpec::new(TerrainFamily::StairUp, 0.5, seed, profile),
            trajectory: Trajectory::pass_turn_return((1.0, 2.0), 5.5),
            cameras: CameraRig::for_profile(profile, 2).cameras.len(),
            fusion: FusionConfig {
                seed,
                ..FusionConfig::default()
            },
            missing_ratio: 0.0,
            artifact_ratio: 0.0,
            timing: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.trajectory.validate()?;
        self.fusion.validate()?;
        if self.cameras == 0 || self.cameras > 2 {
            return Err(Error::Config(format!(
                "cameras must be 1 or 2, got {}",
                self.cameras
            )));
        }
        for (name, v) in [
            ("missing_ratio", self.missing_ratio),
            ("artifact_ratio", self.artifact_ratio),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    /// Applies `key=value` overrides. Unknown keys are rejected.
    pub fn apply(&mut self, kv: &BTreeMap<String, String>) -> Result<()> {
        let num = |k: &str, v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|e| Error::Config(format!("{k} = `{v}`: {e}")))
        };
        let int = |k: &str, v: &str| -> Result<u64> {
            v.parse::<u64>()
                .map_err(|e| Error::Config(format!("{k} = `{v}`: {e}")))
        };
        let mut family = self.terrain.family;
        let mut difficulty = self.terrain.difficulty();
        let mut terrain_seed = self.terrain.seed;
        for (k, v) in kv {
            let v = v.as_str();
            match k.as_str() {
                "profile" => {
                    self.profile = RobotProfile::parse(v)
                        .ok_or_else(|| Error::Config(format!("unknown profile `{v}`")))?
                }
                "family" => {
                    family = TerrainFamily::parse(v)
                        .ok_or_else(|| Error::Config(format!("unknown family `{v}`")))?
                }
                "difficulty" => difficulty = num(k, v)?,
                "terrain_seed" => terrain_seed = int(k, v)?,
                "waypoints" => self.trajectory.waypoints = Trajectory::parse_waypoints(v)?,
                "speed" => self.trajectory.speed = num(k, v)?,
                "turn_rate" => self.trajectory.turn_rate = num(k, v)?,
                "frame_dt" => self.trajectory.frame_dt = num(k, v)?,
                "cameras" => self.cameras = int(k, v)? as usize,
                "missing_ratio" => self.missing_ratio = num(k, v)?,
                "artifact_ratio" => self.artifact_ratio = num(k, v)?,
                "timing" => {
                    self.timing = v
                        .parse()
                        .map_err(|_| Error::Config(format!("timing = `{v}` is not a boolean")))?
                }
                "seed" => {
                    self.seed = int(k, v)?;
                    self.fusion.seed = self.seed;
                }
                "fusion.extent" => self.fusion.extent = int(k, v)? as usize,
                "fusion.resolution" => self.fusion.resolution = num(k, v)?,
                "fusion.init_variance" => self.fusion.init_variance = num(k, v)?,
                "fusion.floor_factor" => self.fusion.floor_factor = num(k, v)?,
                "fusion.validity_factor" => self.fusion.validity_factor = num(k, v)?,
                "fusion.absolute_gate" => self.fusion.absolute_gate = num(k, v)?,
                "fusion.seed" => self.fusion.seed = int(k, v)?,
                _ => return Err(Error::Config(format!("unknown key `{k}`"))),
            }
        }
        self.terrain = TerrainSpec::new(family, difficulty, terrain_seed, self.profile);
        Ok(())
    }

    /// Canonical `key=value` form, accepted back by [`RunConfig::apply`].
    pub fn to_kv(&self) -> String {
        let f = &self.fusion;
        let t = &self.trajectory;
        format!(
            "profile={}\nfamily={}\ndifficulty={}\nterrain_seed={}\nwaypoints={}\nspeed={}\nturn_rate={}\nframe_dt={}\n\
             cameras={}\nmissing_ratio={}\nartifact_ratio={}\ntiming={}\nseed={}\nfusion.extent={}\nfusion.resolution={}\n\
             fusion.init_variance={}\nfusion.floor_factor={}\nfusion.validity_factor={}\nfusion.absolute_gate={}\nfusion.seed={}\n",
            self.profile.name(),
            self.terrain.family.name(),
            self.terrain.difficulty(),
            self.terrain.seed,
            t.format_waypoints(),
            t.speed,
            t.turn_rate,
            t.frame_dt,
            self.cameras,
            self.missing_ratio,
            self.artifact_ratio,
            self.timing,
            self.seed,
            f.extent,
            f.resolution,
            f.init_variance,
            f.floor_factor,
            f.validity_factor,
            f.absolute_gate,
            f.seed,
        )
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// later keys override earlier ones.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// What the simulation saw and did in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame: u64,
    pub pose: Pose,
    pub stats: FuseStats,
    /// Valid cells in the projected scan.
    pub observed: usize,
    /// Beta-NLL (beta = 0.5) of the queried controller map against the
    /// exact surface.
    pub l05: f64,
    pub predict_ms: f64,
    /// Fusion plus query.
    pub fuse_ms: f64,
}

/// State handed to the per-frame observer after fusion.
pub struct FrameView<'a> {
    pub frame: usize,
    pub pose: &'a Pose,
    pub input: &'a LocalGrid,
    pub map: &'a GlobalMap,
    pub query: &'a QueryResult,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub map: GlobalMap,
    pub frames: Vec<FrameRecord>,
    /// Frame index at which each waypoint was reached.
    pub arrivals: Vec<usize>,
}

/// World lattice cells of the map under the valid cells of a scan.
pub fn observed_lattice(map: &GlobalMap, input: &LocalGrid, pose: &Pose) -> Vec<(i64, i64)> {
    let yf = YawFrame::from_pose(pose);
    let g = input.geometry();
    let mut out = Vec::new();
    for r in 0..g.rows {
        for c in 0..g.cols {
            if input.get(r, c).is_some() {
                let (x, y) = g.cell_center(r, c);
                let w = yf.xy_to_world(x, y);
                out.push(map.lattice(w.x, w.y));
            }
        }
    }
    out
}

/// Converts a query into an estimate for scoring against a label.
pub fn query_estimate(q: &QueryResult) -> Result<ElevationEstimate> {
    let mean = q.points.iter().map(|p| p[2]).collect();
    let lv = q.points.iter().map(|p| p[3].ln()).collect();
    ElevationEstimate::new(q.rows, q.cols, mean, lv)
}

fn elapsed_ms(start: Option<std::time::Instant>) -> f64 {
    start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3)
}

/// Closed-loop mapping along the scripted trajectory: render, optionally
/// corrupt, project, predict, fuse, query and score every frame.
pub fn run_fuse_sim(
    cfg: &RunConfig,
    field: &Heightfield,
    predictor: &Predictor,
) -> Result<SimOutcome> {
    run_fuse_sim_with(cfg, field, predictor, |_| {})
}

pub fn run_fuse_sim_with<F>(
    cfg: &RunConfig,
    field: &Heightfield,
    predictor: &Predictor,
    mut observe: F,
) -> Result<SimOutcome>
where
    F: FnMut(&FrameView<'_>),
{
    cfg.validate()?;
    let local = GridGeometry::local_for(cfg.profile);
    let controller = GridGeometry::controller_for(cfg.profile);
    let rig = CameraRig::for_profile(cfg.profile, cfg.cameras);
    let track = cfg.trajectory.sample(field, cfg.profile)?;
    let mut map = init_map(&track.poses[0], cfg.profile.standing_height(), &cfg.fusion);
    let corrupt = cfg.missing_ratio > 0.0 || cfg.artifact_ratio > 0.0;
    let now = || cfg.timing.then(std::time::Instant::now);
    let mut frames = Vec::with_capacity(track.poses.len());
    for (k, pose) in track.poses.iter().enumerate() {
        let cams = rig.posed(pose);
        let clouds = cams.iter().enumerate().map(|(c, cam)| {
            let cloud = render_depth(field, cam);
            if corrupt {
                let mut rng = stream(cfg.seed, hash_words(&[0x636c_6f75, k as u64, c as u64]));
                corrupt_cloud(&cloud, cfg.missing_ratio, cfg.artifact_ratio, cam, &mut rng)
            } else {
                cloud
            }
        });
        let cloud = PointCloud::merge(clouds.collect::<Vec<_>>());
        let input = project_to_grid(&cloud, pose, &local);

        let t0 = now();
        let est = predictor.predict(&input)?;
        let predict_ms = elapsed_ms(t0);

        let t1 = now();
        let stats = fuse_frame(&mut map, &est, &local, pose, k as u64, &cfg.fusion)?;
        let q = query(&map, pose, &controller, None);
        let fuse_ms = elapsed_ms(t1);

        let truth = label_grid(field, pose, &controller);
        let l05 = beta_nll(&query_estimate(&q)?, &truth, 0.5)?.loss;
        observe(&FrameView {
            frame: k,
            pose,
            input: &input,
            map: &map,
            query: &q,
        });
        frames.push(FrameRecord {
            frame: k as u64,
            pose: *pose,
            stats,
            observed: input.valid_count(),
            l05,
            predict_ms,
            fuse_ms,
        });
    }
    Ok(SimOutcome {
        map,
        frames,
        arrivals: track.arrivals,
    })
}

/// Held-out comparison of a trained network against the baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    pub beta: f64,
    pub trained: Option<f64>,
    pub baseline: f64,
}

pub fn evaluate_report(
    net: Option<&GatedNet>,
    samples: &[Sample],
    beta: f64,
) -> Result<EvalReport> {
    let baseline = evaluate_baseline(samples, beta)?;
    let trained = net.map(|n| evaluate(n, samples, beta)).transpose()?;
    Ok(EvalReport {
        samples: samples.len(),
        beta,
        trained,
        baseline,
    })
}
