//! WebAssembly bindings for the browser demo: terrain preview, a mapping
//! run with per-frame map snapshots, and the fusion gate explorer.
//!
//! The plain functions and types are target independent so they can be
//! tested natively; the `#[wasm_bindgen]` layer only converts errors.

use elevmap::fusion::{
    effective_variance, is_valid_update, win_probability, FusionConfig, GlobalMap,
};
use elevmap::geometry::yaw_of;
use elevmap::pipeline::{run_fuse_sim_with, Predictor, RunConfig};
use elevmap::terrain::{generate, TerrainFamily, TerrainSpec};
use elevmap::{Error, RobotProfile};
use wasm_bindgen::prelude::*;

fn family(name: &str) -> elevmap::Result<TerrainFamily> {
    TerrainFamily::parse(name)
        .ok_or_else(|| Error::Config(format!("unknown terrain family {name:?}")))
}

fn profile(name: &str) -> elevmap::Result<RobotProfile> {
    RobotProfile::parse(name)
        .ok_or_else(|| Error::Config(format!("unknown robot profile {name:?}")))
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Names accepted by [`terrain`] and [`MappingRun::new`].
#[wasm_bindgen]
pub fn terrain_families() -> Vec<String> {
    TerrainFamily::ALL
        .iter()
        .map(|f| f.name().to_string())
        .collect()
}

/// Generated heightfield; void cells are NaN.
#[wasm_bindgen]
pub struct Field {
    length: usize,
    width: usize,
    resolution: f64,
    elevation: Vec<f64>,
}

#[wasm_bindgen]
impl Field {
    /// Cells along x (rows).
    pub fn length(&self) -> usize {
        self.length
    }

    /// Cells along y (columns).
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn elevation(&self) -> Vec<f64> {
        self.elevation.clone()
    }
}

pub fn build_field(
    family_name: &str,
    difficulty: f64,
    seed: u32,
    profile_name: &str,
) -> elevmap::Result<Field> {
    let spec = TerrainSpec::new(
        family(family_name)?,
        difficulty.clamp(0.0, 1.0),
        seed.into(),
        profile(profile_name)?,
    );
    let field = generate(&spec);
    Ok(Field {
        length: field.length(),
        width: field.width(),
        resolution: field.resolution(),
        elevation: field.elevations_with_nan(),
    })
}

#[wasm_bindgen]
pub fn terrain(
    family_name: &str,
    difficulty: f64,
    seed: u32,
    profile_name: &str,
) -> Result<Field, JsError> {
    build_field(family_name, difficulty, seed, profile_name).map_err(js)
}

/// Map layers at one frame plus the robot position in map-cell units.
struct Snapshot {
    frame: usize,
    elevation: Vec<f32>,
    variance: Vec<f32>,
    robot: [f64; 3],
}

fn snapshot(frame: usize, map: &GlobalMap, x: f64, y: f64, yaw: f64) -> Snapshot {
    let (ox, oy) = map.origin_cell();
    let res = map.resolution();
    Snapshot {
        frame,
        elevation: map.elevation().iter().map(|v| *v as f32).collect(),
        variance: map.variance().iter().map(|v| *v as f32).collect(),
        robot: [x / res - ox as f64, y / res - oy as f64, yaw],
    }
}

/// Pass-turn-return mapping run over a generated terrain with the
/// training-free predictor. Snapshots are kept every `stride` frames.
#[wasm_bindgen]
pub struct MappingRun {
    extent: usize,
    snapshots: Vec<Snapshot>,
    l05: Vec<f64>,
    won: Vec<u32>,
}

pub fn simulate(
    family_name: &str,
    difficulty: f64,
    seed: u32,
    cameras: usize,
    missing_ratio: f64,
    stride: usize,
) -> elevmap::Result<MappingRun> {
    let p = RobotProfile::QuadrupedA;
    let mut cfg = RunConfig::new(p, seed.into());
    cfg.terrain = TerrainSpec::new(
        family(family_name)?,
        difficulty.clamp(0.0, 1.0),
        seed.into(),
        p,
    );
    cfg.cameras = cameras;
    cfg.missing_ratio = missing_ratio;
    // Wall-clock timers are unavailable in the browser sandbox.
    cfg.timing = false;
    cfg.validate()?;
    let field = generate(&cfg.terrain);
    let stride = stride.max(1);
    let mut snapshots = Vec::new();
    let mut last = 0;
    let out = run_fuse_sim_with(&cfg, &field, &Predictor::Baseline, |v| {
        last = v.frame;
        if v.frame % stride == 0 {
            let t = v.pose.translation;
            snapshots.push(snapshot(v.frame, v.map, t.x, t.y, yaw_of(v.pose)));
        }
    })?;
    if snapshots.last().is_none_or(|s| s.frame != last) {
        let pose = out.frames.last().map(|f| f.pose).unwrap_or_default();
        let t = pose.translation;
        snapshots.push(snapshot(last, &out.map, t.x, t.y, yaw_of(&pose)));
    }
    Ok(MappingRun {
        extent: out.map.extent(),
        snapshots,
        l05: out.frames.iter().map(|f| f.l05).collect(),
        won: out.frames.iter().map(|f| f.stats.won as u32).collect(),
    })
}

#[wasm_bindgen]
impl MappingRun {
    #[wasm_bindgen(constructor)]
    pub fn new(
        family_name: &str,
        difficulty: f64,
        seed: u32,
        cameras: usize,
        missing_ratio: f64,
        stride: usize,
    ) -> Result<MappingRun, JsError> {
        simulate(
            family_name,
            difficulty,
            seed,
            cameras,
            missing_ratio,
            stride,
        )
        .map_err(js)
    }

    /// Map cells per side.
    pub fn extent(&self) -> usize {
        self.extent
    }

    pub fn snapshot_count(&self) -> usize {
        self.snapshots.len()
    }

    pub fn frame(&self, i: usize) -> usize {
        self.snapshots[i].frame
    }

    pub fn elevation(&self, i: usize) -> Vec<f32> {
        self.snapshots[i].elevation.clone()
    }

    pub fn variance(&self, i: usize) -> Vec<f32> {
        self.snapshots[i].variance.clone()
    }

    /// `[row, col, yaw]` of the robot in map-cell units.
    pub fn robot(&self, i: usize) -> Vec<f64> {
        self.snapshots[i].robot.to_vec()
    }

    /// Per-frame loss of the controller query against the true surface.
    pub fn l05(&self) -> Vec<f64> {
        self.l05.clone()
    }

    /// Per-frame count of cells overwritten by the new estimate.
    pub fn won(&self) -> Vec<u32> {
        self.won.clone()
    }
}

/// `[effective variance, valid (0 or 1), win probability]` for one update
/// under the default fusion settings. The win probability is 0 when the
/// update is rejected.
#[wasm_bindgen]
pub fn gate(sigma2_t: f64, sigma2_prior: f64) -> Vec<f64> {
    let cfg = FusionConfig::default();
    let eff = effective_variance(sigma2_t, sigma2_prior, &cfg);
    let valid = is_valid_update(eff, sigma2_prior, &cfg);
    let p = if valid {
        win_probability(eff, sigma2_prior)
    } else {
        0.0
    };
    vec![eff, f64::from(u8::from(valid)), p]
}
