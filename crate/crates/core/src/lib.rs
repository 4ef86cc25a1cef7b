//! Uncertainty-aware 2.5-D elevation mapping for legged robots.
//!
//! The crate covers the whole mapping loop and its training machinery:
//!
//! * [`terrain`] synthesizes ground-truth heightfields for a curriculum of
//!   locomotion terrains plus extra mapping-only families.
//! * [`sensing`] raycasts depth frames from posed cameras and projects point
//!   clouds into robot-centric local grids (max-z per cell).
//! * [`augment`] corrupts clean scans into noisy, partially observed inputs.
//! * [`predictor`] turns a local grid into per-cell elevation and log-variance,
//!   either with a small gated-residual U-Net trained under a beta-NLL loss or
//!   with a training-free nearest-neighbour baseline.
//! * [`fusion`] fuses per-frame estimates into a world-frame map with the
//!   probabilistic winner-take-all rule and serves egocentric queries.
//! * [`encoder`] is a forward-only attention map encoder over queried maps.
//! * [`taskkernel`] holds goal-reaching rewards, terminations and curriculum.
//! * [`pipeline`] wires everything into dataset synthesis, training,
//!   evaluation and closed-loop mapping simulation.

pub mod augment;
pub mod encoder;
mod error;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod predictor;
pub mod rng;
pub mod sensing;
pub mod taskkernel;
pub mod terrain;

pub use error::{Error, Result};
pub use geometry::Pose;

/// Robot platform selecting terrain ramps, grid shapes and thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RobotProfile {
    /// Large quadruped (51x31 local grid, 36x14 controller map).
    QuadrupedA,
    /// Small biped (31x31 local grid, 18x13 controller map).
    BipedT,
}

impl RobotProfile {
    pub const ALL: [RobotProfile; 2] = [RobotProfile::QuadrupedA, RobotProfile::BipedT];

    /// Base height above the ground when standing still (m).
    pub fn standing_height(self) -> f64 {
        match self {
            RobotProfile::QuadrupedA => 0.6,
            RobotProfile::BipedT => 0.55,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RobotProfile::QuadrupedA => "quadruped",
            RobotProfile::BipedT => "biped",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quadruped" | "quadrupeda" | "quadruped-a" | "a" => Some(RobotProfile::QuadrupedA),
            "biped" | "bipedt" | "biped-t" | "t" => Some(RobotProfile::BipedT),
            _ => None,
        }
    }
}
