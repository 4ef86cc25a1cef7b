//! Goal-reaching reward terms, undesired events, termination checks,
//! terrain curriculum and command observation, all as pure functions.

use nalgebra::{Vector2, Vector3};
use rand::Rng;

use crate::geometry::angle_distance;
use crate::RobotProfile;

/// Policy interval (s).
pub const DT: f64 = 0.02;

pub const POSITION_WINDOW: f64 = 4.0;
pub const HEADING_WINDOW: f64 = 2.0;
pub const NEAR_GOAL: f64 = 0.5;
pub const V_MIN: f64 = 0.3;
pub const V_MAX: f64 = 2.0;
pub const SPIN_RATE: f64 = 2.0;
pub const LEAP_SPAN: f64 = 0.3;
pub const SLIP_SPEED: f64 = 0.05;

/// `(1 / T) * 1(t_left < T)`.
pub fn t_mask(window: f64, t_left: f64) -> f64 {
    if t_left < window {
        1.0 / window
    } else {
        0.0
    }
}

pub fn r_position_tracking(d_xy: f64, t_left: f64) -> f64 {
    1.0 / (1.0 + 0.25 * d_xy * d_xy) * t_mask(POSITION_WINDOW, t_left)
}

pub fn r_heading_tracking(d_yaw: f64, d_xy: f64, t_left: f64) -> f64 {
    if d_xy >= NEAR_GOAL {
        return 0.0;
    }
    1.0 / (1.0 + d_yaw * d_yaw) * t_mask(HEADING_WINDOW, t_left)
}

/// 1 when near the goal or moving towards it at a moderate speed.
///
/// `v_xy` is the horizontal base velocity and `to_goal` the horizontal
/// vector from base to goal, both in the same frame.
pub fn r_move(d_xy: f64, v_xy: Vector2<f64>, to_goal: Vector2<f64>) -> f64 {
    if d_xy < NEAR_GOAL {
        return 1.0;
    }
    let speed = v_xy.norm();
    let g = to_goal.norm();
    if speed == 0.0 || g == 0.0 {
        return 0.0;
    }
    let cos = v_xy.dot(&to_goal) / (speed * g);
    f64::from(u8::from(cos > 0.5 && (V_MIN..=V_MAX).contains(&speed)))
}

/// Standing reward: gated on being near the goal with the right heading,
/// decaying with airborne feet, tilt, joint deviation and distance.
pub fn r_stand(d_xy: f64, d_yaw: f64, d_foot: f64, g_b: &Vector3<f64>, d_q: f64) -> f64 {
    if !(d_xy < NEAR_GOAL && d_yaw < 0.5) {
        return 0.0;
    }
    let d_g = 1.0 - g_b.z * g_b.z;
    (-(d_foot + d_g + d_q + d_xy) / 4.0).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    Base,
    Thigh,
    Shank,
    Foot,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    pub kind: LinkKind,
    pub in_contact: bool,
    pub was_in_contact: bool,
    /// World-frame contact force (N).
    pub contact_force: Vector3<f64>,
    /// Velocity of the link (at the contact point when in contact).
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub self_collision: bool,
}

impl LinkState {
    pub fn idle(kind: LinkKind) -> Self {
        Self {
            kind,
            in_contact: false,
            was_in_contact: false,
            contact_force: Vector3::zeros(),
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            self_collision: false,
        }
    }

    /// Foot resting on the ground carrying `load` newtons.
    pub fn planted_foot(load: f64) -> Self {
        Self {
            in_contact: true,
            was_in_contact: true,
            contact_force: Vector3::new(0.0, 0.0, load),
            ..Self::idle(LinkKind::Foot)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub q: f64,
    pub qd: f64,
    pub qdd: f64,
    pub tau: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub qd_max: f64,
    pub tau_max: f64,
    /// Standing reference position.
    pub q_ref: f64,
}

impl JointState {
    pub fn at_rest(q: f64, q_min: f64, q_max: f64) -> Self {
        Self {
            q,
            qd: 0.0,
            qdd: 0.0,
            tau: 0.0,
            q_min,
            q_max,
            qd_max: 20.0,
            tau_max: 80.0,
            q_ref: q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalPose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Snapshot of everything the kernel reads.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskState {
    pub time: f64,
    pub base_position: Vector3<f64>,
    pub base_yaw: f64,
    /// Base linear velocity, world frame.
    pub v_b: Vector3<f64>,
    /// Base angular velocity, base frame.
    pub omega_b: Vector3<f64>,
    /// Gravity direction in the base frame (unit).
    pub g_b: Vector3<f64>,
    pub joints: Vec<JointState>,
    pub action: Vec<f64>,
    pub prev_action: Vec<f64>,
    pub links: Vec<LinkState>,
    pub goal: GoalPose,
    pub t_left: f64,
    /// Elevation span of the terrain under the robot (m).
    pub terrain_span: f64,
    /// `(time, x, y)` base positions, oldest first.
    pub history: Vec<(f64, f64, f64)>,
    /// Total robot weight (N).
    pub weight: f64,
}

impl TaskState {
    /// Upright, motionless robot with all feet planted, standing on its goal.
    pub fn nominal(profile: RobotProfile) -> Self {
        let (feet, weight) = match profile {
            RobotProfile::QuadrupedA => (4, 50.0 * 9.81),
            RobotProfile::BipedT => (2, 20.0 * 9.81),
        };
        let mut links = vec![LinkState::idle(LinkKind::Base)];
        for _ in 0..feet {
            links.push(LinkState::idle(LinkKind::Thigh));
            links.push(LinkState::idle(LinkKind::Shank));
            links.push(LinkState::planted_foot(weight / feet as f64));
        }
        let joints = (0..3 * feet)
            .map(|_| JointState::at_rest(0.0, -1.0, 1.0))
            .collect();
        let actions = 3 * feet;
        Self {
            time: 10.0,
            base_position: Vector3::new(0.0, 0.0, profile.standing_height()),
            base_yaw: 0.0,
            v_b: Vector3::zeros(),
            omega_b: Vector3::zeros(),
            g_b: Vector3::new(0.0, 0.0, -1.0),
            joints,
            action: vec![0.0; actions],
            prev_action: vec![0.0; actions],
            links,
            goal: GoalPose {
                x: 0.0,
                y: 0.0,
                yaw: 0.0,
            },
            t_left: 1.0,
            terrain_span: 0.0,
            history: Vec::new(),
            weight,
        }
    }

    pub fn to_goal(&self) -> Vector2<f64> {
        Vector2::new(
            self.goal.x - self.base_position.x,
            self.goal.y - self.base_position.y,
        )
    }

    pub fn d_xy(&self) -> f64 {
        self.to_goal().norm()
    }

    pub fn d_yaw(&self) -> f64 {
        angle_distance(self.base_yaw, self.goal.yaw)
    }

    /// Fraction of feet not in contact.
    pub fn d_foot(&self) -> f64 {
        let feet: Vec<&LinkState> = self
            .links
            .iter()
            .filter(|l| l.kind == LinkKind::Foot)
            .collect();
        if feet.is_empty() {
            return 0.0;
        }
        feet.iter().filter(|l| !l.in_contact).count() as f64 / feet.len() as f64
    }

    /// Mean absolute deviation from the standing reference.
    pub fn d_q(&self) -> f64 {
        if self.joints.is_empty() {
            return 0.0;
        }
        self.joints
            .iter()
            .map(|j| (j.q - j.q_ref).abs())
            .sum::<f64>()
            / self.joints.len() as f64
    }
}

/// Reward table entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardTerm {
    pub name: &'static str,
    pub raw: f64,
    /// Weight before multiplication by the policy interval.
    pub weight: f64,
}

impl RewardTerm {
    /// `weight * raw * dt`.
    pub fn weighted(&self) -> f64 {
        self.weight * self.raw * DT
    }
}

pub const W_POSITION: f64 = 100.0;
pub const W_HEADING: f64 = 50.0;
pub const W_MOVE: f64 = 5.0;
pub const W_STAND: f64 = 5.0;
pub const W_TERMINATION: f64 = -10.0 / DT;
pub const W_EVENTS: f64 = -1.0;
pub const W_ROLL: f64 = -0.1;
pub const W_JOINT: f64 = -0.001;
pub const W_SMOOTH: f64 = -0.01;
pub const W_CONTACT: f64 = -1e-5;
pub const W_LINK_ACC: f64 = -0.001;
pub const W_POS_LIMIT: f64 = -1000.0;
pub const W_VEL_LIMIT: f64 = -1.0;
pub const W_TORQUE_LIMIT: f64 = -1.0;

/// Raw regularization and limit terms with their weights.
pub fn regularization_terms(s: &TaskState) -> Vec<RewardTerm> {
    let sq = |v: f64| v * v;
    let joint_reg: f64 = s
        .joints
        .iter()
        .map(|j| sq(j.qd) + 0.01 * sq(j.tau) + 0.001 * sq(j.qdd))
        .sum();
    let smooth: f64 = s
        .action
        .iter()
        .zip(&s.prev_action)
        .map(|(a, b)| sq(a - b))
        .sum();
    let contact: f64 = s
        .links
        .iter()
        .map(|l| sq((l.contact_force.norm() - s.weight).max(0.0)))
        .sum();
    let link_acc: f64 = s.links.iter().map(|l| l.acceleration.norm()).sum();
    let pos_limit: f64 = s
        .joints
        .iter()
        .map(|j| 0f64.max(j.q - 0.95 * j.q_max).max(0.95 * j.q_min - j.q))
        .sum();
    let vel_limit: f64 = s
        .joints
        .iter()
        .map(|j| (j.qd.abs() - 0.9 * j.qd_max).max(0.0))
        .sum();
    let torque_limit: f64 = s
        .joints
        .iter()
        .map(|j| (j.tau.abs() - 0.8 * j.tau_max).max(0.0))
        .sum();
    vec![
        RewardTerm {
            name: "base_roll_rate",
            raw: sq(s.omega_b.x),
            weight: W_ROLL,
        },
        RewardTerm {
            name: "joint_regularization",
            raw: joint_reg,
            weight: W_JOINT,
        },
        RewardTerm {
            name: "action_smoothness",
            raw: smooth,
            weight: W_SMOOTH,
        },
        RewardTerm {
            name: "link_contact_forces",
            raw: contact,
            weight: W_CONTACT,
        },
        RewardTerm {
            name: "link_acceleration",
            raw: link_acc,
            weight: W_LINK_ACC,
        },
        RewardTerm {
            name: "joint_position_limits",
            raw: pos_limit,
            weight: W_POS_LIMIT,
        },
        RewardTerm {
            name: "joint_velocity_limits",
            raw: vel_limit,
            weight: W_VEL_LIMIT,
        },
        RewardTerm {
            name: "joint_torque_limits",
            raw: torque_limit,
            weight: W_TORQUE_LIMIT,
        },
    ]
}

/// Per-step counts of penalized events.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UndesiredEvents {
    pub spin: bool,
    pub leap: bool,
    pub non_foot_contacts: usize,
    pub non_foot_contact_switches: usize,
    pub stumbles: usize,
    pub slips: usize,
    pub self_collisions: usize,
}

impl UndesiredEvents {
    pub fn count(&self) -> usize {
        usize::from(self.spin)
            + usize::from(self.leap)
            + self.non_foot_contacts
            + self.non_foot_contact_switches
            + self.stumbles
            + self.slips
            + self.self_collisions
    }

    pub fn labels(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.spin {
            out.push("spin");
        }
        if self.leap {
            out.push("leap");
        }
        let counted = [
            (self.non_foot_contacts, "non_foot_contact"),
            (self.non_foot_contact_switches, "non_foot_contact_switch"),
            (self.stumbles, "stumble"),
            (self.slips, "slip"),
            (self.self_collisions, "self_collision"),
        ];
        for (n, label) in counted {
            out.extend(std::iter::repeat_n(label, n));
        }
        out
    }
}

pub fn undesired_events(s: &TaskState) -> UndesiredEvents {
    let feet: Vec<&LinkState> = s
        .links
        .iter()
        .filter(|l| l.kind == LinkKind::Foot)
        .collect();
    let non_foot = || s.links.iter().filter(|l| l.kind != LinkKind::Foot);
    UndesiredEvents {
        spin: s.omega_b.z.abs() > SPIN_RATE,
        leap: !feet.is_empty() && feet.iter().all(|f| !f.in_contact) && s.terrain_span < LEAP_SPAN,
        non_foot_contacts: non_foot().filter(|l| l.in_contact).count(),
        non_foot_contact_switches: non_foot()
            .filter(|l| l.in_contact && !l.was_in_contact)
            .count(),
        stumbles: s
            .links
            .iter()
            .filter(|l| l.in_contact && l.contact_force.xy().norm() > l.contact_force.z.abs())
            .count(),
        slips: s
            .links
            .iter()
            .filter(|l| l.in_contact && l.velocity.xy().norm() > SLIP_SPEED)
            .count(),
        self_collisions: s.links.iter().filter(|l| l.self_collision).count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    BadOrientation,
    BaseCollision,
    ThighAcceleration,
    Stagnation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminationThresholds {
    pub thigh_acceleration: f64,
    pub stagnation_window: f64,
    pub stagnation_distance: f64,
    pub goal_distance: f64,
}

impl TerminationThresholds {
    pub fn for_profile(profile: RobotProfile) -> Self {
        Self {
            thigh_acceleration: match profile {
                RobotProfile::QuadrupedA => 60.0,
                RobotProfile::BipedT => 100.0,
            },
            stagnation_window: 5.0,
            stagnation_distance: 0.5,
            goal_distance: 1.0,
        }
    }
}

/// First matching termination condition, checked in a fixed order.
pub fn should_terminate(s: &TaskState, th: &TerminationThresholds) -> Option<TerminationReason> {
    if s.g_b.x.abs() > 0.985 || s.g_b.y.abs() > 0.7 || s.g_b.z > 0.0 {
        return Some(TerminationReason::BadOrientation);
    }
    if s.links
        .iter()
        .any(|l| l.kind == LinkKind::Base && l.contact_force.norm() > s.weight)
    {
        return Some(TerminationReason::BaseCollision);
    }
    if s.links
        .iter()
        .any(|l| l.kind == LinkKind::Thigh && l.acceleration.norm() > th.thigh_acceleration)
    {
        return Some(TerminationReason::ThighAcceleration);
    }
    if stagnating(s, th) {
        return Some(TerminationReason::Stagnation);
    }
    None
}

/// Net displacement over the window is short while the goal is still far.
/// Needs history reaching back at least one full window.
fn stagnating(s: &TaskState, th: &TerminationThresholds) -> bool {
    if s.d_xy() <= th.goal_distance {
        return false;
    }
    let cutoff = s.time - th.stagnation_window;
    let Some(&(_, x0, y0)) = s.history.iter().rev().find(|(t, _, _)| *t <= cutoff) else {
        return false;
    };
    let moved = (s.base_position.x - x0).hypot(s.base_position.y - y0);
    moved < th.stagnation_distance
}

/// Task terms, termination, events and regularization with weights.
pub fn reward_breakdown(s: &TaskState, terminated: bool) -> Vec<RewardTerm> {
    let d_xy = s.d_xy();
    let d_yaw = s.d_yaw();
    let mut terms = vec![
        RewardTerm {
            name: "position_tracking",
            raw: r_position_tracking(d_xy, s.t_left),
            weight: W_POSITION,
        },
        RewardTerm {
            name: "heading_tracking",
            raw: r_heading_tracking(d_yaw, d_xy, s.t_left),
            weight: W_HEADING,
        },
        RewardTerm {
            name: "moving_to_goal",
            raw: r_move(d_xy, s.v_b.xy(), s.to_goal()),
            weight: W_MOVE,
        },
        RewardTerm {
            name: "standing_at_goal",
            raw: r_stand(d_xy, d_yaw, s.d_foot(), &s.g_b, s.d_q()),
            weight: W_STAND,
        },
        RewardTerm {
            name: "early_termination",
            raw: f64::from(u8::from(terminated)),
            weight: W_TERMINATION,
        },
        RewardTerm {
            name: "undesired_events",
            raw: undesired_events(s).count() as f64,
            weight: W_EVENTS,
        },
    ];
    terms.extend(regularization_terms(s));
    terms
}

pub fn total_reward(terms: &[RewardTerm]) -> f64 {
    terms.iter().map(RewardTerm::weighted).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumState {
    pub level: usize,
    pub max_level: usize,
    pub success_ema: f64,
    pub ema_coefficient: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelAction {
    Promote,
    Demote,
    Stay,
    /// Passed the top level and restarted at the given level.
    Reset(usize),
}

impl CurriculumState {
    pub fn new(max_level: usize) -> Self {
        Self {
            level: 0,
            max_level,
            success_ema: 0.0,
            ema_coefficient: 0.99,
        }
    }
}

/// Updates the success EMA, then promotes on a reached goal with EMA above
/// one half, demotes when the episode ended more than 4 m from the goal.
/// Promotion past the top level restarts at a uniform random level.
pub fn curriculum_step<R: Rng + ?Sized>(
    cs: &CurriculumState,
    reached_goal: bool,
    final_distance: f64,
    rng: &mut R,
) -> (CurriculumState, LevelAction) {
    let mut next = *cs;
    let c = cs.ema_coefficient;
    next.success_ema =
        (c * cs.success_ema + (1.0 - c) * f64::from(u8::from(reached_goal))).clamp(0.0, 1.0);
    let action = if reached_goal && next.success_ema > 0.5 {
        if cs.level >= cs.max_level {
            let level = rng.gen_range(0..=cs.max_level);
            next.level = level;
            LevelAction::Reset(level)
        } else {
            next.level = cs.level + 1;
            LevelAction::Promote
        }
    } else if final_distance > 4.0 {
        next.level = cs.level.saturating_sub(1);
        LevelAction::Demote
    } else {
        LevelAction::Stay
    };
    (next, action)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Command {
    pub dx: f64,
    pub dy: f64,
    pub yaw: f64,
    /// Present only in the critic command.
    pub t_left: Option<f64>,
}

pub const ACTOR_MAX_DISTANCE: f64 = 2.0;

/// Actor and critic views of the goal command.
///
/// The actor sees the goal offset clipped to 2 m, no remaining time, and a
/// random yaw while the goal is further than 2 m away.
pub fn actor_command<R: Rng + ?Sized>(
    goal_rel: (f64, f64),
    yaw_rel: f64,
    t_left: f64,
    rng: &mut R,
) -> (Command, Command) {
    let (dx, dy) = goal_rel;
    let d = dx.hypot(dy);
    let critic = Command {
        dx,
        dy,
        yaw: yaw_rel,
        t_left: Some(t_left),
    };
    let actor = if d > ACTOR_MAX_DISTANCE {
        let s = ACTOR_MAX_DISTANCE / d;
        Command {
            dx: dx * s,
            dy: dy * s,
            yaw: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            t_left: None,
        }
    } else {
        Command {
            dx,
            dy,
            yaw: yaw_rel,
            t_left: None,
        }
    };
    (actor, critic)
}
