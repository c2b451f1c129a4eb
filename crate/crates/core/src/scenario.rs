//! World state: clock, mobile devices, MEC servers, tasks, and mobility.
//!
//! Positions are horizontal coordinates in meters. Mobile devices move under
//! a Gauss-Markov velocity process updated once per epoch; UAVs move to
//! optimizer-chosen positions under per-epoch displacement and destination
//! reachability constraints.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Kinematic slack below which a UAV move is rejected, in meters.
pub const KINEMATIC_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, rhs: Vec2) -> f64 {
        self.x * rhs.x + self.y * rhs.y
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist(self, rhs: Vec2) -> f64 {
        (self - rhs).norm()
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

/// Two time-scale clock. Slots are 1-based; every `slots_per_epoch`
/// consecutive slots form one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clock {
    pub slot_duration: f64,
    pub slots_per_epoch: u32,
    pub horizon: u32,
}

impl Clock {
    pub fn epoch_of(&self, slot: u32) -> u32 {
        slot.div_ceil(self.slots_per_epoch)
    }

    pub fn epoch_count(&self) -> u32 {
        self.horizon / self.slots_per_epoch
    }

    pub fn is_epoch_boundary(&self, slot: u32) -> bool {
        slot > 0 && slot % self.slots_per_epoch == 0
    }

    /// Wall-clock length of one epoch in seconds.
    pub fn epoch_seconds(&self) -> f64 {
        self.slot_duration * f64::from(self.slots_per_epoch)
    }
}

/// Rectangular service region `[0, width] x [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arena {
    pub width: f64,
    pub height: f64,
}

impl Arena {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }
}

/// Gauss-Markov velocity recursion parameters. `memory` blends the previous
/// velocity with the asymptotic mean; `sigma` is the asymptotic per-axis
/// standard deviation of the stationary velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussMarkovParams {
    pub memory: f64,
    pub mean_velocity: Vec2,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobileDevice {
    pub id: u32,
    pub position: Vec2,
    pub velocity: Vec2,
    /// CPU capability of the single local core, cycles/s.
    pub cpu_capacity: f64,
    pub transmit_power: f64,
    pub energy_cap: f64,
    pub budget: f64,
    pub weight: f64,
    pub capacitance: f64,
    pub mobility: GaussMarkovParams,
    /// Last slot the local core is occupied (0 = never busy).
    pub busy_until: u32,
    /// Last slot the uplink radio is occupied.
    pub radio_busy_until: u32,
}

impl MobileDevice {
    pub fn core_idle(&self, slot: u32) -> bool {
        self.busy_until < slot
    }

    pub fn radio_idle(&self, slot: u32) -> bool {
        self.radio_busy_until < slot
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskState {
    Pending,
    ExecutingLocal,
    ExecutingEdge(u32),
    Completed,
    Dropped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub owner: u32,
    /// Global creation index; doubles as the deterministic tie-break id.
    pub seq: u32,
    pub generated_at: u32,
    pub size_bits: f64,
    pub cycles: f64,
    pub deadline: f64,
    pub state: TaskState,
    /// Slot in which the chosen execution finishes (valid while executing).
    pub done_at: u32,
}

impl Task {
    /// Deadline left at the start of `slot`, after queueing since generation.
    pub fn remaining_deadline(&self, slot: u32, slot_duration: f64) -> f64 {
        self.deadline - f64::from(slot - self.generated_at) * slot_duration
    }
}

/// Rotary-wing propulsion constants: blade profile, induced, and parasite
/// power terms plus rotor tip speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropulsionParams {
    pub blade: f64,
    pub induced: f64,
    pub induced_speed4: f64,
    pub parasite: f64,
    pub tip_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UavState {
    pub altitude: f64,
    pub max_speed: f64,
    pub start: Vec2,
    pub destination: Vec2,
    pub propulsion: PropulsionParams,
    /// Speed implied by the last accepted epoch move, m/s.
    pub current_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServerKind {
    Terrestrial,
    Aerial(UavState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeServer {
    pub id: u32,
    pub kind: ServerKind,
    pub position: Vec2,
    pub core_count: u32,
    /// Homogeneous per-core capability, cycles/s.
    pub per_core_capacity: f64,
    pub energy_cap: f64,
    pub price_cap: f64,
    pub weight: f64,
    pub capacitance: f64,
    /// Per-core last busy slot (0 = never busy).
    pub cores: Vec<u32>,
}

impl EdgeServer {
    pub fn altitude(&self) -> f64 {
        match &self.kind {
            ServerKind::Terrestrial => 0.0,
            ServerKind::Aerial(u) => u.altitude,
        }
    }

    pub fn is_aerial(&self) -> bool {
        matches!(self.kind, ServerKind::Aerial(_))
    }

    pub fn uav(&self) -> Option<&UavState> {
        match &self.kind {
            ServerKind::Terrestrial => None,
            ServerKind::Aerial(u) => Some(u),
        }
    }

    pub fn idle_core_count(&self, slot: u32) -> u32 {
        self.cores.iter().filter(|&&busy| busy < slot).count() as u32
    }

    pub fn available_cycles(&self, slot: u32) -> f64 {
        f64::from(self.idle_core_count(slot)) * self.per_core_capacity
    }

    pub fn busy_core_count(&self, slot: u32) -> u32 {
        self.core_count - self.idle_core_count(slot)
    }

    /// Index of the lowest idle core, if any.
    pub fn first_idle_core(&self, slot: u32) -> Option<usize> {
        self.cores.iter().position(|&busy| busy < slot)
    }

    /// 3-D distance to a ground position, floored at the 1 m reference
    /// distance of the path-loss model.
    pub fn distance_3d(&self, ground: Vec2) -> f64 {
        let h = self.position.dist(ground);
        (h * h + self.altitude() * self.altitude()).sqrt().max(1.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum KinematicViolation {
    #[error("epoch displacement {dist:.6} m exceeds limit {limit:.6} m")]
    Displacement { dist: f64, limit: f64 },
    #[error("destination unreachable: needs {dist:.6} m with only {limit:.6} m of travel left")]
    Reachability { dist: f64, limit: f64 },
}

/// Advances one MD through an epoch boundary: the position moves by the
/// current velocity, then the velocity is refreshed by the Gauss-Markov
/// recursion. Positions are clamped to the arena with the wall-normal
/// velocity component reflected.
pub fn advance_md_mobility<R: Rng>(
    md: &mut MobileDevice,
    arena: &Arena,
    epoch_seconds: f64,
    rng: &mut R,
) {
    let p = &md.mobility;
    let mut pos = md.position + md.velocity * epoch_seconds;

    let wx: f64 = rng.sample(StandardNormal);
    let wy: f64 = rng.sample(StandardNormal);
    let noise = p.sigma * (1.0 - p.memory * p.memory).sqrt();
    let mut vel = md.velocity * p.memory
        + p.mean_velocity * (1.0 - p.memory)
        + Vec2::new(wx, wy) * noise;

    if pos.x < 0.0 {
        pos.x = 0.0;
        vel.x = vel.x.abs();
    } else if pos.x > arena.width {
        pos.x = arena.width;
        vel.x = -vel.x.abs();
    }
    if pos.y < 0.0 {
        pos.y = 0.0;
        vel.y = vel.y.abs();
    } else if pos.y > arena.height {
        pos.y = arena.height;
        vel.y = -vel.y.abs();
    }

    md.position = pos;
    md.velocity = vel;
}

/// Moves an aerial server to `target` for the next epoch. `epochs_left_after`
/// is the number of epoch moves still available after this one; the
/// destination must stay reachable within them.
pub fn advance_uav_position(
    server: &mut EdgeServer,
    target: Vec2,
    epoch_seconds: f64,
    epochs_left_after: u32,
) -> Result<(), KinematicViolation> {
    let uav = match &server.kind {
        ServerKind::Aerial(u) => u.clone(),
        ServerKind::Terrestrial => return Ok(()),
    };
    let dist = server.position.dist(target);
    let step_limit = uav.max_speed * epoch_seconds;
    if dist > step_limit + KINEMATIC_TOL {
        return Err(KinematicViolation::Displacement {
            dist,
            limit: step_limit,
        });
    }
    let remaining = uav.destination.dist(target);
    let reach_limit = uav.max_speed * epoch_seconds * f64::from(epochs_left_after);
    if remaining > reach_limit + KINEMATIC_TOL {
        return Err(KinematicViolation::Reachability {
            dist: remaining,
            limit: reach_limit,
        });
    }
    server.position = target;
    if let ServerKind::Aerial(u) = &mut server.kind {
        u.current_speed = dist / epoch_seconds;
    }
    Ok(())
}

/// Pass/fail audit of a full per-epoch UAV position trace against the
/// anchoring, displacement, and reachability constraints, with slacks in
/// meters (negative slack = violation).
#[derive(Debug, Clone)]
pub struct KinematicsAudit {
    pub initial_slack: f64,
    pub final_slack: f64,
    /// Per move: step limit minus actual displacement.
    pub step_slacks: Vec<f64>,
    /// Per epoch: remaining travel budget minus distance to destination.
    pub reach_slacks: Vec<f64>,
}

impl KinematicsAudit {
    pub fn pass(&self) -> bool {
        self.initial_slack >= -KINEMATIC_TOL
            && self.final_slack >= -KINEMATIC_TOL
            && self.step_slacks.iter().all(|&s| s >= -KINEMATIC_TOL)
            && self.reach_slacks.iter().all(|&s| s >= -KINEMATIC_TOL)
    }
}

/// Audits the positions held during epochs `1..=positions.len()`.
pub fn check_uav_kinematics(positions: &[Vec2], uav: &UavState, clock: &Clock) -> KinematicsAudit {
    let step_limit = uav.max_speed * clock.epoch_seconds();
    let t0_count = clock.epoch_count();
    let initial_slack = match positions.first() {
        Some(&p) => -p.dist(uav.start),
        None => 0.0,
    };
    let final_slack = if positions.len() as u32 == t0_count {
        -positions.last().unwrap().dist(uav.destination)
    } else {
        0.0
    };
    let step_slacks = positions
        .windows(2)
        .map(|w| step_limit - w[0].dist(w[1]))
        .collect();
    let reach_slacks = positions
        .iter()
        .enumerate()
        .map(|(idx, &p)| {
            let t0 = idx as f64 + 1.0;
            step_limit * (f64::from(t0_count) - t0) - p.dist(uav.destination)
        })
        .collect();
    KinematicsAudit {
        initial_slack,
        final_slack,
        step_slacks,
        reach_slacks,
    }
}
