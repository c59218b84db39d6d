//! Planar manipulation environments with point-cloud observations, scripted
//! experts and demonstration generation.
//!
//! Two tasks: `reach` (drive the agent disc to the goal) and `push`
//! (contact-rich block pushing; the agent can circle in from either side,
//! so demonstrations are multimodal).

mod demos;
mod expert;
mod render;

pub use demos::{generate_demos, replay_demonstration, DemoFrame, Demonstration};
pub use expert::scripted_expert;
pub use render::{goal_point_range, render_pointcloud, render_with_noise};

use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::perception::ProprioState;

pub const DT: f32 = 0.05;
pub const SPEED_CAP: f32 = 0.5;
pub const SUCCESS_TOL: f32 = 0.05;
pub const AGENT_RADIUS: f32 = 0.06;
pub const BLOCK_RADIUS: f32 = 0.08;
pub const GOAL_MARKER_RADIUS: f32 = 0.05;
pub const AGENT_HEIGHT: f32 = 0.02;
pub const BLOCK_HEIGHT: f32 = 0.04;
pub const SENSOR_NOISE: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    Reach,
    Push,
}

impl EnvKind {
    pub fn action_dim(&self) -> usize {
        2
    }

    pub fn state_dim(&self) -> usize {
        2
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::Reach => "reach",
            EnvKind::Push => "push",
        }
    }

    /// Default episode cap: generous multiples of the expert's worst case.
    pub fn default_max_steps(&self) -> usize {
        match self {
            EnvKind::Reach => 300,
            EnvKind::Push => 500,
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reach" => Ok(EnvKind::Reach),
            "push" => Ok(EnvKind::Push),
            other => Err(Error::Config(format!("unknown env '{other}'"))),
        }
    }
}

/// Value-semantic environment state; transitions are pure.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub kind: EnvKind,
    pub agent: [f32; 2],
    pub agent_vel: [f32; 2],
    pub block: [f32; 2],
    pub goal: [f32; 2],
    pub steps: usize,
}

pub fn dist(a: [f32; 2], b: [f32; 2]) -> f32 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn clamp_speed(v: [f32; 2]) -> [f32; 2] {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if n > SPEED_CAP {
        [v[0] * SPEED_CAP / n, v[1] * SPEED_CAP / n]
    } else {
        v
    }
}

impl EnvState {
    /// Distance from the task object (agent for reach, block for push) to
    /// the goal.
    pub fn distance_to_goal(&self) -> f32 {
        match self.kind {
            EnvKind::Reach => dist(self.agent, self.goal),
            EnvKind::Push => dist(self.block, self.goal),
        }
    }

    pub fn success(&self) -> bool {
        self.distance_to_goal() <= SUCCESS_TOL
    }

    pub fn proprio(&self) -> ProprioState {
        ProprioState::new(self.agent.to_vec()).expect("finite agent position")
    }
}

/// Deterministic kinematic update: velocity clamping, workspace clipping,
/// rigid contact displacement of the block when the agent overlaps it.
pub fn env_step(state: &EnvState, action: &[f32]) -> Result<EnvState> {
    if action.len() != state.kind.action_dim() {
        return Err(Error::Config(format!(
            "action dim {} != {}",
            action.len(),
            state.kind.action_dim()
        )));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite(format!(
            "action at env step {}",
            state.steps
        )));
    }
    let v = clamp_speed([action[0], action[1]]);
    let mut next = state.clone();
    next.agent[0] = (state.agent[0] + v[0] * DT).clamp(-1.0, 1.0);
    next.agent[1] = (state.agent[1] + v[1] * DT).clamp(-1.0, 1.0);
    next.agent_vel = v;

    if state.kind == EnvKind::Push {
        let contact = AGENT_RADIUS + BLOCK_RADIUS;
        let d = dist(next.block, next.agent);
        if d < contact {
            let dir = if d > 1e-6 {
                [
                    (next.block[0] - next.agent[0]) / d,
                    (next.block[1] - next.agent[1]) / d,
                ]
            } else {
                [1.0, 0.0]
            };
            let shift = contact - d;
            next.block[0] = (next.block[0] + dir[0] * shift).clamp(-1.0 + BLOCK_RADIUS, 1.0 - BLOCK_RADIUS);
            next.block[1] = (next.block[1] + dir[1] * shift).clamp(-1.0 + BLOCK_RADIUS, 1.0 - BLOCK_RADIUS);
        }
    }
    next.steps = state.steps + 1;
    Ok(next)
}

fn uniform_in(rng: &mut RngStream, lo: f32, hi: f32) -> f32 {
    lo + (hi - lo) * rng.uniform() as f32
}

/// Randomized initial state. Starts keep a minimum separation from the goal
/// so every episode has room for a meaningful trajectory.
pub fn sample_state(kind: EnvKind, rng: &mut RngStream) -> EnvState {
    match kind {
        EnvKind::Reach => loop {
            let agent = [uniform_in(rng, -0.8, 0.8), uniform_in(rng, -0.8, 0.8)];
            let goal = [uniform_in(rng, -0.8, 0.8), uniform_in(rng, -0.8, 0.8)];
            if dist(agent, goal) >= 0.3 {
                return EnvState {
                    kind,
                    agent,
                    agent_vel: [0.0, 0.0],
                    block: [0.0, 0.0],
                    goal,
                    steps: 0,
                };
            }
        },
        EnvKind::Push => loop {
            let block = [uniform_in(rng, -0.5, 0.5), uniform_in(rng, -0.5, 0.5)];
            let goal = [uniform_in(rng, -0.5, 0.5), uniform_in(rng, -0.5, 0.5)];
            let agent = [uniform_in(rng, -0.8, 0.8), uniform_in(rng, -0.8, 0.8)];
            let sep = AGENT_RADIUS + BLOCK_RADIUS + 0.05;
            if dist(block, goal) >= 0.3 && dist(agent, block) >= sep {
                return EnvState {
                    kind,
                    agent,
                    agent_vel: [0.0, 0.0],
                    block,
                    goal,
                    steps: 0,
                };
            }
        },
    }
}

/// Canonical push start used by deterministic smoke tests.
pub fn canonical_push_state() -> EnvState {
    EnvState {
        kind: EnvKind::Push,
        agent: [-0.6, -0.4],
        agent_vel: [0.0, 0.0],
        block: [0.0, 0.0],
        goal: [0.4, 0.3],
        steps: 0,
    }
}

/// Success flag, steps used and final distance for one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub success: bool,
    pub steps: usize,
    pub final_dist: f32,
}
