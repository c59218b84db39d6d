//! Synthetic single-view point clouds of the planar scene.

use super::{
    EnvKind, EnvState, AGENT_HEIGHT, AGENT_RADIUS, BLOCK_HEIGHT, BLOCK_RADIUS, GOAL_MARKER_RADIUS,
    SENSOR_NOISE,
};
use crate::numerics::RngStream;
use crate::perception::PointCloud;

enum Entity {
    /// Filled disc top surface at a height.
    Disc { center: [f32; 2], radius: f32, z: f32 },
    /// Thin ring flat on the table.
    Ring { center: [f32; 2], radius: f32 },
}

impl Entity {
    fn sample(&self, rng: &mut RngStream, noise: f64) -> [f32; 3] {
        let (x, y, z) = match self {
            Entity::Disc { center, radius, z } => {
                let r = *radius as f64 * rng.uniform().sqrt();
                let th = std::f64::consts::TAU * rng.uniform();
                (
                    center[0] as f64 + r * th.cos(),
                    center[1] as f64 + r * th.sin(),
                    *z as f64,
                )
            }
            Entity::Ring { center, radius } => {
                let th = std::f64::consts::TAU * rng.uniform();
                (
                    center[0] as f64 + *radius as f64 * th.cos(),
                    center[1] as f64 + *radius as f64 * th.sin(),
                    0.0,
                )
            }
        };
        [
            (x + noise * rng.normal()) as f32,
            (y + noise * rng.normal()) as f32,
            (z + noise * rng.normal()) as f32,
        ]
    }
}

/// Sample `n_points` from the scene surfaces with Gaussian sensor noise.
/// Deterministic given the rng state. Points arrive grouped by entity:
/// agent, then block (push only), then goal marker.
pub fn render_pointcloud(state: &EnvState, n_points: usize, rng: &mut RngStream) -> PointCloud {
    render_with_noise(state, n_points, rng, SENSOR_NOISE)
}

pub fn render_with_noise(
    state: &EnvState,
    n_points: usize,
    rng: &mut RngStream,
    noise: f64,
) -> PointCloud {
    assert!(n_points >= 1, "render wants n_points >= 1");
    let entities: Vec<(Entity, f64)> = match state.kind {
        EnvKind::Reach => vec![
            (
                Entity::Disc {
                    center: state.agent,
                    radius: AGENT_RADIUS,
                    z: AGENT_HEIGHT,
                },
                0.55,
            ),
            (
                Entity::Ring {
                    center: state.goal,
                    radius: GOAL_MARKER_RADIUS,
                },
                0.45,
            ),
        ],
        EnvKind::Push => vec![
            (
                Entity::Disc {
                    center: state.agent,
                    radius: AGENT_RADIUS,
                    z: AGENT_HEIGHT,
                },
                0.4,
            ),
            (
                Entity::Disc {
                    center: state.block,
                    radius: BLOCK_RADIUS,
                    z: BLOCK_HEIGHT,
                },
                0.3,
            ),
            (
                Entity::Ring {
                    center: state.goal,
                    radius: GOAL_MARKER_RADIUS,
                },
                0.3,
            ),
        ],
    };

    // integer allocation: floors first, remainders to the front entities
    let mut counts: Vec<usize> = entities
        .iter()
        .map(|(_, w)| (n_points as f64 * w) as usize)
        .collect();
    let mut assigned: usize = counts.iter().sum();
    let n_entities = counts.len();
    let mut i = 0;
    while assigned < n_points {
        counts[i % n_entities] += 1;
        assigned += 1;
        i += 1;
    }

    let mut pts = Vec::with_capacity(n_points);
    for ((entity, _), count) in entities.iter().zip(&counts) {
        for _ in 0..*count {
            pts.push(entity.sample(rng, noise));
        }
    }
    PointCloud::new(pts).expect("non-empty rendered cloud")
}

/// Index range of the goal-marker points inside a rendered cloud.
pub fn goal_point_range(kind: EnvKind, n_points: usize) -> std::ops::Range<usize> {
    let weights: &[f64] = match kind {
        EnvKind::Reach => &[0.55, 0.45],
        EnvKind::Push => &[0.4, 0.3, 0.3],
    };
    let mut counts: Vec<usize> = weights.iter().map(|w| (n_points as f64 * w) as usize).collect();
    let mut assigned: usize = counts.iter().sum();
    let n_entities = counts.len();
    let mut i = 0;
    while assigned < n_points {
        counts[i % n_entities] += 1;
        assigned += 1;
        i += 1;
    }
    let start: usize = counts[..counts.len() - 1].iter().sum();
    start..n_points
}
