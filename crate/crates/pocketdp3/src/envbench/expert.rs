//! Scripted experts: capped proportional control for reach, an
//! approach-behind-then-push controller for push.

use super::{dist, EnvKind, EnvState, AGENT_RADIUS, BLOCK_RADIUS, SPEED_CAP, SUCCESS_TOL};

const KP: f32 = 6.0;
/// Orbit radius while circling around the block to get behind it.
const SAFE_MARGIN: f32 = 0.05;
/// How deep the agent aims into the contact shell while pushing.
const PUSH_BITE: f32 = 0.015;

fn clamp_speed(v: [f32; 2]) -> [f32; 2] {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if n > SPEED_CAP {
        [v[0] * SPEED_CAP / n, v[1] * SPEED_CAP / n]
    } else {
        v
    }
}

fn towards(from: [f32; 2], to: [f32; 2]) -> [f32; 2] {
    clamp_speed([(to[0] - from[0]) * KP, (to[1] - from[1]) * KP])
}

pub fn scripted_expert(state: &EnvState) -> [f32; 2] {
    match state.kind {
        EnvKind::Reach => {
            if dist(state.agent, state.goal) <= 0.5 * SUCCESS_TOL {
                return [0.0, 0.0];
            }
            towards(state.agent, state.goal)
        }
        EnvKind::Push => {
            let b = state.block;
            let g = state.goal;
            let p = state.agent;
            let bg = dist(b, g);
            if bg <= 0.6 * SUCCESS_TOL {
                return [0.0, 0.0];
            }
            // push direction and the point to push from
            let u = [(g[0] - b[0]) / bg, (g[1] - b[1]) / bg];
            let contact = AGENT_RADIUS + BLOCK_RADIUS;
            let behind = [
                b[0] - u[0] * (contact - PUSH_BITE),
                b[1] - u[1] * (contact - PUSH_BITE),
            ];

            let rel = [p[0] - b[0], p[1] - b[1]];
            let rel_angle = rel[1].atan2(rel[0]);
            let target_angle = (-u[1]).atan2(-u[0]);
            let mut dth = target_angle - rel_angle;
            while dth > std::f32::consts::PI {
                dth -= std::f32::consts::TAU;
            }
            while dth < -std::f32::consts::PI {
                dth += std::f32::consts::TAU;
            }

            if dth.abs() <= 0.3 {
                // aligned: drive into the contact shell along the push axis
                towards(p, behind)
            } else {
                // circle around the block on a safe orbit, shortest way
                let orbit = contact + SAFE_MARGIN;
                let step = dth.signum() * dth.abs().min(0.5);
                let a = rel_angle + step;
                let waypoint = [b[0] + orbit * a.cos(), b[1] + orbit * a.sin()];
                towards(p, waypoint)
            }
        }
    }
}
