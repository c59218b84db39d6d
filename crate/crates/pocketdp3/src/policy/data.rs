//! Training-ready view of a demonstration set: FPS-downsampled clouds,
//! normalization stats, and the (episode, t) windows the sampler draws from.

use super::norm::NormStats;
use crate::envbench::{Demonstration, EnvKind};
use crate::error::{Error, Result};
use crate::numerics::Array;
use crate::perception::{fps, PointCloud, ProprioState};

/// One training sample: observation frames (oldest first) and the normalized
/// action chunk starting at the window's timestep.
pub struct Window {
    pub frames: Vec<(PointCloud, ProprioState)>,
    pub chunk: Array<f32>,
}

pub struct Dataset {
    pub env: EnvKind,
    pub stats: NormStats,
    pub horizon: usize,
    pub n_obs: usize,
    pub action_dim: usize,
    /// FPS-downsampled cloud + normalized proprio per frame per episode.
    frames: Vec<Vec<(PointCloud, ProprioState)>>,
    /// Normalized actions per frame per episode.
    actions: Vec<Vec<Vec<f32>>>,
    windows: Vec<(usize, usize)>,
}

impl Dataset {
    /// Downsample every frame's cloud to `fps_points` once, normalize
    /// actions and proprio, and enumerate training windows. Windows at the
    /// episode head repeat the first frame, matching what the policy sees at
    /// rollout start; windows never run off the action tail.
    pub fn prepare(
        demos: &[Demonstration],
        fps_points: usize,
        horizon: usize,
        n_obs: usize,
    ) -> Result<Self> {
        let stats = NormStats::from_demos(demos)?;
        let env = demos[0].env;
        let action_dim = demos[0].frames[0].action.len();
        let mut frames = Vec::with_capacity(demos.len());
        let mut actions = Vec::with_capacity(demos.len());
        let mut windows = Vec::new();
        for (ei, d) in demos.iter().enumerate() {
            if d.len() < horizon + n_obs {
                return Err(Error::Config(format!(
                    "episode {ei} has {} frames, needs at least {}",
                    d.len(),
                    horizon + n_obs
                )));
            }
            let mut ep_frames = Vec::with_capacity(d.len());
            let mut ep_actions = Vec::with_capacity(d.len());
            for f in &d.frames {
                let cloud = fps(&f.cloud, fps_points.min(f.cloud.len()))?;
                let proprio = ProprioState::new(stats.normalize_state(f.proprio.values())?)?;
                ep_frames.push((cloud, proprio));
                let mut a = vec![0.0f32; action_dim];
                stats.normalize_action(&f.action, &mut a)?;
                ep_actions.push(a);
            }
            for t in 0..=(d.len() - horizon) {
                windows.push((ei, t));
            }
            frames.push(ep_frames);
            actions.push(ep_actions);
        }
        Ok(Dataset {
            env,
            stats,
            horizon,
            n_obs,
            action_dim,
            frames,
            actions,
            windows,
        })
    }

    pub fn num_windows(&self) -> usize {
        self.windows.len()
    }

    pub fn num_episodes(&self) -> usize {
        self.frames.len()
    }

    pub fn window(&self, idx: usize) -> Window {
        let (ei, t) = self.windows[idx];
        let ep = &self.frames[ei];
        let mut obs = Vec::with_capacity(self.n_obs);
        for i in 0..self.n_obs {
            let fi = (t + i + 1).saturating_sub(self.n_obs);
            obs.push(ep[fi].clone());
        }
        let mut chunk = Array::zeros(&[self.horizon, self.action_dim]);
        for h in 0..self.horizon {
            for j in 0..self.action_dim {
                *chunk.at_mut(h, j) = self.actions[ei][t + h][j];
            }
        }
        Window { frames: obs, chunk }
    }
}
