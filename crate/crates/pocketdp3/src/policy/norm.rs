//! Per-dimension min/max normalization of actions and proprio states.

use crate::envbench::Demonstration;
use crate::error::{Error, Result};

/// Dataset statistics mapping each dimension's [min, max] onto [-1, 1].
/// Stored with every checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub action_min: Vec<f32>,
    pub action_max: Vec<f32>,
    pub state_min: Vec<f32>,
    pub state_max: Vec<f32>,
}

fn norm_one(x: f32, lo: f32, hi: f32) -> f32 {
    if hi <= lo {
        0.0
    } else {
        2.0 * (x - lo) / (hi - lo) - 1.0
    }
}

fn denorm_one(x: f32, lo: f32, hi: f32) -> f32 {
    if hi <= lo {
        lo
    } else {
        (x + 1.0) * 0.5 * (hi - lo) + lo
    }
}

impl NormStats {
    /// Scan a demonstration set for per-dimension extrema.
    pub fn from_demos(demos: &[Demonstration]) -> Result<Self> {
        let first = demos
            .first()
            .and_then(|d| d.frames.first())
            .ok_or_else(|| Error::Config("empty demonstration set".into()))?;
        let adim = first.action.len();
        let sdim = first.proprio.dim();
        let mut s = NormStats {
            action_min: vec![f32::INFINITY; adim],
            action_max: vec![f32::NEG_INFINITY; adim],
            state_min: vec![f32::INFINITY; sdim],
            state_max: vec![f32::NEG_INFINITY; sdim],
        };
        for d in demos {
            for f in &d.frames {
                for (j, a) in f.action.iter().enumerate() {
                    s.action_min[j] = s.action_min[j].min(*a);
                    s.action_max[j] = s.action_max[j].max(*a);
                }
                for (j, v) in f.proprio.values().iter().enumerate() {
                    s.state_min[j] = s.state_min[j].min(*v);
                    s.state_max[j] = s.state_max[j].max(*v);
                }
            }
        }
        Ok(s)
    }

    pub fn normalize_action(&self, a: &[f32], out: &mut [f32]) -> Result<()> {
        if a.len() != self.action_min.len() || out.len() != a.len() {
            return Err(Error::Shape(format!(
                "action dim {} vs stats {}",
                a.len(),
                self.action_min.len()
            )));
        }
        for j in 0..a.len() {
            out[j] = norm_one(a[j], self.action_min[j], self.action_max[j]);
        }
        Ok(())
    }

    pub fn denormalize_action(&self, a: &[f32], out: &mut [f32]) -> Result<()> {
        if a.len() != self.action_min.len() || out.len() != a.len() {
            return Err(Error::Shape(format!(
                "action dim {} vs stats {}",
                a.len(),
                self.action_min.len()
            )));
        }
        for j in 0..a.len() {
            out[j] = denorm_one(a[j], self.action_min[j], self.action_max[j]);
        }
        Ok(())
    }

    pub fn normalize_state(&self, s: &[f32]) -> Result<Vec<f32>> {
        if s.len() != self.state_min.len() {
            return Err(Error::Shape(format!(
                "state dim {} vs stats {}",
                s.len(),
                self.state_min.len()
            )));
        }
        Ok(s.iter()
            .enumerate()
            .map(|(j, v)| norm_one(*v, self.state_min[j], self.state_max[j]))
            .collect())
    }
}
