//! Expert demonstration episodes and their replay validation.

use super::{env_step, expert::scripted_expert, render::render_pointcloud, sample_state, EnvKind, EnvState};
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::perception::{PointCloud, ProprioState};

#[derive(Clone, Debug, PartialEq)]
pub struct DemoFrame {
    pub cloud: PointCloud,
    pub proprio: ProprioState,
    pub action: [f32; 2],
}

/// One successful expert episode: ordered observation/action frames plus the
/// metadata needed to replay it exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    pub env: EnvKind,
    /// Substream tag under the dataset seed; replay re-derives the stream.
    pub episode_tag: u64,
    pub start: EnvState,
    pub frames: Vec<DemoFrame>,
    pub success: bool,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Run one expert episode under a dedicated stream. Returns `None` when the
/// expert fails to reach the goal inside `max_steps`.
fn run_episode(
    env: EnvKind,
    tag: u64,
    root: &RngStream,
    n_points: usize,
    min_len: usize,
    max_steps: usize,
) -> Option<Demonstration> {
    let mut stream = root.substream(tag);
    let start = sample_state(env, &mut stream);
    let mut state = start.clone();
    let mut frames = Vec::new();
    let mut succeeded = false;
    for _ in 0..max_steps {
        if state.success() {
            succeeded = true;
            // keep recording hold-position frames until the episode is long
            // enough to slice at least one training window out of it
            if frames.len() >= min_len {
                break;
            }
        }
        let cloud = render_pointcloud(&state, n_points, &mut stream);
        let action = scripted_expert(&state);
        frames.push(DemoFrame {
            cloud,
            proprio: state.proprio(),
            action,
        });
        state = env_step(&state, &action).ok()?;
    }
    if !(succeeded || state.success()) || frames.len() < min_len {
        return None;
    }
    Some(Demonstration {
        env,
        episode_tag: tag,
        start,
        frames,
        success: true,
    })
}

/// Generate `n` successful demonstrations; failed expert episodes are
/// resampled. An expert failure rate above 50% is a configuration error.
pub fn generate_demos(
    env: EnvKind,
    n: usize,
    seed: u64,
    n_points: usize,
    min_len: usize,
) -> Result<Vec<Demonstration>> {
    if n == 0 {
        return Err(Error::Config("generate_demos wants n >= 1".into()));
    }
    let root = RngStream::new(seed);
    let max_steps = env.default_max_steps();
    let mut demos = Vec::with_capacity(n);
    let mut attempts: u64 = 0;
    let mut failures: u64 = 0;
    while demos.len() < n {
        let tag = attempts;
        attempts += 1;
        match run_episode(env, tag, &root, n_points, min_len, max_steps) {
            Some(d) => demos.push(d),
            None => {
                failures += 1;
                if attempts >= 10 && failures * 2 > attempts {
                    return Err(Error::Config(format!(
                        "expert failure rate too high: {failures}/{attempts}"
                    )));
                }
            }
        }
    }
    Ok(demos)
}

/// Re-derive the episode stream and verify the stored episode is exactly
/// what the environment produces: same start, same clouds, same proprio,
/// and stored actions replay to success.
pub fn replay_demonstration(demo: &Demonstration, seed: u64, n_points: usize) -> Result<()> {
    let root = RngStream::new(seed);
    let mut stream = root.substream(demo.episode_tag);
    let start = sample_state(demo.env, &mut stream);
    if start != demo.start {
        return Err(Error::Format("replay start state mismatch".into()));
    }
    let mut state = start;
    for (i, frame) in demo.frames.iter().enumerate() {
        let cloud = render_pointcloud(&state, n_points, &mut stream);
        if cloud != frame.cloud {
            return Err(Error::Format(format!("replay cloud mismatch at frame {i}")));
        }
        if state.proprio() != frame.proprio {
            return Err(Error::Format(format!("replay proprio mismatch at frame {i}")));
        }
        state = env_step(&state, &frame.action)?;
    }
    if !state.success() {
        return Err(Error::Format("replayed episode does not end in success".into()));
    }
    Ok(())
}
