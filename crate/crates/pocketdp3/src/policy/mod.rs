//! Imitation policy: model bundle, DDIM sampling and receding-horizon
//! rollouts.

mod data;
mod norm;
mod train;

pub use data::{Dataset, Window};
pub use norm::NormStats;
pub use train::{lr_schedule, AdamW, TrainConfig, TrainOutcome, Trainer};

use crate::dim::{Decoder, DiMConfig, DiMDecoder, FilmMode, VanillaMlp};
use crate::envbench::{env_step, render_pointcloud, sample_state, scripted_expert, EnvKind, EnvState, EpisodeResult};
use crate::error::{Error, Result};
use crate::numerics::{Array, Graph, ParamStore, RngStream, Scalar, Var};
use crate::perception::{fps, ContextNet, ObsFusion, PointCloud, ProprioState, SceneEncoder};
use crate::schedule::{ddim_step, make_plan, DiffusionSchedule};

use rayon::prelude::*;

/// Which decoder architecture a policy carries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ArchKind {
    DiM,
    Vanilla { hidden: usize },
}

/// Everything needed to rebuild the network deterministically.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub dim_cfg: DiMConfig,
    pub arch: ArchKind,
    pub film: FilmMode,
    pub fusion: ObsFusion,
    pub n_obs: usize,
    pub state_dim: usize,
    /// Farthest-point-sampling target applied to every observed cloud.
    pub fps_points: usize,
}

/// A trajectory in normalized or task units, `horizon x action_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionChunk {
    pub actions: Array<f32>,
}

impl ActionChunk {
    pub fn horizon(&self) -> usize {
        self.actions.shape()[0]
    }

    pub fn action(&self, h: usize) -> Vec<f32> {
        (0..self.actions.shape()[1])
            .map(|j| self.actions.at(h, j))
            .collect()
    }
}

/// Scene encoder + context net + decoder over one parameter store.
pub struct PolicyModel {
    pub spec: ModelSpec,
    pub encoder: SceneEncoder,
    pub context: ContextNet,
    pub decoder: Decoder,
}

impl PolicyModel {
    /// Deterministic construction: identical (spec, rng seed) yields an
    /// identical parameter store.
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        spec: &ModelSpec,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let decoder = match &spec.arch {
            ArchKind::DiM => {
                Decoder::DiM(DiMDecoder::build(store, &spec.dim_cfg, spec.film, rng)?)
            }
            ArchKind::Vanilla { hidden } => {
                Decoder::Vanilla(VanillaMlp::build(store, &spec.dim_cfg, *hidden, rng)?)
            }
        };
        let encoder = SceneEncoder::build(store, rng);
        let context = ContextNet::build(
            store,
            spec.n_obs,
            spec.state_dim,
            spec.dim_cfg.cond_dim,
            spec.fusion,
            rng,
        );
        Ok(PolicyModel {
            spec: spec.clone(),
            encoder,
            context,
            decoder,
        })
    }

    /// Training forward: noised chunk plus context from raw frames; returns
    /// the predicted clean chunk node.
    pub fn predict<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        frames: &[(PointCloud, ProprioState)],
        a_t: Var,
        t: usize,
        t_steps: usize,
    ) -> Result<Var> {
        let ctx = self.context.forward(g, &self.encoder, frames, t, t_steps)?;
        self.decoder.forward(g, a_t, ctx)
    }
}

fn clamp_unit(a: &mut Array<f32>) {
    for v in a.data_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
}

/// Draw a standard-normal chunk.
pub fn sample_noise(shape: &[usize], rng: &mut RngStream) -> Array<f32> {
    let mut a = Array::zeros(shape);
    for v in a.data_mut() {
        *v = rng.normal() as f32;
    }
    a
}

/// Run the reverse process with an arbitrary clean-sample predictor. The
/// predictor sees `(x_t, t)` in normalized space; its output is clipped to
/// `[-1, 1]` before each transition.
pub fn sample_chunk_with(
    predictor: &mut dyn FnMut(&Array<f32>, usize) -> Result<Array<f32>>,
    shape: &[usize],
    plan_nfe: usize,
    sched: &DiffusionSchedule,
    rng: &mut RngStream,
) -> Result<Array<f32>> {
    let plan = make_plan(plan_nfe, sched.len())?;
    let mut x = sample_noise(shape, rng);
    let mut result = None;
    for (t, t_prev) in plan.transitions() {
        let mut x0 = predictor(&x, t)?;
        if !x0.all_finite() {
            return Err(Error::NonFinite(format!("prediction at timestep {t}")));
        }
        clamp_unit(&mut x0);
        match t_prev {
            Some(_) => x = ddim_step(&x, &x0, t, t_prev, sched)?,
            None => result = Some(ddim_step(&x, &x0, t, t_prev, sched)?),
        }
        if !x.all_finite() {
            return Err(Error::NonFinite(format!("ddim state after timestep {t}")));
        }
    }
    result.ok_or_else(|| Error::Config("empty timestep plan".into()))
}

/// Full inference path: downsample frames, encode the scene once, run the
/// DDIM plan, denormalize the final prediction.
pub fn sample_actions(
    store: &ParamStore<f32>,
    model: &PolicyModel,
    stats: &NormStats,
    raw_frames: &[(PointCloud, ProprioState)],
    nfe: usize,
    sched: &DiffusionSchedule,
    rng: &mut RngStream,
) -> Result<ActionChunk> {
    if raw_frames.len() != model.spec.n_obs {
        return Err(Error::Config(format!(
            "sample_actions wants {} frames, got {}",
            model.spec.n_obs,
            raw_frames.len()
        )));
    }
    let cfg = model.decoder.cfg();
    let shape = [cfg.horizon, cfg.action_dim];

    // scene features are timestep-independent: encode once per call
    let mut g = Graph::new(store);
    let mut zs = Vec::with_capacity(raw_frames.len());
    let mut proprios = Vec::with_capacity(raw_frames.len());
    for (cloud, proprio) in raw_frames {
        let ds = fps(cloud, model.spec.fps_points.min(cloud.len()))?;
        zs.push(model.encoder.forward(&mut g, &ds)?);
        proprios.push(ProprioState::new(stats.normalize_state(proprio.values())?)?);
    }
    let proprio_refs: Vec<&ProprioState> = proprios.iter().collect();

    let t_steps = sched.len();
    let mut predictor = |x_t: &Array<f32>, t: usize| -> Result<Array<f32>> {
        let ctx = model.context.fuse(&mut g, &zs, &proprio_refs, t, t_steps)?;
        let xv = g.input(x_t.clone());
        let out = model.decoder.forward(&mut g, xv, ctx)?;
        Ok(g.value(out).clone())
    };
    let normalized = sample_chunk_with(&mut predictor, &shape, nfe, sched, rng)?;

    let mut out = Array::zeros(&shape);
    let mut row = vec![0.0f32; cfg.action_dim];
    for h in 0..cfg.horizon {
        let norm_row: Vec<f32> = (0..cfg.action_dim).map(|j| normalized.at(h, j)).collect();
        stats.denormalize_action(&norm_row, &mut row)?;
        for j in 0..cfg.action_dim {
            *out.at_mut(h, j) = row[j];
        }
    }
    Ok(ActionChunk { actions: out })
}

/// Produces the next action chunk during a rollout.
pub trait Planner {
    fn plan(&mut self, obs: &[(PointCloud, ProprioState)], env_state: &EnvState) -> Result<ActionChunk>;
}

/// The trained policy as a planner (observations only).
pub struct PolicyPlanner<'a> {
    pub store: &'a ParamStore<f32>,
    pub model: &'a PolicyModel,
    pub stats: &'a NormStats,
    pub sched: &'a DiffusionSchedule,
    pub nfe: usize,
    pub rng: RngStream,
}

impl Planner for PolicyPlanner<'_> {
    fn plan(&mut self, obs: &[(PointCloud, ProprioState)], _env: &EnvState) -> Result<ActionChunk> {
        sample_actions(
            self.store,
            self.model,
            self.stats,
            obs,
            self.nfe,
            self.sched,
            &mut self.rng,
        )
    }
}

/// Scripted expert as a planner: simulates itself `horizon` steps ahead on a
/// copy of the true state.
pub struct ExpertPlanner {
    pub horizon: usize,
}

impl Planner for ExpertPlanner {
    fn plan(&mut self, _obs: &[(PointCloud, ProprioState)], env: &EnvState) -> Result<ActionChunk> {
        let mut state = env.clone();
        let mut out = Array::zeros(&[self.horizon, 2]);
        for h in 0..self.horizon {
            let a = scripted_expert(&state);
            *out.at_mut(h, 0) = a[0];
            *out.at_mut(h, 1) = a[1];
            state = env_step(&state, &a)?;
        }
        Ok(ActionChunk { actions: out })
    }
}

/// Receding-horizon episode: observe `n_obs` frames, plan, execute the first
/// `n_action` steps, replan; stops at success or `max_steps`.
pub fn rollout(
    start: EnvState,
    planner: &mut dyn Planner,
    n_obs: usize,
    n_action: usize,
    n_points_raw: usize,
    max_steps: usize,
    obs_rng: &mut RngStream,
) -> Result<EpisodeResult> {
    let mut state = start;
    let mut obs: Vec<(PointCloud, ProprioState)> = Vec::with_capacity(n_obs);
    let first = (
        render_pointcloud(&state, n_points_raw, obs_rng),
        state.proprio(),
    );
    for _ in 0..n_obs {
        obs.push(first.clone());
    }

    let mut steps = 0usize;
    if state.success() {
        return Ok(EpisodeResult {
            success: true,
            steps,
            final_dist: state.distance_to_goal(),
        });
    }
    'episode: while steps < max_steps {
        let chunk = planner.plan(&obs, &state)?;
        let exec = n_action.min(chunk.horizon());
        for h in 0..exec {
            let action = chunk.action(h);
            state = env_step(&state, &action).map_err(|e| Error::Env {
                step: steps,
                msg: e.to_string(),
            })?;
            steps += 1;
            obs.remove(0);
            obs.push((
                render_pointcloud(&state, n_points_raw, obs_rng),
                state.proprio(),
            ));
            if state.success() || steps >= max_steps {
                break 'episode;
            }
        }
    }
    Ok(EpisodeResult {
        success: state.success(),
        steps,
        final_dist: state.distance_to_goal(),
    })
}

/// Evaluation sweep: `episodes` rollouts with per-episode derived streams,
/// run in parallel, aggregated in episode order.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    store: &ParamStore<f32>,
    model: &PolicyModel,
    stats: &NormStats,
    sched: &DiffusionSchedule,
    env: EnvKind,
    nfe: usize,
    episodes: usize,
    n_action: usize,
    n_points_raw: usize,
    max_steps: usize,
    seed: u64,
) -> Result<Vec<EpisodeResult>> {
    let root = RngStream::new(seed);
    (0..episodes)
        .into_par_iter()
        .map(|ep| {
            let mut env_rng = root.substream(ep as u64 * 3);
            let obs_rng = root.substream(ep as u64 * 3 + 1);
            let policy_rng = root.substream(ep as u64 * 3 + 2);
            let start = sample_state(env, &mut env_rng);
            let mut planner = PolicyPlanner {
                store,
                model,
                stats,
                sched,
                nfe,
                rng: policy_rng,
            };
            rollout(
                start,
                &mut planner,
                model.spec.n_obs,
                n_action,
                n_points_raw,
                max_steps,
                &mut obs_rng.clone(),
            )
        })
        .collect()
}

pub fn success_rate(results: &[EpisodeResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().filter(|r| r.success).count() as f64 / results.len() as f64
}
