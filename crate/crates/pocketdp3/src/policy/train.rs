//! Diffusion imitation training: clean-sample objective, AdamW, warmup +
//! cosine learning-rate schedule, periodic rollout evaluation.

use super::data::Dataset;
use super::{evaluate, success_rate, PolicyModel};
use crate::error::{Error, Result};
use crate::numerics::{Array, Graph, ParamStore, RngStream};
use crate::schedule::{add_noise, build_schedule, DiffusionSchedule, ScheduleKind};

use rayon::prelude::*;

/// Samples per gradient-accumulation chunk. Fixed so the reduction order
/// (and therefore every trained bit) is independent of worker count.
const GRAD_CHUNK: usize = 6;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub t_steps: usize,
    pub schedule_kind: ScheduleKind,
    pub nfe: usize,
    pub n_action: usize,
    pub seed: u64,
    /// Rollout evaluation cadence in epochs (0 disables evals).
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub max_steps: usize,
    pub n_points_raw: usize,
    /// Stop once the running top-five success average reaches this value.
    pub early_stop_sr5: Option<f64>,
    /// Exponential moving average of weights, evaluated instead of the raw
    /// parameters when set.
    pub ema_decay: Option<f64>,
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config("batch_size and steps_per_epoch must be positive".into()));
        }
        if self.nfe == 0 || self.nfe > self.t_steps {
            return Err(Error::Config(format!(
                "nfe {} out of range [1, {}]",
                self.nfe, self.t_steps
            )));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

/// Linear warmup to `cfg.lr`, then cosine decay to zero at the final step.
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> f64 {
    let total = cfg.total_steps();
    let warmup = cfg.warmup_steps;
    if warmup > 0 && step < warmup {
        return cfg.lr * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return cfg.lr;
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    let progress = progress.min(1.0);
    0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Decoupled-weight-decay Adam with bias correction.
pub struct AdamW {
    m: Vec<Array<f32>>,
    v: Vec<Array<f32>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(store: &ParamStore<f32>, weight_decay: f64) -> Self {
        AdamW {
            m: store.grad_buffers(),
            v: store.grad_buffers(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update from the gradients currently accumulated in the store.
    pub fn update(&mut self, store: &mut ParamStore<f32>, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let lr32 = lr as f32;
        let eps32 = self.eps as f32;
        let decay = (lr * self.weight_decay) as f32;
        for (pi, p) in store.iter_mut().enumerate() {
            let m = self.m[pi].data_mut();
            let v = self.v[pi].data_mut();
            let val = p.value.data_mut();
            let grad = p.grad.data();
            for i in 0..val.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / bc1 as f32;
                let v_hat = v[i] / bc2 as f32;
                val[i] -= lr32 * (m_hat / (v_hat.sqrt() + eps32)) + decay * val[i];
            }
        }
    }

    /// Moment tensors in parameter order, for checkpointing.
    pub fn state(&self) -> (&[Array<f32>], &[Array<f32>]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, m: Vec<Array<f32>>, v: Vec<Array<f32>>, step: u64) {
        self.m = m;
        self.v = v;
        self.step = step;
    }
}

/// What a finished run reports.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_loss: f32,
    pub sr5: f64,
    pub eval_history: Vec<(usize, f64)>,
    pub epochs_run: usize,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub sched: DiffusionSchedule,
    pub opt: AdamW,
    pub train_rng: RngStream,
    pub global_step: usize,
    pub eval_history: Vec<(usize, f64)>,
}

struct SampleDraw {
    window: usize,
    t: usize,
    eps: Array<f32>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, store: &ParamStore<f32>) -> Result<Self> {
        cfg.validate()?;
        let sched = build_schedule(cfg.t_steps, cfg.schedule_kind)?;
        let opt = AdamW::new(store, cfg.weight_decay);
        let train_rng = RngStream::new(cfg.seed).substream(1);
        Ok(Trainer {
            cfg,
            sched,
            opt,
            train_rng,
            global_step: 0,
            eval_history: Vec::new(),
        })
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        lr_schedule(step, &self.cfg)
    }

    /// One optimizer step over a freshly drawn batch. Returns the batch loss.
    pub fn train_step(
        &mut self,
        store: &mut ParamStore<f32>,
        model: &PolicyModel,
        ds: &Dataset,
    ) -> Result<f32> {
        let cfg = model.decoder.cfg();
        let shape = [cfg.horizon, cfg.action_dim];
        // all randomness drawn up front, single-threaded
        let draws: Vec<SampleDraw> = (0..self.cfg.batch_size)
            .map(|_| {
                let window = self.train_rng.uniform_usize(ds.num_windows());
                let t = self.train_rng.uniform_usize(self.cfg.t_steps);
                let eps = super::sample_noise(&shape, &mut self.train_rng);
                SampleDraw { window, t, eps }
            })
            .collect();

        let t_steps = self.cfg.t_steps;
        let sched = &self.sched;
        let store_ref: &ParamStore<f32> = store;
        let results: Vec<Result<(Vec<Array<f32>>, Vec<f32>)>> = draws
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut sink = store_ref.grad_buffers();
                let mut losses = Vec::with_capacity(chunk.len());
                for draw in chunk {
                    let w = ds.window(draw.window);
                    let a_t = add_noise(&w.chunk, &draw.eps, draw.t, sched)?;
                    let mut g = Graph::new(store_ref);
                    let a_t_var = g.input(a_t);
                    let pred = model.predict(&mut g, &w.frames, a_t_var, draw.t, t_steps)?;
                    let loss = g.mse(pred, &w.chunk)?;
                    losses.push(g.value(loss).data()[0]);
                    g.backward(loss, &mut sink)?;
                }
                Ok((sink, losses))
            })
            .collect();

        let mut total_loss = 0.0f32;
        let mut sample_idx = 0usize;
        for res in results {
            let (sink, losses) = res?;
            for l in losses {
                if !l.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss at step {}, batch element {} (t={})",
                        self.global_step, sample_idx, draws[sample_idx].t
                    )));
                }
                total_loss += l;
                sample_idx += 1;
            }
            store.accumulate_grads(&sink);
        }
        let batch = self.cfg.batch_size as f32;
        for p in store.iter_mut() {
            p.grad.scale(1.0 / batch);
        }
        let lr = self.lr_at(self.global_step);
        self.opt.update(store, lr);
        store.zero_grads();
        self.global_step += 1;
        Ok(total_loss / batch)
    }

    /// Periodic evaluation: `eval_episodes` rollouts on deterministic
    /// per-episode streams. Appends to the history and returns the rate.
    pub fn run_eval(
        &mut self,
        store: &ParamStore<f32>,
        model: &PolicyModel,
        ds: &Dataset,
        epoch: usize,
    ) -> Result<f64> {
        let eval_seed = RngStream::new(self.cfg.seed)
            .substream(2)
            .substream(epoch as u64)
            .state()
            .0;
        let results = evaluate(
            store,
            model,
            &ds.stats,
            &self.sched,
            ds.env,
            self.cfg.nfe,
            self.cfg.eval_episodes,
            self.cfg.n_action,
            self.cfg.n_points_raw,
            self.cfg.max_steps,
            eval_seed,
        )?;
        let sr = success_rate(&results);
        self.eval_history.push((epoch, sr));
        Ok(sr)
    }

    /// Average of the top five evaluation success rates so far.
    pub fn sr5(&self) -> f64 {
        if self.eval_history.is_empty() {
            return 0.0;
        }
        let mut rates: Vec<f64> = self.eval_history.iter().map(|(_, r)| *r).collect();
        rates.sort_by(|a, b| b.partial_cmp(a).expect("finite rates"));
        let k = rates.len().min(5);
        rates[..k].iter().sum::<f64>() / k as f64
    }

    pub fn should_stop_early(&self) -> bool {
        match self.cfg.early_stop_sr5 {
            Some(target) => self.eval_history.len() >= 5 && self.sr5() >= target,
            None => false,
        }
    }
}
