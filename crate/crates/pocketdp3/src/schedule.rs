//! DDPM forward corruption and deterministic DDIM reverse stepping.
//!
//! The schedule tables are computed and stored in f64; array operations are
//! generic so the f64 oracle tests exercise the same code the f32 training
//! path uses.

use crate::error::{Error, Result};
use crate::numerics::{Array, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Cosine,
    Linear,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(ScheduleKind::Cosine),
            "linear" => Ok(ScheduleKind::Linear),
            other => Err(Error::Config(format!("unknown schedule kind '{other}'"))),
        }
    }
}

/// Noise schedule tables over `T` training timesteps, indexed 0..T.
#[derive(Clone, Debug)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

const LINEAR_BETA_START: f64 = 1e-4;
const LINEAR_BETA_END: f64 = 0.02;
const COSINE_S: f64 = 0.008;
const BETA_MAX: f64 = 0.999;

/// Build a schedule of the given kind. The cosine kind follows the
/// squared-cosine alpha-bar curve with betas clipped to `<= 0.999`.
pub fn build_schedule(t_steps: usize, kind: ScheduleKind) -> Result<DiffusionSchedule> {
    if t_steps == 0 {
        return Err(Error::Config("schedule needs T >= 1".into()));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => (0..t_steps)
            .map(|i| {
                if t_steps == 1 {
                    LINEAR_BETA_START
                } else {
                    LINEAR_BETA_START
                        + (LINEAR_BETA_END - LINEAR_BETA_START) * i as f64 / (t_steps - 1) as f64
                }
            })
            .collect(),
        ScheduleKind::Cosine => {
            let f = |u: f64| {
                let x = (u + COSINE_S) / (1.0 + COSINE_S) * std::f64::consts::FRAC_PI_2;
                x.cos().powi(2)
            };
            let f0 = f(0.0);
            let mut prev_bar = 1.0;
            (0..t_steps)
                .map(|i| {
                    let bar = f((i + 1) as f64 / t_steps as f64) / f0;
                    let beta = (1.0 - bar / prev_bar).clamp(1e-8, BETA_MAX);
                    prev_bar *= 1.0 - beta;
                    beta
                })
                .collect()
        }
    };
    DiffusionSchedule::from_betas(betas)
}

impl DiffusionSchedule {
    /// Build tables from explicit per-step betas.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs T >= 1".into()));
        }
        if betas.iter().any(|&b| !(0.0..1.0).contains(&b) || b == 0.0) {
            return Err(Error::Config("betas must lie in (0, 1)".into()));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for &a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(DiffusionSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.len() {
            return Err(Error::Config(format!(
                "timestep {t} out of range [0, {})",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Forward corruption at timestep `t` through the closed-form marginal:
/// `sqrt(abar_t) * a0 + sqrt(1 - abar_t) * eps`.
pub fn add_noise<T: Scalar>(
    a0: &Array<T>,
    eps: &Array<T>,
    t: usize,
    sched: &DiffusionSchedule,
) -> Result<Array<T>> {
    sched.check_t(t)?;
    let bar = sched.alpha_bar(t);
    let ca = T::from_f64(bar.sqrt());
    let ce = T::from_f64((1.0 - bar).sqrt());
    a0.zip_map(eps, |a, e| ca * a + ce * e)
}

/// One deterministic DDIM transition under the clean-sample
/// parameterization. `t_prev = None` targets the clean sample (the implied
/// alpha-bar becomes 1 and the step returns `x0_hat` exactly).
pub fn ddim_step<T: Scalar>(
    x_t: &Array<T>,
    x0_hat: &Array<T>,
    t: usize,
    t_prev: Option<usize>,
    sched: &DiffusionSchedule,
) -> Result<Array<T>> {
    sched.check_t(t)?;
    if let Some(tp) = t_prev {
        if tp >= t {
            return Err(Error::Config(format!(
                "ddim_step wants t_prev < t, got {tp} >= {t}"
            )));
        }
    }
    let bar_t = sched.alpha_bar(t);
    let bar_prev = match t_prev {
        Some(tp) => sched.alpha_bar(tp),
        None => 1.0,
    };
    // implied noise, then re-noise x0_hat to the previous level
    let inv_sigma_t = 1.0 / (1.0 - bar_t).sqrt();
    let sqrt_bar_t = bar_t.sqrt();
    let sqrt_bar_prev = bar_prev.sqrt();
    let sigma_prev = (1.0 - bar_prev).sqrt();

    let c_x0 = T::from_f64(sqrt_bar_prev - sigma_prev * inv_sigma_t * sqrt_bar_t);
    let c_xt = T::from_f64(sigma_prev * inv_sigma_t);
    x0_hat.zip_map(x_t, |x0, xt| c_x0 * x0 + c_xt * xt)
}

/// Strictly decreasing inference timesteps; transitions run between
/// consecutive entries and the final transition targets the clean sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimestepPlan {
    steps: Vec<usize>,
}

impl TimestepPlan {
    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn nfe(&self) -> usize {
        self.steps.len()
    }

    /// (t, t_prev) pairs in execution order; the last pair has `t_prev = None`.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, Option<usize>)> + '_ {
        (0..self.steps.len()).map(|i| (self.steps[i], self.steps.get(i + 1).copied()))
    }
}

/// Evenly spaced trailing plan: starts at `T - 1`, takes `nfe` strictly
/// decreasing steps, final transition targets the clean sample.
pub fn make_plan(nfe: usize, t_steps: usize) -> Result<TimestepPlan> {
    if nfe == 0 || nfe > t_steps {
        return Err(Error::Config(format!(
            "nfe {nfe} out of range [1, {t_steps}]"
        )));
    }
    let steps: Vec<usize> = (0..nfe)
        .map(|i| (nfe - i) * t_steps / nfe - 1)
        .collect();
    debug_assert_eq!(steps[0], t_steps - 1);
    debug_assert!(steps.windows(2).all(|w| w[0] > w[1]));
    Ok(TimestepPlan { steps })
}
