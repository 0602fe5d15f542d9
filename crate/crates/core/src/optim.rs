//! AdamW, linear-decay scheduling, schedule-free AdamW, and gradient clipping.
//!
//! Parameters and gradients are handled as lists of flat tensors so the
//! optimizers stay independent of the encoder layout.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Tensor};
use crate::error::{Error, Result};

/// A list of flat parameter (or gradient) tensors.
pub type Tensors = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scheduler {
    /// Linear warmup to the peak, then linear decay to zero at the last step.
    LinearDecay { warmup_frac: f64 },
    /// Schedule-free AdamW with a linear learning-rate warmup.
    ScheduleFree { warmup_frac: f64 },
}

impl Scheduler {
    pub fn warmup_frac(&self) -> f64 {
        match *self {
            Scheduler::LinearDecay { warmup_frac } | Scheduler::ScheduleFree { warmup_frac } => warmup_frac,
        }
    }
}

/// Gradient clipping policy. `Auto` clips at 2.0 under linear decay and is
/// off under schedule-free training.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Clipping {
    #[default]
    Auto,
    Off,
    MaxNorm(f64),
}

impl Serialize for Clipping {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Clipping::Auto => s.serialize_str("auto"),
            Clipping::Off => s.serialize_str("off"),
            Clipping::MaxNorm(n) => s.serialize_f64(*n),
        }
    }
}

impl<'de> Deserialize<'de> for Clipping {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Name(String),
            Norm(f64),
        }
        match Repr::deserialize(d)? {
            Repr::Name(s) if s == "auto" => Ok(Clipping::Auto),
            Repr::Name(s) if s == "off" => Ok(Clipping::Off),
            Repr::Name(s) => Err(serde::de::Error::custom(format!(
                "gradient_clipping must be \"auto\", \"off\" or a number, got {s:?}"
            ))),
            Repr::Norm(n) => Ok(Clipping::MaxNorm(n)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub scheduler: Scheduler,
    pub gradient_clipping: Clipping,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            scheduler: Scheduler::ScheduleFree { warmup_frac: 0.05 },
            gradient_clipping: Clipping::Auto,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::arg(format!("lr must be > 0, got {}", self.lr)));
        }
        let w = self.scheduler.warmup_frac();
        if !(0.0..1.0).contains(&w) {
            return Err(Error::arg(format!("warmup_frac must be in [0, 1), got {w}")));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::arg("betas must be in [0, 1)"));
        }
        if let Clipping::MaxNorm(n) = self.gradient_clipping {
            if !(n > 0.0) {
                return Err(Error::arg(format!("clip max norm must be > 0, got {n}")));
            }
        }
        Ok(())
    }

    /// Effective clipping threshold.
    pub fn clip_max_norm(&self) -> Option<f64> {
        match (self.gradient_clipping, self.scheduler) {
            (Clipping::Off, _) => None,
            (Clipping::MaxNorm(n), _) => Some(n),
            (Clipping::Auto, Scheduler::LinearDecay { .. }) => Some(2.0),
            (Clipping::Auto, Scheduler::ScheduleFree { .. }) => None,
        }
    }

    pub fn warmup_steps(&self, total_steps: u64) -> u64 {
        let raw = (self.scheduler.warmup_frac() * total_steps as f64).round() as u64;
        match self.scheduler {
            Scheduler::LinearDecay { .. } => raw.max(1),
            Scheduler::ScheduleFree { .. } => raw,
        }
    }
}

/// Learning rate at `step` for linear warmup then linear decay to zero.
pub fn linear_decay_lr(step: u64, total: u64, warmup_frac: f64, lr_max: f64) -> Result<f64> {
    if step > total {
        return Err(Error::arg(format!("step {step} exceeds total {total}")));
    }
    let warmup = ((warmup_frac * total as f64).round() as u64).max(1);
    if step < warmup {
        return Ok(lr_max * step as f64 / warmup as f64);
    }
    if total <= warmup {
        return Ok(if step == total { 0.0 } else { lr_max });
    }
    Ok(lr_max * (total - step) as f64 / (total - warmup) as f64)
}

/// Moment accumulators and iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub m: Tensors,
    pub v: Tensors,
    /// Schedule-free base iterate (`None` for plain AdamW).
    pub z: Option<Tensors>,
    /// Schedule-free averaged iterate, the one used for evaluation.
    pub x: Option<Tensors>,
}

fn zeros_like(t: &[Vec<f64>]) -> Tensors {
    t.iter().map(|v| vec![0.0; v.len()]).collect()
}

fn check_shapes(a: &[Vec<f64>], b: &[Vec<f64>], what: &str) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::arg(format!("{what}: tensor shapes do not match")));
    }
    Ok(())
}

impl OptimState {
    pub fn adamw(params: &[Vec<f64>]) -> Self {
        Self {
            step: 0,
            m: zeros_like(params),
            v: zeros_like(params),
            z: None,
            x: None,
        }
    }

    pub fn schedule_free(params: &[Vec<f64>]) -> Self {
        Self {
            step: 0,
            m: Vec::new(),
            v: zeros_like(params),
            z: Some(params.to_vec()),
            x: Some(params.to_vec()),
        }
    }

    /// Writes every accumulator under `opt.m.<name>`, `opt.v.<name>`,
    /// `opt.z.<name>`, `opt.x.<name>`.
    pub fn write_tensors(&self, names: &[&str], ckpt: &mut Checkpoint) {
        let groups = [
            ("m", Some(&self.m)),
            ("v", Some(&self.v)),
            ("z", self.z.as_ref()),
            ("x", self.x.as_ref()),
        ];
        for (prefix, tensors) in groups {
            let Some(tensors) = tensors else { continue };
            for (name, t) in names.iter().zip(tensors) {
                ckpt.insert(
                    format!("opt.{prefix}.{name}"),
                    Tensor::from_f64(vec![t.len()], t).expect("1-d shape"),
                );
            }
        }
    }

    /// Restores state written by [`write_tensors`](Self::write_tensors).
    pub fn read_tensors(names: &[&str], ckpt: &Checkpoint) -> Result<Self> {
        let group = |prefix: &str| -> Option<Result<Tensors>> {
            let first = format!("opt.{prefix}.{}", names.first()?);
            ckpt.get(&first)?;
            Some(
                names
                    .iter()
                    .map(|n| {
                        let key = format!("opt.{prefix}.{n}");
                        ckpt.get(&key)
                            .map(Tensor::to_f64)
                            .ok_or_else(|| Error::format(key, "missing optimizer tensor"))
                    })
                    .collect(),
            )
        };
        Ok(Self {
            step: ckpt.meta.step,
            m: group("m").transpose()?.unwrap_or_default(),
            v: group("v").transpose()?.unwrap_or_default(),
            z: group("z").transpose()?,
            x: group("x").transpose()?,
        })
    }
}

/// One bias-corrected AdamW update with decoupled weight decay.
pub fn adamw_step(
    params: &mut [Vec<f64>],
    grads: &[Vec<f64>],
    state: &mut OptimState,
    cfg: &OptimConfig,
    lr: f64,
) -> Result<()> {
    check_shapes(params, grads, "adamw_step")?;
    check_shapes(params, &state.m, "adamw_step state")?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - lr * cfg.weight_decay;
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((pi, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *pi = *pi * decay - lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// The point at which schedule-free gradients are evaluated:
/// `y = (1 − β1)·z + β1·x`.
pub fn schedulefree_gradient_point(state: &OptimState, cfg: &OptimConfig) -> Result<Tensors> {
    let (Some(z), Some(x)) = (&state.z, &state.x) else {
        return Err(Error::arg("optimizer state has no schedule-free iterates"));
    };
    Ok(z.iter()
        .zip(x)
        .map(|(zt, xt)| {
            zt.iter()
                .zip(xt)
                .map(|(zi, xi)| (1.0 - cfg.beta1) * zi + cfg.beta1 * xi)
                .collect()
        })
        .collect())
}

/// One schedule-free AdamW update.
///
/// `grads_at_y` must be evaluated at [`schedulefree_gradient_point`]. The
/// base iterate `z` takes an Adam-preconditioned step (with weight decay
/// applied at `y`); the average `x` tracks `z` during warmup and afterwards
/// becomes the uniform mean of all post-warmup `z` iterates. Returns the
/// learning rate used.
pub fn schedulefree_adamw_step(
    grads_at_y: &[Vec<f64>],
    state: &mut OptimState,
    cfg: &OptimConfig,
    warmup_steps: u64,
) -> Result<f64> {
    let y = schedulefree_gradient_point(state, cfg)?;
    check_shapes(&y, grads_at_y, "schedulefree_adamw_step")?;
    check_shapes(&y, &state.v, "schedulefree_adamw_step state")?;
    state.step += 1;
    let t = state.step;
    let lr = if warmup_steps > 0 && t <= warmup_steps {
        cfg.lr * t as f64 / warmup_steps as f64
    } else {
        cfg.lr
    };
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let z = state.z.as_mut().expect("checked above");
    for (((zt, g), v), yt) in z.iter_mut().zip(grads_at_y).zip(&mut state.v).zip(&y) {
        for (((zi, &gi), vi), &yi) in zt.iter_mut().zip(g).zip(v.iter_mut()).zip(yt) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let denom = (*vi / bc2).sqrt() + cfg.eps;
            *zi -= lr * (gi / denom + cfg.weight_decay * yi);
        }
    }
    let x = state.x.as_mut().expect("checked above");
    let c = if t <= warmup_steps {
        1.0
    } else {
        1.0 / (t - warmup_steps) as f64
    };
    for (xt, zt) in x.iter_mut().zip(z.iter()) {
        for (xi, &zi) in xt.iter_mut().zip(zt) {
            *xi = if c == 1.0 { zi } else { *xi + c * (zi - *xi) };
        }
    }
    Ok(lr)
}

pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
pub fn clip_gradients(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= scale);
    }
    norm
}

/// AdamW or schedule-free AdamW behind one interface.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimConfig,
    total_steps: u64,
    state: OptimState,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig, total_steps: u64, params: &[Vec<f64>]) -> Result<Self> {
        cfg.validate()?;
        let state = match cfg.scheduler {
            Scheduler::LinearDecay { .. } => OptimState::adamw(params),
            Scheduler::ScheduleFree { .. } => OptimState::schedule_free(params),
        };
        Ok(Self {
            cfg,
            total_steps,
            state,
        })
    }

    pub fn state(&self) -> &OptimState {
        &self.state
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    /// Parameters at which the next gradient must be computed.
    pub fn gradient_point(&self, params: &[Vec<f64>]) -> Result<Tensors> {
        match self.cfg.scheduler {
            Scheduler::LinearDecay { .. } => Ok(params.to_vec()),
            Scheduler::ScheduleFree { .. } => schedulefree_gradient_point(&self.state, &self.cfg),
        }
    }

    /// Clips (if configured) and applies `grads`. On return `params` holds the
    /// evaluation parameters. Returns the learning rate used.
    pub fn step(&mut self, params: &mut [Vec<f64>], mut grads: Tensors) -> Result<f64> {
        if let Some(max) = self.cfg.clip_max_norm() {
            clip_gradients(&mut grads, max);
        }
        match self.cfg.scheduler {
            Scheduler::LinearDecay { warmup_frac } => {
                let step = self.state.step.min(self.total_steps);
                let lr = linear_decay_lr(step, self.total_steps, warmup_frac, self.cfg.lr)?;
                adamw_step(params, &grads, &mut self.state, &self.cfg, lr)?;
                Ok(lr)
            }
            Scheduler::ScheduleFree { .. } => {
                let warmup = self.cfg.warmup_steps(self.total_steps);
                let lr = schedulefree_adamw_step(&grads, &mut self.state, &self.cfg, warmup)?;
                let x = self.state.x.as_ref().expect("schedule-free state");
                check_shapes(params, x, "optimizer step")?;
                params.iter_mut().zip(x).for_each(|(p, xt)| p.copy_from_slice(xt));
                Ok(lr)
            }
        }
    }
}
