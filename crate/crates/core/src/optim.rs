//! Adam with decoupled weight decay and the full-batch training loop.

use std::io::Write;
use std::time::{Duration, Instant};

use crate::data::ObservationSet;
use crate::error::{Error, Result};
use crate::model::{BlockTermModel, GradientBundle, TrainScope};

/// Plateau rule used when early stopping is enabled.
pub const PLATEAU_WINDOW: usize = 200;
pub const PLATEAU_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero moments congruent with the given slot sizes.
    pub fn new(config: AdamConfig, slot_sizes: &[usize]) -> Self {
        AdamState {
            config,
            step_count: 0,
            first_moment: slot_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: slot_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    /// One Adam update with bias correction. Weight decay shrinks the
    /// parameter before the Adam delta is applied.
    pub fn apply(&mut self, params: &mut [&mut [f64]], grads: &GradientBundle) -> Result<()> {
        let iteration = self.step_count as usize + 1;
        if params.len() != grads.slots.len() || params.len() != self.first_moment.len() {
            return Err(Error::invalid(format!(
                "{} parameter slots, {} gradient slots, {} moment slots",
                params.len(),
                grads.slots.len(),
                self.first_moment.len()
            )));
        }
        for (s, (p, g)) in params.iter().zip(&grads.slots).enumerate() {
            if p.len() != g.len() || p.len() != self.first_moment[s].len() {
                return Err(Error::invalid(format!("slot {s} sizes disagree")));
            }
            if let Some(k) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Training {
                    iteration,
                    message: format!("non-finite gradient in slot {s} entry {k}"),
                });
            }
        }
        let c = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let decay = 1.0 - c.learning_rate * c.weight_decay;
        for (s, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.first_moment[s], &mut self.second_moment[s]);
            for (((pk, &gk), mk), vk) in p.iter_mut().zip(&grads.slots[s]).zip(m).zip(v) {
                *mk = c.beta1 * *mk + (1.0 - c.beta1) * gk;
                *vk = c.beta2 * *vk + (1.0 - c.beta2) * gk * gk;
                // degenerate betas give a zero correction term; treat as no correction
                let mh = if bc1 > 0.0 { *mk / bc1 } else { *mk };
                let vh = if bc2 > 0.0 { *vk / bc2 } else { *vk };
                *pk = *pk * decay - c.learning_rate * mh / (vh.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::apply`].
pub fn adam_step(state: &mut AdamState, params: &mut [&mut [f64]], grads: &GradientBundle) -> Result<()> {
    state.apply(params, grads)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub adam: AdamConfig,
    pub iterations: usize,
    pub early_stopping: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            adam: AdamConfig::default(),
            iterations: 5000,
            early_stopping: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Loss before each parameter update.
    pub loss_trace: Vec<f64>,
    pub stopped_early: bool,
    pub elapsed: Duration,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("at least one iteration")
    }
}

/// Runs full-batch Adam on `model` in place.
///
/// With [`TrainScope::Full`] every core and every trainable neural parameter
/// moves; when the neural bases carry LoRA adapters only the adapters (and the
/// cores) move, so base weights stay bit-identical. [`TrainScope::CoresOnly`]
/// freezes every basis.
pub fn train(
    model: &mut BlockTermModel,
    obs: &ObservationSet,
    opts: &TrainOptions,
    scope: TrainScope,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    if opts.iterations == 0 {
        return Err(Error::invalid("iterations must be at least 1"));
    }
    if obs.observed_count() == 0 {
        return Err(Error::invalid("observation set is empty"));
    }
    let c = opts.adam;
    if !(c.learning_rate > 0.0) || !(c.weight_decay >= 0.0) {
        return Err(Error::invalid("learning rate must be positive and weight decay nonnegative"));
    }
    let start = Instant::now();
    let sizes: Vec<usize> = model.trainable_slices_mut(scope).iter().map(|s| s.len()).collect();
    let mut state = AdamState::new(c, &sizes);
    let mut trace = Vec::with_capacity(opts.iterations);
    let mut stopped_early = false;
    for k in 1..=opts.iterations {
        let lg = model.loss_and_gradients(obs, scope)?;
        if !lg.loss.is_finite() {
            return Err(Error::Training {
                iteration: k,
                message: format!("loss is {}", lg.loss),
            });
        }
        trace.push(lg.loss);
        if let Some(w) = log.as_deref_mut() {
            writeln!(
                w,
                "{{\"iteration\":{k},\"loss\":{:e},\"elapsed_s\":{:.6}}}",
                lg.loss,
                start.elapsed().as_secs_f64()
            )
            .map_err(|e| Error::io("<train log>", e))?;
        }
        state.apply(&mut model.trainable_slices_mut(scope), &lg.grads)?;
        if opts.early_stopping && plateaued(&trace) {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainReport {
        loss_trace: trace,
        stopped_early,
        elapsed: start.elapsed(),
    })
}

fn plateaued(trace: &[f64]) -> bool {
    if trace.len() <= PLATEAU_WINDOW {
        return false;
    }
    let now = trace[trace.len() - 1];
    let before = trace[trace.len() - 1 - PLATEAU_WINDOW];
    if before <= 0.0 {
        return true;
    }
    (before - now) / before < PLATEAU_TOLERANCE
}
