//! Appearance guided sampling: the noise prediction is rectified at every
//! outer timestep so the clean estimate agrees with the known pixels.

use serde::{Deserialize, Serialize};

use crate::diffusion::{lcm_sample, validate_steps, ConsistencyFunction, Denoiser, NoiseSchedule, NoiseSource};
use crate::error::{contract, Result};
use crate::imageio::{Mask, RgbImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceParams {
    pub n_g: usize,
    pub lr: f64,
    pub smooth_l1_beta: f64,
    /// Outer timesteps, strictly decreasing.
    pub steps: Vec<usize>,
}

impl Default for GuidanceParams {
    fn default() -> Self {
        GuidanceParams { n_g: 100, lr: 0.00375, smooth_l1_beta: 1.0, steps: uniform_steps(1000, 8) }
    }
}

impl GuidanceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.smooth_l1_beta > 0.0) {
            return Err(crate::Error::Validation("guidance needs lr > 0 and beta > 0".into()));
        }
        Ok(())
    }
}

/// `[T, T - T/n, ..., T/n]`.
pub fn uniform_steps(t_max: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| t_max - i * t_max / n).collect()
}

/// Known pixels `x_0` on the region `known` (true = known); everything else
/// is to be filled.
#[derive(Debug, Clone)]
pub struct InpaintTask {
    pub width: usize,
    pub height: usize,
    pub known: Vec<f64>,
    pub mask: Mask,
}

impl InpaintTask {
    pub fn new(known: &RgbImage, mask: Mask) -> Result<Self> {
        if !known.same_shape(&mask) {
            return Err(contract("known image and mask differ in shape"));
        }
        let flat = known.to_flat();
        if flat.iter().zip(mask.data.iter().flat_map(|&m| [m; 3])).any(|(v, m)| m && !v.is_finite()) {
            return Err(contract("known pixels must be finite"));
        }
        Ok(InpaintTask { width: known.width, height: known.height, known: flat, mask })
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }

    /// Per-element (channel-expanded) known mask.
    pub fn element_mask(&self) -> Vec<bool> {
        self.mask.data.iter().flat_map(|&m| [m; 3]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothL1 {
    pub loss: f64,
    /// Derivative of `loss` with respect to `a`.
    pub grad: Vec<f64>,
}

pub fn smooth_l1_term(d: f64, beta: f64) -> f64 {
    if d.abs() < beta {
        0.5 * d * d / beta
    } else {
        d.abs() - 0.5 * beta
    }
}

pub fn smooth_l1_slope(d: f64, beta: f64) -> f64 {
    if d.abs() < beta {
        d / beta
    } else {
        d.signum()
    }
}

/// Mean Smooth-L1 between `a` and `b` over the elements where `mask` is set.
pub fn smooth_l1(a: &[f64], b: &[f64], mask: &[bool], beta: f64) -> SmoothL1 {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return SmoothL1 { loss: 0.0, grad: vec![0.0; a.len()] };
    }
    let inv = 1.0 / n as f64;
    let mut loss = 0.0;
    let grad = a
        .iter()
        .zip(b)
        .zip(mask)
        .map(|((x, y), &m)| {
            if !m {
                return 0.0;
            }
            let d = x - y;
            loss += smooth_l1_term(d, beta);
            smooth_l1_slope(d, beta) * inv
        })
        .collect();
    SmoothL1 { loss: loss * inv, grad }
}

fn mean_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum::<f64>() / v.len().max(1) as f64
}

/// Clean estimate from a noise prediction via the consistency function.
pub fn estimate_from_eps(x_t: &[f64], eps: &[f64], t: usize, cf: &ConsistencyFunction, schedule: &NoiseSchedule) -> Vec<f64> {
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    let (cs, co) = (cf.c_skip(t), cf.c_out(t));
    x_t.iter().zip(eps).map(|(x, e)| cs * x + co * (x - s * e) / a).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rectified {
    pub eps: Vec<f64>,
    /// Masked loss before the first and after every accepted iteration.
    pub losses: Vec<f64>,
}

/// Inner loop of the guided sampler. Each iteration steps `eps` along the
/// negative loss gradient with the adaptive size `lr * mean|eps| / mean|g|`;
/// a step that would raise the loss is halved until it does not.
pub fn rectify_epsilon(
    eps: &[f64],
    x_t: &[f64],
    t: usize,
    task: &InpaintTask,
    cf: &ConsistencyFunction,
    schedule: &NoiseSchedule,
    params: &GuidanceParams,
) -> Result<Rectified> {
    if t < cf.delta || t > schedule.steps {
        return Err(contract(format!("rectification at t={t} outside [{}, {}]", cf.delta, schedule.steps)));
    }
    if eps.len() != task.len() || x_t.len() != task.len() {
        return Err(contract("noise, state and task sizes differ"));
    }
    let mask = task.element_mask();
    let beta = params.smooth_l1_beta;
    // d x0 / d eps, elementwise
    let coef = -cf.c_out(t) * schedule.sigma(t) / schedule.alpha(t);
    let mut eps = eps.to_vec();
    let mut current = smooth_l1(&estimate_from_eps(x_t, &eps, t, cf, schedule), &task.known, &mask, beta);
    let mut losses = vec![current.loss];
    for _ in 0..params.n_g {
        let g: Vec<f64> = current.grad.iter().map(|d| -coef * d).collect();
        let mg = mean_abs(&g);
        if mg == 0.0 || !mg.is_finite() {
            break;
        }
        let mut step = params.lr * mean_abs(&eps) / mg;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = eps.iter().zip(&g).map(|(e, gi)| e + step * gi).collect();
            let next = smooth_l1(&estimate_from_eps(x_t, &trial, t, cf, schedule), &task.known, &mask, beta);
            if next.loss < current.loss {
                accepted = Some((trial, next));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, next)) = accepted else { break };
        eps = trial;
        current = next;
        losses.push(current.loss);
    }
    Ok(Rectified { eps, losses })
}

/// Full guided sampler. Between outer steps the state moves with the
/// deterministic DDPM mean update
/// `x_s = (x_t - (1 - a) / sigma_t * eps) / sqrt(a)`, `a = alpha_bar_t / alpha_bar_s`;
/// after the last step it lands on `alpha_bar = 1`.
pub fn guided_sample(
    task: &InpaintTask,
    model: &dyn Denoiser,
    cf: &ConsistencyFunction,
    schedule: &NoiseSchedule,
    params: &GuidanceParams,
    noise: &mut NoiseSource,
) -> Result<Vec<f64>> {
    params.validate()?;
    validate_steps(&params.steps, cf, schedule)?;
    if !task.mask.any() {
        return lcm_sample(model, cf, schedule, &params.steps, task.len(), noise);
    }
    let mut x = noise.normal(task.len());
    for (i, &t) in params.steps.iter().enumerate() {
        let eps = model.predict_noise(&x, t, schedule);
        let eps = rectify_epsilon(&eps, &x, t, task, cf, schedule, params)?.eps;
        let ab_t = schedule.alpha_bar(t);
        let ab_s = params.steps.get(i + 1).map_or(1.0, |&s| schedule.alpha_bar(s));
        let a = ab_t / ab_s;
        let k = (1.0 - a) / (1.0 - ab_t).sqrt();
        let inv = 1.0 / a.sqrt();
        x = x.iter().zip(&eps).map(|(xi, e)| inv * (xi - k * e)).collect();
    }
    Ok(x)
}
