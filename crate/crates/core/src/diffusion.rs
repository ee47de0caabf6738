//! Noise schedules, the consistency function and a few-step consistency
//! sampler, all in pixel space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Cosine,
    Linear,
}

/// Discrete variance-preserving schedule over `t = 0..=T` with `alpha_bar_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub delta: usize,
    alpha_bar: Vec<f64>,
}

const COSINE_S: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, steps: usize, delta: usize) -> Result<Self> {
        if steps < 2 || delta < 1 || delta >= steps {
            return Err(Error::Validation(format!("schedule needs T >= 2 and 1 <= delta < T, got T={steps}, delta={delta}")));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Cosine => {
                let f = |t: usize| {
                    let x = (t as f64 / steps as f64 + COSINE_S) / (1.0 + COSINE_S) * std::f64::consts::FRAC_PI_2;
                    x.cos().powi(2)
                };
                (1..=steps).map(|t| (1.0 - f(t) / f(t - 1)).min(MAX_BETA)).collect()
            }
            ScheduleKind::Linear => {
                let (b0, b1) = (1e-4, 0.02);
                (1..=steps).map(|t| b0 + (b1 - b0) * (t - 1) as f64 / (steps - 1) as f64).collect()
            }
        };
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        for b in betas {
            let prev = *alpha_bar.last().expect("non-empty");
            alpha_bar.push(prev * (1.0 - b));
        }
        Ok(NoiseSchedule { kind, steps, delta, alpha_bar })
    }

    pub fn cosine() -> Self {
        Self::new(ScheduleKind::Cosine, 1000, 1).expect("default schedule is valid")
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Per-step `alpha_t = alpha_bar_t / alpha_bar_{t-1}`.
    pub fn alpha_step(&self, t: usize) -> f64 {
        self.alpha_bar[t] / self.alpha_bar[t - 1]
    }

    /// `alpha(t) = sqrt(alpha_bar_t)`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    /// `sigma(t) = sqrt(1 - alpha_bar_t)`.
    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps {
            return Err(contract(format!("timestep {t} outside [0, {}]", self.steps)));
        }
        Ok(())
    }
}

/// `c_skip(t) = s^2 / (u^2 + s^2)` and `c_out(t) = u / sqrt(u^2 + s^2)` with
/// `u = lambda (t - delta)` and `s = sigma_data`, so `c_skip(delta) = 1`
/// and `c_out(delta) = 0` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyFunction {
    pub sigma_data: f64,
    pub lambda: f64,
    pub delta: usize,
}

impl Default for ConsistencyFunction {
    fn default() -> Self {
        ConsistencyFunction { sigma_data: 0.5, lambda: 10.0, delta: 1 }
    }
}

impl ConsistencyFunction {
    pub fn for_schedule(schedule: &NoiseSchedule) -> Self {
        ConsistencyFunction { delta: schedule.delta, ..Default::default() }
    }

    fn scaled(&self, t: usize) -> f64 {
        self.lambda * (t as f64 - self.delta as f64)
    }

    pub fn c_skip(&self, t: usize) -> f64 {
        let u = self.scaled(t);
        let s2 = self.sigma_data * self.sigma_data;
        s2 / (u * u + s2)
    }

    pub fn c_out(&self, t: usize) -> f64 {
        let u = self.scaled(t);
        u / (u * u + self.sigma_data * self.sigma_data).sqrt()
    }
}

/// Noise-prediction model `eps(x_t, t)` on flattened images.
pub trait Denoiser: Sync {
    fn predict_noise(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Vec<f64>;

    /// `(x_t - sigma eps) / alpha`; models with a closed form may override.
    fn predict_x0(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Vec<f64> {
        let eps = self.predict_noise(x_t, t, schedule);
        x0_from_eps(x_t, &eps, t, schedule)
    }
}

pub fn x0_from_eps(x_t: &[f64], eps: &[f64], t: usize, schedule: &NoiseSchedule) -> Vec<f64> {
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    x_t.iter().zip(eps).map(|(x, e)| (x - s * e) / a).collect()
}

/// Seeded standard-normal source.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        NoiseSource { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn normal(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(&mut self.rng)).collect()
    }
}

/// `x_t = alpha(t) x_0 + sigma(t) noise`.
pub fn add_noise(x0: &[f64], t: usize, noise: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    if x0.len() != noise.len() {
        return Err(contract("image and noise lengths differ"));
    }
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    Ok(x0.iter().zip(noise).map(|(x, n)| a * x + s * n).collect())
}

/// `c_skip x_t + c_out x0_hat`, given the model's clean estimate.
pub fn consistency_combine(x_t: &[f64], x0_hat: &[f64], t: usize, cf: &ConsistencyFunction) -> Vec<f64> {
    let (cs, co) = (cf.c_skip(t), cf.c_out(t));
    if co == 0.0 {
        return x_t.to_vec();
    }
    x_t.iter().zip(x0_hat).map(|(x, m)| cs * x + co * m).collect()
}

pub fn consistency_estimate(
    x_t: &[f64],
    model: &dyn Denoiser,
    t: usize,
    cf: &ConsistencyFunction,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if t < cf.delta || t > schedule.steps {
        return Err(contract(format!("consistency function evaluated at t={t} outside [{}, {}]", cf.delta, schedule.steps)));
    }
    if cf.c_out(t) == 0.0 {
        return Ok(x_t.to_vec());
    }
    let x0 = model.predict_x0(x_t, t, schedule);
    Ok(consistency_combine(x_t, &x0, t, cf))
}

pub const DEFAULT_LCM_STEPS: [usize; 4] = [999, 759, 499, 259];

pub fn validate_steps(steps: &[usize], cf: &ConsistencyFunction, schedule: &NoiseSchedule) -> Result<()> {
    if steps.is_empty() {
        return Err(contract("sampling needs at least one timestep"));
    }
    if steps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(contract(format!("timesteps {steps:?} are not strictly decreasing")));
    }
    if steps[0] > schedule.steps || *steps.last().expect("non-empty") < cf.delta {
        return Err(contract(format!("timesteps {steps:?} leave [{}, {}]", cf.delta, schedule.steps)));
    }
    Ok(())
}

/// Multistep consistency sampling: estimate, re-noise to the next step,
/// repeat; the last estimate is returned.
pub fn lcm_sample(
    model: &dyn Denoiser,
    cf: &ConsistencyFunction,
    schedule: &NoiseSchedule,
    steps: &[usize],
    len: usize,
    noise: &mut NoiseSource,
) -> Result<Vec<f64>> {
    validate_steps(steps, cf, schedule)?;
    let mut x = noise.normal(len);
    let mut x0 = Vec::new();
    for (i, &t) in steps.iter().enumerate() {
        x0 = consistency_estimate(&x, model, t, cf, schedule)?;
        if let Some(&next) = steps.get(i + 1) {
            x = add_noise(&x0, next, &noise.normal(len), schedule)?;
        }
    }
    Ok(x0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = NoiseSchedule::cosine();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(s.alpha_bar(1000) < 1e-6);
        for t in 1..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!((s.alpha(t).powi(2) + s.sigma(t).powi(2) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_condition() {
        let cf = ConsistencyFunction::default();
        assert_eq!(cf.c_skip(1), 1.0);
        assert_eq!(cf.c_out(1), 0.0);
        assert!(cf.c_skip(1000) < 1e-6);
        assert!((cf.c_out(1000) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn linear_schedule_is_valid() {
        let s = NoiseSchedule::new(ScheduleKind::Linear, 1000, 1).unwrap();
        assert!(s.alpha_bar(1000) < 1e-4);
        assert!(NoiseSchedule::new(ScheduleKind::Linear, 1000, 0).is_err());
    }

    #[test]
    fn steps_validation() {
        let s = NoiseSchedule::cosine();
        let cf = ConsistencyFunction::default();
        assert!(validate_steps(&[], &cf, &s).is_err());
        assert!(validate_steps(&[500, 500], &cf, &s).is_err());
        assert!(validate_steps(&[1001], &cf, &s).is_err());
        assert!(validate_steps(&[999, 1], &cf, &s).is_ok());
    }
}
