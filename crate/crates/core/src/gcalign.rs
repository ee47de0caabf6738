//! Global consistency alignment: a batch of views is re-noised, denoised,
//! blended with exposure-balanced renders, and the blended targets are fed
//! back into the field's surfel colors.

use std::collections::HashMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::diffusion::{add_noise, consistency_estimate, ConsistencyFunction, Denoiser, NoiseSchedule, NoiseSource};
use crate::error::{contract, Result};
use crate::imageio::{Mask, RgbImage};
use crate::par;
use crate::scene::{CameraIntrinsics, CameraPose};
use crate::splatter::{prepare, render_bins, RenderOutput};
use crate::surfel::GaussianField;
use crate::Rgb;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GcaParams {
    /// `T_1` is the first timestep with `sigma / alpha` at least this ratio.
    pub t1_sigma_ratio: f64,
    pub w_start: f64,
    pub w_end: f64,
    /// Number of alignment timesteps, evenly spaced from `T_1` down.
    pub steps: usize,
    pub refine_iters: usize,
    pub color_lr: f64,
    /// Pixels below this accumulated alpha do not drive color refinement.
    pub min_alpha: f64,
}

impl Default for GcaParams {
    fn default() -> Self {
        GcaParams { t1_sigma_ratio: 0.35, w_start: 0.2, w_end: 0.8, steps: 4, refine_iters: 3, color_lr: 1.0, min_alpha: 0.5 }
    }
}

impl GcaParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.t1_sigma_ratio > 0.0
            && (0.0..=1.0).contains(&self.w_start)
            && (0.0..=1.0).contains(&self.w_end)
            && self.steps >= 1
            && self.color_lr > 0.0
            && (0.0..1.0).contains(&self.min_alpha);
        if !ok {
            return Err(crate::Error::Validation(format!("invalid alignment parameters {self:?}")));
        }
        Ok(())
    }

    pub fn t1(&self, schedule: &NoiseSchedule) -> usize {
        (schedule.delta..=schedule.steps)
            .find(|&t| schedule.sigma(t) / schedule.alpha(t) >= self.t1_sigma_ratio)
            .unwrap_or(schedule.steps)
    }

    pub fn timesteps(&self, schedule: &NoiseSchedule) -> Vec<usize> {
        let t1 = self.t1(schedule);
        let mut out: Vec<usize> = (0..self.steps).map(|i| (t1 - i * t1 / self.steps).max(schedule.delta)).collect();
        out.dedup();
        out
    }

    /// Linear ramp from `w_start` to `w_end` over the alignment steps.
    pub fn weight(&self, i: usize, n: usize) -> f64 {
        if n <= 1 {
            return self.w_start;
        }
        self.w_start + (self.w_end - self.w_start) * i as f64 / (n - 1) as f64
    }
}

/// Per-channel standard deviation over the valid pixels, averaged over
/// channels.
pub fn masked_std(x: &[f64], valid: &Mask) -> f64 {
    let n = valid.count();
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for c in 0..3 {
        let vals = valid.data.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| x[3 * i + c]);
        let mean = vals.clone().sum::<f64>() / n as f64;
        let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        total += var.sqrt();
    }
    total / 3.0
}

/// `gamma = std(x_tilde) / std(x_prime)`, or 1 when the render is flat.
pub fn exposure_gain(x_prime: &[f64], x_tilde: &[f64], valid: &Mask) -> f64 {
    let sp = masked_std(x_prime, valid);
    if sp == 0.0 {
        return 1.0;
    }
    masked_std(x_tilde, valid) / sp
}

/// `x_bar = w gamma x_prime + (1 - w) x_tilde`.
pub fn blend_with_gain(x_prime: &[f64], x_tilde: &[f64], w: f64, gamma: f64) -> Vec<f64> {
    x_prime.iter().zip(x_tilde).map(|(p, t)| w * gamma * p + (1.0 - w) * t).collect()
}

pub fn blend_estimate(x_prime: &[f64], x_tilde: &[f64], w: f64, valid: &Mask) -> Result<Vec<f64>> {
    if x_prime.len() != x_tilde.len() || x_prime.len() != 3 * valid.len() {
        return Err(contract("blend inputs differ in size"));
    }
    Ok(blend_with_gain(x_prime, x_tilde, w, exposure_gain(x_prime, x_tilde, valid)))
}

/// One view of an alignment batch: its pose, the pixels with mesh
/// geometry, and the denoiser conditioned on that view.
#[derive(Clone, Copy)]
pub struct GcaView<'a> {
    pub index: usize,
    pub pose: &'a CameraPose,
    pub valid: &'a Mask,
    pub model: &'a dyn Denoiser,
}

fn render_view(field: &GaussianField, pose: &CameraPose, k: &CameraIntrinsics) -> RenderOutput {
    render_bins(&prepare(field, pose, k), [0.0; 3])
}

/// Move every surfel color toward the weighted mean residual of the pixels
/// it contributes to: `c += lr * sum(a r) / sum(a)` with `a = w / alpha` the
/// surfel's share of the pixel's foreground color.
pub fn refine_colors(
    field: &mut GaussianField,
    poses: &[&CameraPose],
    targets: &[RgbImage],
    k: &CameraIntrinsics,
    params: &GcaParams,
) -> Result<()> {
    if poses.len() != targets.len() {
        return Err(contract("one target per view is required"));
    }
    if targets.iter().any(|t| (t.width, t.height) != (k.width, k.height)) {
        return Err(contract("targets must match the render resolution"));
    }
    for _ in 0..params.refine_iters {
        let mut num = vec![[0.0; 3]; field.len()];
        let mut den = vec![0.0; field.len()];
        for (pose, target) in poses.iter().zip(targets) {
            let bins = prepare(field, pose, k);
            let out = render_bins(&bins, [0.0; 3]);
            let fg = out.foreground();
            let per_tile = par::map_range(bins.tile_count(), |t| {
                let mut acc: HashMap<u32, (Rgb, f64)> = HashMap::new();
                bins.composite_tile(t, |c, _| {
                    let a = out.alpha.data[c.pixel];
                    if a < params.min_alpha {
                        return;
                    }
                    let share = c.weight / a;
                    let (tg, f) = (&target.data[c.pixel], &fg.data[c.pixel]);
                    let e = acc.entry(c.surfel).or_insert(([0.0; 3], 0.0));
                    for ch in 0..3 {
                        e.0[ch] += share * (tg[ch] - f[ch]);
                    }
                    e.1 += share;
                });
                let mut v: Vec<_> = acc.into_iter().collect();
                v.sort_unstable_by_key(|(s, _)| *s);
                v
            });
            for (s, (n, d)) in per_tile.into_iter().flatten() {
                let i = s as usize;
                for ch in 0..3 {
                    num[i][ch] += n[ch];
                }
                den[i] += d;
            }
        }
        let mut colors = field.colors();
        for ((c, n), d) in colors.iter_mut().zip(&num).zip(&den) {
            if *d > 0.0 {
                for ch in 0..3 {
                    c[ch] = (c[ch] + params.color_lr * n[ch] / d).clamp(0.0, 1.0);
                }
            }
        }
        field.set_colors(&colors)?;
    }
    Ok(())
}

/// What happened during one alignment pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GcaOutcome {
    pub views: Vec<usize>,
    /// Views left out because nothing in the field covers them.
    pub excluded: Vec<usize>,
    pub timesteps: Vec<usize>,
    /// Exposure gains per step and (included) view.
    pub gains: Vec<Vec<f64>>,
}

pub fn gca_pass(
    field: &mut GaussianField,
    views: &[GcaView<'_>],
    k: &CameraIntrinsics,
    cf: &ConsistencyFunction,
    schedule: &NoiseSchedule,
    params: &GcaParams,
    noise: &mut NoiseSource,
) -> Result<GcaOutcome> {
    if views.len() < 2 {
        return Err(contract(format!("alignment batch needs at least 2 views, got {}", views.len())));
    }
    params.validate()?;
    let renders = par::map_slice(views, |v| render_view(field, v.pose, k));
    let mut outcome = GcaOutcome { timesteps: params.timesteps(schedule), ..Default::default() };
    let mut active = Vec::new();
    let mut x_prime = Vec::new();
    for (v, r) in views.iter().zip(renders) {
        if r.alpha.data.iter().all(|&a| a < params.min_alpha) {
            warn!("alignment: view {} has no field coverage, excluded", v.index);
            outcome.excluded.push(v.index);
            continue;
        }
        outcome.views.push(v.index);
        active.push(*v);
        x_prime.push(r.foreground().to_flat());
    }
    if active.is_empty() {
        return Ok(outcome);
    }
    let steps = outcome.timesteps.clone();
    let t1 = steps[0];
    let mut x_t: Vec<Vec<f64>> =
        x_prime.iter().map(|x| add_noise(x, t1, &noise.normal(x.len()), schedule)).collect::<Result<_>>()?;
    let poses: Vec<&CameraPose> = active.iter().map(|v| v.pose).collect();
    for (i, &t) in steps.iter().enumerate() {
        let w = params.weight(i, steps.len());
        let estimates = par::try_map_range(active.len(), |n| consistency_estimate(&x_t[n], active[n].model, t, cf, schedule))?;
        let gains: Vec<f64> = (0..active.len()).map(|n| exposure_gain(&x_prime[n], &estimates[n], active[n].valid)).collect();
        let blended: Vec<Vec<f64>> = (0..active.len()).map(|n| blend_with_gain(&x_prime[n], &estimates[n], w, gains[n])).collect();
        outcome.gains.push(gains);
        let targets = blended
            .iter()
            .map(|b| RgbImage::from_flat(k.width, k.height, b))
            .collect::<Result<Vec<_>>>()?;
        refine_colors(field, &poses, &targets, k, params)?;
        x_prime = par::map_slice(&poses, |p| render_view(field, p, k).foreground().to_flat());
        if let Some(&next) = steps.get(i + 1) {
            // deterministic re-noise of the blended target to the next level
            let (a_t, s_t) = (schedule.alpha(t), schedule.sigma(t));
            let (a_s, s_s) = (schedule.alpha(next), schedule.sigma(next));
            for n in 0..active.len() {
                x_t[n] = x_t[n]
                    .iter()
                    .zip(&estimates[n])
                    .zip(&blended[n])
                    .map(|((x, e), b)| a_s * b + s_s * (x - a_t * e) / s_t)
                    .collect();
            }
        }
    }
    Ok(outcome)
}

/// One pass per consecutive keyframe pair, over the views between them
/// (both keyframes included).
pub fn gca_subsequence_passes(
    field: &mut GaussianField,
    views: &[GcaView<'_>],
    keyframes: &[usize],
    k: &CameraIntrinsics,
    cf: &ConsistencyFunction,
    schedule: &NoiseSchedule,
    params: &GcaParams,
    seed: u64,
) -> Result<Vec<GcaOutcome>> {
    if keyframes.windows(2).any(|w| w[1] <= w[0]) || keyframes.last().is_some_and(|&l| l >= views.len()) {
        return Err(contract(format!("keyframes {keyframes:?} must be increasing and inside the path")));
    }
    keyframes
        .windows(2)
        .enumerate()
        .map(|(i, pair)| {
            let mut noise = NoiseSource::new(seed.wrapping_add(i as u64));
            gca_pass(field, &views[pair[0]..=pair[1]], k, cf, schedule, params, &mut noise)
        })
        .collect()
}
