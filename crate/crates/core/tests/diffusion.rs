mod common;

use common::{flow, rng};
use meshsplat::diffusion::{
    add_noise, consistency_estimate, lcm_sample, ConsistencyFunction, Denoiser, NoiseSchedule, NoiseSource, ScheduleKind,
    DEFAULT_LCM_STEPS,
};
use meshsplat::genbackend::{MixtureDenoiser, TemplateLibrary};
use meshsplat::imageio::{Raster, RgbImage};
use rand::Rng;

fn random_image(r: &mut impl Rng, w: usize, h: usize) -> RgbImage {
    Raster::from_vec(w, h, (0..w * h).map(|_| [r.random(), r.random(), r.random()]).collect()).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn library(k: usize, seed: u64) -> TemplateLibrary {
    let mut r = rng(seed);
    let images: Vec<RgbImage> = (0..k).map(|_| random_image(&mut r, 8, 8)).collect();
    TemplateLibrary::new(&images, None, 0.5).unwrap()
}

#[test]
fn variance_is_preserved_for_both_schedules() {
    for kind in [ScheduleKind::Cosine, ScheduleKind::Linear] {
        let s = NoiseSchedule::new(kind, 1000, 1).unwrap();
        for t in 0..=1000 {
            assert!((s.alpha(t).powi(2) + s.sigma(t).powi(2) - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_noising_endpoints() {
    let s = NoiseSchedule::cosine();
    let mut src = NoiseSource::new(3);
    let x0 = src.normal(4096);
    let noise = src.normal(4096);
    assert_eq!(add_noise(&x0, 0, &noise, &s).unwrap(), x0);
    let xt = add_noise(&x0, 1000, &noise, &s).unwrap();
    assert!(dist(&xt, &noise) / norm(&noise) < 0.05);
    assert!(add_noise(&x0, 1001, &noise, &s).is_err());
    assert!(add_noise(&x0, 10, &noise[..10], &s).is_err());
}

#[test]
fn forward_noising_variance_by_monte_carlo() {
    let s = NoiseSchedule::cosine();
    let mut r = rng(4);
    let mut src = NoiseSource::new(5);
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    for t in [50, 250, 500, 750, 950] {
        let x0: Vec<f64> = (0..10_000).map(|_| r.random_range(-1.0..1.0)).collect();
        let xt = add_noise(&x0, t, &src.normal(x0.len()), &s).unwrap();
        let want = s.alpha(t).powi(2) / 3.0 + s.sigma(t).powi(2);
        let got = var(&xt);
        assert!((got / want - 1.0).abs() < 0.03, "t {t}: {got} vs {want}");
    }
}

#[test]
fn boundary_step_is_the_identity() {
    let s = NoiseSchedule::cosine();
    let cf = ConsistencyFunction::for_schedule(&s);
    assert!((cf.c_skip(cf.delta) - 1.0).abs() < 1e-9 && cf.c_out(cf.delta).abs() < 1e-9);
    let model = MixtureDenoiser::new(library(3, 6));
    let x = NoiseSource::new(7).normal(192);
    assert_eq!(consistency_estimate(&x, &model, cf.delta, &cf, &s).unwrap(), x);
    assert!(consistency_estimate(&x, &model, 0, &cf, &s).is_err());

    let s5 = NoiseSchedule::new(ScheduleKind::Cosine, 1000, 5).unwrap();
    let cf5 = ConsistencyFunction::for_schedule(&s5);
    assert_eq!(cf5.c_skip(5), 1.0);
    assert_eq!(consistency_estimate(&x, &model, 5, &cf5, &s5).unwrap(), x);
    for t in 6..1000 {
        assert!((cf5.c_skip(t + 1) - cf5.c_skip(t)).abs() < 0.5);
        assert!(cf5.c_skip(t + 1) <= cf5.c_skip(t) && cf5.c_out(t + 1) >= cf5.c_out(t));
    }
}

#[test]
fn single_template_estimate_is_the_template() {
    let s = NoiseSchedule::cosine();
    let cf = ConsistencyFunction::for_schedule(&s);
    let lib = library(1, 8);
    let mu = lib.templates[0].clone();
    let model = MixtureDenoiser::new(lib);
    let x = NoiseSource::new(9).normal(mu.len());
    assert_eq!(model.predict_x0(&x, 1000, &s), mu);
    let out = consistency_estimate(&x, &model, 1000, &cf, &s).unwrap();
    assert!(cf.c_skip(1000) < 1e-8);
    assert!(dist(&out, &mu) < 1e-6 * norm(&mu));
}

#[test]
fn consistency_estimates_agree_along_a_flow_trajectory() {
    let s = NoiseSchedule::cosine();
    let cf = ConsistencyFunction::for_schedule(&s);
    let lib = library(4, 10);
    let model = MixtureDenoiser::new(lib.clone());
    let ratio = |t: usize| s.sigma(t) / s.alpha(t);
    const START: usize = 999;
    let checkpoints = [500, 400, 300, 200, 100];
    for seed in 0..3 {
        let x_start = NoiseSource::new(100 + seed).normal(192);
        let mut y: Vec<f64> = x_start.iter().map(|x| x / s.alpha(START)).collect();
        let mut from = ratio(START);
        let mut estimates = Vec::new();
        for &t in &checkpoints {
            y = flow(&y, from, ratio(t), 400, &lib);
            from = ratio(t);
            let x: Vec<f64> = y.iter().map(|v| v * s.alpha(t)).collect();
            estimates.push(consistency_estimate(&x, &model, t, &cf, &s).unwrap());
        }
        let mut worst = 0.0f64;
        for a in &estimates {
            for b in &estimates {
                worst = worst.max(dist(a, b) / norm(b));
            }
        }
        assert!(worst < 1e-2, "seed {seed}: {worst}");
    }
}

#[test]
fn single_step_sampling_is_one_estimate() {
    let s = NoiseSchedule::cosine();
    let cf = ConsistencyFunction::for_schedule(&s);
    let model = MixtureDenoiser::new(library(3, 11));
    let out = lcm_sample(&model, &cf, &s, &[1000], 192, &mut NoiseSource::new(12)).unwrap();
    let x_t = NoiseSource::new(12).normal(192);
    assert_eq!(out, consistency_estimate(&x_t, &model, 1000, &cf, &s).unwrap());
    assert!(lcm_sample(&model, &cf, &s, &[], 192, &mut NoiseSource::new(0)).is_err());
    assert!(lcm_sample(&model, &cf, &s, &[500, 700], 192, &mut NoiseSource::new(0)).is_err());
}

#[test]
fn single_template_sampling_ignores_the_seed() {
    let s = NoiseSchedule::cosine();
    let cf = ConsistencyFunction::for_schedule(&s);
    let lib = library(1, 13);
    let mu = lib.templates[0].clone();
    let model = MixtureDenoiser::new(lib);
    for seed in 0..5 {
        let out = lcm_sample(&model, &cf, &s, &DEFAULT_LCM_STEPS, mu.len(), &mut NoiseSource::new(seed)).unwrap();
        assert!(dist(&out, &mu) < 1e-6 * norm(&mu));
    }
}

#[test]
fn four_step_sampling_lands_on_a_template() {
    let s = NoiseSchedule::cosine();
    let cf = ConsistencyFunction::for_schedule(&s);
    let lib = library(4, 14);
    let model = MixtureDenoiser::new(lib.clone());
    let mut hits = 0;
    for seed in 0..100 {
        let out = lcm_sample(&model, &cf, &s, &DEFAULT_LCM_STEPS, 192, &mut NoiseSource::new(seed)).unwrap();
        hits += lib.templates.iter().any(|mu| dist(&out, mu) < 0.05 * norm(mu)) as usize;
    }
    assert!(hits >= 95, "{hits}/100");
}
