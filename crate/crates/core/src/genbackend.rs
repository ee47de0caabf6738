//! Conditional generator backends: the procedural texture oracle and the
//! analytic Gaussian-mixture denoiser.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::{Denoiser, NoiseSchedule};
use crate::error::{contract, Error, Result};
use crate::imageio::{self, Mask, Raster, RgbImage};
use crate::par;
use crate::raster::ControlMaps;
use crate::scene::toy::{SEM_BUILDING, SEM_POLE, SEM_ROAD, SEM_SIDEWALK, SEM_WALL};
use crate::scene::{CameraIntrinsics, CameraPose};
use crate::warp::WarpResult;
use crate::{Rgb, Vec3};

/// One generation call. Without a reference the mask must cover the whole
/// frame (text-and-geometry-only generation); with one, unmasked pixels are
/// taken from it.
#[derive(Debug, Clone)]
pub struct GeneratorRequest<'a> {
    pub maps: &'a ControlMaps,
    pub reference: Option<&'a WarpResult>,
    pub mask: &'a Mask,
    pub seed: u64,
    pub style: &'a str,
}

impl GeneratorRequest<'_> {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.maps.width, self.maps.height);
        if (self.mask.width, self.mask.height) != (w, h) {
            return Err(contract("request mask and control maps differ in shape"));
        }
        match self.reference {
            None if self.mask.count() != self.mask.len() => {
                Err(contract("a request without reference must mask the full frame"))
            }
            Some(r) if (r.width(), r.height()) != (w, h) => Err(contract("reference and control maps differ in shape")),
            Some(r) => match r.valid.data.iter().zip(&self.mask.data).position(|(&v, &m)| !v && !m) {
                Some(i) => Err(contract(format!(
                    "pixel ({}, {}) is neither masked nor covered by the reference",
                    i % w,
                    i / w
                ))),
                None => Ok(()),
            },
            None => Ok(()),
        }
    }
}

/// Anything that can paint a view from its control maps.
pub trait GeneratorBackend: Sync {
    fn name(&self) -> &str;

    fn generate(&self, request: &GeneratorRequest<'_>, pose: &CameraPose, k: &CameraIntrinsics) -> Result<RgbImage>;
}

#[inline]
pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash to `[-1, 1]`.
#[inline]
fn lattice_value(seed: u64, i: i64, j: i64, k: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((i as u64).wrapping_mul(0x1F1F_1F1F) ^ splitmix((j as u64) ^ splitmix(k as u64))));
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

const LATTICE: f64 = 4.0;
const NOISE_AMPLITUDE: f64 = 0.08;

/// Smooth value noise in `[-1, 1]` on a 4 m lattice.
pub fn value_noise(p: &Vec3, seed: u64) -> f64 {
    let q = p / LATTICE;
    let base = q.map(f64::floor);
    let f = q - base;
    let s = f.map(|t| t * t * (3.0 - 2.0 * t));
    let (bi, bj, bk) = (base.x as i64, base.y as i64, base.z as i64);
    let mut acc = 0.0;
    for corner in 0..8 {
        let (di, dj, dk) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
        let w = (if di == 1 { s.x } else { 1.0 - s.x })
            * (if dj == 1 { s.y } else { 1.0 - s.y })
            * (if dk == 1 { s.z } else { 1.0 - s.z });
        acc += w * lattice_value(seed, bi + di, bj + dj, bk + dk);
    }
    acc
}

fn base_palette(semantic: u16) -> Rgb {
    match semantic {
        SEM_ROAD => [0.36, 0.35, 0.37],
        SEM_SIDEWALK => [0.62, 0.58, 0.52],
        SEM_BUILDING => [0.66, 0.52, 0.42],
        SEM_POLE => [0.30, 0.34, 0.30],
        SEM_WALL => [0.55, 0.50, 0.60],
        _ => [0.5, 0.5, 0.5],
    }
}

/// Deterministic surface albedo, identical for every view of the same point.
pub fn oracle_texture(p: &Vec3, normal: &Vec3, semantic: u16, instance: u32) -> Rgb {
    let seed = splitmix(instance as u64 ^ ((semantic as u64) << 40));
    let n = NOISE_AMPLITUDE * value_noise(p, seed);
    let light = Vec3::new(0.3, 0.8, -0.52).normalize();
    let shade = 0.85 + 0.15 * normal.dot(&light).abs();
    let base = base_palette(semantic);
    let color: Rgb = if semantic == SEM_ROAD {
        // gray with a faint blue cast: b >= r >= g everywhere
        let g = base[1] + n;
        [g + 0.01, g, g + 0.02]
    } else {
        let h = splitmix(seed ^ 0xC0FFEE);
        let tint = |shift: u32| ((h >> shift) & 0xFF) as f64 / 255.0 * 0.12 - 0.06;
        [base[0] + tint(0) + n, base[1] + tint(8) + n, base[2] + tint(16) + n]
    };
    color.map(|c| (c * shade).clamp(0.0, 1.0))
}

/// Procedural sky: horizon haze blending into a blue zenith.
pub fn sky_color(world_dir: &Vec3) -> Rgb {
    let e = (world_dir.y / world_dir.norm()).clamp(0.0, 1.0);
    let t = e;
    let horizon = [0.70, 0.72, 0.76];
    let zenith = [0.46, 0.58, 0.80];
    std::array::from_fn(|c| horizon[c] + (zenith[c] - horizon[c]) * t)
}

/// Multi-view consistent generator: every masked pixel shows the oracle
/// albedo of the surface point it sees.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleBackend;

impl GeneratorBackend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn generate(&self, request: &GeneratorRequest<'_>, pose: &CameraPose, k: &CameraIntrinsics) -> Result<RgbImage> {
        oracle_generate(request, pose, k)
    }
}

pub fn oracle_generate(request: &GeneratorRequest<'_>, pose: &CameraPose, k: &CameraIntrinsics) -> Result<RgbImage> {
    request.validate()?;
    let maps = request.maps;
    let w = maps.width;
    let rows = par::map_range(maps.height, |y| {
        (0..w)
            .map(|x| {
                let i = y * w + x;
                if !request.mask.data[i] {
                    return request.reference.expect("validated").image.data[i];
                }
                if maps.valid[i] {
                    let p = pose.unproject(k, x, y, maps.depth[i]);
                    oracle_texture(&p, &maps.normal[i], maps.semantic[i], maps.instance[i])
                } else {
                    sky_color(&pose.pixel_ray(k, x, y).dir)
                }
            })
            .collect::<Vec<_>>()
    });
    Raster::from_vec(w, maps.height, rows.concat())
}

/// Reference images defining a mixture-of-Gaussians data law.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateLibrary {
    pub width: usize,
    pub height: usize,
    /// Flattened RGB templates.
    pub templates: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub sigma_data: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    sigma_data: f64,
    #[serde(default)]
    weights: Option<Vec<f64>>,
    templates: Vec<String>,
}

impl TemplateLibrary {
    pub fn new(images: &[RgbImage], weights: Option<Vec<f64>>, sigma_data: f64) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::Validation("template library needs at least one image".into()))?;
        if images.iter().any(|m| !m.same_shape(first)) {
            return Err(Error::Validation("templates must share one resolution".into()));
        }
        let weights = weights.unwrap_or_else(|| vec![1.0 / images.len() as f64; images.len()]);
        let total: f64 = weights.iter().sum();
        if weights.len() != images.len() || weights.iter().any(|&w| !(w > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation("template weights must be positive, one per template, summing to 1".into()));
        }
        Ok(TemplateLibrary {
            width: first.width,
            height: first.height,
            templates: images.iter().map(RgbImage::to_flat).collect(),
            weights,
            sigma_data,
        })
    }

    pub fn single(image: &RgbImage) -> Self {
        Self::new(std::slice::from_ref(image), None, 0.5).expect("one template is always valid")
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Load `manifest.json` (`sigma_data`, optional `weights`, `templates`
    /// file names) and the listed PNG files from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        let images = m.templates.iter().map(|f| imageio::read_rgb_png(&dir.join(f))).collect::<Result<Vec<_>>>()?;
        Self::new(&images, m.weights, m.sigma_data)
    }

    pub fn template_image(&self, k: usize) -> RgbImage {
        RgbImage::from_flat(self.width, self.height, &self.templates[k]).expect("shape checked at construction")
    }
}

/// Posterior responsibilities of each template given `x_t`.
pub fn mixture_responsibilities(x_t: &[f64], t: usize, library: &TemplateLibrary, schedule: &NoiseSchedule) -> Vec<f64> {
    let (alpha, sigma) = (schedule.alpha(t), schedule.sigma(t));
    if library.len() == 1 {
        return vec![1.0];
    }
    let logits: Vec<f64> = library
        .templates
        .iter()
        .zip(&library.weights)
        .map(|(mu, w)| {
            let d2: f64 = x_t.iter().zip(mu).map(|(x, m)| (x - alpha * m).powi(2)).sum();
            w.ln() - d2 / (2.0 * sigma * sigma)
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // sigma == 0: the exact template match (or nearest) takes everything
        let best = logits.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i);
        return (0..library.len()).map(|k| if k == best { 1.0 } else { 0.0 }).collect();
    }
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// `E[x_0 | x_t]` under the template mixture and the forward kernel
/// `N(alpha(t) x_0, sigma(t)^2 I)`.
pub fn mixture_posterior_mean(x_t: &[f64], t: usize, library: &TemplateLibrary, schedule: &NoiseSchedule) -> Vec<f64> {
    let r = mixture_responsibilities(x_t, t, library, schedule);
    if library.len() == 1 {
        return library.templates[0].clone();
    }
    let mut out = vec![0.0; x_t.len()];
    for (mu, rk) in library.templates.iter().zip(&r) {
        if *rk == 0.0 {
            continue;
        }
        for (o, m) in out.iter_mut().zip(mu) {
            *o += rk * m;
        }
    }
    out
}

/// Analytic denoiser whose noise prediction exactly inverts the posterior
/// mean: `eps = (x_t - alpha x0) / sigma`.
#[derive(Debug, Clone)]
pub struct MixtureDenoiser {
    pub library: TemplateLibrary,
}

impl MixtureDenoiser {
    pub fn new(library: TemplateLibrary) -> Self {
        MixtureDenoiser { library }
    }
}

impl Denoiser for MixtureDenoiser {
    fn predict_noise(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Vec<f64> {
        let x0 = mixture_posterior_mean(x_t, t, &self.library, schedule);
        let (alpha, sigma) = (schedule.alpha(t), schedule.sigma(t));
        if sigma == 0.0 {
            return vec![0.0; x_t.len()];
        }
        x_t.iter().zip(&x0).map(|(x, m)| (x - alpha * m) / sigma).collect()
    }

    fn predict_x0(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Vec<f64> {
        mixture_posterior_mean(x_t, t, &self.library, schedule)
    }
}
