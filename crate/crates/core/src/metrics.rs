//! Image-quality and consistency metrics used by the report command and the
//! test suite.

use serde::Serialize;

use crate::error::{contract, Result};
use crate::genbackend::{GeneratorBackend, GeneratorRequest};
use crate::imageio::{Mask, Raster, RgbImage};
use crate::par;
use crate::raster::{render_control_maps, ControlMaps};
use crate::scene::{CameraIntrinsics, CameraPath, CameraPose, Scene};
use crate::splatter::{render, silhouette_mask};
use crate::surfel::GaussianField;
use crate::warp::backward_warp;
use crate::Rgb;

pub const REPORT_ALPHA: f64 = 0.99;

pub fn luminance(c: &Rgb) -> f64 {
    0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2]
}

/// PSNR in dB over the selected pixels (peak 1.0); `None` when no pixel is
/// selected, infinity for identical inputs.
pub fn psnr(a: &RgbImage, b: &RgbImage, mask: &Mask) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..a.len() {
        if !mask.data[i] {
            continue;
        }
        for c in 0..3 {
            sum += (a.data[i][c] - b.data[i][c]).powi(2);
        }
        n += 3;
    }
    if n == 0 {
        return None;
    }
    let mse = sum / n as f64;
    Some(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Mean SSIM of the luminance channels (11x11 Gaussian window, sigma 1.5)
/// over the selected pixels.
pub fn ssim(a: &RgbImage, b: &RgbImage, mask: &Mask) -> Option<f64> {
    let (w, h) = (a.width, a.height);
    let la: Vec<f64> = a.data.iter().map(luminance).collect();
    let lb: Vec<f64> = b.data.iter().map(luminance).collect();
    let radius = 5i64;
    let kernel: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * 1.5 * 1.5)).exp()).collect();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let rows = par::map_range(h, |y| {
        let mut acc = (0.0, 0usize);
        for x in 0..w {
            if !mask.data[y * w + x] {
                continue;
            }
            let (mut sw, mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in -radius..=radius {
                let yy = y as i64 + dy;
                if yy < 0 || yy >= h as i64 {
                    continue;
                }
                for dx in -radius..=radius {
                    let xx = x as i64 + dx;
                    if xx < 0 || xx >= w as i64 {
                        continue;
                    }
                    let wt = kernel[(dy + radius) as usize] * kernel[(dx + radius) as usize];
                    let i = yy as usize * w + xx as usize;
                    sw += wt;
                    ma += wt * la[i];
                    mb += wt * lb[i];
                    saa += wt * la[i] * la[i];
                    sbb += wt * lb[i] * lb[i];
                    sab += wt * la[i] * lb[i];
                }
            }
            let (ma, mb) = (ma / sw, mb / sw);
            let va = (saa / sw - ma * ma).max(0.0);
            let vb = (sbb / sw - mb * mb).max(0.0);
            let cov = sab / sw - ma * mb;
            acc.0 += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            acc.1 += 1;
        }
        acc
    });
    let (s, n) = rows.into_iter().fold((0.0, 0), |(s, n), (a, b)| (s + a, n + b));
    (n > 0).then(|| s / n as f64)
}

/// Pixel pairs `(pixel in a, pixel in b)` that see the same surface point,
/// found by warping `a` into `b` with the z-test.
pub fn covisible_pairs(
    maps_a: &ControlMaps,
    pose_a: &CameraPose,
    maps_b: &ControlMaps,
    pose_b: &CameraPose,
    k: &CameraIntrinsics,
) -> Result<Vec<(usize, usize)>> {
    let blank = Raster::filled(k.width, k.height, [0.0; 3]);
    let warp = backward_warp(&blank, maps_a, pose_a, maps_b, pose_b, k)?;
    Ok(warp
        .source_px
        .data
        .iter()
        .enumerate()
        .filter_map(|(ib, s)| s.map(|(u, v)| ((v as usize) * k.width + u as usize, ib)))
        .collect())
}

/// Absolute difference of the mean luminances of two images over their
/// co-visible pixel pairs.
pub fn brightness_gap(a: &RgbImage, b: &RgbImage, pairs: &[(usize, usize)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let ma: f64 = pairs.iter().map(|(ia, _)| luminance(&a.data[*ia])).sum::<f64>() / n;
    let mb: f64 = pairs.iter().map(|(_, ib)| luminance(&b.data[*ib])).sum::<f64>() / n;
    Some((ma - mb).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewMetrics {
    pub view: usize,
    /// Fraction of pixels with alpha at least 0.99.
    pub coverage: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub silhouette_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub oracle: bool,
    pub surfels: usize,
    pub views: Vec<ViewMetrics>,
    pub min_psnr: Option<f64>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    /// Mean brightness gap between consecutive rendered views on co-visible
    /// pixels.
    pub covisible_gap: Option<f64>,
    pub max_silhouette_fraction: f64,
}

/// Keys of the serialized report, in order.
pub const REPORT_KEYS: [&str; 8] =
    ["oracle", "surfels", "views", "min_psnr", "mean_psnr", "mean_ssim", "covisible_gap", "max_silhouette_fraction"];

/// Render the field at every path view; with a ground-truth backend, compare
/// against its full-frame generation.
pub fn evaluate(
    field: &GaussianField,
    scene: &Scene,
    path: &CameraPath,
    views: &[usize],
    truth: Option<&dyn GeneratorBackend>,
) -> Result<MetricsReport> {
    let k = &path.intrinsics;
    if views.iter().any(|&v| v >= path.len()) {
        return Err(contract("metric view index outside the path"));
    }
    let mut out = Vec::with_capacity(views.len());
    let mut renders = Vec::with_capacity(views.len());
    let mut all_maps = Vec::with_capacity(views.len());
    for &v in views {
        let pose = &path.poses[v];
        let maps = render_control_maps(scene, pose, k);
        let r = render(field, pose, k, [0.0; 3]);
        let covered = r.alpha.map(|&a| a >= REPORT_ALPHA);
        let sil = silhouette_mask(&r, &maps)?;
        let (p, s) = match truth {
            Some(backend) => {
                let full = Raster::filled(k.width, k.height, true);
                let req = GeneratorRequest { maps: &maps, reference: None, mask: &full, seed: 0, style: "" };
                let gt = backend.generate(&req, pose, k).map_err(|e| e.at_view("metrics", v))?;
                (psnr(&r.rgb, &gt, &covered), ssim(&r.rgb, &gt, &covered))
            }
            None => (None, None),
        };
        out.push(ViewMetrics {
            view: v,
            coverage: covered.count() as f64 / covered.len() as f64,
            psnr: p,
            ssim: s,
            silhouette_fraction: sil.count() as f64 / sil.len() as f64,
        });
        renders.push(r.rgb);
        all_maps.push(maps);
    }
    let mut gaps = Vec::new();
    for i in 1..views.len() {
        let (a, b) = (i - 1, i);
        let pairs = covisible_pairs(&all_maps[a], &path.poses[views[a]], &all_maps[b], &path.poses[views[b]], k)?;
        gaps.extend(brightness_gap(&renders[a], &renders[b], &pairs));
    }
    let psnrs: Vec<f64> = out.iter().filter_map(|m| m.psnr).collect();
    let ssims: Vec<f64> = out.iter().filter_map(|m| m.ssim).collect();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(MetricsReport {
        oracle: truth.is_some(),
        surfels: field.len(),
        min_psnr: psnrs.iter().cloned().reduce(f64::min),
        mean_psnr: mean(&psnrs),
        mean_ssim: mean(&ssims),
        covisible_gap: mean(&gaps),
        max_silhouette_fraction: out.iter().map(|m| m.silhouette_fraction).fold(0.0, f64::max),
        views: out,
    })
}
