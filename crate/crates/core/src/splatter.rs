//! Tile-based Gaussian splatting: EWA projection of surfel covariances and
//! front-to-back alpha compositing.

use std::cmp::Ordering;

use nalgebra::{Matrix2x3, Vector2};

use crate::imageio::{Mask, Raster, RgbImage};
use crate::par;
use crate::raster::ControlMaps;
use crate::scene::{CameraIntrinsics, CameraPose};
use crate::surfel::GaussianField;
use crate::{Mat3, Rgb, Vec3};

pub const TILE: usize = 16;
/// Screen-space variance added to every projected footprint (px^2).
pub const DILATION: f64 = 0.3;
pub const NEAR_PLANE: f64 = 0.1;
pub const DEFAULT_LOW_ALPHA: f64 = 0.5;
pub const SILHOUETTE_ALPHA: f64 = 0.6;

const MAX_ALPHA: f64 = 0.99;
const MIN_ALPHA: f64 = 1.0 / 255.0;
const T_EPS: f64 = 1e-4;
/// `-0.5 * 3^2`: contributions beyond three standard deviations are dropped.
const CUTOFF_POWER: f64 = -4.5;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// Composite over the background color.
    pub rgb: RgbImage,
    /// Accumulated premultiplied color; zero where alpha is zero.
    pub premult: RgbImage,
    pub alpha: Raster<f64>,
    /// Alpha-weighted mean view depth, 0 where alpha is 0.
    pub depth: Raster<f64>,
    /// Depth of the surfel that brings transmittance below one half, 0 if
    /// transmittance never gets there.
    pub median_depth: Raster<f64>,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.alpha.width
    }

    pub fn height(&self) -> usize {
        self.alpha.height
    }

    /// Un-premultiplied color; black where nothing was drawn.
    pub fn foreground(&self) -> RgbImage {
        let data = self
            .premult
            .data
            .iter()
            .zip(&self.alpha.data)
            .map(|(c, &a)| if a > 0.0 { c.map(|v| (v / a).clamp(0.0, 1.0)) } else { [0.0; 3] })
            .collect();
        Raster { width: self.width(), height: self.height(), data }
    }
}

/// One surfel projected into the image.
#[derive(Debug, Clone, Copy)]
pub struct Splat2D {
    pub index: u32,
    pub mean: Vector2<f64>,
    /// Inverse of the dilated 2D covariance, as `(a, b, c)` of `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub color: Rgb,
}

impl Splat2D {
    #[inline]
    fn power(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean.x;
        let dy = py - self.mean.y;
        let [a, b, c] = self.conic;
        -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
    }
}

/// Projected splats binned into screen tiles, each list sorted front to
/// back by view depth.
#[derive(Debug, Clone)]
pub struct TileBins {
    pub width: usize,
    pub height: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub splats: Vec<Splat2D>,
    pub bins: Vec<Vec<u32>>,
}

/// A single blending contribution: pixel, surfel and its weight `T_i * alpha_i`.
#[derive(Debug, Clone, Copy)]
pub struct Contribution {
    pub pixel: usize,
    pub surfel: u32,
    pub weight: f64,
}

impl TileBins {
    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Composite every pixel of tile `t`, reporting each contribution in
    /// front-to-back order.
    pub fn composite_tile(&self, t: usize, mut visit: impl FnMut(Contribution, &Splat2D)) {
        let (tx, ty) = (t % self.tiles_x, t / self.tiles_x);
        let list = &self.bins[t];
        if list.is_empty() {
            return;
        }
        for y in ty * TILE..((ty + 1) * TILE).min(self.height) {
            for x in tx * TILE..((tx + 1) * TILE).min(self.width) {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let pixel = y * self.width + x;
                let mut trans = 1.0;
                for &si in list {
                    let s = &self.splats[si as usize];
                    let power = s.power(px, py);
                    if !(CUTOFF_POWER..=0.0).contains(&power) {
                        continue;
                    }
                    let a = (s.opacity * power.exp()).min(MAX_ALPHA);
                    if a < MIN_ALPHA {
                        continue;
                    }
                    visit(Contribution { pixel, surfel: s.index, weight: trans * a }, s);
                    trans *= 1.0 - a;
                    if trans < T_EPS {
                        break;
                    }
                }
            }
        }
    }
}

/// Conservative frustum test for an axis-aligned box.
fn box_in_frustum(min: &Vec3, max: &Vec3, pose: &CameraPose, k: &CameraIntrinsics) -> bool {
    let corners: Vec<Vec3> = (0..8)
        .map(|i| {
            let c = Vec3::new(
                if i & 1 == 0 { min.x } else { max.x },
                if i & 2 == 0 { min.y } else { max.y },
                if i & 4 == 0 { min.z } else { max.z },
            );
            pose.world_to_camera(&c)
        })
        .collect();
    let (w, h) = (k.width as f64, k.height as f64);
    // half-spaces in camera coordinates; a box is culled if all corners fail one
    let planes: [&dyn Fn(&Vec3) -> bool; 5] = [
        &|c| c.z > NEAR_PLANE,
        &|c| k.fx * c.x + k.cx * c.z >= 0.0,
        &|c| k.fx * c.x + (k.cx - w) * c.z <= 0.0,
        &|c| k.fy * c.y + k.cy * c.z >= 0.0,
        &|c| k.fy * c.y + (k.cy - h) * c.z <= 0.0,
    ];
    planes.iter().all(|inside| corners.iter().any(|c| inside(c)))
}

/// Front-to-back order. Equal depths are broken by the splat's own values so
/// the order does not depend on where a surfel sits in storage.
fn splat_order(a: &Splat2D, b: &Splat2D) -> Ordering {
    let values = |s: &Splat2D| {
        [s.depth, s.mean.x, s.mean.y, s.conic[0], s.conic[1], s.conic[2], s.opacity, s.color[0], s.color[1], s.color[2]]
    };
    let (va, vb) = (values(a), values(b));
    va.iter().zip(&vb).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal).then(a.index.cmp(&b.index))
}

/// Project and bin the field for one view.
pub fn prepare(field: &GaussianField, pose: &CameraPose, k: &CameraIntrinsics) -> TileBins {
    let (w, h) = (k.width, k.height);
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let r_wc: Mat3 = pose.rotation().transpose();
    let surfels = field.surfels();
    let visible: Vec<&crate::surfel::Chunk> = field
        .chunks()
        .iter()
        .filter(|c| box_in_frustum(&c.bounds.min, &c.bounds.max, pose, k))
        .collect();
    let lim_x = 1.3 * (0.5 * w as f64 / k.fx);
    let lim_y = 1.3 * (0.5 * h as f64 / k.fy);

    let projected = par::map_slice(&visible, |chunk| {
        (chunk.start..chunk.end)
            .filter_map(|i| {
                let s = &surfels[i];
                let t = pose.world_to_camera(&s.position);
                if t.z <= NEAR_PLANE {
                    return None;
                }
                let tx = (t.x / t.z).clamp(-lim_x, lim_x) * t.z;
                let ty = (t.y / t.z).clamp(-lim_y, lim_y) * t.z;
                let j = Matrix2x3::new(
                    k.fx / t.z,
                    0.0,
                    -k.fx * tx / (t.z * t.z),
                    0.0,
                    k.fy / t.z,
                    -k.fy * ty / (t.z * t.z),
                );
                let m = j * r_wc;
                let cov = m * s.covariance() * m.transpose();
                let a = cov[(0, 0)] + DILATION;
                let b = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
                let c = cov[(1, 1)] + DILATION;
                let det = a * c - b * b;
                if !(det > 0.0) {
                    return None;
                }
                let (u, v) = k.project(&t);
                let mid = 0.5 * (a + c);
                let lambda = mid + (mid * mid - det).max(0.1).sqrt();
                let radius = 3.0 * lambda.sqrt();
                let x0 = ((u - radius).floor().max(0.0)) as usize / TILE;
                let y0 = ((v - radius).floor().max(0.0)) as usize / TILE;
                if u + radius < 0.0 || v + radius < 0.0 || u - radius >= w as f64 || v - radius >= h as f64 {
                    return None;
                }
                let x1 = (((u + radius).ceil() as usize) / TILE).min(tiles_x - 1);
                let y1 = (((v + radius).ceil() as usize) / TILE).min(tiles_y - 1);
                let splat = Splat2D {
                    index: i as u32,
                    mean: Vector2::new(u, v),
                    conic: [c / det, -b / det, a / det],
                    depth: t.z,
                    opacity: s.opacity,
                    color: s.color,
                };
                Some((splat, (x0, y0, x1, y1)))
            })
            .collect::<Vec<_>>()
    });

    let mut splats = Vec::new();
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (splat, (x0, y0, x1, y1)) in projected.into_iter().flatten() {
        let id = splats.len() as u32;
        splats.push(splat);
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                bins[ty * tiles_x + tx].push(id);
            }
        }
    }
    par::for_each_row(&mut bins, 1, |_, row| row[0].sort_by(|a, b| splat_order(&splats[*a as usize], &splats[*b as usize])));
    TileBins { width: w, height: h, tiles_x, tiles_y, splats, bins }
}

pub fn render(field: &GaussianField, pose: &CameraPose, k: &CameraIntrinsics, background: Rgb) -> RenderOutput {
    let bins = prepare(field, pose, k);
    render_bins(&bins, background)
}

pub fn render_bins(bins: &TileBins, background: Rgb) -> RenderOutput {
    let (w, h) = (bins.width, bins.height);
    struct Px {
        color: Rgb,
        alpha: f64,
        depth: f64,
        median: f64,
    }
    let tiles = par::map_range(bins.tile_count(), |t| {
        let mut out: Vec<(usize, Px)> = Vec::new();
        let mut current: Option<(usize, Px)> = None;
        bins.composite_tile(t, |c, s| {
            if current.as_ref().is_none_or(|(p, _)| *p != c.pixel) {
                out.extend(current.take());
                current = Some((c.pixel, Px { color: [0.0; 3], alpha: 0.0, depth: 0.0, median: 0.0 }));
            }
            let px = &mut current.as_mut().expect("set above").1;
            for ch in 0..3 {
                px.color[ch] += c.weight * s.color[ch];
            }
            let before = 1.0 - px.alpha;
            px.alpha += c.weight;
            px.depth += c.weight * s.depth;
            if before >= 0.5 && 1.0 - px.alpha < 0.5 {
                px.median = s.depth;
            }
        });
        out.extend(current);
        out
    });

    let n = w * h;
    let mut premult = vec![[0.0; 3]; n];
    let mut alpha = vec![0.0; n];
    let mut depth = vec![0.0; n];
    let mut median = vec![0.0; n];
    for (i, px) in tiles.into_iter().flatten() {
        premult[i] = px.color;
        alpha[i] = px.alpha.min(1.0);
        depth[i] = if px.alpha > 0.0 { px.depth / px.alpha } else { 0.0 };
        median[i] = px.median;
    }
    let rgb = premult
        .iter()
        .zip(&alpha)
        .map(|(c, &a)| std::array::from_fn(|ch| c[ch] + (1.0 - a) * background[ch]))
        .collect();
    RenderOutput {
        rgb: Raster { width: w, height: h, data: rgb },
        premult: Raster { width: w, height: h, data: premult },
        alpha: Raster { width: w, height: h, data: alpha },
        depth: Raster { width: w, height: h, data: depth },
        median_depth: Raster { width: w, height: h, data: median },
    }
}

pub fn low_alpha_mask(render: &RenderOutput, threshold: f64) -> Mask {
    render.alpha.map(|&a| a < threshold)
}

pub fn silhouette_tolerance(depth: f64) -> f64 {
    (0.01 * depth).max(0.05)
}

/// Pixels Stage II has to inpaint: weakly covered pixels, plus geometry
/// pixels where the rendered surface lies behind the mesh surface (the
/// nearer geometry is missing from the field).
pub fn silhouette_mask(render: &RenderOutput, maps: &ControlMaps) -> crate::Result<Mask> {
    if (render.width(), render.height()) != (maps.width, maps.height) {
        return Err(crate::error::contract("render and control maps differ in shape"));
    }
    let data = (0..maps.len())
        .map(|i| {
            let a = render.alpha.data[i];
            if a < SILHOUETTE_ALPHA {
                return true;
            }
            maps.valid[i] && render.median_depth.data[i] - maps.depth[i] > silhouette_tolerance(maps.depth[i])
        })
        .collect();
    Ok(Raster { width: maps.width, height: maps.height, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surfel::make_surfel;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::from_horizontal_fov(64, 48, 45.0).unwrap()
    }

    #[test]
    fn empty_field_is_background() {
        let out = render(&GaussianField::new(), &CameraPose::looking(Vec3::zeros(), Vec3::z()).unwrap(), &k(), [0.2, 0.3, 0.4]);
        assert!(out.alpha.data.iter().all(|&a| a == 0.0));
        assert!(out.rgb.data.iter().all(|c| *c == [0.2, 0.3, 0.4]));
        assert!(out.premult.data.iter().all(|c| *c == [0.0; 3]));
    }

    #[test]
    fn stacked_surfels_compose_transmittance() {
        let k = k();
        let pose = CameraPose::looking(Vec3::zeros(), Vec3::z()).unwrap();
        // center of pixel (32, 24)
        let p = pose.unproject(&k, 32, 24, 10.0);
        let s = make_surfel(p, &-Vec3::z(), 10.0, &k, [1.0, 0.0, 0.0]).unwrap();
        let mut f = GaussianField::new();
        f.append(0, vec![s, s]);
        let out = render(&f, &pose, &k, [0.0; 3]);
        let a = out.alpha.get(32, 24);
        assert!((a - 0.99).abs() < 0.005, "alpha {a}");
        assert!((out.depth.get(32, 24) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn behind_camera_is_invisible() {
        let k = k();
        let pose = CameraPose::looking(Vec3::zeros(), Vec3::z()).unwrap();
        let s = make_surfel(Vec3::new(0.0, 0.0, -5.0), &Vec3::z(), 5.0, &k, [1.0; 3]).unwrap();
        let mut f = GaussianField::new();
        f.append(0, vec![s]);
        let out = render(&f, &pose, &k, [0.0; 3]);
        assert!(out.alpha.data.iter().all(|&a| a == 0.0));
    }
}
