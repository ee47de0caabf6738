//! Backward warping between views using mesh depth.
//!
//! Every valid destination pixel is unprojected with the destination depth,
//! reprojected into the source view and accepted only if the source depth at
//! the landing pixel agrees (z-test). Nothing is splatted forward, so the warp
//! never needs its own hole filling.

use crate::error::{contract, Result};
use crate::imageio::{Mask, Raster, RgbImage};
use crate::par;
use crate::raster::ControlMaps;
use crate::scene::{CameraIntrinsics, CameraPose};
use crate::Rgb;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    #[default]
    Nearest,
    Bilinear,
}

/// Warped image with per-pixel validity. `source_px` is the continuous
/// source-view coordinate each valid pixel was fetched from.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub image: RgbImage,
    pub valid: Mask,
    pub source_px: Raster<Option<(f64, f64)>>,
}

impl WarpResult {
    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    /// A reference that carries `image` verbatim wherever `valid` is set.
    pub fn from_image(image: RgbImage, valid: Mask) -> Result<Self> {
        if !image.same_shape(&valid) {
            return Err(contract("reference image and validity mask differ in shape"));
        }
        let black = [0.0; 3];
        let data = image.data.iter().zip(&valid.data).map(|(c, &v)| if v { *c } else { black }).collect();
        let source_px = Raster::filled(image.width, image.height, None);
        Ok(WarpResult { image: Raster { width: image.width, height: image.height, data }, valid, source_px })
    }
}

/// Depth agreement tolerance for the occlusion test (meters).
#[inline]
pub fn occlusion_tolerance(depth: f64) -> f64 {
    (0.005 * depth).max(0.02)
}

pub fn backward_warp(
    src_image: &RgbImage,
    src_maps: &ControlMaps,
    src_pose: &CameraPose,
    dst_maps: &ControlMaps,
    dst_pose: &CameraPose,
    k: &CameraIntrinsics,
) -> Result<WarpResult> {
    backward_warp_with(src_image, src_maps, src_pose, dst_maps, dst_pose, k, Sampling::Nearest)
}

pub fn backward_warp_with(
    src_image: &RgbImage,
    src_maps: &ControlMaps,
    src_pose: &CameraPose,
    dst_maps: &ControlMaps,
    dst_pose: &CameraPose,
    k: &CameraIntrinsics,
    sampling: Sampling,
) -> Result<WarpResult> {
    let (w, h) = (k.width, k.height);
    for (name, ww, hh) in [
        ("source image", src_image.width, src_image.height),
        ("source maps", src_maps.width, src_maps.height),
        ("destination maps", dst_maps.width, dst_maps.height),
    ] {
        if (ww, hh) != (w, h) {
            return Err(contract(format!("{name} is {ww}x{hh}, expected {w}x{h}")));
        }
    }

    let depth_ok = |sx: usize, sy: usize, u: f64, v: f64, z: f64| {
        src_maps.valid[sy * w + sx] && (z - surface_depth(src_maps, sx, sy, u, v)).abs() < occlusion_tolerance(z)
    };

    let rows = par::map_range(h, |y| {
        (0..w)
            .map(|x| {
                let i = y * w + x;
                if !dst_maps.valid[i] {
                    return None;
                }
                let world = dst_pose.unproject(k, x, y, dst_maps.depth[i]);
                let cam = src_pose.world_to_camera(&world);
                if cam.z <= 0.0 {
                    return None;
                }
                let (u, v) = k.project(&cam);
                if !(u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64) {
                    return None;
                }
                let color = match sampling {
                    Sampling::Nearest => {
                        let (sx, sy) = (u as usize, v as usize);
                        if !depth_ok(sx, sy, u, v, cam.z) {
                            return None;
                        }
                        *src_image.get(sx, sy)
                    }
                    Sampling::Bilinear => bilinear(src_image, u, v, |sx, sy| depth_ok(sx, sy, u, v, cam.z))?,
                };
                Some((color, (u, v)))
            })
            .collect::<Vec<_>>()
    });

    let mut image = Raster::filled(w, h, [0.0; 3]);
    let mut valid = Raster::filled(w, h, false);
    let mut source_px = Raster::filled(w, h, None);
    for (i, px) in rows.into_iter().flatten().enumerate() {
        if let Some((c, uv)) = px {
            image.data[i] = c;
            valid.data[i] = true;
            source_px.data[i] = Some(uv);
        }
    }
    Ok(WarpResult { image, valid, source_px })
}

/// Depth of the surface under pixel `(sx, sy)` at the continuous position
/// `(u, v)`. Inverse depth is affine in image coordinates on a plane, so it is
/// extrapolated from the pixel center along each axis whose three taps are
/// collinear; across a depth edge the axis contributes nothing.
fn surface_depth(maps: &ControlMaps, sx: usize, sy: usize, u: f64, v: f64) -> f64 {
    let (w, h) = (maps.width, maps.height);
    let inv = |x: usize, y: usize| {
        let i = y * w + x;
        maps.valid[i].then(|| 1.0 / maps.depth[i])
    };
    let center = 1.0 / maps.depth[sy * w + sx];
    let slope = |lo: Option<f64>, hi: Option<f64>| match (lo, hi) {
        (Some(a), Some(b)) if (a - 2.0 * center + b).abs() <= 1e-3 * center => 0.5 * (b - a),
        _ => 0.0,
    };
    let gx = if sx > 0 && sx + 1 < w { slope(inv(sx - 1, sy), inv(sx + 1, sy)) } else { 0.0 };
    let gy = if sy > 0 && sy + 1 < h { slope(inv(sx, sy - 1), inv(sx, sy + 1)) } else { 0.0 };
    let est = center + gx * (u - sx as f64 - 0.5) + gy * (v - sy as f64 - 0.5);
    if est > 0.0 {
        1.0 / est
    } else {
        maps.depth[sy * w + sx]
    }
}

/// Bilinear lookup over the taps that pass `accept`, renormalized.
fn bilinear(img: &RgbImage, u: f64, v: f64, accept: impl Fn(usize, usize) -> bool) -> Option<Rgb> {
    let fx = u - 0.5;
    let fy = v - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let (ax, ay) = (fx - x0, fy - y0);
    let mut acc = [0.0; 3];
    let mut wsum = 0.0;
    for (dx, dy, wt) in [(0, 0, (1.0 - ax) * (1.0 - ay)), (1, 0, ax * (1.0 - ay)), (0, 1, (1.0 - ax) * ay), (1, 1, ax * ay)] {
        let (sx, sy) = (x0 as i64 + dx, y0 as i64 + dy);
        if sx < 0 || sy < 0 || sx >= img.width as i64 || sy >= img.height as i64 || wt <= 0.0 {
            continue;
        }
        let (sx, sy) = (sx as usize, sy as usize);
        if !accept(sx, sy) {
            continue;
        }
        let c = img.get(sx, sy);
        for ch in 0..3 {
            acc[ch] += wt * c[ch];
        }
        wsum += wt;
    }
    (wsum > 0.0).then(|| acc.map(|a| a / wsum))
}

/// Pixels the generator has to synthesize: geometry the warp could not
/// supply, plus every no-geometry (sky) pixel.
pub fn outpaint_mask(warp: &WarpResult, dst_maps: &ControlMaps) -> Result<Mask> {
    if (warp.width(), warp.height()) != (dst_maps.width, dst_maps.height) {
        return Err(contract("warp and destination maps differ in shape"));
    }
    let data = dst_maps.valid.iter().zip(&warp.valid.data).map(|(&geom, &warped)| !geom || !warped).collect();
    Ok(Raster { width: dst_maps.width, height: dst_maps.height, data })
}

pub fn incompleteness_fraction(mask: &Mask) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.count() as f64 / mask.len() as f64
}
