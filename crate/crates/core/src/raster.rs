//! Per-view control maps rendered from the mesh, and the depth colormap codec.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imageio::{self, Mask, Raster};
use crate::par;
use crate::scene::{CameraIntrinsics, CameraPose, Scene};
use crate::Vec3;

/// Depth, normal and label rasters of one view. `depth` is camera-frame Z
/// (0 where the pixel ray misses the mesh); normals are world space.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlMaps {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub normal: Vec<Vec3>,
    pub semantic: Vec<u16>,
    pub instance: Vec<u32>,
    pub valid: Vec<bool>,
}

impl ControlMaps {
    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    pub fn valid_mask(&self) -> Mask {
        Raster { width: self.width, height: self.height, data: self.valid.clone() }
    }

    pub fn depth_raster(&self) -> Raster<f64> {
        Raster { width: self.width, height: self.height, data: self.depth.clone() }
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|&&v| v).count() as f64 / self.len().max(1) as f64
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let depth = Raster { width: self.width, height: self.height, data: self.depth.iter().map(|&d| d as f32).collect() };
        imageio::write_raster_f32(&dir.join(format!("{stem}_depth.bin")), imageio::DEPTH_MAGIC, &depth)?;
        let sem = Raster { width: self.width, height: self.height, data: self.semantic.clone() };
        imageio::write_raster_u16(&dir.join(format!("{stem}_semantic.bin")), imageio::SEMANTIC_MAGIC, &sem)?;
        let inst = Raster { width: self.width, height: self.height, data: self.instance.clone() };
        imageio::write_raster_u32(&dir.join(format!("{stem}_instance.bin")), imageio::INSTANCE_MAGIC, &inst)
    }
}

/// Cast one ray per pixel center. Back faces are culled, so only surfaces
/// facing the camera appear.
pub fn render_control_maps(scene: &Scene, pose: &CameraPose, k: &CameraIntrinsics) -> ControlMaps {
    let (w, h) = (k.width, k.height);
    let hits = par::map_range(h, |y| {
        (0..w)
            .map(|x| {
                let ray = pose.pixel_ray(k, x, y);
                scene.cast(&ray).map(|hit| {
                    let f = hit.face as usize;
                    (hit.t, scene.mesh.face_normal()[f], scene.mesh.face_semantic()[f], scene.mesh.face_instance()[f])
                })
            })
            .collect::<Vec<_>>()
    });
    let n = w * h;
    let mut maps = ControlMaps {
        width: w,
        height: h,
        depth: vec![0.0; n],
        normal: vec![Vec3::zeros(); n],
        semantic: vec![0; n],
        instance: vec![0; n],
        valid: vec![false; n],
    };
    for (i, hit) in hits.into_iter().flatten().enumerate() {
        if let Some((t, normal, sem, inst)) = hit {
            maps.depth[i] = t;
            maps.normal[i] = normal;
            maps.semantic[i] = sem;
            maps.instance[i] = inst;
            maps.valid[i] = true;
        }
    }
    maps
}

/// Inverse-depth colormap: `1/d` is normalized over `[1/far, 1/near]`,
/// quantized to 256 bins and looked up in a turbo-style palette. Invalid
/// pixels encode as black, which is not a palette entry.
#[derive(Debug, Clone)]
pub struct DepthColormapCodec {
    near: f64,
    far: f64,
    lut: [[u8; 3]; 256],
    reverse: HashMap<[u8; 3], u8>,
}

impl DepthColormapCodec {
    pub fn new(near: f64, far: f64) -> Result<Self> {
        if !(near > 0.0 && near < far && far.is_finite()) {
            return Err(Error::Validation(format!("depth codec needs 0 < near < far, got [{near}, {far}]")));
        }
        let lut = turbo_lut();
        let reverse: HashMap<[u8; 3], u8> = lut.iter().enumerate().map(|(i, c)| (*c, i as u8)).collect();
        debug_assert_eq!(reverse.len(), 256);
        Ok(DepthColormapCodec { near, far, lut, reverse })
    }

    pub fn near(&self) -> f64 {
        self.near
    }

    pub fn far(&self) -> f64 {
        self.far
    }

    pub fn lut(&self) -> &[[u8; 3]; 256] {
        &self.lut
    }

    /// Width of one bin in inverse depth (1/m).
    pub fn bin_width(&self) -> f64 {
        (1.0 / self.near - 1.0 / self.far) / 256.0
    }

    /// Bin index of a (valid) depth, clamped to the codec range.
    pub fn bin(&self, depth: f64) -> u8 {
        let d = depth.clamp(self.near, self.far);
        let x = (1.0 / d - 1.0 / self.far) / (1.0 / self.near - 1.0 / self.far);
        ((x * 256.0).floor() as i64).clamp(0, 255) as u8
    }

    /// Depth at the center of bin `b`, in inverse-depth space.
    pub fn bin_center(&self, b: u8) -> f64 {
        let x = (b as f64 + 0.5) / 256.0;
        1.0 / (1.0 / self.far + x * (1.0 / self.near - 1.0 / self.far))
    }

    pub fn encode(&self, depth: &Raster<f64>) -> Raster<[u8; 3]> {
        depth.map(|&d| if d > 0.0 { self.lut[self.bin(d) as usize] } else { [0, 0, 0] })
    }

    /// Inverse of `encode` up to quantization; 0 marks invalid pixels.
    pub fn decode(&self, rgb: &Raster<[u8; 3]>) -> Result<Raster<f64>> {
        let data = rgb
            .data
            .iter()
            .enumerate()
            .map(|(i, c)| match (c, self.reverse.get(c)) {
                ([0, 0, 0], _) => Ok(0.0),
                (_, Some(&b)) => Ok(self.bin_center(b)),
                (_, None) => Err(Error::Decode(format!(
                    "pixel ({}, {}) color {c:?} is not a colormap entry",
                    i % rgb.width,
                    i / rgb.width
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Raster::from_vec(rgb.width, rgb.height, data)
    }
}

fn turbo(x: f64) -> [f64; 3] {
    let r = 0.13572138 + x * (4.61539260 + x * (-42.66032258 + x * (132.13108234 + x * (-152.94239396 + x * 59.28637943))));
    let g = 0.09140261 + x * (2.19418839 + x * (4.84296658 + x * (-14.18503333 + x * (4.27729857 + x * 2.82956604))));
    let b = 0.10667330 + x * (12.64194608 + x * (-60.58204836 + x * (110.36276771 + x * (-89.90310912 + x * 27.34824973))));
    [r, g, b]
}

/// The dark-red tail of turbo saturates at 8 bits, so the palette stops
/// at 96% of the curve to keep all 256 entries distinct.
fn turbo_lut() -> [[u8; 3]; 256] {
    let mut lut = [[0u8; 3]; 256];
    for (i, e) in lut.iter_mut().enumerate() {
        *e = turbo(0.96 * i as f64 / 255.0).map(imageio::to_u8);
    }
    lut
}
