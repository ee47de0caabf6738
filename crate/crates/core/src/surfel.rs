//! Flattened Gaussian surfels lifted onto the mesh surface.
//!
//! Each surfel sits on the surface point seen through a pixel, is oriented
//! by the surface normal, and is sized so neighbouring pixels' surfels
//! overlap: in-plane scales `d / (sqrt(2) f)`, a tiny normal scale, and a
//! constant opacity of 0.9.

use nalgebra::{Rotation3, UnitQuaternion};

use crate::error::{contract, Result};
use crate::imageio::{Mask, RgbImage};
use crate::raster::ControlMaps;
use crate::scene::{Aabb, CameraIntrinsics, CameraPose, WORLD_UP};
use crate::{Mat3, Rgb, Vec3};

pub const SURFEL_OPACITY: f64 = 0.9;

const EPS_RELATIVE: f64 = 1e-4;
const EPS_FLOOR: f64 = 1e-7;
const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSurfel {
    pub position: Vec3,
    pub rotation: UnitQuaternion<f64>,
    /// `[s_x, s_y, eps]`; the third axis is the surface normal.
    pub scale: Vec3,
    pub opacity: f64,
    pub color: Rgb,
}

impl GaussianSurfel {
    pub fn frame(&self) -> Mat3 {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn normal(&self) -> Vec3 {
        self.frame().column(2).into_owned()
    }

    pub fn covariance(&self) -> Mat3 {
        let q = self.frame();
        q * Mat3::from_diagonal(&self.scale.component_mul(&self.scale)) * q.transpose()
    }

    /// Squared Mahalanobis distance of `x` from the center. Evaluated in the
    /// surfel frame so the thin normal axis does not cost precision.
    pub fn mahalanobis_sq(&self, x: &Vec3) -> f64 {
        let local = self.rotation.inverse_transform_vector(&(x - self.position));
        (local.x / self.scale.x).powi(2) + (local.y / self.scale.y).powi(2) + (local.z / self.scale.z).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scale;
        if !(s.x > 0.0 && s.y > 0.0 && s.z > 0.0 && s.z <= s.x.min(s.y)) {
            return Err(contract(format!("surfel scales {s:?} violate 0 < eps <= min(sx, sy)")));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(contract(format!("opacity {} outside [0, 1]", self.opacity)));
        }
        Ok(())
    }
}

/// `G(x) = exp(-1/2 (x-p)^T Sigma^-1 (x-p))`.
pub fn evaluate_kernel(surfel: &GaussianSurfel, x: &Vec3) -> f64 {
    (-0.5 * surfel.mahalanobis_sq(x)).exp()
}

/// Orthonormal frame with third column `n`: `Q_x = (u x n)/|u x n|`,
/// `Q_y = (n x Q_x)/|n x Q_x|`, with `u` the world up. When `n` is parallel
/// to up, `[0, 0, 1]` stands in for `u`.
pub fn frame_from_normal(n: &Vec3) -> Result<Mat3> {
    let len = n.norm();
    if !(len > 0.0) || !len.is_finite() {
        return Err(contract("surfel normal has zero length"));
    }
    if (len - 1.0).abs() > 1e-6 {
        return Err(contract(format!("surfel normal not unit length (|n| = {len})")));
    }
    let mut ux = WORLD_UP.cross(n);
    if ux.norm() < 1e-9 {
        ux = Vec3::z().cross(n);
    }
    let qx = ux / ux.norm();
    let qy = n.cross(&qx);
    let qy = qy / qy.norm();
    Ok(Mat3::from_columns(&[qx, qy, *n]))
}

/// `(d / (sqrt(2) f_x), d / (sqrt(2) f_y))`.
pub fn surfel_scales(depth: f64, k: &CameraIntrinsics) -> Result<(f64, f64)> {
    if !(depth > 0.0) {
        return Err(contract(format!("surfel depth must be positive, got {depth}")));
    }
    let r2 = std::f64::consts::SQRT_2;
    Ok((depth / (r2 * k.fx), depth / (r2 * k.fy)))
}

/// Normal-axis scale: small relative to the in-plane scales, never zero.
pub fn normal_scale(sx: f64, sy: f64) -> f64 {
    (EPS_RELATIVE * sx.min(sy)).max(EPS_FLOOR)
}

pub fn make_surfel(position: Vec3, normal: &Vec3, depth: f64, k: &CameraIntrinsics, color: Rgb) -> Result<GaussianSurfel> {
    let q = frame_from_normal(normal)?;
    let (sx, sy) = surfel_scales(depth, k)?;
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(q));
    Ok(GaussianSurfel {
        position,
        rotation,
        scale: Vec3::new(sx, sy, normal_scale(sx, sy)),
        opacity: SURFEL_OPACITY,
        color,
    })
}

/// One surfel per masked pixel, placed on the mesh through the pixel center
/// and colored with the pixel's RGB. Pixels are visited in row-major order.
pub fn lift_pixels(
    image: &RgbImage,
    maps: &ControlMaps,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    mask: &Mask,
) -> Result<Vec<GaussianSurfel>> {
    check_shapes(image, maps, mask)?;
    let mut out = Vec::with_capacity(mask.count());
    for y in 0..maps.height {
        for x in 0..maps.width {
            let i = y * maps.width + x;
            if !mask.data[i] {
                continue;
            }
            if !maps.valid[i] {
                return Err(contract(format!("masked pixel ({x}, {y}) has no geometry")));
            }
            let d = maps.depth[i];
            let p = pose.unproject(k, x, y, d);
            out.push(make_surfel(p, &maps.normal[i], d, k, image.data[i])?);
        }
    }
    Ok(out)
}

/// Lift masked no-geometry pixels onto a sphere of `radius` meters around the
/// camera, facing it. Geometry pixels in the mask are ignored.
pub fn lift_sky(
    image: &RgbImage,
    maps: &ControlMaps,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    mask: &Mask,
    radius: f64,
) -> Result<Vec<GaussianSurfel>> {
    check_shapes(image, maps, mask)?;
    let mut out = Vec::new();
    for y in 0..maps.height {
        for x in 0..maps.width {
            let i = y * maps.width + x;
            if !mask.data[i] || maps.valid[i] {
                continue;
            }
            let dir_cam = k.direction(x as f64 + 0.5, y as f64 + 0.5);
            let unit = dir_cam / dir_cam.norm();
            let z_depth = radius * unit.z;
            let world_dir = pose.rotation() * unit;
            let p = pose.position() + world_dir * radius;
            out.push(make_surfel(p, &(-world_dir), z_depth, k, image.data[i])?);
        }
    }
    Ok(out)
}

fn check_shapes(image: &RgbImage, maps: &ControlMaps, mask: &Mask) -> Result<()> {
    if (image.width, image.height) != (maps.width, maps.height) || !image.same_shape(mask) {
        return Err(contract("image, control maps and mask must share one resolution"));
    }
    Ok(())
}

/// Spatial bucket used for view-frustum culling.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub start: usize,
    pub end: usize,
    /// Bounds of the surfel centers, padded by three times the largest scale.
    pub bounds: Aabb,
}

/// Append-only surfel collection with per-surfel source-view provenance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianField {
    surfels: Vec<GaussianSurfel>,
    provenance: Vec<u32>,
    chunks: Vec<Chunk>,
}

impl GaussianField {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(surfels: Vec<GaussianSurfel>, provenance: Vec<u32>) -> Result<Self> {
        if surfels.len() != provenance.len() {
            return Err(contract("surfel and provenance counts differ"));
        }
        let mut f = GaussianField::new();
        let mut start = 0;
        while start < surfels.len() {
            let view = provenance[start];
            let end = provenance[start..].iter().position(|&v| v != view).map_or(surfels.len(), |o| start + o);
            f.append(view, surfels[start..end].to_vec());
            start = end;
        }
        Ok(f)
    }

    pub fn len(&self) -> usize {
        self.surfels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfels.is_empty()
    }

    pub fn surfels(&self) -> &[GaussianSurfel] {
        &self.surfels
    }

    pub fn provenance(&self) -> &[u32] {
        &self.provenance
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    /// Append one batch lifted from `view`; the culling index is extended
    /// in the same call.
    pub fn append(&mut self, view: u32, batch: Vec<GaussianSurfel>) {
        let first = self.surfels.len();
        self.surfels.extend(batch);
        self.provenance.resize(self.surfels.len(), view);
        let mut start = first;
        while start < self.surfels.len() {
            let end = (start + CHUNK).min(self.surfels.len());
            let mut bounds = Aabb::empty();
            for s in &self.surfels[start..end] {
                let pad = Vec3::repeat(3.0 * s.scale.max());
                bounds.grow(&(s.position - pad));
                bounds.grow(&(s.position + pad));
            }
            self.chunks.push(Chunk { start, end, bounds });
            start = end;
        }
    }

    /// Overwrite colors only; all other surfel properties stay untouched.
    pub fn set_colors(&mut self, colors: &[Rgb]) -> Result<()> {
        if colors.len() != self.surfels.len() {
            return Err(contract("color count does not match surfel count"));
        }
        for (s, c) in self.surfels.iter_mut().zip(colors) {
            s.color = *c;
        }
        Ok(())
    }

    pub fn colors(&self) -> Vec<Rgb> {
        self.surfels.iter().map(|s| s.color).collect()
    }
}
