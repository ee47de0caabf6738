use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Ray;
use crate::{Mat3, Vec3};

/// Global up direction. Cameras look along their local +Z with image x to the
/// right and image y down.
pub const WORLD_UP: Vec3 = Vec3::new(0.0, 1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, principal point at the image center, `fov_deg` measured
    /// across the image width.
    pub fn from_horizontal_fov(width: usize, height: usize, fov_deg: f64) -> Result<Self> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::Validation(format!("field of view {fov_deg} out of (0, 180)")));
        }
        let f = (width as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Validation(format!("focal lengths must be positive ({}, {})", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("raster size must be non-zero".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::Validation(format!("principal point ({}, {}) outside raster", self.cx, self.cy)));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Camera-frame direction through continuous pixel coordinate `(u, v)`,
    /// scaled so its Z component is 1.
    #[inline]
    pub fn direction(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Continuous pixel coordinate of a camera-frame point (Z > 0).
    #[inline]
    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rotation: Mat3,
    position: Vec3,
}

impl CameraPose {
    pub fn new(rotation: Mat3, position: Vec3) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Mat3::identity()).amax();
        if !(err < 1e-9) || !((rotation.determinant() - 1.0).abs() < 1e-9) {
            return Err(Error::Validation(format!(
                "rotation is not proper orthonormal (|RtR - I| = {err:e}, det = {})",
                rotation.determinant()
            )));
        }
        Ok(CameraPose { rotation, position })
    }

    /// Camera at `position` looking along `forward`, image y pointing away
    /// from [`WORLD_UP`].
    pub fn looking(position: Vec3, forward: Vec3) -> Result<Self> {
        let z = forward
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Validation("zero forward vector".into()))?;
        let down = -WORLD_UP;
        let y = down - z * z.dot(&down);
        let y = y
            .try_normalize(1e-9)
            .ok_or_else(|| Error::Validation("forward vector parallel to world up".into()))?;
        let x = y.cross(&z);
        Self::new(Mat3::from_columns(&[x, y, z]), position)
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn position(&self) -> &Vec3 {
        &self.position
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.tr_mul(&(p - self.position))
    }

    #[inline]
    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.position
    }

    /// World-space ray through the center of pixel `(x, y)`. The direction
    /// has unit camera-frame Z, so the hit parameter is the Z depth.
    #[inline]
    pub fn pixel_ray(&self, k: &CameraIntrinsics, x: usize, y: usize) -> Ray {
        let d = k.direction(x as f64 + 0.5, y as f64 + 0.5);
        Ray::new(self.position, self.rotation * d)
    }

    /// World point at Z depth `depth` behind the center of pixel `(x, y)`.
    #[inline]
    pub fn unproject(&self, k: &CameraIntrinsics, x: usize, y: usize, depth: f64) -> Vec3 {
        self.camera_to_world(&(k.direction(x as f64 + 0.5, y as f64 + 0.5) * depth))
    }

    /// Row-major `[R | t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.position;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    pub fn from_row_major(m: &[f64; 12]) -> Result<Self> {
        let r = Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Self::new(r, Vec3::new(m[3], m[7], m[11]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraPath {
    pub poses: Vec<CameraPose>,
    pub intrinsics: CameraIntrinsics,
}

impl CameraPath {
    pub fn new(poses: Vec<CameraPose>, intrinsics: CameraIntrinsics) -> Result<Self> {
        if poses.len() < 2 {
            return Err(Error::Validation(format!("camera path needs at least 2 poses, got {}", poses.len())));
        }
        intrinsics.validate()?;
        Ok(CameraPath { poses, intrinsics })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Contiguous sub-path `[start, end)` sharing the intrinsics.
    pub fn slice(&self, start: usize, end: usize) -> CameraPath {
        CameraPath { poses: self.poses[start..end].to_vec(), intrinsics: self.intrinsics }
    }
}

/// Vehicle-style path: `count` poses `spacing` meters apart along a
/// horizontal `direction`, all facing forward.
pub fn make_straight_path(
    start: Vec3,
    direction: Vec3,
    count: usize,
    spacing: f64,
    intrinsics: CameraIntrinsics,
) -> Result<CameraPath> {
    if count < 2 {
        return Err(Error::Validation(format!("path needs at least 2 poses, got {count}")));
    }
    if direction.y != 0.0 || (direction.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("direction {direction:?} must be a horizontal unit vector")));
    }
    if !(spacing > 0.0) {
        return Err(Error::Validation(format!("spacing {spacing} must be positive")));
    }
    let base = CameraPose::looking(start, direction)?;
    let poses = (0..count)
        .map(|i| CameraPose { rotation: base.rotation, position: start + direction * (spacing * i as f64) })
        .collect();
    CameraPath::new(poses, intrinsics)
}

#[derive(Serialize, Deserialize)]
struct PathFile {
    intrinsics: CameraIntrinsics,
    frames: Vec<[f64; 12]>,
}

/// JSON with `intrinsics {fx, fy, cx, cy, width, height}` and `frames`, each a
/// row-major camera-to-world `[R|t]`.
pub fn write_path_file(path: &Path, cam_path: &CameraPath) -> Result<()> {
    let file = PathFile {
        intrinsics: cam_path.intrinsics,
        frames: cam_path.poses.iter().map(CameraPose::to_row_major).collect(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_path_file(path: &Path) -> Result<CameraPath> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: PathFile = serde_json::from_str(&text)?;
    let poses = file.frames.iter().map(CameraPose::from_row_major).collect::<Result<Vec<_>>>()?;
    CameraPath::new(poses, file.intrinsics)
}
