//! Labeled meshes, pinhole cameras, camera paths and ray queries.

mod bvh;
mod camera;
mod mesh;
pub mod toy;

pub use bvh::{intersect_triangle, Aabb, Bvh, Hit, Ray};
pub use camera::{make_straight_path, read_path_file, write_path_file, CameraIntrinsics, CameraPath, CameraPose, WORLD_UP};
pub use mesh::{load_mesh, write_mesh, LabeledMesh};

/// A mesh together with its acceleration structure.
#[derive(Debug, Clone)]
pub struct Scene {
    pub mesh: LabeledMesh,
    pub bvh: Bvh,
}

impl Scene {
    pub fn new(mesh: LabeledMesh) -> crate::Result<Self> {
        let bvh = Bvh::build(&mesh)?;
        Ok(Scene { mesh, bvh })
    }

    /// Closest front-facing hit.
    pub fn cast(&self, ray: &Ray) -> Option<Hit> {
        self.bvh.closest_hit(&self.mesh, ray, true)
    }
}
