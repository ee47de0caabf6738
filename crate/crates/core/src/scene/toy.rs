//! Procedural test scenes: cubes, walls, and a city-street corridor.

use crate::scene::{make_straight_path, CameraIntrinsics, CameraPath, LabeledMesh};
use crate::Vec3;

pub const SEM_ROAD: u16 = 1;
pub const SEM_SIDEWALK: u16 = 2;
pub const SEM_BUILDING: u16 = 3;
pub const SEM_POLE: u16 = 4;
pub const SEM_WALL: u16 = 5;

#[derive(Debug, Default, Clone)]
pub struct MeshBuilder {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    semantic: Vec<u16>,
    instance: Vec<u32>,
}

impl MeshBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Planar quad `p0 p1 p2 p3` (counter-clockwise seen from the front, so
    /// the normal is `(p1 - p0) x (p3 - p0)`), split into `nu x nv` cells.
    pub fn quad(&mut self, p: [Vec3; 4], nu: usize, nv: usize, semantic: u16, instance: u32) -> &mut Self {
        let (nu, nv) = (nu.max(1), nv.max(1));
        let base = self.vertices.len() as u32;
        for j in 0..=nv {
            let b = j as f64 / nv as f64;
            for i in 0..=nu {
                let a = i as f64 / nu as f64;
                let bottom = p[0] + (p[1] - p[0]) * a;
                let top = p[3] + (p[2] - p[3]) * a;
                self.vertices.push(bottom + (top - bottom) * b);
            }
        }
        let row = nu as u32 + 1;
        for j in 0..nv as u32 {
            for i in 0..nu as u32 {
                let v00 = base + j * row + i;
                let v10 = v00 + 1;
                let v01 = v00 + row;
                let v11 = v01 + 1;
                self.push_tri([v00, v10, v11], semantic, instance);
                self.push_tri([v00, v11, v01], semantic, instance);
            }
        }
        self
    }

    /// Axis-aligned box with outward-facing normals; `cell` sets the target
    /// edge length of the subdivision grid.
    pub fn cuboid(&mut self, min: Vec3, max: Vec3, cell: f64, semantic: u16, instance: u32) -> &mut Self {
        let v = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
        let (a, b) = (min, max);
        let n = |len: f64| ((len / cell).round() as usize).max(1);
        let (nx, ny, nz) = (n(b.x - a.x), n(b.y - a.y), n(b.z - a.z));
        // -z, +z, -x, +x, -y, +y
        self.quad([v(b.x, a.y, a.z), v(a.x, a.y, a.z), v(a.x, b.y, a.z), v(b.x, b.y, a.z)], nx, ny, semantic, instance);
        self.quad([v(a.x, a.y, b.z), v(b.x, a.y, b.z), v(b.x, b.y, b.z), v(a.x, b.y, b.z)], nx, ny, semantic, instance);
        self.quad([v(a.x, a.y, a.z), v(a.x, a.y, b.z), v(a.x, b.y, b.z), v(a.x, b.y, a.z)], nz, ny, semantic, instance);
        self.quad([v(b.x, a.y, b.z), v(b.x, a.y, a.z), v(b.x, b.y, a.z), v(b.x, b.y, b.z)], nz, ny, semantic, instance);
        self.quad([v(a.x, a.y, a.z), v(b.x, a.y, a.z), v(b.x, a.y, b.z), v(a.x, a.y, b.z)], nx, nz, semantic, instance);
        self.quad([v(a.x, b.y, b.z), v(b.x, b.y, b.z), v(b.x, b.y, a.z), v(a.x, b.y, a.z)], nx, nz, semantic, instance);
        self
    }

    fn push_tri(&mut self, t: [u32; 3], semantic: u16, instance: u32) {
        self.triangles.push(t);
        self.semantic.push(semantic);
        self.instance.push(instance);
    }

    pub fn face_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn build(self) -> LabeledMesh {
        LabeledMesh::new(self.vertices, self.triangles, self.semantic, self.instance)
            .expect("builder produces valid meshes")
    }
}

/// Cube spanning `[-0.5, 0.5]^3`, 12 faces.
pub fn unit_cube(semantic: u16, instance: u32) -> LabeledMesh {
    let mut b = MeshBuilder::new();
    b.cuboid(Vec3::repeat(-0.5), Vec3::repeat(0.5), 1.0, semantic, instance);
    b.build()
}

/// Wall in the plane `z = distance`, facing the -Z direction (toward a camera
/// at the origin looking along +Z).
pub fn facing_wall(distance: f64, half_width: f64, half_height: f64, cells: usize, instance: u32) -> LabeledMesh {
    let mut b = MeshBuilder::new();
    let (w, h) = (half_width, half_height);
    b.quad(
        [
            Vec3::new(w, -h, distance),
            Vec3::new(-w, -h, distance),
            Vec3::new(-w, h, distance),
            Vec3::new(w, h, distance),
        ],
        cells,
        cells,
        SEM_WALL,
        instance,
    );
    b.build()
}

/// Near occluder panel in front of a far wall, both facing a camera at the
/// origin looking along +Z.
pub fn two_planes(near: f64, far: f64) -> LabeledMesh {
    let wall = facing_wall(far, 40.0, 25.0, 4, 1);
    let mut b = MeshBuilder::new();
    b.quad(
        [
            Vec3::new(1.5, -1.0, near),
            Vec3::new(-0.5, -1.0, near),
            Vec3::new(-0.5, 1.5, near),
            Vec3::new(1.5, 1.5, near),
        ],
        2,
        2,
        SEM_POLE,
        2,
    );
    wall.merged(&b.build())
}

/// Camera height above the road used by the corridor paths.
pub const CORRIDOR_CAMERA_HEIGHT: f64 = 6.0;

/// Parameters of the street corridor scene. The street runs along +Z,
/// centered on x = 0 with the road surface at y = 0.
#[derive(Debug, Clone)]
pub struct Corridor {
    /// Road extent along Z: `[z_start, z_end]`.
    pub z_start: f64,
    pub z_end: f64,
    /// Distance from the street axis to the building facades.
    pub half_width: f64,
    /// Width of each sidewalk strip in front of the facades.
    pub sidewalk: f64,
    /// Building lots along each side: (length along Z, gap after it).
    pub lot_length: f64,
    pub lot_gap: f64,
    pub building_depth: f64,
    /// Facade subdivision edge length (meters).
    pub cell: f64,
    /// Optional square pillar `(x, z, half_size, height)`.
    pub pillar: Option<(f64, f64, f64, f64)>,
    /// Closing wall at the far end of the street.
    pub end_wall: bool,
}

impl Default for Corridor {
    fn default() -> Self {
        Corridor {
            z_start: -30.0,
            z_end: 140.0,
            half_width: 30.0,
            sidewalk: 5.0,
            lot_length: 16.0,
            lot_gap: 4.0,
            building_depth: 10.0,
            cell: 3.0,
            pillar: None,
            end_wall: true,
        }
    }
}

impl Corridor {
    /// Forward-facing path down the street axis starting at `z = 0`, one
    /// view per `spacing` meters.
    pub fn path(&self, views: usize, spacing: f64, k: CameraIntrinsics) -> crate::Result<CameraPath> {
        make_straight_path(Vec3::new(0.0, CORRIDOR_CAMERA_HEIGHT, 0.0), Vec3::z(), views, spacing, k)
    }

    /// Deterministic building heights in `[12, 26)` meters.
    fn height(side: usize, lot: usize) -> f64 {
        let h = (side as u64 * 7919 + lot as u64 * 104729).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40;
        12.0 + (h % 1400) as f64 / 100.0
    }

    pub fn build(&self) -> LabeledMesh {
        let mut b = MeshBuilder::new();
        let v = Vec3::new;
        let road_half = self.half_width - self.sidewalk;
        let len = self.z_end - self.z_start;
        let along = ((len / (2.0 * self.cell)).round() as usize).max(1);
        // road, facing +Y
        b.quad(
            [
                v(road_half, 0.0, self.z_start),
                v(-road_half, 0.0, self.z_start),
                v(-road_half, 0.0, self.z_end),
                v(road_half, 0.0, self.z_end),
            ],
            4,
            along,
            SEM_ROAD,
            1,
        );
        // sidewalks slightly raised
        for (side, sign) in [(0usize, 1.0f64), (1, -1.0)] {
            let (x0, x1) = (sign * road_half, sign * (self.half_width + self.building_depth + 2.0));
            let (lo, hi) = if sign > 0.0 { (x0, x1) } else { (x1, x0) };
            b.quad(
                [v(hi, 0.15, self.z_start), v(lo, 0.15, self.z_start), v(lo, 0.15, self.z_end), v(hi, 0.15, self.z_end)],
                2,
                along,
                SEM_SIDEWALK,
                2 + side as u32,
            );
            // curb face toward the street
            let curb = sign * road_half;
            let (za, zb) = if sign > 0.0 { (self.z_start, self.z_end) } else { (self.z_end, self.z_start) };
            b.quad([v(curb, 0.0, za), v(curb, 0.0, zb), v(curb, 0.15, zb), v(curb, 0.15, za)], along, 1, SEM_SIDEWALK, 2 + side as u32);
        }
        // building lots on both sides
        let mut instance = 10;
        for side in 0..2usize {
            let sign = if side == 0 { 1.0 } else { -1.0 };
            let mut z = self.z_start;
            let mut lot = 0;
            while z < self.z_end {
                let z1 = (z + self.lot_length).min(self.z_end);
                let h = Self::height(side, lot);
                let (x_near, x_far) = (sign * self.half_width, sign * (self.half_width + self.building_depth));
                let (xmin, xmax) = if sign > 0.0 { (x_near, x_far) } else { (x_far, x_near) };
                b.cuboid(v(xmin, 0.15, z), v(xmax, h, z1), self.cell, SEM_BUILDING, instance);
                instance += 1;
                lot += 1;
                z = z1 + self.lot_gap;
            }
        }
        if let Some((px, pz, hs, ph)) = self.pillar {
            b.cuboid(v(px - hs, 0.0, pz - hs), v(px + hs, ph, pz + hs), 0.5, SEM_POLE, 500);
        }
        if self.end_wall {
            let w = self.half_width + self.building_depth + 2.0;
            let z = self.z_end;
            b.quad([v(w, 0.0, z), v(-w, 0.0, z), v(-w, 30.0, z), v(w, 30.0, z)], 8, 6, SEM_BUILDING, 900);
        }
        b.build()
    }
}

/// Random triangle soup for acceleration-structure tests.
pub fn random_soup(faces: usize, seed: u64) -> LabeledMesh {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut b = MeshBuilder::new();
    for f in 0..faces {
        let c = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let base = b.vertices.len() as u32;
        for _ in 0..3 {
            let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            b.vertices.push(c + d);
        }
        b.push_tri([base, base + 1, base + 2], (f % 5) as u16, f as u32);
    }
    b.build()
}
