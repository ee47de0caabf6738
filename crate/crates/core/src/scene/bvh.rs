//! Bounding volume hierarchy over mesh triangles.

use crate::error::{Error, Result};
use crate::scene::LabeledMesh;
use crate::Vec3;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    inv_dir: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        Ray { origin, dir, inv_dir: dir.map(|d| 1.0 / d) }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Closest-hit record: `t` is the ray parameter (distance for a unit
/// direction), `bary` the weights of the face's three vertices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub face: u32,
    pub t: f64,
    pub bary: [f64; 3],
}

impl Hit {
    /// Hit ordering used everywhere: nearer first, lower face id on ties.
    #[inline]
    pub fn closer_than(&self, other: &Hit) -> bool {
        self.t < other.t || (self.t == other.t && self.face < other.face)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb { min: Vec3::repeat(f64::INFINITY), max: Vec3::repeat(f64::NEG_INFINITY) }
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&o.min), max: self.max.sup(&o.max) }
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    /// Slab test; returns the entry distance if the box is hit before `t_max`.
    #[inline]
    pub fn hit(&self, ray: &Ray, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            let inv = ray.inv_dir[a];
            let mut near = (self.min[a] - ray.origin[a]) * inv;
            let mut far = (self.max[a] - ray.origin[a]) * inv;
            if near.is_nan() || far.is_nan() {
                // origin exactly on a slab plane with zero direction component
                if ray.origin[a] < self.min[a] || ray.origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

/// Moller-Trumbore. With `cull_backfaces`, triangles whose geometric normal
/// faces along the ray are skipped.
#[inline]
pub fn intersect_triangle(ray: &Ray, tri: &[Vec3; 3], normal: &Vec3, cull_backfaces: bool) -> Option<(f64, [f64; 3])> {
    if cull_backfaces && normal.dot(&ray.dir) >= 0.0 {
        return None;
    }
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = ray.dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    if t <= 1e-9 {
        return None;
    }
    Some((t, [1.0 - u - v, u, v]))
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: u32, count: u32 },
    Inner { bounds: Aabb, left: u32, right: u32 },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    faces: Vec<u32>,
}

impl Bvh {
    pub fn build(mesh: &LabeledMesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::Validation("cannot build a BVH over an empty mesh".into()));
        }
        let n = mesh.face_count();
        let mut boxes = Vec::with_capacity(n);
        let mut centroids = Vec::with_capacity(n);
        for f in 0..n {
            let tri = mesh.face_vertices(f);
            let mut b = Aabb::empty();
            tri.iter().for_each(|p| b.grow(p));
            boxes.push(b);
            centroids.push((tri[0] + tri[1] + tri[2]) / 3.0);
        }
        let mut faces: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::with_capacity(2 * n / LEAF_SIZE + 1);
        build_node(&mut nodes, &mut faces, 0, n, &boxes, &centroids);
        Ok(Bvh { nodes, faces })
    }

    pub fn bounds(&self) -> Aabb {
        *self.nodes[0].bounds()
    }

    pub fn closest_hit(&self, mesh: &LabeledMesh, ray: &Ray, cull_backfaces: bool) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        let normals = mesh.face_normal();
        while let Some(idx) = stack.pop() {
            let node = &self.nodes[idx as usize];
            let t_max = best.map_or(f64::INFINITY, |h| h.t);
            // `<=` keeps equal-distance candidates alive for the face-id tie-break
            match node.bounds().hit(ray, t_max) {
                Some(t_enter) if t_enter <= t_max => {}
                _ => continue,
            }
            match *node {
                Node::Leaf { start, count, .. } => {
                    for &f in &self.faces[start as usize..(start + count) as usize] {
                        let tri = mesh.face_vertices(f as usize);
                        if let Some((t, bary)) = intersect_triangle(ray, &tri, &normals[f as usize], cull_backfaces) {
                            let hit = Hit { face: f, t, bary };
                            if best.is_none_or(|b| hit.closer_than(&b)) {
                                best = Some(hit);
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[left as usize].bounds().hit(ray, t_max);
                    let dr = self.nodes[right as usize].bounds().hit(ray, t_max);
                    match (dl, dr) {
                        (Some(a), Some(b)) => {
                            // push the farther child first so the nearer is popped first
                            if a <= b {
                                stack.push(right);
                                stack.push(left);
                            } else {
                                stack.push(left);
                                stack.push(right);
                            }
                        }
                        (Some(_), None) => stack.push(left),
                        (None, Some(_)) => stack.push(right),
                        (None, None) => {}
                    }
                }
            }
        }
        best
    }
}

fn build_node(
    nodes: &mut Vec<Node>,
    faces: &mut [u32],
    start: usize,
    end: usize,
    boxes: &[Aabb],
    centroids: &[Vec3],
) -> u32 {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &f in &faces[start..end] {
        bounds = bounds.union(&boxes[f as usize]);
        cbounds.grow(&centroids[f as usize]);
    }
    let idx = nodes.len() as u32;
    let count = end - start;
    let extent = cbounds.max - cbounds.min;
    if count <= LEAF_SIZE || extent.max() <= 0.0 {
        nodes.push(Node::Leaf { bounds, start: start as u32, count: count as u32 });
        return idx;
    }
    let axis = extent.imax();
    let mid = start + count / 2;
    faces[start..end].select_nth_unstable_by(count / 2, |&a, &b| {
        centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis]).then(a.cmp(&b))
    });
    nodes.push(Node::Leaf { bounds, start: 0, count: 0 });
    let left = build_node(nodes, faces, start, mid, boxes, centroids);
    let right = build_node(nodes, faces, mid, end, boxes, centroids);
    nodes[idx as usize] = Node::Inner { bounds, left, right };
    idx
}
