#![allow(dead_code)]

use meshsplat::genbackend::{oracle_texture, TemplateLibrary};
use meshsplat::pipeline::RunResult;
use meshsplat::raster::render_control_maps;
use meshsplat::scene::{toy, CameraIntrinsics, CameraPath, LabeledMesh, Scene};
use meshsplat::Vec3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn k256() -> CameraIntrinsics {
    CameraIntrinsics::from_horizontal_fov(256, 144, 45.0).unwrap()
}

pub fn corridor() -> (toy::Corridor, Scene) {
    let c = toy::Corridor::default();
    let scene = Scene::new(c.build()).unwrap();
    (c, scene)
}

pub fn corridor_path(views: usize, k: CameraIntrinsics) -> (Scene, CameraPath) {
    let (c, scene) = corridor();
    let path = c.path(views, 1.0, k).unwrap();
    (scene, path)
}

/// Closest hit over every face, by ray/plane intersection and a same-side
/// edge test. Returns (face, ray parameter).
pub fn brute_force_hit(mesh: &LabeledMesh, origin: &Vec3, dir: &Vec3, cull: bool) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for f in 0..mesh.face_count() {
        let [a, b, c] = mesh.face_vertices(f);
        let n = (b - a).cross(&(c - a));
        let denom = n.dot(dir);
        if denom == 0.0 || (cull && denom >= 0.0) {
            continue;
        }
        let t = n.dot(&(a - origin)) / denom;
        if t <= 1e-9 {
            continue;
        }
        let p = origin + dir * t;
        let inside = [(a, b), (b, c), (c, a)].iter().all(|(u, v)| (v - u).cross(&(p - u)).dot(&n) >= 0.0);
        if inside && best.is_none_or(|(_, bt)| t < bt) {
            best = Some((f, t));
        }
    }
    best
}

/// Distance from `p` to the closest point of triangle `abc`.
pub fn point_triangle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let n = (b - a).cross(&(c - a)).normalize();
    let proj = p - n * n.dot(&(p - a));
    let inside = [(a, b), (b, c), (c, a)].iter().all(|(u, v)| (*v - *u).cross(&(proj - *u)).dot(&n) >= 0.0);
    if inside {
        return (p - proj).norm();
    }
    [(a, b), (b, c), (c, a)]
        .iter()
        .map(|(u, v)| {
            let e = *v - *u;
            let s = ((p - *u).dot(&e) / e.dot(&e)).clamp(0.0, 1.0);
            (p - (*u + e * s)).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn mesh_distance(mesh: &LabeledMesh, p: &Vec3) -> f64 {
    (0..mesh.face_count())
        .map(|f| {
            let [a, b, c] = mesh.face_vertices(f);
            point_triangle_distance(p, &a, &b, &c)
        })
        .fold(f64::INFINITY, f64::min)
}

/// PSNR (peak 1) over the pixels where `keep` holds.
pub fn psnr_where(a: &[[f64; 3]], b: &[[f64; 3]], keep: impl Fn(usize) -> bool) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for i in (0..a.len()).filter(|&i| keep(i)) {
        sum += (0..3).map(|c| (a[i][c] - b[i][c]).powi(2)).sum::<f64>();
        n += 3;
    }
    assert!(n > 0, "no pixels selected");
    -10.0 * (sum / n as f64).log10()
}

/// Checks every geometry surfel lifted at one of `views` against the oracle
/// texture at the pixel it was lifted from. Returns (checked, mismatched).
pub fn stage1_mismatches(result: &RunResult, scene: &Scene, path: &CameraPath, views: &[usize]) -> (usize, usize) {
    let k = &path.intrinsics;
    let (mut checked, mut bad) = (0, 0);
    for &v in views {
        let pose = &path.poses[v];
        let maps = render_control_maps(scene, pose, k);
        for (s, _) in result.field.surfels().iter().zip(result.field.provenance()).filter(|(_, &p)| p as usize == v) {
            let (u, w) = k.project(&pose.world_to_camera(&s.position));
            if !(u >= 0.0 && w >= 0.0 && u < k.width as f64 && w < k.height as f64) {
                continue;
            }
            let (x, y) = (u as usize, w as usize);
            let i = y * k.width + x;
            if !maps.valid[i] || pose.unproject(k, x, y, maps.depth[i]) != s.position {
                continue;
            }
            checked += 1;
            bad += (s.color != oracle_texture(&s.position, &maps.normal[i], maps.semantic[i], maps.instance[i])) as usize;
        }
    }
    (checked, bad)
}

/// Posterior mean at continuous `s = sigma / alpha`.
pub fn posterior(y: &[f64], s: f64, lib: &TemplateLibrary) -> Vec<f64> {
    let logits: Vec<f64> = lib
        .templates
        .iter()
        .zip(&lib.weights)
        .map(|(mu, w)| w.ln() - y.iter().zip(mu).map(|(a, m)| (a - m).powi(2)).sum::<f64>() / (2.0 * s * s))
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    (0..y.len()).map(|i| lib.templates.iter().zip(&e).map(|(mu, ek)| ek / z * mu[i]).sum()).collect()
}

/// RK4 on the probability-flow ODE in `y = x / alpha`, `u = ln(sigma / alpha)`,
/// where it reads `dy/du = y - E[x_0 | y]`.
pub fn flow(y: &[f64], from: f64, to: f64, steps: usize, lib: &TemplateLibrary) -> Vec<f64> {
    let (u0, u1) = (from.ln(), to.ln());
    let h = (u1 - u0) / steps as f64;
    let f = |y: &[f64], u: f64| -> Vec<f64> {
        let m = posterior(y, u.exp(), lib);
        y.iter().zip(&m).map(|(a, b)| a - b).collect()
    };
    let axpy = |y: &[f64], k: &[f64], c: f64| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + c * b).collect() };
    let mut y = y.to_vec();
    for i in 0..steps {
        let u = u0 + h * i as f64;
        let k1 = f(&y, u);
        let k2 = f(&axpy(&y, &k1, h / 2.0), u + h / 2.0);
        let k3 = f(&axpy(&y, &k2, h / 2.0), u + h / 2.0);
        let k4 = f(&axpy(&y, &k3, h), u + h);
        for j in 0..y.len() {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    y
}
