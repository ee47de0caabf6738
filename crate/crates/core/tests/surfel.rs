mod common;

use common::{corridor_path, k256, mesh_distance, rng};
use meshsplat::imageio::Raster;
use meshsplat::raster::render_control_maps;
use meshsplat::scene::{toy, CameraIntrinsics, CameraPose, Scene};
use meshsplat::surfel::{
    evaluate_kernel, frame_from_normal, lift_pixels, make_surfel, surfel_scales, GaussianField, SURFEL_OPACITY,
};
use meshsplat::{Mat3, Vec3};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn scale_at_ten_meters_on_the_full_size_camera() {
    let k = CameraIntrinsics::from_horizontal_fov(960, 544, 45.0).unwrap();
    let f = 480.0 / (22.5f64.to_radians()).tan();
    assert!((k.fx - f).abs() < 1e-9 && (f - 1158.8).abs() < 0.05);
    let (sx, sy) = surfel_scales(10.0, &k).unwrap();
    assert!((sx - 10.0 / (2f64.sqrt() * f)).abs() < 1e-15);
    assert!((sx - 6.10e-3).abs() < 5e-6);
    assert_eq!(sx, sy);
}

#[test]
fn full_frame_lift_on_a_wall() {
    let k = k256();
    let scene = Scene::new(toy::facing_wall(10.0, 100.0, 100.0, 4, 1)).unwrap();
    let pose = CameraPose::looking(Vec3::zeros(), Vec3::z()).unwrap();
    let maps = render_control_maps(&scene, &pose, &k);
    assert!(maps.valid.iter().all(|&v| v));
    let img = Raster::filled(k.width, k.height, [0.2, 0.4, 0.6]);
    let mask = Raster::filled(k.width, k.height, true);
    let surfels = lift_pixels(&img, &maps, &pose, &k, &mask).unwrap();
    assert_eq!(surfels.len(), 36_864);
    assert!(surfels.iter().all(|s| s.opacity == SURFEL_OPACITY && s.opacity == 0.9));
    assert!(surfels.iter().all(|s| s.color == [0.2, 0.4, 0.6]));
    for s in &surfels {
        assert!((s.position.z - 10.0).abs() < 1e-9);
        assert!((s.normal() + Vec3::z()).norm() < 1e-12);
    }
}

#[test]
fn lifted_points_lie_on_the_mesh() {
    let k = k256();
    let (scene, path) = corridor_path(2, k);
    let pose = &path.poses[0];
    let maps = render_control_maps(&scene, pose, &k);
    let img = Raster::filled(k.width, k.height, [0.5; 3]);
    let mut mask = Raster::filled(k.width, k.height, false);
    let mut r = rng(2);
    for _ in 0..400 {
        let i = r.random_range(0..maps.len());
        mask.data[i] = maps.valid[i];
    }
    let surfels = lift_pixels(&img, &maps, pose, &k, &mask).unwrap();
    assert!(surfels.len() > 200);
    for s in &surfels {
        let d = mesh_distance(&scene.mesh, &s.position);
        assert!(d < 1e-5, "surfel {:?} is {d} m off the mesh", s.position);
    }
}

#[test]
fn lifting_an_invalid_pixel_is_rejected() {
    let k = k256();
    let scene = Scene::new(toy::facing_wall(10.0, 1.0, 1.0, 1, 1)).unwrap();
    let pose = CameraPose::looking(Vec3::zeros(), Vec3::z()).unwrap();
    let maps = render_control_maps(&scene, &pose, &k);
    let img = Raster::filled(k.width, k.height, [0.5; 3]);
    let mask = Raster::filled(k.width, k.height, true);
    assert!(lift_pixels(&img, &maps, &pose, &k, &mask).is_err());
}

#[test]
fn adjacent_surfels_overlap() {
    let k = k256();
    for d in [1.0, 10.0, 100.0] {
        let (sx, _) = surfel_scales(d, &k).unwrap();
        assert!(d / k.fx <= 2.0 * sx * 2f64.sqrt());
    }
}

#[test]
fn random_surfels_have_the_designed_covariance() {
    let k = k256();
    let mut r = rng(21);
    for _ in 0..1000 {
        let n = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)).normalize();
        let d = r.random_range(0.5..200.0);
        let s = make_surfel(Vec3::new(r.random(), r.random(), r.random()), &n, d, &k, [0.5; 3]).unwrap();
        let cov = s.covariance();
        assert!((cov - cov.transpose()).abs().max() < 1e-12);
        let eig = cov.symmetric_eigen();
        let mut got: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        got.sort_by(f64::total_cmp);
        let mut want = vec![s.scale.x.powi(2), s.scale.y.powi(2), s.scale.z.powi(2)];
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10);
        }
        assert!(got[0] > 0.0);
        let smallest = eig.eigenvalues.imin();
        assert!(eig.eigenvectors.column(smallest).dot(&n).abs() > 1.0 - 1e-9);
    }
}

#[test]
fn field_provenance_follows_appends() {
    let k = k256();
    let mut field = GaussianField::new();
    let s = make_surfel(Vec3::new(0.0, 0.0, 5.0), &-Vec3::z(), 5.0, &k, [0.1; 3]).unwrap();
    field.append(3, vec![s; 4]);
    field.append(7, vec![s; 2]);
    assert_eq!(field.provenance(), &[3, 3, 3, 3, 7, 7]);
    assert_eq!(field.len(), 6);
}

proptest! {
    #[test]
    fn frames_are_rotations_with_normal_third_axis(x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64) {
        let v = Vec3::new(x, y, z);
        prop_assume!(v.norm() > 1e-3);
        let n = v.normalize();
        let q = frame_from_normal(&n).unwrap();
        prop_assert!((q.transpose() * q - Mat3::identity()).abs().max() < 1e-12);
        prop_assert!((q.determinant() - 1.0).abs() < 1e-12);
        prop_assert!(q.column(2).dot(&n) > 1.0 - 1e-12);
    }

    #[test]
    fn in_plane_kernel_lies_in_unit_interval(a in -3.0..3.0f64, b in -3.0..3.0f64, d in 1.0..50.0f64) {
        let k = k256();
        let s = make_surfel(Vec3::new(1.0, 2.0, 3.0), &Vec3::new(0.0, 0.6, -0.8), d, &k, [0.5; 3]).unwrap();
        let q = s.frame();
        let x = s.position + q.column(0) * (a * s.scale.x) + q.column(1) * (b * s.scale.y);
        let g = evaluate_kernel(&s, &x);
        prop_assert!(g > 0.0 && g <= 1.0);
        prop_assert!((g - (-0.5 * (a * a + b * b)).exp()).abs() < 1e-12);
    }
}
