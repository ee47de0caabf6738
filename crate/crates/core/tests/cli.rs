mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::k256;
use meshsplat::config::RunConfig;
use meshsplat::export::{logit, read_ply, splat_record, surfel_from_record, write_field, write_ply, PLY_PROPERTIES, SH_C0};
use meshsplat::genbackend::OracleBackend;
use meshsplat::imageio::Raster;
use meshsplat::metrics::{evaluate, REPORT_KEYS};
use meshsplat::raster::render_control_maps;
use meshsplat::scene::{toy, CameraPath, CameraPose, Scene};
use meshsplat::surfel::{lift_pixels, make_surfel, GaussianField};
use meshsplat::Vec3;
use sha2::{Digest, Sha256};

const TOY: &str = r#"
seed = 3
tau = 1.0
keyframe_gca = false

[scene]
toy = "corridor"

[camera]
views = 4
width = 64
height = 36

[aginpaint]
n_g = 10
"#;

fn meshsplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meshsplat")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn sha(path: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

#[test]
fn ply_records_follow_the_splat_convention() {
    let k = k256();
    let gray = make_surfel(Vec3::new(1.0, 2.0, 3.0), &Vec3::new(0.0, 0.0, -1.0), 3.0, &k, [0.5; 3]).unwrap();
    let r = splat_record(&gray);
    assert_eq!(&r[6..9], &[0.0; 3]);
    assert!((r[9] as f64 - 2.1972).abs() < 1e-4);
    assert!((logit(0.9) - 2.1972).abs() < 1e-4);
    assert_eq!(&r[3..6], &[0.0, 0.0, -1.0]);
    let c = make_surfel(Vec3::zeros(), &Vec3::x(), 3.0, &k, [0.8, 0.1, 0.5]).unwrap();
    assert!(((splat_record(&c)[6] as f64) - 0.3 / SH_C0).abs() < 1e-5);
}

#[test]
fn ply_round_trip_is_float32_exact() {
    let k = k256();
    let scene = Scene::new(toy::facing_wall(10.0, 50.0, 50.0, 4, 2)).unwrap();
    let pose = CameraPose::looking(Vec3::zeros(), Vec3::z()).unwrap();
    let maps = render_control_maps(&scene, &pose, &k);
    let img = Raster::from_vec(k.width, k.height, (0..k.pixel_count()).map(|i| [(i % 7) as f64 / 7.0, 0.3, 0.9]).collect()).unwrap();
    let mut field = GaussianField::new();
    field.append(0, lift_pixels(&img, &maps, &pose, &k, &Raster::filled(k.width, k.height, true)).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("f.ply");
    write_ply(&file, &field).unwrap();
    let text = std::fs::read(&file).unwrap();
    let end = text.windows(11).position(|w| w == b"end_header\n").unwrap();
    let header = String::from_utf8_lossy(&text[..end]);
    assert!(header.starts_with("ply\nformat binary_little_endian 1.0\n"));
    for p in PLY_PROPERTIES {
        assert!(header.contains(&format!("property float {p}\n")));
    }
    let records = read_ply(&file).unwrap();
    assert_eq!(records.len(), field.len());
    for (rec, s) in records.iter().zip(field.surfels()) {
        assert_eq!(*rec, splat_record(s));
        assert_eq!(splat_record(&surfel_from_record(rec)), *rec);
    }
    assert!(write_ply(&dir.path().join("empty.ply"), &GaussianField::new()).is_err());
}

#[test]
fn config_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    assert!(RunConfig::from_toml_str(TOY, base).is_ok());
    for bad in [
        "[scene]\nmesh = \"missing.ply\"\n",
        "[scene]\ntoy = \"corridor\"\nmesh = \"x.ply\"\n",
        "tau = 0.3\n",
        "[scene]\ntoy = \"corridor\"\n[camera]\nviews = 1\n",
        "[scene]\ntoy = \"corridor\"\n[camera]\nwidht = 64\n",
        "bogus = 1\n[scene]\ntoy = \"corridor\"\n",
        "tau = 0.0\n[scene]\ntoy = \"corridor\"\n",
        "[scene]\ntoy = \"corridor\"\n[gca]\nw_end = 2.0\n",
    ] {
        assert!(RunConfig::from_toml_str(bad, base).is_err(), "{bad}");
    }
}

#[test]
fn missing_mesh_exits_with_a_config_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write(dir.path(), "bad.toml", &format!("output = {:?}\n[scene]\nmesh = \"nowhere.ply\"\n", out));
    let o = meshsplat(&["synth", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.ply"));
    assert!(!out.exists());
}

#[test]
fn toy_synth_writes_field_frames_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "toy.toml", TOY);
    let out = dir.path().join("out");
    let o = meshsplat(&["synth", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("field.ply").is_file() && out.join("field.surf").is_file());
    for v in 0..4 {
        assert!(out.join(format!("frames/frame_{v:04}.png")).is_file());
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["keyframes"], serde_json::json!([0, 3]));

    let again = dir.path().join("again");
    assert!(meshsplat(&["synth", "--config", &cfg, "--out", again.to_str().unwrap()]).status.success());
    assert_eq!(sha(&out.join("field.ply")), sha(&again.join("field.ply")));

    let exported = dir.path().join("export.ply");
    let surf = out.join("field.surf");
    assert!(meshsplat(&["export-splats", "--field", surf.to_str().unwrap(), "--out", exported.to_str().unwrap()]).status.success());
    assert_eq!(sha(&exported), sha(&out.join("field.ply")));

    let o = meshsplat(&["metrics", "--config", &cfg, "--field", surf.to_str().unwrap(), "--views", "0..2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let keys: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    let mut want = REPORT_KEYS.to_vec();
    want.sort_unstable();
    let mut got = keys.clone();
    got.sort_unstable();
    assert_eq!(got, want);
    assert_eq!(report["views"].as_array().unwrap().len(), 2);

    let o = meshsplat(&["render-path", "--config", &cfg, "--field", surf.to_str().unwrap(), "--views", "9"]);
    assert_eq!(o.status.code(), Some(2));
    let empty = dir.path().join("empty.surf");
    write_field(&empty, &GaussianField::new()).unwrap();
    let o = meshsplat(&["export-splats", "--field", empty.to_str().unwrap(), "--out", dir.path().join("e.ply").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn metrics_on_fresh_and_empty_fields() {
    let k = k256();
    let c = toy::Corridor::default();
    let scene = Scene::new(c.build()).unwrap();
    let path: CameraPath = c.path(2, 1.0, k).unwrap();
    let report = evaluate(&GaussianField::new(), &scene, &path, &[0], Some(&OracleBackend)).unwrap();
    assert_eq!(report.views[0].coverage, 0.0);
    assert_eq!(report.views[0].psnr, None);
    let json = serde_json::to_value(&report).unwrap();
    assert!(json["min_psnr"].is_null());
    for key in REPORT_KEYS {
        assert!(json.get(key).is_some(), "{key}");
    }

    let pose = &path.poses[0];
    let maps = render_control_maps(&scene, pose, &k);
    let full = Raster::filled(k.width, k.height, true);
    let req = meshsplat::genbackend::GeneratorRequest { maps: &maps, reference: None, mask: &full, seed: 0, style: "" };
    let img = meshsplat::genbackend::oracle_generate(&req, pose, &k).unwrap();
    let mut field = GaussianField::new();
    field.append(0, lift_pixels(&img, &maps, pose, &k, &maps.valid_mask()).unwrap());
    let report = evaluate(&field, &scene, &path, &[0], Some(&OracleBackend)).unwrap();
    assert!(report.views[0].psnr.unwrap() >= 40.0, "{:?}", report.views[0].psnr);
}
