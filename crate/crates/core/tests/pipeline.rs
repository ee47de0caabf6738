mod common;

use common::stage1_mismatches;
use meshsplat::genbackend::OracleBackend;
use meshsplat::pipeline::{path_control_maps, select_keyframes, Pipeline, PipelineConfig, RunResult, TraceEvent};
use meshsplat::scene::{toy, CameraIntrinsics, CameraPath, Scene};
use meshsplat::splatter::{render, silhouette_mask};

fn k128() -> CameraIntrinsics {
    CameraIntrinsics::from_horizontal_fov(128, 72, 45.0).unwrap()
}

fn oracle_config() -> PipelineConfig {
    PipelineConfig { keyframe_gca: false, subsequence_gca: false, ..Default::default() }
}

fn scene_and_path(c: toy::Corridor, views: usize) -> (Scene, CameraPath) {
    let scene = Scene::new(c.build()).unwrap();
    let path = c.path(views, 1.0, k128()).unwrap();
    (scene, path)
}

fn run(scene: &Scene, path: &CameraPath, config: &PipelineConfig) -> RunResult {
    Pipeline::new(scene, path, &OracleBackend, config).unwrap().run().unwrap()
}

fn generations(result: &RunResult) -> Vec<(usize, usize, bool)> {
    result
        .trace
        .iter()
        .filter_map(|e| match e.event {
            TraceEvent::Generate { view, referenced, .. } => Some((e.block, view, referenced)),
            _ => None,
        })
        .collect()
}

#[test]
fn threshold_extremes() {
    let (scene, path) = scene_and_path(toy::Corridor::default(), 10);
    let maps = path_control_maps(&scene, &path);
    let all = select_keyframes(&maps, &path.poses, &path.intrinsics, 1.0).unwrap();
    assert_eq!(all.indices, vec![0, 9]);
    let every = select_keyframes(&maps, &path.poses, &path.intrinsics, 1e-9).unwrap();
    assert_eq!(every.indices, (0..10).collect::<Vec<_>>());
    assert_eq!(every.incompleteness.len(), 9);
    assert!(every.incompleteness.iter().all(|&f| f > 0.0));
}

#[test]
fn two_keyframes_take_one_plain_and_one_referenced_generation() {
    let (scene, path) = scene_and_path(toy::Corridor::default(), 6);
    let config = PipelineConfig { tau: 1.0, ..oracle_config() };
    let result = run(&scene, &path, &config);
    assert_eq!(result.keyframes(), vec![0, 5]);
    assert_eq!(generations(&result), vec![(0, 5, false), (0, 0, true)]);
}

#[test]
fn stage_one_runs_backwards_with_exact_oracle_colors() {
    let (scene, path) = scene_and_path(toy::Corridor::default(), 24);
    let config = PipelineConfig { tau: 0.15, ..oracle_config() };
    let result = run(&scene, &path, &config);
    let keyframes = result.keyframes();
    assert!(keyframes.len() >= 3, "{keyframes:?}");
    let gens = generations(&result);
    assert!(gens.windows(2).all(|w| w[1].1 < w[0].1));
    assert_eq!(gens.iter().map(|g| g.1).rev().collect::<Vec<_>>(), keyframes);
    assert!(!gens[0].2 && gens[1..].iter().all(|g| g.2));

    let (checked, bad) = stage1_mismatches(&result, &scene, &path, &keyframes);
    assert!(checked > 1000, "{checked}");
    assert_eq!(bad, 0);

    let mut stage2_views: Vec<usize> = result
        .trace
        .iter()
        .filter_map(|e| match e.event {
            TraceEvent::Skip { view } | TraceEvent::Inpaint { view, .. } => Some(view),
            _ => None,
        })
        .collect();
    stage2_views.sort_unstable();
    let intermediates: Vec<usize> = (0..24).filter(|v| !keyframes.contains(v)).collect();
    assert_eq!(stage2_views, intermediates);

    let mut previous = 0;
    let mut total = 0;
    for e in &result.trace {
        if let TraceEvent::Lift { surfels, .. } = e.event {
            total += surfels;
            assert!(total >= previous);
            previous = total;
        }
    }
    assert_eq!(total, result.field.len());
}

#[test]
fn pillar_disocclusion_is_filled() {
    let corridor = toy::Corridor { pillar: Some((-4.0, 22.0, 0.8, 8.0)), ..Default::default() };
    let (scene, path) = scene_and_path(corridor, 16);
    let config = PipelineConfig { tau: 1.0, ..oracle_config() };
    let result = run(&scene, &path, &config);
    let inpainted: Vec<usize> = result
        .trace
        .iter()
        .filter_map(|e| match e.event {
            TraceEvent::Inpaint { view, masked } if masked > 0 => Some(view),
            _ => None,
        })
        .collect();
    assert!(!inpainted.is_empty());
    let k = path.intrinsics;
    let maps = path_control_maps(&scene, &path);
    for v in 0..path.len() {
        let out = render(&result.field, &path.poses[v], &k, [0.0; 3]);
        let sil = silhouette_mask(&out, &maps[v]).unwrap();
        let frac = sil.count() as f64 / sil.len() as f64;
        assert!(frac < 0.01, "view {v}: {frac}");
    }
}

#[test]
fn blocks_chain_through_a_referenced_terminal_view() {
    let (scene, path) = scene_and_path(toy::Corridor::default(), 8);
    let config = PipelineConfig { tau: 1.0, block_length: 4, ..oracle_config() };
    let result = run(&scene, &path, &config);
    assert_eq!(result.blocks.len(), 2);
    assert_eq!((result.blocks[0].start, result.blocks[0].end), (4, 7));
    assert_eq!((result.blocks[1].start, result.blocks[1].end), (0, 3));
    assert_eq!(generations(&result), vec![(0, 7, false), (0, 4, true), (1, 3, true), (1, 0, true)]);
    let (checked, bad) = stage1_mismatches(&result, &scene, &path, &result.keyframes());
    assert!(checked > 0);
    assert_eq!(bad, 0);
}

#[test]
fn single_block_for_short_paths() {
    let (scene, path) = scene_and_path(toy::Corridor::default(), 5);
    let result = run(&scene, &path, &PipelineConfig { tau: 1.0, ..oracle_config() });
    assert_eq!(result.blocks.len(), 1);
    assert!(result.trace.iter().all(|e| e.block == 0));
}

#[test]
fn invalid_configs_are_rejected() {
    let (scene, path) = scene_and_path(toy::Corridor::default(), 3);
    for config in [
        PipelineConfig { tau: 0.0, ..Default::default() },
        PipelineConfig { tau: 1.5, ..Default::default() },
        PipelineConfig { block_length: 1, ..Default::default() },
    ] {
        assert!(Pipeline::new(&scene, &path, &OracleBackend, &config).is_err());
    }
}
