//! Orchestration of the two synthesis stages, the alignment passes and the
//! block-wise processing of long camera paths.

use std::collections::BTreeMap;
use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::aginpaint::{guided_sample, GuidanceParams, InpaintTask};
use crate::diffusion::{ConsistencyFunction, NoiseSchedule, NoiseSource, ScheduleKind, DEFAULT_LCM_STEPS};
use crate::error::{contract, Error, Result};
use crate::gcalign::{gca_pass, gca_subsequence_passes, GcaParams, GcaView};
use crate::genbackend::{splitmix, GeneratorBackend, GeneratorRequest, MixtureDenoiser, TemplateLibrary};
use crate::imageio::{Mask, Raster, RgbImage};
use crate::par;
use crate::raster::{render_control_maps, ControlMaps};
use crate::scene::{CameraIntrinsics, CameraPath, CameraPose, Scene};
use crate::splatter::{low_alpha_mask, render, silhouette_mask, DEFAULT_LOW_ALPHA};
use crate::surfel::{lift_pixels, lift_sky, GaussianField};
use crate::warp::{backward_warp, outpaint_mask, WarpResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionParams {
    #[serde(rename = "T")]
    pub steps: usize,
    pub delta: usize,
    pub schedule: ScheduleKind,
    pub lambda: f64,
    pub sigma_data: f64,
    pub lcm_steps: Vec<usize>,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        let cf = ConsistencyFunction::default();
        DiffusionParams {
            steps: 1000,
            delta: 1,
            schedule: ScheduleKind::Cosine,
            lambda: cf.lambda,
            sigma_data: cf.sigma_data,
            lcm_steps: DEFAULT_LCM_STEPS.to_vec(),
        }
    }
}

impl DiffusionParams {
    pub fn build(&self) -> Result<(NoiseSchedule, ConsistencyFunction)> {
        let schedule = NoiseSchedule::new(self.schedule, self.steps, self.delta)?;
        let cf = ConsistencyFunction { sigma_data: self.sigma_data, lambda: self.lambda, delta: self.delta };
        Ok((schedule, cf))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Keyframe incompleteness threshold.
    pub tau: f64,
    pub block_length: usize,
    pub seed: u64,
    /// Field pixels below this alpha receive new surfels.
    pub lift_threshold: f64,
    pub sky_radius: f64,
    pub style: String,
    pub keyframe_gca: bool,
    pub subsequence_gca: bool,
    pub diffusion: DiffusionParams,
    pub aginpaint: GuidanceParams,
    pub gca: GcaParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tau: 0.3,
            block_length: 200,
            seed: 0,
            lift_threshold: DEFAULT_LOW_ALPHA,
            sky_radius: 500.0,
            style: "city street, daytime".into(),
            keyframe_gca: true,
            subsequence_gca: true,
            diffusion: DiffusionParams::default(),
            aginpaint: GuidanceParams::default(),
            gca: GcaParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.block_length < 2 {
            return bad(format!("block length must be at least 2, got {}", self.block_length));
        }
        if !(self.lift_threshold > 0.0 && self.lift_threshold < 1.0) {
            return bad(format!("lift threshold must lie in (0, 1), got {}", self.lift_threshold));
        }
        if !(self.sky_radius > 0.0) {
            return bad("sky radius must be positive".into());
        }
        self.aginpaint.validate()?;
        self.gca.validate()?;
        self.diffusion.build().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Generate { view: usize, referenced: bool, masked: usize },
    Lift { view: usize, stage: u8, surfels: usize },
    KeyframeAlign { views: Vec<usize>, excluded: Vec<usize> },
    Inpaint { view: usize, masked: usize },
    Skip { view: usize },
    SubsequenceAlign { passes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub block: usize,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockReport {
    pub index: usize,
    /// Inclusive view range.
    pub start: usize,
    pub end: usize,
    pub keyframes: Vec<usize>,
    /// Geometry incompleteness of each keyframe (except the block's last) when warped from its successor.
    pub keyframe_incompleteness: Vec<f64>,
    /// Silhouette fraction of every intermediate view before densification.
    pub intermediate_masks: Vec<(usize, f64)>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub field: GaussianField,
    pub blocks: Vec<BlockReport>,
    pub trace: Vec<TraceEntry>,
    pub keyframe_images: BTreeMap<usize, RgbImage>,
}

impl RunResult {
    pub fn keyframes(&self) -> Vec<usize> {
        let mut k: Vec<usize> = self.blocks.iter().flat_map(|b| b.keyframes.iter().copied()).collect();
        k.sort_unstable();
        k
    }

    pub fn manifest(&self, seed: u64, width: usize, height: usize) -> serde_json::Value {
        serde_json::json!({
            "seed": seed,
            "width": width,
            "height": height,
            "surfels": self.field.len(),
            "keyframes": self.keyframes(),
            "blocks": self.blocks,
            "trace": self.trace,
        })
    }
}

/// Selected keyframes (ascending, local to the given views) and, for each
/// but the last, the incompleteness that triggered it.
#[derive(Debug, Clone, PartialEq)]
pub struct Keyframes {
    pub indices: Vec<usize>,
    pub incompleteness: Vec<f64>,
}

/// Fraction of pixels with mesh geometry that a warp from `src` cannot fill.
pub fn geometry_incompleteness(
    src: &ControlMaps,
    src_pose: &CameraPose,
    dst: &ControlMaps,
    dst_pose: &CameraPose,
    k: &CameraIntrinsics,
) -> Result<f64> {
    let blank = Raster::filled(k.width, k.height, [0.0; 3]);
    let warp = backward_warp(&blank, src, src_pose, dst, dst_pose, k)?;
    let missing = dst.valid.iter().zip(&warp.valid.data).filter(|(&g, &w)| g && !w).count();
    Ok(missing as f64 / dst.len().max(1) as f64)
}

/// Walk back from the last view; the nearest earlier view whose warp from
/// the current keyframe leaves at least `tau` of the frame to outpaint
/// becomes the next keyframe. The first view always closes the list.
pub fn select_keyframes(maps: &[ControlMaps], poses: &[CameraPose], k: &CameraIntrinsics, tau: f64) -> Result<Keyframes> {
    if maps.len() != poses.len() || maps.len() < 2 {
        return Err(contract("keyframe selection needs at least two views with maps"));
    }
    let mut current = maps.len() - 1;
    let mut picked = vec![(current, 0.0)];
    while current > 0 {
        let mut next = None;
        for j in (1..current).rev() {
            let f = geometry_incompleteness(&maps[current], &poses[current], &maps[j], &poses[j], k)?;
            if f >= tau {
                next = Some((j, f));
                break;
            }
        }
        let (j, f) = match next {
            Some(n) => n,
            None => (0, geometry_incompleteness(&maps[current], &poses[current], &maps[0], &poses[0], k)?),
        };
        picked.push((j, f));
        current = j;
    }
    picked.reverse();
    Ok(Keyframes {
        indices: picked.iter().map(|p| p.0).collect(),
        incompleteness: picked[..picked.len() - 1].iter().map(|p| p.1).collect(),
    })
}

/// Inclusive view ranges of the blocks, in path order. A trailing block that
/// would hold a single view is merged into its predecessor.
pub fn block_ranges(views: usize, length: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..views).step_by(length.max(2)).map(|s| (s, (s + length - 1).min(views - 1))).collect();
    if out.len() > 1 && out.last().is_some_and(|(s, e)| s == e) {
        let (_, e) = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").1 = e;
    }
    out
}

const STREAM_GENERATE: u64 = 1;
const STREAM_PRIOR: u64 = 2;
const STREAM_INPAINT: u64 = 3;
const STREAM_GCA: u64 = 4;

pub fn derive_seed(seed: u64, stream: u64, index: usize) -> u64 {
    splitmix(seed ^ splitmix((stream << 48) ^ index as u64))
}

/// Lift the masked pixels of `image`: geometry pixels onto the mesh, sky
/// pixels onto the far dome. Returns the number of new surfels.
pub fn lift_masked(
    field: &mut GaussianField,
    image: &RgbImage,
    maps: &ControlMaps,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    mask: &Mask,
    view: usize,
    sky_radius: f64,
) -> Result<usize> {
    let image = image.clamped();
    let geometry = Raster { width: mask.width, height: mask.height, data: mask.data.iter().zip(&maps.valid).map(|(&m, &v)| m && v).collect() };
    let mut batch = lift_pixels(&image, maps, pose, k, &geometry)?;
    batch.extend(lift_sky(&image, maps, pose, k, mask, sky_radius)?);
    let n = batch.len();
    field.append(view as u32, batch);
    Ok(n)
}

/// Last generated keyframe of a finished block, used to start the next one.
#[derive(Debug, Clone)]
struct SeedFrame {
    view: usize,
    image: RgbImage,
    maps: ControlMaps,
}

pub struct Pipeline<'a> {
    pub scene: &'a Scene,
    pub path: &'a CameraPath,
    pub backend: &'a dyn GeneratorBackend,
    pub config: &'a PipelineConfig,
    schedule: NoiseSchedule,
    cf: ConsistencyFunction,
}

struct BlockRun {
    index: usize,
    start: usize,
    maps: Vec<ControlMaps>,
    priors: BTreeMap<usize, RgbImage>,
}

impl BlockRun {
    fn maps(&self, view: usize) -> &ControlMaps {
        &self.maps[view - self.start]
    }
}

impl<'a> Pipeline<'a> {
    pub fn new(scene: &'a Scene, path: &'a CameraPath, backend: &'a dyn GeneratorBackend, config: &'a PipelineConfig) -> Result<Self> {
        config.validate()?;
        let (schedule, cf) = config.diffusion.build()?;
        Ok(Pipeline { scene, path, backend, config, schedule, cf })
    }

    fn k(&self) -> &CameraIntrinsics {
        &self.path.intrinsics
    }

    fn pose(&self, view: usize) -> &CameraPose {
        &self.path.poses[view]
    }

    pub fn control_maps(&self, start: usize, end: usize) -> Vec<ControlMaps> {
        let k = self.k();
        par::map_slice(&self.path.poses[start..=end], |p| render_control_maps(self.scene, p, k))
    }

    /// The backend's reference-free generation of a view, used as the
    /// denoiser prior for that view.
    fn prior(&self, block: &mut BlockRun, view: usize) -> Result<RgbImage> {
        if let Some(p) = block.priors.get(&view) {
            return Ok(p.clone());
        }
        let maps = block.maps(view);
        let full = Raster::filled(maps.width, maps.height, true);
        let req = GeneratorRequest {
            maps,
            reference: None,
            mask: &full,
            seed: derive_seed(self.config.seed, STREAM_PRIOR, view),
            style: &self.config.style,
        };
        let img = self.backend.generate(&req, self.pose(view), self.k()).map_err(|e| e.at_view("genbackend", view))?;
        block.priors.insert(view, img.clone());
        Ok(img)
    }

    fn priors(&self, block: &mut BlockRun, views: &[usize]) -> Result<Vec<MixtureDenoiser>> {
        views.iter().map(|&v| Ok(MixtureDenoiser::new(TemplateLibrary::single(&self.prior(block, v)?)))).collect()
    }

    pub fn run(&self) -> Result<RunResult> {
        let mut result = RunResult {
            field: GaussianField::new(),
            blocks: Vec::new(),
            trace: Vec::new(),
            keyframe_images: BTreeMap::new(),
        };
        let ranges = block_ranges(self.path.len(), self.config.block_length);
        let mut seed_frame: Option<SeedFrame> = None;
        for (index, &(start, end)) in ranges.iter().rev().enumerate() {
            let t0 = Instant::now();
            info!("block {index}: views {start}..={end}");
            let mut block = BlockRun { index, start, maps: self.control_maps(start, end), priors: BTreeMap::new() };
            let report = self
                .run_block(&mut block, end, seed_frame.as_ref(), &mut result)
                .map_err(|e| Error::AtBlock { block: index, source: Box::new(e) })?;
            let first = report.keyframes[0];
            seed_frame = Some(SeedFrame {
                view: first,
                image: result.keyframe_images[&first].clone(),
                maps: block.maps(first).clone(),
            });
            result.blocks.push(BlockReport { seconds: t0.elapsed().as_secs_f64(), ..report });
        }
        Ok(result)
    }

    fn run_block(&self, block: &mut BlockRun, end: usize, seed: Option<&SeedFrame>, result: &mut RunResult) -> Result<BlockReport> {
        let start = block.start;
        let poses = &self.path.poses[start..=end];
        let kf = select_keyframes(&block.maps, poses, self.k(), self.config.tau)?;
        let keyframes: Vec<usize> = kf.indices.iter().map(|i| i + start).collect();
        debug!("block {}: keyframes {keyframes:?}", block.index);

        self.stage1(block, &keyframes, seed, result)?;
        self.keyframe_alignment(block, &keyframes, result)?;
        let intermediate_masks = self.stage2(block, &keyframes, result)?;
        if self.config.subsequence_gca && keyframes.len() >= 2 {
            let all: Vec<usize> = (start..=end).collect();
            let models = self.priors(block, &all)?;
            let valids: Vec<Mask> = block.maps.iter().map(ControlMaps::valid_mask).collect();
            let views: Vec<GcaView<'_>> = (0..all.len())
                .map(|i| GcaView { index: all[i], pose: self.pose(all[i]), valid: &valids[i], model: &models[i] })
                .collect();
            let local: Vec<usize> = kf.indices.clone();
            let passes = gca_subsequence_passes(
                &mut result.field,
                &views,
                &local,
                self.k(),
                &self.cf,
                &self.schedule,
                &self.config.gca,
                derive_seed(self.config.seed, STREAM_GCA, start + 1),
            )
            .map_err(|e| e.at_view("gcalign", start))?;
            result.trace.push(TraceEntry { block: block.index, event: TraceEvent::SubsequenceAlign { passes: passes.len() } });
        }
        Ok(BlockReport {
            index: block.index,
            start,
            end,
            keyframes,
            keyframe_incompleteness: kf.incompleteness,
            intermediate_masks,
            seconds: 0.0,
        })
    }

    fn keyframe_alignment(&self, block: &mut BlockRun, keyframes: &[usize], result: &mut RunResult) -> Result<()> {
        if !self.config.keyframe_gca || keyframes.len() < 2 {
            return Ok(());
        }
        let models = self.priors(block, keyframes)?;
        let valids: Vec<Mask> = keyframes.iter().map(|&v| block.maps(v).valid_mask()).collect();
        let views: Vec<GcaView<'_>> = (0..keyframes.len())
            .map(|i| GcaView { index: keyframes[i], pose: self.pose(keyframes[i]), valid: &valids[i], model: &models[i] })
            .collect();
        let mut noise = NoiseSource::new(derive_seed(self.config.seed, STREAM_GCA, keyframes[0]));
        let outcome = gca_pass(&mut result.field, &views, self.k(), &self.cf, &self.schedule, &self.config.gca, &mut noise)
            .map_err(|e| e.at_view("gcalign", keyframes[0]))?;
        result.trace.push(TraceEntry {
            block: block.index,
            event: TraceEvent::KeyframeAlign { views: outcome.views, excluded: outcome.excluded },
        });
        Ok(())
    }

    /// Key views from the back of the block to the front: the terminal one
    /// without reference (or warped from the previous block), every earlier
    /// one warped from its successor and outpainted.
    fn stage1(&self, block: &mut BlockRun, keyframes: &[usize], seed: Option<&SeedFrame>, result: &mut RunResult) -> Result<()> {
        let k = self.k();
        let mut successor: Option<(usize, RgbImage, ControlMaps)> = seed.map(|s| (s.view, s.image.clone(), s.maps.clone()));
        for &v in keyframes.iter().rev() {
            let maps = block.maps(v);
            let pose = self.pose(v);
            let warp: Option<WarpResult> = match &successor {
                Some((sv, img, smaps)) => Some(backward_warp(img, smaps, self.pose(*sv), maps, pose, k).map_err(|e| e.at_view("warp", v))?),
                None => None,
            };
            let mask = match &warp {
                Some(w) => outpaint_mask(w, maps)?,
                None => Raster::filled(maps.width, maps.height, true),
            };
            let req = GeneratorRequest {
                maps,
                reference: warp.as_ref(),
                mask: &mask,
                seed: derive_seed(self.config.seed, STREAM_GENERATE, v),
                style: &self.config.style,
            };
            let image = self.backend.generate(&req, pose, k).map_err(|e| e.at_view("genbackend", v))?;
            result.trace.push(TraceEntry {
                block: block.index,
                event: TraceEvent::Generate { view: v, referenced: warp.is_some(), masked: mask.count() },
            });

            let coverage = render(&result.field, pose, k, [0.0; 3]);
            let low = low_alpha_mask(&coverage, self.config.lift_threshold);
            let lift = Raster { width: low.width, height: low.height, data: low.data.iter().zip(&mask.data).map(|(&l, &m)| l && m).collect() };
            let n = lift_masked(&mut result.field, &image, maps, pose, k, &lift, v, self.config.sky_radius)
                .map_err(|e| e.at_view("surfel", v))?;
            result.trace.push(TraceEntry { block: block.index, event: TraceEvent::Lift { view: v, stage: 1, surfels: n } });
            result.keyframe_images.insert(v, image.clone());
            successor = Some((v, image, maps.clone()));
        }
        Ok(())
    }

    /// Render every intermediate view, inpaint its silhouettes with guided
    /// sampling and lift the filled pixels.
    fn stage2(&self, block: &mut BlockRun, keyframes: &[usize], result: &mut RunResult) -> Result<Vec<(usize, f64)>> {
        let k = self.k();
        let end = block.start + block.maps.len() - 1;
        let mut fractions = Vec::new();
        for v in block.start..=end {
            if keyframes.contains(&v) {
                continue;
            }
            let pose = self.pose(v);
            let out = render(&result.field, pose, k, [0.0; 3]);
            let sil = silhouette_mask(&out, block.maps(v)).map_err(|e| e.at_view("splatter", v))?;
            let masked = sil.count();
            fractions.push((v, masked as f64 / sil.len() as f64));
            if masked == 0 {
                result.trace.push(TraceEntry { block: block.index, event: TraceEvent::Skip { view: v } });
                continue;
            }
            let known = sil.map(|m| !m);
            let task = InpaintTask::new(&out.foreground(), known).map_err(|e| e.at_view("aginpaint", v))?;
            let model = MixtureDenoiser::new(TemplateLibrary::single(&self.prior(block, v)?));
            let mut noise = NoiseSource::new(derive_seed(self.config.seed, STREAM_INPAINT, v));
            let x = guided_sample(&task, &model, &self.cf, &self.schedule, &self.config.aginpaint, &mut noise)
                .map_err(|e| e.at_view("aginpaint", v))?;
            let filled = RgbImage::from_flat(k.width, k.height, &x)?;
            let n = lift_masked(&mut result.field, &filled, block.maps(v), pose, k, &sil, v, self.config.sky_radius)
                .map_err(|e| e.at_view("surfel", v))?;
            result.trace.push(TraceEntry { block: block.index, event: TraceEvent::Inpaint { view: v, masked } });
            result.trace.push(TraceEntry { block: block.index, event: TraceEvent::Lift { view: v, stage: 2, surfels: n } });
        }
        Ok(fractions)
    }
}

/// Control maps for every view of a path, computed in parallel.
pub fn path_control_maps(scene: &Scene, path: &CameraPath) -> Vec<ControlMaps> {
    par::map_slice(&path.poses, |p| render_control_maps(scene, p, &path.intrinsics))
}
