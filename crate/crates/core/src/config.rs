//! Run configuration: one TOML file names the scene, the camera path, the
//! output directory and every pipeline parameter group.
//!
//! ```toml
//! seed = 7
//! output = "out"
//! tau = 0.3
//!
//! [scene]
//! toy = "corridor"          # or: mesh = "city.ply"
//!
//! [camera]
//! views = 60                # or: path = "path.txt"
//! spacing = 1.0
//! width = 256
//! height = 144
//! fov = 45.0
//!
//! [diffusion]
//! T = 1000
//!
//! [aginpaint]
//! n_g = 100
//!
//! [gca]
//! refine_iters = 3
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genbackend::{GeneratorBackend, OracleBackend};
use crate::pipeline::PipelineConfig;
use crate::scene::{load_mesh, make_straight_path, read_path_file, toy, CameraIntrinsics, CameraPath, Scene};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyScene {
    #[default]
    Corridor,
    /// Corridor with a square pillar in the street, for disocclusion tests.
    Pillar,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Labeled ASCII PLY mesh.
    pub mesh: Option<PathBuf>,
    /// Built-in procedural scene, used when no mesh is given.
    pub toy: Option<ToyScene>,
    /// Far end of the built-in street (meters).
    pub toy_length: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    /// Camera path file; when set, the straight-path keys are ignored.
    pub path: Option<PathBuf>,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees.
    pub fov: f64,
    pub views: usize,
    pub spacing: f64,
    pub start: [f64; 3],
    pub direction: [f64; 3],
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            path: None,
            width: 256,
            height: 144,
            fov: 45.0,
            views: 60,
            spacing: 1.0,
            start: [0.0, toy::CORRIDOR_CAMERA_HEIGHT, 0.0],
            direction: [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scene: SceneConfig,
    #[serde(default)]
    pub camera: CameraConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// Parse and validate; relative paths are resolved against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg: RunConfig = table.clone().try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        reject_unknown_keys(&table, &cfg)?;
        for p in [cfg.scene.mesh.as_mut(), cfg.camera.path.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output.is_relative() {
            cfg.output = base.join(&cfg.output);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        match (&self.scene.mesh, &self.scene.toy) {
            (Some(_), Some(_)) => return cfg_err("scene: give either `mesh` or `toy`, not both".into()),
            (None, None) => return cfg_err("scene: one of `mesh` or `toy` is required".into()),
            (Some(m), None) if !m.is_file() => return cfg_err(format!("scene.mesh: {} does not exist", m.display())),
            _ => {}
        }
        if let Some(p) = &self.camera.path {
            if !p.is_file() {
                return cfg_err(format!("camera.path: {} does not exist", p.display()));
            }
        } else {
            let c = &self.camera;
            if c.views < 2 || !(c.spacing > 0.0) || !(c.fov > 0.0 && c.fov < 180.0) || c.width == 0 || c.height == 0 {
                return cfg_err(format!("camera: invalid straight path {c:?}"));
            }
        }
        self.pipeline.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn build_scene(&self) -> Result<Scene> {
        let mesh = match (&self.scene.mesh, self.scene.toy) {
            (Some(path), _) => load_mesh(path)?,
            (None, Some(kind)) => {
                let mut c = toy::Corridor::default();
                if let Some(len) = self.scene.toy_length {
                    c.z_end = len;
                }
                if kind == ToyScene::Pillar {
                    c.pillar = Some((2.0, 40.0, 1.0, 8.0));
                }
                c.build()
            }
            (None, None) => return Err(Error::Config("scene: nothing to load".into())),
        };
        Scene::new(mesh)
    }

    pub fn build_path(&self) -> Result<CameraPath> {
        if let Some(p) = &self.camera.path {
            return read_path_file(p);
        }
        let c = &self.camera;
        let k = CameraIntrinsics::from_horizontal_fov(c.width, c.height, c.fov)?;
        let dir = Vec3::from(c.direction);
        make_straight_path(Vec3::from(c.start), dir, c.views, c.spacing, k)
    }

    pub fn backend(&self) -> Box<dyn GeneratorBackend> {
        match self.backend {
            BackendKind::Oracle => Box::new(OracleBackend),
        }
    }
}

/// Every key of the input must survive a parse and re-serialization round
/// trip; anything that does not was never read.
fn reject_unknown_keys(input: &toml::Table, cfg: &RunConfig) -> Result<()> {
    let echoed = toml::Table::try_from(cfg).map_err(|e| Error::Config(e.to_string()))?;
    fn walk(input: &toml::Table, echoed: &toml::Table, prefix: &str) -> Result<()> {
        for (key, value) in input {
            let name = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
            match (value, echoed.get(key)) {
                (_, None) => return Err(Error::Config(format!("unknown key `{name}`"))),
                (toml::Value::Table(a), Some(toml::Value::Table(b))) => walk(a, b, &name)?,
                _ => {}
            }
        }
        Ok(())
    }
    walk(input, &echoed, "")
}
