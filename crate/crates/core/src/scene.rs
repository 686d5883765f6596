//! 3D scene files, camera files and scene rendering.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError, MAGIC};
use crate::imaging::ImageBuffer;
use crate::primitive::{SymMat3, Vec3};
use crate::projection::{project_primitive, Camera, Primitive3D, ProjectionError, ProjectionMode};
use crate::raster::{forward_alpha, RasterConfig, Splat};

pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("cannot parse {what}: {message}")]
    Parse { what: &'static str, message: String },
    #[error("scene version {0} is not supported")]
    Version(u32),
    #[error("invalid primitive {index}: {message}")]
    InvalidPrimitive { index: usize, message: String },
    #[error(transparent)]
    Container(#[from] CheckpointError),
    #[error(transparent)]
    Camera(#[from] ProjectionError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PrimitiveRecord {
    mu: [f64; 3],
    /// Upper triangle: xx, xy, xz, yy, yz, zz.
    cov: [f64; 6],
    #[serde(default)]
    freq: [f64; 3],
    color: [f64; 3],
    opacity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SceneFile {
    version: u32,
    primitives: Vec<PrimitiveRecord>,
}

fn validate(prims: &[Primitive3D]) -> Result<(), SceneError> {
    for (index, p) in prims.iter().enumerate() {
        let bad = |message: &str| Err(SceneError::InvalidPrimitive { index, message: message.into() });
        if !p.cov.is_positive_definite() {
            return bad("covariance is not positive definite");
        }
        if !(0.0..=1.0).contains(&p.opacity) {
            return bad("opacity must lie in [0, 1]");
        }
        let finite = p.mu.iter().chain(p.freq.iter()).chain(p.color.iter()).all(|v| v.is_finite());
        if !finite {
            return bad("non-finite value");
        }
    }
    Ok(())
}

pub fn parse_scene_json(text: &str) -> Result<Vec<Primitive3D>, SceneError> {
    let file: SceneFile =
        serde_json::from_str(text).map_err(|e| SceneError::Parse { what: "scene", message: e.to_string() })?;
    if file.version != SCENE_VERSION {
        return Err(SceneError::Version(file.version));
    }
    let prims: Vec<Primitive3D> = file
        .primitives
        .iter()
        .map(|r| Primitive3D {
            mu: Vec3::from(r.mu),
            cov: SymMat3::from_array(r.cov),
            freq: Vec3::from(r.freq),
            color: r.color,
            opacity: r.opacity,
        })
        .collect();
    validate(&prims)?;
    Ok(prims)
}

pub fn scene_to_json(prims: &[Primitive3D]) -> String {
    let file = SceneFile {
        version: SCENE_VERSION,
        primitives: prims
            .iter()
            .map(|p| PrimitiveRecord {
                mu: p.mu.into(),
                cov: p.cov.as_array(),
                freq: p.freq.into(),
                color: p.color,
                opacity: p.opacity,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("scene serializes")
}

fn read(path: &Path) -> Result<Vec<u8>, SceneError> {
    std::fs::read(path).map_err(|source| SceneError::Io { path: path.display().to_string(), source })
}

/// Loads a JSON scene or a binary WIPS scene container.
pub fn load_scene(path: impl AsRef<Path>) -> Result<Vec<Primitive3D>, SceneError> {
    let bytes = read(path.as_ref())?;
    if bytes.starts_with(MAGIC) {
        let prims = checkpoint::decode_scene(&bytes)?;
        validate(&prims)?;
        return Ok(prims);
    }
    let text = String::from_utf8(bytes).map_err(|e| SceneError::Parse { what: "scene", message: e.to_string() })?;
    parse_scene_json(&text)
}

pub fn load_camera(path: impl AsRef<Path>) -> Result<Camera, SceneError> {
    let bytes = read(path.as_ref())?;
    let camera: Camera =
        serde_json::from_slice(&bytes).map_err(|e| SceneError::Parse { what: "camera", message: e.to_string() })?;
    camera.validate()?;
    Ok(camera)
}

/// Projects the primitives that can be projected; the rest (behind the near
/// plane, past the far plane, or degenerate on screen) are culled.
pub fn project_scene(prims: &[Primitive3D], camera: &Camera, mode: ProjectionMode) -> Vec<Splat> {
    prims
        .iter()
        .filter_map(|p| {
            let k = project_primitive(p, camera, mode).ok()?;
            Some(Splat::from_kernel(&k.kernel, k.cov, p.color, p.opacity, k.depth))
        })
        .collect()
}

/// Depth-sorted α-blended render on a black background.
pub fn render_scene(prims: &[Primitive3D], camera: &Camera, mode: ProjectionMode, raster: &RasterConfig) -> ImageBuffer {
    let splats = project_scene(prims, camera, mode);
    forward_alpha(&splats, camera.width as usize, camera.height as usize, raster).image
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENE: &str = r#"{"version": 1, "primitives": [
        {"mu": [0, 0, 5], "cov": [0.04, 0, 0, 0.04, 0, 0.04], "freq": [0, 0, 0], "color": [1, 0.5, 0.2], "opacity": 0.8}
    ]}"#;

    #[test]
    fn json_round_trip() {
        let prims = parse_scene_json(SCENE).unwrap();
        assert_eq!(prims.len(), 1);
        assert_eq!(parse_scene_json(&scene_to_json(&prims)).unwrap(), prims);
    }

    #[test]
    fn rejects_bad_scenes() {
        assert!(matches!(parse_scene_json(&SCENE.replace("\"version\": 1", "\"version\": 7")), Err(SceneError::Version(7))));
        assert!(matches!(
            parse_scene_json(&SCENE.replace("0.04, 0, 0, 0.04", "-0.04, 0, 0, 0.04")),
            Err(SceneError::InvalidPrimitive { index: 0, .. })
        ));
        assert!(matches!(parse_scene_json("{"), Err(SceneError::Parse { .. })));
    }

    #[test]
    fn primitives_behind_camera_are_culled() {
        let mut prims = parse_scene_json(SCENE).unwrap();
        prims[0].mu.z = -5.0;
        let cam = Camera::looking_down_z(32, 32, 40.0);
        assert!(project_scene(&prims, &cam, ProjectionMode::Exact).is_empty());
        let img = render_scene(&prims, &cam, ProjectionMode::Exact, &RasterConfig::default());
        assert!(img.data.iter().all(|&v| v == 0.0));
    }
}
