//! Scene ingestion and pipeline configuration.
//!
//! A scene is a single JSON document listing calibrated cameras, sparse 3D
//! points with per-view observations, and one edge image path per view:
//!
//! ```json
//! {
//!   "cameras": [{"id": "v0", "K": [..9..], "R": [..9..], "C": [x,y,z],
//!                "width": 640, "height": 480}],
//!   "points": [{"id": 0, "xyz": [x,y,z], "obs": [{"view": "v0", "uv": [u,v]}]}],
//!   "edge_images": {"v0": "edges/v0.pgm"}
//! }
//! ```
//!
//! Image paths are relative to the scene file. Views are renumbered densely
//! in ascending id order; every per-view slice in the library is indexed that
//! way.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraView, GeometryError, Point2, Point3, ViewId};
use crate::matching::ReferencePoint;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("view {0} has no edge image")]
    MissingEdgeImage(String),
    #[error("point {point} observes unknown view {view}")]
    DanglingViewReference { point: u64, view: String },
    #[error("duplicate view id {0}")]
    DuplicateViewId(String),
    #[error("point {0} is invalid: {1}")]
    InvalidPoint(u64, String),
    #[error("camera {id}: {source}")]
    InvalidCamera { id: String, source: GeometryError },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraDoc {
    id: String,
    #[serde(rename = "K")]
    k: [f64; 9],
    #[serde(rename = "R")]
    r: [f64; 9],
    #[serde(rename = "C")]
    c: [f64; 3],
    width: u32,
    height: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ObsDoc {
    view: String,
    uv: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PointDoc {
    id: u64,
    xyz: [f64; 3],
    obs: Vec<ObsDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SceneDoc {
    cameras: Vec<CameraDoc>,
    points: Vec<PointDoc>,
    edge_images: BTreeMap<String, String>,
}

/// A fully validated scene: cameras and reference points with referential
/// integrity, plus the resolved edge image path for every view.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cameras: Vec<CameraView>,
    pub view_names: Vec<String>,
    pub ref_points: Vec<ReferencePoint>,
    pub edge_image_paths: Vec<PathBuf>,
    /// Raw relative paths as they appeared in the document, kept for
    /// byte-identical round trips.
    edge_image_rel: Vec<String>,
}

impl Scene {
    pub fn load(path: &Path) -> Result<Scene, SceneError> {
        let data = fs::read_to_string(path)?;
        let doc: SceneDoc = serde_json::from_str(&data).map_err(|e| SceneError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Scene::from_doc(doc, path.parent().unwrap_or(Path::new(".")))
    }

    fn from_doc(mut doc: SceneDoc, base: &Path) -> Result<Scene, SceneError> {
        doc.cameras.sort_by(|a, b| a.id.cmp(&b.id));
        for w in doc.cameras.windows(2) {
            if w[0].id == w[1].id {
                return Err(SceneError::DuplicateViewId(w[0].id.clone()));
            }
        }
        let view_names: Vec<String> = doc.cameras.iter().map(|c| c.id.clone()).collect();
        let view_of = |name: &str| -> Option<ViewId> {
            view_names
                .binary_search_by(|n| n.as_str().cmp(name))
                .ok()
                .map(|i| ViewId(i as u32))
        };

        let mut cameras = Vec::with_capacity(doc.cameras.len());
        for (i, c) in doc.cameras.iter().enumerate() {
            let cam = CameraView::new(
                ViewId(i as u32),
                Matrix3::from_row_slice(&c.k),
                Matrix3::from_row_slice(&c.r),
                Vector3::from_column_slice(&c.c),
                c.width,
                c.height,
            )
            .map_err(|source| SceneError::InvalidCamera {
                id: c.id.clone(),
                source,
            })?;
            cameras.push(cam);
        }

        let mut edge_image_rel = Vec::with_capacity(view_names.len());
        let mut edge_image_paths = Vec::with_capacity(view_names.len());
        for name in &view_names {
            let rel = doc
                .edge_images
                .get(name)
                .ok_or_else(|| SceneError::MissingEdgeImage(name.clone()))?;
            let full = base.join(rel);
            if !full.exists() {
                return Err(SceneError::MissingEdgeImage(format!(
                    "{name} ({})",
                    full.display()
                )));
            }
            edge_image_rel.push(rel.clone());
            edge_image_paths.push(full);
        }
        for name in doc.edge_images.keys() {
            if view_of(name).is_none() {
                return Err(SceneError::DanglingViewReference {
                    point: u64::MAX,
                    view: name.clone(),
                });
            }
        }

        doc.points.sort_by_key(|p| p.id);
        let mut ref_points = Vec::with_capacity(doc.points.len());
        for p in &doc.points {
            let mut observations = BTreeMap::new();
            for o in &p.obs {
                let view = view_of(&o.view).ok_or_else(|| SceneError::DanglingViewReference {
                    point: p.id,
                    view: o.view.clone(),
                })?;
                observations.insert(view, Point2::new(o.uv[0], o.uv[1]));
            }
            let xyz = Point3::new(p.xyz[0], p.xyz[1], p.xyz[2]);
            if !xyz.is_finite() {
                return Err(SceneError::InvalidPoint(p.id, "non-finite position".into()));
            }
            let rp = ReferencePoint::new(p.id, xyz, observations)
                .map_err(|e| SceneError::InvalidPoint(p.id, e.to_string()))?;
            ref_points.push(rp);
        }

        Ok(Scene {
            cameras,
            view_names,
            ref_points,
            edge_image_paths,
            edge_image_rel,
        })
    }

    /// Builds a scene programmatically. View names must be in ascending order
    /// and camera ids must equal their index; `edge_image_rel` paths are
    /// resolved against `base` and must exist.
    pub fn assemble(
        cameras: Vec<CameraView>,
        view_names: Vec<String>,
        ref_points: Vec<ReferencePoint>,
        edge_image_rel: Vec<String>,
        base: &Path,
    ) -> Result<Scene, SceneError> {
        assert_eq!(cameras.len(), view_names.len());
        assert_eq!(cameras.len(), edge_image_rel.len());
        assert!(view_names.windows(2).all(|w| w[0] < w[1]));
        let mut edge_image_paths = Vec::with_capacity(edge_image_rel.len());
        for (rel, name) in edge_image_rel.iter().zip(&view_names) {
            let full = base.join(rel);
            if !full.exists() {
                return Err(SceneError::MissingEdgeImage(format!(
                    "{name} ({})",
                    full.display()
                )));
            }
            edge_image_paths.push(full);
        }
        Ok(Scene {
            cameras,
            view_names,
            ref_points,
            edge_image_paths,
            edge_image_rel,
        })
    }

    pub fn view_id(&self, name: &str) -> Option<ViewId> {
        self.view_names
            .binary_search_by(|n| n.as_str().cmp(name))
            .ok()
            .map(|i| ViewId(i as u32))
    }

    pub fn num_views(&self) -> usize {
        self.cameras.len()
    }

    /// Diagonal of the axis-aligned bounding box of the reference points, the
    /// unit for scene-relative tolerances.
    pub fn diagonal(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for r in &self.ref_points {
            for (i, value) in [r.position.x, r.position.y, r.position.z].iter().enumerate() {
                lo[i] = lo[i].min(*value);
                hi[i] = hi[i].max(*value);
            }
        }
        if self.ref_points.is_empty() {
            return 0.0;
        }
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt()
    }

    /// Canonical JSON serialization: cameras sorted by id, points by id, map
    /// keys ordered. `save(load(s))` is byte-identical for canonical input.
    pub fn to_canonical_json(&self) -> String {
        let doc = SceneDoc {
            cameras: self
                .cameras
                .iter()
                .zip(&self.view_names)
                .map(|(cam, name)| CameraDoc {
                    id: name.clone(),
                    k: matrix_rows(&cam.k),
                    r: matrix_rows(&cam.r),
                    c: [cam.c.x, cam.c.y, cam.c.z],
                    width: cam.width,
                    height: cam.height,
                })
                .collect(),
            points: self
                .ref_points
                .iter()
                .map(|r| PointDoc {
                    id: r.id,
                    xyz: [r.position.x, r.position.y, r.position.z],
                    obs: r
                        .observations
                        .iter()
                        .map(|(v, p)| ObsDoc {
                            view: self.view_names[v.index()].clone(),
                            uv: [p.u, p.v],
                        })
                        .collect(),
                })
                .collect(),
            edge_images: self
                .view_names
                .iter()
                .zip(&self.edge_image_rel)
                .map(|(n, p)| (n.clone(), p.clone()))
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("scene serialization cannot fail")
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        fs::write(path, self.to_canonical_json())?;
        Ok(())
    }
}

fn matrix_rows(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = m[(r, c)];
        }
    }
    out
}

/// All pipeline parameters with their defaults. Distances are in pixels
/// unless stated otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Maximum reprojection error accepted by validation (px).
    pub eps: f64,
    /// Maximum turning angle inside a regular run (degrees).
    pub alpha_r: f64,
    /// Fraction of top-ranked polylines defining the filter threshold.
    pub top_fraction: f64,
    /// Point-to-polyline proximity for matching (px).
    pub d_plmatch: f64,
    /// Point-to-polyline proximity for visibility refinement (px).
    pub d_sev: f64,
    /// Edge-following step along the seed view's polyline (px).
    pub l_d: f64,
    /// Outer search sphere radius, relative to the scene diagonal.
    pub r_outer: f64,
    /// Inner sphere radius as a fraction of the outer one.
    pub r_inner_ratio: f64,
    /// Spacing of the sampled output cloud (world units); `None` derives
    /// 0.2% of the scene diagonal.
    pub sample_spacing: Option<f64>,
    /// Minimum similarity kept as a graph edge.
    pub min_sim: f64,
    /// Polyline smoothing tolerance (px).
    pub dp_tolerance: f64,
    /// Cycles shorter than this never form during graph construction (px).
    pub min_loop: f64,
    /// Reserved for randomized tie-breaks; unused by the default pipeline.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            eps: 2.5,
            alpha_r: 20.0,
            top_fraction: 0.10,
            d_plmatch: 4.0,
            d_sev: 3.0,
            l_d: 10.0,
            r_outer: 0.01,
            r_inner_ratio: 1.0 / 3.0,
            sample_spacing: None,
            min_sim: 0.05,
            dp_tolerance: 1.0,
            min_loop: 4.0,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let data = fs::read_to_string(path)?;
        let cfg: PipelineConfig =
            serde_json::from_str(&data).map_err(|e| SceneError::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let positive = [
            ("eps", self.eps),
            ("alpha_r", self.alpha_r),
            ("top_fraction", self.top_fraction),
            ("d_plmatch", self.d_plmatch),
            ("d_sev", self.d_sev),
            ("l_d", self.l_d),
            ("r_outer", self.r_outer),
            ("r_inner_ratio", self.r_inner_ratio),
            ("min_sim", self.min_sim),
            ("dp_tolerance", self.dp_tolerance),
            ("min_loop", self.min_loop),
        ];
        for (name, value) in positive {
            if !(value > 0.0) {
                return Err(SceneError::InvalidConfig(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if let Some(s) = self.sample_spacing {
            if !(s > 0.0) {
                return Err(SceneError::InvalidConfig(format!(
                    "sample_spacing must be positive, got {s}"
                )));
            }
        }
        if self.r_inner_ratio >= 1.0 {
            return Err(SceneError::InvalidConfig(
                "r_inner_ratio must be below 1".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn minimal_scene_json() -> String {
        // two axis-aligned cameras, one point observed by both
        let identity = "[1.0,0.0,0.0,0.0,1.0,0.0,0.0,0.0,1.0]";
        let k = "[100.0,0.0,32.0,0.0,100.0,24.0,0.0,0.0,1.0]";
        format!(
            r#"{{
  "cameras": [
    {{"id": "a", "K": {k}, "R": {identity}, "C": [0.0,0.0,0.0], "width": 64, "height": 48}},
    {{"id": "b", "K": {k}, "R": {identity}, "C": [1.0,0.0,0.0], "width": 64, "height": 48}}
  ],
  "points": [
    {{"id": 7, "xyz": [0.5,0.0,5.0], "obs": [{{"view": "a", "uv": [42.0,24.0]}}, {{"view": "b", "uv": [22.0,24.0]}}]}}
  ],
  "edge_images": {{"a": "a.pgm", "b": "b.pgm"}}
}}"#
        )
    }

    fn write_scene(dir: &Path) -> PathBuf {
        let img = crate::raster::EdgeImage::new(64, 48);
        fs::write(dir.join("a.pgm"), img.to_pgm_bytes()).unwrap();
        fs::write(dir.join("b.pgm"), img.to_pgm_bytes()).unwrap();
        let path = dir.join("scene.json");
        fs::write(&path, minimal_scene_json()).unwrap();
        path
    }

    #[test]
    fn minimal_scene_loads() {
        let dir = tempfile::tempdir().unwrap();
        let scene = Scene::load(&write_scene(dir.path())).unwrap();
        assert_eq!(scene.num_views(), 2);
        assert_eq!(scene.view_names, vec!["a", "b"]);
        assert_eq!(scene.ref_points.len(), 1);
        assert_eq!(scene.ref_points[0].id, 7);
        assert_eq!(scene.view_id("b"), Some(ViewId(1)));
    }

    #[test]
    fn dangling_view_reference_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_scene(dir.path());
        let bad = fs::read_to_string(&path)
            .unwrap()
            .replace(r#""view": "b""#, r#""view": "zz""#);
        fs::write(&path, bad).unwrap();
        match Scene::load(&path) {
            Err(SceneError::DanglingViewReference { point, view }) => {
                assert_eq!(point, 7);
                assert_eq!(view, "zz");
            }
            other => panic!("expected dangling reference, got {other:?}"),
        }
    }

    #[test]
    fn missing_edge_image_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_scene(dir.path());
        fs::remove_file(dir.path().join("b.pgm")).unwrap();
        assert!(matches!(
            Scene::load(&path),
            Err(SceneError::MissingEdgeImage(_))
        ));
    }

    #[test]
    fn parse_error_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        fs::write(&path, "{\n  \"cameras\": [,]\n}").unwrap();
        match Scene::load(&path) {
            Err(SceneError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let scene = Scene::load(&write_scene(dir.path())).unwrap();
        let canonical = scene.to_canonical_json();
        let path2 = dir.path().join("canonical.json");
        fs::write(&path2, &canonical).unwrap();
        let reloaded = Scene::load(&path2).unwrap();
        assert_eq!(reloaded.to_canonical_json(), canonical);
    }

    #[test]
    fn config_defaults_match_documented_constants() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.eps, 2.5);
        assert_eq!(cfg.alpha_r, 20.0);
        assert_eq!(cfg.top_fraction, 0.10);
        assert_eq!(cfg.l_d, 10.0);
        assert_eq!(cfg.dp_tolerance, 1.0);
        assert_eq!(cfg.min_loop, 4.0);
        assert_eq!(cfg.d_plmatch, 4.0);
        assert_eq!(cfg.d_sev, 3.0);
        assert_eq!(cfg.min_sim, 0.05);
        assert_eq!(cfg.r_outer, 0.01);
        assert!((cfg.r_inner_ratio - 1.0 / 3.0).abs() < 1e-15);
        cfg.validate().unwrap();
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut cfg = PipelineConfig::default();
        cfg.eps = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.r_inner_ratio = 1.5;
        assert!(cfg.validate().is_err());
    }
}
