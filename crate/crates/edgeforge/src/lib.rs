//! Reconstruction of straight and curved 3D edges from an unordered set of
//! calibrated views.
//!
//! Inputs are the usual structure-from-motion byproducts: per-view binary
//! edge images, camera calibrations and a sparse 3D point cloud with
//! visibility. Output is a set of 3D polylines (plus a finely sampled edge
//! point cloud) suitable for feeding dense reconstruction stages.
//!
//! The pipeline stages map onto the modules below:
//!
//! 1. [`raster`] / [`edge_graph`] – decode edge bitmaps, build per-image 2D
//!    edge-graphs, smooth their polylines and filter non-structural clutter.
//! 2. [`matching`] – score cross-view polyline similarity through shared
//!    nearby 3D points and group polylines into potential edge
//!    correspondences (PECs) by community detection.
//! 3. [`pepc`] – generate potential edge-point correspondences (PEPCs):
//!    per-view candidate 2D points for a prospective 3D edge-point, seeded
//!    from reference points and from PECs.
//! 4. [`validation`] – resolve each PEPC by triangulation and direction
//!    matching, grow 3D polylines along the 2D edges, refine visibility and
//!    drop under-observed outliers.
//! 5. [`scene`] / [`pipeline`] / [`ply`] – scene ingestion, orchestration,
//!    edge sampling and PLY export.
//! 6. [`synth`] – synthetic scenes with exact ground truth, used by the test
//!    suite and handy for benchmarking parameter choices.
//!
//! See the crate examples for one runnable program per stage, and the
//! `edgeforge` binary for the command-line interface.

pub mod edge_graph;
pub mod geometry;
pub mod louvain;
pub mod matching;
pub mod pepc;
pub mod pipeline;
pub mod ply;
pub mod raster;
pub mod scene;
pub mod synth;
pub mod validation;

pub use edge_graph::{
    build_graph, extract_polylines, filter_graph, regular_length, smooth_graph, smooth_polyline,
    ChainPos, EdgeGraph2D, Polyline2D, ViewGraph,
};
pub use geometry::{
    epipolar_line, fundamental_matrix, project, sphere_projection_radius, triangulate, CameraView,
    GeometryError, Line2, Point2, Point3, TriangulationResult, ViewId,
};
pub use matching::{
    build_similarity_graph, close_points, detect_communities, point_weight, polyline_similarity,
    MatchError, Pec, ReferencePoint, SimilarityGraph,
};
pub use pepc::{
    count_selections, intersect_polyline_line, pepc_from_pec, pepc_from_ref_point, CandidatePoint,
    Pepc, PepcSeed, PepcSource,
};
pub use pipeline::{
    run_pipeline, run_pipeline_traced, sample_edges, CloudPoint, EdgeSetOutput, PipelineError,
};
pub use scene::{PipelineConfig, Scene, SceneError};
pub use synth::{evaluate, generate, EvalMetrics, GroundTruth, SyntheticSpec};
pub use ply::{export_ply, read_wireframe_ply, PlyMode};
pub use validation::{
    filter_outliers, follow_edge, integrate_view, kv_threshold, refine_visibility, resolve_pepc,
    validate_selection, DirectionTriple, EdgePoint3D, GrowContext, PepcOutcome, Polyline3D,
};
