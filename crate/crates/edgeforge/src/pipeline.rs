//! Full reconstruction pipeline: edge-graph preparation, matching, candidate
//! generation, validation and growth, visibility refinement, outlier
//! filtering and edge sampling.
//!
//! The run is deterministic for a fixed scene and configuration: parallel
//! stages merge their results in canonical order, so the worker count (capped
//! by `EDGEFORGE_THREADS`) never changes the output bytes.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::edge_graph::{build_graph, filter_graph, smooth_graph, ViewGraph};
use crate::geometry::Point3;
use crate::matching::{build_similarity_graph, detect_communities, Pec};
use crate::pepc::{generate_pepcs, PepcSource};
use crate::raster::{EdgeImage, RasterError};
use crate::scene::{PipelineConfig, Scene, SceneError};
use crate::validation::{
    epsilon_contract_holds, filter_outliers, follow_edge, integrate_view, refine_visibility,
    resolve_pepc, GrowContext, PepcOutcome, Polyline3D,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("edge image for view {view}: {source}")]
    Raster { view: String, source: RasterError },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("EDGEFORGE_THREADS is not a valid worker count: {0}")]
    BadThreadCount(String),
    #[error("internal invariant breached: {0}")]
    Internal(String),
}

/// One sampled point of the output cloud, tagged with its source polyline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CloudPoint {
    pub point: Point3,
    pub polyline: u32,
}

/// Final result: reconstructed 3D polylines and the finely sampled edge
/// point cloud.
#[derive(Debug, Clone)]
pub struct EdgeSetOutput {
    pub polylines: Vec<Polyline3D>,
    pub sampled_cloud: Vec<CloudPoint>,
}

/// Per-PEPC diagnostic record, written as JSON lines under `--debug-log`.
#[derive(Debug, Clone, Serialize)]
pub struct PepcTrace {
    pub pepc: u32,
    pub source: PepcSource,
    pub seed_view: u32,
    pub outcome: &'static str,
    pub chain_points: usize,
}

/// Loads and decodes every view's edge image.
pub fn load_edge_images(scene: &Scene) -> Result<Vec<EdgeImage>, PipelineError> {
    scene
        .edge_image_paths
        .iter()
        .zip(&scene.view_names)
        .map(|(path, name)| {
            EdgeImage::load(path).map_err(|source| PipelineError::Raster {
                view: name.clone(),
                source,
            })
        })
        .collect()
}

/// Per-view edge-graph preparation: build from the bitmap, smooth the
/// polylines, filter non-structural components.
pub fn build_view_graphs(
    scene: &Scene,
    config: &PipelineConfig,
) -> Result<Vec<ViewGraph>, PipelineError> {
    let images = load_edge_images(scene)?;
    Ok(images
        .par_iter()
        .zip(&scene.cameras)
        .map(|(img, cam)| {
            let raw = build_graph(img);
            let smoothed = smooth_graph(&raw, config.dp_tolerance);
            let filtered = filter_graph(&smoothed, config.alpha_r, config.top_fraction);
            ViewGraph::new(cam.id, filtered)
        })
        .collect())
}

/// Matches polylines across views and groups them into PECs. Sets the weight
/// cache on the reference points as a side effect.
pub fn detect_pecs(
    views: &[ViewGraph],
    refs: &mut [crate::matching::ReferencePoint],
    config: &PipelineConfig,
) -> Vec<Pec> {
    let graph = build_similarity_graph(views, refs, config.d_plmatch, config.min_sim);
    detect_communities(&graph)
}

fn thread_pool() -> Result<rayon::ThreadPool, PipelineError> {
    let threads = match std::env::var("EDGEFORGE_THREADS") {
        Ok(value) => value
            .parse::<usize>()
            .map_err(|_| PipelineError::BadThreadCount(value))?,
        Err(_) => 0, // rayon default
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| PipelineError::Internal(e.to_string()))
}

pub fn run_pipeline(
    scene: &Scene,
    config: &PipelineConfig,
) -> Result<EdgeSetOutput, PipelineError> {
    run_pipeline_traced(scene, config).map(|(out, _)| out)
}

/// Runs the full pipeline and reports the fate of every PEPC.
pub fn run_pipeline_traced(
    scene: &Scene,
    config: &PipelineConfig,
) -> Result<(EdgeSetOutput, Vec<PepcTrace>), PipelineError> {
    config.validate()?;
    let pool = thread_pool()?;
    pool.install(|| run_inner(scene, config))
}

fn run_inner(
    scene: &Scene,
    config: &PipelineConfig,
) -> Result<(EdgeSetOutput, Vec<PepcTrace>), PipelineError> {
    let views = build_view_graphs(scene, config)?;
    let mut refs = scene.ref_points.clone();
    let pecs = detect_pecs(&views, &mut refs, config);

    let diagonal = scene.diagonal();
    let r_outer = config.r_outer * diagonal;
    let r_inner = r_outer * config.r_inner_ratio;
    let pepcs = generate_pepcs(
        &refs,
        &pecs,
        &views,
        &scene.cameras,
        r_inner,
        r_outer,
        config.l_d,
    );

    let ctx = GrowContext::new(&scene.cameras, &views, config.eps, config.l_d);

    // resolve, grow and integrate, one independent unit of work per PEPC
    let resolved: Vec<(Option<Polyline3D>, PepcTrace)> = pepcs
        .par_iter()
        .enumerate()
        .map(|(id, pepc)| {
            let outcome = resolve_pepc(&ctx, pepc);
            let mut trace = PepcTrace {
                pepc: id as u32,
                source: pepc.source,
                seed_view: pepc.seed.view.0,
                outcome: outcome.reason(),
                chain_points: 0,
            };
            let PepcOutcome::Accepted(boxed) = outcome else {
                return (None, trace);
            };
            let (point, dirs) = *boxed;
            let mut chain = follow_edge(&ctx, id as u32, &point, &dirs);
            // integrate the candidate views excluded from the bootstrap:
            // a view joins only when exactly one of its candidates fits
            for (&view, cands) in &pepc.candidates {
                if chain.points[chain.seed_index]
                    .observations
                    .contains_key(&view)
                {
                    continue;
                }
                let mut fits = cands
                    .iter()
                    .filter_map(|c| integrate_view(&ctx, &chain, view, c));
                if let (Some(updated), None) = (fits.next(), fits.next()) {
                    chain = updated;
                }
            }
            trace.chain_points = chain.points.len();
            (Some(chain), trace)
        })
        .collect();

    let mut traces = Vec::with_capacity(resolved.len());
    let mut chains = Vec::new();
    for (chain, trace) in resolved {
        traces.push(trace);
        if let Some(c) = chain {
            chains.push(c);
        }
    }

    let refined: Vec<Polyline3D> = chains
        .par_iter()
        .map(|pl| refine_visibility(&ctx, pl, config.d_sev))
        .collect();

    let polylines = filter_outliers(refined);
    debug_assert!(
        polylines
            .iter()
            .flat_map(|p| p.points.iter())
            .all(|p| epsilon_contract_holds(&ctx, p)),
        "an emitted edge-point violates the reprojection contract"
    );

    let spacing = config.sample_spacing.unwrap_or(0.002 * diagonal.max(1e-12));
    let sampled_cloud = sample_edges(&polylines, spacing);
    Ok((
        EdgeSetOutput {
            polylines,
            sampled_cloud,
        },
        traces,
    ))
}

/// Arc-length uniform samples of a 3D chain, both endpoints included, with
/// consecutive gaps never exceeding `spacing`.
pub fn sample_chain(points: &[Point3], spacing: f64) -> Vec<Point3> {
    assert!(spacing > 0.0, "spacing must be positive");
    if points.len() < 2 {
        return points.to_vec();
    }
    let mut prefix = Vec::with_capacity(points.len());
    prefix.push(0.0);
    for w in points.windows(2) {
        prefix.push(prefix.last().unwrap() + w[0].dist(w[1]));
    }
    let total = *prefix.last().unwrap();
    if total <= 0.0 {
        return vec![points[0], *points.last().unwrap()];
    }
    let n = (total / spacing).ceil().max(1.0) as usize;
    let mut out = Vec::with_capacity(n + 1);
    let mut seg = 0usize;
    for i in 0..=n {
        let s = total * i as f64 / n as f64;
        while seg + 2 < prefix.len() && prefix[seg + 1] < s {
            seg += 1;
        }
        let len = prefix[seg + 1] - prefix[seg];
        let t = if len > 0.0 { (s - prefix[seg]) / len } else { 0.0 };
        let (a, b) = (points[seg], points[seg + 1]);
        out.push(Point3::new(
            a.x + (b.x - a.x) * t,
            a.y + (b.y - a.y) * t,
            a.z + (b.z - a.z) * t,
        ));
    }
    out
}

/// Samples every polyline of the output set.
pub fn sample_edges(polylines: &[Polyline3D], spacing: f64) -> Vec<CloudPoint> {
    polylines
        .iter()
        .enumerate()
        .flat_map(|(id, pl)| {
            let pts: Vec<Point3> = pl.points.iter().map(|p| p.position).collect();
            sample_chain(&pts, spacing)
                .into_iter()
                .map(move |point| CloudPoint {
                    point,
                    polyline: id as u32,
                })
        })
        .collect()
}
