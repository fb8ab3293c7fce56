//! End-to-end reconstruction of a synthetic scene.
//!
//! Generates the cube-and-helix reference scene (noisy edge bitmaps, six
//! orbiting cameras, 200 reference points), runs the full pipeline and scores
//! the result against the generating ground truth.
//!
//! ```bash
//! cargo run --release --example reconstruct_synthetic
//! ```

use std::time::Instant;

use edgeforge::ply::{export_ply, PlyMode};
use edgeforge::{evaluate, generate, run_pipeline, PipelineConfig, Scene, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::temp_dir().join("edgeforge_example_reconstruct");
    let spec = SyntheticSpec::cube_and_helix();
    let (scene_path, truth) = generate(&spec, &out_dir)?;
    println!("scene written to {}", scene_path.display());

    let scene = Scene::load(&scene_path)?;
    println!(
        "{} views, {} reference points, diagonal {:.3}",
        scene.num_views(),
        scene.ref_points.len(),
        scene.diagonal()
    );

    let config = PipelineConfig::default();
    let started = Instant::now();
    let output = run_pipeline(&scene, &config)?;
    let elapsed = started.elapsed();
    println!(
        "reconstructed {} polylines ({} edge-points, {} sampled cloud points) in {:.1?}",
        output.polylines.len(),
        output.polylines.iter().map(|p| p.points.len()).sum::<usize>(),
        output.sampled_cloud.len(),
        elapsed
    );

    let tau = 0.005 * scene.diagonal();
    let metrics = evaluate(&output.polylines, &truth, tau);
    println!(
        "recall {:.1}%  precision {:.1}%  mae {:.4}  rmse {:.4}  max {:.4}  (tau {:.4})",
        100.0 * metrics.recall,
        100.0 * metrics.precision,
        metrics.mae,
        metrics.rmse,
        metrics.max_dist,
        metrics.tau
    );

    let edges_ply = out_dir.join("edges.ply");
    let cloud_ply = out_dir.join("cloud.ply");
    export_ply(&output, &edges_ply, PlyMode::Wireframe)?;
    export_ply(&output, &cloud_ply, PlyMode::Points)?;
    println!("wireframe: {}", edges_ply.display());
    println!("cloud:     {}", cloud_ply.display());
    Ok(())
}
