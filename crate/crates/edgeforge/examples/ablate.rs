//! Noise ablation probe.
use edgeforge::{evaluate, generate, run_pipeline, PipelineConfig, Scene, SyntheticSpec};

fn run(label: &str, spec: &SyntheticSpec) {
    let dir = std::env::temp_dir().join(format!("edgeforge_ablate_{label}"));
    let (path, truth) = generate(spec, &dir).unwrap();
    let scene = Scene::load(&path).unwrap();
    let out = run_pipeline(&scene, &PipelineConfig::default()).unwrap();
    let tau = 0.005 * scene.diagonal();
    let m = evaluate(&out.polylines, &truth, tau);
    println!(
        "{label:16} recall {:5.1}%  precision {:5.1}%  chains {:4}  max {:.4}",
        100.0 * m.recall, 100.0 * m.precision, out.polylines.len(), m.max_dist
    );
}

fn main() {
    let base = SyntheticSpec::cube_and_helix();
    run("full-noise", &base);
    let mut no_dropout = base.clone();
    no_dropout.noise.dropout = 0.0;
    run("no-dropout", &no_dropout);
    let mut no_clutter = base.clone();
    no_clutter.noise.spurious_density = 0.0;
    run("no-clutter", &no_clutter);
    let mut no_jitter = base.clone();
    no_jitter.noise.jitter_sigma = 0.0;
    run("no-jitter", &no_jitter);
    let mut clean = base.clone();
    clean.noise.dropout = 0.0;
    clean.noise.spurious_density = 0.0;
    clean.noise.jitter_sigma = 0.0;
    run("clean", &clean);
}
