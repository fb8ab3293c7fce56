//! Temporary diagnostics for pipeline tuning.

use std::collections::BTreeMap;

use edgeforge::edge_graph::{build_graph, extract_polylines, filter_graph, smooth_graph};
use edgeforge::pipeline::{build_view_graphs, load_edge_images, run_pipeline_traced};
use edgeforge::{evaluate, generate, PipelineConfig, Scene, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::temp_dir().join("edgeforge_probe");
    let spec = SyntheticSpec::cube_and_helix();
    let (scene_path, truth) = generate(&spec, &out_dir)?;
    let scene = Scene::load(&scene_path)?;
    let config = PipelineConfig::default();

    // per-view graph statistics
    let images = load_edge_images(&scene)?;
    for (i, img) in images.iter().enumerate().take(2) {
        let raw = build_graph(img);
        let raw_pls = extract_polylines(&raw);
        let smoothed = smooth_graph(&raw, config.dp_tolerance);
        let filtered = filter_graph(&smoothed, config.alpha_r, config.top_fraction);
        let fpls = extract_polylines(&filtered);
        let lens: Vec<f64> = fpls.iter().map(|p| p.length()).collect();
        let total: f64 = lens.iter().sum();
        let long = lens.iter().filter(|&&l| l >= 20.0).count();
        println!(
            "view {i}: {} px marked, raw polylines {}, filtered polylines {} (total len {:.0}, >=20px: {})",
            img.edge_pixel_count(),
            raw_pls.len(),
            fpls.len(),
            total,
            long
        );
        let mut sorted = lens.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        println!("  top lengths: {:?}", &sorted[..sorted.len().min(10)]);
        let mut deg_hist = [0usize; 6];
        for n in 0..filtered.node_count() as u32 {
            deg_hist[filtered.degree(n).min(5)] += 1;
        }
        println!("  degree histogram: {deg_hist:?}");
        let stubs = fpls.iter().filter(|p| p.length() <= 2.0).count();
        println!("  stub polylines (<=2px): {stubs}");
    }

    let views = build_view_graphs(&scene, &config)?;
    let mut refs = scene.ref_points.clone();
    let pecs = edgeforge::pipeline::detect_pecs(&views, &mut refs, &config);
    println!("{} pecs; sizes: {:?}", pecs.len(),
        pecs.iter().map(|p| (p.num_views(), p.views.values().map(|s| s.len()).sum::<usize>())).take(12).collect::<Vec<_>>());

    // upper bound: views in which a ground-truth sample lies on a surviving polyline
    {
        use edgeforge::geometry::project;
        let mut hist = [0usize; 7];
        let mut n = 0;
        for chain in &truth.chains {
            for p in edgeforge::pipeline::sample_chain(chain, 0.02) {
                let mut views_on = 0;
                for (vg, cam) in views.iter().zip(&scene.cameras) {
                    if let Ok(q) = project(cam, p) {
                        if !vg.polylines_within(q, 2.0).is_empty() {
                            views_on += 1;
                        }
                    }
                }
                hist[views_on.min(6)] += 1;
                n += 1;
            }
        }
        println!("gt sample coverage by views (0..6+): {hist:?} of {n}");
        let ge3: usize = hist[3..].iter().sum();
        println!("samples with >=3 views on surviving polylines: {:.1}%", 100.0 * ge3 as f64 / n as f64);
    }

    edgeforge::validation::step_stats::reset();
    let (output, traces) = run_pipeline_traced(&scene, &config)?;
    let [eoc, noint, eps, ok] = edgeforge::validation::step_stats::snapshot();
    println!("grow steps: ok {ok}, end-of-chain {eoc}, no-intersection {noint}, eps {eps}");
    let mut by_outcome: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for t in &traces {
        let src = match t.source {
            edgeforge::PepcSource::RefPoint(_) => "ref",
            edgeforge::PepcSource::Pec(_) => "pec",
        };
        *by_outcome.entry((src, t.outcome)).or_default() += 1;
    }
    println!("pepc outcomes: {by_outcome:?}  (total {})", traces.len());
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for t in traces.iter().filter(|t| t.outcome == "accepted") {
        *hist.entry(t.chain_points.min(40)).or_default() += 1;
    }
    println!("chain length histogram (accepted): {hist:?}");
    println!(
        "final: {} polylines, {} points, mean obs {:.2}",
        output.polylines.len(),
        output.polylines.iter().map(|p| p.points.len()).sum::<usize>(),
        output
            .polylines
            .iter()
            .map(|p| p.mean_observations())
            .sum::<f64>()
            / output.polylines.len().max(1) as f64
    );
    let tau = 0.005 * scene.diagonal();
    let m = evaluate(&output.polylines, &truth, tau);
    println!(
        "recall {:.1}% precision {:.1}% mae {:.4} max {:.4}",
        100.0 * m.recall,
        100.0 * m.precision,
        m.mae,
        m.max_dist
    );

    // per-ground-truth-chain recall
    for (i, chain) in truth.chains.iter().enumerate() {
        let single = edgeforge::GroundTruth { chains: vec![chain.clone()] };
        let m1 = evaluate(&output.polylines, &single, tau);
        println!("  gt chain {i}: recall {:.1}%  (len {:.2})", 100.0 * m1.recall,
            chain.windows(2).map(|w| w[0].dist(w[1])).sum::<f64>());
    }

    // coverage map along selected ground-truth edges
    {
        use edgeforge::geometry::project;
        for &ci in &[3usize, 7, 11] {
            let chain = &truth.chains[ci];
            let samples = edgeforge::pipeline::sample_chain(chain, tau / 2.0);
            let mut map = String::new();
            for p in &samples {
                let covered = output.polylines.iter().any(|pl| {
                    pl.points.windows(2).any(|w| {
                        let (a, b) = (w[0].position, w[1].position);
                        let ab = b.to_vec() - a.to_vec();
                        let l2 = ab.norm_squared();
                        if l2 <= 0.0 { return p.dist(a) <= tau; }
                        let t = ((p.to_vec() - a.to_vec()).dot(&ab) / l2).clamp(0.0, 1.0);
                        p.dist(edgeforge::Point3::from_vec(a.to_vec() + ab * t)) <= tau
                    }) || pl.points.iter().any(|e| e.position.dist(*p) <= tau)
                });
                map.push(if covered { '#' } else { '.' });
            }
            println!("chain {ci}: {map}");
            // fragment lengths under the first uncovered sample, per view
            if let Some(idx) = map.find('.') {
                let p = samples[idx];
                let mut frag_info = Vec::new();
                for (vg, cam) in views.iter().zip(&scene.cameras) {
                    if let Ok(q) = project(cam, p) {
                        let near = vg.closest_within(q, 2.0);
                        if let Some(&(pid, _, _)) = near.first() {
                            frag_info.push(format!("v{} len {:.0}", vg.view.0, vg.polyline(pid).length()));
                        } else {
                            frag_info.push(format!("v{} none", vg.view.0));
                        }
                    }
                }
                println!("  first gap sample: {}", frag_info.join(", "));
            }
        }
    }

    // manual stage walk to isolate the outlier filter's cost
    {
        use edgeforge::pepc::generate_pepcs;
        use edgeforge::validation::{
            filter_outliers, follow_edge, integrate_view, refine_visibility, resolve_pepc,
            GrowContext, PepcOutcome,
        };
        let diag = scene.diagonal();
        let r_outer = config.r_outer * diag;
        let pepcs = generate_pepcs(
            &refs, &pecs, &views, &scene.cameras,
            r_outer * config.r_inner_ratio, r_outer, config.l_d,
        );
        let ctx = GrowContext::new(&scene.cameras, &views, config.eps, config.l_d);
        let mut chains = Vec::new();
        for (id, pepc) in pepcs.iter().enumerate() {
            if let PepcOutcome::Accepted(boxed) = resolve_pepc(&ctx, pepc) {
                let mut chain = follow_edge(&ctx, id as u32, &boxed.0, &boxed.1);
                for (&view, cands) in &pepc.candidates {
                    if chain.points[chain.seed_index].observations.contains_key(&view) {
                        continue;
                    }
                    let mut fits = cands.iter().filter_map(|c| integrate_view(&ctx, &chain, view, c));
                    if let (Some(updated), None) = (fits.next(), fits.next()) {
                        chain = updated;
                    }
                }
                chains.push(chain);
            }
        }
        // classify no-valid-selection failures on reference-point seeds
        let mut no_truth_nearby = 0;
        let mut missing_candidates = 0;
        let mut step_failures = 0;
        for pepc in pepcs.iter() {
            if !matches!(resolve_pepc(&ctx, pepc), PepcOutcome::NoValidSelection) {
                continue;
            }
            // nearest ground-truth point to the seed's viewing ray
            let seed_cam = &scene.cameras[pepc.seed.view.index()];
            let mut best: Option<(f64, edgeforge::Point3)> = None;
            for chain in &truth.chains {
                for p in edgeforge::pipeline::sample_chain(chain, 0.01) {
                    if let Ok(q) = edgeforge::geometry::project(seed_cam, p) {
                        let d = q.dist(pepc.seed.point);
                        if best.is_none() || d < best.unwrap().0 {
                            best = Some((d, p));
                        }
                    }
                }
            }
            let Some((d, gt)) = best else { continue };
            if d > 2.0 {
                no_truth_nearby += 1; // seed sits on clutter
                continue;
            }
            // does every candidate view contain the true correspondence?
            let mut views_with_truth = 0;
            for (&view, cands) in &pepc.candidates {
                let Ok(q) = edgeforge::geometry::project(&scene.cameras[view.index()], gt) else {
                    continue;
                };
                if cands.iter().any(|c| c.point.dist(q) <= 2.5) {
                    views_with_truth += 1;
                }
            }
            if views_with_truth >= 2 {
                step_failures += 1;
            } else {
                missing_candidates += 1;
            }
        }
        println!(
            "no-valid-selection breakdown: clutter-seed {no_truth_nearby}, missing-candidates {missing_candidates}, step-failures {step_failures}"
        );

        let refined: Vec<_> = chains.iter().map(|c| refine_visibility(&ctx, c, config.d_sev)).collect();
        let pre = evaluate(&refined, &truth, tau);
        println!("pre-outlier-filter: {} chains, recall {:.1}% precision {:.1}%",
            refined.len(), 100.0 * pre.recall, 100.0 * pre.precision);
        let obs_hist: BTreeMap<usize, usize> = refined.iter().fold(BTreeMap::new(), |mut h, c| {
            *h.entry(c.mean_observations().round() as usize).or_default() += 1; h
        });
        println!("mean-obs histogram: {obs_hist:?}");
        let kept = filter_outliers(refined);
        let post = evaluate(&kept, &truth, tau);
        println!("post-outlier-filter: {} chains, recall {:.1}% precision {:.1}%",
            kept.len(), 100.0 * post.recall, 100.0 * post.precision);
    }
    Ok(())
}
