//! Cross-view polyline matching.
//!
//! Two polylines observed on different views likely depict the same 3D edge
//! when they share many nearby reference points. Similarity is the weighted
//! intersection-over-union of their close-point sets, where a reference
//! point's weight is the inverse of the average number of polylines close to
//! its reprojections. Community detection on the resulting similarity graph
//! yields potential edge correspondences (PECs).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edge_graph::{Polyline2D, ViewGraph};
use crate::geometry::{Point2, Point3, ViewId};
use crate::louvain;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("reference point needs at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("no observing view has a polyline near the point")]
    ZeroDenominator,
}

/// Sparse 3D point (usually from structure from motion) with its per-view 2D
/// observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePoint {
    pub id: u64,
    pub position: Point3,
    pub observations: BTreeMap<ViewId, Point2>,
    /// Cached Eq-style weight; `None` until computed, and stays `None` for
    /// points with no nearby polyline anywhere (excluded from similarity sums).
    pub weight_cache: Option<f64>,
}

impl ReferencePoint {
    pub fn new(
        id: u64,
        position: Point3,
        observations: BTreeMap<ViewId, Point2>,
    ) -> Result<Self, MatchError> {
        if observations.len() < 2 {
            return Err(MatchError::TooFewObservations(observations.len()));
        }
        Ok(Self {
            id,
            position,
            observations,
            weight_cache: None,
        })
    }
}

/// Indices (into the reference-point slice) of the points whose observation
/// on `view` lies within `d` of the polyline chain.
pub fn close_points(
    pl: &Polyline2D,
    view: ViewId,
    refs: &[ReferencePoint],
    d: f64,
) -> BTreeSet<usize> {
    refs.iter()
        .enumerate()
        .filter(|(_, r)| {
            r.observations
                .get(&view)
                .is_some_and(|obs| pl.distance_to(*obs) <= d)
        })
        .map(|(i, _)| i)
        .collect()
}

/// Weight of a reference point: the inverse of the average, over its
/// observing views, of the number of polylines within `d` of its observation.
/// Views with no nearby polyline still count in the average; if no observing
/// view has any nearby polyline the point carries no weight at all.
pub fn point_weight(r: &ReferencePoint, views: &[ViewGraph], d: f64) -> Result<f64, MatchError> {
    let mut total = 0usize;
    let mut observing = 0usize;
    for (view, obs) in &r.observations {
        let Some(vg) = views.get(view.index()) else {
            continue;
        };
        observing += 1;
        total += vg.polylines_within(*obs, d).len();
    }
    if total == 0 {
        return Err(MatchError::ZeroDenominator);
    }
    Ok(observing as f64 / total as f64)
}

/// Similarity of two polylines on different views: weighted intersection over
/// union of their close reference points. Zero when the union carries no
/// weight.
pub fn polyline_similarity(
    view_a: ViewId,
    pl_a: &Polyline2D,
    view_b: ViewId,
    pl_b: &Polyline2D,
    refs: &[ReferencePoint],
    views: &[ViewGraph],
    d: f64,
) -> f64 {
    let ca = close_points(pl_a, view_a, refs, d);
    let cb = close_points(pl_b, view_b, refs, d);
    let mut intersection = 0.0;
    let mut union = 0.0;
    for &i in ca.union(&cb) {
        let w = match refs[i].weight_cache {
            Some(w) => w,
            None => match point_weight(&refs[i], views, d) {
                Ok(w) => w,
                Err(_) => continue,
            },
        };
        union += w;
        if ca.contains(&i) && cb.contains(&i) {
            intersection += w;
        }
    }
    if union > 0.0 {
        intersection / union
    } else {
        0.0
    }
}

/// Weighted undirected graph over `(view, polyline)` nodes. Polylines of the
/// same view are never connected; edge weights are similarities in `(0, 1]`.
#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    pub nodes: Vec<(ViewId, u32)>,
    /// `(node index a, node index b, similarity)` with `a < b`.
    pub edges: Vec<(u32, u32, f64)>,
}

impl SimilarityGraph {
    pub fn node_index(&self, view: ViewId, polyline: u32) -> Option<u32> {
        self.nodes
            .binary_search(&(view, polyline))
            .ok()
            .map(|i| i as u32)
    }
}

/// Computes per-point weights, scores all cross-view polyline pairs that
/// share at least one close reference point, and keeps edges with similarity
/// at or above `min_sim`.
pub fn build_similarity_graph(
    views: &[ViewGraph],
    refs: &mut [ReferencePoint],
    d: f64,
    min_sim: f64,
) -> SimilarityGraph {
    let mut nodes: Vec<(ViewId, u32)> = Vec::new();
    for vg in views {
        for pid in 0..vg.polylines.len() as u32 {
            nodes.push((vg.view, pid));
        }
    }
    nodes.sort_unstable();
    let index_of = |view: ViewId, pid: u32| -> u32 {
        nodes
            .binary_search(&(view, pid))
            .expect("node present by construction") as u32
    };

    // close polylines per reference point, and the resulting weights
    let mut close: Vec<Vec<(ViewId, u32)>> = Vec::with_capacity(refs.len());
    for r in refs.iter_mut() {
        let mut list = Vec::new();
        let mut observing = 0usize;
        for (view, obs) in &r.observations {
            let Some(vg) = views.get(view.index()) else {
                continue;
            };
            observing += 1;
            for pid in vg.polylines_within(*obs, d) {
                list.push((*view, pid));
            }
        }
        r.weight_cache = if list.is_empty() {
            None
        } else {
            Some(observing as f64 / list.len() as f64)
        };
        close.push(list);
    }

    // accumulate per-node total weight and per-pair intersection weight
    let mut node_weight = vec![0.0f64; nodes.len()];
    let mut pair_weight: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for (r, list) in refs.iter().zip(&close) {
        let Some(w) = r.weight_cache else { continue };
        for &(view, pid) in list {
            node_weight[index_of(view, pid) as usize] += w;
        }
        for (i, &(va, pa)) in list.iter().enumerate() {
            for &(vb, pb) in &list[i + 1..] {
                if va == vb {
                    continue;
                }
                let (na, nb) = (index_of(va, pa), index_of(vb, pb));
                let key = (na.min(nb), na.max(nb));
                *pair_weight.entry(key).or_insert(0.0) += w;
            }
        }
    }

    let mut edges = Vec::new();
    for (&(na, nb), &wi) in &pair_weight {
        let union = node_weight[na as usize] + node_weight[nb as usize] - wi;
        if union <= 0.0 {
            continue;
        }
        let sim = wi / union;
        if sim >= min_sim {
            edges.push((na, nb, sim));
        }
    }
    SimilarityGraph { nodes, edges }
}

/// A potential edge correspondence: per-view sets of polylines hypothesized
/// to project from the same 3D edge. Always spans at least two views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pec {
    pub id: u32,
    pub views: BTreeMap<ViewId, BTreeSet<u32>>,
}

impl Pec {
    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    /// Total chain length of the matched polylines on one view.
    pub fn matched_length(&self, vg: &ViewGraph) -> f64 {
        self.views
            .get(&vg.view)
            .map(|set| set.iter().map(|&pid| vg.polyline(pid).length()).sum())
            .unwrap_or(0.0)
    }
}

/// Louvain communities of the similarity graph. Communities that span a
/// single view (including singletons) are dropped; the rest become PECs,
/// numbered in order of their smallest node.
pub fn detect_communities(g: &SimilarityGraph) -> Vec<Pec> {
    let result = louvain::cluster(g.nodes.len(), &g.edges);
    for w in result.pass_modularity.windows(2) {
        assert!(w[1] >= w[0] - 1e-12, "modularity must not decrease");
    }
    let ncomm = result.assignment.iter().copied().max().map_or(0, |m| m + 1);
    let mut grouped: Vec<Vec<(ViewId, u32)>> = vec![Vec::new(); ncomm];
    for (node, &c) in result.assignment.iter().enumerate() {
        grouped[c].push(g.nodes[node]);
    }
    let mut pecs = Vec::new();
    for members in grouped {
        let views: BTreeSet<ViewId> = members.iter().map(|&(v, _)| v).collect();
        if views.len() < 2 {
            continue;
        }
        let mut map: BTreeMap<ViewId, BTreeSet<u32>> = BTreeMap::new();
        for (v, p) in members {
            map.entry(v).or_default().insert(p);
        }
        pecs.push(Pec {
            id: pecs.len() as u32,
            views: map,
        });
    }
    pecs
}

/// Serializes PECs as `[{"views": {"<view>": [polyline ids]}}, ...]`.
pub fn pecs_to_json(pecs: &[Pec], view_names: &[String]) -> String {
    #[derive(Serialize)]
    struct PecJson {
        views: BTreeMap<String, Vec<u32>>,
    }
    let docs: Vec<PecJson> = pecs
        .iter()
        .map(|pec| PecJson {
            views: pec
                .views
                .iter()
                .map(|(v, set)| {
                    (
                        view_names
                            .get(v.index())
                            .cloned()
                            .unwrap_or_else(|| v.to_string()),
                        set.iter().copied().collect(),
                    )
                })
                .collect(),
        })
        .collect();
    serde_json::to_string_pretty(&docs).expect("pec serialization cannot fail")
}

/// Color-coded SVG overlay of the matched polylines of one view, one color
/// per PEC.
pub fn pec_overlay_svg(vg: &ViewGraph, pecs: &[Pec], width: u32, height: u32) -> String {
    const PALETTE: [&str; 10] = [
        "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#46f0f0", "#f032e6", "#bcf60c",
        "#008080", "#9a6324",
    ];
    let mut items = Vec::new();
    for pec in pecs {
        if let Some(set) = pec.views.get(&vg.view) {
            for &pid in set {
                items.push((vg.polyline(pid), PALETTE[pec.id as usize % PALETTE.len()]));
            }
        }
    }
    crate::edge_graph::polylines_to_svg(width, height, &items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn straight_chain(u0: f64, v: f64, len: f64) -> Vec<Point2> {
        vec![Point2::new(u0, v), Point2::new(u0 + len, v)]
    }

    fn make_ref(
        id: u64,
        obs: &[(u32, f64, f64)],
    ) -> ReferencePoint {
        let map: BTreeMap<ViewId, Point2> = obs
            .iter()
            .map(|&(v, u, w)| (ViewId(v), Point2::new(u, w)))
            .collect();
        ReferencePoint::new(id, Point3::new(0.0, 0.0, 0.0), map).unwrap()
    }

    #[test]
    fn close_points_uses_chain_distance() {
        let vg = ViewGraph::from_chains(ViewId(0), &[straight_chain(0.0, 10.0, 20.0)]);
        let refs = vec![
            make_ref(0, &[(0, 5.0, 10.0), (1, 0.0, 0.0)]), // on the chain
            make_ref(1, &[(0, 5.0, 15.0), (1, 0.0, 0.0)]), // 5 px away
        ];
        let pl = &vg.polylines[0];
        assert_eq!(
            close_points(pl, ViewId(0), &refs, 4.0),
            BTreeSet::from([0])
        );
        assert_eq!(
            close_points(pl, ViewId(0), &refs, 6.0),
            BTreeSet::from([0, 1])
        );
        // exactly on a vertex counts for any positive distance
        let refs2 = vec![make_ref(0, &[(0, 0.0, 10.0), (1, 0.0, 0.0)])];
        assert_eq!(close_points(pl, ViewId(0), &refs2, 0.01).len(), 1);
    }

    #[test]
    fn close_points_matches_brute_force() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..1000 {
            let n = rng.gen_range(2..8);
            let pts: Vec<Point2> = (0..n)
                .map(|_| Point2::new(rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0)))
                .collect();
            let pl = Polyline2D::from_points(pts.clone());
            let obs = Point2::new(rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0));
            let d = rng.gen_range(0.5..8.0);
            let brute = pts
                .windows(2)
                .map(|w| crate::edge_graph::point_segment_distance(obs, w[0], w[1]))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(pl.distance_to(obs) <= d, brute <= d);
            assert!((pl.distance_to(obs) - brute).abs() < 1e-9);
        }
    }

    #[test]
    fn weight_is_inverse_mean_count() {
        // view 0 has two polylines near the observation, view 1 has four
        let chains0: Vec<Vec<Point2>> = (0..2).map(|i| straight_chain(0.0, 10.0 + i as f64, 20.0)).collect();
        let chains1: Vec<Vec<Point2>> = (0..4).map(|i| straight_chain(0.0, 10.0 + i as f64, 20.0)).collect();
        let views = vec![
            ViewGraph::from_chains(ViewId(0), &chains0),
            ViewGraph::from_chains(ViewId(1), &chains1),
        ];
        let r = make_ref(0, &[(0, 5.0, 10.5), (1, 5.0, 11.0)]);
        let w = point_weight(&r, &views, 4.0).unwrap();
        assert!((w - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn weight_one_when_single_polyline_everywhere() {
        let views: Vec<ViewGraph> = (0..3)
            .map(|v| ViewGraph::from_chains(ViewId(v), &[straight_chain(0.0, 10.0, 20.0)]))
            .collect();
        let r = make_ref(0, &[(0, 5.0, 10.0), (1, 6.0, 10.0), (2, 7.0, 10.0)]);
        assert!((point_weight(&r, &views, 4.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weight_errors_when_nothing_is_close() {
        let views: Vec<ViewGraph> = (0..2)
            .map(|v| ViewGraph::from_chains(ViewId(v), &[straight_chain(0.0, 100.0, 20.0)]))
            .collect();
        let r = make_ref(0, &[(0, 5.0, 10.0), (1, 6.0, 10.0)]);
        assert_eq!(
            point_weight(&r, &views, 4.0),
            Err(MatchError::ZeroDenominator)
        );
    }

    fn two_view_fixture() -> (Vec<ViewGraph>, Vec<ReferencePoint>) {
        // each view has three parallel polylines; refs sit on distinct rows
        let chains: Vec<Vec<Point2>> = (0..3)
            .map(|i| straight_chain(0.0, 10.0 + 10.0 * i as f64, 30.0))
            .collect();
        let views = vec![
            ViewGraph::from_chains(ViewId(0), &chains),
            ViewGraph::from_chains(ViewId(1), &chains),
        ];
        let refs = vec![
            make_ref(0, &[(0, 5.0, 10.0), (1, 5.0, 10.0)]),
            make_ref(1, &[(0, 15.0, 10.0), (1, 15.0, 20.0)]),
            make_ref(2, &[(0, 25.0, 20.0), (1, 25.0, 30.0)]),
        ];
        (views, refs)
    }

    #[test]
    fn similarity_examples() {
        let (views, refs) = two_view_fixture();
        let pl0 = &views[0].polylines[0];
        // identical close sets -> 1
        let s = polyline_similarity(ViewId(0), pl0, ViewId(1), &views[1].polylines[0], &refs, &views, 4.0);
        // close(view0, row10) = {0, 1}; close(view1, row10) = {0}
        // weights: ref0 = 1, ref1 = 1, so sim = 1 / 2
        assert!((s - 0.5).abs() < 1e-12, "s = {s}");

        // disjoint close sets -> 0
        let s2 = polyline_similarity(
            ViewId(0),
            &views[0].polylines[2],
            ViewId(1),
            &views[1].polylines[0],
            &refs,
            &views,
            4.0,
        );
        assert_eq!(s2, 0.0);
    }

    #[test]
    fn similarity_direct_arithmetic() {
        // two polylines near every on-chain observation gives weight 1/2
        let chains = vec![straight_chain(0.0, 0.0, 10.0), straight_chain(0.0, 1.0, 10.0)];
        let views = vec![
            ViewGraph::from_chains(ViewId(0), &chains),
            ViewGraph::from_chains(ViewId(1), &chains),
        ];
        let refs = vec![
            make_ref(1, &[(0, 1.0, 0.0), (1, 50.0, 50.0)]), // close to a only
            make_ref(2, &[(0, 5.0, 0.0), (1, 5.0, 0.0)]),   // close to both
            make_ref(3, &[(0, 50.0, 50.0), (1, 9.0, 0.0)]), // close to b only
        ];
        // weights: r1 = 1/(2/2) = 1? observing views: 2; counts 2 + 0 = 2 -> 1
        // r2: counts 2 + 2 = 4 -> 2/4 = 1/2; r3 symmetric to r1 -> 1
        let s = polyline_similarity(
            ViewId(0),
            &views[0].polylines[0],
            ViewId(1),
            &views[1].polylines[0],
            &refs,
            &views,
            2.0,
        );
        // intersection = w(r2) = 1/2, union = 1 + 1/2 + 1 = 5/2 -> 1/5
        assert!((s - 0.2).abs() < 1e-12, "s = {s}");
    }

    #[test]
    fn similarity_is_symmetric_and_bounded() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..500 {
            let mk_chains = |rng: &mut StdRng| -> Vec<Vec<Point2>> {
                (0..rng.gen_range(1..4))
                    .map(|_| {
                        let u = rng.gen_range(0.0..30.0);
                        let v = rng.gen_range(0.0..30.0);
                        straight_chain(u, v, rng.gen_range(5.0..20.0))
                    })
                    .collect()
            };
            let ca = mk_chains(&mut rng);
            let cb = mk_chains(&mut rng);
            let views = vec![
                ViewGraph::from_chains(ViewId(0), &ca),
                ViewGraph::from_chains(ViewId(1), &cb),
            ];
            let refs: Vec<ReferencePoint> = (0..rng.gen_range(1..10))
                .map(|i| {
                    make_ref(
                        i,
                        &[
                            (0, rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0)),
                            (1, rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0)),
                        ],
                    )
                })
                .collect();
            for pa in 0..ca.len() {
                for pb in 0..cb.len() {
                    let ab = polyline_similarity(
                        ViewId(0),
                        &views[0].polylines[pa],
                        ViewId(1),
                        &views[1].polylines[pb],
                        &refs,
                        &views,
                        3.0,
                    );
                    let ba = polyline_similarity(
                        ViewId(1),
                        &views[1].polylines[pb],
                        ViewId(0),
                        &views[0].polylines[pa],
                        &refs,
                        &views,
                        3.0,
                    );
                    assert_eq!(ab, ba);
                    assert!((0.0..=1.0).contains(&ab));
                }
            }
        }
    }

    #[test]
    fn graph_builder_matches_pairwise_evaluation() {
        let (views, mut refs) = two_view_fixture();
        let g = build_similarity_graph(&views, &mut refs, 4.0, 0.05);
        // brute-force every cross-view pair with the standalone operation
        let mut expected = Vec::new();
        for (na, &(va, pa)) in g.nodes.iter().enumerate() {
            for (nb, &(vb, pb)) in g.nodes.iter().enumerate().skip(na + 1) {
                if va == vb {
                    continue;
                }
                let s = polyline_similarity(
                    va,
                    views[va.index()].polyline(pa),
                    vb,
                    views[vb.index()].polyline(pb),
                    &refs,
                    &views,
                    4.0,
                );
                if s >= 0.05 {
                    expected.push((na as u32, nb as u32, s));
                }
            }
        }
        assert_eq!(g.edges.len(), expected.len());
        for ((a, b, w), (ea, eb, ew)) in g.edges.iter().zip(&expected) {
            assert_eq!((a, b), (ea, eb));
            assert!((w - ew).abs() < 1e-12);
        }
    }

    #[test]
    fn same_view_polylines_never_connect() {
        let chains: Vec<Vec<Point2>> = vec![straight_chain(0.0, 10.0, 30.0), straight_chain(0.0, 11.0, 30.0)];
        let views = vec![
            ViewGraph::from_chains(ViewId(0), &chains),
            ViewGraph::from_chains(ViewId(1), &chains),
        ];
        let mut refs = vec![
            make_ref(0, &[(0, 5.0, 10.0), (1, 5.0, 10.0)]),
            make_ref(1, &[(0, 25.0, 10.5), (1, 25.0, 10.5)]),
        ];
        let g = build_similarity_graph(&views, &mut refs, 4.0, 0.05);
        for &(a, b, _) in &g.edges {
            assert_ne!(g.nodes[a as usize].0, g.nodes[b as usize].0);
        }
        assert!(!g.edges.is_empty());
    }

    #[test]
    fn two_cliques_become_two_pecs() {
        // six nodes over three views, two disconnected dense groups
        let nodes: Vec<(ViewId, u32)> = vec![
            (ViewId(0), 0),
            (ViewId(0), 1),
            (ViewId(1), 0),
            (ViewId(1), 1),
            (ViewId(2), 0),
            (ViewId(2), 1),
        ];
        // group A: indices 0, 2, 4; group B: 1, 3, 5
        let edges = vec![
            (0u32, 2u32, 1.0),
            (0, 4, 1.0),
            (2, 4, 1.0),
            (1, 3, 1.0),
            (1, 5, 1.0),
            (3, 5, 1.0),
        ];
        let g = SimilarityGraph { nodes, edges };
        let pecs = detect_communities(&g);
        assert_eq!(pecs.len(), 2);
        assert_eq!(pecs[0].views[&ViewId(0)], BTreeSet::from([0]));
        assert_eq!(pecs[1].views[&ViewId(0)], BTreeSet::from([1]));
        assert_eq!(pecs[0].num_views(), 3);
    }

    #[test]
    fn single_view_communities_are_dropped() {
        let nodes: Vec<(ViewId, u32)> = vec![(ViewId(0), 0), (ViewId(0), 1), (ViewId(1), 0)];
        let g = SimilarityGraph {
            nodes,
            edges: vec![],
        };
        assert!(detect_communities(&g).is_empty());
    }
}
