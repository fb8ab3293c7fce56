//! Generation of potential edge-point correspondences (PEPCs).
//!
//! A PEPC anchors one seed 2D edge-point on one view and carries, for other
//! views, the candidate 2D edge-points that may correspond to it. Candidates
//! always lie on the epipolar line the seed induces on their view. Two
//! strategies bound the candidate sets: searching around a known reference
//! point (inside the projections of two concentric spheres), and searching
//! only along the matched polylines of a PEC.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::edge_graph::{ChainPos, Polyline2D, ViewGraph};
use crate::geometry::{
    epipolar_line_from_f, fundamental_matrix, project, sphere_projection_radius, CameraView, Line2,
    Point2, ViewId,
};
use crate::matching::{Pec, ReferencePoint};

/// One candidate correspondence: a point on a polyline of its view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CandidatePoint {
    pub point: Point2,
    pub polyline: u32,
    pub pos: ChainPos,
}

/// Where a PEPC came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum PepcSource {
    RefPoint(u64),
    Pec(u32),
}

/// The anchored seed observation of a PEPC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PepcSeed {
    pub view: ViewId,
    pub point: Point2,
    pub polyline: u32,
    pub pos: ChainPos,
}

/// Candidate 2D correspondences for one prospective 3D edge-point. The seed
/// view never appears in the candidate map; views without candidates are
/// simply absent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pepc {
    pub seed: PepcSeed,
    pub candidates: BTreeMap<ViewId, Vec<CandidatePoint>>,
    pub source: PepcSource,
}

impl Pepc {
    /// Views that carry at least one candidate.
    pub fn candidate_views(&self) -> usize {
        self.candidates.len()
    }
}

/// All transversal intersections of a polyline chain with a line, optionally
/// restricted to a clip circle `(center, radius)`. Tangential grazings count
/// once.
pub fn intersect_polyline_line(
    poly_id: u32,
    pl: &Polyline2D,
    line: &Line2,
    clip: Option<(Point2, f64)>,
) -> Vec<CandidatePoint> {
    pl.line_intersections(line)
        .into_iter()
        .filter(|(_, pt)| match clip {
            Some((c, r)) => pt.dist(c) <= r + 1e-9,
            None => true,
        })
        .map(|(pos, point)| CandidatePoint {
            point,
            polyline: poly_id,
            pos,
        })
        .collect()
}

/// Merges candidates that are duplicate detections of the same
/// correspondence: points on the same polyline closer than `gap` px (a
/// near-tangential epipolar line crosses a wobbly chain several times within
/// a pixel or two; those all triangulate to the same 3D point).
fn dedup_candidates(mut cands: Vec<CandidatePoint>, gap: f64) -> Vec<CandidatePoint> {
    cands.sort_by(|a, b| {
        (a.polyline, a.pos.segment, a.pos.t)
            .partial_cmp(&(b.polyline, b.pos.segment, b.pos.t))
            .expect("finite positions")
    });
    let mut out: Vec<CandidatePoint> = Vec::with_capacity(cands.len());
    for c in cands {
        match out.last() {
            Some(last) if last.polyline == c.polyline && last.point.dist(c.point) < gap => {}
            _ => out.push(c),
        }
    }
    out
}

/// PEPCs seeded around one reference point.
///
/// On each observing view, every polyline crossing the projection of the
/// inner sphere contributes a seed: its chain point closest to the point's
/// reprojection. Candidates on every other observing view are the epipolar
/// intersections with that view's edge-graph, clipped to the projection of
/// the outer sphere. Seeds keeping fewer than two candidate views are
/// dropped. Requires visibility in at least three views.
pub fn pepc_from_ref_point(
    r: &ReferencePoint,
    views: &[ViewGraph],
    cams: &[CameraView],
    r_inner: f64,
    r_outer: f64,
) -> Vec<Pepc> {
    assert!(r_inner < r_outer, "inner sphere must be smaller");
    if r.observations.len() < 3 {
        return Vec::new();
    }

    // per observing view: reprojection and outer clip radius
    let mut reproj: BTreeMap<ViewId, (Point2, f64)> = BTreeMap::new();
    for view in r.observations.keys() {
        let cam = &cams[view.index()];
        let (Ok(p), Ok(outer)) = (
            project(cam, r.position),
            sphere_projection_radius(cam, r.position, r_outer),
        ) else {
            continue;
        };
        reproj.insert(*view, (p, outer));
    }
    if reproj.len() < 3 {
        return Vec::new();
    }

    let mut out = Vec::new();
    for (&seed_view, &(seed_reproj, _)) in &reproj {
        let cam_s = &cams[seed_view.index()];
        let Ok(inner_px) = sphere_projection_radius(cam_s, r.position, r_inner) else {
            continue;
        };
        let vg = &views[seed_view.index()];
        for (pid, pos, _) in vg.closest_within(seed_reproj, inner_px) {
            let seed = PepcSeed {
                view: seed_view,
                point: vg.polyline(pid).point_at(pos),
                polyline: pid,
                pos,
            };
            let mut candidates: BTreeMap<ViewId, Vec<CandidatePoint>> = BTreeMap::new();
            for (&other, &(other_reproj, outer_px)) in &reproj {
                if other == seed_view {
                    continue;
                }
                let Ok(f) = fundamental_matrix(cam_s, &cams[other.index()]) else {
                    continue;
                };
                let Ok(line) = epipolar_line_from_f(&f, seed.point) else {
                    continue;
                };
                let ovg = &views[other.index()];
                let mut found = Vec::new();
                for opid in ovg.polylines_within(other_reproj, outer_px) {
                    found.extend(intersect_polyline_line(
                        opid,
                        ovg.polyline(opid),
                        &line,
                        Some((other_reproj, outer_px)),
                    ));
                }
                let found = dedup_candidates(found, 2.0);
                if !found.is_empty() {
                    candidates.insert(other, found);
                }
            }
            if candidates.len() >= 2 {
                out.push(Pepc {
                    seed,
                    candidates,
                    source: PepcSource::RefPoint(r.id),
                });
            }
        }
    }
    out
}

/// PEPCs sampled along a PEC.
///
/// The initial view is the PEC view with the greatest total matched polyline
/// length; seeds are sampled every `sample_step` px along its matched
/// polylines. Candidates on every other PEC view are the epipolar
/// intersections with that view's matched polylines only. Requires a PEC
/// spanning at least three views.
pub fn pepc_from_pec(
    pec: &Pec,
    views: &[ViewGraph],
    cams: &[CameraView],
    sample_step: f64,
) -> Vec<Pepc> {
    if pec.num_views() < 3 {
        return Vec::new();
    }
    let initial = pec
        .views
        .keys()
        .copied()
        .max_by(|a, b| {
            let (la, lb) = (
                pec.matched_length(&views[a.index()]),
                pec.matched_length(&views[b.index()]),
            );
            // longest wins; ties go to the smallest view id
            la.partial_cmp(&lb)
                .expect("finite lengths")
                .then(b.cmp(a))
        })
        .expect("pec is non-empty");

    let cam_i = &cams[initial.index()];
    let vg_i = &views[initial.index()];
    let mut out = Vec::new();
    for &pid in &pec.views[&initial] {
        let pl = vg_i.polyline(pid);
        for arc in pl.sample_arcs(sample_step) {
            let pos = pl.pos_at_arc(arc);
            let seed = PepcSeed {
                view: initial,
                point: pl.point_at(pos),
                polyline: pid,
                pos,
            };
            let mut candidates: BTreeMap<ViewId, Vec<CandidatePoint>> = BTreeMap::new();
            for (&other, matched) in &pec.views {
                if other == initial {
                    continue;
                }
                let Ok(f) = fundamental_matrix(cam_i, &cams[other.index()]) else {
                    continue;
                };
                let Ok(line) = epipolar_line_from_f(&f, seed.point) else {
                    continue;
                };
                let ovg = &views[other.index()];
                let mut found = Vec::new();
                for &opid in matched {
                    found.extend(intersect_polyline_line(
                        opid,
                        ovg.polyline(opid),
                        &line,
                        None,
                    ));
                }
                let found = dedup_candidates(found, 2.0);
                if !found.is_empty() {
                    candidates.insert(other, found);
                }
            }
            if candidates.len() >= 2 {
                out.push(Pepc {
                    seed,
                    candidates,
                    source: PepcSource::Pec(pec.id),
                });
            }
        }
    }
    out
}

/// Number of selections containing the seed and at least two further
/// correspondences, one per view at most:
/// `prod(|C_i| + 1) - sum(|C_i|) - 1` over the non-seed views.
pub fn count_selections(pepc: &Pepc) -> u64 {
    let sizes: Vec<u64> = pepc
        .candidates
        .values()
        .map(|c| c.len() as u64)
        .collect();
    count_selections_for(&sizes)
}

/// Same formula on raw candidate-set sizes.
pub fn count_selections_for(sizes: &[u64]) -> u64 {
    let product: u64 = sizes.iter().map(|&s| s + 1).product();
    let sum: u64 = sizes.iter().sum();
    product.saturating_sub(sum + 1)
}

/// Generates PEPCs from both strategies, merges near-duplicate seeds from
/// reference points (closer than 2 px on the same polyline) and returns the
/// list in canonical order: by source, then seed position.
pub fn generate_pepcs(
    refs: &[ReferencePoint],
    pecs: &[Pec],
    views: &[ViewGraph],
    cams: &[CameraView],
    r_inner: f64,
    r_outer: f64,
    sample_step: f64,
) -> Vec<Pepc> {
    use rayon::prelude::*;

    let mut from_refs: Vec<Pepc> = refs
        .par_iter()
        .map(|r| pepc_from_ref_point(r, views, cams, r_inner, r_outer))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    sort_canonical(&mut from_refs);
    // suppress redundant seeds on the same polyline
    let mut kept: Vec<Pepc> = Vec::with_capacity(from_refs.len());
    let mut kept_arcs: BTreeMap<(ViewId, u32), Vec<f64>> = BTreeMap::new();
    for pepc in from_refs {
        let key = (pepc.seed.view, pepc.seed.polyline);
        let arc = views[pepc.seed.view.index()]
            .polyline(pepc.seed.polyline)
            .arc_at(pepc.seed.pos);
        let arcs = kept_arcs.entry(key).or_default();
        if arcs.iter().any(|&a| (a - arc).abs() < 2.0) {
            continue;
        }
        arcs.push(arc);
        kept.push(pepc);
    }

    let from_pecs: Vec<Pepc> = pecs
        .par_iter()
        .map(|pec| pepc_from_pec(pec, views, cams, sample_step))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    kept.extend(from_pecs);

    // exact-seed deduplication across strategies
    sort_canonical(&mut kept);
    kept.dedup_by(|a, b| {
        a.seed.view == b.seed.view
            && a.seed.polyline == b.seed.polyline
            && a.seed.point.dist(b.seed.point) < 1e-9
    });
    kept
}

fn sort_canonical(pepcs: &mut [Pepc]) {
    pepcs.sort_by(|a, b| {
        a.source
            .cmp(&b.source)
            .then(a.seed.view.cmp(&b.seed.view))
            .then(a.seed.polyline.cmp(&b.seed.polyline))
            .then(
                (a.seed.pos.segment, a.seed.pos.t)
                    .partial_cmp(&(b.seed.pos.segment, b.seed.pos.t))
                    .expect("finite positions"),
            )
    });
}
