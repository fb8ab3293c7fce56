//! PEPC validation and 3D edge growth.
//!
//! A PEPC-selection (the seed plus at most one candidate per view) is only
//! trusted when it triangulates with a small maximum reprojection error AND
//! supports edge-following: stepping along the seed view's polyline while
//! re-intersecting epipolar lines in the auxiliary views must keep producing
//! consistent 3D points. A selection is accepted only when it is the unique
//! one in its PEPC passing both checks. Accepted points grow into 3D
//! polylines, additional views are integrated when compatible, visibility is
//! refined across all views, and under-observed polylines are dropped.

use std::collections::BTreeMap;

use nalgebra::Matrix3;
use serde::Serialize;

use crate::edge_graph::{ChainPos, ViewGraph};
use crate::geometry::{
    epipolar_line_from_f, fundamental_matrix, project, triangulate, CameraView, Line2, Point2,
    Point3, TriangulationResult, ViewId,
};
use crate::pepc::{CandidatePoint, Pepc, PepcSeed};

/// A 2D observation of a 3D edge-point: image point anchored to a chain
/// position of its view's edge-graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Observation {
    pub point: Point2,
    pub polyline: u32,
    pub pos: ChainPos,
}

/// Reconstructed 3D edge-point. Carries at least three observations, and
/// re-triangulating them reproduces the position within the configured
/// maximum reprojection error.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePoint3D {
    pub position: Point3,
    pub observations: BTreeMap<ViewId, Observation>,
}

/// Chain directions (+1 / -1) on the three bootstrap views, stored for the
/// forward orientation of the chain; the opposite orientation negates all
/// three.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirectionTriple {
    pub views: [ViewId; 3],
    pub signs: [i8; 3],
}

/// Reconstructed 3D edge: an ordered chain of edge-points. Every point
/// observes the driver view (the PEPC seed view); `directions` maps each
/// participating view to the polyline direction that corresponds to walking
/// the chain forward.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline3D {
    pub points: Vec<EdgePoint3D>,
    pub seed_index: usize,
    pub driver: ViewId,
    pub directions: BTreeMap<ViewId, i8>,
    pub pepc_id: u32,
}

impl Polyline3D {
    pub fn length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[0].position.dist(w[1].position))
            .sum()
    }

    pub fn mean_observations(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        let total: usize = self.points.iter().map(|p| p.observations.len()).sum();
        total as f64 / self.points.len() as f64
    }
}

/// Shared read-only context for validation and growth: cameras, per-view edge
/// geometry, the acceptance threshold `eps` (px) and the edge-following step
/// (px, along the seed view's polyline).
pub struct GrowContext<'a> {
    pub cams: &'a [CameraView],
    pub views: &'a [ViewGraph],
    pub eps: f64,
    pub step: f64,
    fmat: Vec<Vec<Option<Matrix3<f64>>>>,
}

impl<'a> GrowContext<'a> {
    pub fn new(cams: &'a [CameraView], views: &'a [ViewGraph], eps: f64, step: f64) -> Self {
        let n = cams.len();
        let mut fmat = vec![vec![None; n]; n];
        for (a, row) in fmat.iter_mut().enumerate() {
            for (b, slot) in row.iter_mut().enumerate() {
                if a != b {
                    *slot = fundamental_matrix(&cams[a], &cams[b]).ok();
                }
            }
        }
        Self {
            cams,
            views,
            eps,
            step,
            fmat,
        }
    }

    fn epipolar(&self, from: ViewId, to: ViewId, p: Point2) -> Option<Line2> {
        let f = self.fmat[from.index()][to.index()].as_ref()?;
        epipolar_line_from_f(f, p).ok()
    }

    fn triangulate_map(
        &self,
        obs: &BTreeMap<ViewId, Observation>,
    ) -> Option<TriangulationResult> {
        let pairs: Vec<(&CameraView, Point2)> = obs
            .iter()
            .map(|(v, o)| (&self.cams[v.index()], o.point))
            .collect();
        triangulate(&pairs).ok()
    }
}

/// Re-triangulates an edge-point's observations and checks the error bound.
pub fn epsilon_contract_holds(ctx: &GrowContext, p: &EdgePoint3D) -> bool {
    ctx.triangulate_map(&p.observations)
        .is_some_and(|t| t.max_reproj_error <= ctx.eps + 1e-9)
}

#[derive(Clone, Copy)]
struct WalkState {
    view: ViewId,
    poly: u32,
    arc: f64,
    dir: i8,
}

/// Growth-step failure counters, for tuning diagnostics.
pub mod step_stats {
    use std::sync::atomic::{AtomicUsize, Ordering};
    pub static END_OF_CHAIN: AtomicUsize = AtomicUsize::new(0);
    pub static NO_INTERSECTION: AtomicUsize = AtomicUsize::new(0);
    pub static EPS_BREACH: AtomicUsize = AtomicUsize::new(0);
    pub static OK: AtomicUsize = AtomicUsize::new(0);

    pub fn reset() {
        for c in [&END_OF_CHAIN, &NO_INTERSECTION, &EPS_BREACH, &OK] {
            c.store(0, Ordering::Relaxed);
        }
    }

    pub fn snapshot() -> [usize; 4] {
        [
            END_OF_CHAIN.load(Ordering::Relaxed),
            NO_INTERSECTION.load(Ordering::Relaxed),
            EPS_BREACH.load(Ordering::Relaxed),
            OK.load(Ordering::Relaxed),
        ]
    }
}

/// First epipolar intersection walking from `from_arc` in direction `dir`.
/// When the crossing falls just past the chain end (a dropout gap or a
/// junction cut the 2D edge), the chain end itself stands in as the
/// observation while it stays within `eps` of the line; the triangulation
/// check still gates the result.
fn walk_to_line(
    pl: &crate::edge_graph::Polyline2D,
    line: &Line2,
    from_arc: f64,
    dir: i8,
    eps: f64,
) -> Option<(ChainPos, Point2)> {
    if let Some(hit) = pl.first_intersection_from(line, from_arc, dir) {
        return Some(hit);
    }
    let end_arc = if dir > 0 { pl.length() } else { 0.0 };
    if (end_arc - from_arc).abs() <= 1e-9 {
        return None; // already parked at the end
    }
    let pos = pl.pos_at_arc(end_arc);
    let pt = pl.point_at(pos);
    // the crossing must lie beyond the end: the walk has to approach the
    // line, otherwise the clamp would blur direction discrimination
    let start_d = line.distance(pl.point_at(pl.pos_at_arc(from_arc)));
    let end_d = line.distance(pt);
    (end_d <= eps && end_d + 0.25 < start_d).then_some((pos, pt))
}

/// One growth step: advance the driver view by the configured step (shorter
/// at the chain end), intersect the advanced point's epipolar line with each
/// auxiliary polyline walking from the previous observation, and triangulate.
/// State advances only on success. `min_advance` rejects steps shorter than
/// a meaningful fraction of the chain; the direction bootstrap uses it so
/// that stub polylines cannot fake a valid edge with a microscopic step.
fn grow_step(
    ctx: &GrowContext,
    driver: &mut WalkState,
    aux: &mut [WalkState],
    budget: f64,
    min_advance: f64,
) -> Option<EdgePoint3D> {
    let pl = ctx.views[driver.view.index()].polyline(driver.poly);
    let remaining = if driver.dir > 0 {
        pl.length() - driver.arc
    } else {
        driver.arc
    };
    if remaining <= min_advance.max(1e-9) {
        step_stats::END_OF_CHAIN.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        return None;
    }
    let adv = budget.min(remaining);
    let new_arc = if driver.dir > 0 {
        driver.arc + adv
    } else {
        driver.arc - adv
    };
    let pos = pl.pos_at_arc(new_arc);
    let p0 = pl.point_at(pos);

    let mut obs = BTreeMap::new();
    obs.insert(
        driver.view,
        Observation {
            point: p0,
            polyline: driver.poly,
            pos,
        },
    );
    let mut new_arcs = Vec::with_capacity(aux.len());
    for a in aux.iter() {
        let line = ctx.epipolar(driver.view, a.view, p0)?;
        let apl = ctx.views[a.view.index()].polyline(a.poly);
        let Some((apos, apt)) = walk_to_line(apl, &line, a.arc, a.dir, ctx.eps) else {
            step_stats::NO_INTERSECTION.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            return None;
        };
        obs.insert(
            a.view,
            Observation {
                point: apt,
                polyline: a.poly,
                pos: apos,
            },
        );
        new_arcs.push(apl.arc_at(apos));
    }
    let t = ctx.triangulate_map(&obs)?;
    if t.max_reproj_error > ctx.eps {
        step_stats::EPS_BREACH.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        return None;
    }
    step_stats::OK.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    driver.arc = new_arc;
    for (a, arc) in aux.iter_mut().zip(new_arcs) {
        a.arc = arc;
    }
    Some(EdgePoint3D {
        position: t.point,
        observations: obs,
    })
}

/// Growth step with a fallback ladder: when the nominal step fails because
/// the displaced epipolar line leaves a short auxiliary fragment, a half or
/// quarter step often still lands inside it.
fn grow_step_adaptive(
    ctx: &GrowContext,
    driver: &mut WalkState,
    aux: &mut [WalkState],
) -> Option<EdgePoint3D> {
    for divisor in [1.0, 2.0, 4.0] {
        if let Some(p) = grow_step(ctx, driver, aux, ctx.step / divisor, 0.0) {
            return Some(p);
        }
    }
    None
}

/// Result of checking one three-view selection.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectionCheck {
    Valid(Box<EdgePoint3D>, DirectionTriple),
    Invalid,
    /// More than one direction assignment supports edge-following; the
    /// surrounding PEPC is rejected as ambiguous.
    AmbiguousDirections,
}

/// Validates a three-view selection: it must triangulate within `eps` and
/// admit exactly one direction assignment (up to global reversal) for which
/// at least one edge-following step succeeds in either orientation.
pub fn validate_selection(
    ctx: &GrowContext,
    seed: &PepcSeed,
    aux: [(ViewId, CandidatePoint); 2],
) -> SelectionCheck {
    let mut obs = BTreeMap::new();
    obs.insert(
        seed.view,
        Observation {
            point: seed.point,
            polyline: seed.polyline,
            pos: seed.pos,
        },
    );
    for (view, c) in &aux {
        obs.insert(
            *view,
            Observation {
                point: c.point,
                polyline: c.polyline,
                pos: c.pos,
            },
        );
    }
    if obs.len() < 3 {
        return SelectionCheck::Invalid;
    }
    let Some(t) = ctx.triangulate_map(&obs) else {
        return SelectionCheck::Invalid;
    };
    if t.max_reproj_error > ctx.eps {
        return SelectionCheck::Invalid;
    }

    let seed_arc = ctx.views[seed.view.index()]
        .polyline(seed.polyline)
        .arc_at(seed.pos);
    let aux_arc = |i: usize| {
        ctx.views[aux[i].0.index()]
            .polyline(aux[i].1.polyline)
            .arc_at(aux[i].1.pos)
    };

    let try_step = |d0: i8, d1: i8, d2: i8| -> bool {
        let driver = WalkState {
            view: seed.view,
            poly: seed.polyline,
            arc: seed_arc,
            dir: d0,
        };
        let auxs = [
            WalkState {
                view: aux[0].0,
                poly: aux[0].1.polyline,
                arc: aux_arc(0),
                dir: d1,
            },
            WalkState {
                view: aux[1].0,
                poly: aux[1].1.polyline,
                arc: aux_arc(1),
                dir: d2,
            },
        ];
        let mut driver = driver;
        let mut auxs = auxs;
        grow_step(ctx, &mut driver, &mut auxs, ctx.step, 0.15 * ctx.step).is_some()
    };

    // the pair {(d0,d1,d2), (-d0,-d1,-d2)} is one assignment: fix d0 = +1 and
    // accept a class when either orientation can make the first step
    let mut surviving: Vec<[i8; 2]> = Vec::new();
    for d1 in [1i8, -1] {
        for d2 in [1i8, -1] {
            if try_step(1, d1, d2) || try_step(-1, -d1, -d2) {
                surviving.push([d1, d2]);
            }
        }
    }
    match surviving[..] {
        [] => SelectionCheck::Invalid,
        [[d1, d2]] => SelectionCheck::Valid(
            Box::new(EdgePoint3D {
                position: t.point,
                observations: obs,
            }),
            DirectionTriple {
                views: [seed.view, aux[0].0, aux[1].0],
                signs: [1, d1, d2],
            },
        ),
        _ => SelectionCheck::AmbiguousDirections,
    }
}

/// Why a PEPC was resolved the way it was.
#[derive(Debug, Clone, PartialEq)]
pub enum PepcOutcome {
    Accepted(Box<(EdgePoint3D, DirectionTriple)>),
    TooFewViews,
    NoValidSelection,
    AmbiguousSelection,
    AmbiguousDirections,
}

impl PepcOutcome {
    pub fn reason(&self) -> &'static str {
        match self {
            PepcOutcome::Accepted(_) => "accepted",
            PepcOutcome::TooFewViews => "too-few-views",
            PepcOutcome::NoValidSelection => "no-valid-selection",
            PepcOutcome::AmbiguousSelection => "ambiguous-selection",
            PepcOutcome::AmbiguousDirections => "ambiguous-directions",
        }
    }
}

/// Resolves a PEPC over a pair of auxiliary views: the two views with the
/// most candidates are tried first, and a pair yielding zero valid selections
/// falls through to the next pair. The selection is accepted only when it is
/// the single valid one in its pair; any ambiguity rejects the whole PEPC.
///
/// Valid selections whose triangulated points coincide in 3D count as one
/// solution: near a dropout gap the same 3D edge appears as two 2D fragments,
/// and a candidate on each is the same correspondence, not an ambiguity.
pub fn resolve_pepc(ctx: &GrowContext, pepc: &Pepc) -> PepcOutcome {
    if pepc.candidates.len() < 2 {
        return PepcOutcome::TooFewViews;
    }
    let mut views: Vec<(ViewId, &Vec<CandidatePoint>)> =
        pepc.candidates.iter().map(|(v, c)| (*v, c)).collect();
    views.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));

    for i in 0..views.len() {
        for j in i + 1..views.len() {
            let (va, ca) = views[i];
            let (vb, cb) = views[j];
            let mut valid: Vec<(EdgePoint3D, DirectionTriple)> = Vec::new();
            for c1 in ca {
                for c2 in cb {
                    match validate_selection(ctx, &pepc.seed, [(va, *c1), (vb, *c2)]) {
                        SelectionCheck::Valid(pt, dirs) => valid.push((*pt, dirs)),
                        SelectionCheck::AmbiguousDirections => {
                            return PepcOutcome::AmbiguousDirections
                        }
                        SelectionCheck::Invalid => {}
                    }
                }
            }
            if valid.is_empty() {
                continue;
            }
            // same-solution tolerance: a couple of pixels at the seed's depth
            let seed_cam = &ctx.cams[pepc.seed.view.index()];
            let depth = seed_cam.depth_of(valid[0].0.position).max(1e-9);
            let tolerance = 2.0 * depth / seed_cam.focal();
            let distinct = valid
                .iter()
                .skip(1)
                .any(|(p, _)| p.position.dist(valid[0].0.position) > tolerance);
            if distinct {
                return PepcOutcome::AmbiguousSelection;
            }
            let (point, dirs) = valid.into_iter().next().expect("non-empty");
            return PepcOutcome::Accepted(Box::new((point, dirs)));
        }
    }
    PepcOutcome::NoValidSelection
}

fn walk_state_of(point: &EdgePoint3D, ctx: &GrowContext, view: ViewId, dir: i8) -> WalkState {
    let o = point.observations[&view];
    WalkState {
        view,
        poly: o.polyline,
        arc: ctx.views[view.index()].polyline(o.polyline).arc_at(o.pos),
        dir,
    }
}

/// Grows a 3D polyline from a validated edge-point: repeated growth steps in
/// the forward orientation, then in the opposite one, each stopping at the
/// first failure (chain end, missing intersection or error breach).
pub fn follow_edge(
    ctx: &GrowContext,
    pepc_id: u32,
    start: &EdgePoint3D,
    dirs: &DirectionTriple,
) -> Polyline3D {
    let walk = |orientation: i8| -> Vec<EdgePoint3D> {
        let mut driver = walk_state_of(start, ctx, dirs.views[0], dirs.signs[0] * orientation);
        let mut aux = [
            walk_state_of(start, ctx, dirs.views[1], dirs.signs[1] * orientation),
            walk_state_of(start, ctx, dirs.views[2], dirs.signs[2] * orientation),
        ];
        let mut pts = Vec::new();
        while let Some(p) = grow_step_adaptive(ctx, &mut driver, &mut aux) {
            pts.push(p);
        }
        pts
    };
    let forward = walk(1);
    let mut points = walk(-1);
    points.reverse();
    let seed_index = points.len();
    points.push(start.clone());
    points.extend(forward);

    let directions = dirs
        .views
        .iter()
        .zip(dirs.signs)
        .map(|(&v, s)| (v, s))
        .collect();
    Polyline3D {
        points,
        seed_index,
        driver: dirs.views[0],
        directions,
        pepc_id,
    }
}

/// One-step compatibility check of `neighbor` against a new view: epipolar
/// transfer from the neighbor's driver observation, first intersection along
/// `dir` from `from_arc`, and re-triangulation within `eps` over all views.
fn one_step_check(
    ctx: &GrowContext,
    neighbor: &EdgePoint3D,
    view: ViewId,
    poly: u32,
    from_arc: f64,
    dir: i8,
    driver: ViewId,
) -> Option<(Observation, TriangulationResult)> {
    let driver_obs = neighbor.observations.get(&driver)?;
    let line = ctx.epipolar(driver, view, driver_obs.point)?;
    let vpl = ctx.views[view.index()].polyline(poly);
    let (pos, pt) = walk_to_line(vpl, &line, from_arc, dir, ctx.eps)?;
    let obs = Observation {
        point: pt,
        polyline: poly,
        pos,
    };
    let mut all = neighbor.observations.clone();
    all.insert(view, obs);
    let t = ctx.triangulate_map(&all)?;
    if t.max_reproj_error > ctx.eps {
        return None;
    }
    Some((obs, t))
}

/// Walks the new view's polyline alongside the chain, adding observations and
/// re-triangulating while the error bound holds. Returns how many points were
/// updated.
fn propagate_view(
    ctx: &GrowContext,
    points: &mut [EdgePoint3D],
    order: impl Iterator<Item = usize>,
    view: ViewId,
    poly: u32,
    start_arc: f64,
    dir: i8,
    driver: ViewId,
) -> usize {
    let vpl = ctx.views[view.index()].polyline(poly);
    let mut arc = start_arc;
    let mut updated = 0;
    for k in order {
        match one_step_check(ctx, &points[k], view, poly, arc, dir, driver) {
            Some((obs, t)) => {
                arc = vpl.arc_at(obs.pos);
                points[k].observations.insert(view, obs);
                points[k].position = t.point;
                updated += 1;
            }
            None => break,
        }
    }
    updated
}

/// Integrates an additional view into a 3D polyline through a candidate
/// observation of its seed point.
///
/// The candidate must keep the seed point's triangulation within `eps` over
/// all views and admit a chain direction on the new polyline consistent with
/// both chain neighbors of the seed. On acceptance the observation propagates
/// along the whole chain (stopping at the first incompatibility on each
/// side) and the chain attempts to extend at its ends with the enlarged view
/// set. Returns `None` when the candidate is rejected, including the case of
/// a view that already observes the seed point.
pub fn integrate_view(
    ctx: &GrowContext,
    pl: &Polyline3D,
    view: ViewId,
    candidate: &CandidatePoint,
) -> Option<Polyline3D> {
    let seed_pt = &pl.points[pl.seed_index];
    if seed_pt.observations.contains_key(&view) {
        return None;
    }
    let mut obs = seed_pt.observations.clone();
    obs.insert(
        view,
        Observation {
            point: candidate.point,
            polyline: candidate.polyline,
            pos: candidate.pos,
        },
    );
    let t = ctx.triangulate_map(&obs)?;
    if t.max_reproj_error > ctx.eps {
        return None;
    }

    let cand_arc = ctx.views[view.index()]
        .polyline(candidate.polyline)
        .arc_at(candidate.pos);
    let dir = direction_match(ctx, pl, pl.seed_index, view, candidate.polyline, cand_arc)?;

    let mut out = pl.clone();
    out.points[out.seed_index].position = t.point;
    out.points[out.seed_index].observations = obs;
    let si = out.seed_index;
    let len = out.points.len();
    propagate_view(
        ctx,
        &mut out.points,
        si + 1..len,
        view,
        candidate.polyline,
        cand_arc,
        dir,
        pl.driver,
    );
    propagate_view(
        ctx,
        &mut out.points,
        (0..si).rev(),
        view,
        candidate.polyline,
        cand_arc,
        -dir,
        pl.driver,
    );
    out.directions.insert(view, dir);
    extend_chain(ctx, &mut out);
    Some(out)
}

/// Finds the chain direction on a new view's polyline consistent with the
/// chain neighbors of point `k`: the forward neighbor must validate along
/// `dir` and the backward neighbor along `-dir`. At least one neighbor must
/// exist and validate.
fn direction_match(
    ctx: &GrowContext,
    pl: &Polyline3D,
    k: usize,
    view: ViewId,
    poly: u32,
    arc: f64,
) -> Option<i8> {
    if pl.points.len() < 2 {
        return None;
    }
    [1i8, -1].into_iter().find(|&dir| {
        let fwd = match pl.points.get(k + 1) {
            Some(nb) => one_step_check(ctx, nb, view, poly, arc, dir, pl.driver).is_some(),
            None => true,
        };
        let bwd = match k.checked_sub(1).map(|i| &pl.points[i]) {
            Some(nb) => one_step_check(ctx, nb, view, poly, arc, -dir, pl.driver).is_some(),
            None => true,
        };
        fwd && bwd
    })
}

/// Tries to grow the chain past its current ends using any pair of views
/// observing the end point (besides the driver). Runs after integrating new
/// views, when a previously failing auxiliary view can be replaced.
fn extend_chain(ctx: &GrowContext, pl: &mut Polyline3D) {
    for forward in [true, false] {
        loop {
            let end_idx = if forward { pl.points.len() - 1 } else { 0 };
            let end = &pl.points[end_idx];
            let Some(driver_obs) = end.observations.get(&pl.driver) else {
                break;
            };
            let orientation: i8 = if forward { 1 } else { -1 };
            let aux_views: Vec<ViewId> = end
                .observations
                .keys()
                .filter(|v| **v != pl.driver && pl.directions.contains_key(v))
                .copied()
                .collect();
            let driver_poly = driver_obs.polyline;
            let driver_arc = ctx.views[pl.driver.index()]
                .polyline(driver_poly)
                .arc_at(driver_obs.pos);

            let mut grown: Option<EdgePoint3D> = None;
            'pairs: for i in 0..aux_views.len() {
                for j in i + 1..aux_views.len() {
                    let mut driver = WalkState {
                        view: pl.driver,
                        poly: driver_poly,
                        arc: driver_arc,
                        dir: pl.directions[&pl.driver] * orientation,
                    };
                    let mut aux = [
                        walk_state_of(end, ctx, aux_views[i], pl.directions[&aux_views[i]] * orientation),
                        walk_state_of(end, ctx, aux_views[j], pl.directions[&aux_views[j]] * orientation),
                    ];
                    if let Some(p) = grow_step_adaptive(ctx, &mut driver, &mut aux) {
                        grown = Some(p);
                        break 'pairs;
                    }
                }
            }
            match grown {
                Some(p) if forward => pl.points.push(p),
                Some(p) => {
                    pl.points.insert(0, p);
                    pl.seed_index += 1;
                }
                None => break,
            }
        }
    }
}

/// Searches every non-observing view for new observations of every
/// edge-point. A point gains an observation only when a single polyline lies
/// within `d_sev` of its projection, the enlarged observation set
/// re-triangulates within `eps` on all views, and both chain directions match
/// from the tentative observation.
pub fn refine_visibility(ctx: &GrowContext, pl: &Polyline3D, d_sev: f64) -> Polyline3D {
    let mut out = pl.clone();
    for view_idx in 0..ctx.views.len() {
        let view = ViewId(view_idx as u32);
        for k in 0..out.points.len() {
            if out.points[k].observations.contains_key(&view) {
                continue;
            }
            let Ok(proj) = project(&ctx.cams[view_idx], out.points[k].position) else {
                continue;
            };
            let nearby = ctx.views[view_idx].closest_within(proj, d_sev);
            let [(pid, pos, _)] = nearby[..] else {
                continue; // none, or ambiguous
            };
            let vpl = ctx.views[view_idx].polyline(pid);
            let q = vpl.point_at(pos);
            let mut obs = out.points[k].observations.clone();
            obs.insert(
                view,
                Observation {
                    point: q,
                    polyline: pid,
                    pos,
                },
            );
            let Some(t) = ctx.triangulate_map(&obs) else {
                continue;
            };
            if t.max_reproj_error > ctx.eps {
                continue;
            }
            if direction_match(ctx, &out, k, view, pid, vpl.arc_at(pos)).is_none() {
                continue;
            }
            out.points[k].position = t.point;
            out.points[k].observations = obs;
        }
    }
    out
}

/// Minimum observation threshold: `max(4, v_m / 2 + 1)` where `v_m` is the
/// median per-point observation count. Non-integer thresholds are compared
/// directly, without rounding.
pub fn kv_threshold(v_m: f64) -> f64 {
    (v_m / 2.0 + 1.0).max(4.0)
}

/// Drops polylines whose mean per-point observation count falls below the
/// threshold derived from the median observation count of all edge-points.
pub fn filter_outliers(edges: Vec<Polyline3D>) -> Vec<Polyline3D> {
    let mut counts: Vec<usize> = edges
        .iter()
        .flat_map(|p| p.points.iter().map(|e| e.observations.len()))
        .collect();
    if counts.is_empty() {
        return edges;
    }
    counts.sort_unstable();
    let n = counts.len();
    let v_m = if n % 2 == 1 {
        counts[n / 2] as f64
    } else {
        (counts[n / 2 - 1] + counts[n / 2]) as f64 / 2.0
    };
    let k_v = kv_threshold(v_m);
    edges
        .into_iter()
        .filter(|p| p.mean_observations() >= k_v)
        .collect()
}
