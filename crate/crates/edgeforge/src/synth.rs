//! Synthetic scenes with exact ground truth.
//!
//! Generates everything the pipeline ingests (edge bitmaps, cameras, sparse
//! reference points) from known 3D polylines, with controllable raster noise:
//! pixel dropout, spurious strokes and sub-pixel jitter. The companion
//! [`evaluate`] computes recall/precision/MAE/RMSE of a reconstruction
//! against the generating chains.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edge_graph::point_segment_distance;
use crate::geometry::{project, CameraView, GeometryError, Point2, Point3, ViewId};
use crate::matching::ReferencePoint;
use crate::pipeline::sample_chain;
use crate::raster::EdgeImage;
use crate::scene::{Scene, SceneError};
use crate::validation::Polyline3D;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("camera construction failed: {0}")]
    Camera(#[from] GeometryError),
}

/// Camera rig: cameras orbit `center` at `orbit_radius`, looking inward, with
/// elevations cycling around `elevation * orbit_radius` for baseline
/// diversity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigSpec {
    pub cameras: u32,
    pub orbit_radius: f64,
    pub center: [f64; 3],
    pub elevation: f64,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Probability of erasing each edge pixel.
    pub dropout: f64,
    /// Spurious strokes per pixel of image area (short 2-3 px strokes).
    pub spurious_density: f64,
    /// Gaussian jitter of the rasterized chain, in pixels.
    pub jitter_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefPointSpec {
    /// Points sampled exactly on the ground-truth edges.
    pub on_edge: u32,
    /// Background points sampled in the expanded scene box.
    pub off_edge: u32,
}

/// Full description of a synthetic scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Ground-truth 3D polylines as point chains.
    pub edges: Vec<Vec<[f64; 3]>>,
    pub rig: RigSpec,
    pub noise: NoiseSpec,
    pub ref_points: RefPointSpec,
    /// Optional axis-aligned opaque box `[lo, hi]`: edge parts behind it are
    /// hidden, as an edge detector would see them.
    #[serde(default)]
    pub occluder: Option<[[f64; 3]; 2]>,
    pub seed: u64,
}

/// Does the segment from `eye` to `target` pass through the box with a
/// material penetration depth? Points on the box surface graze it with ~zero
/// depth and are not occluded by their own surface.
fn occluded(eye: Point3, target: Point3, lo: [f64; 3], hi: [f64; 3]) -> bool {
    let a = [eye.x, eye.y, eye.z];
    let d = [target.x - eye.x, target.y - eye.y, target.z - eye.z];
    let len = eye.dist(target);
    let mut tmin = 0.0f64;
    let mut tmax = 1.0f64;
    for axis in 0..3 {
        if d[axis].abs() < 1e-15 {
            if a[axis] < lo[axis] || a[axis] > hi[axis] {
                return false;
            }
            continue;
        }
        let t0 = (lo[axis] - a[axis]) / d[axis];
        let t1 = (hi[axis] - a[axis]) / d[axis];
        let (t0, t1) = (t0.min(t1), t0.max(t1));
        tmin = tmin.max(t0);
        tmax = tmax.min(t1);
        if tmin >= tmax {
            return false;
        }
    }
    (tmax - tmin) * len > 0.01
}

impl SyntheticSpec {
    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let data = fs::read_to_string(path)?;
        let spec: SyntheticSpec = serde_json::from_str(&data)
            .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.rig.cameras < 2 {
            return Err(SynthError::InvalidSpec("need at least 2 cameras".into()));
        }
        if self.edges.is_empty() || self.edges.iter().any(|c| c.len() < 2) {
            return Err(SynthError::InvalidSpec(
                "every ground-truth edge needs at least 2 points".into(),
            ));
        }
        for p in [self.noise.dropout, self.noise.spurious_density] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::InvalidSpec(format!(
                    "noise probability {p} outside [0, 1]"
                )));
            }
        }
        if self.noise.jitter_sigma < 0.0 {
            return Err(SynthError::InvalidSpec("negative jitter".into()));
        }
        Ok(())
    }

    /// Reference desk-scale scene: a cube wireframe plus one helix arc,
    /// orbited by six cameras, with mild raster noise and realistic clutter.
    pub fn cube_and_helix() -> Self {
        let mut edges: Vec<Vec<[f64; 3]>> = cube_wireframe(2.2)
            .into_iter()
            .map(|chain| chain.into_iter().map(|p| [p.x, p.y, p.z]).collect())
            .collect();
        edges.push(
            helix_chain(1.9, 2.0, 1.5, 160)
                .into_iter()
                .map(|p| [p.x, p.y, p.z])
                .collect(),
        );
        SyntheticSpec {
            edges,
            rig: RigSpec {
                cameras: 6,
                orbit_radius: 5.2,
                center: [0.0, 0.0, 0.0],
                elevation: 0.33,
                width: 900,
                height: 700,
                focal: 520.0,
            },
            noise: NoiseSpec {
                dropout: 0.05,
                spurious_density: 0.004,
                jitter_sigma: 0.3,
            },
            ref_points: RefPointSpec {
                on_edge: 160,
                off_edge: 40,
            },
            occluder: None,
            seed: 11,
        }
    }

    /// A single curved edge, for isolating curved-recovery behavior.
    pub fn helix_only() -> Self {
        SyntheticSpec {
            edges: vec![helix_chain(1.9, 2.2, 1.5, 200)
                .into_iter()
                .map(|p| [p.x, p.y, p.z])
                .collect()],
            rig: RigSpec {
                cameras: 6,
                orbit_radius: 5.2,
                center: [0.0, 0.0, 0.0],
                elevation: 0.33,
                width: 900,
                height: 700,
                focal: 520.0,
            },
            noise: NoiseSpec {
                dropout: 0.05,
                spurious_density: 0.004,
                jitter_sigma: 0.3,
            },
            ref_points: RefPointSpec {
                on_edge: 120,
                off_edge: 30,
            },
            occluder: None,
            seed: 23,
        }
    }

    pub fn cameras(&self) -> Result<Vec<CameraView>, SynthError> {
        let center = nalgebra::Vector3::new(self.rig.center[0], self.rig.center[1], self.rig.center[2]);
        (0..self.rig.cameras)
            .map(|i| {
                let theta = i as f64 * std::f64::consts::TAU / self.rig.cameras as f64;
                // spread elevations widely (including below) so epipolar
                // planes differ strongly between view pairs
                let lift = [1.4, -1.0, 0.3][i as usize % 3];
                let c = center
                    + nalgebra::Vector3::new(
                        self.rig.orbit_radius * theta.cos(),
                        self.rig.orbit_radius * theta.sin(),
                        self.rig.orbit_radius * self.rig.elevation * lift,
                    );
                CameraView::look_at(
                    ViewId(i),
                    c,
                    center,
                    self.rig.focal,
                    self.rig.width,
                    self.rig.height,
                )
                .map_err(SynthError::from)
            })
            .collect()
    }

    pub fn chains(&self) -> Vec<Vec<Point3>> {
        self.edges
            .iter()
            .map(|c| c.iter().map(|&[x, y, z]| Point3::new(x, y, z)).collect())
            .collect()
    }
}

/// The twelve edges of an axis-aligned cube wireframe centered at the origin.
pub fn cube_wireframe(side: f64) -> Vec<Vec<Point3>> {
    let h = side / 2.0;
    let corner = |i: usize| -> Point3 {
        Point3::new(
            if i & 1 == 0 { -h } else { h },
            if i & 2 == 0 { -h } else { h },
            if i & 4 == 0 { -h } else { h },
        )
    };
    let mut edges = Vec::with_capacity(12);
    for a in 0..8usize {
        for bit in [1usize, 2, 4] {
            let b = a | bit;
            if b != a {
                if a < b {
                    edges.push(vec![corner(a), corner(b)]);
                }
            }
        }
    }
    edges
}

/// A helix arc centered on the z axis, subdivided into `segments` pieces.
pub fn helix_chain(radius: f64, height: f64, turns: f64, segments: usize) -> Vec<Point3> {
    (0..=segments)
        .map(|i| {
            let t = i as f64 / segments as f64;
            let ang = t * turns * std::f64::consts::TAU;
            Point3::new(
                radius * ang.cos(),
                radius * ang.sin(),
                -height / 2.0 + height * t,
            )
        })
        .collect()
}

/// Ground truth record written next to the generated scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub chains: Vec<Vec<Point3>>,
}

impl GroundTruth {
    pub fn total_length(&self) -> f64 {
        self.chains
            .iter()
            .map(|c| c.windows(2).map(|w| w[0].dist(w[1])).sum::<f64>())
            .sum()
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let data = fs::read_to_string(path)?;
        serde_json::from_str(&data).map_err(|e| SynthError::InvalidSpec(e.to_string()))
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

fn mark_segment(img: &mut EdgeImage, a: Point2, b: Point2) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let u0 = (a.u.min(b.u) - 1.0).floor().max(0.0) as i64;
    let u1 = (a.u.max(b.u) + 1.0).ceil().min(w as f64 - 1.0) as i64;
    let v0 = (a.v.min(b.v) - 1.0).floor().max(0.0) as i64;
    let v1 = (a.v.max(b.v) + 1.0).ceil().min(h as f64 - 1.0) as i64;
    for y in v0..=v1 {
        for x in u0..=u1 {
            let c = Point2::new(x as f64, y as f64);
            if point_segment_distance(c, a, b) <= 0.5 {
                img.set(x as u32, y as u32, true);
            }
        }
    }
}

/// Jitter control points are spaced along the chain so the wobble stays
/// smooth at sub-pixel amplitudes instead of thickening the raster.
const JITTER_SPACING: f64 = 6.0;

/// Zhang-Suen thinning. Edge detectors emit non-maximum-suppressed, 1 px
/// wide chains; without this, jitter wobble occasionally doubles the raster
/// width and the doubled pixels read as spurious junctions downstream.
fn thin_mask(img: &mut EdgeImage) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let get = |img: &EdgeImage, x: i64, y: i64| -> bool {
        x >= 0 && y >= 0 && x < w && y < h && img.get(x as u32, y as u32)
    };
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut clear = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if !get(img, x, y) {
                        continue;
                    }
                    // neighbors clockwise from north
                    let p = [
                        get(img, x, y - 1),
                        get(img, x + 1, y - 1),
                        get(img, x + 1, y),
                        get(img, x + 1, y + 1),
                        get(img, x, y + 1),
                        get(img, x - 1, y + 1),
                        get(img, x - 1, y),
                        get(img, x - 1, y - 1),
                    ];
                    let b = p.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let transitions = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    if transitions != 1 {
                        continue;
                    }
                    let ok = if pass == 0 {
                        !(p[0] && p[2] && p[4]) && !(p[2] && p[4] && p[6])
                    } else {
                        !(p[0] && p[2] && p[6]) && !(p[0] && p[4] && p[6])
                    };
                    if ok {
                        clear.push((x as u32, y as u32));
                    }
                }
            }
            if !clear.is_empty() {
                changed = true;
                for (x, y) in clear {
                    img.set(x, y, false);
                }
            }
        }
        if !changed {
            break;
        }
    }
    prune_spurs(img);
}

/// Removes 1-2 px spurs left over from thinning: leaf pixels whose unique
/// neighbor is a through-point of another chain. Genuine chain endpoints
/// (whose neighbor continues with degree 2) are left alone.
fn prune_spurs(img: &mut EdgeImage) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    for _ in 0..2 {
        let mut clear = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if !img.get(x as u32, y as u32) {
                    continue;
                }
                let neighbors = |cx: i64, cy: i64| -> Vec<(i64, i64)> {
                    let mut out = Vec::new();
                    for dy in -1..=1i64 {
                        for dx in -1..=1i64 {
                            if (dx, dy) == (0, 0) {
                                continue;
                            }
                            let (nx, ny) = (cx + dx, cy + dy);
                            if nx >= 0
                                && ny >= 0
                                && nx < w
                                && ny < h
                                && img.get(nx as u32, ny as u32)
                            {
                                out.push((nx, ny));
                            }
                        }
                    }
                    out
                };
                let n = neighbors(x, y);
                if n.len() == 1 && neighbors(n[0].0, n[0].1).len() >= 3 {
                    clear.push((x as u32, y as u32));
                }
            }
        }
        if clear.is_empty() {
            break;
        }
        for (x, y) in clear {
            img.set(x, y, false);
        }
    }
}

fn rasterize_view(
    cam: &CameraView,
    chains: &[Vec<Point3>],
    noise: &NoiseSpec,
    occluder: Option<[[f64; 3]; 2]>,
    rng: &mut ChaCha8Rng,
) -> EdgeImage {
    let mut img = EdgeImage::new(cam.width, cam.height);
    let eye = Point3::from_vec(cam.c);
    for chain in chains {
        // subdivide in 3D at roughly the jitter control spacing, keeping
        // runs of consecutive visible points
        let mut runs: Vec<Vec<Point2>> = vec![Vec::new()];
        let visit = |p: Point3, runs: &mut Vec<Vec<Point2>>| {
            let visible = match project(cam, p) {
                Ok(q) => {
                    let hidden = occluder
                        .is_some_and(|[lo, hi]| occluded(eye, p, lo, hi));
                    if hidden {
                        None
                    } else {
                        Some(q)
                    }
                }
                Err(_) => None,
            };
            match visible {
                Some(q) => runs.last_mut().unwrap().push(q),
                None => {
                    if !runs.last().unwrap().is_empty() {
                        runs.push(Vec::new());
                    }
                }
            }
        };
        for seg in chain.windows(2) {
            let px = match (project(cam, seg[0]), project(cam, seg[1])) {
                (Ok(a), Ok(b)) => a.dist(b),
                _ => seg[0].dist(seg[1]) * 200.0, // behind-camera guess, oversample
            };
            let n = ((px / JITTER_SPACING).ceil() as usize).clamp(1, 4000);
            for k in 0..n {
                let t = k as f64 / n as f64;
                visit(
                    Point3::new(
                        seg[0].x + (seg[1].x - seg[0].x) * t,
                        seg[0].y + (seg[1].y - seg[0].y) * t,
                        seg[0].z + (seg[1].z - seg[0].z) * t,
                    ),
                    &mut runs,
                );
            }
        }
        visit(*chain.last().unwrap(), &mut runs);
        for run in runs.iter().filter(|r| r.len() >= 2) {
            let mut ctrl = run.clone();
            for p in &mut ctrl {
                p.u += gauss(rng) * noise.jitter_sigma;
                p.v += gauss(rng) * noise.jitter_sigma;
            }
            for seg in ctrl.windows(2) {
                mark_segment(&mut img, seg[0], seg[1]);
            }
        }
    }

    let strokes =
        (noise.spurious_density * (cam.width as f64) * (cam.height as f64)).round() as usize;
    for _ in 0..strokes {
        let c = Point2::new(
            rng.gen_range(0.0..cam.width as f64),
            rng.gen_range(0.0..cam.height as f64),
        );
        let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let len: f64 = rng.gen_range(2.0..3.0);
        let d = Point2::new(c.u + ang.cos() * len, c.v + ang.sin() * len);
        mark_segment(&mut img, c, d);
    }

    thin_mask(&mut img);

    if noise.dropout > 0.0 {
        for y in 0..cam.height {
            for x in 0..cam.width {
                if img.get(x, y) && rng.gen::<f64>() < noise.dropout {
                    img.set(x, y, false);
                }
            }
        }
    }
    img
}

fn sample_ref_points(
    cams: &[CameraView],
    chains: &[Vec<Point3>],
    spec: &RefPointSpec,
    occluder: Option<[[f64; 3]; 2]>,
    rng: &mut ChaCha8Rng,
) -> Vec<ReferencePoint> {
    let observe = |p: Point3| -> BTreeMap<ViewId, Point2> {
        cams.iter()
            .filter_map(|cam| {
                let q = project(cam, p).ok()?;
                if !cam.contains(q) {
                    return None;
                }
                let hidden = occluder
                    .is_some_and(|[lo, hi]| occluded(Point3::from_vec(cam.c), p, lo, hi));
                (!hidden).then_some((cam.id, q))
            })
            .collect()
    };

    // arc-length lookup across all chains
    let lens: Vec<f64> = chains
        .iter()
        .map(|c| c.windows(2).map(|w| w[0].dist(w[1])).sum())
        .collect();
    let total: f64 = lens.iter().sum();
    let point_at = |mut s: f64| -> Point3 {
        for (chain, &len) in chains.iter().zip(&lens) {
            if s > len {
                s -= len;
                continue;
            }
            let mut acc = 0.0;
            for w in chain.windows(2) {
                let l = w[0].dist(w[1]);
                if acc + l >= s && l > 0.0 {
                    let t = (s - acc) / l;
                    return Point3::new(
                        w[0].x + (w[1].x - w[0].x) * t,
                        w[0].y + (w[1].y - w[0].y) * t,
                        w[0].z + (w[1].z - w[0].z) * t,
                    );
                }
                acc += l;
            }
            return *chain.last().unwrap();
        }
        *chains.last().unwrap().last().unwrap()
    };

    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in chains.iter().flatten() {
        for (i, v) in [p.x, p.y, p.z].iter().enumerate() {
            lo[i] = lo[i].min(*v);
            hi[i] = hi[i].max(*v);
        }
    }
    let expand = 0.15;
    let span = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];

    let mut out = Vec::new();
    let mut id = 0u64;
    let push = |p: Point3, out: &mut Vec<ReferencePoint>, id: &mut u64| {
        let obs = observe(p);
        if obs.len() >= 2 {
            out.push(ReferencePoint::new(*id, p, obs).expect("two observations"));
            *id += 1;
            true
        } else {
            false
        }
    };
    let mut tries = 0;
    while (out.len() as u32) < spec.on_edge && tries < spec.on_edge * 20 {
        tries += 1;
        let p = point_at(rng.gen_range(0.0..total));
        push(p, &mut out, &mut id);
    }
    let target = spec.on_edge + spec.off_edge;
    let mut tries = 0;
    while (out.len() as u32) < target && tries < spec.off_edge * 20 + 1 {
        tries += 1;
        let p = Point3::new(
            rng.gen_range(lo[0] - expand * span[0]..hi[0] + expand * span[0]),
            rng.gen_range(lo[1] - expand * span[1]..hi[1] + expand * span[1]),
            rng.gen_range(lo[2] - expand * span[2]..hi[2] + expand * span[2]),
        );
        push(p, &mut out, &mut id);
    }
    out
}

/// Generates the scene on disk: `scene.json`, one PGM edge image per view
/// under `edges/`, and `ground_truth.json`. Deterministic for a fixed spec.
pub fn generate(spec: &SyntheticSpec, out_dir: &Path) -> Result<(PathBuf, GroundTruth), SynthError> {
    spec.validate()?;
    let cams = spec.cameras()?;
    let chains = spec.chains();
    fs::create_dir_all(out_dir.join("edges"))?;

    let mut names = Vec::with_capacity(cams.len());
    let mut rels = Vec::with_capacity(cams.len());
    for (i, cam) in cams.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(
            spec.seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(i as u64),
        );
        let img = rasterize_view(cam, &chains, &spec.noise, spec.occluder, &mut rng);
        let rel = format!("edges/view{i:02}.pgm");
        fs::write(out_dir.join(&rel), img.to_pgm_bytes())?;
        names.push(format!("view{i:02}"));
        rels.push(rel);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0xC0FF_EE));
    let refs = sample_ref_points(&cams, &chains, &spec.ref_points, spec.occluder, &mut rng);

    let scene = Scene::assemble(cams, names, refs, rels, out_dir)?;
    let scene_path = out_dir.join("scene.json");
    scene.save(&scene_path)?;

    let truth = GroundTruth { chains };
    fs::write(
        out_dir.join("ground_truth.json"),
        serde_json::to_string_pretty(&truth).expect("truth serialization cannot fail"),
    )?;
    Ok((scene_path, truth))
}

/// Reconstruction quality against ground truth, all distances measured by
/// dense sampling at `tau / 10`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    /// Fraction of ground-truth arc length with a reconstructed chain within `tau`.
    pub recall: f64,
    /// Fraction of reconstructed samples within `tau` of the ground truth.
    pub precision: f64,
    /// Mean absolute reconstruction-to-truth distance.
    pub mae: f64,
    /// Root mean squared reconstruction-to-truth distance.
    pub rmse: f64,
    /// Largest reconstruction-to-truth distance.
    pub max_dist: f64,
    pub tau: f64,
}

fn seg_distance(p: Point3, a: Point3, b: Point3) -> f64 {
    let ab = b.to_vec() - a.to_vec();
    let len2 = ab.norm_squared();
    if len2 <= 0.0 {
        return p.dist(a);
    }
    let t = ((p.to_vec() - a.to_vec()).dot(&ab) / len2).clamp(0.0, 1.0);
    p.dist(Point3::from_vec(a.to_vec() + ab * t))
}

/// Uniform spatial hash over 3D segments for bounded-radius distance queries.
struct Grid3 {
    cell: f64,
    buckets: HashMap<(i64, i64, i64), Vec<u32>>,
    segs: Vec<(Point3, Point3)>,
}

impl Grid3 {
    fn build(segs: Vec<(Point3, Point3)>, cell: f64) -> Self {
        let mut buckets: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, (a, b)) in segs.iter().enumerate() {
            let lo = [a.x.min(b.x), a.y.min(b.y), a.z.min(b.z)];
            let hi = [a.x.max(b.x), a.y.max(b.y), a.z.max(b.z)];
            for cx in (lo[0] / cell).floor() as i64..=(hi[0] / cell).floor() as i64 {
                for cy in (lo[1] / cell).floor() as i64..=(hi[1] / cell).floor() as i64 {
                    for cz in (lo[2] / cell).floor() as i64..=(hi[2] / cell).floor() as i64 {
                        buckets.entry((cx, cy, cz)).or_default().push(i as u32);
                    }
                }
            }
        }
        Self {
            cell,
            buckets,
            segs,
        }
    }

    /// True when some segment lies within `d` of `p` (requires `d <= cell`).
    fn within(&self, p: Point3, d: f64) -> bool {
        let c = [
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        ];
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.buckets.get(&(c[0] + dx, c[1] + dy, c[2] + dz)) {
                        for &i in bucket {
                            let (a, b) = self.segs[i as usize];
                            if seg_distance(p, a, b) <= d {
                                return true;
                            }
                        }
                    }
                }
            }
        }
        false
    }
}

pub fn evaluate(recon: &[Polyline3D], truth: &GroundTruth, tau: f64) -> EvalMetrics {
    assert!(tau > 0.0);
    let step = tau / 10.0;

    let recon_chains: Vec<Vec<Point3>> = recon
        .iter()
        .map(|pl| pl.points.iter().map(|p| p.position).collect())
        .collect();
    let recon_segs: Vec<(Point3, Point3)> = recon_chains
        .iter()
        .flat_map(|c| c.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>())
        .collect();
    let gt_segs: Vec<(Point3, Point3)> = truth
        .chains
        .iter()
        .flat_map(|c| c.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>())
        .collect();

    // recall: ground truth covered by the reconstruction
    let grid = Grid3::build(recon_segs, tau.max(1e-12));
    let mut gt_samples = 0usize;
    let mut covered = 0usize;
    for chain in &truth.chains {
        for p in sample_chain(chain, step) {
            gt_samples += 1;
            if grid.within(p, tau) {
                covered += 1;
            }
        }
    }
    let recall = if gt_samples > 0 {
        covered as f64 / gt_samples as f64
    } else {
        0.0
    };

    // precision and error statistics: reconstruction against ground truth
    let mut n = 0usize;
    let mut within = 0usize;
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    let mut max_dist = 0.0f64;
    for chain in &recon_chains {
        if chain.len() < 2 {
            continue;
        }
        for p in sample_chain(chain, step) {
            let d = gt_segs
                .iter()
                .map(|&(a, b)| seg_distance(p, a, b))
                .fold(f64::INFINITY, f64::min);
            n += 1;
            if d <= tau {
                within += 1;
            }
            sum += d;
            sum_sq += d * d;
            max_dist = max_dist.max(d);
        }
    }
    let (precision, mae, rmse) = if n > 0 {
        (
            within as f64 / n as f64,
            sum / n as f64,
            (sum_sq / n as f64).sqrt(),
        )
    } else {
        (1.0, 0.0, 0.0)
    };

    EvalMetrics {
        recall,
        precision,
        mae,
        rmse,
        max_dist,
        tau,
    }
}
