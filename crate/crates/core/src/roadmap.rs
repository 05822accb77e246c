//! Per-limb probabilistic roadmaps built offline: each vertex caches the
//! joint configuration together with the base-frame end-effector (wheel
//! center) position and limb center of mass, so online queries never run
//! forward kinematics. Online, vertices and edges are invalidated against
//! the current state and searched with A*.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Isometry3, Point3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gridmap::{GridMap, InterpolationMethod};
use crate::robot::{
    fk_limb_base, limb_com_base, limb_frames, pair_distance, place_base_primitives,
    place_primitive, wheel_contact_point, LimbModel, PlacedPrimitive, RobotModel, WholeBodyState,
};
use crate::terrain::{LAYER_ELEVATION, LAYER_SDF};

/// Joint-space step used when collision-checking edge interpolations.
pub const EDGE_CHECK_STEP: f64 = 0.05;

#[derive(Debug, Error)]
pub enum RoadmapError {
    #[error("could not sample any collision-free vertex for limb '{0}'")]
    DegenerateSampling(String),
    #[error("unknown limb '{0}'")]
    UnknownLimb(String),
    #[error("vertex {0} does not exist or is invalidated")]
    InvalidVertex(usize),
    #[error("no path between vertices {0} and {1}")]
    NoPath(usize, usize),
    #[error("roadmap file was built for a different robot config (hash {file:#x}, expected {expected:#x})")]
    ConfigHashMismatch { file: u64, expected: u64 },
    #[error("corrupt roadmap file: {0}")]
    Corrupt(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RoadmapError>;

#[derive(Debug, Clone, PartialEq)]
pub struct RoadmapVertex {
    pub id: usize,
    pub q: Vec<f64>,
    /// Base-frame end-effector (wheel-center) position.
    pub p_ee: [f64; 3],
    /// Base-frame limb center of mass.
    pub p_com: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimbRoadmap {
    pub limb_name: String,
    pub vertices: Vec<RoadmapVertex>,
    /// Undirected adjacency: `edges[i]` lists `(j, length)` with the
    /// Euclidean end-effector distance as length. Both directions stored.
    pub edges: Vec<Vec<(usize, f64)>>,
    pub d_max: f64,
    pub k_neighbors: usize,
    /// Hash of the robot config the FK caches were built from.
    pub config_hash: u64,
}

fn ee_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Places the limb's own primitives for a configuration, in base frame.
fn limb_placed(model: &RobotModel, limb: &LimbModel, q: &[f64]) -> Vec<(usize, PlacedPrimitive)> {
    let frames = limb_frames(limb, q);
    let identity = Isometry3::identity();
    model
        .collision_bodies
        .iter()
        .filter(|p| p.limb.as_deref() == Some(limb.name.as_str()))
        .map(|p| (p.frame, place_primitive(p, &identity, Some(&frames))))
        .collect()
}

/// Self-collision test of one limb configuration against the base hull
/// and against the limb's own non-adjacent links.
fn self_collides(
    model: &RobotModel,
    limb: &LimbModel,
    q: &[f64],
    base_prims: &[PlacedPrimitive],
) -> bool {
    let placed = limb_placed(model, limb, q);
    for (_, p) in &placed {
        for b in base_prims {
            if pair_distance(p, b) < 0.0 {
                return true;
            }
        }
    }
    for i in 0..placed.len() {
        for j in i + 1..placed.len() {
            if placed[i].0.abs_diff(placed[j].0) <= 1 {
                continue;
            }
            if pair_distance(&placed[i].1, &placed[j].1) < 0.0 {
                return true;
            }
        }
    }
    false
}

fn edge_collision_free(
    model: &RobotModel,
    limb: &LimbModel,
    qa: &[f64],
    qb: &[f64],
    base_prims: &[PlacedPrimitive],
) -> bool {
    let max_delta = qa
        .iter()
        .zip(qb)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let steps = (max_delta / EDGE_CHECK_STEP).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let q: Vec<f64> = qa.iter().zip(qb).map(|(a, b)| a + (b - a) * t).collect();
        if self_collides(model, limb, &q, base_prims) {
            return false;
        }
    }
    true
}

/// Builds a roadmap for one limb: uniform joint-space samples inside the
/// limits, self-collision rejection, k-nearest-neighbor connection in
/// end-effector space with edges no longer than `d_max` whose joint-space
/// interpolation stays collision free.
pub fn build(
    model: &RobotModel,
    limb_name: &str,
    n_vertices: usize,
    k_neighbors: usize,
    d_max: f64,
    seed: u64,
) -> Result<LimbRoadmap> {
    let (_, limb) = model
        .limb(limb_name)
        .map_err(|_| RoadmapError::UnknownLimb(limb_name.to_string()))?;
    let base_prims = place_base_primitives(model, &Isometry3::identity());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vertices: Vec<RoadmapVertex> = Vec::with_capacity(n_vertices);
    let max_attempts = n_vertices.max(1) * 1000;
    let mut attempts = 0;
    while vertices.len() < n_vertices && attempts < max_attempts {
        attempts += 1;
        let q: Vec<f64> = limb
            .joints
            .iter()
            .map(|j| rng.gen_range(j.min..j.max))
            .collect();
        if self_collides(model, limb, &q, &base_prims) {
            continue;
        }
        let p_ee = fk_limb_base(limb, &q).expect("sampled inside limits");
        let p_com = limb_com_base(limb, &q);
        vertices.push(RoadmapVertex {
            id: vertices.len(),
            q,
            p_ee: [p_ee.x, p_ee.y, p_ee.z],
            p_com: [p_com.x, p_com.y, p_com.z],
        });
    }
    if vertices.is_empty() {
        return Err(RoadmapError::DegenerateSampling(limb_name.to_string()));
    }
    let n = vertices.len();
    let mut edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut present: HashSet<(usize, usize)> = HashSet::new();
    for i in 0..n {
        // k nearest in end-effector space, ties broken by vertex id
        let mut nb: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (ee_dist(&vertices[i].p_ee, &vertices[j].p_ee), j))
            .collect();
        nb.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &(dist, j) in nb.iter().take(k_neighbors) {
            if dist > d_max {
                break;
            }
            let key = (i.min(j), i.max(j));
            if present.contains(&key) {
                continue;
            }
            if edge_collision_free(model, limb, &vertices[i].q, &vertices[j].q, &base_prims) {
                present.insert(key);
                edges[i].push((j, dist));
                edges[j].push((i, dist));
            }
        }
    }
    for nbrs in &mut edges {
        nbrs.sort_by_key(|(j, _)| *j);
    }
    Ok(LimbRoadmap {
        limb_name: limb_name.to_string(),
        vertices,
        edges,
        d_max,
        k_neighbors,
        config_hash: model.config_hash(),
    })
}

/// Vertex ids whose world-frame contact point touches the elevation
/// surface (within `eps`) over ground with a signed-distance clearance
/// above `sdf_margin`.
pub fn grounded_candidates(
    rm: &LimbRoadmap,
    model: &RobotModel,
    base_pose: &Isometry3<f64>,
    map: &GridMap,
    eps: f64,
    sdf_margin: f64,
) -> Vec<usize> {
    let wheeled = model
        .limb(&rm.limb_name)
        .map(|(_, l)| l.wheeled)
        .unwrap_or(true);
    let mut out = Vec::new();
    for v in &rm.vertices {
        let ee_world = base_pose * Point3::new(v.p_ee[0], v.p_ee[1], v.p_ee[2]);
        let contact = if wheeled {
            wheel_contact_point(model, ee_world)
        } else {
            ee_world
        };
        let xy = [contact.x, contact.y];
        let h = match map.value_at(LAYER_ELEVATION, xy, InterpolationMethod::Bicubic) {
            Ok(h) => h,
            Err(_) => continue,
        };
        if (contact.z - h).abs() > eps {
            continue;
        }
        let sdf = match map.value_at(LAYER_SDF, xy, InterpolationMethod::NearestNeighbor) {
            Ok(s) => s,
            Err(_) => continue,
        };
        if sdf > sdf_margin {
            out.push(v.id);
        }
    }
    out
}

/// A filtered overlay of a roadmap; cheap to build per query.
pub struct RoadmapView<'a> {
    pub roadmap: &'a LimbRoadmap,
    pub vertex_valid: Vec<bool>,
    /// Edges removed on top of surviving vertices, keyed `(min, max)`.
    pub blocked_edges: HashSet<(usize, usize)>,
}

impl<'a> RoadmapView<'a> {
    pub fn all_valid(roadmap: &'a LimbRoadmap) -> Self {
        Self {
            roadmap,
            vertex_valid: vec![true; roadmap.vertices.len()],
            blocked_edges: HashSet::new(),
        }
    }

    pub fn edge_valid(&self, i: usize, j: usize) -> bool {
        self.vertex_valid[i]
            && self.vertex_valid[j]
            && !self.blocked_edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn valid_count(&self) -> usize {
        self.vertex_valid.iter().filter(|v| **v).count()
    }
}

/// Obstacle set for invalidation: the other limbs' current primitives in
/// world frame, plus the terrain surface.
pub fn invalidate<'a>(
    rm: &'a LimbRoadmap,
    model: &RobotModel,
    state: &WholeBodyState,
    map: &GridMap,
) -> RoadmapView<'a> {
    let mut obstacles: Vec<PlacedPrimitive> = Vec::new();
    for (i, limb) in model.limbs.iter().enumerate() {
        if limb.name == rm.limb_name {
            continue;
        }
        let frames = limb_frames(limb, state.limb_q(model, i));
        for p in model
            .collision_bodies
            .iter()
            .filter(|p| p.limb.as_deref() == Some(limb.name.as_str()))
        {
            obstacles.push(place_primitive(p, &state.base_pose, Some(&frames)));
        }
    }
    let (_, limb) = model.limb(&rm.limb_name).expect("roadmap limb exists");
    let collides = |q: &[f64]| -> bool {
        let frames = limb_frames(limb, q);
        for p in model
            .collision_bodies
            .iter()
            .filter(|p| p.limb.as_deref() == Some(rm.limb_name.as_str()))
        {
            let placed = place_primitive(p, &state.base_pose, Some(&frames));
            for o in &obstacles {
                if pair_distance(&placed, o) < 0.0 {
                    return true;
                }
            }
            // below the terrain surface counts as collision; off-map
            // primitives are left valid (no terrain there to hit)
            let low = [
                if placed.a.z < placed.b.z { placed.a.x } else { placed.b.x },
                if placed.a.z < placed.b.z { placed.a.y } else { placed.b.y },
            ];
            if let Ok(h) = map.value_at(LAYER_ELEVATION, low, InterpolationMethod::Bicubic) {
                if placed.lowest_z() < h {
                    return true;
                }
            }
        }
        false
    };
    let mut view = RoadmapView::all_valid(rm);
    for v in &rm.vertices {
        if collides(&v.q) {
            view.vertex_valid[v.id] = false;
        }
    }
    for i in 0..rm.vertices.len() {
        if !view.vertex_valid[i] {
            continue;
        }
        for &(j, _) in &rm.edges[i] {
            if j < i || !view.vertex_valid[j] {
                continue;
            }
            // swept check at the same resolution used during construction
            let qa = &rm.vertices[i].q;
            let qb = &rm.vertices[j].q;
            let max_delta = qa
                .iter()
                .zip(qb)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            let steps = (max_delta / EDGE_CHECK_STEP).ceil().max(1.0) as usize;
            let blocked = (1..steps).any(|s| {
                let t = s as f64 / steps as f64;
                let q: Vec<f64> = qa.iter().zip(qb).map(|(a, b)| a + (b - a) * t).collect();
                collides(&q)
            });
            if blocked {
                view.blocked_edges.insert((i, j));
            }
        }
    }
    view
}

/// A* over the view with the straight-line end-effector distance as the
/// (admissible) heuristic. Returns the vertex-id path including both ends.
pub fn search_path(view: &RoadmapView, start: usize, goal: usize) -> Result<Vec<usize>> {
    use std::cmp::Ordering;
    use std::collections::BinaryHeap;

    let rm = view.roadmap;
    for &v in &[start, goal] {
        if v >= rm.vertices.len() || !view.vertex_valid[v] {
            return Err(RoadmapError::InvalidVertex(v));
        }
    }
    if start == goal {
        return Ok(vec![start]);
    }

    #[derive(PartialEq)]
    struct Node {
        f: f64,
        id: usize,
    }
    impl Eq for Node {}
    impl Ord for Node {
        fn cmp(&self, other: &Self) -> Ordering {
            other
                .f
                .partial_cmp(&self.f)
                .unwrap_or(Ordering::Equal)
                .then(other.id.cmp(&self.id))
        }
    }
    impl PartialOrd for Node {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }

    let goal_p = rm.vertices[goal].p_ee;
    let h = |i: usize| ee_dist(&rm.vertices[i].p_ee, &goal_p);
    let n = rm.vertices.len();
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    g[start] = 0.0;
    heap.push(Node {
        f: h(start),
        id: start,
    });
    while let Some(Node { id, .. }) = heap.pop() {
        if closed[id] {
            continue;
        }
        closed[id] = true;
        if id == goal {
            let mut path = vec![goal];
            let mut cur = goal;
            while cur != start {
                cur = parent[cur];
                path.push(cur);
            }
            path.reverse();
            return Ok(path);
        }
        for &(j, len) in &rm.edges[id] {
            if closed[j] || !view.edge_valid(id, j) {
                continue;
            }
            let cand = g[id] + len;
            if cand < g[j] - 1e-15 {
                g[j] = cand;
                parent[j] = id;
                heap.push(Node {
                    f: cand + h(j),
                    id: j,
                });
            }
        }
    }
    Err(RoadmapError::NoPath(start, goal))
}

/// Total edge length of a vertex-id path.
pub fn path_cost(rm: &LimbRoadmap, path: &[usize]) -> f64 {
    path.windows(2)
        .map(|w| {
            rm.edges[w[0]]
                .iter()
                .find(|(j, _)| *j == w[1])
                .map(|(_, l)| *l)
                .unwrap_or(f64::INFINITY)
        })
        .sum()
}

// --- binary persistence -------------------------------------------------

const RM_MAGIC: [u8; 4] = *b"TPRM";
const RM_VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

impl LimbRoadmap {
    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&RM_MAGIC);
        out.extend_from_slice(&RM_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        let name = self.limb_name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&self.d_max.to_bits().to_le_bytes());
        out.extend_from_slice(&(self.k_neighbors as u32).to_le_bytes());
        out.extend_from_slice(&(self.vertices.len() as u32).to_le_bytes());
        let dof = self.vertices.first().map(|v| v.q.len()).unwrap_or(0);
        out.extend_from_slice(&(dof as u32).to_le_bytes());
        for v in &self.vertices {
            for x in &v.q {
                out.extend_from_slice(&x.to_bits().to_le_bytes());
            }
            for x in v.p_ee.iter().chain(v.p_com.iter()) {
                out.extend_from_slice(&x.to_bits().to_le_bytes());
            }
        }
        let mut edge_list: Vec<(u32, u32, f64)> = Vec::new();
        for (i, nbrs) in self.edges.iter().enumerate() {
            for &(j, len) in nbrs {
                if j > i {
                    edge_list.push((i as u32, j as u32, len));
                }
            }
        }
        out.extend_from_slice(&(edge_list.len() as u32).to_le_bytes());
        for (i, j, len) in edge_list {
            out.extend_from_slice(&i.to_le_bytes());
            out.extend_from_slice(&j.to_le_bytes());
            out.extend_from_slice(&len.to_bits().to_le_bytes());
        }
        let checksum = fnv1a(&out);
        out.extend_from_slice(&checksum.to_le_bytes());
        out
    }

    fn from_bytes(bytes: &[u8], expected_hash: Option<u64>) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(RoadmapError::Corrupt("file too short".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        if fnv1a(body) != stored {
            return Err(RoadmapError::Corrupt("checksum mismatch".into()));
        }
        let mut cur = body;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(RoadmapError::Corrupt("unexpected end of file".into()));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(4)? != &RM_MAGIC[..] {
            return Err(RoadmapError::Corrupt("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != RM_VERSION {
            return Err(RoadmapError::Corrupt(format!("unsupported version {version}")));
        }
        let config_hash = u64::from_le_bytes(take(8)?.try_into().unwrap());
        if let Some(expected) = expected_hash {
            if config_hash != expected {
                return Err(RoadmapError::ConfigHashMismatch {
                    file: config_hash,
                    expected,
                });
            }
        }
        let name_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let limb_name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| RoadmapError::Corrupt("limb name not utf-8".into()))?;
        let d_max = f64::from_bits(u64::from_le_bytes(take(8)?.try_into().unwrap()));
        let k_neighbors = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let dof = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut vertices = Vec::with_capacity(n);
        let read_f64 = |cur: &mut &[u8]| -> Result<f64> {
            if cur.len() < 8 {
                return Err(RoadmapError::Corrupt("unexpected end of file".into()));
            }
            let (head, rest) = cur.split_at(8);
            *cur = rest;
            Ok(f64::from_bits(u64::from_le_bytes(head.try_into().unwrap())))
        };
        for id in 0..n {
            let mut q = Vec::with_capacity(dof);
            for _ in 0..dof {
                q.push(read_f64(&mut cur)?);
            }
            let mut p = [0.0; 6];
            for x in p.iter_mut() {
                *x = read_f64(&mut cur)?;
            }
            vertices.push(RoadmapVertex {
                id,
                q,
                p_ee: [p[0], p[1], p[2]],
                p_com: [p[3], p[4], p[5]],
            });
        }
        let mut take2 = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(RoadmapError::Corrupt("unexpected end of file".into()));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        let n_edges = u32::from_le_bytes(take2(4)?.try_into().unwrap()) as usize;
        let mut edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for _ in 0..n_edges {
            let i = u32::from_le_bytes(take2(4)?.try_into().unwrap()) as usize;
            let j = u32::from_le_bytes(take2(4)?.try_into().unwrap()) as usize;
            let len = f64::from_bits(u64::from_le_bytes(take2(8)?.try_into().unwrap()));
            if i >= n || j >= n {
                return Err(RoadmapError::Corrupt("edge index out of range".into()));
            }
            edges[i].push((j, len));
            edges[j].push((i, len));
        }
        for nbrs in &mut edges {
            nbrs.sort_by_key(|(j, _)| *j);
        }
        Ok(LimbRoadmap {
            limb_name,
            vertices,
            edges,
            d_max,
            k_neighbors,
            config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    /// Loads and verifies the checksum; when `expected_hash` is given the
    /// stored robot-config hash must match.
    pub fn load(path: &Path, expected_hash: Option<u64>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes, expected_hash)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridmap::map_from_fn;
    use crate::robot::default_model;
    use crate::terrain::{derive_layers, TraversabilityParams, RADIUS_LARGE, RADIUS_SMALL};
    use approx::assert_abs_diff_eq;

    fn small_leg_roadmap(n: usize, seed: u64) -> (RobotModel, LimbRoadmap) {
        let model = default_model();
        let rm = build(&model, "leg_lf", n, 6, 0.4, seed).unwrap();
        (model, rm)
    }

    fn flat_map() -> GridMap {
        let mut map =
            map_from_fn(0.1, [-4.0, -4.0], 80, 80, LAYER_ELEVATION, |_, _| 0.0).unwrap();
        derive_layers(&mut map, RADIUS_SMALL, RADIUS_LARGE).unwrap();
        crate::terrain::classify_traversability(&mut map, &TraversabilityParams::default())
            .unwrap();
        crate::terrain::compute_sdf(&mut map).unwrap();
        map
    }

    #[test]
    fn fk_caches_are_coherent() {
        let (model, rm) = small_leg_roadmap(80, 3);
        let (_, limb) = model.limb("leg_lf").unwrap();
        for v in &rm.vertices {
            let p = fk_limb_base(limb, &v.q).unwrap();
            let c = limb_com_base(limb, &v.q);
            assert_abs_diff_eq!(p.x, v.p_ee[0], epsilon = 1e-12);
            assert_abs_diff_eq!(p.y, v.p_ee[1], epsilon = 1e-12);
            assert_abs_diff_eq!(p.z, v.p_ee[2], epsilon = 1e-12);
            assert_abs_diff_eq!(c.x, v.p_com[0], epsilon = 1e-12);
            assert_abs_diff_eq!(c.y, v.p_com[1], epsilon = 1e-12);
            assert_abs_diff_eq!(c.z, v.p_com[2], epsilon = 1e-12);
        }
    }

    #[test]
    fn edges_respect_dmax_and_symmetry() {
        let (_, rm) = small_leg_roadmap(120, 7);
        let mut n_edges = 0;
        for (i, nbrs) in rm.edges.iter().enumerate() {
            for &(j, len) in nbrs {
                assert!(len <= rm.d_max + 1e-12);
                assert_abs_diff_eq!(
                    len,
                    ee_dist(&rm.vertices[i].p_ee, &rm.vertices[j].p_ee),
                    epsilon = 1e-12
                );
                assert!(
                    rm.edges[j].iter().any(|&(k, l)| k == i && l == len),
                    "edge {i}-{j} not mirrored"
                );
                n_edges += 1;
            }
        }
        assert!(n_edges > 0, "roadmap has no edges");
    }

    #[test]
    fn build_is_deterministic() {
        let (_, a) = small_leg_roadmap(60, 11);
        let (_, b) = small_leg_roadmap(60, 11);
        assert_eq!(a, b);
        let (_, c) = small_leg_roadmap(60, 12);
        assert_ne!(a, c);
    }

    #[test]
    fn astar_matches_dijkstra() {
        let (_, rm) = small_leg_roadmap(150, 5);
        let view = RoadmapView::all_valid(&rm);

        // independent Dijkstra with no heuristic
        let dijkstra = |start: usize, goal: usize| -> Option<f64> {
            let n = rm.vertices.len();
            let mut dist = vec![f64::INFINITY; n];
            let mut done = vec![false; n];
            dist[start] = 0.0;
            loop {
                let mut best = usize::MAX;
                let mut bd = f64::INFINITY;
                for i in 0..n {
                    if !done[i] && dist[i] < bd {
                        bd = dist[i];
                        best = i;
                    }
                }
                if best == usize::MAX {
                    return None;
                }
                if best == goal {
                    return Some(bd);
                }
                done[best] = true;
                for &(j, len) in &rm.edges[best] {
                    if dist[best] + len < dist[j] {
                        dist[j] = dist[best] + len;
                    }
                }
            }
        };

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut compared = 0;
        for _ in 0..100 {
            let s = rng.gen_range(0..rm.vertices.len());
            let g = rng.gen_range(0..rm.vertices.len());
            match (search_path(&view, s, g), dijkstra(s, g)) {
                (Ok(path), Some(want)) => {
                    assert_eq!(path.first(), Some(&s));
                    assert_eq!(path.last(), Some(&g));
                    assert_abs_diff_eq!(path_cost(&rm, &path), want, epsilon = 1e-9);
                    compared += 1;
                }
                (Err(RoadmapError::NoPath(..)), None) => {}
                (a, b) => panic!("disagreement for {s}->{g}: {a:?} vs {b:?}"),
            }
        }
        assert!(compared >= 20, "only {compared} connected pairs");
    }

    #[test]
    fn search_identity_and_invalid_vertex() {
        let (_, rm) = small_leg_roadmap(40, 2);
        let mut view = RoadmapView::all_valid(&rm);
        assert_eq!(search_path(&view, 3, 3).unwrap(), vec![3]);
        view.vertex_valid[3] = false;
        assert!(matches!(
            search_path(&view, 3, 5),
            Err(RoadmapError::InvalidVertex(3))
        ));
    }

    #[test]
    fn grounded_on_flat_ground_all_legs() {
        let model = default_model();
        let map = flat_map();
        let base = Isometry3::translation(0.0, 0.0, model.h_desired);
        for limb in model.limbs.iter().filter(|l| l.wheeled) {
            let rm = build(&model, &limb.name, 200, 6, 0.4, 17).unwrap();
            let ids = grounded_candidates(&rm, &model, &base, &map, 0.05, 0.0);
            assert!(!ids.is_empty(), "{} has no grounded candidates", limb.name);
            // high above ground nothing can touch
            let high = Isometry3::translation(0.0, 0.0, 10.0);
            assert!(grounded_candidates(&rm, &model, &high, &map, 0.05, 0.0).is_empty());
        }
    }

    #[test]
    fn grounded_excludes_untraversable_cells() {
        let model = default_model();
        let mut map = flat_map();
        // mark everything untraversable: sdf becomes negative everywhere
        for v in map.layer_mut(crate::terrain::LAYER_TRAVERSABILITY).unwrap() {
            *v = 0.0;
        }
        crate::terrain::compute_sdf(&mut map).unwrap();
        let base = Isometry3::translation(0.0, 0.0, model.h_desired);
        let rm = build(&model, "leg_lf", 150, 6, 0.4, 23).unwrap();
        assert!(grounded_candidates(&rm, &model, &base, &map, 0.05, 0.0).is_empty());
    }

    #[test]
    fn invalidate_is_a_subset_and_free_space_keeps_all() {
        let (model, rm) = small_leg_roadmap(80, 31);
        let map = flat_map();
        let q: Vec<f64> = model
            .limbs
            .iter()
            .flat_map(|l| l.default_config.iter().copied())
            .collect();
        let state = WholeBodyState {
            base_pose: Isometry3::translation(0.0, 0.0, 8.0),
            q,
            contacts: vec![false; model.limbs.len()],
            contact_points: vec![None; model.limbs.len()],
        };
        let view = invalidate(&rm, &model, &state, &map);
        assert_eq!(view.valid_count(), rm.vertices.len());
        assert!(view.blocked_edges.is_empty());
    }

    #[test]
    fn terrain_above_everything_invalidates_all() {
        let (model, rm) = small_leg_roadmap(50, 37);
        let mut map = flat_map();
        for v in map.layer_mut(LAYER_ELEVATION).unwrap() {
            *v = 100.0;
        }
        let q: Vec<f64> = model
            .limbs
            .iter()
            .flat_map(|l| l.default_config.iter().copied())
            .collect();
        let state = WholeBodyState {
            base_pose: Isometry3::translation(0.0, 0.0, 1.2),
            q,
            contacts: vec![false; model.limbs.len()],
            contact_points: vec![None; model.limbs.len()],
        };
        let view = invalidate(&rm, &model, &state, &map);
        assert_eq!(view.valid_count(), 0);
    }

    #[test]
    fn limb_through_workspace_invalidates_vertices() {
        let model = default_model();
        let rm = build(&model, "leg_lf", 80, 6, 0.4, 41).unwrap();
        let map = flat_map();
        let mut q: Vec<f64> = model
            .limbs
            .iter()
            .flat_map(|l| l.default_config.iter().copied())
            .collect();
        let state_hi = WholeBodyState {
            base_pose: Isometry3::translation(0.0, 0.0, 8.0),
            q: q.clone(),
            contacts: vec![false; model.limbs.len()],
            contact_points: vec![None; model.limbs.len()],
        };
        let free = invalidate(&rm, &model, &state_hi, &map);
        // swing the arm far left so it sweeps into the left-front leg's
        // workspace
        let (arm_idx, _) = model.limb("arm").unwrap();
        let off = model.joint_offset(arm_idx);
        q[off] = 0.6; // yaw toward +y
        q[off + 1] = 0.9; // pitch down into the leg workspace
        q[off + 2] = 0.3;
        q[off + 3] = 0.0;
        let state = WholeBodyState {
            base_pose: Isometry3::translation(0.0, 0.0, 8.0),
            q,
            contacts: vec![false; model.limbs.len()],
            contact_points: vec![None; model.limbs.len()],
        };
        let view = invalidate(&rm, &model, &state, &map);
        assert!(
            view.valid_count() < free.valid_count(),
            "arm sweep should knock out leg vertices ({} vs {})",
            view.valid_count(),
            free.valid_count()
        );
        // invalidation only removes
        for (a, b) in view.vertex_valid.iter().zip(&free.vertex_valid) {
            assert!(!a || *b);
        }
    }

    #[test]
    fn save_load_roundtrip_and_guards() {
        let (model, rm) = small_leg_roadmap(60, 53);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("leg.rm");
        rm.save(&path).unwrap();
        let back = LimbRoadmap::load(&path, Some(model.config_hash())).unwrap();
        assert_eq!(rm, back);

        // mismatched robot config
        let mut other = default_model();
        other.wheel_radius = 0.75;
        assert!(matches!(
            LimbRoadmap::load(&path, Some(other.config_hash())),
            Err(RoadmapError::ConfigHashMismatch { .. })
        ));

        // truncation
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            LimbRoadmap::load(&path, None),
            Err(RoadmapError::Corrupt(_))
        ));
    }
}
