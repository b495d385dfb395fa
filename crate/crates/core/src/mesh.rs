//! Structured tetrahedral meshes of box unions, boundary extraction and
//! node-set tagging.
//!
//! Meshes are built on an integer lattice of spacing `h`. Every lattice cell
//! whose center lies inside one of the blocks is split into six positively
//! oriented tetrahedra sharing the cell's main diagonal (Kuhn subdivision).
//! Since every cell uses the same diagonal direction, neighbouring cells
//! produce conforming faces.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

/// Coarsest grid spacing of the pincer benchmark.
pub const PINCER_BASE_SPACING: f64 = 0.25;

/// Highest refinement level accepted by [`generate_pincer_mesh`].
pub const MAX_PINCER_LEVEL: u32 = 4;

/// Axis-aligned open box `(lo, hi)` per axis.
pub type Block = [[f64; 2]; 3];

/// The three blocks of the pincer: upper arm, middle bar, lower arm.
pub const PINCER_BLOCKS: [Block; 3] = [
    [[0.0, 6.0], [0.0, 0.5], [2.5, 3.0]],
    [[0.0, 0.5], [0.0, 0.5], [0.5, 2.5]],
    [[0.0, 6.0], [0.0, 0.5], [0.0, 0.5]],
];

#[derive(Debug, Clone)]
pub struct TetMesh {
    pub nodes: Vec<Point>,
    pub tets: Vec<[usize; 4]>,
    /// Outward oriented boundary triangles.
    pub boundary_tris: Vec<[usize; 3]>,
    /// Refinement level; 0 for meshes not produced by the pincer generator.
    pub level: u32,
    pub h: f64,
}

/// Grid spacing at a given pincer refinement level.
pub fn pincer_spacing(level: u32) -> f64 {
    PINCER_BASE_SPACING / f64::from(1u32 << (level - 1))
}

/// Builds the pincer mesh at refinement `level` (1..=4).
pub fn generate_pincer_mesh(level: u32) -> Result<TetMesh> {
    if level == 0 || level > MAX_PINCER_LEVEL {
        return Err(Error::Config(format!(
            "unsupported level {level} (expected 1..={MAX_PINCER_LEVEL})"
        )));
    }
    let mut mesh = structured_block_mesh(&PINCER_BLOCKS, pincer_spacing(level))?;
    mesh.level = level;
    Ok(mesh)
}

fn lattice_extent(v: f64, h: f64) -> Result<i64> {
    let n = (v / h).round();
    if (n * h - v).abs() > 1e-9 * h.max(1.0) {
        return Err(Error::Config(format!(
            "grid spacing {h} does not divide block coordinate {v}"
        )));
    }
    Ok(n as i64)
}

/// Tetrahedral mesh of a union of axis-aligned blocks on a lattice of spacing `h`.
pub fn structured_block_mesh(blocks: &[Block], h: f64) -> Result<TetMesh> {
    if !(h > 0.0) || blocks.is_empty() {
        return Err(Error::Config("need h > 0 and at least one block".into()));
    }
    let mut int_blocks = Vec::with_capacity(blocks.len());
    for b in blocks {
        let mut ib = [[0i64; 2]; 3];
        for ax in 0..3 {
            ib[ax][0] = lattice_extent(b[ax][0], h)?;
            ib[ax][1] = lattice_extent(b[ax][1], h)?;
            if ib[ax][1] <= ib[ax][0] {
                return Err(Error::Config(format!("empty block {b:?}")));
            }
        }
        int_blocks.push(ib);
    }
    let lo: [i64; 3] = std::array::from_fn(|ax| int_blocks.iter().map(|b| b[ax][0]).min().unwrap());
    let hi: [i64; 3] = std::array::from_fn(|ax| int_blocks.iter().map(|b| b[ax][1]).max().unwrap());

    let cell_inside = |c: [i64; 3]| {
        int_blocks
            .iter()
            .any(|b| (0..3).all(|ax| c[ax] >= b[ax][0] && c[ax] < b[ax][1]))
    };

    // Collect cells in lexicographic order, then number lattice nodes on first use.
    // The map is keyed by exact integer lattice coordinates.
    let mut cells = Vec::new();
    for i in lo[0]..hi[0] {
        for j in lo[1]..hi[1] {
            for k in lo[2]..hi[2] {
                if cell_inside([i, j, k]) {
                    cells.push([i, j, k]);
                }
            }
        }
    }
    let mut keys: BTreeMap<[i64; 3], usize> = BTreeMap::new();
    for c in &cells {
        for corner in 0..8 {
            let key = [
                c[0] + (corner & 1) as i64,
                c[1] + ((corner >> 1) & 1) as i64,
                c[2] + ((corner >> 2) & 1) as i64,
            ];
            keys.entry(key).or_insert(0);
        }
    }
    let mut nodes = Vec::with_capacity(keys.len());
    for (idx, (key, slot)) in keys.iter_mut().enumerate() {
        *slot = idx;
        nodes.push(Point::new(
            key[0] as f64 * h,
            key[1] as f64 * h,
            key[2] as f64 * h,
        ));
    }

    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut tets = Vec::with_capacity(6 * cells.len());
    for c in &cells {
        for perm in PERMS {
            let mut p = *c;
            let mut tet = [0usize; 4];
            tet[0] = keys[&p];
            for (step, &ax) in perm.iter().enumerate() {
                p[ax] += 1;
                tet[step + 1] = keys[&p];
            }
            if signed_volume(&nodes, &tet) < 0.0 {
                tet.swap(2, 3);
            }
            tets.push(tet);
        }
    }

    let boundary_tris = extract_boundary(&nodes, &tets)?;
    Ok(TetMesh {
        nodes,
        tets,
        boundary_tris,
        level: 0,
        h,
    })
}

pub fn signed_volume(nodes: &[Point], tet: &[usize; 4]) -> f64 {
    let a = nodes[tet[0]];
    let e1 = nodes[tet[1]] - a;
    let e2 = nodes[tet[2]] - a;
    let e3 = nodes[tet[3]] - a;
    e1.dot(&e2.cross(&e3)) / 6.0
}

fn sorted3(mut f: [usize; 3]) -> [usize; 3] {
    f.sort_unstable();
    f
}

/// Faces seen by exactly one tetrahedron, oriented with outward normals.
///
/// Requires positively oriented tetrahedra. Fails if any face is shared by
/// more than two tetrahedra.
pub fn extract_boundary(nodes: &[Point], tets: &[[usize; 4]]) -> Result<Vec<[usize; 3]>> {
    // Outward faces of a positively oriented tet (a, b, c, d).
    const LOCAL_FACES: [[usize; 3]; 4] = [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];

    let mut count: HashMap<[usize; 3], (u32, [usize; 3])> = HashMap::with_capacity(2 * tets.len());
    let mut order = Vec::new();
    for tet in tets {
        if tet.iter().any(|&n| n >= nodes.len()) {
            return Err(Error::MeshIntegrity(format!("tet {tet:?} references a missing node")));
        }
        for lf in LOCAL_FACES {
            let face = [tet[lf[0]], tet[lf[1]], tet[lf[2]]];
            let key = sorted3(face);
            let entry = count.entry(key).or_insert_with(|| {
                order.push(key);
                (0, face)
            });
            entry.0 += 1;
            if entry.0 > 2 {
                return Err(Error::MeshIntegrity(format!(
                    "face {key:?} is shared by more than two tetrahedra"
                )));
            }
        }
    }
    Ok(order
        .into_iter()
        .filter_map(|key| {
            let (n, face) = count[&key];
            (n == 1).then_some(face)
        })
        .collect())
}

impl TetMesh {
    /// Mesh from raw nodes and positively oriented tetrahedra.
    pub fn from_tets(nodes: Vec<Point>, tets: Vec<[usize; 4]>) -> Result<Self> {
        for (e, tet) in tets.iter().enumerate() {
            if tet.iter().any(|&n| n >= nodes.len()) {
                return Err(Error::MeshIntegrity(format!("tet {e} references a missing node")));
            }
            if signed_volume(&nodes, tet) <= 0.0 {
                return Err(Error::MeshIntegrity(format!("tet {e} has non-positive volume")));
            }
        }
        let boundary_tris = extract_boundary(&nodes, &tets)?;
        let h = tets
            .iter()
            .flat_map(|t| {
                let nodes = &nodes;
                (0..4).flat_map(move |a| (a + 1..4).map(move |b| (nodes[t[a]] - nodes[t[b]]).norm()))
            })
            .fold(f64::INFINITY, f64::min);
        Ok(TetMesh {
            nodes,
            tets,
            boundary_tris,
            level: 0,
            h,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Total signed volume, summed with Neumaier compensation.
    pub fn volume(&self) -> f64 {
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for t in &self.tets {
            let v = signed_volume(&self.nodes, t);
            let next = sum + v;
            comp += if sum.abs() >= v.abs() { (sum - next) + v } else { (v - next) + sum };
            sum = next;
        }
        sum + comp
    }

    pub fn tet_volume(&self, e: usize) -> f64 {
        signed_volume(&self.nodes, &self.tets[e])
    }

    pub fn tri_area(&self, tri: &[usize; 3]) -> f64 {
        let a = self.nodes[tri[0]];
        0.5 * (self.nodes[tri[1]] - a).cross(&(self.nodes[tri[2]] - a)).norm()
    }

    pub fn boundary_area(&self) -> f64 {
        self.boundary_tris.iter().map(|t| self.tri_area(t)).sum()
    }

    /// Sorted indices of nodes lying on the boundary surface.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let mut on = vec![false; self.nodes.len()];
        for tri in &self.boundary_tris {
            for &n in tri {
                on[n] = true;
            }
        }
        (0..self.nodes.len()).filter(|&i| on[i]).collect()
    }

    /// Largest distance between two nodes.
    pub fn diameter(&self) -> f64 {
        let mut lo = Point::repeat(f64::INFINITY);
        let mut hi = Point::repeat(f64::NEG_INFINITY);
        for p in &self.nodes {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        // Exact for box unions whose bounding-box corners are nodes; otherwise an upper bound.
        (hi - lo).norm()
    }

    /// Checks the structural invariants: positive volumes, face manifoldness,
    /// closed boundary surface and no orphan nodes.
    pub fn check_integrity(&self) -> Result<()> {
        let mut used = vec![false; self.nodes.len()];
        for (e, tet) in self.tets.iter().enumerate() {
            for &n in tet {
                if n >= self.nodes.len() {
                    return Err(Error::MeshIntegrity(format!("tet {e} references a missing node")));
                }
                used[n] = true;
            }
            if signed_volume(&self.nodes, tet) <= 0.0 {
                return Err(Error::MeshIntegrity(format!("tet {e} has non-positive volume")));
            }
        }
        if let Some(orphan) = used.iter().position(|u| !u) {
            return Err(Error::MeshIntegrity(format!("node {orphan} is not used by any tet")));
        }
        let mut edges: HashMap<[usize; 2], u32> = HashMap::new();
        for tri in &self.boundary_tris {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *edges.entry([a.min(b), a.max(b)]).or_default() += 1;
            }
        }
        if let Some((edge, n)) = edges.iter().find(|(_, &n)| n != 2) {
            return Err(Error::MeshIntegrity(format!(
                "boundary edge {edge:?} is shared by {n} boundary triangles"
            )));
        }
        Ok(())
    }
}

/// Spatial predicate selecting nodes, read from configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Empty,
    /// Points with `x[axis] == value`.
    Plane { axis: usize, value: f64 },
    /// Closed box; unbounded axes use infinite limits.
    Box { lo: [f64; 3], hi: [f64; 3] },
    Union(Vec<Region>),
}

const REGION_TOL: f64 = 1e-9;

impl Region {
    pub fn contains(&self, p: &Point) -> bool {
        match self {
            Region::Empty => false,
            Region::Plane { axis, value } => (p[*axis] - value).abs() <= REGION_TOL,
            Region::Box { lo, hi } => {
                (0..3).all(|ax| p[ax] >= lo[ax] - REGION_TOL && p[ax] <= hi[ax] + REGION_TOL)
            }
            Region::Union(parts) => parts.iter().any(|r| r.contains(p)),
        }
    }

    pub fn plane(axis: usize, value: f64) -> Self {
        Region::Plane { axis, value }
    }

    pub fn boxed(lo: [f64; 3], hi: [f64; 3]) -> Self {
        Region::Box { lo, hi }
    }
}

fn parse_axis(s: &str) -> std::result::Result<usize, String> {
    match s.trim() {
        "x1" => Ok(0),
        "x2" => Ok(1),
        "x3" => Ok(2),
        other => Err(format!("unknown axis '{other}' (expected x1, x2 or x3)")),
    }
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| format!("invalid number '{}'", s.trim()))
}

/// Syntax: `none`, `plane x1=0`, `box x1=5:6 x3=2.5:2.75`, and unions joined by `|`.
impl FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('|').map(str::trim).collect();
        if parts.len() > 1 {
            return parts
                .iter()
                .map(|p| p.parse::<Region>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Region::Union);
        }
        let mut words = s.split_whitespace();
        match words.next() {
            Some("none") | None => Ok(Region::Empty),
            Some("plane") => {
                let spec = words.next().ok_or("plane needs 'xN=value'")?;
                let (axis, value) = spec.split_once('=').ok_or("plane needs 'xN=value'")?;
                if words.next().is_some() {
                    return Err("trailing input after plane".into());
                }
                Ok(Region::Plane {
                    axis: parse_axis(axis)?,
                    value: parse_f64(value)?,
                })
            }
            Some("box") => {
                let mut lo = [f64::NEG_INFINITY; 3];
                let mut hi = [f64::INFINITY; 3];
                for spec in words {
                    let (axis, range) = spec.split_once('=').ok_or("box needs 'xN=lo:hi'")?;
                    let (a, b) = range.split_once(':').ok_or("box needs 'xN=lo:hi'")?;
                    let ax = parse_axis(axis)?;
                    lo[ax] = parse_f64(a)?;
                    hi[ax] = parse_f64(b)?;
                }
                Ok(Region::Box { lo, hi })
            }
            Some(other) => Err(format!("unknown region kind '{other}'")),
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Empty => write!(f, "none"),
            Region::Plane { axis, value } => write!(f, "plane x{}={}", axis + 1, value),
            Region::Box { lo, hi } => {
                write!(f, "box")?;
                for ax in 0..3 {
                    if lo[ax].is_finite() || hi[ax].is_finite() {
                        write!(f, " x{}={}:{}", ax + 1, lo[ax], hi[ax])?;
                    }
                }
                Ok(())
            }
            Region::Union(parts) => {
                for (k, p) in parts.iter().enumerate() {
                    if k > 0 {
                        write!(f, " | ")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSets {
    pub num_nodes: usize,
    pub dirichlet: Vec<usize>,
    pub nonpenetration: Vec<usize>,
}

/// Tags boundary nodes inside `dirichlet` and `nonpenetration` regions.
pub fn tag_node_sets(mesh: &TetMesh, dirichlet: &Region, nonpenetration: &Region) -> Result<NodeSets> {
    let boundary = mesh.boundary_nodes();
    let pick = |r: &Region| -> Vec<usize> {
        boundary
            .iter()
            .copied()
            .filter(|&i| r.contains(&mesh.nodes[i]))
            .collect()
    };
    let dir = pick(dirichlet);
    if dir.is_empty() {
        return Err(Error::Config(
            "Dirichlet region selects no boundary node; the elastic energy would not be coercive".into(),
        ));
    }
    let np = pick(nonpenetration);
    if let Some(&shared) = np.iter().find(|i| dir.binary_search(i).is_ok()) {
        return Err(Error::Config(format!(
            "node {shared} lies in both the Dirichlet and the non-penetration region"
        )));
    }
    Ok(NodeSets {
        num_nodes: mesh.num_nodes(),
        dirichlet: dir,
        nonpenetration: np,
    })
}
