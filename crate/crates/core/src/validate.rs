//! A-posteriori checks on a computed deformation `y = x + u`.
//!
//! Per element: orientation (`det ∇y > 0`) and singular-value bounds. On the
//! boundary: the smallest deformed distance between nodes that are far apart
//! in the reference configuration, and a point-in-tetrahedron scan for
//! boundary nodes that ended up inside other elements.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::Result;
use crate::fem::{displacement_gradient, Displacement};
use crate::mesh::{Point, TetMesh};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    /// Lower singular-value bound `l`.
    pub sigma_min: f64,
    /// Upper singular-value bound `L`.
    pub sigma_max: f64,
    /// Boundary pairs closer than `rho/2` in the reference are ignored by the gap check.
    pub rho: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            sigma_min: 0.5,
            sigma_max: 2.0,
            rho: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Violations {
    pub inverted: usize,
    pub sigma: usize,
    pub penetrating: usize,
    /// Element edges shortened below `l` times their length along their own direction.
    pub local: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub min_det: f64,
    pub max_sigma: f64,
    pub min_sigma: f64,
    pub min_boundary_gap: f64,
    pub gap_pair: Option<(usize, usize)>,
    pub violations: Violations,
}

impl ValidationReport {
    pub fn interpenetrating(&self) -> bool {
        self.violations.penetrating > 0 || !(self.min_boundary_gap > 0.0)
    }

    pub fn passed(&self) -> bool {
        self.min_det > 0.0
            && self.violations.inverted == 0
            && self.violations.sigma == 0
            && !self.interpenetrating()
    }

    pub const CSV_HEADER: &'static str =
        "min_det,max_sigma,min_sigma,min_boundary_gap,inverted,sigma_violations,penetrating_nodes,local_violations,passed";

    pub fn csv_row(&self) -> String {
        let v = &self.violations;
        format!(
            "{:e},{:e},{:e},{:e},{},{},{},{},{}",
            self.min_det,
            self.max_sigma,
            self.min_sigma,
            self.min_boundary_gap,
            v.inverted,
            v.sigma,
            v.penetrating,
            v.local,
            self.passed()
        )
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = &self.violations;
        writeln!(f, "min det F          {:.6e}  ({} inverted)", self.min_det, v.inverted)?;
        writeln!(
            f,
            "singular values    [{:.6}, {:.6}]  ({} out of bounds)",
            self.min_sigma, self.max_sigma, v.sigma
        )?;
        match self.gap_pair {
            Some((i, j)) if self.min_boundary_gap < 0.0 => writeln!(
                f,
                "min boundary gap   {:.6e}  (node {i} inside the body, nearest surface node {j})",
                self.min_boundary_gap
            )?,
            Some((i, j)) => writeln!(f, "min boundary gap   {:.6e}  (nodes {i}, {j})", self.min_boundary_gap)?,
            None => writeln!(f, "min boundary gap   none (no admissible pairs)")?,
        }
        writeln!(f, "penetrating nodes  {}", v.penetrating)?;
        writeln!(f, "local constraint   {} edge violations", v.local)?;
        write!(f, "result             {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

fn deformation_gradients(mesh: &TetMesh, u: &Displacement) -> Result<Vec<Matrix3<f64>>> {
    (0..mesh.tets.len())
        .into_par_iter()
        .map(|e| displacement_gradient(mesh, u, e).map(|g| Matrix3::identity() + g))
        .collect()
}

/// Per-element `det ∇y` and its minimum.
pub fn check_orientation(mesh: &TetMesh, u: &Displacement) -> Result<(Vec<f64>, f64)> {
    let dets: Vec<f64> = deformation_gradients(mesh, u)?.iter().map(|f| f.determinant()).collect();
    let min = dets.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((dets, min))
}

/// Singular values of a 3x3 matrix, descending.
pub fn singular_values(f: &Matrix3<f64>) -> Vector3<f64> {
    let mut s = f.svd(false, false).singular_values;
    s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    s
}

/// `(max σ, min σ, elements with σmax > L or σmin < l)`.
pub fn check_singular_values(mesh: &TetMesh, u: &Displacement, l: f64, big_l: f64) -> Result<(f64, f64, Vec<usize>)> {
    let sv: Vec<Vector3<f64>> = deformation_gradients(mesh, u)?.iter().map(singular_values).collect();
    let max = sv.iter().map(|s| s[0]).fold(f64::NEG_INFINITY, f64::max);
    let min = sv.iter().map(|s| s[2]).fold(f64::INFINITY, f64::min);
    let bad = sv
        .iter()
        .enumerate()
        .filter(|(_, s)| s[0] > big_l || s[2] < l)
        .map(|(e, _)| e)
        .collect();
    Ok((max, min, bad))
}

/// Signed boundary gap and the pair attaining it.
///
/// Without penetration this is the smallest `|y_i − y_j|` over boundary node
/// pairs with `|x_i − x_j| > rho/2`. When boundary nodes lie inside the deformed
/// body the gap is minus the deepest penetration, measured as the distance of
/// the node to the deformed boundary surface; the pair then names the node and
/// the closest vertex of the nearest boundary triangle.
pub fn check_boundary_gap(mesh: &TetMesh, u: &Displacement, rho: f64) -> (f64, Option<(usize, usize)>) {
    boundary_gap(mesh, u, rho, &penetrating_nodes(mesh, u))
}

fn boundary_gap(mesh: &TetMesh, u: &Displacement, rho: f64, inside: &[usize]) -> (f64, Option<(usize, usize)>) {
    if !inside.is_empty() {
        let (depth, pair) = penetration_depth(mesh, u, rho, inside);
        return (-depth, pair);
    }
    let nodes = mesh.boundary_nodes();
    let y: Vec<Point> = nodes.iter().map(|&i| mesh.nodes[i] + u.0[i]).collect();
    let cut2 = 0.25 * rho * rho;
    let best = (0..nodes.len())
        .into_par_iter()
        .map(|a| {
            let mut best = (f64::INFINITY, None);
            for b in a + 1..nodes.len() {
                if (mesh.nodes[nodes[a]] - mesh.nodes[nodes[b]]).norm_squared() <= cut2 {
                    continue;
                }
                let d = (y[a] - y[b]).norm_squared();
                if d < best.0 {
                    best = (d, Some((nodes[a], nodes[b])));
                }
            }
            best
        })
        .reduce(
            || (f64::INFINITY, None),
            |p, q| if q.0 < p.0 || (q.0 == p.0 && q.1 < p.1) { q } else { p },
        );
    (best.0.sqrt(), best.1)
}

/// Largest distance from a node of `inside` to the deformed boundary
/// triangles whose vertices are all farther than `rho/2` from it in the reference.
fn penetration_depth(mesh: &TetMesh, u: &Displacement, rho: f64, inside: &[usize]) -> (f64, Option<(usize, usize)>) {
    let y = |i: usize| mesh.nodes[i] + u.0[i];
    let cut2 = 0.25 * rho * rho;
    inside
        .par_iter()
        .map(|&n| {
            let p = y(n);
            let mut best = (f64::INFINITY, n);
            let far = |t: &&[usize; 3]| t.iter().all(|&i| (mesh.nodes[i] - mesh.nodes[n]).norm_squared() > cut2);
            for tri in mesh.boundary_tris.iter().filter(far) {
                let v = [y(tri[0]), y(tri[1]), y(tri[2])];
                let d = (closest_point_on_triangle(&p, &v) - p).norm();
                if d < best.0 {
                    let k = (0..3)
                        .min_by(|&a, &b| (v[a] - p).norm().total_cmp(&(v[b] - p).norm()))
                        .unwrap_or(0);
                    best = (d, tri[k]);
                }
            }
            (best.0, Some((n, best.1)))
        })
        .reduce(
            || (0.0, None),
            |p, q| if q.0 > p.0 || (q.0 == p.0 && q.1 < p.1) { q } else { p },
        )
}

fn closest_point_on_triangle(p: &Point, [a, b, c]: &[Point; 3]) -> Point {
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(&ap), ac.dot(&ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(&bp), ac.dot(&bp));
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(&cp), ac.dot(&cp));
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Boundary nodes lying strictly inside a deformed tetrahedron they do not belong to.
pub fn penetrating_nodes(mesh: &TetMesh, u: &Displacement) -> Vec<usize> {
    let y: Vec<Point> = mesh.nodes.iter().zip(&u.0).map(|(x, d)| x + d).collect();
    let cell = mesh.h.max(1e-12);
    let key = |p: &Point| {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (e, t) in mesh.tets.iter().enumerate() {
        let mut lo = y[t[0]];
        let mut hi = y[t[0]];
        for &i in &t[1..] {
            lo = lo.inf(&y[i]);
            hi = hi.sup(&y[i]);
        }
        let (a, b) = (key(&lo), key(&hi));
        for i in a[0]..=b[0] {
            for j in a[1]..=b[1] {
                for k in a[2]..=b[2] {
                    grid.entry([i, j, k]).or_default().push(e);
                }
            }
        }
    }
    mesh.boundary_nodes()
        .into_par_iter()
        .filter(|&n| {
            grid.get(&key(&y[n])).is_some_and(|cands| {
                cands.iter().any(|&e| {
                    let t = mesh.tets[e];
                    !t.contains(&n) && strictly_inside(&y[n], [&y[t[0]], &y[t[1]], &y[t[2]], &y[t[3]]])
                })
            })
        })
        .collect()
}

fn strictly_inside(p: &Point, v: [&Point; 4]) -> bool {
    let m = Matrix3::from_columns(&[v[1] - v[0], v[2] - v[0], v[3] - v[0]]);
    let Some(inv) = m.try_inverse() else {
        return false;
    };
    let l = inv * (p - v[0]);
    let tol = 1e-9;
    l.x > tol && l.y > tol && l.z > tol && l.x + l.y + l.z < 1.0 - tol
}

/// Element edges violating `(y_b − y_a)·(x_b − x_a) ≥ l |x_b − x_a|²`.
pub fn check_local_constraint(mesh: &TetMesh, u: &Displacement, l: f64) -> usize {
    const EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    mesh.tets
        .par_iter()
        .map(|t| {
            EDGES
                .iter()
                .filter(|&&(a, b)| {
                    let dx = mesh.nodes[t[b]] - mesh.nodes[t[a]];
                    let dy = dx + u.0[t[b]] - u.0[t[a]];
                    dy.dot(&dx) < l * dx.norm_squared()
                })
                .count()
        })
        .sum()
}

/// Runs every check.
pub fn validate(mesh: &TetMesh, u: &Displacement, opts: &ValidationOptions) -> Result<ValidationReport> {
    let (dets, min_det) = check_orientation(mesh, u)?;
    let (max_sigma, min_sigma, bad) = check_singular_values(mesh, u, opts.sigma_min, opts.sigma_max)?;
    let inside = penetrating_nodes(mesh, u);
    let (gap, pair) = boundary_gap(mesh, u, opts.rho, &inside);
    Ok(ValidationReport {
        min_det,
        max_sigma,
        min_sigma,
        min_boundary_gap: gap,
        gap_pair: pair,
        violations: Violations {
            inverted: dets.iter().filter(|&&d| d <= 0.0).count(),
            sigma: bad.len(),
            penetrating: inside.len(),
            local: check_local_constraint(mesh, u, opts.sigma_min),
        },
    })
}
