//! P1 tetrahedral linear elasticity: stiffness, body load and energies.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{Point, TetMesh};
use crate::sparse::{dot, CsrMatrix};

/// Isotropic linear elastic material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl Material {
    pub fn from_young_poisson(youngs_modulus: f64, poisson_ratio: f64) -> Result<Self> {
        let e = youngs_modulus;
        let nu = poisson_ratio;
        let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        let mu = e / (2.0 * (1.0 + nu));
        if !(mu > 0.0) || !(lambda > -2.0 / 3.0 * mu) || !lambda.is_finite() {
            return Err(Error::Config(format!(
                "E = {e}, nu = {nu} give Lamé parameters outside mu > 0, lambda > -2mu/3"
            )));
        }
        Ok(Material {
            youngs_modulus: e,
            poisson_ratio: nu,
            lambda,
            mu,
        })
    }

    /// Energy density `mu |e|^2 + lambda/2 tr(e)^2` of a displacement gradient.
    pub fn energy_density(&self, grad_u: &Matrix3<f64>) -> f64 {
        let e = 0.5 * (grad_u + grad_u.transpose());
        let tr = e.trace();
        self.mu * e.norm_squared() + 0.5 * self.lambda * tr * tr
    }
}

/// Nodal displacement field `u(x) = y(x) - x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Displacement(pub Vec<Vector3<f64>>);

impl Displacement {
    pub fn zeros(n: usize) -> Self {
        Displacement(vec![Vector3::zeros(); n])
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize) -> Vector3<f64>) -> Self {
        Displacement((0..n).map(f).collect())
    }

    pub fn from_dofs(dofs: &[f64]) -> Self {
        Displacement(
            dofs.chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect(),
        )
    }

    pub fn to_dofs(&self) -> Vec<f64> {
        self.0.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Displacement(self.0.iter().map(|v| v * s).collect())
    }

    /// Deformed positions `x + u(x)`.
    pub fn deformed(&self, mesh: &TetMesh) -> Vec<Point> {
        mesh.nodes.iter().zip(&self.0).map(|(x, u)| x + u).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.iter().all(|c| c.is_finite()))
    }
}

/// Spatial profile of the body force along `-e3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadProfile {
    /// `H(x1 - 2) H(x1 - 4) sign(x3 - 1.5)`: active on the arm tips `x1 > 4`.
    Tips,
    /// `(H(x1 - 2) - H(x1 - 4)) sign(x3 - 1.5)`: active on the band `2 < x1 < 4`.
    Band,
}

impl std::str::FromStr for LoadProfile {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tips" => Ok(LoadProfile::Tips),
            "band" => Ok(LoadProfile::Band),
            other => Err(format!("unknown load profile '{other}' (tips | band)")),
        }
    }
}

impl std::fmt::Display for LoadProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LoadProfile::Tips => "tips",
            LoadProfile::Band => "band",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyForce {
    pub g_load: f64,
    pub profile: LoadProfile,
}

// H(0) = 0 and sign(0) = 0.
fn heaviside(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn sign(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl BodyForce {
    pub fn density(&self, x: &Point) -> Vector3<f64> {
        let switch = match self.profile {
            LoadProfile::Tips => heaviside(x.x - 2.0) * heaviside(x.x - 4.0),
            LoadProfile::Band => heaviside(x.x - 2.0) - heaviside(x.x - 4.0),
        };
        Vector3::new(0.0, 0.0, -self.g_load * switch * sign(x.z - 1.5))
    }
}

/// Gradients of the four barycentric shape functions and the element volume.
pub fn shape_gradients(mesh: &TetMesh, e: usize) -> Result<([Vector3<f64>; 4], f64)> {
    let t = mesh.tets[e];
    let x0 = mesh.nodes[t[0]];
    let jac = Matrix3::from_columns(&[
        mesh.nodes[t[1]] - x0,
        mesh.nodes[t[2]] - x0,
        mesh.nodes[t[3]] - x0,
    ]);
    let det = jac.determinant();
    let vol = det / 6.0;
    let scale = jac.norm().powi(3).max(f64::MIN_POSITIVE);
    if !(det > 1e-14 * scale) {
        return Err(Error::Assembly(format!("element {e} is degenerate (volume {vol:e})")));
    }
    // Rows of J^{-1} are the gradients of barycentric coordinates 1..3.
    let inv = jac
        .try_inverse()
        .ok_or_else(|| Error::Assembly(format!("element {e} has a singular Jacobian")))?;
    let g1 = inv.row(0).transpose();
    let g2 = inv.row(1).transpose();
    let g3 = inv.row(2).transpose();
    Ok(([-(g1 + g2 + g3), g1, g2, g3], vol))
}

/// 12x12 element stiffness, blocks `K_ab = vol (mu (g_a.g_b) I + mu g_b g_aᵀ + lambda g_a g_bᵀ)`.
fn element_stiffness(grads: &[Vector3<f64>; 4], vol: f64, mat: &Material) -> [[f64; 12]; 12] {
    let mut k = [[0.0; 12]; 12];
    for a in 0..4 {
        for b in 0..4 {
            let gg = grads[a].dot(&grads[b]);
            for i in 0..3 {
                for j in 0..3 {
                    let mut v = mat.mu * grads[b][i] * grads[a][j] + mat.lambda * grads[a][i] * grads[b][j];
                    if i == j {
                        v += mat.mu * gg;
                    }
                    k[3 * a + i][3 * b + j] = vol * v;
                }
            }
        }
    }
    // Exact symmetry of the element matrix implies exact symmetry after assembly.
    for r in 0..12 {
        for c in r + 1..12 {
            let s = 0.5 * (k[r][c] + k[c][r]);
            k[r][c] = s;
            k[c][r] = s;
        }
    }
    k
}

fn node_adjacency(mesh: &TetMesh) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); mesh.num_nodes()];
    for t in &mesh.tets {
        for &a in t {
            adj[a].extend_from_slice(t);
        }
    }
    for row in adj.iter_mut() {
        row.sort_unstable();
        row.dedup();
    }
    adj
}

/// Global stiffness matrix (3n x 3n, DOF `3 i + c`), both triangles stored.
///
/// Element matrices are computed in parallel and merged in element order, so
/// the result does not depend on the thread count.
pub fn assemble_stiffness(mesh: &TetMesh, mat: &Material) -> Result<CsrMatrix> {
    let n = mesh.num_nodes();
    let adj = node_adjacency(mesh);
    let rows = (0..3 * n)
        .map(|dof| {
            adj[dof / 3]
                .iter()
                .flat_map(|&j| [3 * j, 3 * j + 1, 3 * j + 2])
                .collect()
        })
        .collect();
    let mut k = CsrMatrix::from_pattern(3 * n, rows);

    let elems: Vec<[[f64; 12]; 12]> = (0..mesh.tets.len())
        .into_par_iter()
        .map(|e| shape_gradients(mesh, e).map(|(g, vol)| element_stiffness(&g, vol, mat)))
        .collect::<Result<_>>()?;

    for (tet, ke) in mesh.tets.iter().zip(&elems) {
        for a in 0..4 {
            for i in 0..3 {
                let row = 3 * tet[a] + i;
                for b in 0..4 {
                    // Columns 3*tet[b]..3*tet[b]+2 are contiguous in the row.
                    let p = k.position(row, 3 * tet[b]).expect("pattern covers element");
                    for j in 0..3 {
                        k.data[p + j] += ke[3 * a + i][3 * b + j];
                    }
                }
            }
        }
    }
    Ok(k)
}

/// Load vector from centroid quadrature, a quarter of the element load per vertex.
pub fn assemble_load(mesh: &TetMesh, force: &BodyForce) -> Vec<f64> {
    let mut b = vec![0.0; 3 * mesh.num_nodes()];
    for (e, tet) in mesh.tets.iter().enumerate() {
        let centroid = tet.iter().map(|&i| mesh.nodes[i]).sum::<Point>() / 4.0;
        let f = force.density(&centroid) * (mesh.tet_volume(e) / 4.0);
        for &i in tet {
            for c in 0..3 {
                b[3 * i + c] += f[c];
            }
        }
    }
    b
}

/// `½ uᵀ K u`.
pub fn elastic_energy(k: &CsrMatrix, u: &[f64]) -> Result<f64> {
    Ok(0.5 * k.quad_form(u)?)
}

/// `bᵀ u`.
pub fn body_energy(b: &[f64], u: &[f64]) -> Result<f64> {
    if b.len() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: b.len(),
            got: u.len(),
        });
    }
    Ok(dot(b, u))
}

/// Constant displacement gradient `∇u` on element `e`.
pub fn displacement_gradient(mesh: &TetMesh, u: &Displacement, e: usize) -> Result<Matrix3<f64>> {
    let (grads, _) = shape_gradients(mesh, e)?;
    let tet = mesh.tets[e];
    let mut g = Matrix3::zeros();
    for a in 0..4 {
        g += u.0[tet[a]] * grads[a].transpose();
    }
    Ok(g)
}

/// Per-element elastic energy density `Q(∇y)`.
pub fn element_energy_densities(mesh: &TetMesh, mat: &Material, u: &Displacement) -> Result<Vec<f64>> {
    (0..mesh.tets.len())
        .map(|e| displacement_gradient(mesh, u, e).map(|g| mat.energy_density(&g)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_pincer_mesh, structured_block_mesh};

    fn steel() -> Material {
        Material::from_young_poisson(2e8, 0.3).unwrap()
    }

    fn reference_tet() -> TetMesh {
        TetMesh::from_tets(
            vec![
                Point::zeros(),
                Point::new(1.0, 0.0, 0.0),
                Point::new(0.0, 1.0, 0.0),
                Point::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn lame_parameters() {
        let m = steel();
        assert!((m.lambda - 1.153846153846e8).abs() < 1e-3 * 1e8 * 1e-6);
        assert!((m.mu - 7.692307692307e7).abs() < 1e-3 * 1e7 * 1e-6);
        assert!(Material::from_young_poisson(1.0, 0.5).is_err());
        assert!(Material::from_young_poisson(-1.0, 0.3).is_err());
    }

    #[test]
    fn dilation_of_reference_tet() {
        let mesh = reference_tet();
        let mat = steel();
        let k = assemble_stiffness(&mesh, &mat).unwrap();
        let u: Vec<f64> = mesh.nodes.iter().flat_map(|x| [x.x, x.y, x.z]).collect();
        let expected = (1.0 / 6.0) * (3.0 * mat.mu + 4.5 * mat.lambda);
        let got = elastic_energy(&k, &u).unwrap();
        assert!((got - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn rigid_motions_in_kernel() {
        let mesh = structured_block_mesh(&[[[0.0, 1.0], [0.0, 0.5], [0.0, 0.75]]], 0.25).unwrap();
        let k = assemble_stiffness(&mesh, &steel()).unwrap();
        assert!(k.is_symmetric());
        let w = Matrix3::new(0.0, 0.3, -0.2, -0.3, 0.0, 0.7, 0.2, -0.7, 0.0);
        let c = Vector3::new(1.0, -2.0, 0.5);
        let u: Vec<f64> = mesh
            .nodes
            .iter()
            .flat_map(|x| {
                let v = c + w * x;
                [v.x, v.y, v.z]
            })
            .collect();
        let ku = k.matvec(&u).unwrap();
        let kmax = k.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for v in ku {
            assert!(v.abs() < 1e-10 * kmax * umax);
        }
    }

    #[test]
    fn degenerate_element_rejected() {
        let mesh = TetMesh {
            nodes: vec![
                Point::zeros(),
                Point::new(1.0, 0.0, 0.0),
                Point::new(0.0, 1.0, 0.0),
                Point::new(1.0, 1.0, 0.0),
            ],
            tets: vec![[0, 1, 2, 3]],
            boundary_tris: vec![],
            level: 0,
            h: 1.0,
        };
        assert!(matches!(assemble_stiffness(&mesh, &steel()), Err(Error::Assembly(_))));
    }

    #[test]
    fn load_on_tip_and_band() {
        let mesh = generate_pincer_mesh(1).unwrap();
        let force = BodyForce {
            g_load: 4e5,
            profile: LoadProfile::Tips,
        };
        assert!(assemble_load(&mesh, &BodyForce { g_load: 0.0, ..force })
            .iter()
            .all(|&v| v == 0.0));
        let b = assemble_load(&mesh, &force);
        // Total vertical load: upper tip block pushed down, lower pushed up.
        let total: f64 = b.iter().skip(2).step_by(3).sum();
        assert!(total.abs() < 1e-6);
        let upper: f64 = mesh
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, x)| x.z > 1.5)
            .map(|(i, _)| b[3 * i + 2])
            .sum();
        assert!((upper + 4e5 * 2.0 * 0.25).abs() < 1e-6);
        for e in 0..mesh.tets.len() {
            let c = mesh.tets[e].iter().map(|&i| mesh.nodes[i]).sum::<Point>() / 4.0;
            let f = force.density(&c);
            if c.x > 2.0 && c.x < 4.0 {
                assert_eq!(f, Vector3::zeros());
            }
            if c.x > 4.0 && c.z > 1.5 {
                assert_eq!(f, Vector3::new(0.0, 0.0, -4e5));
            }
        }
    }

    #[test]
    fn energies_at_zero() {
        let mesh = reference_tet();
        let k = assemble_stiffness(&mesh, &steel()).unwrap();
        let z = vec![0.0; 12];
        assert_eq!(elastic_energy(&k, &z).unwrap(), 0.0);
        assert_eq!(body_energy(&z, &z).unwrap(), 0.0);
        assert!(body_energy(&z, &z[..3]).is_err());
    }
}
