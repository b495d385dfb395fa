//! Static condensation of the quadratic energy onto the non-penetration DOFs.
//!
//! With the Dirichlet DOFs fixed at zero and the remaining DOFs split into
//! `NP` (non-penetration) and `R` (everything else), minimizing over `u_R` for
//! fixed `u_NP` gives
//!
//! ```text
//! u_R  = K_RR⁻¹ (b_R − K_R,NP u_NP)
//! S    = K_NP,NP − K_NP,R K_RR⁻¹ K_R,NP
//! b̂    = b_NP − K_NP,R K_RR⁻¹ b_R
//! ĉ    = ½ b_Rᵀ K_RR⁻¹ b_R
//! ½uᵀKu − bᵀu = ½u_NPᵀ S u_NP − b̂ᵀu_NP − ĉ
//! ```
//!
//! The dense Cholesky factor `S = L Lᵀ` supplies the change of variables
//! `v = Lᵀ u_NP` in which the quadratic part has identity Hessian.

use std::io::Write;
use std::path::Path;

use faer::{Mat, Side};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::Displacement;
use crate::mesh::NodeSets;
use crate::sparse::{dot, CsrMatrix, SparseCholesky};

/// Number of right-hand sides solved together when forming `S`.
const SCHUR_BATCH: usize = 32;

/// Split of the `3n` DOFs into Dirichlet, non-penetration and remaining blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DofPartition {
    pub num_dofs: usize,
    pub dirichlet: Vec<usize>,
    /// NP DOFs, node-major in the order of `NodeSets::nonpenetration`.
    pub np: Vec<usize>,
    pub rest: Vec<usize>,
}

impl DofPartition {
    pub fn new(sets: &NodeSets) -> Self {
        let n = sets.num_nodes;
        #[derive(Clone, Copy, PartialEq)]
        enum Kind {
            D,
            Np,
            R,
        }
        let mut kind = vec![Kind::R; n];
        for &i in &sets.dirichlet {
            kind[i] = Kind::D;
        }
        for &i in &sets.nonpenetration {
            kind[i] = Kind::Np;
        }
        let dofs = |i: usize| [3 * i, 3 * i + 1, 3 * i + 2];
        let dirichlet = (0..n).filter(|&i| kind[i] == Kind::D).flat_map(dofs).collect();
        let np = sets.nonpenetration.iter().copied().flat_map(dofs).collect();
        let rest = (0..n).filter(|&i| kind[i] == Kind::R).flat_map(dofs).collect();
        DofPartition {
            num_dofs: 3 * n,
            dirichlet,
            np,
            rest,
        }
    }

    /// All non-Dirichlet DOFs in increasing order.
    pub fn free(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self.np.iter().chain(&self.rest).copied().collect();
        f.sort_unstable();
        f
    }

    pub fn restrict(&self, u: &[f64], block: &[usize]) -> Vec<f64> {
        block.iter().map(|&d| u[d]).collect()
    }
}

/// Solves `K u = b` with the Dirichlet DOFs eliminated (`u_D = 0`).
pub fn solve_constrained(k: &CsrMatrix, b: &[f64], dirichlet: &[usize]) -> Result<Vec<f64>> {
    let mut is_fixed = vec![false; k.nrows];
    for &d in dirichlet {
        is_fixed[d] = true;
    }
    if dirichlet.is_empty() {
        return Err(Error::Reduction(
            "no Dirichlet DOFs: the stiffness matrix is singular".into(),
        ));
    }
    let free: Vec<usize> = (0..k.nrows).filter(|&d| !is_fixed[d]).collect();
    let kff = k.extract(&free, &free);
    let chol = SparseCholesky::new(&kff)
        .map_err(|e| Error::Reduction(format!("constrained stiffness is singular: {e}")))?;
    let x = chol.solve(&free.iter().map(|&d| b[d]).collect::<Vec<_>>());
    let mut u = vec![0.0; k.nrows];
    for (&d, v) in free.iter().zip(x) {
        u[d] = v;
    }
    Ok(u)
}

pub struct ReducedSystem {
    pub partition: DofPartition,
    /// Dense Schur complement, row-major `m x m` with `m = |np DOFs|`.
    pub s: Vec<f64>,
    pub bhat: Vec<f64>,
    pub chat: f64,
    /// Lower Cholesky factor of `S`, row-major.
    pub chol_lower: Vec<f64>,
    k_rn: CsrMatrix,
    b_r: Vec<f64>,
    interior: SparseCholesky,
}

impl std::fmt::Debug for ReducedSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReducedSystem")
            .field("np_dofs", &self.partition.np.len())
            .field("rest_dofs", &self.partition.rest.len())
            .field("chat", &self.chat)
            .finish_non_exhaustive()
    }
}

/// Condenses `½uᵀKu − bᵀu` onto the NP DOFs of `partition`.
pub fn schur_reduce(k: &CsrMatrix, b: &[f64], partition: DofPartition) -> Result<ReducedSystem> {
    if b.len() != k.nrows || partition.num_dofs != k.nrows {
        return Err(Error::DimensionMismatch {
            expected: k.nrows,
            got: b.len(),
        });
    }
    if partition.dirichlet.is_empty() {
        return Err(Error::Reduction(
            "no Dirichlet DOFs: K_RR is singular (missing Dirichlet data)".into(),
        ));
    }
    let (np, rest) = (&partition.np, &partition.rest);
    let m = np.len();
    let k_rr = k.extract(rest, rest);
    let interior = SparseCholesky::new(&k_rr)
        .map_err(|e| Error::Reduction(format!("K_RR is singular (missing Dirichlet data?): {e}")))?;
    let k_rn = k.extract(rest, np);
    let k_nn = k.extract(np, np);
    let b_r = partition.restrict(b, rest);
    let b_n = partition.restrict(b, np);

    let z = interior.solve(&b_r);
    let chat = 0.5 * dot(&b_r, &z);
    let mut bhat = b_n;
    for r in 0..k_rn.nrows {
        for (c, v) in k_rn.row(r) {
            bhat[c] -= v * z[r];
        }
    }

    // Columns of S, computed in independent batches of K_RR⁻¹ K_R,NP solves.
    let n_r = rest.len();
    let batches: Vec<(usize, usize)> = (0..m)
        .step_by(SCHUR_BATCH)
        .map(|c0| (c0, (c0 + SCHUR_BATCH).min(m)))
        .collect();
    let blocks: Vec<Vec<f64>> = batches
        .par_iter()
        .map(|&(c0, c1)| {
            let width = c1 - c0;
            let mut x = vec![0.0; n_r * width];
            for r in 0..n_r {
                for (c, v) in k_rn.row(r) {
                    if (c0..c1).contains(&c) {
                        x[(c - c0) * n_r + r] = v;
                    }
                }
            }
            interior.solve_many_in_place(&mut x, width);
            // block[i * width + (c - c0)] = (K_NR X)[i][c]
            let mut block = vec![0.0; m * width];
            for r in 0..n_r {
                for (i, v) in k_rn.row(r) {
                    for j in 0..width {
                        block[i * width + j] += v * x[j * n_r + r];
                    }
                }
            }
            block
        })
        .collect();
    let mut s = vec![0.0; m * m];
    for i in 0..m {
        for (j, v) in k_nn.row(i) {
            s[i * m + j] = v;
        }
    }
    for (&(c0, c1), block) in batches.iter().zip(&blocks) {
        let width = c1 - c0;
        for i in 0..m {
            for j in 0..width {
                s[i * m + c0 + j] -= block[i * width + j];
            }
        }
    }
    for i in 0..m {
        for j in i + 1..m {
            let v = 0.5 * (s[i * m + j] + s[j * m + i]);
            s[i * m + j] = v;
            s[j * m + i] = v;
        }
    }

    let chol_lower = dense_cholesky(&s, m)?;
    Ok(ReducedSystem {
        partition,
        s,
        bhat,
        chat,
        chol_lower,
        k_rn,
        b_r,
        interior,
    })
}

fn dense_cholesky(s: &[f64], m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Ok(Vec::new());
    }
    let a = Mat::<f64>::from_fn(m, m, |i, j| s[i * m + j]);
    let llt = a
        .llt(Side::Lower)
        .map_err(|e| Error::Factorization(format!("Schur complement is not positive definite: {e:?}")))?;
    let l = llt.L();
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            out[i * m + j] = l[(i, j)];
        }
    }
    Ok(out)
}

impl ReducedSystem {
    pub fn dim(&self) -> usize {
        self.partition.np.len()
    }

    pub fn s_matvec(&self, u: &[f64]) -> Vec<f64> {
        let m = self.dim();
        (0..m).map(|i| dot(&self.s[i * m..(i + 1) * m], u)).collect()
    }

    /// `½uᵀSu − b̂ᵀu − ĉ`, equal to the full quadratic energy of the recovered field.
    pub fn reduced_energy(&self, u_np: &[f64]) -> f64 {
        0.5 * dot(&self.s_matvec(u_np), u_np) - dot(&self.bhat, u_np) - self.chat
    }

    /// Full displacement with `u_D = 0`, the given `u_NP`, and `u_R` minimizing the quadratic energy.
    pub fn recover_interior(&self, u_np: &[f64]) -> Displacement {
        let mut rhs = self.b_r.clone();
        for (r, out) in rhs.iter_mut().enumerate() {
            for (c, v) in self.k_rn.row(r) {
                *out -= v * u_np[c];
            }
        }
        self.interior.solve_in_place(&mut rhs);
        let mut u = vec![0.0; self.partition.num_dofs];
        for (&d, v) in self.partition.np.iter().zip(u_np) {
            u[d] = *v;
        }
        for (&d, v) in self.partition.rest.iter().zip(rhs) {
            u[d] = v;
        }
        Displacement::from_dofs(&u)
    }

    /// Minimizer of the reduced quadratic energy, `S⁻¹ b̂`.
    pub fn solve_quadratic(&self) -> Vec<f64> {
        self.to_u(&self.linear_term_v())
    }

    fn lower(&self, i: usize, j: usize) -> f64 {
        self.chol_lower[i * self.dim() + j]
    }

    /// `v = Lᵀ u`.
    pub fn to_v(&self, u: &[f64]) -> Vec<f64> {
        let m = self.dim();
        (0..m)
            .map(|i| (i..m).map(|k| self.lower(k, i) * u[k]).sum())
            .collect()
    }

    /// `u = L⁻ᵀ v`.
    pub fn to_u(&self, v: &[f64]) -> Vec<f64> {
        let m = self.dim();
        let mut u = v.to_vec();
        for i in (0..m).rev() {
            let mut acc = u[i];
            for k in i + 1..m {
                acc -= self.lower(k, i) * u[k];
            }
            u[i] = acc / self.lower(i, i);
        }
        u
    }

    /// Gradient in `v` from a gradient in `u`: `L⁻¹ g`.
    pub fn pullback(&self, g_u: &[f64]) -> Vec<f64> {
        let m = self.dim();
        let mut g = g_u.to_vec();
        for i in 0..m {
            let mut acc = g[i];
            for k in 0..i {
                acc -= self.lower(i, k) * g[k];
            }
            g[i] = acc / self.lower(i, i);
        }
        g
    }

    /// Linear coefficient `L⁻¹ b̂` of the quadratic part in `v`.
    pub fn linear_term_v(&self) -> Vec<f64> {
        self.pullback(&self.bhat)
    }

    /// Writes `m` (u64), `S` row-major, then `b̂`, all little-endian.
    pub fn dump_binary(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(8 * (1 + self.s.len() + self.bhat.len()));
        buf.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        for v in self.s.iter().chain(&self.bhat) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }
}
