//! Total-energy minimization: initial states, the preconditioned BFGS run and
//! energy bookkeeping.
//!
//! The objective in the preconditioned variables `v = Lᵀ u_NP` is
//!
//! ```text
//! f(v) = ½ vᵀv − (L⁻¹ b̂)ᵀ v + μ E(x + L⁻ᵀ v)
//! ```
//!
//! and `f(v) − ĉ` equals the total energy of the recovered full displacement.

use std::time::Instant;

use nalgebra::Vector3;

use crate::bfgs::{self, BfgsOptions, IterLog};
use crate::error::{Error, Result};
use crate::fem::{assemble_load, assemble_stiffness, BodyForce, Displacement, Material};
use crate::mesh::{NodeSets, Point, TetMesh};
use crate::penalty::{surface_penalty_energy, surface_penalty_gradient, PenaltyConfig, SurfaceQuadrature};
use crate::reduction::{schur_reduce, solve_constrained, DofPartition, ReducedSystem};
use crate::sparse::{dot, CsrMatrix};

/// Energy columns in table order; `body` is `−bᵀu`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyBreakdown {
    pub elastic: f64,
    pub penalty: f64,
    pub body: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn new(elastic: f64, penalty: f64, body: f64) -> Self {
        EnergyBreakdown {
            elastic,
            penalty,
            body,
            total: elastic + penalty + body,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub breakdown: EnergyBreakdown,
    pub iterations: usize,
    pub wall_time: f64,
    pub gradient_norm: f64,
    pub converged: bool,
    pub message: String,
}

/// Assembled linear-elastic problem with tagged node sets.
#[derive(Debug, Clone)]
pub struct Problem {
    pub mesh: TetMesh,
    pub material: Material,
    pub force: BodyForce,
    pub sets: NodeSets,
    pub k: CsrMatrix,
    pub b: Vec<f64>,
}

impl Problem {
    pub fn assemble(mesh: TetMesh, material: Material, force: BodyForce, sets: NodeSets) -> Result<Self> {
        if sets.num_nodes != mesh.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: mesh.num_nodes(),
                got: sets.num_nodes,
            });
        }
        let k = assemble_stiffness(&mesh, &material)?;
        let b = assemble_load(&mesh, &force);
        Ok(Problem {
            mesh,
            material,
            force,
            sets,
            k,
            b,
        })
    }

    pub fn partition(&self) -> DofPartition {
        DofPartition::new(&self.sets)
    }

    pub fn dirichlet_dofs(&self) -> Vec<usize> {
        self.sets.dirichlet.iter().flat_map(|&i| [3 * i, 3 * i + 1, 3 * i + 2]).collect()
    }

    pub fn reduce(&self) -> Result<ReducedSystem> {
        schur_reduce(&self.k, &self.b, self.partition())
    }

    pub fn quadrature(&self) -> Result<SurfaceQuadrature> {
        SurfaceQuadrature::from_mesh(&self.mesh, &self.sets.nonpenetration)
    }

    /// Direct solve of the Dirichlet-constrained system; no penalty.
    pub fn solve_elastic(&self) -> Result<(Displacement, SolveReport)> {
        let start = Instant::now();
        let u = solve_constrained(&self.k, &self.b, &self.dirichlet_dofs())?;
        let elastic = 0.5 * self.k.quad_form(&u)?;
        let body = -dot(&self.b, &u);
        let report = SolveReport {
            breakdown: EnergyBreakdown::new(elastic, 0.0, body),
            iterations: 1,
            wall_time: start.elapsed().as_secs_f64(),
            gradient_norm: 0.0,
            converged: true,
            message: "direct solve".into(),
        };
        Ok((Displacement::from_dofs(&u), report))
    }

    pub fn breakdown(&self, u: &Displacement, quad: &SurfaceQuadrature, cfg: &PenaltyConfig) -> Result<EnergyBreakdown> {
        energy_breakdown(&self.k, &self.b, u, quad, cfg)
    }
}

/// Purely elastic solution; the penalty term is zero by construction.
pub fn solve_linear_elastic(
    mesh: &TetMesh,
    material: &Material,
    force: &BodyForce,
    sets: &NodeSets,
) -> Result<(Displacement, SolveReport)> {
    Problem::assemble(mesh.clone(), *material, *force, sets.clone())?.solve_elastic()
}

/// Scale applied to the elastic solution for the symmetric start.
pub const SYMMETRIC_START_SCALE: f64 = 0.05;

pub fn initial_symmetric(u_elast: &Displacement) -> Displacement {
    u_elast.scaled(SYMMETRIC_START_SCALE)
}

/// Center of the twisted start, between the two arms.
pub const TWIST_CENTER: Point = Point::new(3.0, 0.25, 1.5);

/// The twisted deformation `y₀` that makes the arm tips pass each other.
pub fn twisted_position(x: &Point) -> Point {
    let c = TWIST_CENTER;
    let (w1, w3) = (x.x - c.x, x.z - c.z);
    let r = w1.hypot(w3);
    // Angle to (−1, 0), positive above the center; the cut x₁ > X₁, x₃ = X₃ is outside the body.
    let theta = w3.atan2(-w1);
    let t = 0.5 * (w1 - 0.5).max(0.0).min(2.0);
    let phi = (1.0 + 0.2 * t) * theta;
    Point::new(-r * phi.cos(), x.y + 0.3 * t * w3, r * phi.sin())
}

/// Start for the asymmetric branch.
///
/// `u = y₀(x) − x` at free nodes and zero at Dirichlet nodes. `y₀` as written
/// carries a rigid translation by `−(3, 0, 1.5)`; with `anchored` the
/// translation is removed so untwisted material stays in place.
pub fn initial_asymmetric(mesh: &TetMesh, sets: &NodeSets, anchored: bool) -> Result<Displacement> {
    let c = TWIST_CENTER;
    let shift = if anchored { Vector3::new(c.x, 0.0, c.z) } else { Vector3::zeros() };
    let mut u = Vec::with_capacity(mesh.num_nodes());
    for x in &mesh.nodes {
        if (x.x - c.x).hypot(x.z - c.z) == 0.0 {
            return Err(Error::Domain(format!("node {x:?} sits on the twist axis")));
        }
        u.push(twisted_position(x) + shift - x);
    }
    for &i in &sets.dirichlet {
        u[i] = Vector3::zeros();
    }
    Ok(Displacement(u))
}

/// `elastic = ½uᵀKu`, `body = −bᵀu`, `penalty = μ E(x + u)`.
pub fn energy_breakdown(
    k: &CsrMatrix,
    b: &[f64],
    u: &Displacement,
    quad: &SurfaceQuadrature,
    cfg: &PenaltyConfig,
) -> Result<EnergyBreakdown> {
    let dofs = u.to_dofs();
    let elastic = 0.5 * k.quad_form(&dofs)?;
    if b.len() != dofs.len() {
        return Err(Error::DimensionMismatch {
            expected: dofs.len(),
            got: b.len(),
        });
    }
    let body = -dot(b, &dofs);
    let penalty = if quad.is_empty() || cfg.weight == 0.0 {
        0.0
    } else {
        cfg.weight * surface_penalty_energy(quad, &quad.deformed(u), cfg)?
    };
    Ok(EnergyBreakdown::new(elastic, penalty, body))
}

/// Preconditioned objective on the NP DOFs.
pub struct ReducedObjective<'a> {
    pub sys: &'a ReducedSystem,
    pub quad: &'a SurfaceQuadrature,
    pub cfg: &'a PenaltyConfig,
    linear: Vec<f64>,
}

impl<'a> ReducedObjective<'a> {
    pub fn new(sys: &'a ReducedSystem, quad: &'a SurfaceQuadrature, cfg: &'a PenaltyConfig) -> Result<Self> {
        if 3 * quad.len() != sys.dim() {
            return Err(Error::DimensionMismatch {
                expected: sys.dim(),
                got: 3 * quad.len(),
            });
        }
        cfg.validate()?;
        Ok(ReducedObjective {
            sys,
            quad,
            cfg,
            linear: sys.linear_term_v(),
        })
    }

    /// `f(v)` and `∇f(v)`.
    pub fn eval(&self, v: &[f64]) -> Result<(f64, Vec<f64>)> {
        let u = self.sys.to_u(v);
        let y = self.quad.deformed_from_dofs(&u);
        let mut f = 0.5 * dot(v, v) - dot(&self.linear, v);
        let mut g: Vec<f64> = v.iter().zip(&self.linear).map(|(v, c)| v - c).collect();
        if self.cfg.weight > 0.0 {
            let e = surface_penalty_energy(self.quad, &y, self.cfg)?;
            f += self.cfg.weight * e;
            if e > 0.0 {
                let gy = surface_penalty_gradient(self.quad, &y, self.cfg)?;
                let gu: Vec<f64> = gy.iter().flat_map(|p| [p.x, p.y, p.z]).map(|c| self.cfg.weight * c).collect();
                for (gv, p) in g.iter_mut().zip(self.sys.pullback(&gu)) {
                    *gv += p;
                }
            }
        }
        if !f.is_finite() {
            return Err(Error::NonFinite(format!("objective evaluated to {f}")));
        }
        Ok((f, g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    pub bfgs: BfgsOptions,
    /// Largest NP node displacement per iteration, in units of `ε`.
    ///
    /// The penalty only acts within a range of order `ε`; an unrestricted
    /// quasi-Newton step can carry the surfaces straight through each other.
    /// Non-positive or infinite values disable the cap.
    pub step_factor: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            bfgs: BfgsOptions::default(),
            step_factor: 1.0,
        }
    }
}

/// Minimizes the reduced total energy from `u_init` (only its NP values are used).
///
/// The breakdown is recomputed from the full recovered displacement.
pub fn minimize_total(
    problem: &Problem,
    sys: &ReducedSystem,
    quad: &SurfaceQuadrature,
    cfg: &PenaltyConfig,
    u_init: &Displacement,
    opts: &MinimizeOptions,
    log: impl FnMut(&IterLog),
) -> Result<(Displacement, SolveReport)> {
    let start = Instant::now();
    let init = u_init.to_dofs();
    if init.len() != sys.partition.num_dofs {
        return Err(Error::DimensionMismatch {
            expected: sys.partition.num_dofs,
            got: init.len(),
        });
    }
    if sys.dim() == 0 {
        let u = sys.recover_interior(&[]);
        let report = SolveReport {
            breakdown: problem.breakdown(&u, quad, cfg)?,
            iterations: 1,
            wall_time: start.elapsed().as_secs_f64(),
            gradient_norm: 0.0,
            converged: true,
            message: "no non-penetration nodes; direct solve".into(),
        };
        return Ok((u, report));
    }
    let obj = ReducedObjective::new(sys, quad, cfg)?;
    let u_np0 = sys.partition.restrict(&init, &sys.partition.np);
    let cap = opts.step_factor * cfg.epsilon;
    let max_step = |d: &[f64]| {
        if !(cap > 0.0 && cap.is_finite()) {
            return f64::INFINITY;
        }
        let du = sys.to_u(d);
        let longest = du
            .chunks_exact(3)
            .map(|c| (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt())
            .fold(0.0, f64::max);
        if longest > 0.0 {
            cap / longest
        } else {
            f64::INFINITY
        }
    };
    let res = bfgs::minimize_limited(|v| obj.eval(v), max_step, sys.to_v(&u_np0), &opts.bfgs, log)?;
    let u = sys.recover_interior(&sys.to_u(&res.x));
    let report = SolveReport {
        breakdown: problem.breakdown(&u, quad, cfg)?,
        iterations: res.iterations,
        wall_time: start.elapsed().as_secs_f64(),
        gradient_norm: res.grad_inf,
        converged: res.converged,
        message: res.message,
    };
    Ok((u, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::LoadProfile;
    use crate::mesh::{generate_pincer_mesh, structured_block_mesh, tag_node_sets, Region};

    const SYMMETRIC_NP: &str = "box x1=5:6 x3=2.5:2.75 | box x1=5:6 x3=0.25:0.5";

    fn pincer(np: &str) -> Problem {
        let mesh = generate_pincer_mesh(1).unwrap();
        let sets = tag_node_sets(&mesh, &"plane x1=0".parse().unwrap(), &np.parse().unwrap()).unwrap();
        let force = BodyForce {
            g_load: 4e5,
            profile: LoadProfile::Tips,
        };
        Problem::assemble(mesh, Material::from_young_poisson(2e8, 0.3).unwrap(), force, sets).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn breakdown_total_is_sum() {
        let b = EnergyBreakdown::new(3.0, 0.5, -7.0);
        assert_eq!(b.total, -3.5);
    }

    #[test]
    fn twist_examples() {
        for x2 in [0.0, 0.25, 0.5] {
            let y = twisted_position(&Point::new(0.0, x2, 1.5));
            assert!((y - Point::new(-3.0, x2, 0.0)).norm() < 1e-14, "{y:?}");
        }
        // Left of the center the upper part stays above the axis.
        assert!(twisted_position(&Point::new(1.0, 0.0, 2.8)).z > 0.0);
        // Full twist from x1 = 5.5 on: lateral shift 0.3 (x3 − 1.5) and crossed tips.
        for x in [Point::new(5.5, 0.25, 2.75), Point::new(6.0, 0.0, 0.25)] {
            let y = twisted_position(&x);
            assert!((y.y - x.y - 0.3 * (x.z - 1.5)).abs() < 1e-14);
        }
        assert!(twisted_position(&Point::new(6.0, 0.0, 2.75)).z < 0.0);
        assert!(twisted_position(&Point::new(6.0, 0.0, 0.25)).z > 0.0);
    }

    #[test]
    fn asymmetric_start() {
        let pb = pincer(SYMMETRIC_NP);
        let lit = initial_asymmetric(&pb.mesh, &pb.sets, false).unwrap();
        let anch = initial_asymmetric(&pb.mesh, &pb.sets, true).unwrap();
        for &i in &pb.sets.dirichlet {
            assert_eq!(lit.0[i], Vector3::zeros());
        }
        let free = (0..pb.mesh.num_nodes()).find(|i| !pb.sets.dirichlet.contains(i)).unwrap();
        let shift = anch.0[free] - lit.0[free];
        assert!((shift - Vector3::new(3.0, 0.0, 1.5)).norm() < 1e-14);

        let block = structured_block_mesh(&[[[2.5, 3.5], [0.0, 0.5], [1.0, 2.0]]], 0.25).unwrap();
        let sets = tag_node_sets(&block, &"plane x1=2.5".parse().unwrap(), &Region::Empty).unwrap();
        assert!(matches!(initial_asymmetric(&block, &sets, true), Err(Error::Domain(_))));
    }

    #[test]
    fn symmetric_start_scales() {
        let pb = pincer(SYMMETRIC_NP);
        let (ue, _) = pb.solve_elastic().unwrap();
        let u0 = initial_symmetric(&ue);
        for (a, b) in u0.0.iter().zip(&ue.0) {
            assert_eq!(*a, b * SYMMETRIC_START_SCALE);
        }
    }

    #[test]
    fn elastic_identity() {
        let pb = pincer(SYMMETRIC_NP);
        let (_, r) = pb.solve_elastic().unwrap();
        let b = r.breakdown;
        assert!(rel(b.body, -2.0 * b.elastic) < 1e-8);
        assert_eq!(b.penalty, 0.0);
    }

    #[test]
    fn objective_matches_total_energy() {
        let pb = pincer(SYMMETRIC_NP);
        let sys = pb.reduce().unwrap();
        let quad = pb.quadrature().unwrap();
        let cfg = PenaltyConfig::benchmark(pb.mesh.h, 2e8);
        let obj = ReducedObjective::new(&sys, &quad, &cfg).unwrap();
        let (ue, _) = pb.solve_elastic().unwrap();
        // Partway to the elastic state the tips overlap within the penalty range.
        let (u_np, b) = (1..20)
            .map(|k| {
                let u_np = sys.partition.restrict(&ue.scaled(0.05 * k as f64).to_dofs(), &sys.partition.np);
                let b = pb.breakdown(&sys.recover_interior(&u_np), &quad, &cfg).unwrap();
                (u_np, b)
            })
            .find(|(_, b)| b.penalty > 0.0)
            .unwrap();
        let v = sys.to_v(&u_np);
        let (f, g) = obj.eval(&v).unwrap();
        assert!(rel(f - sys.chat, b.total) < 1e-9, "{} vs {}", f - sys.chat, b.total);

        // Directional finite difference of f in v.
        let d: Vec<f64> = (0..v.len()).map(|k| ((k * 7919) % 13) as f64 - 6.0).collect();
        let h = 1e-4;
        let shifted = |s: f64| -> Vec<f64> { v.iter().zip(&d).map(|(a, b)| a + s * b).collect() };
        let fd = (obj.eval(&shifted(h)).unwrap().0 - obj.eval(&shifted(-h)).unwrap().0) / (2.0 * h);
        let an = dot(&g, &d);
        assert!(rel(an, fd) < 1e-6, "{an} vs {fd}");
    }

    #[test]
    fn zero_weight_recovers_linear_solution() {
        let pb = pincer(SYMMETRIC_NP);
        let sys = pb.reduce().unwrap();
        let quad = pb.quadrature().unwrap();
        let cfg = PenaltyConfig {
            weight: 0.0,
            ..PenaltyConfig::benchmark(pb.mesh.h, 2e8)
        };
        let (ue, re) = pb.solve_elastic().unwrap();
        let opts = MinimizeOptions {
            step_factor: 0.0,
            ..MinimizeOptions::default()
        };
        let (u, r) = minimize_total(&pb, &sys, &quad, &cfg, &Displacement::zeros(ue.len()), &opts, |_| {}).unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 2, "{}", r.iterations);
        assert!(rel(r.breakdown.total, re.breakdown.total) < 1e-10);
        let scale = ue.0.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let err = u.0.iter().zip(&ue.0).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-8 * scale);
    }

    #[test]
    fn penalized_run_descends_and_separates() {
        let pb = pincer(SYMMETRIC_NP);
        let sys = pb.reduce().unwrap();
        let quad = pb.quadrature().unwrap();
        let cfg = PenaltyConfig::benchmark(pb.mesh.h, 2e8);
        let (ue, re) = pb.solve_elastic().unwrap();
        let mut fs = Vec::new();
        let (u, r) = minimize_total(
            &pb,
            &sys,
            &quad,
            &cfg,
            &initial_symmetric(&ue),
            &MinimizeOptions::default(),
            |l| fs.push(l.f),
        )
        .unwrap();
        assert!(r.converged, "{}", r.message);
        assert!(fs.windows(2).all(|w| w[1] <= w[0]));
        assert!(rel(fs.last().unwrap() - sys.chat, r.breakdown.total) < 1e-9);
        // The penalty costs energy relative to the interpenetrating elastic state.
        assert!(r.breakdown.total > re.breakdown.total);
        assert!(r.breakdown.penalty > 0.0);
        let y = quad.deformed(&u);
        let upper = |k: usize| quad.ref_positions[k].z > 1.5;
        let gap = (0..y.len())
            .flat_map(|i| (0..y.len()).map(move |j| (i, j)))
            .filter(|&(i, j)| upper(i) && !upper(j))
            .map(|(i, j)| y[i].z - y[j].z)
            .fold(f64::INFINITY, f64::min);
        assert!(gap > 0.0, "{gap}");
    }

    #[test]
    fn empty_np_set_is_direct_solve() {
        let pb = pincer("none");
        let sys = pb.reduce().unwrap();
        assert_eq!(sys.dim(), 0);
        let quad = pb.quadrature().unwrap();
        let cfg = PenaltyConfig::benchmark(pb.mesh.h, 2e8);
        let (ue, re) = pb.solve_elastic().unwrap();
        let (u, r) = minimize_total(&pb, &sys, &quad, &cfg, &ue, &MinimizeOptions::default(), |_| {}).unwrap();
        assert!(rel(r.breakdown.total, re.breakdown.total) < 1e-10);
        assert!(u.0.iter().zip(&ue.0).all(|(a, b)| (a - b).norm() < 1e-10));
    }

    #[test]
    fn wrong_length_start() {
        let pb = pincer(SYMMETRIC_NP);
        let sys = pb.reduce().unwrap();
        let quad = pb.quadrature().unwrap();
        let cfg = PenaltyConfig::benchmark(pb.mesh.h, 2e8);
        let r = minimize_total(&pb, &sys, &quad, &cfg, &Displacement::zeros(3), &MinimizeOptions::default(), |_| {});
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }
}
