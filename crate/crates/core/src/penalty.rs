//! Nonlocal surface penalty against self-interpenetration.
//!
//! For boundary points `x, x'` with deformed images `y, y'` the pair term is
//! `P(g(|x − x'|) − g(|y − y'| / ε))`. It is positive only when the deformed
//! distance shrinks below `ε` times the reference distance. The discrete
//! energy sums over ordered pairs of non-penetration nodes:
//!
//! ```text
//! E = ε^-β Σ_i w_i ε^-(d-1) Σ_{j≠i} w_j P(g(|x_j − x_i|) − g(|y_j − y_i| / ε))
//! ```

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::Displacement;
use crate::mesh::{Point, TetMesh};

/// Scalar profile used for both `P` and `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// C² ramp: cubic-quartic blend on `[0, a]`, then `t − a/2`.
    Smooth { a: f64 },
    /// `[t]⁺`.
    PositivePart,
    Identity,
}

impl Kernel {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Kernel::Smooth { a } => {
                if t < 0.0 {
                    0.0
                } else if t <= a {
                    t * t * t / (a * a) - t.powi(4) / (2.0 * a * a * a)
                } else {
                    t - 0.5 * a
                }
            }
            Kernel::PositivePart => t.max(0.0),
            Kernel::Identity => t,
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            Kernel::Smooth { a } => {
                if t < 0.0 {
                    0.0
                } else if t <= a {
                    3.0 * t * t / (a * a) - 2.0 * t * t * t / (a * a * a)
                } else {
                    1.0
                }
            }
            Kernel::PositivePart => {
                if t > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Identity => 1.0,
        }
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        match *self {
            Kernel::Smooth { a } if (0.0..=a).contains(&t) => {
                6.0 * t / (a * a) - 6.0 * t * t / (a * a * a)
            }
            _ => 0.0,
        }
    }
}

/// Value and derivative of the smooth kernel with width `a`.
pub fn kernel_pg(t: f64, a: f64) -> (f64, f64) {
    let k = Kernel::Smooth { a };
    (k.value(t), k.derivative(t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    pub beta: f64,
    pub epsilon: f64,
    /// Kernel smoothing width.
    pub a: f64,
    /// Multiplier `μ_∂Ω` applied by the caller.
    pub weight: f64,
    pub s_factor: f64,
    pub r_factor: f64,
}

impl PenaltyConfig {
    pub const DEFAULT_BETA: f64 = 2.1;
    pub const DEFAULT_A: f64 = 0.01;
    pub const DEFAULT_S: f64 = 3.0;
    pub const DEFAULT_R: f64 = 2.0;
    /// `μ_∂Ω` as a fraction of Young's modulus.
    pub const DEFAULT_WEIGHT_FACTOR: f64 = 1e-3;

    /// Benchmark parameters on a grid of spacing `h`.
    pub fn benchmark(h: f64, youngs_modulus: f64) -> Self {
        PenaltyConfig {
            beta: Self::DEFAULT_BETA,
            epsilon: Self::DEFAULT_S * h / Self::DEFAULT_R,
            a: Self::DEFAULT_A,
            weight: Self::DEFAULT_WEIGHT_FACTOR * youngs_modulus,
            s_factor: Self::DEFAULT_S,
            r_factor: Self::DEFAULT_R,
        }
    }

    /// `ε = s·h / r`.
    pub fn epsilon_for_spacing(s_factor: f64, r_factor: f64, h: f64) -> f64 {
        s_factor * h / r_factor
    }

    pub fn kernel(&self) -> Kernel {
        Kernel::Smooth { a: self.a }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.a > 0.0) {
            return Err(Error::Config(format!("kernel width must be positive, got {}", self.a)));
        }
        if !(self.weight >= 0.0) {
            return Err(Error::Config(format!("penalty weight must be >= 0, got {}", self.weight)));
        }
        Ok(())
    }
}

/// Node-based quadrature of the surface measure restricted to the NP nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceQuadrature {
    pub np_nodes: Vec<usize>,
    pub weights: Vec<f64>,
    pub ref_positions: Vec<Point>,
}

impl SurfaceQuadrature {
    /// Lumps one third of each boundary triangle whose three vertices are all NP nodes.
    pub fn from_mesh(mesh: &TetMesh, np_nodes: &[usize]) -> Result<Self> {
        let mut local = vec![usize::MAX; mesh.num_nodes()];
        for (k, &i) in np_nodes.iter().enumerate() {
            local[i] = k;
        }
        let mut weights = vec![0.0; np_nodes.len()];
        for tri in &mesh.boundary_tris {
            if tri.iter().all(|&i| local[i] != usize::MAX) {
                let third = mesh.tri_area(tri) / 3.0;
                for &i in tri {
                    weights[local[i]] += third;
                }
            }
        }
        if let Some(k) = weights.iter().position(|&w| w <= 0.0) {
            return Err(Error::Config(format!(
                "non-penetration node {} has no boundary triangle inside the region",
                np_nodes[k]
            )));
        }
        Ok(SurfaceQuadrature {
            np_nodes: np_nodes.to_vec(),
            weights,
            ref_positions: np_nodes.iter().map(|&i| mesh.nodes[i]).collect(),
        })
    }

    pub fn new(ref_positions: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if ref_positions.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: ref_positions.len(),
                got: weights.len(),
            });
        }
        Ok(SurfaceQuadrature {
            np_nodes: (0..weights.len()).collect(),
            weights,
            ref_positions,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Deformed NP positions `x + u`.
    pub fn deformed(&self, u: &Displacement) -> Vec<Point> {
        self.np_nodes
            .iter()
            .zip(&self.ref_positions)
            .map(|(&i, x)| x + u.0[i])
            .collect()
    }

    /// Deformed NP positions from NP displacement DOFs (node-major).
    pub fn deformed_from_dofs(&self, u_np: &[f64]) -> Vec<Point> {
        self.ref_positions
            .iter()
            .enumerate()
            .map(|(k, x)| x + Vector3::new(u_np[3 * k], u_np[3 * k + 1], u_np[3 * k + 2]))
            .collect()
    }
}

/// Ingredients of one pair sum: kernels, `ε`, and the inner-integral dimension.
#[derive(Debug, Clone, Copy)]
struct PairSum {
    p: Kernel,
    g: Kernel,
    eps: f64,
    inner_dim: i32,
}

impl PairSum {
    fn arg(&self, xi: &Point, xj: &Point, yi: &Point, yj: &Point) -> (f64, f64) {
        let rho = (yj - yi).norm();
        (self.g.value((xj - xi).norm()) - self.g.value(rho / self.eps), rho)
    }

    /// `ε^-(inner_dim) Σ_{j≠i} w_j P(arg_ij)` for every `i`.
    fn densities(&self, x: &[Point], y: &[Point], w: &[f64]) -> Vec<f64> {
        let scale = self.eps.powi(-self.inner_dim);
        (0..x.len())
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..x.len() {
                    if j != i {
                        let (t, _) = self.arg(&x[i], &x[j], &y[i], &y[j]);
                        if t > 0.0 {
                            acc += w[j] * self.p.value(t);
                        }
                    }
                }
                scale * acc
            })
            .collect()
    }

    fn energy(&self, x: &[Point], y: &[Point], w: &[f64], beta: f64) -> f64 {
        let dens = self.densities(x, y, w);
        self.eps.powf(-beta) * w.iter().zip(&dens).map(|(a, b)| a * b).sum::<f64>()
    }

    fn gradient(&self, x: &[Point], y: &[Point], w: &[f64], beta: f64) -> Vec<Vector3<f64>> {
        let scale = 2.0 * self.eps.powf(-beta) * self.eps.powi(-self.inner_dim) / self.eps;
        (0..x.len())
            .into_par_iter()
            .map(|i| {
                let mut acc = Vector3::zeros();
                for j in 0..x.len() {
                    if j == i {
                        continue;
                    }
                    let (t, rho) = self.arg(&x[i], &x[j], &y[i], &y[j]);
                    if t <= 0.0 || rho == 0.0 {
                        continue;
                    }
                    let c = w[j] * self.p.derivative(t) * self.g.derivative(rho / self.eps) / rho;
                    acc -= (y[i] - y[j]) * c;
                }
                acc * (scale * w[i])
            })
            .collect()
    }
}

fn check_sizes(quad: &SurfaceQuadrature, y: &[Point]) -> Result<()> {
    if y.len() != quad.len() {
        return Err(Error::DimensionMismatch {
            expected: quad.len(),
            got: y.len(),
        });
    }
    Ok(())
}

fn surface_sum(cfg: &PenaltyConfig) -> PairSum {
    PairSum {
        p: cfg.kernel(),
        g: cfg.kernel(),
        eps: cfg.epsilon,
        inner_dim: 2,
    }
}

/// Unweighted surface penalty `E^∂Ω_ε(y)`; multiply by `cfg.weight` for the energy term.
pub fn surface_penalty_energy(quad: &SurfaceQuadrature, y: &[Point], cfg: &PenaltyConfig) -> Result<f64> {
    cfg.validate()?;
    check_sizes(quad, y)?;
    Ok(surface_sum(cfg).energy(&quad.ref_positions, y, &quad.weights, cfg.beta))
}

/// Gradient of [`surface_penalty_energy`] with respect to each deformed NP position.
pub fn surface_penalty_gradient(
    quad: &SurfaceQuadrature,
    y: &[Point],
    cfg: &PenaltyConfig,
) -> Result<Vec<Vector3<f64>>> {
    cfg.validate()?;
    check_sizes(quad, y)?;
    Ok(surface_sum(cfg).gradient(&quad.ref_positions, y, &quad.weights, cfg.beta))
}

/// Per-node inner sums; `ε^-β Σ w_i d_i` recovers the energy.
pub fn surface_penalty_density(quad: &SurfaceQuadrature, y: &[Point], cfg: &PenaltyConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_sizes(quad, y)?;
    Ok(surface_sum(cfg).densities(&quad.ref_positions, y, &quad.weights))
}

/// Bulk density `ε^-dim Σ_j v_j [g(|x_j − x_i|) − g(|y_j − y_i|/ε)]⁺`.
pub fn bulk_penalty_density(
    x: &[Point],
    y: &[Point],
    volumes: &[f64],
    cfg: &PenaltyConfig,
    dim: i32,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if y.len() != x.len() || volumes.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len().min(volumes.len()),
        });
    }
    let sum = PairSum {
        p: Kernel::PositivePart,
        g: cfg.kernel(),
        eps: cfg.epsilon,
        inner_dim: dim,
    };
    Ok(sum.densities(x, y, volumes))
}

fn segment_domain(eps: f64, a: f64, b: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("segment test needs 0 < eps < 1, got {eps}")));
    }
    if !(a >= 0.0 && b >= 0.0) {
        return Err(Error::Domain(format!("shift and gap must be >= 0, got a={a}, b={b}")));
    }
    Ok(())
}

/// Interval of `r` on which the segment integrand is positive.
///
/// Solves `ε²(r² + 1) > b² + (r − a)²`, a quadratic in `r`.
pub fn segment_active_interval(a: f64, b: f64, eps: f64) -> Option<(f64, f64)> {
    let e2 = eps * eps;
    let disc = e2 * a * a + (1.0 - e2) * (e2 - b * b);
    if disc <= 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some(((a - s) / (1.0 - e2), (a + s) / (1.0 - e2)))
}

/// Antiderivative of `(1 − σr)(√(r²+1) − √(b²+(r−a)²)/ε)`.
fn segment_antiderivative(r: f64, sigma: f64, a: f64, b: f64, eps: f64) -> f64 {
    let p = (r * r + 1.0).sqrt();
    let a1 = 0.5 * (r * p + r.asinh());
    let b1 = p * p * p / 3.0;
    let d = r - a;
    let q = (b * b + d * d).sqrt();
    let a2 = if b > 0.0 {
        0.5 * (d * q + b * b * (d / b).asinh())
    } else {
        0.5 * d * d.abs()
    };
    let b2 = q * q * q / 3.0 + a * a2;
    a1 - sigma * b1 - (a2 - sigma * b2) / eps
}

/// The double integral `∫₀¹∫₀¹ [√(r²+1) − √(b²+(r−a)²)/ε]⁺ ds dt`, `r = t − s`,
/// over one ordered pair of unit segments at distance 1, the upper one shifted
/// by `a` and moved to height `b`.
pub fn segment_integral(a: f64, b: f64, eps: f64) -> Result<f64> {
    segment_domain(eps, a, b)?;
    let Some((lo, hi)) = segment_active_interval(a, b, eps) else {
        return Ok(0.0);
    };
    let (lo, hi) = (lo.max(-1.0), hi.min(1.0));
    let mut total = 0.0;
    // The weight 1 − |r| switches form at r = 0.
    for (l, h, sigma) in [(lo, hi.min(0.0), -1.0), (lo.max(0.0), hi, 1.0)] {
        if h > l {
            total += segment_antiderivative(h, sigma, a, b, eps) - segment_antiderivative(l, sigma, a, b, eps);
        }
    }
    Ok(total.max(0.0))
}

/// Exact surface penalty of the two-segment configuration with `P = [·]⁺`, `g = id`.
///
/// Both orderings of the cross pairs contribute, so this is
/// `2 · segment_integral / ε^(β+1)`. Same-segment pairs never activate.
pub fn analytic_segment_penalty(a: f64, b: f64, eps: f64, beta: f64) -> Result<f64> {
    Ok(2.0 * segment_integral(a, b, eps)? * eps.powf(-(beta + 1.0)))
}

/// Node-pair quadrature of the two-segment configuration with `n` nodes per segment.
pub fn discrete_segment_penalty(n: usize, a: f64, b: f64, eps: f64, beta: f64) -> Result<f64> {
    segment_domain(eps, a, b)?;
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 nodes per segment, got {n}")));
    }
    let h = 1.0 / (n - 1) as f64;
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(2 * n);
    let mut w = Vec::with_capacity(2 * n);
    for upper in [false, true] {
        for k in 0..n {
            let t = k as f64 * h;
            let height = if upper { 1.0 } else { 0.0 };
            x.push(Vector3::new(t, height, 0.0));
            y.push(if upper {
                Vector3::new(t + a, b, 0.0)
            } else {
                Vector3::new(t, 0.0, 0.0)
            });
            w.push(if k == 0 || k == n - 1 { 0.5 * h } else { h });
        }
    }
    let sum = PairSum {
        p: Kernel::PositivePart,
        g: Kernel::Identity,
        eps,
        inner_dim: 1,
    };
    Ok(sum.energy(&x, &y, &w, beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Double integral at a = b = 0, ε = 0.5; from a 2D midpoint grid with Richardson extrapolation.
    const V0: f64 = 0.446172451;

    fn cfg(eps: f64) -> PenaltyConfig {
        PenaltyConfig {
            epsilon: eps,
            ..PenaltyConfig::benchmark(0.25, 2e8)
        }
    }

    #[test]
    fn kernel_examples() {
        let a = 0.01;
        assert_eq!(kernel_pg(-1.0, a), (0.0, 0.0));
        let (v, d) = kernel_pg(a, a);
        assert!((v - a / 2.0).abs() < 1e-15 && (d - 1.0).abs() < 1e-12);
        let (v, d) = kernel_pg(a / 2.0, a);
        assert!((v - 3.0 * a / 32.0).abs() < 1e-15);
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kernel_is_c2_at_junctions() {
        let a = 0.01;
        let k = Kernel::Smooth { a };
        let below = |f: &dyn Fn(f64) -> f64, t: f64| f(t - 1e-15);
        let above = |f: &dyn Fn(f64) -> f64, t: f64| f(t + 1e-15);
        for t in [0.0, a] {
            let fs: [&dyn Fn(f64) -> f64; 3] = [
                &|s| k.value(s),
                &|s| k.derivative(s),
                &|s| k.second_derivative(s),
            ];
            for f in fs {
                assert!((below(f, t) - above(f, t)).abs() < 1e-10, "jump at {t}");
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let k = Kernel::Smooth { a: 0.01 };
        for i in 0..200 {
            let t = -0.005 + i as f64 * 1e-4;
            let h = 1e-7;
            let fd = (k.value(t + h) - k.value(t - h)) / (2.0 * h);
            assert!((fd - k.derivative(t)).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn kernel_sandwich(t in -1.0f64..1.0, a in 1e-3f64..0.5) {
            let p = Kernel::Smooth { a }.value(t);
            prop_assert!((t - a / 2.0).max(0.0) <= p + 1e-15);
            prop_assert!(p <= t.max(0.0) + 1e-15);
        }

        #[test]
        fn kernel_monotone(t in 0.0f64..1.0, dt in 1e-6f64..0.1) {
            let k = Kernel::Smooth { a: 0.01 };
            prop_assert!(k.value(t + dt) > k.value(t));
        }
    }

    fn two_points(d: f64) -> SurfaceQuadrature {
        SurfaceQuadrature::new(vec![Point::zeros(), Point::new(d, 0.0, 0.0)], vec![0.3, 0.7]).unwrap()
    }

    #[test]
    fn coincident_pair_value() {
        let quad = two_points(1.0);
        let c = cfg(0.1);
        let y = vec![Point::new(0.2, 0.2, 0.2); 2];
        let e = surface_penalty_energy(&quad, &y, &c).unwrap();
        let k = c.kernel();
        let pair = k.value(k.value(1.0) - k.value(0.0));
        assert!((pair - (1.0 - c.a)).abs() < 1e-15);
        let expected = 2.0 * 0.3 * 0.7 * pair * c.epsilon.powf(-(c.beta + 2.0));
        assert!((e - expected).abs() < 1e-12 * expected);
        let g = surface_penalty_gradient(&quad, &y, &c).unwrap();
        assert!(g.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn identity_has_zero_energy_and_density() {
        let quad = two_points(0.7);
        let y = quad.ref_positions.clone();
        let c = cfg(0.375);
        assert_eq!(surface_penalty_energy(&quad, &y, &c).unwrap(), 0.0);
        assert!(surface_penalty_density(&quad, &y, &c).unwrap().iter().all(|&d| d == 0.0));
        assert!(surface_penalty_gradient(&quad, &y, &c).unwrap().iter().all(|g| g.norm() == 0.0));
    }

    #[test]
    fn swapped_pair_has_opposite_gradients() {
        let quad = SurfaceQuadrature::new(vec![Point::zeros(), Point::new(1.0, 0.0, 0.0)], vec![0.5, 0.5]).unwrap();
        let y = vec![Point::new(0.45, 0.01, 0.0), Point::new(0.55, -0.01, 0.0)];
        let g = surface_penalty_gradient(&quad, &y, &cfg(0.375)).unwrap();
        assert!(g[0].norm() > 0.0);
        assert!((g[0] + g[1]).norm() < 1e-12 * g[0].norm());
    }

    #[test]
    fn eps_must_be_positive() {
        let quad = two_points(1.0);
        let y = quad.ref_positions.clone();
        assert!(matches!(
            surface_penalty_energy(&quad, &y, &cfg(0.0)),
            Err(Error::Config(_))
        ));
    }

    fn random_cloud(n: usize, seed: u64) -> (SurfaceQuadrature, Vec<Point>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let x: Vec<Point> = (0..n)
            .map(|_| Point::new(rng.random::<f64>() * 2.0, rng.random::<f64>() * 2.0, rng.random::<f64>()))
            .collect();
        let w = (0..n).map(|_| 0.01 + rng.random::<f64>() * 0.05).collect();
        let y = x.iter().map(|p| p * 0.2 + Point::new(rng.random(), rng.random(), rng.random()) * 0.05).collect();
        (SurfaceQuadrature::new(x, w).unwrap(), y)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (quad, y) = random_cloud(30, 7);
        let c = cfg(0.375);
        let e0 = surface_penalty_energy(&quad, &y, &c).unwrap();
        assert!(e0 > 0.0);
        let g = surface_penalty_gradient(&quad, &y, &c).unwrap();
        let gnorm = g.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
        let h = 1e-6;
        let mut err = 0.0f64;
        for i in 0..y.len() {
            for k in 0..3 {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[i][k] += h;
                ym[i][k] -= h;
                let fd = (surface_penalty_energy(&quad, &yp, &c).unwrap()
                    - surface_penalty_energy(&quad, &ym, &c).unwrap())
                    / (2.0 * h);
                err = err.max((fd - g[i][k]).abs());
            }
        }
        assert!(err / gnorm < 1e-6, "relative error {}", err / gnorm);
    }

    #[test]
    fn density_reproduces_energy() {
        let (quad, y) = random_cloud(40, 3);
        let c = cfg(0.375);
        let e = surface_penalty_energy(&quad, &y, &c).unwrap();
        let d = surface_penalty_density(&quad, &y, &c).unwrap();
        let from_d: f64 = quad.weights.iter().zip(&d).map(|(w, d)| w * d).sum::<f64>() * c.epsilon.powf(-c.beta);
        assert!((e - from_d).abs() <= 1e-14 * e);
    }

    #[test]
    fn rigid_motion_invariance() {
        let (quad, y) = random_cloud(25, 11);
        let c = cfg(0.375);
        let e = surface_penalty_energy(&quad, &y, &c).unwrap();
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let shift = Point::new(4.0, -2.0, 0.5);
        let y2: Vec<Point> = y.iter().map(|p| rot * p + shift).collect();
        let e2 = surface_penalty_energy(&quad, &y2, &c).unwrap();
        assert!((e - e2).abs() < 1e-12 * e);
    }

    #[test]
    fn permutation_invariance() {
        let (quad, y) = random_cloud(25, 5);
        let c = cfg(0.375);
        let e = surface_penalty_energy(&quad, &y, &c).unwrap();
        let perm: Vec<usize> = (0..25).rev().collect();
        let q2 = SurfaceQuadrature::new(
            perm.iter().map(|&i| quad.ref_positions[i]).collect(),
            perm.iter().map(|&i| quad.weights[i]).collect(),
        )
        .unwrap();
        let y2: Vec<Point> = perm.iter().map(|&i| y[i]).collect();
        let e2 = surface_penalty_energy(&q2, &y2, &c).unwrap();
        assert!((e - e2).abs() < 1e-12 * e);
    }

    #[test]
    fn bulk_density_matches_naive_loop() {
        let (quad, y) = random_cloud(20, 9);
        let x = &quad.ref_positions;
        let c = cfg(0.3);
        let d = bulk_penalty_density(x, &y, &quad.weights, &c, 3).unwrap();
        let g = c.kernel();
        for i in 0..x.len() {
            let mut acc = 0.0;
            for j in 0..x.len() {
                if i != j {
                    let t = g.value((x[j] - x[i]).norm()) - g.value((y[j] - y[i]).norm() / c.epsilon);
                    acc += quad.weights[j] * t.max(0.0);
                }
            }
            acc /= c.epsilon.powi(3);
            assert!((acc - d[i]).abs() <= 1e-14 * acc.abs().max(1e-300));
        }
        let ident = bulk_penalty_density(x, x, &quad.weights, &c, 3).unwrap();
        assert!(ident.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn segment_integral_matches_frozen_value() {
        let v = segment_integral(0.0, 0.0, 0.5).unwrap();
        assert!((v - V0).abs() < 1e-8, "{v}");
    }

    fn gauss_segment(a: f64, b: f64, eps: f64) -> f64 {
        // Composite midpoint in r with the (1 − |r|) weight; slow but independent.
        let n = 400_000;
        let h = 2.0 / n as f64;
        (0..n)
            .map(|k| {
                let r = -1.0 + (k as f64 + 0.5) * h;
                let v = (r * r + 1.0).sqrt() - (b * b + (r - a) * (r - a)).sqrt() / eps;
                (1.0 - r.abs()) * v.max(0.0) * h
            })
            .sum()
    }

    #[test]
    fn segment_integral_with_shift_matches_quadrature() {
        for (a, b, eps) in [(0.3, 0.1, 0.5), (0.6, 0.45, 0.4), (0.0, 0.2, 0.7)] {
            let exact = segment_integral(a, b, eps).unwrap();
            let approx = gauss_segment(a, b, eps);
            assert!((exact - approx).abs() < 1e-8, "{a} {b} {eps}: {exact} vs {approx}");
        }
    }

    #[test]
    fn segment_vanishes_beyond_reach() {
        for n in [2, 17, 128] {
            assert_eq!(discrete_segment_penalty(n, 0.0, 0.5, 0.5, 2.1).unwrap(), 0.0);
            assert_eq!(discrete_segment_penalty(n, 0.0, 0.7, 0.5, 2.1).unwrap(), 0.0);
        }
        assert_eq!(analytic_segment_penalty(0.0, 0.5, 0.5, 2.1).unwrap(), 0.0);
        // A shift lengthens reference distances, so the gap alone no longer decides.
        assert!(analytic_segment_penalty(1.0, 0.55, 0.5, 2.1).unwrap() > 0.0);
    }

    #[test]
    fn segment_discrete_converges() {
        let exact = analytic_segment_penalty(0.0, 0.0, 0.5, 2.1).unwrap();
        let d512 = discrete_segment_penalty(512, 0.0, 0.0, 0.5, 2.1).unwrap();
        assert!((d512 - exact).abs() / exact < 0.01);
        let e64 = (discrete_segment_penalty(64, 0.2, 0.1, 0.5, 2.1).unwrap()
            - analytic_segment_penalty(0.2, 0.1, 0.5, 2.1).unwrap())
        .abs();
        let e256 = (discrete_segment_penalty(256, 0.2, 0.1, 0.5, 2.1).unwrap()
            - analytic_segment_penalty(0.2, 0.1, 0.5, 2.1).unwrap())
        .abs();
        assert!(e256 < 0.25 * e64);
    }

    #[test]
    fn segment_monotone_in_gap() {
        let mut prev = f64::INFINITY;
        for k in 0..=20 {
            let v = segment_integral(0.2, k as f64 * 0.03, 0.5).unwrap();
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn segment_domain_errors() {
        assert!(matches!(segment_integral(0.0, 0.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(discrete_segment_penalty(1, 0.0, 0.0, 0.5, 2.1), Err(Error::Domain(_))));
    }
}
