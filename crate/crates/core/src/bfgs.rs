//! Dense BFGS with a strong-Wolfe line search.

use crate::error::{Error, Result};
use crate::sparse::dot;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    /// Stop when `‖g‖∞ ≤ gtol · max(1, |f|)`.
    pub gtol: f64,
    pub max_iter: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            gtol: 1e-6,
            max_iter: 500,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

impl BfgsOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Config(format!(
                "Wolfe constants need 0 < c1 < c2 < 1, got c1={}, c2={}",
                self.c1, self.c2
            )));
        }
        if !(self.gtol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("gtol must be positive and max_iter nonzero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterLog {
    pub iter: usize,
    pub f: f64,
    pub grad_inf: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_inf: f64,
    pub iterations: usize,
    pub converged: bool,
    pub message: String,
    pub history: Vec<IterLog>,
}

fn inf_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn axpy(x: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(x, d)| x + a * d).collect()
}

struct Probe {
    alpha: f64,
    f: f64,
    /// Directional derivative.
    dphi: f64,
    g: Vec<f64>,
}

/// Minimizer of the cubic through two points with slopes, kept inside `[lo, hi]` margins.
fn cubic_min(a: &Probe, b: &Probe) -> f64 {
    let (x0, x1) = (a.alpha, b.alpha);
    let d1 = a.dphi + b.dphi - 3.0 * (a.f - b.f) / (x0 - x1);
    let disc = d1 * d1 - a.dphi * b.dphi;
    let (lo, hi) = (x0.min(x1), x0.max(x1));
    let bisect = 0.5 * (x0 + x1);
    if disc < 0.0 {
        return bisect;
    }
    let d2 = (x1 - x0).signum() * disc.sqrt();
    let denom = b.dphi - a.dphi + 2.0 * d2;
    if denom == 0.0 {
        return bisect;
    }
    let t = x1 - (x1 - x0) * (b.dphi + d2 - d1) / denom;
    let margin = 0.1 * (hi - lo);
    if !t.is_finite() || t < lo + margin || t > hi - margin {
        bisect
    } else {
        t
    }
}

/// Minimizes `fg` (value and gradient) from `x0`.
pub fn minimize<F>(fg: F, x0: Vec<f64>, opts: &BfgsOptions, log: impl FnMut(&IterLog)) -> Result<BfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    minimize_limited(fg, |_| f64::INFINITY, x0, opts, log)
}

/// As [`minimize`], with `max_step(d)` bounding the step length along each search direction `d`.
pub fn minimize_limited<F, M>(
    mut fg: F,
    max_step: M,
    x0: Vec<f64>,
    opts: &BfgsOptions,
    mut log: impl FnMut(&IterLog),
) -> Result<BfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    M: Fn(&[f64]) -> f64,
{
    opts.validate()?;
    let n = x0.len();
    let mut x = x0;
    let (mut f, mut g) = fg(&x)?;
    if !f.is_finite() {
        return Err(Error::NonFinite(format!("initial objective is {f}")));
    }
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    let mut history = Vec::new();
    let first = IterLog {
        iter: 0,
        f,
        grad_inf: inf_norm(&g),
        step: 0.0,
    };
    log(&first);
    history.push(first);

    let done = |f: f64, g: &[f64]| inf_norm(g) <= opts.gtol * f.abs().max(1.0);
    let mut iterations = 0;
    let mut message = String::from("maximum iterations reached");
    let mut converged = done(f, &g);
    if converged {
        message = "gradient tolerance met".into();
    }
    while !converged && iterations < opts.max_iter {
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        let mut dphi0 = dot(&g, &d);
        if !(dphi0 < 0.0) {
            // Curvature information went bad; restart from steepest descent.
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
            d = g.iter().map(|v| -v).collect();
            dphi0 = -dot(&g, &g);
        }
        let alpha_max = max_step(&d);
        let Some(probe) = strong_wolfe(&mut fg, &x, f, dphi0, &d, alpha_max, opts)? else {
            message = "line search failed".into();
            break;
        };
        iterations += 1;
        let s: Vec<f64> = d.iter().map(|v| probe.alpha * v).collect();
        let y: Vec<f64> = probe.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        x = axpy(&x, probe.alpha, &d);
        f = probe.f;
        g = probe.g;
        let entry = IterLog {
            iter: iterations,
            f,
            grad_inf: inf_norm(&g),
            step: probe.alpha,
        };
        log(&entry);
        history.push(entry);

        let sy = dot(&s, &y);
        if sy > 1e-14 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            bfgs_update(&mut h, &s, &y, sy);
        }
        if done(f, &g) {
            converged = true;
            message = "gradient tolerance met".into();
        }
    }
    Ok(BfgsResult {
        grad_inf: inf_norm(&g),
        x,
        f,
        iterations,
        converged,
        message,
        history,
    })
}

/// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ` with `ρ = 1 / sᵀy`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    let coef = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

fn strong_wolfe<F>(
    fg: &mut F,
    x: &[f64],
    f0: f64,
    dphi0: f64,
    d: &[f64],
    alpha_max: f64,
    opts: &BfgsOptions,
) -> Result<Option<Probe>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut eval = |alpha: f64| -> Result<Probe> {
        let (f, g) = fg(&axpy(x, alpha, d))?;
        let dphi = dot(&g, d);
        Ok(Probe { alpha, f, dphi, g })
    };
    let armijo = |p: &Probe| p.f <= f0 + opts.c1 * p.alpha * dphi0;
    let curvature = |p: &Probe| p.dphi.abs() <= -opts.c2 * dphi0;

    let zero = Probe {
        alpha: 0.0,
        f: f0,
        dphi: dphi0,
        g: Vec::new(),
    };
    let mut prev = zero;
    let mut alpha = alpha_max.min(1.0);
    for k in 0..opts.max_line_search {
        let p = eval(alpha)?;
        if !p.f.is_finite() {
            // Step overshot into a region the objective cannot handle; shrink.
            alpha = 0.5 * (prev.alpha + alpha);
            continue;
        }
        if !armijo(&p) || (k > 0 && p.f >= prev.f) {
            return zoom(&mut eval, prev, p, f0, dphi0, opts);
        }
        if curvature(&p) {
            return Ok(Some(p));
        }
        if p.dphi >= 0.0 {
            return zoom(&mut eval, p, prev, f0, dphi0, opts);
        }
        if alpha >= alpha_max {
            // Still descending at the cap; take the capped step.
            return Ok(Some(p));
        }
        prev = p;
        alpha = (2.0 * alpha).min(alpha_max);
    }
    Ok(None)
}

fn zoom<E>(eval: &mut E, mut lo: Probe, mut hi: Probe, f0: f64, dphi0: f64, opts: &BfgsOptions) -> Result<Option<Probe>>
where
    E: FnMut(f64) -> Result<Probe>,
{
    for _ in 0..opts.max_line_search {
        let alpha = cubic_min(&lo, &hi);
        if (hi.alpha - lo.alpha).abs() <= f64::EPSILON * lo.alpha.abs().max(1.0) {
            break;
        }
        let p = eval(alpha)?;
        if !p.f.is_finite() {
            return Err(Error::NonFinite(format!("objective is {} at step {alpha}", p.f)));
        }
        if p.f > f0 + opts.c1 * alpha * dphi0 || p.f >= lo.f {
            hi = p;
        } else {
            if p.dphi.abs() <= -opts.c2 * dphi0 {
                return Ok(Some(p));
            }
            if p.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
    // Accept the best sufficient-decrease point found, if any.
    Ok((lo.alpha > 0.0).then_some(lo))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let opts = BfgsOptions {
            gtol: 1e-10,
            ..Default::default()
        };
        let r = minimize(rosenbrock, vec![-1.2, 1.0], &opts, |_| {}).unwrap();
        assert!(r.converged, "{}", r.message);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
        assert!(r.history.windows(2).all(|w| w[1].f <= w[0].f));
    }

    #[test]
    fn identity_quadratic_takes_one_step() {
        let c = vec![3.0, -1.0, 0.5];
        let fg = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let f = 0.5 * dot(x, x) - dot(&c, x);
            Ok((f, x.iter().zip(&c).map(|(x, c)| x - c).collect()))
        };
        let r = minimize(fg, vec![0.0; 3], &BfgsOptions::default(), |_| {}).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert!(r.x.iter().zip(&c).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn ill_conditioned_quadratic() {
        let diag: Vec<f64> = (0..20).map(|i| 10f64.powf(i as f64 / 5.0)).collect();
        let fg = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let f = x.iter().zip(&diag).map(|(x, d)| 0.5 * d * x * x - x).sum();
            Ok((f, x.iter().zip(&diag).map(|(x, d)| d * x - 1.0).collect()))
        };
        let opts = BfgsOptions {
            gtol: 1e-9,
            ..Default::default()
        };
        let r = minimize(fg, vec![0.0; 20], &opts, |_| {}).unwrap();
        assert!(r.converged);
        for (x, d) in r.x.iter().zip(&diag) {
            assert!((x - 1.0 / d).abs() < 1e-6);
        }
    }

    #[test]
    fn step_cap_is_respected() {
        let fg = |x: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((0.5 * (x[0] - 10.0).powi(2), vec![x[0] - 10.0])) };
        let mut steps = Vec::new();
        let r = minimize_limited(fg, |d| 1.0 / d[0].abs(), vec![0.0], &BfgsOptions::default(), |l| {
            steps.push(l.step)
        })
        .unwrap();
        assert!(r.converged);
        assert!(r.iterations >= 10);
        assert!(r.history.windows(2).all(|w| w[1].f <= w[0].f));
        assert!((r.x[0] - 10.0).abs() < 1e-6);
    }

    #[test]
    fn bad_wolfe_constants_rejected() {
        let opts = BfgsOptions {
            c1: 0.9,
            c2: 0.1,
            ..Default::default()
        };
        assert!(matches!(minimize(rosenbrock, vec![0.0, 0.0], &opts, |_| {}), Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_start_aborts() {
        let fg = |_: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((f64::NAN, vec![0.0])) };
        assert!(matches!(
            minimize(fg, vec![0.0], &BfgsOptions::default(), |_| {}),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn logs_every_iteration() {
        let mut seen = Vec::new();
        let r = minimize(rosenbrock, vec![-1.2, 1.0], &BfgsOptions::default(), |l| seen.push(l.iter)).unwrap();
        assert_eq!(seen.len(), r.iterations + 1);
    }
}
