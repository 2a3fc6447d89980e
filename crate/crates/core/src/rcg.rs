//! Riemannian conjugate gradient on the product manifold.
//!
//! Fletcher-Reeves updates, previous direction carried over by projection
//! onto the new tangent space, and a bracket-and-bisect strong Wolfe line
//! search. Every run records the quantities the convergence analysis
//! relies on (Zoutendijk partial sums and the descent ratio
//! `<grad, D> / ||grad||^2`) so they can be checked after the fact.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::manifold::{
    inner_product, project_tangent, retract, riemannian_gradient, AmbientPair, ProductPoint,
    TangentVector,
};

/// A smooth cost on the product manifold with its Euclidean gradient.
pub trait Objective {
    fn value(&self, x: &ProductPoint) -> f64;

    fn euclidean_gradient(&self, x: &ProductPoint) -> AmbientPair;

    fn value_and_gradient(&self, x: &ProductPoint) -> (f64, AmbientPair) {
        (self.value(x), self.euclidean_gradient(x))
    }
}

/// Adapts a pair of closures into an [`Objective`].
pub struct FnObjective<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&ProductPoint) -> f64,
    G: Fn(&ProductPoint) -> AmbientPair,
{
    fn value(&self, x: &ProductPoint) -> f64 {
        (self.value)(x)
    }

    fn euclidean_gradient(&self, x: &ProductPoint) -> AmbientPair {
        (self.gradient)(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RcgOptions {
    pub max_iters: usize,
    /// Stop once `||x_{i+1} - x_i||^2 <= tol`.
    pub tol: f64,
    /// Stop once the Riemannian gradient norm drops below this.
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub line_search_max_bisections: usize,
    pub initial_step: f64,
    /// `false` forces `beta = 0` (plain Riemannian steepest descent).
    pub conjugate: bool,
}

impl Default for RcgOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-10,
            grad_tol: 1e-6,
            c1: 1e-4,
            c2: 0.1,
            line_search_max_bisections: 50,
            initial_step: 1.0,
            conjugate: true,
        }
    }
}

impl RcgOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 0.5) {
            return Err(Error::Domain(format!(
                "need 0 < c1 < c2 < 1/2, got c1 = {}, c2 = {}",
                self.c1, self.c2
            )));
        }
        if !(self.initial_step > 0.0) || self.max_iters == 0 {
            return Err(Error::Domain(
                "initial_step must be positive and max_iters at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Objective at the start of the iteration.
    pub value: f64,
    pub grad_norm: f64,
    pub alpha: f64,
    pub beta: f64,
    pub step_taken: bool,
    pub restarted: bool,
    pub armijo: bool,
    pub curvature: bool,
    /// `<grad, D>` for the direction actually searched.
    pub slope: f64,
    /// Running sum of `<grad, D>^2 / ||D||^2`.
    pub zoutendijk_sum: f64,
    /// `<grad, D> / ||grad||^2`.
    pub descent_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RcgTrace {
    pub records: Vec<IterationRecord>,
    pub final_value: f64,
    pub final_grad_norm: f64,
    pub converged: bool,
}

impl RcgTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// Checks the runtime monitors: monotone objective, Wolfe flags at every
    /// accepted step, the descent-ratio bracket
    /// `[-1/(1-c2), (2 c2 - 1)/(1-c2)]`, and finite non-decreasing
    /// Zoutendijk partial sums.
    pub fn check_monitors(&self, c2: f64) -> std::result::Result<(), String> {
        let lo = -1.0 / (1.0 - c2);
        let hi = (2.0 * c2 - 1.0) / (1.0 - c2);
        let mut prev_sum = 0.0;
        let mut values: Vec<f64> = self.records.iter().map(|r| r.value).collect();
        values.push(self.final_value);
        for pair in values.windows(2) {
            let slack = 1e-12 * pair[0].abs().max(1.0);
            if pair[1] > pair[0] + slack {
                return Err(format!("objective increased: {} -> {}", pair[0], pair[1]));
            }
        }
        for r in &self.records {
            if !r.step_taken {
                continue;
            }
            if !(r.armijo && r.curvature) {
                return Err(format!("iteration {}: Wolfe flags not set", r.iteration));
            }
            let eps = 1e-9;
            if r.descent_ratio < lo - eps || r.descent_ratio > hi + eps {
                return Err(format!(
                    "iteration {}: descent ratio {} outside [{lo}, {hi}]",
                    r.iteration, r.descent_ratio
                ));
            }
            if !(r.zoutendijk_sum.is_finite() && r.zoutendijk_sum >= prev_sum) {
                return Err(format!(
                    "iteration {}: Zoutendijk sum {} after {}",
                    r.iteration, r.zoutendijk_sum, prev_sum
                ));
            }
            prev_sum = r.zoutendijk_sum;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    pub point: ProductPoint,
    pub value: f64,
    pub gradient: TangentVector,
    pub armijo: bool,
    pub curvature: bool,
    pub evaluations: usize,
}

struct Probe {
    alpha: f64,
    point: ProductPoint,
    value: f64,
    gradient: TangentVector,
    slope: f64,
}

fn probe<O: Objective + ?Sized>(
    obj: &O,
    x: &ProductPoint,
    d: &TangentVector,
    alpha: f64,
) -> Option<Probe> {
    let point = retract(x, d, alpha).ok()?;
    let (value, egrad) = obj.value_and_gradient(&point);
    if !value.is_finite() {
        return None;
    }
    let gradient = riemannian_gradient(&point, &egrad).ok()?;
    // grad lives in the new tangent space, so <grad, P(d)> = <grad, d>.
    let slope = gradient.to_ambient().inner(&d.to_ambient());
    Some(Probe {
        alpha,
        point,
        value,
        gradient,
        slope,
    })
}

/// Finds a step satisfying the strong Wolfe conditions along `d` from `x`.
pub fn strong_wolfe_search<O: Objective + ?Sized>(
    obj: &O,
    x: &ProductPoint,
    d: &TangentVector,
    opts: &RcgOptions,
) -> Result<LineSearchOutcome> {
    let (f0, egrad) = obj.value_and_gradient(x);
    let g0 = riemannian_gradient(x, &egrad)?;
    search_from(obj, x, f0, &g0, d, opts, opts.initial_step)
}

fn search_from<O: Objective + ?Sized>(
    obj: &O,
    x: &ProductPoint,
    f0: f64,
    g0: &TangentVector,
    d: &TangentVector,
    opts: &RcgOptions,
    first_step: f64,
) -> Result<LineSearchOutcome> {
    let slope0 = inner_product(g0, d)?;
    if !(slope0 < 0.0) || d.norm() == 0.0 {
        return Err(Error::InvalidDirection { slope: slope0 });
    }
    let (c1, c2) = (opts.c1, opts.c2);
    let armijo = |p: &Probe| p.value <= f0 + c1 * p.alpha * slope0;
    let curvature = |p: &Probe| p.slope.abs() <= -c2 * slope0;

    let mut evaluations = 0usize;
    let mut best_armijo: Option<f64> = None;
    let accept = |p: Probe, evaluations: usize| LineSearchOutcome {
        alpha: p.alpha,
        point: p.point,
        value: p.value,
        gradient: p.gradient,
        armijo: true,
        curvature: true,
        evaluations,
    };

    // Bracketing phase: grow the step while it is still steeply descending.
    let mut lo_alpha = 0.0;
    let mut lo_value = f0;
    let mut alpha = first_step;
    let mut hi_alpha: Option<f64> = None;
    for _ in 0..=opts.line_search_max_bisections {
        evaluations += 1;
        match probe(obj, x, d, alpha) {
            None => {
                hi_alpha = Some(alpha);
                break;
            }
            Some(p) => {
                if !armijo(&p) || (lo_alpha > 0.0 && p.value >= lo_value) {
                    hi_alpha = Some(alpha);
                    break;
                }
                best_armijo = Some(best_armijo.map_or(p.alpha, |b: f64| b.max(p.alpha)));
                if curvature(&p) {
                    return Ok(accept(p, evaluations));
                }
                if p.slope >= 0.0 {
                    // Overshot the minimizer along d; the bracket is [alpha, lo].
                    hi_alpha = Some(lo_alpha);
                    lo_alpha = p.alpha;
                    lo_value = p.value;
                    break;
                }
                lo_alpha = p.alpha;
                lo_value = p.value;
                alpha *= 2.0;
            }
        }
    }
    let Some(mut hi) = hi_alpha else {
        return Err(Error::LineSearchFailed {
            evaluations,
            best_armijo_alpha: best_armijo,
        });
    };
    let mut lo = lo_alpha;

    // Zoom phase: bisect the bracket, keeping `lo` as the best Armijo point.
    for _ in 0..opts.line_search_max_bisections {
        let alpha = 0.5 * (lo + hi);
        if alpha <= 0.0 || alpha == lo || alpha == hi {
            break;
        }
        evaluations += 1;
        match probe(obj, x, d, alpha) {
            None => hi = alpha,
            Some(p) => {
                if !armijo(&p) || p.value >= lo_value {
                    hi = alpha;
                } else {
                    best_armijo = Some(best_armijo.map_or(p.alpha, |b: f64| b.max(p.alpha)));
                    if curvature(&p) {
                        return Ok(accept(p, evaluations));
                    }
                    if p.slope * (hi - lo) >= 0.0 {
                        hi = lo;
                    }
                    lo = alpha;
                    lo_value = p.value;
                }
            }
        }
    }
    Err(Error::LineSearchFailed {
        evaluations,
        best_armijo_alpha: best_armijo,
    })
}

/// Minimizes `obj` over the product manifold starting from `x0`.
pub fn rcg_minimize<O: Objective + ?Sized>(
    obj: &O,
    x0: &ProductPoint,
    opts: &RcgOptions,
) -> Result<(ProductPoint, RcgTrace)> {
    opts.validate()?;
    let mut trace = RcgTrace::default();
    let mut x = x0.clone();
    let (mut f, egrad) = obj.value_and_gradient(&x);
    let mut grad = riemannian_gradient(&x, &egrad)?;
    let mut prev_dir: Option<TangentVector> = None;
    let mut prev_grad_sq = 0.0;
    let mut zoutendijk = 0.0;
    let mut prev_alpha = opts.initial_step;
    let mut prev_slope = 0.0;

    for iteration in 1..=opts.max_iters {
        let grad_sq = grad.norm_squared();
        let grad_norm = grad_sq.sqrt();
        if grad_norm < opts.grad_tol {
            trace.records.push(IterationRecord {
                iteration,
                value: f,
                grad_norm,
                alpha: 0.0,
                beta: 0.0,
                step_taken: false,
                restarted: false,
                armijo: false,
                curvature: false,
                slope: 0.0,
                zoutendijk_sum: zoutendijk,
                descent_ratio: f64::NAN,
            });
            trace.converged = true;
            break;
        }

        let steepest = grad.scaled(-1.0);
        let (mut dir, mut beta, mut restarted) = match (&prev_dir, opts.conjugate) {
            (Some(prev), true) if prev_grad_sq > 0.0 => {
                let beta = grad_sq / prev_grad_sq;
                let carried = project_tangent(&x, &prev.to_ambient())?;
                (steepest.add_scaled(beta, &carried)?, beta, false)
            }
            _ => (steepest.clone(), 0.0, false),
        };
        let mut slope = inner_product(&grad, &dir)?;
        if !(slope < 0.0) {
            dir = steepest.clone();
            beta = 0.0;
            restarted = true;
            slope = -grad_sq;
        }

        // Scale the first trial so the predicted decrease matches the last step.
        let first_step = if iteration == 1 || prev_slope == 0.0 {
            opts.initial_step
        } else {
            (prev_alpha * prev_slope / slope).clamp(1e-12, 1e12)
        };

        let outcome = match search_from(obj, &x, f, &grad, &dir, opts, first_step) {
            Ok(o) => o,
            Err(Error::LineSearchFailed { .. }) if !(restarted || beta == 0.0) => {
                dir = steepest.clone();
                beta = 0.0;
                restarted = true;
                slope = -grad_sq;
                match search_from(obj, &x, f, &grad, &dir, opts, opts.initial_step) {
                    Ok(o) => o,
                    Err(Error::LineSearchFailed { .. }) => {
                        return Err(stalled(iteration, x, trace, f, grad_norm))
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(Error::LineSearchFailed { .. }) => {
                return Err(stalled(iteration, x, trace, f, grad_norm))
            }
            Err(e) => return Err(e),
        };

        zoutendijk += slope * slope / dir.norm_squared();
        trace.records.push(IterationRecord {
            iteration,
            value: f,
            grad_norm,
            alpha: outcome.alpha,
            beta,
            step_taken: true,
            restarted,
            armijo: outcome.armijo,
            curvature: outcome.curvature,
            slope,
            zoutendijk_sum: zoutendijk,
            descent_ratio: slope / grad_sq,
        });

        let moved = outcome.point.distance_sq(&x);
        prev_alpha = outcome.alpha;
        prev_slope = slope;
        prev_grad_sq = grad_sq;
        prev_dir = Some(dir);
        x = outcome.point;
        f = outcome.value;
        grad = outcome.gradient;

        if moved <= opts.tol || grad.norm() < opts.grad_tol {
            trace.converged = true;
            break;
        }
    }
    trace.final_value = f;
    trace.final_grad_norm = grad.norm();
    Ok((x, trace))
}

fn stalled(iteration: usize, x: ProductPoint, mut trace: RcgTrace, f: f64, g: f64) -> Error {
    trace.final_value = f;
    trace.final_grad_norm = g;
    Error::SolverStalled {
        iteration,
        point: Box::new(x),
        trace: Box::new(trace),
    }
}

/// Finite-difference gradient check along random unit tangent directions.
///
/// Compares `[L(R(x, h v)) - L(R(x, -h v))] / 2h` with `<grad L(x), v>` for
/// `h = 1e-5` and returns the worst relative discrepancy.
pub fn check_gradient<O: Objective + ?Sized>(
    obj: &O,
    x: &ProductPoint,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grad = riemannian_gradient(x, &obj.euclidean_gradient(x))?;
    let (n, m, k) = x.shape();
    let mut worst: f64 = 0.0;
    for _ in 0..trials.max(1) {
        let raw = AmbientPair {
            theta: nalgebra::DVector::from_fn(n, |_, _| crate::channel::circular_gaussian(&mut rng)),
            w: nalgebra::DMatrix::from_fn(m, k, |_, _| crate::channel::circular_gaussian(&mut rng)),
        };
        let v = project_tangent(x, &raw)?;
        let norm = v.norm();
        if norm == 0.0 {
            continue;
        }
        let v = v.scaled(1.0 / norm);
        let plus = obj.value(&retract(x, &v, H)?);
        let minus = obj.value(&retract(x, &v, -H)?);
        let fd = (plus - minus) / (2.0 * H);
        let analytic = inner_product(&grad, &v)?;
        let scale = fd.abs().max(analytic.abs());
        if scale > 0.0 {
            worst = worst.max((fd - analytic).abs() / scale);
        }
    }
    Ok(worst)
}
