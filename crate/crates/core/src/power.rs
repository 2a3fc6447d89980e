//! Joint phase/beamformer optimization and uplink power control.
//!
//! With `h_j = d_j + G diag(u_j) theta` and `A_jk = |w_k^H h_j|^2`, device
//! `k` meets its rate target iff
//! `p_k A_kk / gamma - sum_{j != k} p_j A_jk >= sigma^2`, `gamma = 2^R_min - 1`.
//! The outer loop alternates a Lagrangian relaxation of these constraints,
//! minimized over `(theta, W)` by RCG, with the exact minimal-power solve.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{effective_channel, ChannelSet, SystemConfig};
use crate::error::{Error, Result};
use crate::manifold::{AmbientPair, BeamMatrix, PhaseVector, ProductPoint};
use crate::rcg::{rcg_minimize, Objective, RcgOptions, RcgTrace};

/// Rate target, noise and power budget shared by every device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Qos {
    pub rate_min: f64,
    pub noise_power: f64,
    pub p_max: f64,
}

impl Qos {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        Self {
            rate_min: cfg.rate_min,
            noise_power: cfg.noise_power,
            p_max: cfg.p_max,
        }
    }

    pub fn sinr_target(&self) -> f64 {
        self.rate_min.exp2() - 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerVector(DVector<f64>);

impl PowerVector {
    pub fn new(p: DVector<f64>, p_max: f64) -> Result<Self> {
        if let Some((k, v)) = p.iter().enumerate().find(|(_, &v)| !(0.0..=p_max).contains(&v)) {
            return Err(Error::Domain(format!("p[{k}] = {v} outside [0, {p_max}]")));
        }
        Ok(Self(p))
    }

    pub fn uniform(k: usize, value: f64) -> Self {
        Self(DVector::from_element(k, value))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers(DVector<f64>);

impl Multipliers {
    pub fn new(lambda: DVector<f64>) -> Result<Self> {
        if let Some((k, v)) = lambda.iter().enumerate().find(|(_, &v)| !(v >= 0.0)) {
            return Err(Error::Domain(format!("lambda[{k}] = {v} is negative")));
        }
        Ok(Self(lambda))
    }

    pub fn ones(k: usize) -> Self {
        Self(DVector::from_element(k, 1.0))
    }

    pub fn zeros(k: usize) -> Self {
        Self(DVector::zeros(k))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

fn check_index(index: usize, len: usize) -> Result<()> {
    if index >= len {
        return Err(Error::IndexOutOfRange { index, len });
    }
    Ok(())
}

fn check_shapes(ch: &ChannelSet, x: &ProductPoint) -> Result<()> {
    let (n, m, k) = x.shape();
    if (n, m, k) != (ch.n(), ch.m(), ch.k()) {
        return Err(Error::Dimension(format!(
            "point has (N, M, K) = ({n}, {m}, {k}), channels have ({}, {}, {})",
            ch.n(),
            ch.m(),
            ch.k()
        )));
    }
    Ok(())
}

/// `A_jk = |w_k^H h_j|^2`.
pub fn coupling_gain(
    ch: &ChannelSet,
    theta: &PhaseVector,
    w: &BeamMatrix,
    j: usize,
    k: usize,
) -> Result<f64> {
    check_index(j, ch.k())?;
    check_index(k, w.ncols())?;
    let h = effective_channel(ch, theta.as_vector(), j)?;
    if h.len() != w.nrows() {
        return Err(Error::Dimension(format!(
            "beamformer has {} rows, channel has {}",
            w.nrows(),
            h.len()
        )));
    }
    Ok(w.as_matrix().column(k).dotc(&h).norm_sqr())
}

fn effective_all(ch: &ChannelSet, theta: &DVector<Complex64>) -> Vec<DVector<Complex64>> {
    (0..ch.k())
        .map(|j| &ch.direct[j] + &ch.ris_bs * theta.component_mul(&ch.device_ris[j]))
        .collect()
}

/// Inner products `s[(j, k)] = w_k^H h_j`.
fn projections(h: &[DVector<Complex64>], w: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    DMatrix::from_fn(h.len(), w.ncols(), |j, k| w.column(k).dotc(&h[j]))
}

/// All coupling gains at once: entry `(j, k)` is `A_jk`.
pub fn coupling_gains(ch: &ChannelSet, x: &ProductPoint) -> Result<DMatrix<f64>> {
    check_shapes(ch, x)?;
    let h = effective_all(ch, x.theta.as_vector());
    Ok(projections(&h, x.w.as_matrix()).map(|s| s.norm_sqr()))
}

fn rate_from_gains(a: &DMatrix<f64>, p: &DVector<f64>, k: usize, noise: f64) -> f64 {
    let interference: f64 = (0..a.nrows()).filter(|&j| j != k).map(|j| p[j] * a[(j, k)]).sum();
    (1.0 + p[k] * a[(k, k)] / (interference + noise)).log2()
}

/// `log2(1 + p_k A_kk / (sum_{j != k} p_j A_jk + sigma^2))`.
pub fn achievable_rate(
    ch: &ChannelSet,
    x: &ProductPoint,
    p: &PowerVector,
    k: usize,
    noise_power: f64,
) -> Result<f64> {
    check_index(k, ch.k())?;
    if p.len() != ch.k() {
        return Err(Error::Dimension(format!("{} powers for {} devices", p.len(), ch.k())));
    }
    let a = coupling_gains(ch, x)?;
    Ok(rate_from_gains(&a, p.as_vector(), k, noise_power))
}

/// Per-device constraint values
/// `g_k = -p_k A_kk / gamma + sum_{j != k} p_j A_jk + sigma^2`
/// (non-positive when the rate target is met).
pub fn constraint_values(a: &DMatrix<f64>, p: &DVector<f64>, qos: &Qos) -> DVector<f64> {
    let gamma = qos.sinr_target();
    DVector::from_fn(a.nrows(), |k, _| {
        let mut g = -p[k] * a[(k, k)] / gamma + qos.noise_power;
        for j in (0..a.nrows()).filter(|&j| j != k) {
            g += p[j] * a[(j, k)];
        }
        g
    })
}

/// `L(theta, W, lambda) = sum_k lambda_k g_k`.
pub fn lagrangian_value(
    ch: &ChannelSet,
    x: &ProductPoint,
    p: &PowerVector,
    lambda: &Multipliers,
    qos: &Qos,
) -> Result<f64> {
    let a = coupling_gains(ch, x)?;
    Ok(constraint_values(&a, p.as_vector(), qos).dot(lambda.as_vector()))
}

/// Weights `c[(j, k)]` with `L = sum_k lambda_k (sum_j c_jk A_jk + sigma^2)`.
fn lagrangian_weights(p: &DVector<f64>, lambda: &DVector<f64>, gamma: f64) -> DMatrix<f64> {
    let k = p.len();
    DMatrix::from_fn(k, k, |j, kk| {
        let c = if j == kk { -p[j] / gamma } else { p[j] };
        lambda[kk] * c
    })
}

fn gradients(
    ch: &ChannelSet,
    x: &ProductPoint,
    weights: &DMatrix<f64>,
) -> (DVector<Complex64>, DMatrix<Complex64>) {
    let w = x.w.as_matrix();
    let h = effective_all(ch, x.theta.as_vector());
    let s = projections(&h, w);
    let kk = ch.k();

    let mut g_theta = DVector::zeros(ch.n());
    let mut g_w = DMatrix::zeros(ch.m(), kk);
    for j in 0..kk {
        let mut v = DVector::<Complex64>::zeros(ch.m());
        for k in 0..kk {
            let c = weights[(j, k)];
            if c != 0.0 {
                v.axpy(s[(j, k)] * c, &w.column(k), Complex64::new(1.0, 0.0));
                g_w.column_mut(k)
                    .axpy(s[(j, k)].conj() * (2.0 * c), &h[j], Complex64::new(1.0, 0.0));
            }
        }
        let back = ch.ris_bs.ad_mul(&v);
        g_theta += ch.device_ris[j].map(|u| u.conj()).component_mul(&back) * Complex64::new(2.0, 0.0);
    }
    (g_theta, g_w)
}

/// Euclidean gradient of the Lagrangian in `theta` (real metric `Re{a^H b}`).
pub fn euclidean_grad_theta(
    ch: &ChannelSet,
    x: &ProductPoint,
    p: &PowerVector,
    lambda: &Multipliers,
    qos: &Qos,
) -> Result<DVector<Complex64>> {
    check_shapes(ch, x)?;
    let weights = lagrangian_weights(p.as_vector(), lambda.as_vector(), qos.sinr_target());
    Ok(gradients(ch, x, &weights).0)
}

/// Euclidean gradient of the Lagrangian in `W`.
pub fn euclidean_grad_w(
    ch: &ChannelSet,
    x: &ProductPoint,
    p: &PowerVector,
    lambda: &Multipliers,
    qos: &Qos,
) -> Result<DMatrix<Complex64>> {
    check_shapes(ch, x)?;
    let weights = lagrangian_weights(p.as_vector(), lambda.as_vector(), qos.sinr_target());
    Ok(gradients(ch, x, &weights).1)
}

/// The Lagrangian at fixed `(p, lambda)` as an RCG objective, multiplied by
/// `scale` (the solver default is `1 / sigma^2`).
pub struct LagrangianObjective<'a> {
    ch: &'a ChannelSet,
    p: DVector<f64>,
    lambda: DVector<f64>,
    weights: DMatrix<f64>,
    qos: Qos,
    scale: f64,
}

impl<'a> LagrangianObjective<'a> {
    pub fn new(
        ch: &'a ChannelSet,
        p: &PowerVector,
        lambda: &Multipliers,
        qos: &Qos,
        scale: f64,
    ) -> Result<Self> {
        if p.len() != ch.k() || lambda.as_vector().len() != ch.k() {
            return Err(Error::Dimension(format!(
                "{} powers and {} multipliers for {} devices",
                p.len(),
                lambda.as_vector().len(),
                ch.k()
            )));
        }
        Ok(Self {
            ch,
            p: p.as_vector().clone(),
            lambda: lambda.as_vector().clone(),
            weights: lagrangian_weights(p.as_vector(), lambda.as_vector(), qos.sinr_target()),
            qos: *qos,
            scale,
        })
    }
}

impl Objective for LagrangianObjective<'_> {
    fn value(&self, x: &ProductPoint) -> f64 {
        let h = effective_all(self.ch, x.theta.as_vector());
        let a = projections(&h, x.w.as_matrix()).map(|s| s.norm_sqr());
        self.scale * constraint_values(&a, &self.p, &self.qos).dot(&self.lambda)
    }

    fn euclidean_gradient(&self, x: &ProductPoint) -> AmbientPair {
        let (theta, w) = gradients(self.ch, x, &self.weights);
        AmbientPair {
            theta: theta * Complex64::from(self.scale),
            w: w * Complex64::from(self.scale),
        }
    }
}

/// `lambda' = max(lambda + step * g, 0)` with `g` the constraint values.
pub fn subgradient_step(
    ch: &ChannelSet,
    x: &ProductPoint,
    p: &PowerVector,
    lambda: &Multipliers,
    step: f64,
    qos: &Qos,
) -> Result<Multipliers> {
    if !(step > 0.0) {
        return Err(Error::Domain(format!("subgradient step {step} must be positive")));
    }
    let a = coupling_gains(ch, x)?;
    let g = constraint_values(&a, p.as_vector(), qos);
    Ok(project_multipliers(lambda.as_vector(), &g, step))
}

fn project_multipliers(lambda: &DVector<f64>, g: &DVector<f64>, step: f64) -> Multipliers {
    Multipliers(lambda.zip_map(g, |l, gk| (l + step * gk).max(0.0)))
}

/// Matched-filter receivers `w_k = h_k / ||h_k||`; a zero channel gets `e_1`.
pub fn mrt_beams(ch: &ChannelSet, theta: &PhaseVector) -> Result<BeamMatrix> {
    if theta.len() != ch.n() {
        return Err(Error::Dimension(format!(
            "theta has length {}, RIS has {} elements",
            theta.len(),
            ch.n()
        )));
    }
    let h = effective_all(ch, theta.as_vector());
    let mut w = DMatrix::zeros(ch.m(), ch.k());
    for (k, hk) in h.iter().enumerate() {
        let norm = hk.norm();
        if norm > 0.0 {
            w.set_column(k, &(hk / Complex64::from(norm)));
        } else {
            w[(0, k)] = Complex64::new(1.0, 0.0);
        }
    }
    BeamMatrix::normalized(w)
}

/// Minimal powers meeting every rate target with equality at fixed
/// `(theta, W)`: solves `(I - F) p = u` with `F_kj = gamma A_jk / A_kk`
/// and `u_k = gamma sigma^2 / A_kk`.
pub fn min_power(ch: &ChannelSet, x: &ProductPoint, qos: &Qos) -> Result<PowerVector> {
    let a = coupling_gains(ch, x)?;
    min_power_from_gains(&a, qos)
}

/// [`min_power`] on a precomputed gain matrix (`a[(j, k)] = A_jk`).
pub fn min_power_from_gains(a: &DMatrix<f64>, qos: &Qos) -> Result<PowerVector> {
    let p = uncapped_power(a, qos)?;
    if let Some((kk, v)) = p.iter().enumerate().find(|(_, &v)| v > qos.p_max) {
        return Err(Error::Infeasible(format!(
            "device {kk} needs {v:e} W, budget is {} W",
            qos.p_max
        )));
    }
    PowerVector::new(p, qos.p_max)
}

fn uncapped_power(a: &DMatrix<f64>, qos: &Qos) -> Result<DVector<f64>> {
    let k = a.nrows();
    if a.ncols() != k {
        return Err(Error::Dimension(format!("gain matrix is {}x{}", k, a.ncols())));
    }
    let gamma = qos.sinr_target();
    if let Some(kk) = (0..k).find(|&kk| !(a[(kk, kk)] > 0.0)) {
        return Err(Error::Infeasible(format!("device {kk} has zero effective gain")));
    }
    let system = DMatrix::from_fn(k, k, |r, c| {
        if r == c {
            1.0
        } else {
            -gamma * a[(c, r)] / a[(r, r)]
        }
    });
    let rhs = DVector::from_fn(k, |r, _| gamma * qos.noise_power / a[(r, r)]);
    let p = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Infeasible("interference system is singular".into()))?;
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Infeasible(
            "rate targets cannot be met at any power (interference too strong)".into(),
        ));
    }
    Ok(p)
}

/// Total power needed at `(theta, W)` ignoring the per-device budget;
/// infinite when no finite power meets the targets.
pub fn required_power(ch: &ChannelSet, x: &ProductPoint, qos: &Qos) -> Result<f64> {
    match uncapped_power(&coupling_gains(ch, x)?, qos) {
        Ok(p) => Ok(p.sum()),
        Err(Error::Infeasible(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoOptions {
    pub rcg: RcgOptions,
    pub outer_max_iters: usize,
    /// Relative total-power change that ends the outer loop.
    pub outer_tol: f64,
    pub lambda_max_iters: usize,
    /// Relative multiplier change that ends the multiplier loop.
    pub lambda_tol: f64,
    /// Squared point movement that ends the multiplier loop.
    pub point_tol: f64,
    /// Extra random restarts when no feasible allocation is found.
    pub restarts: usize,
    /// Start every multiplier loop from all-ones instead of the previous
    /// multipliers.
    pub reset_multipliers: bool,
    /// Objective scale; `None` uses `1 / sigma^2`.
    pub objective_scale: Option<f64>,
}

impl Default for JoOptions {
    fn default() -> Self {
        Self {
            rcg: RcgOptions::default(),
            outer_max_iters: 50,
            outer_tol: 1e-4,
            lambda_max_iters: 100,
            lambda_tol: 1e-3,
            point_tol: 1e-8,
            restarts: 3,
            reset_multipliers: false,
            objective_scale: None,
        }
    }
}

impl JoOptions {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        Self {
            rcg: RcgOptions {
                max_iters: cfg.rcg_max_iters,
                tol: cfg.rcg_tol,
                ..RcgOptions::default()
            },
            outer_max_iters: cfg.outer_max_iters,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseBeamOutcome {
    /// Last iterate.
    pub point: ProductPoint,
    pub multipliers: Multipliers,
    pub traces: Vec<RcgTrace>,
    /// Iterate with the lowest minimal total power, if any was feasible.
    pub best: Option<(ProductPoint, PowerVector)>,
}

fn run_rcg<O: Objective>(obj: &O, x: &ProductPoint, opts: &RcgOptions) -> Result<(ProductPoint, RcgTrace)> {
    match rcg_minimize(obj, x, opts) {
        Err(Error::SolverStalled { point, trace, .. }) => Ok((*point, *trace)),
        other => other,
    }
}

/// Alternates RCG over `(theta, W)` at fixed multipliers with projected
/// subgradient steps on the multipliers (`eta_i = eta_0 / sqrt(i)`).
pub fn optimize_phase_beam(
    ch: &ChannelSet,
    p: &PowerVector,
    lambda0: &Multipliers,
    x0: &ProductPoint,
    qos: &Qos,
    opts: &JoOptions,
) -> Result<PhaseBeamOutcome> {
    check_shapes(ch, x0)?;
    let scale = opts.objective_scale.unwrap_or(1.0 / qos.noise_power);
    let mut lambda = lambda0.clone();
    let mut x = x0.clone();
    let mut traces = Vec::new();
    let mut eta0 = None;
    let mut best: Option<(ProductPoint, PowerVector)> = None;

    for i in 1..=opts.lambda_max_iters.max(1) {
        let obj = LagrangianObjective::new(ch, p, &lambda, qos, scale)?;
        let (next, trace) = run_rcg(&obj, &x, &opts.rcg)?;
        traces.push(trace);
        let moved = next.distance_sq(&x);
        x = next;
        if lambda.is_zero() {
            break;
        }

        let a = coupling_gains(ch, &x)?;
        if let Ok(cand) = min_power_from_gains(&a, qos) {
            if best.as_ref().is_none_or(|(_, b)| cand.total() < b.total()) {
                best = Some((x.clone(), cand));
            }
        }
        let g = constraint_values(&a, p.as_vector(), qos);
        let eta0 = *eta0.get_or_insert_with(|| {
            let gmax = g.amax();
            if gmax > 0.0 {
                1.0 / gmax
            } else {
                1.0
            }
        });
        let updated = project_multipliers(lambda.as_vector(), &g, eta0 / (i as f64).sqrt());
        let change = (updated.as_vector() - lambda.as_vector()).norm()
            / lambda.as_vector().norm().max(1.0);
        lambda = updated;
        if change < opts.lambda_tol && moved < opts.point_tol {
            break;
        }
    }
    Ok(PhaseBeamOutcome {
        point: x,
        multipliers: lambda,
        traces,
        best,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub powers: PowerVector,
    pub point: ProductPoint,
    pub total_power: f64,
    pub outer_iterations: usize,
    pub inner_traces: Vec<RcgTrace>,
    /// Total power after each outer iteration.
    pub power_history: Vec<f64>,
    /// Achieved rate minus target, per device.
    pub rate_slack: DVector<f64>,
    pub feasible: bool,
    pub seed: u64,
}

impl SolveReport {
    /// Largest RCG iteration count among the inner solves.
    pub fn max_inner_iterations(&self) -> usize {
        self.inner_traces.iter().map(RcgTrace::iterations).max().unwrap_or(0)
    }
}

fn rate_slack(a: &DMatrix<f64>, p: &DVector<f64>, qos: &Qos) -> DVector<f64> {
    DVector::from_fn(a.nrows(), |k, _| rate_from_gains(a, p, k, qos.noise_power) - qos.rate_min)
}

fn finish_report(
    ch: &ChannelSet,
    point: ProductPoint,
    powers: PowerVector,
    feasible: bool,
    qos: &Qos,
    seed: u64,
) -> Result<SolveReport> {
    let a = coupling_gains(ch, &point)?;
    let slack = rate_slack(&a, powers.as_vector(), qos);
    let verified = feasible && slack.iter().all(|&s| s >= -1e-9);
    Ok(SolveReport {
        total_power: powers.total(),
        powers,
        point,
        outer_iterations: 0,
        inner_traces: Vec::new(),
        power_history: Vec::new(),
        rate_slack: slack,
        feasible: verified,
        seed,
    })
}

/// Evaluates a fixed `(theta, W)`: minimal powers if feasible, otherwise the
/// full budget with `feasible = false`.
pub fn evaluate_point(ch: &ChannelSet, x: ProductPoint, qos: &Qos, seed: u64) -> Result<SolveReport> {
    match min_power(ch, &x, qos) {
        Ok(p) => finish_report(ch, x, p, true, qos, seed),
        Err(Error::Infeasible(_)) => {
            let p = PowerVector::uniform(ch.k(), qos.p_max);
            finish_report(ch, x, p, false, qos, seed)
        }
        Err(e) => Err(e),
    }
}

struct Attempt {
    point: ProductPoint,
    powers: Option<PowerVector>,
    outer_iterations: usize,
    traces: Vec<RcgTrace>,
    history: Vec<f64>,
}

fn jo_attempt(ch: &ChannelSet, qos: &Qos, opts: &JoOptions, rng: &mut ChaCha8Rng) -> Result<Attempt> {
    let theta = PhaseVector::random(ch.n(), rng);
    let w = mrt_beams(ch, &theta)?;
    let mut x = ProductPoint::new(theta, w);
    let mut best = match min_power(ch, &x, qos) {
        Ok(p) => Some(p),
        Err(Error::Infeasible(_)) => None,
        Err(e) => return Err(e),
    };
    let mut p = best
        .clone()
        .unwrap_or_else(|| PowerVector::uniform(ch.k(), qos.p_max / 2.0));
    let mut lambda = Multipliers::ones(ch.k());
    let mut traces = Vec::new();
    let mut history = Vec::new();
    let mut outer = 0;

    while outer < opts.outer_max_iters {
        outer += 1;
        if opts.reset_multipliers {
            lambda = Multipliers::ones(ch.k());
        }
        let step = optimize_phase_beam(ch, &p, &lambda, &x, qos, opts)?;
        traces.extend(step.traces);
        lambda = step.multipliers;
        let (point, candidate) = match step.best {
            Some((bx, bp)) => (bx, Some(bp)),
            None => (step.point, None),
        };

        let previous = best.as_ref().map(PowerVector::total);
        match (candidate, &best) {
            (Some(c), Some(b)) if c.total() > b.total() => {
                // No improvement at this (p, lambda): the alternation has settled.
                history.push(b.total());
                break;
            }
            (Some(c), _) => {
                x = point;
                p = c.clone();
                best = Some(c);
            }
            (None, Some(b)) => {
                history.push(b.total());
                break;
            }
            (None, None) => {
                x = point;
            }
        }
        let current = best.as_ref().map(PowerVector::total);
        history.push(current.unwrap_or(f64::INFINITY));
        if let (Some(prev), Some(cur)) = (previous, current) {
            if (prev - cur).abs() <= opts.outer_tol * prev {
                break;
            }
        }
    }
    Ok(Attempt {
        point: x,
        powers: best,
        outer_iterations: outer,
        traces,
        history,
    })
}

/// Alternating minimization of total uplink power over `(theta, W)` and `p`.
///
/// Starts from random phases with matched-filter receivers. A new
/// `(theta, W)` is kept only if its minimal power does not exceed the
/// current one, so the total power never increases. If no feasible
/// allocation is found the run restarts from fresh random phases up to
/// `opts.restarts` times before reporting `feasible = false` at full power.
pub fn rcg_jo(ch: &ChannelSet, qos: &Qos, opts: &JoOptions, seed: u64) -> Result<SolveReport> {
    opts.rcg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outer_total = 0;
    let mut all_traces = Vec::new();
    let mut last = None;
    for _ in 0..=opts.restarts {
        let attempt = jo_attempt(ch, qos, opts, &mut rng)?;
        outer_total += attempt.outer_iterations;
        all_traces.extend(attempt.traces);
        if let Some(p) = attempt.powers {
            let mut report = finish_report(ch, attempt.point, p, true, qos, seed)?;
            report.outer_iterations = outer_total;
            report.inner_traces = all_traces;
            report.power_history = attempt.history;
            return Ok(report);
        }
        last = Some((attempt.point, attempt.history));
    }
    let (point, history) = last.expect("at least one attempt");
    let p = PowerVector::uniform(ch.k(), qos.p_max);
    let mut report = finish_report(ch, point, p, false, qos, seed)?;
    report.outer_iterations = outer_total;
    report.inner_traces = all_traces;
    report.power_history = history;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::draw_channels;
    use crate::rcg::check_gradient;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn unit(m: usize, i: usize) -> DVector<Complex64> {
        DVector::from_fn(m, |r, _| if r == i { c(1.0, 0.0) } else { c(0.0, 0.0) })
    }

    fn random_instance(k: usize, m: usize, n: usize, seed: u64) -> (ChannelSet, ProductPoint) {
        let cfg = SystemConfig {
            k_devices: k,
            m_antennas: m,
            n_x: 1,
            n_y: n,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = draw_channels(&cfg, &mut rng).unwrap();
        let x = ProductPoint::new(PhaseVector::random(n, &mut rng), BeamMatrix::random(m, k, &mut rng));
        (ch, x)
    }

    fn qos(rate_min: f64, noise_power: f64) -> Qos {
        Qos {
            rate_min,
            noise_power,
            p_max: 1.0,
        }
    }

    #[test]
    fn coupling_gain_examples() {
        let ch = ChannelSet::new(vec![unit(2, 0)], vec![DVector::zeros(1)], DMatrix::zeros(2, 1)).unwrap();
        let theta = PhaseVector::ones(1);
        let w = BeamMatrix::new(DMatrix::from_column_slice(2, 1, &[c(1.0, 0.0), c(0.0, 0.0)])).unwrap();
        assert_eq!(coupling_gain(&ch, &theta, &w, 0, 0).unwrap(), 1.0);
        let w = BeamMatrix::new(DMatrix::from_column_slice(2, 1, &[c(0.0, 0.0), c(0.0, 1.0)])).unwrap();
        assert_eq!(coupling_gain(&ch, &theta, &w, 0, 0).unwrap(), 0.0);
        assert!(matches!(
            coupling_gain(&ch, &theta, &w, 1, 0),
            Err(Error::IndexOutOfRange { index: 1, len: 1 })
        ));
    }

    #[test]
    fn coupling_gain_matches_loop_oracle() {
        let (ch, x) = random_instance(3, 4, 6, 1);
        let a = coupling_gains(&ch, &x).unwrap();
        for j in 0..3 {
            for k in 0..3 {
                let mut s = c(0.0, 0.0);
                for m in 0..4 {
                    let mut h = ch.direct[j][m];
                    for n in 0..6 {
                        h += ch.ris_bs[(m, n)] * ch.device_ris[j][n] * x.theta.as_vector()[n];
                    }
                    s += x.w.as_matrix()[(m, k)].conj() * h;
                }
                let single = coupling_gain(&ch, &x.theta, &x.w, j, k).unwrap();
                assert!((s.norm_sqr() - a[(j, k)]).abs() <= 1e-12 * s.norm_sqr());
                assert!((single - a[(j, k)]).abs() <= 1e-12 * single);
            }
        }
    }

    fn scalar_instance(gain: f64) -> (ChannelSet, ProductPoint) {
        let ch = ChannelSet::new(
            vec![DVector::from_element(1, c(gain.sqrt(), 0.0))],
            vec![DVector::zeros(1)],
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let x = ProductPoint::new(PhaseVector::ones(1), BeamMatrix::new(DMatrix::from_element(1, 1, c(1.0, 0.0))).unwrap());
        (ch, x)
    }

    #[test]
    fn achievable_rate_examples() {
        let (ch, x) = scalar_instance(1.0);
        let p = PowerVector::uniform(1, 1.0);
        assert!((achievable_rate(&ch, &x, &p, 0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let zero = PowerVector::uniform(1, 0.0);
        assert_eq!(achievable_rate(&ch, &x, &zero, 0, 1.0).unwrap(), 0.0);

        let (ch, x) = random_instance(2, 3, 4, 2);
        let p = PowerVector::new(DVector::from_vec(vec![0.3, 0.7]), 1.0).unwrap();
        let noise = 1e-9;
        for k in 0..2 {
            let j = 1 - k;
            let wk = x.w.as_matrix().column(k).into_owned();
            let hk = effective_channel(&ch, x.theta.as_vector(), k).unwrap();
            let hj = effective_channel(&ch, x.theta.as_vector(), j).unwrap();
            let sig = p.as_vector()[k] * (wk.adjoint() * hk)[0].norm_sqr();
            let int = p.as_vector()[j] * (wk.adjoint() * hj)[0].norm_sqr();
            let want = (1.0 + sig / (int + noise)).log2();
            let got = achievable_rate(&ch, &x, &p, k, noise).unwrap();
            assert!((got - want).abs() <= 1e-12 * want.max(1.0));
        }
    }

    #[test]
    fn lagrangian_examples() {
        let (ch, x) = random_instance(2, 3, 4, 3);
        let p = PowerVector::new(DVector::from_vec(vec![0.4, 0.9]), 1.0).unwrap();
        let q = qos(0.3, 1e-9);
        assert_eq!(lagrangian_value(&ch, &x, &p, &Multipliers::zeros(2), &q).unwrap(), 0.0);

        let (ch1, x1) = scalar_instance(1.0);
        let v = lagrangian_value(&ch1, &x1, &PowerVector::uniform(1, 1.0), &Multipliers::ones(1), &qos(1.0, 1.0)).unwrap();
        assert!(v.abs() < 1e-15);

        let lambda = Multipliers::new(DVector::from_vec(vec![0.7, 1.3])).unwrap();
        let gamma = q.sinr_target();
        let mut want = 0.0;
        for k in 0..2 {
            let mut term = q.noise_power;
            for j in 0..2 {
                let a = coupling_gain(&ch, &x.theta, &x.w, j, k).unwrap();
                let pj = p.as_vector()[j];
                term += if j == k { -pj / gamma * a } else { pj * a };
            }
            want += lambda.as_vector()[k] * term;
        }
        let got = lagrangian_value(&ch, &x, &p, &lambda, &q).unwrap();
        assert!((got - want).abs() <= 1e-12 * want.abs());
    }

    #[test]
    fn gradient_examples() {
        let (ch, x) = random_instance(2, 3, 5, 4);
        let p = PowerVector::uniform(2, 0.5);
        let q = qos(0.3, 1e-9);
        let zero = Multipliers::zeros(2);
        assert!(euclidean_grad_theta(&ch, &x, &p, &zero, &q).unwrap().iter().all(|z| z.norm() == 0.0));
        assert!(euclidean_grad_w(&ch, &x, &p, &zero, &q).unwrap().iter().all(|z| z.norm() == 0.0));

        let no_ris = ChannelSet::new(ch.direct.clone(), ch.device_ris.clone(), DMatrix::zeros(3, 5)).unwrap();
        let g = euclidean_grad_theta(&no_ris, &x, &p, &Multipliers::ones(2), &q).unwrap();
        assert!(g.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn w_gradient_is_parallel_to_channel_for_single_user() {
        let (ch, _) = random_instance(1, 4, 3, 5);
        let theta = PhaseVector::random(3, &mut ChaCha8Rng::seed_from_u64(9));
        let h = effective_channel(&ch, theta.as_vector(), 0).unwrap();
        let w = BeamMatrix::normalized(DMatrix::from_column_slice(4, 1, h.as_slice())).unwrap();
        let x = ProductPoint::new(theta, w);
        let g = euclidean_grad_w(&ch, &x, &PowerVector::uniform(1, 1.0), &Multipliers::ones(1), &qos(0.3, 1e-9)).unwrap();
        let g = g.column(0).into_owned();
        let overlap = h.dotc(&g).norm();
        assert!((overlap - h.norm() * g.norm()).abs() <= 1e-10 * overlap);
    }

    #[test]
    fn gradients_pass_finite_difference_check() {
        let q = qos(0.3, 1e-9);
        for seed in 0..5 {
            let (ch, x) = random_instance(2, 4, 8, 100 + seed);
            let p = PowerVector::new(DVector::from_vec(vec![0.2, 0.6]), 1.0).unwrap();
            let lambda = Multipliers::new(DVector::from_vec(vec![1.0, 0.5])).unwrap();
            let obj = LagrangianObjective::new(&ch, &p, &lambda, &q, 1.0 / q.noise_power).unwrap();
            let err = check_gradient(&obj, &x, 10, seed).unwrap();
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn subgradient_examples() {
        let (ch, x) = scalar_instance(1.0);
        let q = qos(1.0, 1.0);
        // g = -1 * 1 / 1 + 1 = 0.
        let lam = Multipliers::ones(1);
        let out = subgradient_step(&ch, &x, &PowerVector::uniform(1, 1.0), &lam, 0.5, &q).unwrap();
        assert_eq!(out, lam);

        // g = -21 + 1 = -20.
        let (ch, x) = scalar_instance(21.0);
        let out = subgradient_step(&ch, &x, &PowerVector::uniform(1, 1.0), &lam, 0.1, &q).unwrap();
        assert_eq!(out.as_vector()[0], 0.0);

        // violated: g = -0.25 + 1 > 0.
        let (ch, x) = scalar_instance(0.25);
        let out = subgradient_step(&ch, &x, &PowerVector::uniform(1, 1.0), &lam, 0.1, &q).unwrap();
        assert!(out.as_vector()[0] > 1.0);

        assert!(subgradient_step(&ch, &x, &PowerVector::uniform(1, 1.0), &lam, 0.0, &q).is_err());
    }

    #[test]
    fn min_power_closed_forms() {
        let q = qos(0.3, 1e-9);
        let gamma = q.sinr_target();
        let a = DMatrix::from_element(1, 1, 2.5e-7);
        let p = min_power_from_gains(&a, &q).unwrap();
        assert!((p.as_vector()[0] - gamma * 1e-9 / 2.5e-7).abs() <= 1e-15 * p.as_vector()[0]);

        let a = DMatrix::from_row_slice(2, 2, &[1e-6, 0.0, 0.0, 4e-7]);
        let p = min_power_from_gains(&a, &q).unwrap();
        assert!((p.as_vector()[0] - gamma * 1e-9 / 1e-6).abs() <= 1e-15);
        assert!((p.as_vector()[1] - gamma * 1e-9 / 4e-7).abs() <= 1e-15);
    }

    #[test]
    fn min_power_meets_rates_with_equality() {
        let q = qos(0.5, 1e-9);
        for seed in 0..20 {
            let (ch, x) = random_instance(3, 4, 6, 200 + seed);
            let Ok(p) = min_power(&ch, &x, &q) else { continue };
            for k in 0..3 {
                let r = achievable_rate(&ch, &x, &p, k, q.noise_power).unwrap();
                assert!((r - q.rate_min).abs() < 1e-8, "rate {r}");
            }
        }
    }

    #[test]
    fn min_power_infeasibility() {
        let q = qos(0.3, 1e-9);
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(min_power_from_gains(&a, &q), Err(Error::Infeasible(_))));
        // Strong cross-talk: rho(F) > 1.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 10.0, 10.0, 1.0]);
        assert!(matches!(min_power_from_gains(&a, &q), Err(Error::Infeasible(_))));
        // Weak channel: needs more than the budget.
        let a = DMatrix::from_element(1, 1, 1e-12);
        assert!(matches!(min_power_from_gains(&a, &q), Err(Error::Infeasible(_))));
    }

    #[test]
    fn min_power_scales_inversely_with_gains() {
        let q = qos(0.3, 1e-9);
        let a = DMatrix::from_row_slice(2, 2, &[2e-7, 1e-8, 3e-8, 5e-7]);
        let p = min_power_from_gains(&a, &q).unwrap();
        let p4 = min_power_from_gains(&(&a * 4.0), &q).unwrap();
        assert!((p.as_vector() / 4.0 - p4.as_vector()).norm() <= 1e-14 * p.as_vector().norm());
    }

    #[test]
    fn phase_beam_with_zero_multipliers_is_a_no_op() {
        let (ch, x) = random_instance(2, 3, 4, 6);
        let q = qos(0.3, 1e-9);
        let out = optimize_phase_beam(&ch, &PowerVector::uniform(2, 0.5), &Multipliers::zeros(2), &x, &q, &JoOptions::default()).unwrap();
        assert_eq!(out.point, x);
        assert_eq!(out.traces.len(), 1);
        assert!(out.multipliers.is_zero());
    }

    #[test]
    fn phase_beam_improves_single_user_gain() {
        let (ch, _) = random_instance(1, 2, 4, 7);
        let q = qos(0.3, 1e-9);
        let theta = PhaseVector::random(4, &mut ChaCha8Rng::seed_from_u64(1));
        let x0 = ProductPoint::new(theta.clone(), mrt_beams(&ch, &theta).unwrap());
        let before = coupling_gains(&ch, &x0).unwrap()[(0, 0)];
        let p = PowerVector::uniform(1, 0.5);
        let out = optimize_phase_beam(&ch, &p, &Multipliers::ones(1), &x0, &q, &JoOptions::default()).unwrap();
        let after = coupling_gains(&ch, &out.point).unwrap()[(0, 0)];
        assert!(after >= before * (1.0 - 1e-12), "{after} < {before}");
        for t in &out.traces {
            t.check_monitors(0.1).unwrap();
        }
    }

    #[test]
    fn rcg_jo_single_user_beats_random_phases() {
        let cfg = SystemConfig {
            k_devices: 1,
            m_antennas: 4,
            n_x: 4,
            n_y: 4,
            ..Default::default()
        };
        let q = Qos::from_config(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ch = draw_channels(&cfg, &mut rng).unwrap();
        let report = rcg_jo(&ch, &q, &JoOptions::from_config(&cfg), 5).unwrap();
        assert!(report.feasible);
        assert!(report.rate_slack[0] >= -1e-6);

        let theta = PhaseVector::random(16, &mut rng);
        let w = mrt_beams(&ch, &theta).unwrap();
        let baseline = evaluate_point(&ch, ProductPoint::new(theta, w), &q, 0).unwrap();
        assert!(report.total_power <= baseline.total_power);
        for t in &report.inner_traces {
            t.check_monitors(0.1).unwrap();
        }
        assert!(report.power_history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn rcg_jo_zero_channels_is_infeasible() {
        let ch = ChannelSet::new(
            vec![DVector::zeros(2); 2],
            vec![DVector::zeros(3); 2],
            DMatrix::zeros(2, 3),
        )
        .unwrap();
        let q = qos(0.3, 1e-9);
        let report = rcg_jo(&ch, &q, &JoOptions::default(), 1).unwrap();
        assert!(!report.feasible);
        assert_eq!(report.powers, PowerVector::uniform(2, 1.0));
    }
}
