//! Sampled RIS channel estimation and low-rank completion.
//!
//! Only the active RIS elements observe pilots, so each per-antenna
//! (`G_m`) and per-device (`U_k`) channel is seen on a subset of its
//! `N_x x N_y` entries. Least squares recovers those entries and
//! nuclear-norm minimization fills in the rest.
//!
//! Vectorization: element `(x, y)` of an `N_x x N_y` channel matrix is
//! entry `x * N_y + y` of the RIS vector. This matches the `a_x kron a_y`
//! ordering of [`crate::channel::steering_ris`], so a single LoS path
//! unfolds to a rank-one matrix.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::channel::{circular_gaussian, ChannelSet, SystemConfig};
use crate::error::{Error, Result};

/// Index set of the active reflecting elements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleMask {
    n_x: usize,
    n_y: usize,
    active: Vec<(usize, usize)>,
}

impl SampleMask {
    pub fn new(n_x: usize, n_y: usize, mut active: Vec<(usize, usize)>) -> Result<Self> {
        if active.is_empty() {
            return Err(Error::Domain("sample mask is empty".into()));
        }
        active.sort_unstable();
        if active.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Domain("sample mask has duplicate indices".into()));
        }
        if let Some(&(x, y)) = active.iter().find(|&&(x, y)| x >= n_x || y >= n_y) {
            return Err(Error::Domain(format!(
                "mask index ({x}, {y}) outside {n_x}x{n_y}"
            )));
        }
        Ok(Self { n_x, n_y, active })
    }

    pub fn full(n_x: usize, n_y: usize) -> Self {
        let active = (0..n_x)
            .flat_map(|x| (0..n_y).map(move |y| (x, y)))
            .collect();
        Self { n_x, n_y, active }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_x, self.n_y)
    }

    pub fn active(&self) -> &[(usize, usize)] {
        &self.active
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.active.binary_search(&(x, y)).is_ok()
    }

    /// True when every row and every column holds at least one sample.
    /// Without this no completion method can recover a generic matrix.
    pub fn covers_every_line(&self) -> bool {
        let mut rows = vec![false; self.n_x];
        let mut cols = vec![false; self.n_y];
        for &(x, y) in &self.active {
            rows[x] = true;
            cols[y] = true;
        }
        rows.into_iter().chain(cols).all(|b| b)
    }

    /// The sampling operator: keeps masked entries, zeroes the rest.
    pub fn apply(&self, full: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        if full.shape() != (self.n_x, self.n_y) {
            return Err(Error::Dimension(format!(
                "matrix is {:?}, mask is {}x{}",
                full.shape(),
                self.n_x,
                self.n_y
            )));
        }
        let mut out = DMatrix::zeros(self.n_x, self.n_y);
        for &(x, y) in &self.active {
            out[(x, y)] = full[(x, y)];
        }
        Ok(out)
    }
}

/// Uniformly random subset of `round(fraction * N)` elements.
pub fn make_mask<R: Rng + ?Sized>(
    n_x: usize,
    n_y: usize,
    fraction: f64,
    rng: &mut R,
) -> Result<SampleMask> {
    let total = n_x * n_y;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Domain(format!("sample fraction {fraction} not in (0, 1]")));
    }
    let count = (fraction * total as f64).round() as usize;
    if count == 0 {
        return Err(Error::Domain(format!(
            "fraction {fraction} of {total} elements selects nothing"
        )));
    }
    let picked = rand::seq::index::sample(rng, total, count);
    let active = picked.iter().map(|i| (i / n_y, i % n_y)).collect();
    SampleMask::new(n_x, n_y, active)
}

/// A channel matrix known only on its mask (zero elsewhere).
#[derive(Debug, Clone, PartialEq)]
pub struct SampledMatrix {
    values: DMatrix<Complex64>,
    mask: SampleMask,
}

impl SampledMatrix {
    pub fn sample(full: &DMatrix<Complex64>, mask: &SampleMask) -> Result<Self> {
        Ok(Self {
            values: mask.apply(full)?,
            mask: mask.clone(),
        })
    }

    pub fn values(&self) -> &DMatrix<Complex64> {
        &self.values
    }

    pub fn mask(&self) -> &SampleMask {
        &self.mask
    }
}

/// Which pilot model produced the observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PilotModel {
    /// `Y = conj(x) P(G_m) + N` (BS antennas transmitting to the RIS).
    Conjugate,
    /// `Y = x P(U_k) + N` (devices transmitting to the RIS).
    Direct,
}

/// Least-squares estimate of the sampled entries from a pilot observation.
pub fn ls_sampled_estimate(
    received: &DMatrix<Complex64>,
    pilot: Complex64,
    mask: &SampleMask,
    model: PilotModel,
) -> Result<SampledMatrix> {
    if pilot.norm() == 0.0 {
        return Err(Error::Domain("pilot symbol is zero".into()));
    }
    let gain = match model {
        PilotModel::Conjugate => pilot.conj(),
        PilotModel::Direct => pilot,
    };
    let mut values = mask.apply(received)?;
    values.iter_mut().for_each(|z| *z /= gain);
    Ok(SampledMatrix {
        values,
        mask: mask.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionOptions {
    pub max_iters: usize,
    /// Target on-mask relative residual.
    pub tol: f64,
    /// Singular-value threshold as a fraction of the largest singular value
    /// of the zero-filled observation.
    pub threshold_ratio: f64,
    /// Relaxation factor in (0, 2).
    pub step: f64,
}

impl Default for CompletionOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tol: 1e-6,
            threshold_ratio: 0.1,
            step: 1.2,
        }
    }
}

fn soft_threshold(y: DMatrix<Complex64>, tau: f64) -> DMatrix<Complex64> {
    let svd = y.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut out = DMatrix::zeros(u.nrows(), vt.ncols());
    for (i, s) in svd.singular_values.iter().enumerate() {
        let shrunk = s - tau;
        if shrunk > 0.0 {
            out += (u.column(i) * vt.row(i)) * Complex64::from(shrunk);
        }
    }
    out
}

/// Minimum-nuclear-norm completion subject to agreement on the mask.
///
/// Alternates singular value soft-thresholding with projection onto the
/// data constraint (relaxed ADMM). The returned matrix matches the samples
/// exactly. Iteration stops early once the thresholded iterate agrees with
/// the data to `tol` and the projected iterate has stopped moving; at the
/// iteration cap only the on-mask agreement is required.
pub fn complete_low_rank(sampled: &SampledMatrix, opts: &CompletionOptions) -> Result<DMatrix<Complex64>> {
    if !(opts.step > 0.0 && opts.step < 2.0) || !(opts.threshold_ratio > 0.0) {
        return Err(Error::Domain(format!(
            "completion step {} / threshold ratio {} out of range",
            opts.step, opts.threshold_ratio
        )));
    }
    let data = &sampled.values;
    let mask = &sampled.mask;
    let data_norm = data.norm();
    if data_norm == 0.0 {
        return Ok(DMatrix::zeros(data.nrows(), data.ncols()));
    }
    let tau = opts.threshold_ratio * data.clone().singular_values().max();
    let alpha = Complex64::from(opts.step);
    let beta = Complex64::from(1.0 - opts.step);

    let mut z = data.clone();
    let mut dual = DMatrix::<Complex64>::zeros(data.nrows(), data.ncols());
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iters {
        let x = soft_threshold(&z - &dual, tau);
        residual = mask
            .active()
            .iter()
            .map(|&(i, j)| (x[(i, j)] - data[(i, j)]).norm_sqr())
            .sum::<f64>()
            .sqrt()
            / data_norm;
        let relaxed = &x * alpha + &z * beta;
        let mut z_next = &relaxed + &dual;
        for &(i, j) in mask.active() {
            z_next[(i, j)] = data[(i, j)];
        }
        dual += &relaxed - &z_next;
        let movement = (&z_next - &z).norm() / data_norm;
        z = z_next;
        if residual <= opts.tol && movement <= opts.tol {
            return Ok(z);
        }
    }
    if residual <= opts.tol {
        return Ok(z);
    }
    Err(Error::CompletionFailed {
        iterations: opts.max_iters,
        residual,
        last: Box::new(z),
    })
}

/// Row-major unfolding: `v[x * n_y + y] = X[(x, y)]`.
pub fn vectorize(x: &DMatrix<Complex64>) -> DVector<Complex64> {
    let (nx, ny) = x.shape();
    DVector::from_fn(nx * ny, |i, _| x[(i / ny, i % ny)])
}

pub fn unvectorize(v: &DVector<Complex64>, n_x: usize, n_y: usize) -> Result<DMatrix<Complex64>> {
    if v.len() != n_x * n_y {
        return Err(Error::Dimension(format!(
            "vector of length {} cannot unfold to {n_x}x{n_y}",
            v.len()
        )));
    }
    Ok(DMatrix::from_fn(n_x, n_y, |x, y| v[x * n_y + y]))
}

/// Completes every sampled matrix and assembles the channel set:
/// row `m` of `G` is `vec(G_m)^T` and `u_k = vec(U_k)`. The direct channels
/// are taken as given.
pub fn reconstruct_channel_set(
    samples_g: &[SampledMatrix],
    samples_u: &[SampledMatrix],
    direct: Vec<DVector<Complex64>>,
    opts: &CompletionOptions,
) -> Result<ChannelSet> {
    if samples_g.is_empty() || samples_u.is_empty() {
        return Err(Error::Dimension(
            "need at least one sampled matrix for G and for the devices".into(),
        ));
    }
    let (nx, ny) = samples_g[0].mask.shape();
    if samples_g.iter().chain(samples_u).any(|s| s.values.shape() != (nx, ny)) {
        return Err(Error::Dimension("sampled matrices differ in shape".into()));
    }
    let complete = |s: &SampledMatrix, which: String| {
        complete_low_rank(s, opts).map_err(|e| Error::Reconstruction {
            which,
            source: Box::new(e),
        })
    };
    let mut g = DMatrix::zeros(samples_g.len(), nx * ny);
    for (m, s) in samples_g.iter().enumerate() {
        let row = vectorize(&complete(s, format!("G_{m}"))?);
        g.row_mut(m).copy_from(&row.transpose());
    }
    let u = samples_u
        .iter()
        .enumerate()
        .map(|(k, s)| complete(s, format!("U_{k}")).map(|x| vectorize(&x)))
        .collect::<Result<Vec<_>>>()?;
    ChannelSet::new(direct, u, g)
}

/// Simulates the pilot phase on the true channels and returns LS estimates
/// of the sampled `G_m` and `U_k`.
pub fn observe_sampled_channels<R: Rng + ?Sized>(
    truth: &ChannelSet,
    cfg: &SystemConfig,
    mask: &SampleMask,
    rng: &mut R,
) -> Result<(Vec<SampledMatrix>, Vec<SampledMatrix>)> {
    let (nx, ny) = mask.shape();
    let pilot = Complex64::from(cfg.pilot_amplitude);
    let noise_std = cfg.pilot_noise_power.sqrt();
    let mut observe = |full: DMatrix<Complex64>, model: PilotModel| -> Result<SampledMatrix> {
        let gain = match model {
            PilotModel::Conjugate => pilot.conj(),
            PilotModel::Direct => pilot,
        };
        let mut y = mask.apply(&full)? * gain;
        if noise_std > 0.0 {
            for &(i, j) in mask.active() {
                y[(i, j)] += circular_gaussian(rng) * noise_std;
            }
        }
        ls_sampled_estimate(&y, pilot, mask, model)
    };
    let g = (0..truth.m())
        .map(|m| {
            let row = truth.ris_bs.row(m).transpose();
            observe(unvectorize(&row, nx, ny)?, PilotModel::Conjugate)
        })
        .collect::<Result<Vec<_>>>()?;
    let u = truth
        .device_ris
        .iter()
        .map(|u| observe(unvectorize(u, nx, ny)?, PilotModel::Direct))
        .collect::<Result<Vec<_>>>()?;
    Ok((g, u))
}

/// Full estimation pipeline: random mask, pilot observation, completion.
pub fn estimate_channels<R: Rng + ?Sized>(
    truth: &ChannelSet,
    cfg: &SystemConfig,
    sample_fraction: f64,
    opts: &CompletionOptions,
    rng: &mut R,
) -> Result<ChannelSet> {
    let mask = make_mask(cfg.n_x, cfg.n_y, sample_fraction, rng)?;
    let (g, u) = observe_sampled_channels(truth, cfg, &mask, rng)?;
    reconstruct_channel_set(&g, &u, truth.direct.clone(), opts)
}
