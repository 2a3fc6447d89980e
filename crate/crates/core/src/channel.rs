//! Channel synthesis for one RIS-aided uplink scenario.
//!
//! Geometry is planar. The BS sits at the origin with a ULA along the
//! world y axis (broadside +x), the RIS sits at `(R, 0)` facing the BS, and
//! device `k` sits at `(d_h, y_k)` with `y_k` uniform on `[-d_v, d_v]`.
//! The RIS is a UPA whose x-array runs along world y and whose y-array runs
//! along world z, so for a direction with unit vector `(u_x, u_y, 0)` the
//! elevation is `asin |u_y|` and the azimuth is `0` (or `pi` when
//! `u_y < 0`). The BS angle is measured from broadside: `sin(angle) = u_y`.

use std::collections::hash_map::DefaultHasher;
use std::f64::consts::PI;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::PhaseVector;

/// Scenario parameters. Defaults follow the reference simulation setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub k_devices: usize,
    pub m_antennas: usize,
    pub n_x: usize,
    pub n_y: usize,
    /// BS-RIS distance (m).
    pub bs_ris_distance: f64,
    /// BS-device horizontal distance (m).
    pub horiz_distance: f64,
    /// Half-width of the device offset interval (m).
    pub vert_spread: f64,
    pub rician_d: f64,
    pub rician_u: f64,
    pub rician_g: f64,
    /// Path loss at the reference distance (dB).
    pub pathloss_ref_db: f64,
    pub ref_distance: f64,
    pub alpha_d: f64,
    pub alpha_u: f64,
    pub alpha_g: f64,
    /// Receiver noise power (W).
    pub noise_power: f64,
    /// Per-device rate requirement (bps/Hz).
    pub rate_min: f64,
    /// Per-device power budget (W).
    pub p_max: f64,
    pub rng_seed: u64,
    /// Noise power on the RIS pilot observations (W); 0 means noiseless.
    pub pilot_noise_power: f64,
    /// Pilot symbol used during channel estimation.
    pub pilot_amplitude: f64,
    /// Outer (power/beamforming alternation) iteration budget.
    pub outer_max_iters: usize,
    /// Inner RCG iteration budget.
    pub rcg_max_iters: usize,
    /// RCG stopping threshold on the squared step length.
    pub rcg_tol: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            k_devices: 2,
            m_antennas: 4,
            n_x: 8,
            n_y: 8,
            bs_ris_distance: 65.0,
            horiz_distance: 57.0,
            vert_spread: 3.0,
            rician_d: 0.0,
            rician_u: 10.0,
            rician_g: f64::INFINITY,
            pathloss_ref_db: -30.0,
            ref_distance: 1.0,
            alpha_d: 3.8,
            alpha_u: 2.8,
            alpha_g: 2.0,
            noise_power: 1e-9,
            rate_min: 0.3,
            p_max: 1.0,
            rng_seed: 1,
            pilot_noise_power: 0.0,
            pilot_amplitude: 1.0,
            outer_max_iters: 50,
            rcg_max_iters: 500,
            rcg_tol: 1e-10,
        }
    }
}

impl SystemConfig {
    pub fn n_elements(&self) -> usize {
        self.n_x * self.n_y
    }

    /// SINR target `2^R_min - 1`.
    pub fn sinr_target(&self) -> f64 {
        self.rate_min.exp2() - 1.0
    }

    /// Picks the most square `n_x x n_y` factorization of `n` (`n_x <= n_y`).
    pub fn set_n_elements(&mut self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::Config("number of RIS elements must be >= 1".into()));
        }
        let mut nx = (n as f64).sqrt() as usize;
        while nx > 1 && n % nx != 0 {
            nx -= 1;
        }
        self.n_x = nx.max(1);
        self.n_y = n / self.n_x;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("k_devices", self.k_devices),
            ("m_antennas", self.m_antennas),
            ("n_x", self.n_x),
            ("n_y", self.n_y),
            ("outer_max_iters", self.outer_max_iters),
            ("rcg_max_iters", self.rcg_max_iters),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        let positive = [
            ("bs_ris_distance", self.bs_ris_distance),
            ("horiz_distance", self.horiz_distance),
            ("ref_distance", self.ref_distance),
            ("noise_power", self.noise_power),
            ("p_max", self.p_max),
            ("pilot_amplitude", self.pilot_amplitude),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.vert_spread >= 0.0) {
            return Err(Error::Config("vert_spread must be >= 0".into()));
        }
        for (name, v) in [
            ("rician_d", self.rician_d),
            ("rician_u", self.rician_u),
            ("rician_g", self.rician_g),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.rate_min >= 0.0 && self.rate_min.is_finite()) {
            return Err(Error::Config("rate_min must be >= 0".into()));
        }
        if !(self.pilot_noise_power >= 0.0) || !(self.rcg_tol >= 0.0) {
            return Err(Error::Config(
                "pilot_noise_power and rcg_tol must be >= 0".into(),
            ));
        }
        if (self.horiz_distance - self.bs_ris_distance).abs() < 1e-9 && self.vert_spread == 0.0 {
            return Err(Error::Config("devices coincide with the RIS".into()));
        }
        Ok(())
    }
}

/// One realization of every channel in the scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// Device-to-BS channels `d_k` (length M each).
    pub direct: Vec<DVector<Complex64>>,
    /// Device-to-RIS channels `u_k` (length N each).
    pub device_ris: Vec<DVector<Complex64>>,
    /// RIS-to-BS channel `G` (M x N).
    pub ris_bs: DMatrix<Complex64>,
}

impl ChannelSet {
    pub fn new(
        direct: Vec<DVector<Complex64>>,
        device_ris: Vec<DVector<Complex64>>,
        ris_bs: DMatrix<Complex64>,
    ) -> Result<Self> {
        let ch = Self {
            direct,
            device_ris,
            ris_bs,
        };
        ch.validate()?;
        Ok(ch)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = self.ris_bs.shape();
        if self.direct.is_empty() || self.direct.len() != self.device_ris.len() {
            return Err(Error::Dimension(format!(
                "{} direct channels vs {} RIS channels",
                self.direct.len(),
                self.device_ris.len()
            )));
        }
        if self.direct.iter().any(|d| d.len() != m) || self.device_ris.iter().any(|u| u.len() != n)
        {
            return Err(Error::Dimension(format!(
                "channel lengths inconsistent with G of shape {m}x{n}"
            )));
        }
        let finite = |z: &Complex64| z.re.is_finite() && z.im.is_finite();
        if !(self.ris_bs.iter().all(finite)
            && self.direct.iter().flat_map(|d| d.iter()).all(finite)
            && self.device_ris.iter().flat_map(|u| u.iter()).all(finite))
        {
            return Err(Error::Domain("non-finite channel entry".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.direct.len()
    }

    pub fn m(&self) -> usize {
        self.ris_bs.nrows()
    }

    pub fn n(&self) -> usize {
        self.ris_bs.ncols()
    }

    /// `G diag(u_k)`: maps RIS phases to the reflected part of `h_k`.
    pub fn cascaded(&self, k: usize) -> DMatrix<Complex64> {
        let mut b = self.ris_bs.clone();
        for (mut col, u) in b.column_iter_mut().zip(self.device_ris[k].iter()) {
            col *= *u;
        }
        b
    }

    /// The same draw with the RIS removed (`G = 0`).
    pub fn without_ris(&self) -> Self {
        Self {
            direct: self.direct.clone(),
            device_ris: self.device_ris.clone(),
            ris_bs: DMatrix::zeros(self.m(), self.n()),
        }
    }

    /// Every channel multiplied by `s` (gains scale by `s^2`).
    pub fn scaled(&self, s: f64) -> Self {
        let c = Complex64::new(s, 0.0);
        Self {
            direct: self.direct.iter().map(|d| d * c).collect(),
            device_ris: self.device_ris.clone(),
            ris_bs: &self.ris_bs * c,
        }
    }

    /// Stable fingerprint of the channel values, used to audit paired draws.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let mut feed = |z: &Complex64| {
            z.re.to_bits().hash(&mut h);
            z.im.to_bits().hash(&mut h);
        };
        self.direct.iter().flat_map(|d| d.iter()).for_each(&mut feed);
        self.device_ris.iter().flat_map(|u| u.iter()).for_each(&mut feed);
        self.ris_bs.iter().for_each(&mut feed);
        h.finish()
    }
}

/// A circularly-symmetric complex Gaussian sample with unit variance.
pub fn circular_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn ula(len: usize, spatial_freq: f64) -> DVector<Complex64> {
    DVector::from_fn(len, |i, _| {
        Complex64::from_polar(1.0, -PI * i as f64 * spatial_freq)
    })
}

/// BS ULA response: entry `i` is `exp(-j pi i sin(angle))`.
pub fn steering_bs(m: usize, angle: f64) -> DVector<Complex64> {
    ula(m, angle.sin())
}

/// RIS UPA response `a_x kron a_y`, x-array exponent `cos(az) sin(el)`,
/// y-array exponent `sin(az) sin(el)`. Element `(x, y)` is entry
/// `x * n_y + y`.
pub fn steering_ris(n_x: usize, n_y: usize, azimuth: f64, elevation: f64) -> DVector<Complex64> {
    let ax = ula(n_x, azimuth.cos() * elevation.sin());
    let ay = ula(n_y, azimuth.sin() * elevation.sin());
    ax.kronecker(&ay)
}

/// Large-scale power gain `C0 (d / D0)^(-alpha)` with `C0` in dB.
pub fn path_loss(distance: f64, exponent: f64, cfg: &SystemConfig) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {distance}")));
    }
    let c0 = 10f64.powf(cfg.pathloss_ref_db / 10.0);
    Ok(c0 * (distance / cfg.ref_distance).powf(-exponent))
}

fn rician_weights(kappa: f64) -> (f64, f64) {
    if kappa.is_infinite() {
        (1.0, 0.0)
    } else {
        ((kappa / (kappa + 1.0)).sqrt(), (1.0 / (kappa + 1.0)).sqrt())
    }
}

/// Device placement drawn from the geometry (y offsets only).
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub ris: (f64, f64),
    pub devices: Vec<(f64, f64)>,
}

impl Geometry {
    pub fn draw<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Self {
        let devices = (0..cfg.k_devices)
            .map(|_| {
                let y = if cfg.vert_spread > 0.0 {
                    rng.random_range(-cfg.vert_spread..=cfg.vert_spread)
                } else {
                    0.0
                };
                (cfg.horiz_distance, y)
            })
            .collect();
        Self {
            ris: (cfg.bs_ris_distance, 0.0),
            devices,
        }
    }
}

fn direction(from: (f64, f64), to: (f64, f64)) -> (f64, f64, f64) {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    let dist = dx.hypot(dy);
    (dist, dx / dist, dy / dist)
}

/// RIS (azimuth, elevation) for a unit direction with in-plane y component `uy`.
fn ris_angles(uy: f64) -> (f64, f64) {
    let el = uy.abs().min(1.0).asin();
    let az = if uy < 0.0 { PI } else { 0.0 };
    (az, el)
}

/// Draws one channel realization. All randomness comes from `rng`.
pub fn draw_channels<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<ChannelSet> {
    cfg.validate()?;
    let (k, m, n) = (cfg.k_devices, cfg.m_antennas, cfg.n_elements());
    let geo = Geometry::draw(cfg, rng);
    let bs = (0.0, 0.0);

    let (los_g, nlos_g) = rician_weights(cfg.rician_g);
    let (los_u, nlos_u) = rician_weights(cfg.rician_u);
    let (los_d, nlos_d) = rician_weights(cfg.rician_d);

    // RIS -> BS
    let (dist_g, _, uy_bs_side) = direction(bs, geo.ris);
    let (_, _, uy_ris_side) = direction(geo.ris, bs);
    let (az_g, el_g) = ris_angles(uy_ris_side);
    let g_los = steering_bs(m, uy_bs_side.asin()) * steering_ris(cfg.n_x, cfg.n_y, az_g, el_g).adjoint();
    let g_nlos = DMatrix::from_fn(m, n, |_, _| circular_gaussian(rng));
    let beta_g = path_loss(dist_g, cfg.alpha_g, cfg)?.sqrt();
    let ris_bs = (g_los * Complex64::from(los_g) + g_nlos * Complex64::from(nlos_g)) * Complex64::from(beta_g);

    let mut direct = Vec::with_capacity(k);
    let mut device_ris = Vec::with_capacity(k);
    for &pos in &geo.devices {
        let (dist_d, _, uy_d) = direction(bs, pos);
        let d_los = steering_bs(m, uy_d.asin());
        let d_nlos = DVector::from_fn(m, |_, _| circular_gaussian(rng));
        let beta_d = path_loss(dist_d, cfg.alpha_d, cfg)?.sqrt();
        direct.push((d_los * Complex64::from(los_d) + d_nlos * Complex64::from(nlos_d)) * Complex64::from(beta_d));

        let (dist_u, _, uy_u) = direction(geo.ris, pos);
        let (az_u, el_u) = ris_angles(uy_u);
        let u_los = steering_ris(cfg.n_x, cfg.n_y, az_u, el_u);
        let u_nlos = DVector::from_fn(n, |_, _| circular_gaussian(rng));
        let beta_u = path_loss(dist_u, cfg.alpha_u, cfg)?.sqrt();
        device_ris.push((u_los * Complex64::from(los_u) + u_nlos * Complex64::from(nlos_u)) * Complex64::from(beta_u));
    }
    ChannelSet::new(direct, device_ris, ris_bs)
}

/// `h_k = d_k + G diag(u_k) theta`.
pub fn effective_channel(ch: &ChannelSet, theta: &DVector<Complex64>, k: usize) -> Result<DVector<Complex64>> {
    if k >= ch.k() {
        return Err(Error::IndexOutOfRange { index: k, len: ch.k() });
    }
    if theta.len() != ch.n() {
        return Err(Error::Dimension(format!(
            "theta has length {}, RIS has {} elements",
            theta.len(),
            ch.n()
        )));
    }
    let reflected = theta.component_mul(&ch.device_ris[k]);
    Ok(&ch.direct[k] + &ch.ris_bs * reflected)
}

/// [`effective_channel`] for every device at a point on the circle manifold.
pub fn effective_channels(ch: &ChannelSet, theta: &PhaseVector) -> Result<Vec<DVector<Complex64>>> {
    (0..ch.k())
        .map(|k| effective_channel(ch, theta.as_vector(), k))
        .collect()
}
