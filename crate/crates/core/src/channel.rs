//! Per-UE fading channels, SINR, Rayleigh SNR sampling, and the SNR to
//! modulation mapping.
//!
//! Fading is a first-order autoregressive Rayleigh process whose lag-1
//! correlation follows the Clarke/Jakes model, rho = J0(2 pi f_D dt). The
//! named multipath profiles (EPA/EVA/ETU) are reduced to their Doppler rates
//! driving flat fading; only scalar SNR/SINR is consumed downstream.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::bessel_j0;

/// Fading model tag, selected per slice in the scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelModel {
    /// Extended pedestrian A, 5 Hz Doppler.
    Epa5,
    /// Extended vehicular A, 70 Hz Doppler.
    Eva70,
    /// Extended typical urban, 300 Hz Doppler.
    Etu300,
    /// Generic Rayleigh fading with a free Doppler rate.
    Rayleigh { doppler_hz: f64 },
}

impl ChannelModel {
    pub fn doppler_hz(&self) -> f64 {
        match self {
            ChannelModel::Epa5 => 5.0,
            ChannelModel::Eva70 => 70.0,
            ChannelModel::Etu300 => 300.0,
            ChannelModel::Rayleigh { doppler_hz } => *doppler_hz,
        }
    }

    /// Parse the scenario-file tag: `epa5 | eva70 | etu300 | rayleigh(<hz>)`.
    pub fn parse_tag(tag: &str) -> Option<Self> {
        let t = tag.trim().to_ascii_lowercase();
        match t.as_str() {
            "epa5" => Some(ChannelModel::Epa5),
            "eva70" => Some(ChannelModel::Eva70),
            "etu300" => Some(ChannelModel::Etu300),
            "rayleigh" => Some(ChannelModel::Rayleigh { doppler_hz: 100.0 }),
            _ => {
                let inner = t.strip_prefix("rayleigh(")?.strip_suffix(')')?;
                let doppler_hz: f64 = inner.trim().parse().ok()?;
                Some(ChannelModel::Rayleigh { doppler_hz })
            }
        }
    }
}

/// Errors raised by channel operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("channel gains are all zero; no beamformer exists")]
    ZeroChannel,
    #[error("bandwidth must be > 0 Hz, got {0}")]
    NonPositiveBandwidth(f64),
    #[error("distance {distance_m} m outside the cell (radius {radius_m} m)")]
    OutOfCell { distance_m: f64, radius_m: f64 },
}

/// Channel state of one service link.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    /// Complex gains h, one per antenna.
    pub gains: Vec<Complex64>,
    /// Unit-norm beamformer e.
    pub beamformer: Vec<Complex64>,
    /// Doppler rate of the fading process, Hz.
    pub doppler_hz: f64,
    /// Receiver noise density N0, W/Hz.
    pub noise_density: f64,
    /// Distance to the serving unit, m.
    pub distance_m: f64,
    /// Stationary per-antenna gain variance.
    pub gain_variance: f64,
    /// Information symbol x (unit power convention).
    pub symbol: Complex64,
    /// Last receiver noise sample n.
    pub noise_sample: Complex64,
}

impl ChannelState {
    /// Draw an initial stationary state.
    pub fn init<R: Rng>(
        antennas: usize,
        doppler_hz: f64,
        noise_density: f64,
        distance_m: f64,
        gain_variance: f64,
        rng: &mut R,
    ) -> Self {
        let sigma = (gain_variance / 2.0).sqrt();
        let gains: Vec<Complex64> = (0..antennas)
            .map(|_| Complex64::new(sigma * randn(rng), sigma * randn(rng)))
            .collect();
        let beamformer = match_beamformer(&gains).unwrap_or_else(|_| {
            let mut e = vec![Complex64::new(0.0, 0.0); antennas];
            e[0] = Complex64::new(1.0, 0.0);
            e
        });
        Self {
            gains,
            beamformer,
            doppler_hz,
            noise_density,
            distance_m,
            gain_variance,
            symbol: Complex64::new(1.0, 0.0),
            noise_sample: Complex64::new(0.0, 0.0),
        }
    }

    /// |h^H e|^2 with the current beamformer.
    pub fn beam_gain_sq(&self) -> f64 {
        beam_gain_sq(&self.gains, &self.beamformer)
    }
}

fn randn<R: Rng>(rng: &mut R) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}

/// |h^H e|^2 for arbitrary gain/beamformer pairs.
pub fn beam_gain_sq(gains: &[Complex64], beamformer: &[Complex64]) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (h, e) in gains.iter().zip(beamformer) {
        acc += h.conj() * e;
    }
    acc.norm_sqr()
}

/// Advance the fading process by `dt` seconds in place and re-point the
/// beamformer. The gains stay marginally complex-Gaussian with unchanged
/// variance; the lag-1 correlation is rho = J0(2 pi f_D dt).
pub fn evolve_channel_in_place<R: Rng>(state: &mut ChannelState, dt: f64, rng: &mut R) {
    debug_assert!(dt > 0.0);
    let rho = bessel_j0(2.0 * std::f64::consts::PI * state.doppler_hz * dt);
    if state.doppler_hz == 0.0 {
        return;
    }
    let innov = (state.gain_variance * (1.0 - rho * rho) / 2.0)
        .max(0.0)
        .sqrt();
    for g in &mut state.gains {
        *g = *g * rho + Complex64::new(innov * randn(rng), innov * randn(rng));
    }
    if let Ok(e) = match_beamformer(&state.gains) {
        state.beamformer = e;
    }
}

/// Pure form of [`evolve_channel_in_place`].
pub fn evolve_channel<R: Rng>(state: &ChannelState, dt: f64, rng: &mut R) -> ChannelState {
    let mut next = state.clone();
    evolve_channel_in_place(&mut next, dt, rng);
    next
}

/// Maximum-ratio beamformer: the gains scaled to unit norm, so that
/// |h^H e|^2 = ||h||^2.
pub fn match_beamformer(gains: &[Complex64]) -> Result<Vec<Complex64>, ChannelError> {
    let norm_sq: f64 = gains.iter().map(|g| g.norm_sqr()).sum();
    if norm_sq == 0.0 {
        return Err(ChannelError::ZeroChannel);
    }
    let norm = norm_sq.sqrt();
    Ok(gains.iter().map(|g| g / norm).collect())
}

/// One interfering transmission: its power and its own channel/beam pair.
#[derive(Debug, Clone)]
pub struct Interferer {
    pub tx_power_w: f64,
    pub gains: Vec<Complex64>,
    pub beamformer: Vec<Complex64>,
}

/// Linear SINR: gamma = |h^H e|^2 t / (N0 b + sum_q |h_q^H e_q|^2 t_q), the
/// interferer set being the co-slice services q != i.
pub fn compute_sinr(
    target: &ChannelState,
    tx_power_w: f64,
    interferers: &[Interferer],
    bandwidth_hz: f64,
    noise_density: f64,
) -> Result<f64, ChannelError> {
    if bandwidth_hz <= 0.0 {
        return Err(ChannelError::NonPositiveBandwidth(bandwidth_hz));
    }
    let signal = target.beam_gain_sq() * tx_power_w;
    let interference: f64 = interferers
        .iter()
        .map(|q| beam_gain_sq(&q.gains, &q.beamformer) * q.tx_power_w)
        .sum();
    Ok(signal / (noise_density * bandwidth_hz + interference))
}

/// Draw an average SNR from the exponential distribution of mean
/// `sigma_s_sq` (Rayleigh-channel assumption).
pub fn sample_avg_snr<R: Rng>(sigma_s_sq: f64, rng: &mut R) -> f64 {
    debug_assert!(sigma_s_sq > 0.0);
    Exp::new(1.0 / sigma_s_sq)
        .expect("sigma_s_sq must be positive")
        .sample(rng)
}

/// Modulation orders from the SNR table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modulation {
    Qpsk,
    Qam16,
    Qam64,
}

impl std::fmt::Display for Modulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Modulation::Qpsk => write!(f, "QPSK"),
            Modulation::Qam16 => write!(f, "16-QAM"),
            Modulation::Qam64 => write!(f, "64-QAM"),
        }
    }
}

/// SNR (dB) to modulation. Boundaries belong to the higher order, making the
/// mapping total.
pub fn select_modulation(snr_db: f64) -> Modulation {
    if snr_db < 8.0 {
        Modulation::Qpsk
    } else if snr_db < 14.0 {
        Modulation::Qam16
    } else {
        Modulation::Qam64
    }
}

/// Log-distance path loss model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLoss {
    /// Loss at the reference distance, dB.
    pub ref_db: f64,
    /// Path loss exponent n.
    pub exponent: f64,
    /// Reference distance d0, m.
    pub ref_m: f64,
    /// Cell radius bounding valid distances, m.
    pub cell_radius_m: f64,
}

impl Default for PathLoss {
    fn default() -> Self {
        Self {
            ref_db: 38.0,
            exponent: 3.5,
            ref_m: 1.0,
            cell_radius_m: 950.0,
        }
    }
}

/// PL = PL0 + 10 n log10(d / d0) for d within [d0, cell radius].
pub fn path_loss_db(distance_m: f64, loss: &PathLoss) -> Result<f64, ChannelError> {
    if distance_m < loss.ref_m || distance_m > loss.cell_radius_m {
        return Err(ChannelError::OutOfCell {
            distance_m,
            radius_m: loss.cell_radius_m,
        });
    }
    Ok(loss.ref_db + 10.0 * loss.exponent * (distance_m / loss.ref_m).log10())
}
