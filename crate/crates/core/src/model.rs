//! Domain data model shared by every other module: slices, resource pools,
//! services, categories, the schedule map, and optimizer constants.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelModel;

/// One ms scheduling tick.
pub const DEFAULT_TTI_SECONDS: f64 = 1e-3;

/// Static description of one network slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceConfig {
    pub slice_id: usize,
    /// Bandwidth part in Hz (the transport/S-TS pool BP).
    pub bandwidth_part_hz: f64,
    /// Maximum schedulable radio units (S-RS budget). Kept continuous; the
    /// learning equations differentiate with respect to r.
    pub r_max: f64,
    /// Initial slice-in-slice category count M.
    pub initial_categories: usize,
    /// Base number of UE services per category (f_u).
    pub services_per_category: usize,
    /// UEs associated with the slice; each contributes one service, so this
    /// is also the slice's service capacity.
    pub ue_count: usize,
    /// 5G numerology exponent, 0..=4.
    pub numerology: u8,
    /// Fading model driving the per-service channels.
    pub channel_model: ChannelModel,
}

/// Power model constants for the bandwidth MOP and the spectral-efficiency
/// update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    /// System circuit power P_c, watts.
    pub circuit_power_w: f64,
    /// Static power P_0, watts.
    pub static_power_w: f64,
    /// Power-amplifier slope phi_u (dimensionless).
    pub pa_slope: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            circuit_power_w: 0.5,
            static_power_w: 1.0,
            pa_slope: 2.0,
        }
    }
}

/// Optimizer constants shared by the utility learner and the epsilon-constraint
/// bandwidth solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerParams {
    /// Sufficient-decrease constant, 0 < c1 < 1.
    pub c1: f64,
    /// Curvature constant, c1 < c2 < 1.
    pub c2: f64,
    /// Constraint bound on f2. `None` means "f2 at the upper bandwidth clamp",
    /// which is always feasible from any start in range.
    pub eps: Option<f64>,
    /// Convergence tolerance on successive f1 values.
    pub eps_prime: f64,
    /// Pareto boundary value; defaults to `eps`.
    pub eps2: Option<f64>,
    /// Utility weight beta; recalibrated at runtime unless
    /// calibration fails, in which case this value persists.
    pub beta: f64,
    /// Mean of the exponential average-SNR distribution (linear power ratio).
    pub sigma_s_sq: f64,
    /// Iteration cap for the descent loop.
    pub max_iters: usize,
    /// Minimum bandwidth grain in Hz. `None` means one resource-block width
    /// f_d(mu) for the slice's numerology.
    pub b_min_hz: Option<f64>,
    /// Exponent cap for beta*r*s; beyond this the utility is treated as
    /// divergent and the service unschedulable this tick.
    pub exponent_cap: f64,
    /// TTIs between beta recalibrations.
    pub beta_refresh_ttis: usize,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            c2: 0.9,
            eps: None,
            eps_prime: 1e-12,
            eps2: None,
            beta: 0.05,
            sigma_s_sq: 25.0,
            max_iters: 200,
            b_min_hz: None,
            exponent_cap: 50.0,
            beta_refresh_ttis: 100,
        }
    }
}

/// Channel-layer constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Receiver noise density N0, W/Hz. Default is thermal -174 dBm/Hz.
    pub noise_density_w_hz: f64,
    /// Antennas per link (length of the gain vector).
    pub antennas: usize,
    /// Log-distance path loss: PL0 dB at the reference distance.
    pub path_loss_ref_db: f64,
    /// Log-distance exponent n.
    pub path_loss_exponent: f64,
    /// Reference distance d0 in meters.
    pub path_loss_ref_m: f64,
    /// Smoothing weight for the sliding exponential average SNR.
    pub snr_smoothing: f64,
    /// Fraction of co-slice received power counted as interference. Services
    /// occupy disjoint S-TS bandwidth, so the default is 0 (orthogonal FDM);
    /// raise it to couple the slice for interference studies.
    pub interference_coupling: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            noise_density_w_hz: 10f64.powf((-174.0 - 30.0) / 10.0),
            antennas: 4,
            path_loss_ref_db: 38.0,
            path_loss_exponent: 3.5,
            path_loss_ref_m: 1.0,
            snr_smoothing: 0.01,
            interference_coupling: 0.0,
        }
    }
}

/// UE drop and mobility constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityParams {
    pub cell_radius_m: f64,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    /// UE transmit power in dBm, split equally across the UE's services.
    pub ue_tx_power_dbm: f64,
    /// Services each UE hosts (one per associated slice).
    pub services_per_ue: usize,
}

impl Default for MobilityParams {
    fn default() -> Self {
        Self {
            cell_radius_m: 950.0,
            speed_min_mps: 5.0,
            speed_max_mps: 35.0,
            ue_tx_power_dbm: 25.0,
            services_per_ue: 4,
        }
    }
}

/// SLA range half-widths for category formation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryParams {
    /// Throughput half-width, Mbps.
    pub delta_t_mbps: f64,
    /// Spectral-efficiency half-width, bits/s/Hz.
    pub delta_e: f64,
}

impl Default for CategoryParams {
    fn default() -> Self {
        Self {
            delta_t_mbps: 0.05,
            delta_e: 0.05,
        }
    }
}

/// Full scenario: slices plus shared constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub slices: Vec<SliceConfig>,
    pub power: PowerModel,
    pub optimizer: OptimizerParams,
    pub channel: ChannelParams,
    pub mobility: MobilityParams,
    pub category: CategoryParams,
    pub tti_seconds: f64,
}

impl ScenarioConfig {
    /// The Table-I style four-slice scenario used by the bundled config.
    pub fn table1() -> Self {
        let mk = |slice_id, bp_mhz: f64, r_max, ue_count, channel_model| SliceConfig {
            slice_id,
            bandwidth_part_hz: bp_mhz * 1e6,
            r_max,
            initial_categories: 6,
            services_per_category: 5,
            ue_count,
            numerology: 0,
            channel_model,
        };
        Self {
            slices: vec![
                mk(1, 40.0, 200.0, 205, ChannelModel::Epa5),
                mk(2, 60.0, 300.0, 335, ChannelModel::Eva70),
                mk(3, 70.0, 350.0, 385, ChannelModel::Etu300),
                mk(
                    4,
                    80.0,
                    400.0,
                    455,
                    ChannelModel::Rayleigh { doppler_hz: 100.0 },
                ),
            ],
            power: PowerModel::default(),
            optimizer: OptimizerParams::default(),
            channel: ChannelParams::default(),
            mobility: MobilityParams::default(),
            category: CategoryParams::default(),
            tti_seconds: DEFAULT_TTI_SECONDS,
        }
    }
}

/// One service of one UE in one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UEService {
    pub service_id: usize,
    pub ue_id: usize,
    /// Admitted category index (1-based; index <= M means an original
    /// category).
    pub category_id: usize,
    pub slice_id: usize,
    /// Sliding average SNR s (linear ratio).
    pub avg_snr: f64,
    /// Radio allocation r (continuous S-RS units).
    pub radio_alloc: f64,
    /// Transport allocation b, Hz.
    pub bandwidth_hz: f64,
    /// Utility throughput u = f_d * e^{beta r s} / dt (model units).
    pub throughput: f64,
    /// Spectral efficiency eta, bits/s/Hz.
    pub spectral_eff: f64,
    /// Per-service transmit power, watts.
    pub tx_power_w: f64,
}

/// A slice-in-slice category: services whose (throughput, spectral
/// efficiency) lie within the closed SLA ranges around the center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    /// 1-based index (position in the m+k ordering).
    pub index: usize,
    /// SLA center throughput T^(n), Mbps.
    pub center_throughput: f64,
    /// SLA center spectral efficiency E^(n), bits/s/Hz.
    pub center_spectral_eff: f64,
    /// Throughput half-width, Mbps.
    pub delta_t: f64,
    /// Spectral-efficiency half-width, bits/s/Hz.
    pub delta_e: f64,
    /// Member service ids.
    pub members: Vec<usize>,
    /// l_{m+k}: member count.
    pub capacity: usize,
    /// Whether this is a k-category (formed after the initial M).
    pub is_new: bool,
}

impl Category {
    /// Closed-interval SLA containment test.
    pub fn contains(&self, throughput_mbps: f64, spectral_eff: f64) -> bool {
        (throughput_mbps - self.center_throughput).abs() <= self.delta_t
            && (spectral_eff - self.center_spectral_eff).abs() <= self.delta_e
    }
}

/// Static per-slice resource pools. The virtualized pool is carried as an
/// inert constant and never scheduled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemResources {
    radio_pool: f64,
    virtual_pool: f64,
    transport_pool: f64,
    /// category index -> (service id, radio units, bandwidth Hz)
    pub per_category: BTreeMap<usize, Vec<(usize, f64, f64)>>,
}

impl SystemResources {
    pub fn new(radio_pool: f64, virtual_pool: f64, transport_pool: f64) -> Self {
        Self {
            radio_pool,
            virtual_pool,
            transport_pool,
            per_category: BTreeMap::new(),
        }
    }

    pub fn radio_pool(&self) -> f64 {
        self.radio_pool
    }

    /// Constant after construction.
    pub fn virtual_pool(&self) -> f64 {
        self.virtual_pool
    }

    pub fn transport_pool(&self) -> f64 {
        self.transport_pool
    }

    pub fn granted_radio(&self) -> f64 {
        self.per_category
            .values()
            .flat_map(|v| v.iter().map(|(_, r, _)| *r))
            .sum()
    }

    pub fn granted_bandwidth(&self) -> f64 {
        self.per_category
            .values()
            .flat_map(|v| v.iter().map(|(_, _, b)| *b))
            .sum()
    }
}

/// The live allocation ledger S_l for one slice.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleMap {
    /// (slice, category, service) -> (radio units, bandwidth Hz).
    pub entries: BTreeMap<(usize, usize, usize), (f64, f64)>,
    /// Category index -> demand D_{m+k} = sum_i r_{i,m+k} / r_max.
    pub demands: BTreeMap<usize, f64>,
    /// Slice capacity l-hat: total member count across categories.
    pub total_capacity: usize,
    /// S = M + Delta.
    pub category_count: usize,
    /// Delta: admitted additional categories.
    pub additional_count: usize,
}

impl ScheduleMap {
    pub fn sum_radio(&self) -> f64 {
        self.entries.values().map(|(r, _)| *r).sum()
    }

    pub fn sum_bandwidth(&self) -> f64 {
        self.entries.values().map(|(_, b)| *b).sum()
    }
}

/// A single validation failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NonPositivePool,
    BadWolfeConstants,
    EmptySlice,
    InvalidValue,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Confirms every scenario invariant, or returns the complete list of
/// violations.
pub fn validate_scenario(config: &ScenarioConfig) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    let mut push = |kind, field: &str, message: String| {
        violations.push(Violation {
            kind,
            field: field.to_string(),
            message,
        });
    };

    if config.slices.is_empty() {
        push(
            ViolationKind::EmptySlice,
            "slices",
            "scenario defines no slices".into(),
        );
    }
    for s in &config.slices {
        let tag = format!("slice[{}]", s.slice_id);
        if s.bandwidth_part_hz <= 0.0 {
            push(
                ViolationKind::NonPositivePool,
                &format!("{tag}.bandwidth_part_hz"),
                format!("bandwidth part must be > 0 Hz, got {}", s.bandwidth_part_hz),
            );
        }
        if s.r_max <= 0.0 {
            push(
                ViolationKind::NonPositivePool,
                &format!("{tag}.r_max"),
                format!("radio pool must be > 0 units, got {}", s.r_max),
            );
        }
        if s.initial_categories < 1 {
            push(
                ViolationKind::EmptySlice,
                &format!("{tag}.initial_categories"),
                "at least one initial category is required".into(),
            );
        }
        if s.services_per_category < 1 {
            push(
                ViolationKind::EmptySlice,
                &format!("{tag}.services_per_category"),
                "each category must host at least one service".into(),
            );
        }
        if s.numerology > 4 {
            push(
                ViolationKind::InvalidValue,
                &format!("{tag}.numerology"),
                format!("numerology must be in 0..=4, got {}", s.numerology),
            );
        }
        if s.ue_count < s.initial_categories * s.services_per_category {
            push(
                ViolationKind::InvalidValue,
                &format!("{tag}.ue_count"),
                format!(
                    "{} UEs cannot host the {} initial services",
                    s.ue_count,
                    s.initial_categories * s.services_per_category
                ),
            );
        }
        if let ChannelModel::Rayleigh { doppler_hz } = s.channel_model {
            if doppler_hz < 0.0 {
                push(
                    ViolationKind::InvalidValue,
                    &format!("{tag}.channel_model"),
                    format!("rayleigh doppler must be >= 0 Hz, got {doppler_hz}"),
                );
            }
        }
    }

    let o = &config.optimizer;
    if !(o.c1 > 0.0 && o.c1 < 1.0 && o.c2 > o.c1 && o.c2 < 1.0) {
        push(
            ViolationKind::BadWolfeConstants,
            "optimizer.c1/c2",
            format!("need 0 < c1 < c2 < 1, got c1 = {}, c2 = {}", o.c1, o.c2),
        );
    }
    for (name, v) in [
        ("optimizer.eps_prime", o.eps_prime),
        ("optimizer.sigma_s_sq", o.sigma_s_sq),
        ("optimizer.exponent_cap", o.exponent_cap),
    ] {
        if v <= 0.0 {
            push(
                ViolationKind::InvalidValue,
                name,
                format!("must be > 0, got {v}"),
            );
        }
    }
    if let Some(eps) = o.eps {
        if eps <= 0.0 {
            push(
                ViolationKind::InvalidValue,
                "optimizer.eps",
                format!("must be > 0, got {eps}"),
            );
        }
    }
    if let Some(b_min) = o.b_min_hz {
        if b_min <= 0.0 {
            push(
                ViolationKind::InvalidValue,
                "optimizer.b_min_hz",
                format!("must be > 0 Hz, got {b_min}"),
            );
        }
    }

    let p = &config.power;
    for (name, v) in [
        ("power.circuit_power_w", p.circuit_power_w),
        ("power.static_power_w", p.static_power_w),
        ("power.pa_slope", p.pa_slope),
    ] {
        if v <= 0.0 {
            push(
                ViolationKind::NonPositivePool,
                name,
                format!("must be > 0, got {v}"),
            );
        }
    }

    let c = &config.channel;
    if c.noise_density_w_hz <= 0.0 {
        push(
            ViolationKind::NonPositivePool,
            "channel.noise_density_w_hz",
            format!("must be > 0 W/Hz, got {}", c.noise_density_w_hz),
        );
    }
    if c.antennas == 0 {
        push(
            ViolationKind::InvalidValue,
            "channel.antennas",
            "at least one antenna is required".into(),
        );
    }
    if !(0.0..=1.0).contains(&c.snr_smoothing) || c.snr_smoothing == 0.0 {
        push(
            ViolationKind::InvalidValue,
            "channel.snr_smoothing",
            format!("must be in (0, 1], got {}", c.snr_smoothing),
        );
    }

    let m = &config.mobility;
    if m.cell_radius_m <= 0.0 {
        push(
            ViolationKind::InvalidValue,
            "mobility.cell_radius_m",
            format!("must be > 0 m, got {}", m.cell_radius_m),
        );
    }
    if m.speed_min_mps > m.speed_max_mps {
        push(
            ViolationKind::InvalidValue,
            "mobility.speed",
            format!(
                "speed_min {} exceeds speed_max {}",
                m.speed_min_mps, m.speed_max_mps
            ),
        );
    }
    if m.services_per_ue == 0 {
        push(
            ViolationKind::InvalidValue,
            "mobility.services_per_ue",
            "each UE must host at least one service".into(),
        );
    }

    if config.category.delta_t_mbps <= 0.0 || config.category.delta_e <= 0.0 {
        push(
            ViolationKind::InvalidValue,
            "category.delta",
            format!(
                "SLA half-widths must be > 0, got delta_t = {} Mbps, delta_e = {}",
                config.category.delta_t_mbps, config.category.delta_e
            ),
        );
    }
    if config.tti_seconds <= 0.0 {
        push(
            ViolationKind::InvalidValue,
            "tti_seconds",
            format!("must be > 0 s, got {}", config.tti_seconds),
        );
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}
