//! Scenario file loading. The file is TOML with one `[[slice]]` table per
//! network slice plus shared sections; field names carry their units
//! (MHz, dBm, m/s). See `configs/table1.cfg` for the documented schema.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::channel::ChannelModel;
use crate::model::{
    CategoryParams, ChannelParams, MobilityParams, OptimizerParams, PowerModel, ScenarioConfig,
    SliceConfig, DEFAULT_TTI_SECONDS,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("slice {slice_id}: unknown channel tag {tag:?} (expected epa5 | eva70 | etu300 | rayleigh(<hz>))")]
    BadChannelTag { slice_id: usize, tag: String },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default = "default_tti")]
    tti_seconds: f64,
    #[serde(default)]
    power: RawPower,
    #[serde(default)]
    optimizer: RawOptimizer,
    #[serde(default)]
    channel: RawChannel,
    #[serde(default)]
    mobility: RawMobility,
    #[serde(default)]
    category: RawCategory,
    #[serde(rename = "slice", default)]
    slices: Vec<RawSlice>,
}

fn default_tti() -> f64 {
    DEFAULT_TTI_SECONDS
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSlice {
    id: usize,
    /// Bandwidth part (maximum S-TS pool), MHz.
    bandwidth_part_mhz: f64,
    /// Maximum S-RS units.
    r_max: f64,
    initial_categories: usize,
    services_per_category: usize,
    ue_count: usize,
    #[serde(default)]
    numerology: u8,
    /// Channel tag: `epa5 | eva70 | etu300 | rayleigh(<hz>)`.
    channel: String,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawPower {
    circuit_power_w: Option<f64>,
    static_power_w: Option<f64>,
    pa_slope: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawOptimizer {
    c1: Option<f64>,
    c2: Option<f64>,
    eps: Option<f64>,
    eps_prime: Option<f64>,
    eps2: Option<f64>,
    beta: Option<f64>,
    sigma_s_sq: Option<f64>,
    max_iters: Option<usize>,
    b_min_hz: Option<f64>,
    exponent_cap: Option<f64>,
    beta_refresh_ttis: Option<usize>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawChannel {
    /// Noise density, dBm/Hz.
    noise_density_dbm_hz: Option<f64>,
    antennas: Option<usize>,
    path_loss_ref_db: Option<f64>,
    path_loss_exponent: Option<f64>,
    path_loss_ref_m: Option<f64>,
    snr_smoothing: Option<f64>,
    interference_coupling: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawMobility {
    cell_radius_m: Option<f64>,
    speed_min_mps: Option<f64>,
    speed_max_mps: Option<f64>,
    ue_tx_power_dbm: Option<f64>,
    services_per_ue: Option<usize>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawCategory {
    delta_t_mbps: Option<f64>,
    delta_e: Option<f64>,
}

/// Load and convert a scenario file. Parsing and unit conversion only;
/// invariants are checked separately by [`crate::model::validate_scenario`].
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

/// Parse scenario TOML text.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let raw: RawScenario = toml::from_str(text)?;

    let power_defaults = PowerModel::default();
    let power = PowerModel {
        circuit_power_w: raw
            .power
            .circuit_power_w
            .unwrap_or(power_defaults.circuit_power_w),
        static_power_w: raw
            .power
            .static_power_w
            .unwrap_or(power_defaults.static_power_w),
        pa_slope: raw.power.pa_slope.unwrap_or(power_defaults.pa_slope),
    };

    let od = OptimizerParams::default();
    let optimizer = OptimizerParams {
        c1: raw.optimizer.c1.unwrap_or(od.c1),
        c2: raw.optimizer.c2.unwrap_or(od.c2),
        eps: raw.optimizer.eps,
        eps_prime: raw.optimizer.eps_prime.unwrap_or(od.eps_prime),
        eps2: raw.optimizer.eps2,
        beta: raw.optimizer.beta.unwrap_or(od.beta),
        sigma_s_sq: raw.optimizer.sigma_s_sq.unwrap_or(od.sigma_s_sq),
        max_iters: raw.optimizer.max_iters.unwrap_or(od.max_iters),
        b_min_hz: raw.optimizer.b_min_hz,
        exponent_cap: raw.optimizer.exponent_cap.unwrap_or(od.exponent_cap),
        beta_refresh_ttis: raw
            .optimizer
            .beta_refresh_ttis
            .unwrap_or(od.beta_refresh_ttis),
    };

    let cd = ChannelParams::default();
    let channel = ChannelParams {
        noise_density_w_hz: raw
            .channel
            .noise_density_dbm_hz
            .map(|dbm| 10f64.powf((dbm - 30.0) / 10.0))
            .unwrap_or(cd.noise_density_w_hz),
        antennas: raw.channel.antennas.unwrap_or(cd.antennas),
        path_loss_ref_db: raw.channel.path_loss_ref_db.unwrap_or(cd.path_loss_ref_db),
        path_loss_exponent: raw
            .channel
            .path_loss_exponent
            .unwrap_or(cd.path_loss_exponent),
        path_loss_ref_m: raw.channel.path_loss_ref_m.unwrap_or(cd.path_loss_ref_m),
        snr_smoothing: raw.channel.snr_smoothing.unwrap_or(cd.snr_smoothing),
        interference_coupling: raw
            .channel
            .interference_coupling
            .unwrap_or(cd.interference_coupling),
    };

    let md = MobilityParams::default();
    let mobility = MobilityParams {
        cell_radius_m: raw.mobility.cell_radius_m.unwrap_or(md.cell_radius_m),
        speed_min_mps: raw.mobility.speed_min_mps.unwrap_or(md.speed_min_mps),
        speed_max_mps: raw.mobility.speed_max_mps.unwrap_or(md.speed_max_mps),
        ue_tx_power_dbm: raw.mobility.ue_tx_power_dbm.unwrap_or(md.ue_tx_power_dbm),
        services_per_ue: raw.mobility.services_per_ue.unwrap_or(md.services_per_ue),
    };

    let catd = CategoryParams::default();
    let category = CategoryParams {
        delta_t_mbps: raw.category.delta_t_mbps.unwrap_or(catd.delta_t_mbps),
        delta_e: raw.category.delta_e.unwrap_or(catd.delta_e),
    };

    let mut slices = Vec::with_capacity(raw.slices.len());
    for rs in raw.slices {
        let channel_model =
            ChannelModel::parse_tag(&rs.channel).ok_or(ConfigError::BadChannelTag {
                slice_id: rs.id,
                tag: rs.channel.clone(),
            })?;
        slices.push(SliceConfig {
            slice_id: rs.id,
            bandwidth_part_hz: rs.bandwidth_part_mhz * 1e6,
            r_max: rs.r_max,
            initial_categories: rs.initial_categories,
            services_per_category: rs.services_per_category,
            ue_count: rs.ue_count,
            numerology: rs.numerology,
            channel_model,
        });
    }

    Ok(ScenarioConfig {
        slices,
        power,
        optimizer,
        channel,
        mobility,
        category,
        tti_seconds: raw.tti_seconds,
    })
}
