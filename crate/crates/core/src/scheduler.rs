//! Per-TTI orchestration for one slice: the learning pass, the per-service
//! bandwidth solve, spectral-efficiency and ledger updates, and the
//! category-growth loop.
//!
//! One scheduler instance owns one slice; slices never share mutable state.
//! Everything random flows through the slice's seeded stream, so a (config,
//! seed) pair fully determines the trajectory.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::category::form_categories;
use crate::channel::{sample_avg_snr, ChannelState, PathLoss};
use crate::model::{
    Category, CategoryParams, ChannelParams, MobilityParams, OptimizerParams, PowerModel,
    ScenarioConfig, ScheduleMap, SliceConfig, UEService,
};
use crate::pareto::{epsilon_constraint_minimize, f2, pareto_classify, MopParams, ParetoTag};
use crate::utility::{
    calibrate_beta, compute_learn_cache, solve_radio_alloc, subcarrier_block_hz, AllocFlag,
    LearnCache, ServicePoint, SolveConfig, UtilityError,
};

/// One UE tracked by a slice: placement, mobility, and large-scale gain.
#[derive(Debug, Clone, PartialEq)]
pub struct UeState {
    pub ue_id: usize,
    pub pos: (f64, f64),
    pub target: (f64, f64),
    pub speed_mps: f64,
    pub distance_m: f64,
    pub path_gain: f64,
}

/// One service and its live channel/optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceState {
    pub service: UEService,
    pub channel: ChannelState,
    /// Linear SINR at the current bandwidth.
    pub sinr: f64,
    pub flag: AllocFlag,
    pub verdict: ParetoTag,
    pub scheduled: bool,
}

/// Admitted (growth) category group: a stable index and its member services.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceGroup {
    pub index: usize,
    pub is_new: bool,
    pub members: Vec<usize>,
}

/// Why an admission attempt did not commit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RejectReason {
    /// The post-learning allocation total would violate the radio budget.
    Budget { violating_sum: f64 },
    /// The slice's unused UE pool cannot host another category.
    PoolExhausted,
}

/// Outcome of the per-TTI admission attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdmitOutcome {
    Admitted {
        category_index: usize,
    },
    Rejected(RejectReason),
    /// Growth already frozen by an earlier budget rejection.
    Frozen,
}

/// One TTI's observable record for a slice.
#[derive(Debug, Clone, PartialEq)]
pub struct TtiRecord {
    pub t: usize,
    pub slice_id: usize,
    /// S = M + Delta.
    pub category_count: usize,
    pub additional: usize,
    /// Sum of utility throughputs over scheduled services, model units.
    pub cell_thr_paper: f64,
    /// Sum of rate-form utility throughputs, Mbps.
    pub cell_thr_mbps: f64,
    pub sum_r: f64,
    pub sum_b: f64,
    pub scheduled_services: usize,
    /// SLA-partition category sizes after the end-of-tick re-formation.
    pub partition_sizes: Vec<usize>,
    pub admission: Option<AdmitOutcome>,
}

/// Capacity/throughput counters for one slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityReport {
    pub category_count: usize,
    pub additional: usize,
    /// l-hat: total member count.
    pub total_capacity: usize,
    pub thr_m_paper: f64,
    pub thr_s_paper: f64,
    pub thr_delta_paper: f64,
    pub thr_m_mbps: f64,
    pub thr_s_mbps: f64,
    pub thr_delta_mbps: f64,
}

/// Scheduling state of one slice.
#[derive(Debug, Clone)]
pub struct SliceState {
    pub config: SliceConfig,
    pub power: PowerModel,
    pub optimizer: OptimizerParams,
    pub channel_params: ChannelParams,
    pub mobility: MobilityParams,
    pub category_params: CategoryParams,
    pub tti_seconds: f64,
    pub beta: f64,
    pub services: Vec<ServiceState>,
    pub groups: Vec<ServiceGroup>,
    pub ues: Vec<UeState>,
    /// Pool indices not yet hosting a service in this slice.
    unused_ues: Vec<usize>,
    pub schedule: ScheduleMap,
    /// SLA partition from the last re-formation.
    pub partition: Vec<Category>,
    cache: Option<LearnCache>,
    growth_frozen: bool,
    path_loss: PathLoss,
    rng: ChaCha8Rng,
}

impl SliceState {
    /// Build the initial slice: UEs placed uniformly in the cell disc, M
    /// initial categories of f_u services each, channels in their stationary
    /// state.
    pub fn build(config: &SliceConfig, scenario: &ScenarioConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ (config.slice_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let radius = scenario.mobility.cell_radius_m;
        let path_loss = PathLoss {
            ref_db: scenario.channel.path_loss_ref_db,
            exponent: scenario.channel.path_loss_exponent,
            ref_m: scenario.channel.path_loss_ref_m,
            cell_radius_m: radius,
        };

        let mut ues = Vec::with_capacity(config.ue_count);
        for ue_id in 0..config.ue_count {
            let pos = sample_disc(radius, &mut rng);
            let target = sample_disc(radius, &mut rng);
            let speed_mps =
                rng.gen_range(scenario.mobility.speed_min_mps..=scenario.mobility.speed_max_mps);
            let mut ue = UeState {
                ue_id,
                pos,
                target,
                speed_mps,
                distance_m: 0.0,
                path_gain: 1.0,
            };
            refresh_large_scale(&mut ue, &path_loss);
            ues.push(ue);
        }

        let tx_power_w = 10f64.powf((scenario.mobility.ue_tx_power_dbm - 30.0) / 10.0)
            / scenario.mobility.services_per_ue as f64;
        let doppler = config.channel_model.doppler_hz();
        let b_min = scenario
            .optimizer
            .b_min_hz
            .unwrap_or_else(|| subcarrier_block_hz(config.numerology));

        let initial = config.initial_categories * config.services_per_category;
        let mut services = Vec::with_capacity(initial);
        let mut groups = Vec::with_capacity(config.initial_categories);
        let mut unused_ues: Vec<usize> = (0..config.ue_count).collect();
        for cat in 0..config.initial_categories {
            let mut members = Vec::with_capacity(config.services_per_category);
            for _ in 0..config.services_per_category {
                let pick = rng.gen_range(0..unused_ues.len());
                let ue_idx = unused_ues.swap_remove(pick);
                let service_id = services.len();
                let channel = ChannelState::init(
                    scenario.channel.antennas,
                    doppler,
                    scenario.channel.noise_density_w_hz,
                    ues[ue_idx].distance_m,
                    1.0,
                    &mut rng,
                );
                let avg_snr = sample_avg_snr(scenario.optimizer.sigma_s_sq, &mut rng);
                services.push(ServiceState {
                    service: UEService {
                        service_id,
                        ue_id: ues[ue_idx].ue_id,
                        category_id: cat + 1,
                        slice_id: config.slice_id,
                        avg_snr,
                        radio_alloc: 0.0,
                        bandwidth_hz: b_min,
                        throughput: 0.0,
                        spectral_eff: 1.0,
                        tx_power_w,
                    },
                    channel,
                    sinr: 0.0,
                    flag: AllocFlag::FairShare,
                    verdict: ParetoTag::WeaklyParetoOptimal,
                    scheduled: false,
                });
                members.push(service_id);
            }
            groups.push(ServiceGroup {
                index: cat + 1,
                is_new: false,
                members,
            });
        }

        let mut state = Self {
            config: config.clone(),
            power: scenario.power,
            optimizer: scenario.optimizer.clone(),
            channel_params: scenario.channel.clone(),
            mobility: scenario.mobility.clone(),
            category_params: scenario.category,
            tti_seconds: scenario.tti_seconds,
            beta: scenario.optimizer.beta,
            services,
            groups,
            ues,
            unused_ues,
            schedule: ScheduleMap::default(),
            partition: Vec::new(),
            cache: None,
            growth_frozen: false,
            path_loss,
            rng,
        };
        state.refresh_sinr();
        state
    }

    pub fn m_count(&self) -> usize {
        self.config.initial_categories
    }

    pub fn additional(&self) -> usize {
        self.groups.len() - self.config.initial_categories
    }

    pub fn growth_frozen(&self) -> bool {
        self.growth_frozen
    }

    pub fn unused_pool_len(&self) -> usize {
        self.unused_ues.len()
    }

    fn b_min(&self) -> f64 {
        self.optimizer
            .b_min_hz
            .unwrap_or_else(|| subcarrier_block_hz(self.config.numerology))
    }

    fn b_max(&self) -> f64 {
        (self.config.bandwidth_part_hz / self.services.len().max(1) as f64).max(self.b_min())
    }

    /// Advance mobility, fading, and the sliding average SNR by one tick.
    /// Called by the harness before [`run_tti`](Self::run_tti).
    pub fn evolve_environment(&mut self) {
        let dt = self.tti_seconds;
        for ue in &mut self.ues {
            walk_waypoint(ue, dt, self.mobility.cell_radius_m, &mut self.rng);
            refresh_large_scale(ue, &self.path_loss);
        }
        let w = self.channel_params.snr_smoothing;
        let antennas = self.channel_params.antennas as f64;
        let sigma = self.optimizer.sigma_s_sq;
        for svc in &mut self.services {
            crate::channel::evolve_channel_in_place(&mut svc.channel, dt, &mut self.rng);
            // The average SNR tracks the normalized fading power at the
            // configured exponential mean.
            let inst = sigma * svc.channel.beam_gain_sq() / antennas;
            svc.service.avg_snr = (1.0 - w) * svc.service.avg_snr + w * inst;
        }
        self.refresh_sinr();
    }

    /// Per-service received power at the serving unit, including path gain.
    fn received_powers(&self) -> Vec<f64> {
        self.services
            .iter()
            .map(|s| {
                let ue = &self.ues[s.service.ue_id];
                s.channel.beam_gain_sq() * s.service.tx_power_w * ue.path_gain
            })
            .collect()
    }

    /// Recompute per-service SINR at current bandwidths, with the configured
    /// co-slice interference coupling.
    fn refresh_sinr(&mut self) {
        let coupling = self.channel_params.interference_coupling;
        let n0 = self.channel_params.noise_density_w_hz;
        let b_min = self.b_min();
        let received = self.received_powers();
        let total: f64 = received.iter().sum();
        for (svc, own) in self.services.iter_mut().zip(&received) {
            let b = svc.service.bandwidth_hz.max(b_min);
            let interference = coupling * (total - own);
            svc.sinr = own / (n0 * b + interference);
        }
    }

    fn build_points(&self) -> Vec<ServicePoint> {
        let m = self.m_count();
        self.services
            .iter()
            .map(|s| ServicePoint {
                service_id: s.service.service_id,
                category_index: s.service.category_id,
                is_new: s.service.category_id > m,
                radio_alloc: s.service.radio_alloc,
                avg_snr: s.service.avg_snr,
                bandwidth_hz: s.service.bandwidth_hz,
                sinr: s.sinr.max(1e-12),
            })
            .collect()
    }

    fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            beta: self.beta,
            sigma_s_sq: self.optimizer.sigma_s_sq,
            r_max: self.config.r_max,
            capacity: self.config.ue_count,
            m_count: self.m_count(),
            total_cats: self.groups.len(),
            mu: self.config.numerology,
            dt: self.tti_seconds,
            exponent_cap: self.optimizer.exponent_cap,
            sweep_tol: 1e-6,
            max_sweeps: 100,
        }
    }

    /// Shannon cell throughput at current bandwidths and SINRs.
    pub fn shannon_cell_throughput(&self) -> f64 {
        self.services
            .iter()
            .map(|s| s.service.bandwidth_hz * s.sinr.ln_1p())
            .sum()
    }

    /// Learning pass: radio allocations and utility throughputs for the
    /// whole slice. Returns the pre-projection sum.
    fn learn_radio(&mut self) -> Result<f64, UtilityError> {
        let mut points = self.build_points();
        let cfg = self.solve_config();
        let has_new = self.additional() > 0;
        let cache = if has_new { self.cache } else { None };
        let sol = solve_radio_alloc(&mut points, &cfg, cache.as_ref())?;
        for (i, svc) in self.services.iter_mut().enumerate() {
            svc.flag = sol.flags[i];
            match sol.throughputs[i] {
                Some(u) => {
                    svc.service.radio_alloc = sol.allocations[i];
                    svc.service.throughput = u;
                    svc.scheduled = true;
                }
                None => {
                    // Divergent utility: unscheduled this tick, resources
                    // released, retried next tick.
                    svc.service.radio_alloc = 0.0;
                    svc.service.throughput = 0.0;
                    svc.scheduled = false;
                }
            }
        }
        if !has_new {
            self.cache = sol.cache;
        }
        Ok(sol.raw_sum)
    }

    fn mop_params(&self, idx: usize, total_received: f64, own_received: f64) -> MopParams {
        let coupling = self.channel_params.interference_coupling;
        MopParams {
            power: self.power,
            tx_power_w: self.services[idx].service.tx_power_w,
            signal_power_w: own_received,
            interference_w: coupling * (total_received - own_received),
            n0: self.channel_params.noise_density_w_hz,
            mu: self.config.numerology,
            dt: self.tti_seconds,
        }
    }

    /// Bandwidth pass: per-service epsilon-constraint solve, the transport
    /// pool projection, and an SINR refresh at the final bandwidths.
    fn solve_bandwidths(&mut self) {
        let received = self.received_powers();
        let total: f64 = received.iter().sum();
        let b_min = self.b_min();
        let b_max = self.b_max();
        let opt = self.optimizer.clone();

        for (i, own) in received.iter().copied().enumerate() {
            if !self.services[i].scheduled {
                continue;
            }
            let params = self.mop_params(i, total, own);
            let b0 = self.services[i].service.bandwidth_hz.clamp(b_min, b_max);
            match epsilon_constraint_minimize(
                &params,
                opt.c1,
                opt.c2,
                opt.eps,
                opt.eps_prime,
                opt.max_iters,
                b0,
                b_min,
                b_max,
            ) {
                Ok(sol) => {
                    let eps2 = opt
                        .eps2
                        .or(opt.eps)
                        .unwrap_or_else(|| f2(b_max, &params).unwrap_or(sol.f2_value));
                    let verdict = pareto_classify(sol.f2_value, eps2, 1e-9);
                    let svc = &mut self.services[i];
                    svc.service.bandwidth_hz = sol.b_star;
                    svc.sinr = sol.gamma_star;
                    svc.verdict = verdict.tag;
                    log::debug!(
                        "bandwidth_solve slice={} service={} iterations={} b_star={:.3} \
                         gamma_star={:.6e} f1={:.6e} f2={:.6e} verdict={}",
                        self.config.slice_id,
                        svc.service.service_id,
                        sol.iterations,
                        sol.b_star,
                        sol.gamma_star,
                        sol.f1_value,
                        sol.f2_value,
                        verdict.tag,
                    );
                }
                Err(err) => {
                    let svc = &mut self.services[i];
                    log::debug!(
                        "bandwidth_solve slice={} service={} failed: {err}",
                        self.config.slice_id,
                        svc.service.service_id,
                    );
                    svc.scheduled = false;
                    svc.service.bandwidth_hz = 0.0;
                    svc.service.radio_alloc = 0.0;
                }
            }
        }

        self.project_transport_pool();

        // SINR at the final bandwidths.
        let coupling = self.channel_params.interference_coupling;
        let n0 = self.channel_params.noise_density_w_hz;
        for (i, svc) in self.services.iter_mut().enumerate() {
            if svc.scheduled && svc.service.bandwidth_hz > 0.0 {
                let interference = coupling * (total - received[i]);
                svc.sinr = received[i] / (n0 * svc.service.bandwidth_hz + interference);
            }
        }
    }

    /// Scale scheduled bandwidths down to the transport pool when their sum
    /// exceeds it.
    fn project_transport_pool(&mut self) {
        let sum_b: f64 = self
            .services
            .iter()
            .filter(|s| s.scheduled)
            .map(|s| s.service.bandwidth_hz)
            .sum();
        if sum_b > self.config.bandwidth_part_hz {
            let scale = self.config.bandwidth_part_hz / sum_b;
            for svc in &mut self.services {
                if svc.scheduled {
                    svc.service.bandwidth_hz *= scale;
                }
            }
        }
    }

    /// Spectral-efficiency update from the utility throughput and the power
    /// model.
    fn update_spectral_efficiency(&mut self) {
        let p = self.power;
        for svc in &mut self.services {
            if svc.scheduled && svc.service.bandwidth_hz > 0.0 {
                let u = svc.service.throughput;
                let t = svc.service.tx_power_w;
                svc.service.spectral_eff = u * (p.circuit_power_w + t)
                    / ((p.static_power_w + p.pa_slope * t) * svc.service.bandwidth_hz);
            }
        }
    }

    fn update_schedule_map(&mut self) {
        self.schedule.entries.clear();
        self.schedule.demands.clear();
        for group in &self.groups {
            let mut demand = 0.0;
            for &sid in &group.members {
                let svc = &self.services[sid];
                self.schedule.entries.insert(
                    (self.config.slice_id, group.index, sid),
                    (svc.service.radio_alloc, svc.service.bandwidth_hz),
                );
                demand += svc.service.radio_alloc;
            }
            self.schedule
                .demands
                .insert(group.index, demand / self.config.r_max);
        }
        self.schedule.total_capacity = self.services.len();
        self.schedule.category_count = self.groups.len();
        self.schedule.additional_count = self.additional();
    }

    /// Attempt to admit one new category of f_u services drawn from the
    /// unused UE pool. Commits only if the re-learnt raw (pre-projection)
    /// allocation total still satisfies the radio budget; otherwise the
    /// scheduling state is left untouched (the random stream does advance).
    pub fn admit_category(&mut self) -> AdmitOutcome {
        if self.growth_frozen {
            return AdmitOutcome::Frozen;
        }
        let f_u = self.config.services_per_category;
        if self.unused_ues.len() < f_u {
            return AdmitOutcome::Rejected(RejectReason::PoolExhausted);
        }

        // Draw candidate UEs against a copy of the pool.
        let mut pool = self.unused_ues.clone();
        let mut picked = Vec::with_capacity(f_u);
        for _ in 0..f_u {
            let k = self.rng.gen_range(0..pool.len());
            picked.push(pool.swap_remove(k));
        }
        let b_min = self.b_min();
        let doppler = self.config.channel_model.doppler_hz();
        let tx_power_w = 10f64.powf((self.mobility.ue_tx_power_dbm - 30.0) / 10.0)
            / self.mobility.services_per_ue as f64;
        let new_index = self.groups.len() + 1;
        let n0 = self.channel_params.noise_density_w_hz;

        let mut candidates = Vec::with_capacity(f_u);
        for &ue_idx in &picked {
            let channel = ChannelState::init(
                self.channel_params.antennas,
                doppler,
                n0,
                self.ues[ue_idx].distance_m,
                1.0,
                &mut self.rng,
            );
            let avg_snr = sample_avg_snr(self.optimizer.sigma_s_sq, &mut self.rng);
            let own = channel.beam_gain_sq() * tx_power_w * self.ues[ue_idx].path_gain;
            let sinr = own / (n0 * b_min);
            candidates.push(ServiceState {
                service: UEService {
                    service_id: self.services.len() + candidates.len(),
                    ue_id: self.ues[ue_idx].ue_id,
                    category_id: new_index,
                    slice_id: self.config.slice_id,
                    avg_snr,
                    radio_alloc: 0.0,
                    bandwidth_hz: b_min,
                    throughput: 0.0,
                    spectral_eff: 1.0,
                    tx_power_w,
                },
                channel,
                sinr,
                flag: AllocFlag::FairShare,
                verdict: ParetoTag::WeaklyParetoOptimal,
                scheduled: false,
            });
        }

        // Provisional learning pass over existing plus candidates.
        let mut points = self.build_points();
        points.extend(candidates.iter().map(|s| ServicePoint {
            service_id: s.service.service_id,
            category_index: new_index,
            is_new: true,
            radio_alloc: 0.0,
            avg_snr: s.service.avg_snr,
            bandwidth_hz: s.service.bandwidth_hz,
            sinr: s.sinr.max(1e-12),
        }));
        let cfg = SolveConfig {
            total_cats: new_index,
            ..self.solve_config()
        };
        let sol = match solve_radio_alloc(&mut points, &cfg, self.cache.as_ref()) {
            Ok(sol) => sol,
            Err(err) => {
                log::debug!(
                    "admission learning pass failed on slice {}: {err}",
                    self.config.slice_id
                );
                return AdmitOutcome::Rejected(RejectReason::Budget {
                    violating_sum: f64::INFINITY,
                });
            }
        };
        // The comparison carries a relative epsilon so accumulated rounding
        // in a sum that exactly meets the budget cannot flip the decision;
        // the hard constraint itself is enforced by the projection.
        if sol.raw_sum > self.config.r_max * (1.0 + 1e-9) {
            self.growth_frozen = true;
            return AdmitOutcome::Rejected(RejectReason::Budget {
                violating_sum: sol.raw_sum,
            });
        }

        // Commit: apply the re-learnt allocations and append the category.
        for (i, svc) in self.services.iter_mut().enumerate() {
            svc.flag = sol.flags[i];
            if let Some(u) = sol.throughputs[i] {
                svc.service.radio_alloc = sol.allocations[i];
                svc.service.throughput = u;
            }
        }
        let existing_count = self.services.len();
        let mut members = Vec::with_capacity(f_u);
        for (j, mut cand) in candidates.into_iter().enumerate() {
            let k = existing_count + j;
            cand.flag = sol.flags[k];
            if let Some(u) = sol.throughputs[k] {
                cand.service.radio_alloc = sol.allocations[k];
                cand.service.throughput = u;
                cand.scheduled = true;
            }
            members.push(cand.service.service_id);
            self.services.push(cand);
        }
        self.groups.push(ServiceGroup {
            index: new_index,
            is_new: true,
            members,
        });
        self.unused_ues = pool;
        AdmitOutcome::Admitted {
            category_index: new_index,
        }
    }

    /// Execute one TTI: learn radio, solve bandwidth, re-learn under the new
    /// bandwidths, update efficiency and the ledger, attempt growth, and
    /// re-form the SLA partition.
    pub fn run_tti(&mut self, t: usize) -> TtiRecord {
        debug_assert!(t >= 1);

        // Periodic weight calibration.
        if t == 1
            || (self.optimizer.beta_refresh_ttis > 0
                && t.is_multiple_of(self.optimizer.beta_refresh_ttis))
        {
            let shannon = self.shannon_cell_throughput();
            let points = self.build_points();
            match calibrate_beta(
                &points,
                self.optimizer.sigma_s_sq,
                self.config.r_max,
                shannon,
                self.config.numerology,
                self.tti_seconds,
                1.0,
                self.optimizer.exponent_cap,
            ) {
                Ok(beta) => {
                    self.beta = beta;
                    log::debug!(
                        "calibrated beta slice={} t={} beta={:.6e}",
                        self.config.slice_id,
                        t,
                        beta
                    );
                }
                Err(err) => {
                    log::debug!(
                        "beta calibration kept previous value on slice {} at t={}: {err}",
                        self.config.slice_id,
                        t
                    );
                }
            }
            // Refresh the reusable rate state alongside the weight.
            if self.additional() > 0 {
                let points = self.build_points();
                self.cache = compute_learn_cache(
                    &points,
                    self.beta,
                    self.config.numerology,
                    self.tti_seconds,
                    self.m_count(),
                );
            }
        }

        // Learning and bandwidth passes.
        if let Err(err) = self.learn_radio() {
            log::debug!(
                "radio learning kept previous allocations on slice {} at t={}: {err}",
                self.config.slice_id,
                t
            );
        }
        self.solve_bandwidths();
        if let Err(err) = self.learn_radio() {
            log::debug!(
                "radio re-learning kept previous allocations on slice {} at t={}: {err}",
                self.config.slice_id,
                t
            );
        }
        self.update_spectral_efficiency();
        self.update_schedule_map();

        // One admission attempt per tick. New services enter at the minimum
        // bandwidth grain, so the transport pool is re-projected.
        let admission = Some(self.admit_category());
        if matches!(admission, Some(AdmitOutcome::Admitted { .. })) {
            self.project_transport_pool();
            self.update_schedule_map();
        }

        // Re-form the SLA partition on current metrics.
        let fd = subcarrier_block_hz(self.config.numerology);
        let metrics: Vec<(usize, f64, f64)> = self
            .services
            .iter()
            .map(|s| {
                let u_mbps = fd
                    * (self.beta * s.service.radio_alloc * s.service.avg_snr)
                        .min(self.optimizer.exponent_cap)
                        .exp()
                    / 1e6;
                (s.service.service_id, u_mbps, s.service.spectral_eff)
            })
            .collect();
        let (partition, _) = form_categories(
            &metrics,
            self.category_params.delta_t_mbps,
            self.category_params.delta_e,
        );
        self.partition = partition;

        // Constraint safety at the tick boundary.
        let sum_r: f64 = self.services.iter().map(|s| s.service.radio_alloc).sum();
        let sum_b: f64 = self
            .services
            .iter()
            .filter(|s| s.scheduled)
            .map(|s| s.service.bandwidth_hz)
            .sum();
        debug_assert!(sum_r <= self.config.r_max * (1.0 + 1e-9));
        debug_assert!(sum_b <= self.config.bandwidth_part_hz * (1.0 + 1e-9));

        let scheduled = self.services.iter().filter(|s| s.scheduled).count();
        let cell_thr_paper: f64 = self
            .services
            .iter()
            .filter(|s| s.scheduled)
            .map(|s| s.service.throughput)
            .sum();
        let cell_thr_mbps: f64 = self
            .services
            .iter()
            .filter(|s| s.scheduled)
            .map(|s| {
                fd * (self.beta * s.service.radio_alloc * s.service.avg_snr)
                    .min(self.optimizer.exponent_cap)
                    .exp()
                    / 1e6
            })
            .sum();

        TtiRecord {
            t,
            slice_id: self.config.slice_id,
            category_count: self.groups.len(),
            additional: self.additional(),
            cell_thr_paper,
            cell_thr_mbps,
            sum_r,
            sum_b,
            scheduled_services: scheduled,
            partition_sizes: self.partition.iter().map(|c| c.capacity).collect(),
            admission,
        }
    }

    /// Capacity and throughput counters (the O1/O2 view).
    pub fn capacity_report(&self) -> CapacityReport {
        let m = self.m_count();
        let fd = subcarrier_block_hz(self.config.numerology);
        let mut thr_m_paper = 0.0;
        let mut thr_s_paper = 0.0;
        let mut thr_m_mbps = 0.0;
        let mut thr_s_mbps = 0.0;
        for s in &self.services {
            if !s.scheduled {
                continue;
            }
            let mbps = fd
                * (self.beta * s.service.radio_alloc * s.service.avg_snr)
                    .min(self.optimizer.exponent_cap)
                    .exp()
                / 1e6;
            thr_s_paper += s.service.throughput;
            thr_s_mbps += mbps;
            if s.service.category_id <= m {
                thr_m_paper += s.service.throughput;
                thr_m_mbps += mbps;
            }
        }
        CapacityReport {
            category_count: self.groups.len(),
            additional: self.additional(),
            total_capacity: self.services.len(),
            thr_m_paper,
            thr_s_paper,
            thr_delta_paper: thr_s_paper - thr_m_paper,
            thr_m_mbps,
            thr_s_mbps,
            thr_delta_mbps: thr_s_mbps - thr_m_mbps,
        }
    }
}

fn sample_disc<R: Rng>(radius: f64, rng: &mut R) -> (f64, f64) {
    // Uniform over the disc: radius via the square root of a uniform draw.
    let r = radius * rng.gen_range(0.0f64..=1.0).sqrt();
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    (r * theta.cos(), r * theta.sin())
}

fn walk_waypoint<R: Rng>(ue: &mut UeState, dt: f64, radius: f64, rng: &mut R) {
    let step = ue.speed_mps * dt;
    let (dx, dy) = (ue.target.0 - ue.pos.0, ue.target.1 - ue.pos.1);
    let dist = (dx * dx + dy * dy).sqrt();
    if dist <= step {
        ue.pos = ue.target;
        ue.target = sample_disc(radius, rng);
    } else {
        ue.pos.0 += step * dx / dist;
        ue.pos.1 += step * dy / dist;
    }
}

fn refresh_large_scale(ue: &mut UeState, loss: &PathLoss) {
    let d = (ue.pos.0 * ue.pos.0 + ue.pos.1 * ue.pos.1)
        .sqrt()
        .clamp(loss.ref_m, loss.cell_radius_m);
    ue.distance_m = d;
    let db = loss.ref_db + 10.0 * loss.exponent * (d / loss.ref_m).log10();
    ue.path_gain = 10f64.powf(-db / 10.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_scenario;

    fn small_scenario() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::table1();
        cfg.slices.truncate(1);
        cfg.slices[0].ue_count = 40;
        cfg.slices[0].r_max = 20.0;
        cfg.slices[0].initial_categories = 2;
        cfg.slices[0].services_per_category = 3;
        cfg.optimizer.beta_refresh_ttis = 50;
        validate_scenario(&cfg).unwrap();
        cfg
    }

    fn build_small(seed: u64) -> SliceState {
        let cfg = small_scenario();
        SliceState::build(&cfg.slices[0], &cfg, seed)
    }

    #[test]
    fn build_places_initial_categories() {
        let state = build_small(7);
        assert_eq!(state.services.len(), 6);
        assert_eq!(state.groups.len(), 2);
        assert_eq!(state.unused_pool_len(), 34);
        assert!(state
            .ues
            .iter()
            .all(|u| u.distance_m <= 950.0 && u.path_gain > 0.0));
    }

    #[test]
    fn identical_seeds_build_identical_states() {
        let a = build_small(42);
        let b = build_small(42);
        assert_eq!(a.services, b.services);
        assert_eq!(a.ues, b.ues);
    }

    #[test]
    fn tti_respects_both_budgets() {
        let mut state = build_small(3);
        for t in 1..=30 {
            state.evolve_environment();
            let rec = state.run_tti(t);
            assert!(
                rec.sum_r <= state.config.r_max * (1.0 + 1e-9),
                "t={t}: sum_r {} over budget",
                rec.sum_r
            );
            assert!(
                rec.sum_b <= state.config.bandwidth_part_hz * (1.0 + 1e-9),
                "t={t}: sum_b {} over budget",
                rec.sum_b
            );
        }
    }

    #[test]
    fn static_state_reaches_fixed_point() {
        // Frozen channel and frozen growth: consecutive ticks produce
        // identical allocations.
        let mut state = build_small(5);
        state.growth_frozen = true;
        state.channel_params.snr_smoothing = 0.0;
        for svc in &mut state.services {
            svc.channel.doppler_hz = 0.0;
        }
        for ue in &mut state.ues {
            ue.speed_mps = 0.0;
        }
        state.evolve_environment();
        state.run_tti(2);
        state.evolve_environment();
        let a = state.run_tti(3);
        state.evolve_environment();
        let b = state.run_tti(4);
        assert_eq!(a.partition_sizes, b.partition_sizes);
        assert!((a.sum_r - b.sum_r).abs() < 1e-9);
        assert!((a.cell_thr_paper - b.cell_thr_paper).abs() <= 1e-6 * a.cell_thr_paper);
    }

    #[test]
    fn growth_admits_until_pool_or_budget_binds() {
        let mut state = build_small(11);
        let mut last_s = state.groups.len();
        for t in 1..=40 {
            state.evolve_environment();
            let rec = state.run_tti(t);
            assert!(rec.category_count >= last_s, "S must be nondecreasing");
            last_s = rec.category_count;
        }
        // 40 UEs at capacity fair share 20/40 = 0.5: the budget fits the
        // whole pool, so growth stops when fewer than f_u UEs remain.
        assert!(state.unused_pool_len() < state.config.services_per_category);
        assert_eq!(state.groups.len(), 13);
        assert_eq!(state.services.len(), 39);
    }

    #[test]
    fn rejected_admission_rolls_back_completely() {
        let mut state = build_small(9);
        for t in 1..=3 {
            state.evolve_environment();
            state.run_tti(t);
        }
        // Shrink the planned capacity so the provisional fair shares exceed
        // the budget and the next admission must violate it.
        state.config.ue_count = state.services.len() - 2;

        let services_before = state.services.clone();
        let groups_before = state.groups.clone();
        let schedule_before = state.schedule.clone();
        match state.admit_category() {
            AdmitOutcome::Rejected(RejectReason::Budget { violating_sum }) => {
                assert!(violating_sum > state.config.r_max);
            }
            other => panic!("expected budget rejection, got {other:?}"),
        }
        assert_eq!(state.services, services_before);
        assert_eq!(state.groups, groups_before);
        assert_eq!(state.schedule, schedule_before);
        assert!(state.growth_frozen());
        assert_eq!(state.admit_category(), AdmitOutcome::Frozen);
    }

    #[test]
    fn inference_counters_match_ground_truth_from_schedule_map() {
        let mut state = build_small(23);
        for t in 1..=12 {
            state.evolve_environment();
            state.run_tti(t);

            // Counters recomputed from the map equal the stored ones.
            let member_total: usize = state.groups.iter().map(|g| g.members.len()).sum();
            assert_eq!(state.schedule.total_capacity, member_total);
            assert_eq!(state.schedule.total_capacity, state.services.len());
            assert_eq!(state.schedule.category_count, state.groups.len());
            assert_eq!(state.schedule.additional_count, state.additional());
            let demand_radio: f64 =
                state.schedule.demands.values().sum::<f64>() * state.config.r_max;
            let map_radio = state.schedule.sum_radio();
            assert!((demand_radio - map_radio).abs() <= 1e-9 * map_radio.max(1.0));
        }
    }

    #[test]
    fn admission_count_tracks_headroom_prediction() {
        use crate::utility::max_additional_categories;
        let mut state = build_small(21);
        for t in 1..=40 {
            state.evolve_environment();
            state.run_tti(t);
        }
        let mean_r = state
            .services
            .iter()
            .map(|s| s.service.radio_alloc)
            .sum::<f64>()
            / state.services.len() as f64;
        let headroom = max_additional_categories(
            mean_r,
            state.config.services_per_category,
            state.m_count(),
            state.config.r_max,
        );
        let pool_cap = state.config.ue_count / state.config.services_per_category;
        let predicted = headroom.total.min(pool_cap).saturating_sub(state.m_count());
        let actual = state.additional();
        assert!(
            actual.abs_diff(predicted) <= 1,
            "admitted {actual}, predicted {predicted}"
        );
    }

    #[test]
    fn toy_slice_growth_arithmetic() {
        // r_max 10, f_u 2, per-service allocation converging to 1 unit
        // (capacity 10 UEs): growth admits until S = 10/(2*1) = 5.
        let mut cfg = small_scenario();
        cfg.slices[0].ue_count = 10;
        cfg.slices[0].r_max = 10.0;
        cfg.slices[0].initial_categories = 1;
        cfg.slices[0].services_per_category = 2;
        let mut state = SliceState::build(&cfg.slices[0], &cfg, 17);
        let mut first_admission = None;
        for t in 1..=12 {
            state.evolve_environment();
            let rec = state.run_tti(t);
            if t == 1 {
                first_admission = rec.admission;
            }
        }
        // An admission into a nearly empty slice always fits.
        assert!(matches!(
            first_admission,
            Some(AdmitOutcome::Admitted { .. })
        ));
        assert_eq!(state.groups.len(), 5);
        assert_eq!(state.additional(), 4);
        assert_eq!(state.services.len(), 10);
        let sum_r: f64 = state.services.iter().map(|s| s.service.radio_alloc).sum();
        assert!(sum_r <= 10.0 * (1.0 + 1e-9));
    }

    #[test]
    fn capacity_report_without_growth_has_zero_delta() {
        let mut state = build_small(19);
        state.growth_frozen = true;
        state.evolve_environment();
        state.run_tti(1);
        let report = state.capacity_report();
        assert_eq!(report.category_count, state.m_count());
        assert_eq!(report.additional, 0);
        assert_eq!(report.thr_delta_paper, 0.0);
        assert_eq!(report.thr_delta_mbps, 0.0);
    }

    #[test]
    fn capacity_report_is_ledger_consistent() {
        let mut state = build_small(13);
        for t in 1..=10 {
            state.evolve_environment();
            state.run_tti(t);
        }
        let report = state.capacity_report();
        assert_eq!(report.total_capacity, state.services.len());
        let partition_total: usize = state.partition.iter().map(|c| c.capacity).sum();
        assert_eq!(partition_total, state.services.len());
        assert_eq!(report.category_count, state.m_count() + report.additional);
        assert!(report.thr_delta_paper >= 0.0);
        assert!(
            (report.thr_s_paper - report.thr_m_paper - report.thr_delta_paper).abs()
                <= 1e-9 * report.thr_s_paper.max(1.0)
        );
    }
}
