//! Round-based protocol state machines driven by a simulated clock.
//!
//! Four frameworks share one driver: the proposed parallel and serial
//! schedules, the FedGAN baseline (devices train and upload both networks)
//! and a centralized single learner. Device updates within a round may run
//! on several worker threads; every cross-device reduction runs in ascending
//! device id and every random draw comes from a per-entity stream, so the
//! results do not depend on the worker count.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Framework};
use crate::datasets::{partition_equal, sample_mixture, DeviceShard, MixtureSpec, Point};
use crate::error::{Error, Result};
use crate::gan::{
    average_discriminators, device_update, server_generator_update, GanModel, GanShape, GeneratorNoise,
    LocalTrainer, NoiseBatch, NoiseRef,
};
use crate::metrics::{self, MetricReport};
use crate::net::{broadcast_time_s, place_devices, shadowing_db, transmit_time_s, LinkState, NetworkConfig};
use crate::nn::ParamVec;
use crate::rng::{self, label};
use crate::scheduler::{ScheduleDecision, Scheduler};

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceState {
    pub device_id: usize,
    pub shard: DeviceShard,
    /// Row-major copy of the shard for the training kernels.
    flat: Vec<f64>,
    pub phi_local: ParamVec,
    /// Latest broadcast generator; FedGAN devices also train it locally.
    pub theta_view: ParamVec,
    pub noise_seed: u64,
    pub sampling_seed: u64,
    /// Next unused offset of the noise and sampling streams.
    pub stream_offset: u64,
    pub batch_size: usize,
    pub compute_s_per_step: f64,
    pub failed_this_round: bool,
}

impl DeviceState {
    pub fn new(
        shard: DeviceShard,
        theta: ParamVec,
        phi: ParamVec,
        noise_seed: u64,
        sampling_seed: u64,
        batch_size: usize,
        compute_s_per_step: f64,
    ) -> Result<Self> {
        if shard.points.is_empty() {
            return Err(Error::EmptyDataset(shard.device_id));
        }
        Ok(DeviceState {
            device_id: shard.device_id,
            flat: shard.flat(),
            shard,
            phi_local: phi,
            theta_view: theta,
            noise_seed,
            sampling_seed,
            stream_offset: 0,
            batch_size,
            compute_s_per_step,
            failed_this_round: false,
        })
    }

    fn trainer(&self) -> LocalTrainer<'_> {
        LocalTrainer {
            device_id: self.device_id,
            shard: &self.flat,
            noise_seed: self.noise_seed,
            sampling_seed: self.sampling_seed,
            start_offset: self.stream_offset,
            batch_size: self.batch_size,
        }
    }

    pub fn announcement(&self) -> SeedAnnouncement {
        SeedAnnouncement {
            device_id: self.device_id,
            seed: self.noise_seed,
            offset: self.stream_offset,
            m_k: self.batch_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    pub theta: ParamVec,
    pub phi_global: ParamVec,
    pub generator_batch_m: usize,
    pub n_d: usize,
    pub n_g: usize,
    pub eta_d: f64,
    pub eta_g: f64,
    pub round_index: u64,
    pub noise_seed: u64,
    /// Next unused offset of the server's own noise stream.
    pub noise_offset: u64,
    pub compute_s_per_step: f64,
}

/// A device's noise stream position and batch size, shared with the server
/// before the compute phase so it can regenerate the same noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SeedAnnouncement {
    pub device_id: usize,
    pub seed: u64,
    pub offset: u64,
    pub m_k: usize,
}

impl SeedAnnouncement {
    pub fn noise_ref(&self) -> NoiseRef {
        NoiseRef {
            seed: self.seed,
            offset: self.offset,
            count: self.m_k,
        }
    }
}

/// Everything exchanged between devices and the server. Only parameters,
/// seeds and scheduling signals; there is no variant that carries data.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type")]
pub enum Message {
    ScheduleSignal { round: u64, device_id: usize, share: f64 },
    SeedAnnouncement(SeedAnnouncement),
    DiscriminatorUpload { device_id: usize, phi: ParamVec, m_k: usize },
    GeneratorUpload { device_id: usize, theta: ParamVec, m_k: usize },
    GlobalBroadcast { phi: Option<ParamVec>, theta: Option<ParamVec> },
}

/// Optional in-process message log.
#[derive(Debug, Default)]
pub struct Traffic {
    messages: Option<Vec<Message>>,
}

impl Traffic {
    pub fn recording() -> Self {
        Traffic {
            messages: Some(Vec::new()),
        }
    }

    pub fn disabled() -> Self {
        Traffic { messages: None }
    }

    fn send(&mut self, make: impl FnOnce() -> Message) {
        if let Some(log) = &mut self.messages {
            log.push(make());
        }
    }

    pub fn messages(&self) -> &[Message] {
        self.messages.as_deref().unwrap_or(&[])
    }

    pub fn into_messages(self) -> Vec<Message> {
        self.messages.unwrap_or_default()
    }
}

/// Parameter counts charged on the air.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Payload {
    pub theta_params: u64,
    pub phi_params: u64,
    pub bits_per_param: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PhaseDurations {
    pub device_compute_s: f64,
    pub uplink_s: f64,
    pub averaging_s: f64,
    pub server_compute_s: f64,
    pub broadcast_phi_s: f64,
    pub broadcast_theta_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundLog {
    pub round_index: u64,
    pub schedule: ScheduleDecision,
    pub excluded_devices: Vec<usize>,
    pub phases: PhaseDurations,
    pub round_duration_s: f64,
    pub cumulative_sim_time_s: f64,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    pub metric_value: Option<f64>,
    pub mode_coverage: Option<usize>,
    /// Every scheduled device failed; the model was left unchanged.
    pub aborted: bool,
    /// Noise the generator update consumed, for replay.
    pub generator_noise: Option<GeneratorNoise>,
}

/// Per-round inputs that do not belong to either side's state.
#[derive(Clone, Copy)]
pub struct RoundContext<'a> {
    pub shape: &'a GanShape,
    pub schedule: &'a ScheduleDecision,
    /// One entry per device, ascending id.
    pub links: &'a [LinkState],
    /// One flag per device; only scheduled devices are consulted.
    pub failed: &'a [bool],
    pub payload: Payload,
    pub pool: Option<&'a rayon::ThreadPool>,
}

impl RoundContext<'_> {
    fn active(&self) -> Vec<usize> {
        self.schedule
            .scheduled
            .iter()
            .copied()
            .filter(|&k| !self.failed.get(k).copied().unwrap_or(false))
            .collect()
    }

    fn excluded(&self) -> Vec<usize> {
        self.schedule
            .scheduled
            .iter()
            .copied()
            .filter(|&k| self.failed.get(k).copied().unwrap_or(false))
            .collect()
    }

    fn share(&self) -> f64 {
        1.0 / self.schedule.scheduled.len() as f64
    }
}

/// `max(max_k phase_k, server) + averaging + bcast_φ + bcast_θ`.
pub fn parallel_round_duration(
    device_phases: &[f64],
    server_compute_s: f64,
    averaging_s: f64,
    broadcast_phi_s: f64,
    broadcast_theta_s: f64,
) -> f64 {
    let devices = device_phases.iter().copied().fold(0.0, f64::max);
    devices.max(server_compute_s) + averaging_s + broadcast_phi_s + broadcast_theta_s
}

/// `max_k phase_k + averaging + max(server, bcast_φ) + bcast_θ`; the φ
/// broadcast overlaps the generator update.
pub fn serial_round_duration(
    device_phases: &[f64],
    server_compute_s: f64,
    averaging_s: f64,
    broadcast_phi_s: f64,
    broadcast_theta_s: f64,
) -> f64 {
    let devices = device_phases.iter().copied().fold(0.0, f64::max);
    devices + averaging_s + server_compute_s.max(broadcast_phi_s) + broadcast_theta_s
}

/// Simulated timing and traffic volume of one round, before any training.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundTiming {
    pub phases: PhaseDurations,
    pub duration_s: f64,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    pub aborted: bool,
}

pub fn round_timing(framework: Framework, server: &ServerState, devices: &[DeviceState], ctx: &RoundContext<'_>) -> RoundTiming {
    let p = ctx.payload;
    let active = ctx.active();
    let device_steps = match framework {
        Framework::FedGan => server.n_d + server.n_g,
        _ => server.n_d,
    };
    let server_compute = server.n_g as f64 * server.compute_s_per_step;

    if framework == Framework::Centralized {
        let device_compute = devices.first().map_or(0.0, |d| d.compute_s_per_step) * server.n_d as f64;
        return RoundTiming {
            phases: PhaseDurations {
                device_compute_s: device_compute,
                server_compute_s: server_compute,
                ..PhaseDurations::default()
            },
            duration_s: device_compute + server_compute,
            uplink_bits: 0,
            downlink_bits: 0,
            aborted: false,
        };
    }

    let compute_of = |k: usize| devices[k].compute_s_per_step * device_steps as f64;
    if active.is_empty() {
        // the server waits out the compute phase before giving up
        let wait = ctx
            .schedule
            .scheduled
            .iter()
            .map(|&k| compute_of(k))
            .fold(0.0, f64::max);
        return RoundTiming {
            phases: PhaseDurations {
                device_compute_s: wait,
                ..PhaseDurations::default()
            },
            duration_s: wait,
            uplink_bits: 0,
            downlink_bits: 0,
            aborted: true,
        };
    }

    let up_params = match framework {
        Framework::FedGan => p.theta_params + p.phi_params,
        _ => p.phi_params,
    };
    let share = ctx.share();
    let mut phases = PhaseDurations::default();
    let device_phases: Vec<f64> = active
        .iter()
        .map(|&k| {
            let compute = compute_of(k);
            let up = transmit_time_s(up_params, p.bits_per_param, ctx.links[k].uplink_rate_bps, share);
            phases.device_compute_s = phases.device_compute_s.max(compute);
            phases.uplink_s = phases.uplink_s.max(up);
            compute + up
        })
        .collect();
    phases.broadcast_phi_s = broadcast_time_s(p.phi_params, p.bits_per_param, ctx.links);
    phases.broadcast_theta_s = broadcast_time_s(p.theta_params, p.bits_per_param, ctx.links);

    let duration_s = match framework {
        Framework::ProposedParallel => {
            phases.server_compute_s = server_compute;
            parallel_round_duration(&device_phases, server_compute, 0.0, phases.broadcast_phi_s, phases.broadcast_theta_s)
        }
        Framework::ProposedSerial => {
            phases.server_compute_s = server_compute;
            serial_round_duration(&device_phases, server_compute, 0.0, phases.broadcast_phi_s, phases.broadcast_theta_s)
        }
        // no server-side training; both broadcasts follow the averaging
        _ => parallel_round_duration(&device_phases, 0.0, 0.0, phases.broadcast_phi_s, phases.broadcast_theta_s),
    };
    RoundTiming {
        phases,
        duration_s,
        uplink_bits: active.len() as u64 * up_params * p.bits_per_param,
        downlink_bits: (p.theta_params + p.phi_params) * p.bits_per_param,
        aborted: false,
    }
}

fn map_devices<T: Send>(
    pool: Option<&rayon::ThreadPool>,
    ids: &[usize],
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    match pool {
        Some(pool) if pool.current_num_threads() > 1 => pool.install(|| ids.par_iter().map(|&k| f(k)).collect()),
        _ => ids.iter().map(|&k| f(k)).collect(),
    }
}

fn aborted_log(server: &ServerState, ctx: &RoundContext<'_>, timing: RoundTiming) -> RoundLog {
    RoundLog {
        round_index: server.round_index,
        schedule: ctx.schedule.clone(),
        excluded_devices: ctx.excluded(),
        phases: timing.phases,
        round_duration_s: timing.duration_s,
        cumulative_sim_time_s: 0.0,
        uplink_bits: 0,
        downlink_bits: 0,
        metric_value: None,
        mode_coverage: None,
        aborted: true,
        generator_noise: None,
    }
}

fn signal_schedule(server: &ServerState, ctx: &RoundContext<'_>, traffic: &mut Traffic) {
    for &k in &ctx.schedule.scheduled {
        traffic.send(|| Message::ScheduleSignal {
            round: server.round_index,
            device_id: k,
            share: ctx.share(),
        });
    }
}

/// Runs Algorithm 1 on every active device and returns the uploaded
/// discriminators in ascending device id.
fn local_discriminators(
    server: &ServerState,
    devices: &[DeviceState],
    active: &[usize],
    ctx: &RoundContext<'_>,
) -> Result<Vec<ParamVec>> {
    map_devices(ctx.pool, active, |k| {
        let d = &devices[k];
        device_update(&d.theta_view, &d.phi_local, &d.trainer(), server.n_d, server.eta_d, ctx.shape)
    })
}

fn upload_and_average(
    devices: &[DeviceState],
    active: &[usize],
    phis: &[ParamVec],
    traffic: &mut Traffic,
) -> Result<ParamVec> {
    for (&k, phi) in active.iter().zip(phis) {
        traffic.send(|| Message::DiscriminatorUpload {
            device_id: k,
            phi: phi.clone(),
            m_k: devices[k].batch_size,
        });
    }
    let contributions: Vec<(&ParamVec, u64)> = active
        .iter()
        .zip(phis)
        .map(|(&k, phi)| (phi, devices[k].batch_size as u64))
        .collect();
    average_discriminators(&contributions)
}

/// Broadcast to every device, scheduled or not, and advance the streams of
/// the devices that trained.
fn commit(
    server: &mut ServerState,
    devices: &mut [DeviceState],
    active: &[usize],
    stream_advance: u64,
    theta: ParamVec,
    phi: ParamVec,
) {
    for d in devices.iter_mut() {
        d.phi_local = phi.clone();
        d.theta_view = theta.clone();
        d.failed_this_round = false;
    }
    for &k in active {
        devices[k].stream_offset += stream_advance;
    }
    server.theta = theta;
    server.phi_global = phi;
    server.round_index += 1;
}

fn mark_failures(devices: &mut [DeviceState], ctx: &RoundContext<'_>) {
    for &k in &ctx.schedule.scheduled {
        devices[k].failed_this_round = ctx.failed.get(k).copied().unwrap_or(false);
    }
}

fn finish_log(server_round: u64, ctx: &RoundContext<'_>, timing: RoundTiming, noise: Option<GeneratorNoise>) -> RoundLog {
    RoundLog {
        round_index: server_round,
        schedule: ctx.schedule.clone(),
        excluded_devices: ctx.excluded(),
        phases: timing.phases,
        round_duration_s: timing.duration_s,
        cumulative_sim_time_s: 0.0,
        uplink_bits: timing.uplink_bits,
        downlink_bits: timing.downlink_bits,
        metric_value: None,
        mode_coverage: None,
        aborted: false,
        generator_noise: noise,
    }
}

/// Parallel schedule: devices and server both start from (θ^t, φ^t); the
/// server's noise is regenerated from the devices' announced streams.
pub fn run_parallel_round(
    server: &mut ServerState,
    devices: &mut [DeviceState],
    ctx: &RoundContext<'_>,
    traffic: &mut Traffic,
) -> Result<RoundLog> {
    let timing = round_timing(Framework::ProposedParallel, server, devices, ctx);
    mark_failures(devices, ctx);
    signal_schedule(server, ctx, traffic);
    if timing.aborted {
        return Ok(aborted_log(server, ctx, timing));
    }
    let active = ctx.active();
    let announcements: Vec<SeedAnnouncement> = active.iter().map(|&k| devices[k].announcement()).collect();
    for a in &announcements {
        traffic.send(|| Message::SeedAnnouncement(*a));
    }
    let noise = GeneratorNoise::Announced(announcements.iter().map(SeedAnnouncement::noise_ref).collect());

    let (phis, theta_next) = match ctx.pool {
        Some(pool) if pool.current_num_threads() > 1 => pool.join(
            || local_discriminators(server, devices, &active, ctx),
            || server_generator_update(&server.theta, &server.phi_global, server.n_g, server.eta_g, &noise, ctx.shape),
        ),
        _ => (
            local_discriminators(server, devices, &active, ctx),
            server_generator_update(&server.theta, &server.phi_global, server.n_g, server.eta_g, &noise, ctx.shape),
        ),
    };
    let phis = phis?;
    let theta_next = theta_next?;
    let phi_next = upload_and_average(devices, &active, &phis, traffic)?;

    traffic.send(|| Message::GlobalBroadcast {
        phi: Some(phi_next.clone()),
        theta: Some(theta_next.clone()),
    });
    let log = finish_log(server.round_index, ctx, timing, Some(noise));
    let n_d = server.n_d as u64;
    commit(server, devices, &active, n_d, theta_next, phi_next);
    Ok(log)
}

/// Serial schedule: the server averages first, then updates the generator
/// against φ^{t+1} with its own fresh noise.
pub fn run_serial_round(
    server: &mut ServerState,
    devices: &mut [DeviceState],
    ctx: &RoundContext<'_>,
    traffic: &mut Traffic,
) -> Result<RoundLog> {
    let timing = round_timing(Framework::ProposedSerial, server, devices, ctx);
    mark_failures(devices, ctx);
    signal_schedule(server, ctx, traffic);
    if timing.aborted {
        return Ok(aborted_log(server, ctx, timing));
    }
    let active = ctx.active();
    let phis = local_discriminators(server, devices, &active, ctx)?;
    let phi_next = upload_and_average(devices, &active, &phis, traffic)?;
    traffic.send(|| Message::GlobalBroadcast {
        phi: Some(phi_next.clone()),
        theta: None,
    });

    let noise = GeneratorNoise::Fresh {
        seed: server.noise_seed,
        start_offset: server.noise_offset,
        batch: server.generator_batch_m,
    };
    let theta_next = server_generator_update(&server.theta, &phi_next, server.n_g, server.eta_g, &noise, ctx.shape)?;
    traffic.send(|| Message::GlobalBroadcast {
        phi: None,
        theta: Some(theta_next.clone()),
    });
    let log = finish_log(server.round_index, ctx, timing, Some(noise));
    server.noise_offset += server.n_g as u64;
    let n_d = server.n_d as u64;
    commit(server, devices, &active, n_d, theta_next, phi_next);
    Ok(log)
}

/// FedGAN baseline: every active device trains φ then θ locally (blocked
/// order) and uploads both; the server averages each.
pub fn run_fedgan_round(
    server: &mut ServerState,
    devices: &mut [DeviceState],
    ctx: &RoundContext<'_>,
    traffic: &mut Traffic,
) -> Result<RoundLog> {
    let timing = round_timing(Framework::FedGan, server, devices, ctx);
    mark_failures(devices, ctx);
    signal_schedule(server, ctx, traffic);
    if timing.aborted {
        return Ok(aborted_log(server, ctx, timing));
    }
    let active = ctx.active();
    let n_d = server.n_d;
    let locals: Vec<(ParamVec, ParamVec)> = map_devices(ctx.pool, &active, |k| {
        let d = &devices[k];
        let phi = device_update(&d.theta_view, &d.phi_local, &d.trainer(), n_d, server.eta_d, ctx.shape)?;
        let noise = GeneratorNoise::Fresh {
            seed: d.noise_seed,
            start_offset: d.stream_offset + n_d as u64,
            batch: server.generator_batch_m,
        };
        let theta = server_generator_update(&d.theta_view, &phi, server.n_g, server.eta_g, &noise, ctx.shape)?;
        Ok((theta, phi))
    })?;

    for (&k, (theta, phi)) in active.iter().zip(&locals) {
        let m_k = devices[k].batch_size;
        traffic.send(|| Message::DiscriminatorUpload {
            device_id: k,
            phi: phi.clone(),
            m_k,
        });
        traffic.send(|| Message::GeneratorUpload {
            device_id: k,
            theta: theta.clone(),
            m_k,
        });
    }
    let weights: Vec<u64> = active.iter().map(|&k| devices[k].batch_size as u64).collect();
    let phi_next = average_discriminators(&locals.iter().zip(&weights).map(|((_, p), &w)| (p, w)).collect::<Vec<_>>())?;
    let theta_next = average_discriminators(&locals.iter().zip(&weights).map(|((t, _), &w)| (t, w)).collect::<Vec<_>>())?;

    traffic.send(|| Message::GlobalBroadcast {
        phi: Some(phi_next.clone()),
        theta: Some(theta_next.clone()),
    });
    let log = finish_log(server.round_index, ctx, timing, None);
    let advance = (server.n_d + server.n_g) as u64;
    commit(server, devices, &active, advance, theta_next, phi_next);
    Ok(log)
}

/// Centralized baseline: one learner holding the union of all shards runs
/// n_d discriminator steps then n_g generator steps; nothing is transmitted.
pub fn run_centralized_round(server: &mut ServerState, learner: &mut DeviceState, shape: &GanShape) -> Result<RoundLog> {
    let schedule = ScheduleDecision {
        round_index: server.round_index,
        scheduled: vec![learner.device_id],
        ratio: 1.0,
    };
    let links = [];
    let ctx = RoundContext {
        shape,
        schedule: &schedule,
        links: &links,
        failed: &[],
        payload: Payload {
            theta_params: 0,
            phi_params: 0,
            bits_per_param: 0,
        },
        pool: None,
    };
    let timing = round_timing(Framework::Centralized, server, std::slice::from_ref(learner), &ctx);
    let phi_next = device_update(
        &server.theta,
        &server.phi_global,
        &learner.trainer(),
        server.n_d,
        server.eta_d,
        shape,
    )?;
    let noise = GeneratorNoise::Fresh {
        seed: server.noise_seed,
        start_offset: server.noise_offset,
        batch: server.generator_batch_m,
    };
    let theta_next = server_generator_update(&server.theta, &phi_next, server.n_g, server.eta_g, &noise, shape)?;
    let log = finish_log(server.round_index, &ctx, timing, Some(noise));
    server.noise_offset += server.n_g as u64;
    let n_d = server.n_d as u64;
    commit(server, std::slice::from_mut(learner), &[0], n_d, theta_next, phi_next);
    Ok(log)
}

/// Independent per-device failures for round `round`; only scheduled
/// devices can fail.
pub fn failure_mask(schedule: &ScheduleDecision, k: usize, p_fail: f64, seed: u64, round: u64) -> Vec<bool> {
    let mut failed = vec![false; k];
    if p_fail <= 0.0 {
        return failed;
    }
    let mut rng = rng::stream(seed, round);
    let draws: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
    for &d in &schedule.scheduled {
        failed[d] = draws[d] < p_fail;
    }
    failed
}

/// Everything derived from the master seed before the first round.
pub struct Setup {
    pub shape: GanShape,
    pub mixture: MixtureSpec,
    pub server: ServerState,
    pub devices: Vec<DeviceState>,
    pub distances_km: Vec<f64>,
    pub holdout: Vec<Point>,
    pub eval_noise: NoiseBatch,
    pub payload: Payload,
}

pub fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let seed = cfg.run.master_seed;
    let shape = cfg.gan_shape()?;
    let mixture = MixtureSpec::ring(cfg.dataset.modes, cfg.dataset.radius, cfg.dataset.std)?;
    let k = cfg.num_devices;
    let points = sample_mixture(
        &mixture,
        k * cfg.dataset.points_per_device,
        rng::split_seed(seed, label::DATA, 0),
    )?;
    let partition = partition_equal(&points, k, rng::split_seed(seed, label::PARTITION, 0))?;
    let model = GanModel::init(
        &shape,
        rng::split_seed(seed, label::INIT_GENERATOR, 0),
        rng::split_seed(seed, label::INIT_DISCRIMINATOR, 0),
    )?;
    let theta = model.generator.params().clone();
    let phi = model.discriminator.params().clone();

    let shards: Vec<DeviceShard> = if cfg.framework == Framework::Centralized {
        vec![DeviceShard {
            device_id: 0,
            points: partition.shards.into_iter().flat_map(|s| s.points).collect(),
        }]
    } else {
        partition.shards
    };
    let devices = shards
        .into_iter()
        .map(|shard| {
            let id = shard.device_id as u64;
            DeviceState::new(
                shard,
                theta.clone(),
                phi.clone(),
                rng::split_seed(seed, label::DEVICE_NOISE, id),
                rng::split_seed(seed, label::DEVICE_SAMPLING, id),
                cfg.train.batch_size,
                cfg.compute.device_step_s,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let server = ServerState {
        theta,
        phi_global: phi,
        generator_batch_m: cfg.train.generator_batch,
        n_d: cfg.train.n_d,
        n_g: cfg.train.n_g,
        eta_d: cfg.train.eta_d,
        eta_g: cfg.train.eta_g,
        round_index: 0,
        noise_seed: rng::split_seed(seed, label::SERVER_NOISE, 0),
        noise_offset: 0,
        compute_s_per_step: cfg.compute.server_step_s,
    };
    let distances_km = place_devices(k, cfg.network.cell_radius_km, rng::split_seed(seed, label::PLACEMENT, 0))
        .into_iter()
        .map(|p| p.distance_km)
        .collect();
    let holdout = sample_mixture(&mixture, cfg.eval.holdout, rng::split_seed(seed, label::HOLDOUT, 0))?;
    let eval_noise = NoiseBatch::generate(rng::split_seed(seed, label::EVAL, 0), 0, cfg.eval.samples, shape.noise_dim);
    let or_actual = |over: u64, actual: usize| if over > 0 { over } else { actual as u64 };
    let payload = Payload {
        theta_params: or_actual(cfg.payload.generator_params, shape.theta_len()),
        phi_params: or_actual(cfg.payload.discriminator_params, shape.phi_len()),
        bits_per_param: cfg.network.bits_per_param,
    };
    Ok(Setup {
        shape,
        mixture,
        server,
        devices,
        distances_km,
        holdout,
        eval_noise,
        payload,
    })
}

/// Link states of all devices in round `round`.
pub fn links_for_round(net: &NetworkConfig, distances_km: &[f64], shadow_seed: u64, round: u64) -> Result<Vec<LinkState>> {
    let shadow = shadowing_db(distances_km.len(), net.shadowing_sigma_db, shadow_seed, round);
    distances_km
        .iter()
        .zip(&shadow)
        .enumerate()
        .map(|(k, (&d, &s))| net.link_state(k, d, s))
        .collect()
}

pub fn generated_points(shape: &GanShape, theta: &ParamVec, noise: &NoiseBatch) -> Result<Vec<Point>> {
    let model = GanModel::from_params(shape, theta.clone(), ParamVec::zeros(shape.phi_len()))?;
    Ok(model.generate(noise)?.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

fn evaluate(setup: &Setup, theta: &ParamVec, radius: f64) -> Result<MetricReport> {
    let samples = generated_points(&setup.shape, theta, &setup.eval_noise)?;
    metrics::report(&samples, &setup.holdout, &setup.mixture.means(), radius)
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub record_traffic: bool,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub logs: Vec<RoundLog>,
    pub theta: ParamVec,
    pub phi: ParamVec,
    pub initial_report: MetricReport,
    pub final_report: MetricReport,
    /// Generator outputs on the fixed evaluation noise after the last round.
    pub samples: Vec<Point>,
    pub rounds_to_target: Option<u64>,
    pub time_to_target_s: Option<f64>,
    /// Round index and cause when training produced non-finite values.
    pub diverged: Option<(u64, String)>,
    pub traffic: Vec<Message>,
}

impl ExperimentOutcome {
    pub fn total_sim_time_s(&self) -> f64 {
        self.logs.last().map_or(0.0, |l| l.cumulative_sim_time_s)
    }

    pub fn total_bits(&self) -> u64 {
        self.logs.iter().map(|l| l.uplink_bits + l.downlink_bits).sum()
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_experiment_with(cfg, &RunOptions::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutcome> {
    let mut s = setup(cfg)?;
    let seed = cfg.run.master_seed;
    let shadow_seed = rng::split_seed(seed, label::SHADOWING, 0);
    let failure_seed = rng::split_seed(seed, label::FAILURE, 0);
    let radius = cfg.coverage_radius();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    let mut scheduler = Scheduler::new(cfg.scheduler.policy, cfg.scheduler.ratio, cfg.scheduler.pf_smoothing)?;
    let mut traffic = if opts.record_traffic {
        Traffic::recording()
    } else {
        Traffic::disabled()
    };

    let initial_report = evaluate(&s, &s.server.theta, radius)?;
    let mut logs = Vec::new();
    let mut cumulative = 0.0;
    let mut rounds_to_target = None;
    let mut time_to_target_s = None;
    let mut diverged = None;
    let mut last_report = initial_report;
    let mut last_eval_round = None;

    for t in 0..cfg.run.max_rounds {
        let k = s.devices.len();
        let (schedule, links, failed) = if cfg.framework == Framework::Centralized {
            (
                ScheduleDecision {
                    round_index: t,
                    scheduled: vec![0],
                    ratio: 1.0,
                },
                Vec::new(),
                vec![false; k],
            )
        } else {
            let links = links_for_round(&cfg.network, &s.distances_km, shadow_seed, t)?;
            let schedule = scheduler.decide(&links, t)?;
            let failed = failure_mask(&schedule, k, cfg.run.p_fail, failure_seed, t);
            (schedule, links, failed)
        };
        let ctx = RoundContext {
            shape: &s.shape,
            schedule: &schedule,
            links: &links,
            failed: &failed,
            payload: s.payload,
            pool: Some(&pool),
        };
        if cfg.run.max_sim_time_s > 0.0 {
            let planned = round_timing(cfg.framework, &s.server, &s.devices, &ctx);
            if cumulative + planned.duration_s > cfg.run.max_sim_time_s {
                break;
            }
        }
        let result = match cfg.framework {
            Framework::ProposedParallel => run_parallel_round(&mut s.server, &mut s.devices, &ctx, &mut traffic),
            Framework::ProposedSerial => run_serial_round(&mut s.server, &mut s.devices, &ctx, &mut traffic),
            Framework::FedGan => run_fedgan_round(&mut s.server, &mut s.devices, &ctx, &mut traffic),
            Framework::Centralized => run_centralized_round(&mut s.server, &mut s.devices[0], &s.shape),
        };
        let mut log = match result {
            Ok(log) => log,
            Err(e @ Error::NonFinite(_)) => {
                diverged = Some((t, e.to_string()));
                break;
            }
            Err(e) => return Err(e),
        };
        cumulative += log.round_duration_s;
        log.cumulative_sim_time_s = cumulative;
        let last = t + 1 == cfg.run.max_rounds;
        if (t + 1) % cfg.eval.every == 0 || last {
            let report = evaluate(&s, &s.server.theta, radius)?;
            log.metric_value = Some(report.frechet_gaussian);
            log.mode_coverage = Some(report.mode_coverage);
            last_report = report;
            last_eval_round = Some(t);
            if cfg.run.target_metric > 0.0 && report.frechet_gaussian <= cfg.run.target_metric {
                rounds_to_target = Some(t + 1);
                time_to_target_s = Some(cumulative);
            }
        }
        logs.push(log);
        if rounds_to_target.is_some() {
            break;
        }
    }

    let final_report = match (logs.last(), last_eval_round) {
        (Some(l), Some(e)) if l.round_index == e => last_report,
        (None, _) => initial_report,
        _ => evaluate(&s, &s.server.theta, radius)?,
    };
    let samples = generated_points(&s.shape, &s.server.theta, &s.eval_noise)?;
    Ok(ExperimentOutcome {
        logs,
        theta: s.server.theta,
        phi: s.server.phi_global,
        initial_report,
        final_report,
        samples,
        rounds_to_target,
        time_to_target_s,
        diverged,
        traffic: traffic.into_messages(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::grad_theta;
    use crate::nn::axpy_update;
    use proptest::prelude::*;

    fn tiny_cfg(framework: Framework) -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.framework = framework;
        c.num_devices = 3;
        c.model.generator_hidden = vec![6];
        c.model.discriminator_hidden = vec![6];
        c.dataset.points_per_device = 40;
        c.train.batch_size = 8;
        c.train.generator_batch = 8;
        c.train.n_d = 2;
        c.train.n_g = 2;
        c.eval.samples = 50;
        c.eval.holdout = 50;
        c.eval.every = 1;
        c.run.max_rounds = 4;
        c.run.workers = 1;
        c
    }

    fn context<'a>(
        shape: &'a GanShape,
        payload: Payload,
        schedule: &'a ScheduleDecision,
        links: &'a [LinkState],
        failed: &'a [bool],
    ) -> RoundContext<'a> {
        RoundContext {
            shape,
            schedule,
            links,
            failed,
            payload,
            pool: None,
        }
    }

    fn all(k: usize, t: u64) -> ScheduleDecision {
        ScheduleDecision {
            round_index: t,
            scheduled: (0..k).collect(),
            ratio: 1.0,
        }
    }

    #[test]
    fn zero_learning_rates_leave_model_but_log_timing() {
        let mut cfg = tiny_cfg(Framework::ProposedParallel);
        cfg.train.eta_d = 0.0;
        cfg.train.eta_g = 0.0;
        let mut s = setup(&cfg).unwrap();
        let (theta0, phi0) = (s.server.theta.clone(), s.server.phi_global.clone());
        let links = links_for_round(&cfg.network, &s.distances_km, 0, 0).unwrap();
        let sched = all(3, 0);
        let failed = vec![false; 3];
        let mut server = s.server.clone();
        let shape = s.shape.clone();
        let ctx = context(&shape, s.payload, &sched, &links, &failed);
        let log = run_parallel_round(&mut server, &mut s.devices, &ctx, &mut Traffic::disabled()).unwrap();
        assert!(server.theta.bit_eq(&theta0));
        // averaging identical copies with weights 1/3 may round in the last bit
        let drift = server
            .phi_global
            .as_slice()
            .iter()
            .zip(phi0.as_slice())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(drift <= 4.0 * f64::EPSILON * phi0.max_abs());
        assert!(log.round_duration_s > 0.0);
        assert_eq!(log.uplink_bits, 3 * s.payload.phi_params * 16);
        assert!(!log.aborted);
    }

    #[test]
    fn announced_noise_matches_device_batches() {
        let cfg = tiny_cfg(Framework::ProposedParallel);
        let mut s = setup(&cfg).unwrap();
        let links = links_for_round(&cfg.network, &s.distances_km, 0, 0).unwrap();
        let sched = all(3, 0);
        let failed = vec![false; 3];
        let devices_before = s.devices.clone();
        let mut server = s.server.clone();
        let shape = s.shape.clone();
        let ctx = context(&shape, s.payload, &sched, &links, &failed);
        let log = run_parallel_round(&mut server, &mut s.devices, &ctx, &mut Traffic::disabled()).unwrap();
        let noise = log.generator_noise.unwrap();
        for step in 0..cfg.train.n_g {
            let server_batch = noise.batch(step, 2).unwrap();
            let device_batches: Vec<NoiseBatch> = devices_before
                .iter()
                .map(|d| NoiseBatch::from_ref(d.trainer().noise_ref(step), 2))
                .collect();
            let concat = NoiseBatch::concat(&device_batches).unwrap();
            assert!(server_batch
                .samples
                .iter()
                .zip(&concat.samples)
                .all(|(a, b)| a.to_bits() == b.to_bits()));
            assert_eq!(server_batch.samples.len(), concat.samples.len());
        }
    }

    #[test]
    fn failed_device_is_excluded_from_average() {
        let cfg = tiny_cfg(Framework::ProposedSerial);
        let mut s = setup(&cfg).unwrap();
        let links = links_for_round(&cfg.network, &s.distances_km, 0, 0).unwrap();
        let sched = all(3, 0);
        let failed = vec![false, true, false];
        let before = s.devices.clone();
        let mut server = s.server.clone();
        let mut traffic = Traffic::recording();
        let shape = s.shape.clone();
        let ctx = context(&shape, s.payload, &sched, &links, &failed);
        let log = run_serial_round(&mut server, &mut s.devices, &ctx, &mut traffic).unwrap();
        assert_eq!(log.excluded_devices, vec![1]);
        let phis: Vec<ParamVec> = [0, 2]
            .iter()
            .map(|&k| {
                let d = &before[k];
                device_update(&d.theta_view, &d.phi_local, &d.trainer(), cfg.train.n_d, cfg.train.eta_d, &s.shape).unwrap()
            })
            .collect();
        // equal weights: plain mean of the two survivors
        let oracle: Vec<f64> = phis[0]
            .as_slice()
            .iter()
            .zip(phis[1].as_slice())
            .map(|(a, b)| 0.5 * a + 0.5 * b)
            .collect();
        for (a, b) in server.phi_global.as_slice().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-12);
        }
        let uploads = traffic
            .messages()
            .iter()
            .filter(|m| matches!(m, Message::DiscriminatorUpload { .. }))
            .count();
        assert_eq!(uploads, 2);
        assert_eq!(s.devices[1].stream_offset, 0);
        assert_eq!(s.devices[0].stream_offset, cfg.train.n_d as u64);
    }

    #[test]
    fn all_failed_aborts_without_change() {
        let cfg = tiny_cfg(Framework::ProposedSerial);
        let mut s = setup(&cfg).unwrap();
        let links = links_for_round(&cfg.network, &s.distances_km, 0, 0).unwrap();
        let sched = ScheduleDecision {
            round_index: 0,
            scheduled: vec![0, 2],
            ratio: 2.0 / 3.0,
        };
        let failed = vec![true, false, true];
        let mut server = s.server.clone();
        let before = server.clone();
        let shape = s.shape.clone();
        let ctx = context(&shape, s.payload, &sched, &links, &failed);
        let log = run_serial_round(&mut server, &mut s.devices, &ctx, &mut Traffic::disabled()).unwrap();
        assert!(log.aborted);
        assert_eq!(server, before);
        assert_eq!(log.round_duration_s, cfg.train.n_d as f64 * cfg.compute.device_step_s);
    }

    #[test]
    fn serial_generator_sees_new_discriminator() {
        let mut cfg = tiny_cfg(Framework::ProposedSerial);
        cfg.train.n_g = 1;
        let mut s = setup(&cfg).unwrap();
        let links = links_for_round(&cfg.network, &s.distances_km, 0, 0).unwrap();
        let sched = all(3, 0);
        let failed = vec![false; 3];
        let mut server = s.server.clone();
        let theta0 = server.theta.clone();
        let shape = s.shape.clone();
        let ctx = context(&shape, s.payload, &sched, &links, &failed);
        let log = run_serial_round(&mut server, &mut s.devices, &ctx, &mut Traffic::disabled()).unwrap();
        let z = log.generator_noise.unwrap().batch(0, 2).unwrap();
        let g = grad_theta(&theta0, &server.phi_global, &z, &s.shape).unwrap();
        let replay = axpy_update(&theta0, &g, -cfg.train.eta_g).unwrap();
        assert!(replay.bit_eq(&server.theta));
    }

    #[test]
    fn fedgan_single_device_is_local_training() {
        let mut cfg = tiny_cfg(Framework::FedGan);
        cfg.num_devices = 1;
        let mut s = setup(&cfg).unwrap();
        let links = links_for_round(&cfg.network, &s.distances_km, 0, 0).unwrap();
        let sched = all(1, 0);
        let failed = vec![false];
        let d = s.devices[0].clone();
        let mut server = s.server.clone();
        let shape = s.shape.clone();
        let ctx = context(&shape, s.payload, &sched, &links, &failed);
        let log = run_fedgan_round(&mut server, &mut s.devices, &ctx, &mut Traffic::disabled()).unwrap();
        let phi = device_update(&d.theta_view, &d.phi_local, &d.trainer(), 2, cfg.train.eta_d, &s.shape).unwrap();
        let noise = GeneratorNoise::Fresh {
            seed: d.noise_seed,
            start_offset: 2,
            batch: 8,
        };
        let theta = server_generator_update(&d.theta_view, &phi, 2, cfg.train.eta_g, &noise, &s.shape).unwrap();
        assert!(server.phi_global.bit_eq(&phi));
        assert!(server.theta.bit_eq(&theta));
        assert_eq!(log.uplink_bits, (s.payload.theta_params + s.payload.phi_params) * 16);
    }

    #[test]
    fn max_rounds_zero_returns_initial_model() {
        let mut cfg = tiny_cfg(Framework::ProposedSerial);
        cfg.run.max_rounds = 0;
        let out = run_experiment(&cfg).unwrap();
        let s = setup(&cfg).unwrap();
        assert!(out.logs.is_empty());
        assert!(out.theta.bit_eq(&s.server.theta));
        assert_eq!(out.initial_report, out.final_report);
    }

    #[test]
    fn every_framework_runs_and_time_is_monotone() {
        for fw in Framework::ALL {
            let out = run_experiment(&tiny_cfg(fw)).unwrap();
            assert_eq!(out.logs.len(), 4, "{fw}");
            assert!(out.diverged.is_none());
            let mut prev = 0.0;
            for l in &out.logs {
                assert!(l.cumulative_sim_time_s >= prev);
                prev = l.cumulative_sim_time_s;
            }
            assert!(out.theta.is_finite() && out.phi.is_finite());
        }
    }

    #[test]
    fn centralized_has_no_traffic() {
        let out = run_experiment(&tiny_cfg(Framework::Centralized)).unwrap();
        assert_eq!(out.total_bits(), 0);
        let per_round = 2.0 * 0.005 + 2.0 * 0.005;
        assert!((out.logs[0].round_duration_s - per_round).abs() < 1e-15);
    }

    #[test]
    fn sim_time_budget_is_never_exceeded() {
        let mut cfg = tiny_cfg(Framework::ProposedSerial);
        cfg.run.max_rounds = 100;
        let one = run_experiment(&tiny_cfg(Framework::ProposedSerial)).unwrap().logs[0].round_duration_s;
        cfg.run.max_sim_time_s = 2.5 * one;
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.logs.len(), 2);
    }

    #[test]
    fn failure_mask_only_touches_scheduled() {
        let sched = ScheduleDecision {
            round_index: 0,
            scheduled: vec![1, 3],
            ratio: 0.5,
        };
        let m = failure_mask(&sched, 4, 1.0, 7, 0);
        assert_eq!(m, vec![false, true, false, true]);
        assert_eq!(failure_mask(&sched, 4, 0.0, 7, 0), vec![false; 4]);
    }

    proptest! {
        #[test]
        fn parallel_never_slower_when_server_is_faster(
            phases in prop::collection::vec(0.0f64..50.0, 1..20),
            frac in 0.0f64..=1.0,
            avg in 0.0f64..1.0,
            bphi in 0.0f64..10.0,
            btheta in 0.0f64..10.0,
        ) {
            let max_phase = phases.iter().copied().fold(0.0, f64::max);
            let server = frac * max_phase;
            let p = parallel_round_duration(&phases, server, avg, bphi, btheta);
            let s = serial_round_duration(&phases, server, avg, bphi, btheta);
            prop_assert!(p <= s);
        }
    }
}
