//! Command-line front end and CSV artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{ExperimentConfig, Framework};
use crate::error::{Error, Result};
use crate::gan::{
    average_discriminators, discriminator_objective, generator_loss, grad_phi, grad_theta, DataBatch, GanShape,
    NoiseBatch,
};
use crate::nn::{finite_diff_grad, Activation, MlpSpec, OutputActivation, ParamVec};
use crate::orchestrator::{
    parallel_round_duration, run_experiment, run_experiment_with, serial_round_duration, ExperimentOutcome,
    Message, RoundLog, RunOptions,
};
use crate::rng;

pub const SEED_ENV: &str = "DGAN_SEED";

pub const ROUNDS_HEADER: &str = "round_index,scheduled,excluded,device_compute_s,uplink_s,averaging_s,\
server_compute_s,broadcast_phi_s,broadcast_theta_s,round_duration_s,cumulative_sim_time_s,\
uplink_bits,downlink_bits,metric_value,mode_coverage,aborted";

pub const SUMMARY_HEADER: &str = "framework,master_seed,rounds,initial_metric,final_metric,final_mode_coverage,\
final_high_quality_fraction,total_sim_time_s,total_uplink_bits,total_downlink_bits,total_bits,\
rounds_to_target,time_to_target_s,diverged_round";

#[derive(Debug, Parser)]
#[command(name = "dgan", version, about = "Distributed GAN training simulator over a wireless cell")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its CSV artifacts.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment per value of a config field.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired runs of several frameworks over several seeds.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "proposed_serial,fedgan")]
        frameworks: String,
        #[arg(long, default_value = "1,2,3,4,5")]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic GAN gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

/// Formats a real with 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn ids(list: &[usize]) -> String {
    list.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

pub fn rounds_csv(logs: &[RoundLog]) -> String {
    let mut out = String::from(ROUNDS_HEADER);
    out.push('\n');
    for l in logs {
        let p = &l.phases;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            l.round_index,
            ids(&l.schedule.scheduled),
            ids(&l.excluded_devices),
            fmt_real(p.device_compute_s),
            fmt_real(p.uplink_s),
            fmt_real(p.averaging_s),
            fmt_real(p.server_compute_s),
            fmt_real(p.broadcast_phi_s),
            fmt_real(p.broadcast_theta_s),
            fmt_real(l.round_duration_s),
            fmt_real(l.cumulative_sim_time_s),
            l.uplink_bits,
            l.downlink_bits,
            l.metric_value.map(fmt_real).unwrap_or_default(),
            l.mode_coverage.map(|c| c.to_string()).unwrap_or_default(),
            u8::from(l.aborted),
        );
    }
    out
}

pub fn summary_row(cfg: &ExperimentConfig, o: &ExperimentOutcome) -> String {
    let up: u64 = o.logs.iter().map(|l| l.uplink_bits).sum();
    let down: u64 = o.logs.iter().map(|l| l.downlink_bits).sum();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        cfg.framework,
        cfg.run.master_seed,
        o.logs.len(),
        fmt_real(o.initial_report.frechet_gaussian),
        fmt_real(o.final_report.frechet_gaussian),
        o.final_report.mode_coverage,
        fmt_real(o.final_report.high_quality_fraction),
        fmt_real(o.total_sim_time_s()),
        up,
        down,
        up + down,
        o.rounds_to_target.map(|r| r.to_string()).unwrap_or_default(),
        o.time_to_target_s.map(fmt_real).unwrap_or_default(),
        o.diverged.as_ref().map(|(r, _)| r.to_string()).unwrap_or_default(),
    )
}

fn samples_csv(o: &ExperimentOutcome) -> String {
    let mut out = String::from("x,y\n");
    for p in &o.samples {
        let _ = writeln!(out, "{},{}", fmt_real(p[0]), fmt_real(p[1]));
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `rounds.csv`, `summary.csv`, `config.resolved` and `samples.csv`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, o: &ExperimentOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("rounds.csv"), &rounds_csv(&o.logs))?;
    write(
        &dir.join("summary.csv"),
        &format!("{SUMMARY_HEADER}\n{}\n", summary_row(cfg, o)),
    )?;
    write(&dir.join("config.resolved"), &cfg.to_text())?;
    write(&dir.join("samples.csv"), &samples_csv(o))
}

/// Loads a config file (or the defaults) and applies `DGAN_SEED`.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Ok(seed) = std::env::var(SEED_ENV) {
        let seed = seed
            .trim()
            .parse::<u64>()
            .map_err(|e| Error::config(SEED_ENV, format!("not an unsigned integer: {e}")))?;
        cfg.run.master_seed = seed;
    }
    Ok(cfg)
}

fn report_divergence(o: &ExperimentOutcome) -> bool {
    if let Some((round, cause)) = &o.diverged {
        eprintln!("error: training diverged at round {round}: {cause}");
        return false;
    }
    true
}

/// Runs one experiment into `out`; returns whether the parameters stayed finite.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let outcome = run_experiment(cfg)?;
    write_run(out, cfg, &outcome)?;
    Ok(report_divergence(&outcome))
}

fn split_list(values: &str) -> Vec<String> {
    values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(str::to_string)
        .collect()
}

/// One run directory per value plus `sweep.csv`.
pub fn sweep(base: &ExperimentConfig, axis: &str, values: &[String], out: &Path) -> Result<bool> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".into()));
    }
    if base.get(axis).is_none() {
        return Err(Error::config(axis, "unknown sweep axis"));
    }
    let configs = values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            cfg.set_from_str(axis, v)?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut aggregate = format!("axis,value,{SUMMARY_HEADER}\n");
    let mut ok = true;
    for (value, cfg) in values.iter().zip(&configs) {
        let dir = out.join(format!("{axis}={value}"));
        let outcome = run_experiment(cfg)?;
        write_run(&dir, cfg, &outcome)?;
        ok &= report_divergence(&outcome);
        let _ = writeln!(aggregate, "{axis},{value},{}", summary_row(cfg, &outcome));
    }
    write(&out.join("sweep.csv"), &aggregate)?;
    Ok(ok)
}

/// Paired runs: every framework sees the same seeds, data and schedules.
pub fn compare(base: &ExperimentConfig, frameworks: &[Framework], seeds: &[u64], out: &Path) -> Result<bool> {
    if frameworks.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("compare needs at least one framework and one seed".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut table = format!("{SUMMARY_HEADER}\n");
    let mut ok = true;
    for &fw in frameworks {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.framework = fw;
            cfg.run.master_seed = seed;
            let outcome = run_experiment(&cfg)?;
            write_run(&out.join(format!("{fw}_seed{seed}")), &cfg, &outcome)?;
            ok &= report_divergence(&outcome);
            let _ = writeln!(table, "{}", summary_row(&cfg, &outcome));
        }
    }
    write(&out.join("comparison.csv"), &table)?;
    Ok(ok)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckReport {
    pub instances: usize,
    pub max_rel_err_theta: f64,
    pub max_rel_err_phi: f64,
}

/// `max_i |a_i − b_i| / max(‖a‖∞, ‖b‖∞)`.
pub fn max_rel_err(a: &ParamVec, b: &ParamVec) -> f64 {
    let scale = a.max_abs().max(b.max_abs()).max(1e-12);
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

/// Random small tanh GANs: analytic gradients against central differences
/// of the losses they differentiate.
pub fn gradcheck(instances: usize, seed: u64) -> Result<GradcheckReport> {
    let mut worst = (0.0f64, 0.0f64);
    for i in 0..instances as u64 {
        let mut r = rng::stream(rng::split_seed(seed, "gradcheck", i), 0);
        let noise_dim = r.random_range(1..=3);
        let data_dim = r.random_range(1..=3);
        let gh = r.random_range(2..=6);
        let dh = r.random_range(2..=6);
        let m = r.random_range(1..=5);
        let shape = GanShape::new(
            MlpSpec::new(vec![noise_dim, gh, data_dim], Activation::Tanh, OutputActivation::Identity)?,
            MlpSpec::new(vec![data_dim, dh, 1], Activation::Tanh, OutputActivation::Sigmoid)?,
        )?;
        let mut normal = |n: usize, s: f64| -> Vec<f64> { (0..n).map(|_| s * r.sample::<f64, _>(StandardNormal)).collect() };
        let theta = ParamVec::from_vec(normal(shape.theta_len(), 0.5));
        let phi = ParamVec::from_vec(normal(shape.phi_len(), 0.5));
        let z = NoiseBatch {
            samples: normal(m * noise_dim, 1.0),
            dim: noise_dim,
            source_seed: 0,
            stream_offset: 0,
        };
        let x = DataBatch {
            samples: normal(m * data_dim, 1.0),
            dim: data_dim,
        };
        let gt = grad_theta(&theta, &phi, &z, &shape)?;
        let ft = finite_diff_grad(|t| generator_loss(t, &phi, &z, &shape).unwrap_or(f64::NAN), &theta, 1e-5);
        let gp = grad_phi(&theta, &phi, &z, &x, &shape)?;
        let fp = finite_diff_grad(
            |p| discriminator_objective(&theta, p, &z, &x, &shape).unwrap_or(f64::NAN),
            &phi,
            1e-5,
        );
        worst.0 = worst.0.max(max_rel_err(&gt, &ft));
        worst.1 = worst.1.max(max_rel_err(&gp, &fp));
    }
    Ok(GradcheckReport {
        instances,
        max_rel_err_theta: worst.0,
        max_rel_err_phi: worst.1,
    })
}

/// Named invariant checks with their outcome.
pub fn selftest() -> Vec<(&'static str, bool)> {
    let mut results = Vec::new();

    let grads = gradcheck(20, 1).map(|g| g.max_rel_err_theta < 1e-4 && g.max_rel_err_phi < 1e-4);
    results.push(("gradients match finite differences", grads.unwrap_or(false)));

    let a = ParamVec::from_vec(vec![1.0, -2.0]);
    let b = ParamVec::from_vec(vec![3.0, 4.0]);
    let avg = average_discriminators(&[(&a, 1), (&b, 3)]).ok();
    let avg_ok = avg.is_some_and(|v| (v.as_slice()[0] - 2.5).abs() < 1e-12 && (v.as_slice()[1] - 2.5).abs() < 1e-12);
    results.push(("weighted averaging", avg_ok));

    let mut timing_ok = true;
    let mut r = rng::stream(7, 0);
    for _ in 0..1000 {
        let phases: Vec<f64> = (0..r.random_range(1..10)).map(|_| r.random::<f64>() * 10.0).collect();
        let server = phases.iter().copied().fold(0.0, f64::max) * r.random::<f64>();
        let (bp, bt) = (r.random::<f64>(), r.random::<f64>());
        timing_ok &= parallel_round_duration(&phases, server, 0.0, bp, bt) <= serial_round_duration(&phases, server, 0.0, bp, bt);
    }
    results.push(("parallel round never slower than serial", timing_ok));

    let mut cfg = ExperimentConfig::default();
    cfg.num_devices = 3;
    cfg.model.generator_hidden = vec![8];
    cfg.model.discriminator_hidden = vec![8];
    cfg.dataset.points_per_device = 64;
    cfg.train.batch_size = 16;
    cfg.train.generator_batch = 16;
    cfg.eval.samples = 100;
    cfg.eval.holdout = 100;
    cfg.run.max_rounds = 5;
    let det = (|| -> Result<bool> {
        let a = run_experiment(&cfg)?;
        let b = run_experiment(&cfg)?;
        Ok(rounds_csv(&a.logs) == rounds_csv(&b.logs) && a.theta.bit_eq(&b.theta))
    })();
    results.push(("runs are deterministic", det.unwrap_or(false)));

    let privacy = run_experiment_with(&cfg, &RunOptions { record_traffic: true }).map(|o| {
        !o.traffic.is_empty()
            && o.traffic.iter().all(|m| {
                matches!(
                    m,
                    Message::ScheduleSignal { .. }
                        | Message::SeedAnnouncement(_)
                        | Message::DiscriminatorUpload { .. }
                        | Message::GeneratorUpload { .. }
                        | Message::GlobalBroadcast { .. }
                )
            })
    });
    results.push(("messages carry no data", privacy.unwrap_or(false)));
    results
}

fn report_error(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::FAILURE
}

fn finish(result: Result<bool>) -> ExitCode {
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => report_error(&e),
    }
}

pub fn main_with(cli: Cli) -> ExitCode {
    match cli.command {
        Command::Run { config, out } => finish(load_config(config.as_deref()).and_then(|cfg| {
            let out = out.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
            run(&cfg, &out)
        })),
        Command::Sweep {
            config,
            axis,
            values,
            out,
        } => finish(load_config(config.as_deref()).and_then(|cfg| sweep(&cfg, &axis, &split_list(&values), &out))),
        Command::Compare {
            config,
            frameworks,
            seeds,
            out,
        } => finish((|| {
            let cfg = load_config(config.as_deref())?;
            let fws = split_list(&frameworks)
                .iter()
                .map(|f| f.parse::<Framework>().map_err(|e| Error::config("frameworks", e)))
                .collect::<Result<Vec<_>>>()?;
            let seeds = split_list(&seeds)
                .iter()
                .map(|s| s.parse::<u64>().map_err(|e| Error::config("seeds", e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            compare(&cfg, &fws, &seeds, &out)
        })()),
        Command::Gradcheck { instances, seed } => match gradcheck(instances, seed) {
            Ok(r) => {
                println!(
                    "instances {}  max rel err grad_theta {:.3e}  grad_phi {:.3e}",
                    r.instances, r.max_rel_err_theta, r.max_rel_err_phi
                );
                if r.max_rel_err_theta < 1e-4 && r.max_rel_err_phi < 1e-4 {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                }
            }
            Err(e) => report_error(&e),
        },
        Command::Selftest => {
            let results = selftest();
            for (name, ok) in &results {
                println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
            }
            if results.iter().all(|(_, ok)| *ok) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
