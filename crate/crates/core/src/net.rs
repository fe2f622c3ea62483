//! Cell-level link budget: log-distance path loss, Shannon rate and
//! payload transmission times.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

/// Smallest device-to-server distance, km.
pub const MIN_DISTANCE_KM: f64 = 0.001;

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub cell_radius_km: f64,
    pub pathloss_a: f64,
    pub pathloss_b: f64,
    pub noise_psd_dbm_hz: f64,
    pub device_tx_dbm: f64,
    pub server_tx_dbm: f64,
    pub bandwidth_hz: f64,
    pub bits_per_param: u64,
    /// Std of per-round log-normal shadowing in dB; 0 disables it.
    pub shadowing_sigma_db: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            cell_radius_km: 0.3,
            pathloss_a: 128.1,
            pathloss_b: 37.6,
            noise_psd_dbm_hz: -174.0,
            device_tx_dbm: 24.0,
            server_tx_dbm: 46.0,
            bandwidth_hz: 1e7,
            bits_per_param: 16,
            shadowing_sigma_db: 0.0,
        }
    }
}

impl NetworkConfig {
    pub fn path_loss_db(&self, d_km: f64) -> Result<f64> {
        if !(d_km > 0.0) {
            return Err(Error::InvalidArgument(format!("distance must be positive, got {d_km}")));
        }
        Ok(self.pathloss_a + self.pathloss_b * d_km.log10())
    }

    /// Uplink and downlink rates for a device at `distance_km` with an extra
    /// `shadowing_db` of loss.
    pub fn link_state(&self, device_id: usize, distance_km: f64, shadowing_db: f64) -> Result<LinkState> {
        let pl = self.path_loss_db(distance_km)? + shadowing_db;
        let up = link_rate_bps(self.device_tx_dbm, pl, self.bandwidth_hz, self.noise_psd_dbm_hz);
        let down = link_rate_bps(self.server_tx_dbm, pl, self.bandwidth_hz, self.noise_psd_dbm_hz);
        if !(up > 0.0 && up.is_finite() && down > 0.0 && down.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "device {device_id}: degenerate link rate (up {up}, down {down})"
            )));
        }
        Ok(LinkState {
            device_id,
            uplink_rate_bps: up,
            downlink_rate_bps: down,
        })
    }

    pub fn payload_bits(&self, param_count: u64) -> u64 {
        param_count * self.bits_per_param
    }
}

/// 128.1 + 37.6·log10(d) with the default constants.
pub fn path_loss_db(d_km: f64) -> Result<f64> {
    NetworkConfig::default().path_loss_db(d_km)
}

/// `B·log2(1 + SNR)` with the noise power integrated over the band.
pub fn link_rate_bps(tx_dbm: f64, pl_db: f64, bandwidth_hz: f64, noise_psd_dbm_hz: f64) -> f64 {
    let noise_dbm = noise_psd_dbm_hz + 10.0 * bandwidth_hz.log10();
    let snr = 10f64.powf((tx_dbm - pl_db - noise_dbm) / 10.0);
    bandwidth_hz * (1.0 + snr).log2()
}

/// Seconds to send `param_count` parameters over `share` of a link.
pub fn transmit_time_s(param_count: u64, bits_per_param: u64, rate_bps: f64, share: f64) -> f64 {
    (param_count * bits_per_param) as f64 / (rate_bps * share)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DevicePlacement {
    pub device_id: usize,
    pub distance_km: f64,
    pub angle_rad: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkState {
    pub device_id: usize,
    pub uplink_rate_bps: f64,
    pub downlink_rate_bps: f64,
}

/// Devices uniform over the disk: `r = radius·sqrt(u)`.
pub fn place_devices(k: usize, radius_km: f64, seed: u64) -> Vec<DevicePlacement> {
    let mut rng = rng::stream(seed, 0);
    (0..k)
        .map(|device_id| {
            let u: f64 = rng.random();
            let angle_rad = rng.random::<f64>() * 2.0 * PI;
            DevicePlacement {
                device_id,
                distance_km: (radius_km * u.sqrt()).max(MIN_DISTANCE_KM),
                angle_rad,
            }
        })
        .collect()
}

/// Per-round log-normal shadowing in dB for each device.
pub fn shadowing_db(k: usize, sigma_db: f64, seed: u64, round: u64) -> Vec<f64> {
    if sigma_db == 0.0 {
        return vec![0.0; k];
    }
    let mut rng = rng::stream(seed, round);
    (0..k)
        .map(|_| sigma_db * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Time for the server to broadcast `param_count` parameters to everyone:
/// limited by the slowest recipient.
pub fn broadcast_time_s(param_count: u64, bits_per_param: u64, links: &[LinkState]) -> f64 {
    let min_rate = links
        .iter()
        .map(|l| l.downlink_rate_bps)
        .fold(f64::INFINITY, f64::min);
    if links.is_empty() {
        0.0
    } else {
        transmit_time_s(param_count, bits_per_param, min_rate, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_loss_examples() {
        assert!((path_loss_db(0.1).unwrap() - 90.5).abs() < 1e-12);
        assert_eq!(path_loss_db(1.0).unwrap(), 128.1);
        let pl = path_loss_db(0.3).unwrap();
        assert!((pl - 108.439_759).abs() < 1e-5, "{pl}");
        assert!(path_loss_db(0.0).is_err());
        assert!(path_loss_db(-1.0).is_err());
    }

    #[test]
    fn unit_snr_gives_bandwidth() {
        // noise power over 1 MHz at −174 dBm/Hz is −114 dBm
        let rate = link_rate_bps(-14.0, 100.0, 1e6, -174.0);
        assert!((rate - 1e6).abs() < 1e-6);
    }

    #[test]
    fn link_budget_at_100m() {
        let rate = link_rate_bps(24.0, 90.5, 1e7, -174.0);
        // SNR 37.5 dB
        let oracle = 1e7 * (1.0 + 10f64.powf(3.75)).log2();
        assert!((rate - oracle).abs() < 1e-6);
        assert!((rate / 1.246e8 - 1.0).abs() < 1e-3, "{rate}");
    }

    #[test]
    fn rate_is_monotone() {
        let mut prev = 0.0;
        for tx in (0..40).map(|t| t as f64) {
            let r = link_rate_bps(tx, 100.0, 1e7, -174.0);
            assert!(r > prev);
            prev = r;
        }
        let mut prev = f64::INFINITY;
        for pl in (60..140).map(|p| p as f64) {
            let r = link_rate_bps(24.0, pl, 1e7, -174.0);
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn transmit_time_examples() {
        assert_eq!(2_765_568u64 * 16, 44_249_088);
        let rate = link_rate_bps(24.0, 90.5, 1e7, -174.0);
        let t = transmit_time_s(2_765_568, 16, rate, 1.0);
        assert!((t - 0.355).abs() < 1e-3, "{t}");
        assert_eq!(transmit_time_s(2_765_568, 16, rate, 0.5), 2.0 * t);
    }

    #[test]
    fn placements() {
        let p = place_devices(10_000, 0.3, 5);
        assert!(p.iter().all(|d| d.distance_km <= 0.3 && d.distance_km >= MIN_DISTANCE_KM));
        let mean = p.iter().map(|d| d.distance_km).sum::<f64>() / p.len() as f64;
        assert!((mean / 0.2 - 1.0).abs() < 0.02, "{mean}");
        assert_eq!(place_devices(7, 0.3, 9), place_devices(7, 0.3, 9));
        assert_ne!(place_devices(7, 0.3, 9), place_devices(7, 0.3, 10));
    }

    #[test]
    fn broadcast_uses_worst_receiver() {
        let net = NetworkConfig::default();
        let near = net.link_state(0, 0.05, 0.0).unwrap();
        let far = net.link_state(1, 0.3, 0.0).unwrap();
        let t = broadcast_time_s(1000, 16, &[near, far]);
        assert_eq!(t, transmit_time_s(1000, 16, far.downlink_rate_bps, 1.0));
        assert!(far.uplink_rate_bps < far.downlink_rate_bps);
    }

    #[test]
    fn shadowing_is_seeded() {
        assert_eq!(shadowing_db(4, 0.0, 1, 2), vec![0.0; 4]);
        let a = shadowing_db(1000, 8.0, 1, 2);
        assert_eq!(a, shadowing_db(1000, 8.0, 1, 2));
        assert_ne!(a, shadowing_db(1000, 8.0, 1, 3));
        let mean = a.iter().sum::<f64>() / 1000.0;
        let sd = (a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 999.0).sqrt();
        assert!(mean.abs() < 1.0 && (sd - 8.0).abs() < 0.8);
    }
}
