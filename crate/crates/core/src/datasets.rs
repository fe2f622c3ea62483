//! Synthetic 2-D mixture data and equal-size random partitioning.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

pub type Point = [f64; 2];

#[derive(Clone, Debug, PartialEq)]
pub struct Mode {
    pub mean: Point,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSpec {
    pub modes: Vec<Mode>,
    pub weights: Vec<f64>,
}

impl MixtureSpec {
    /// `count` equally weighted modes evenly spaced on a circle.
    pub fn ring(count: usize, radius: f64, std: f64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("ring needs at least one mode".into()));
        }
        let modes = (0..count)
            .map(|i| {
                let angle = 2.0 * PI * i as f64 / count as f64;
                Mode {
                    mean: [radius * angle.cos(), radius * angle.sin()],
                    std,
                }
            })
            .collect();
        let spec = MixtureSpec {
            modes,
            weights: vec![1.0 / count as f64; count],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::InvalidArgument("mixture has no modes".into()));
        }
        if self.weights.len() != self.modes.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} modes",
                self.weights.len(),
                self.modes.len()
            )));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidArgument("mixture weights must be non-negative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}")));
        }
        if self.modes.iter().any(|m| !(m.std > 0.0) || !m.std.is_finite()) {
            return Err(Error::InvalidArgument("mode std must be positive".into()));
        }
        Ok(())
    }

    pub fn means(&self) -> Vec<Point> {
        self.modes.iter().map(|m| m.mean).collect()
    }
}

/// Draws `n` points i.i.d. from the mixture, returning each point's mode.
pub fn sample_mixture_labeled(spec: &MixtureSpec, n: usize, seed: u64) -> Result<Vec<(Point, usize)>> {
    spec.validate()?;
    let mut rng = rng::stream(seed, 0);
    let cumulative: Vec<f64> = spec
        .weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let last = spec.modes.len() - 1;
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let k = cumulative.iter().position(|&c| u < c).unwrap_or(last);
            let mode = &spec.modes[k];
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            ([mode.mean[0] + mode.std * dx, mode.mean[1] + mode.std * dy], k)
        })
        .collect())
}

pub fn sample_mixture(spec: &MixtureSpec, n: usize, seed: u64) -> Result<Vec<Point>> {
    Ok(sample_mixture_labeled(spec, n, seed)?.into_iter().map(|(p, _)| p).collect())
}

/// One device's private data.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceShard {
    pub device_id: usize,
    pub points: Vec<Point>,
}

impl DeviceShard {
    pub fn size(&self) -> usize {
        self.points.len()
    }

    /// Row-major view for the training kernels.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub shards: Vec<DeviceShard>,
    /// Points dropped so that every shard has equal size.
    pub truncated: usize,
}

/// Random permutation split into `k` equal shards. Leftover points beyond
/// the largest multiple of `k` are dropped and counted in `truncated`.
pub fn partition_equal(points: &[Point], k: usize, seed: u64) -> Result<Partition> {
    if k == 0 {
        return Err(Error::InvalidArgument("number of devices must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut rng::stream(seed, 0));
    let per = points.len() / k;
    let shards = (0..k)
        .map(|device_id| DeviceShard {
            device_id,
            points: order[device_id * per..(device_id + 1) * per]
                .iter()
                .map(|&i| points[i])
                .collect(),
        })
        .collect();
    Ok(Partition {
        shards,
        truncated: points.len() - per * k,
    })
}

/// Writes `x,y,device_id` rows.
pub fn export_csv(shards: &[DeviceShard], path: &Path) -> Result<()> {
    let mut out = String::from("x,y,device_id\n");
    for shard in shards {
        for p in &shard.points {
            out.push_str(&format!("{:.17e},{:.17e},{}\n", p[0], p[1], shard.device_id));
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
