//! GAN gradient functions and the three component algorithms: local
//! discriminator ascent on a device, sample-size-weighted discriminator
//! averaging, and generator descent at the server.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{axpy_update, init_mlp, Mlp, MlpSpec, OutputActivation, ParamVec};
use crate::rng;

/// Probabilities are clamped to `[D_CLAMP, 1 - D_CLAMP]` before taking logs.
pub const D_CLAMP: f64 = 1e-7;

/// Architecture of a generator/discriminator pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanShape {
    pub generator: MlpSpec,
    pub discriminator: MlpSpec,
    pub noise_dim: usize,
}

impl GanShape {
    pub fn new(generator: MlpSpec, discriminator: MlpSpec) -> Result<Self> {
        let shape = GanShape {
            noise_dim: generator.layer_sizes.first().copied().unwrap_or(0),
            generator,
            discriminator,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.generator.input_dim() != self.noise_dim {
            return Err(Error::InvalidSpec(format!(
                "generator input {} != noise dim {}",
                self.generator.input_dim(),
                self.noise_dim
            )));
        }
        if self.generator.output_dim() != self.discriminator.input_dim() {
            return Err(Error::InvalidSpec(format!(
                "generator output {} != discriminator input {}",
                self.generator.output_dim(),
                self.discriminator.input_dim()
            )));
        }
        if self.discriminator.output_dim() != 1
            || self.discriminator.output_activation != OutputActivation::Sigmoid
        {
            return Err(Error::InvalidSpec(
                "discriminator must have a single sigmoid output".into(),
            ));
        }
        Ok(())
    }

    pub fn data_dim(&self) -> usize {
        self.generator.output_dim()
    }

    pub fn theta_len(&self) -> usize {
        self.generator.parameter_count()
    }

    pub fn phi_len(&self) -> usize {
        self.discriminator.parameter_count()
    }

    fn generator(&self, theta: &ParamVec) -> Result<Mlp> {
        Mlp::new(self.generator.clone(), theta.clone())
    }

    fn discriminator(&self, phi: &ParamVec) -> Result<Mlp> {
        Mlp::new(self.discriminator.clone(), phi.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanModel {
    pub generator: Mlp,
    pub discriminator: Mlp,
    pub noise_dim: usize,
}

impl GanModel {
    pub fn init(shape: &GanShape, generator_seed: u64, discriminator_seed: u64) -> Result<Self> {
        shape.validate()?;
        Ok(GanModel {
            generator: init_mlp(&shape.generator, generator_seed)?,
            discriminator: init_mlp(&shape.discriminator, discriminator_seed)?,
            noise_dim: shape.noise_dim,
        })
    }

    pub fn from_params(shape: &GanShape, theta: ParamVec, phi: ParamVec) -> Result<Self> {
        Ok(GanModel {
            generator: shape.generator(&theta)?,
            discriminator: shape.discriminator(&phi)?,
            noise_dim: shape.noise_dim,
        })
    }

    pub fn shape(&self) -> GanShape {
        GanShape {
            generator: self.generator.spec().clone(),
            discriminator: self.discriminator.spec().clone(),
            noise_dim: self.noise_dim,
        }
    }

    /// Generator outputs for a noise batch, row-major.
    pub fn generate(&self, z: &NoiseBatch) -> Result<Vec<f64>> {
        check_dim("generate", self.noise_dim, z.dim)?;
        Ok(self.generator.forward_batch(&z.samples, z.len())?.output().to_vec())
    }
}

/// Where a noise batch comes from: the stream keyed by `seed`, positioned
/// at `offset`, `count` vectors long.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseRef {
    pub seed: u64,
    pub offset: u64,
    pub count: usize,
}

/// Standard-normal noise vectors, row-major `count x dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBatch {
    pub samples: Vec<f64>,
    pub dim: usize,
    pub source_seed: u64,
    pub stream_offset: u64,
}

impl NoiseBatch {
    pub fn generate(seed: u64, offset: u64, count: usize, dim: usize) -> Self {
        let mut rng = rng::stream(seed, offset);
        let samples = (0..count * dim).map(|_| rng.sample(StandardNormal)).collect();
        NoiseBatch {
            samples,
            dim,
            source_seed: seed,
            stream_offset: offset,
        }
    }

    pub fn from_ref(r: NoiseRef, dim: usize) -> Self {
        Self::generate(r.seed, r.offset, r.count, dim)
    }

    /// Row-wise concatenation; provenance is taken from the first batch.
    pub fn concat(parts: &[NoiseBatch]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument("no noise batches".into()))?;
        let mut samples = Vec::with_capacity(parts.iter().map(|p| p.samples.len()).sum());
        for p in parts {
            check_dim("NoiseBatch::concat", first.dim, p.dim)?;
            samples.extend_from_slice(&p.samples);
        }
        Ok(NoiseBatch {
            samples,
            dim: first.dim,
            source_seed: first.source_seed,
            stream_offset: first.stream_offset,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Real data vectors, row-major `count x dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataBatch {
    pub samples: Vec<f64>,
    pub dim: usize,
}

impl DataBatch {
    pub fn len(&self) -> usize {
        self.samples.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

#[inline]
fn clamp_prob(d: f64) -> f64 {
    d.clamp(D_CLAMP, 1.0 - D_CLAMP)
}

fn finite(p: ParamVec, what: &'static str) -> Result<ParamVec> {
    if p.is_finite() {
        Ok(p)
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Batch mean of ∇_θ log(1 − D(φ, G(θ, z_i))).
pub fn grad_theta(theta: &ParamVec, phi: &ParamVec, z: &NoiseBatch, shape: &GanShape) -> Result<ParamVec> {
    if z.is_empty() {
        return Err(Error::InvalidArgument("empty noise batch".into()));
    }
    check_dim("grad_theta noise", shape.noise_dim, z.dim)?;
    let gen = shape.generator(theta)?;
    let disc = shape.discriminator(phi)?;
    let m = z.len();
    let g_trace = gen.forward_batch(&z.samples, m)?;
    let d_trace = disc.forward_batch(g_trace.output(), m)?;
    let inv_m = 1.0 / m as f64;
    let upstream: Vec<f64> = d_trace
        .output()
        .iter()
        .map(|&d| -inv_m / (1.0 - clamp_prob(d)))
        .collect();
    let fake_grad = disc.input_grad_batch(&d_trace, &upstream)?;
    let (grad, _) = gen.backward_batch(&g_trace, &fake_grad)?;
    finite(grad, "grad_theta")
}

/// Batch mean of ∇_φ [log D(φ, x_i) + log(1 − D(φ, G(θ, z_i)))].
pub fn grad_phi(
    theta: &ParamVec,
    phi: &ParamVec,
    z: &NoiseBatch,
    x: &DataBatch,
    shape: &GanShape,
) -> Result<ParamVec> {
    let gen = shape.generator(theta)?;
    let fakes = gen.forward_batch(&z.samples, z.len())?;
    grad_phi_with_fakes(phi, fakes.output(), x, shape)
}

/// [`grad_phi`] with the generator outputs already computed.
fn grad_phi_with_fakes(phi: &ParamVec, fakes: &[f64], x: &DataBatch, shape: &GanShape) -> Result<ParamVec> {
    let dim = shape.data_dim();
    check_dim("grad_phi data", dim, x.dim)?;
    let m = x.len();
    if m == 0 {
        return Err(Error::InvalidArgument("empty data batch".into()));
    }
    check_dim("grad_phi batch", m, fakes.len() / dim)?;
    let disc = shape.discriminator(phi)?;
    let mut inputs = Vec::with_capacity(2 * m * dim);
    inputs.extend_from_slice(&x.samples);
    inputs.extend_from_slice(fakes);
    let trace = disc.forward_batch(&inputs, 2 * m)?;
    let inv_m = 1.0 / m as f64;
    let (real, fake) = trace.output().split_at(m);
    let upstream: Vec<f64> = real
        .iter()
        .map(|&d| inv_m / clamp_prob(d))
        .chain(fake.iter().map(|&d| -inv_m / (1.0 - clamp_prob(d))))
        .collect();
    let (grad, _) = disc.backward_batch(&trace, &upstream)?;
    finite(grad, "grad_phi")
}

/// (1/M) Σ log(1 − D(G(z_i))); the scalar whose θ-gradient is [`grad_theta`].
pub fn generator_loss(theta: &ParamVec, phi: &ParamVec, z: &NoiseBatch, shape: &GanShape) -> Result<f64> {
    let gen = shape.generator(theta)?;
    let disc = shape.discriminator(phi)?;
    let fakes = gen.forward_batch(&z.samples, z.len())?;
    let d = disc.forward_batch(fakes.output(), z.len())?;
    Ok(d.output().iter().map(|&p| (1.0 - clamp_prob(p)).ln()).sum::<f64>() / z.len() as f64)
}

/// (1/m) Σ [log D(x_i) + log(1 − D(G(z_i)))]; the scalar behind [`grad_phi`].
pub fn discriminator_objective(
    theta: &ParamVec,
    phi: &ParamVec,
    z: &NoiseBatch,
    x: &DataBatch,
    shape: &GanShape,
) -> Result<f64> {
    let gen = shape.generator(theta)?;
    let disc = shape.discriminator(phi)?;
    let fakes = gen.forward_batch(&z.samples, z.len())?;
    let d_fake = disc.forward_batch(fakes.output(), z.len())?;
    let d_real = disc.forward_batch(&x.samples, x.len())?;
    let real: f64 = d_real.output().iter().map(|&p| clamp_prob(p).ln()).sum();
    let fake: f64 = d_fake.output().iter().map(|&p| (1.0 - clamp_prob(p)).ln()).sum();
    Ok((real + fake) / x.len() as f64)
}

/// Mean discriminator output on a set of points.
pub fn mean_discriminator_output(phi: &ParamVec, points: &[f64], shape: &GanShape) -> Result<f64> {
    let disc = shape.discriminator(phi)?;
    let n = points.len() / shape.data_dim();
    if n == 0 {
        return Ok(f64::NAN);
    }
    let trace = disc.forward_batch(points, n)?;
    Ok(trace.output().iter().sum::<f64>() / n as f64)
}

/// What a device needs to run its local discriminator update: its shard and
/// the seeds of its noise and data-sampling streams.
#[derive(Clone, Copy, Debug)]
pub struct LocalTrainer<'a> {
    pub device_id: usize,
    /// Row-major `n_k x data_dim`.
    pub shard: &'a [f64],
    pub noise_seed: u64,
    pub sampling_seed: u64,
    /// Stream offset of the first step; step `j` (1-based) uses `start_offset + j - 1`.
    pub start_offset: u64,
    pub batch_size: usize,
}

impl LocalTrainer<'_> {
    pub fn noise_ref(&self, step: usize) -> NoiseRef {
        NoiseRef {
            seed: self.noise_seed,
            offset: self.start_offset + step as u64,
            count: self.batch_size,
        }
    }

    /// Mini-batch drawn uniformly with replacement from the shard.
    pub fn data_batch(&self, step: usize, dim: usize) -> DataBatch {
        let n = self.shard.len() / dim;
        let mut rng = rng::stream(self.sampling_seed, self.start_offset + step as u64);
        let mut samples = Vec::with_capacity(self.batch_size * dim);
        for _ in 0..self.batch_size {
            let i = rng.random_range(0..n);
            samples.extend_from_slice(&self.shard[i * dim..(i + 1) * dim]);
        }
        DataBatch { samples, dim }
    }
}

/// Local discriminator update: `n_d` mini-batch ascent steps on φ with θ
/// held fixed.
pub fn device_update(
    theta: &ParamVec,
    phi_in: &ParamVec,
    device: &LocalTrainer<'_>,
    n_d: usize,
    eta_d: f64,
    shape: &GanShape,
) -> Result<ParamVec> {
    let dim = shape.data_dim();
    if device.shard.len() < dim {
        return Err(Error::EmptyDataset(device.device_id));
    }
    if n_d == 0 {
        return Err(Error::InvalidArgument("n_d must be at least 1".into()));
    }
    if device.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let gen = shape.generator(theta)?;
    let mut phi = phi_in.clone();
    for step in 0..n_d {
        let z = NoiseBatch::from_ref(device.noise_ref(step), shape.noise_dim);
        let x = device.data_batch(step, dim);
        let fakes = gen.forward_batch(&z.samples, z.len())?;
        let g = grad_phi_with_fakes(&phi, fakes.output(), &x, shape)?;
        phi = axpy_update(&phi, &g, eta_d)?;
    }
    Ok(phi)
}

/// Sample-size-weighted mean `Σ m_k φ_k / Σ m_k`, accumulated in the order
/// given.
pub fn average_discriminators(contributions: &[(&ParamVec, u64)]) -> Result<ParamVec> {
    let (first, _) = contributions.first().ok_or(Error::EmptyContributions)?;
    let len = first.len();
    let total: u64 = contributions.iter().map(|(_, m)| m).sum();
    if contributions.iter().any(|&(_, m)| m == 0) {
        return Err(Error::InvalidArgument("sample sizes must be positive".into()));
    }
    let mut acc = vec![0.0; len];
    for (phi, m) in contributions {
        check_dim("average_discriminators", len, phi.len())?;
        let w = *m as f64 / total as f64;
        for (a, v) in acc.iter_mut().zip(phi.as_slice()) {
            *a += w * v;
        }
    }
    finite(ParamVec::from_vec(acc), "average_discriminators")
}

/// Generator noise for each of the `n_g` server steps.
#[derive(Clone, Debug, PartialEq)]
pub enum GeneratorNoise {
    /// Fresh draws from the server's own stream, `batch` vectors per step.
    Fresh { seed: u64, start_offset: u64, batch: usize },
    /// Regenerated from announced device streams and concatenated in the
    /// order given; step `j` uses offset `offset + j` of every stream.
    Announced(Vec<NoiseRef>),
}

impl GeneratorNoise {
    pub fn batch(&self, step: usize, dim: usize) -> Result<NoiseBatch> {
        match self {
            GeneratorNoise::Fresh {
                seed,
                start_offset,
                batch,
            } => Ok(NoiseBatch::generate(*seed, start_offset + step as u64, *batch, dim)),
            GeneratorNoise::Announced(refs) => {
                let parts: Vec<NoiseBatch> = refs
                    .iter()
                    .map(|r| NoiseBatch::generate(r.seed, r.offset + step as u64, r.count, dim))
                    .collect();
                NoiseBatch::concat(&parts)
            }
        }
    }
}

/// Server generator update: `n_g` descent steps on θ with φ held fixed.
pub fn server_generator_update(
    theta_in: &ParamVec,
    phi: &ParamVec,
    n_g: usize,
    eta_g: f64,
    noise: &GeneratorNoise,
    shape: &GanShape,
) -> Result<ParamVec> {
    if n_g == 0 {
        return Err(Error::InvalidArgument("n_g must be at least 1".into()));
    }
    let mut theta = theta_in.clone();
    for step in 0..n_g {
        let z = noise.batch(step, shape.noise_dim)?;
        let g = grad_theta(&theta, phi, &z, shape)?;
        theta = axpy_update(&theta, &g, -eta_g)?;
    }
    Ok(theta)
}
