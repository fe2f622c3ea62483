//! Small dense feed-forward networks with exact backpropagation.
//!
//! Parameters live in one flat [`ParamVec`] so that they can be averaged,
//! transmitted and updated as a unit. Layer `l` occupies a contiguous block:
//! the `out x in` weight matrix in row-major order followed by `out` biases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    /// Derivative expressed through the pre-activation and its image.
    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if pre > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(
        layer_sizes: Vec<usize>,
        hidden_activation: Activation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        let spec = MlpSpec {
            layer_sizes,
            hidden_activation,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 layer sizes, got {}",
                self.layer_sizes.len()
            )));
        }
        if let Some(i) = self.layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidSpec(format!("layer {i} has size 0")));
        }
        if let Activation::LeakyRelu(slope) = self.hidden_activation {
            if !slope.is_finite() {
                return Err(Error::InvalidSpec("leaky relu slope must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Σ_l (sizes[l]·sizes[l+1] + sizes[l+1]).
    pub fn parameter_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.layer_sizes.windows(2).map(move |w| {
            let start = offset;
            offset += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }
}

/// Flat parameter vector of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVec(Vec<f64>);

impl ParamVec {
    pub fn zeros(len: usize) -> Self {
        ParamVec(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVec(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &ParamVec) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `p + step·g`, elementwise. Shared kernel for discriminator ascent and
/// generator descent.
pub fn axpy_update(p: &ParamVec, g: &ParamVec, step: f64) -> Result<ParamVec> {
    if p.len() != g.len() {
        return Err(Error::DimensionMismatch {
            context: "axpy_update",
            expected: p.len(),
            got: g.len(),
        });
    }
    let out: Vec<f64> = p.0.iter().zip(&g.0).map(|(a, b)| a + step * b).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("axpy_update"));
    }
    Ok(ParamVec(out))
}

/// Central-difference gradient of `f` at `p`.
pub fn finite_diff_grad<F>(f: F, p: &ParamVec, eps: f64) -> ParamVec
where
    F: Fn(&ParamVec) -> f64,
{
    assert!(eps > 0.0, "finite_diff_grad needs eps > 0");
    let mut probe = p.clone();
    let grad = (0..p.len())
        .map(|i| {
            let orig = probe.0[i];
            probe.0[i] = orig + eps;
            let plus = f(&probe);
            probe.0[i] = orig - eps;
            let minus = f(&probe);
            probe.0[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect();
    ParamVec(grad)
}

/// One dense layer in structured form.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `weights[o][i]` connects input `i` to output `o`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

pub fn unflatten(spec: &MlpSpec, params: &ParamVec) -> Result<Vec<DenseLayer>> {
    spec.validate()?;
    check_len("unflatten", spec.parameter_count(), params.len())?;
    Ok(spec
        .layer_offsets()
        .map(|(start, fan_in, fan_out)| {
            let block = &params.0[start..start + fan_in * fan_out + fan_out];
            let (w, b) = block.split_at(fan_in * fan_out);
            DenseLayer {
                weights: w.chunks(fan_in).map(<[f64]>::to_vec).collect(),
                bias: b.to_vec(),
            }
        })
        .collect())
}

pub fn flatten(layers: &[DenseLayer]) -> ParamVec {
    let mut out = Vec::new();
    for layer in layers {
        for row in &layer.weights {
            out.extend_from_slice(row);
        }
        out.extend_from_slice(&layer.bias);
    }
    ParamVec(out)
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: ParamVec,
}

/// Glorot-uniform weights, zero biases. Each layer draws from its own stream
/// offset so layer `l` does not depend on the sizes of earlier layers.
pub fn init_mlp(spec: &MlpSpec, seed: u64) -> Result<Mlp> {
    spec.validate()?;
    let mut values = Vec::with_capacity(spec.parameter_count());
    for (layer, (_, fan_in, fan_out)) in spec.layer_offsets().enumerate() {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut rng = rng::stream(seed, layer as u64);
        values.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)));
        values.extend(std::iter::repeat_n(0.0, fan_out));
    }
    Ok(Mlp {
        spec: spec.clone(),
        params: ParamVec(values),
    })
}

/// Activations recorded by [`Mlp::forward_batch`] for a later backward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    batch: usize,
    /// `post[0]` is the input; `post[l+1]` the output of layer `l`.
    post: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Network outputs, row-major `batch x out`.
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("trace has at least the input")
    }
}

impl Mlp {
    pub fn new(spec: MlpSpec, params: ParamVec) -> Result<Self> {
        spec.validate()?;
        check_len("Mlp::new", spec.parameter_count(), params.len())?;
        Ok(Mlp { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVec {
        &self.params
    }

    pub fn into_params(self) -> ParamVec {
        self.params
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(input, 1)?.output().to_vec())
    }

    /// `inputs` is row-major `batch x input_dim`.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Trace> {
        check_len("forward", batch * self.spec.input_dim(), inputs.len())?;
        let last = self.spec.num_layers() - 1;
        let mut post = Vec::with_capacity(self.spec.num_layers() + 1);
        let mut pre = Vec::with_capacity(self.spec.num_layers());
        post.push(inputs.to_vec());
        for (layer, (start, fan_in, fan_out)) in self.spec.layer_offsets().enumerate() {
            let weights = &self.params.0[start..start + fan_in * fan_out];
            let bias = &self.params.0[start + fan_in * fan_out..start + fan_in * fan_out + fan_out];
            let x = post.last().expect("input pushed");
            let mut z = Vec::with_capacity(batch * fan_out);
            for row in x.chunks_exact(fan_in) {
                for (w, &b) in weights.chunks_exact(fan_in).zip(bias) {
                    z.push(b + dot(w, row));
                }
            }
            let a: Vec<f64> = if layer == last {
                match self.spec.output_activation {
                    OutputActivation::Identity => z.clone(),
                    OutputActivation::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
                }
            } else {
                let act = self.spec.hidden_activation;
                z.iter().map(|&v| act.apply(v)).collect()
            };
            pre.push(z);
            post.push(a);
        }
        Ok(Trace { batch, post, pre })
    }

    /// Gradient of `Σ_b upstream_b · output_b` with respect to the parameters
    /// (summed over the batch) and to each input row.
    pub fn backward_batch(&self, trace: &Trace, upstream: &[f64]) -> Result<(ParamVec, Vec<f64>)> {
        self.backward_impl(trace, upstream, true)
    }

    /// Input gradients only; skips accumulating parameter gradients.
    pub fn input_grad_batch(&self, trace: &Trace, upstream: &[f64]) -> Result<Vec<f64>> {
        Ok(self.backward_impl(trace, upstream, false)?.1)
    }

    fn backward_impl(
        &self,
        trace: &Trace,
        upstream: &[f64],
        param_grad: bool,
    ) -> Result<(ParamVec, Vec<f64>)> {
        let out_dim = self.spec.output_dim();
        check_len("backward", trace.batch * out_dim, upstream.len())?;
        check_len("backward", self.spec.num_layers() + 1, trace.post.len())?;

        let mut grad = vec![0.0; if param_grad { self.params.len() } else { 0 }];
        let last = self.spec.num_layers() - 1;
        let offsets: Vec<_> = self.spec.layer_offsets().collect();

        let mut delta: Vec<f64> = match self.spec.output_activation {
            OutputActivation::Identity => upstream.to_vec(),
            OutputActivation::Sigmoid => upstream
                .iter()
                .zip(trace.output())
                .map(|(u, s)| u * s * (1.0 - s))
                .collect(),
        };

        for layer in (0..=last).rev() {
            let (start, fan_in, fan_out) = offsets[layer];
            let weights = &self.params.0[start..start + fan_in * fan_out];
            let x = &trace.post[layer];
            if param_grad {
                let (gw, gb) = grad[start..start + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for (d_row, x_row) in delta.chunks_exact(fan_out).zip(x.chunks_exact(fan_in)) {
                    for ((gw_row, gb_o), &d) in gw.chunks_exact_mut(fan_in).zip(gb.iter_mut()).zip(d_row) {
                        *gb_o += d;
                        for (g, &xi) in gw_row.iter_mut().zip(x_row) {
                            *g += d * xi;
                        }
                    }
                }
            }
            let mut prev = vec![0.0; trace.batch * fan_in];
            for (d_row, p_row) in delta.chunks_exact(fan_out).zip(prev.chunks_exact_mut(fan_in)) {
                for (w, &d) in weights.chunks_exact(fan_in).zip(d_row) {
                    for (p, &wi) in p_row.iter_mut().zip(w) {
                        *p += d * wi;
                    }
                }
            }
            if layer == 0 {
                delta = prev;
                break;
            }
            let act = self.spec.hidden_activation;
            for ((p, &zv), &av) in prev.iter_mut().zip(&trace.pre[layer - 1]).zip(x) {
                *p *= act.derivative(zv, av);
            }
            delta = prev;
        }
        Ok((ParamVec(grad), delta))
    }

    /// Exact gradient of `upstream · forward(input)` for a single input.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(ParamVec, Vec<f64>)> {
        check_len("backward", self.spec.output_dim(), upstream.len())?;
        let trace = self.forward_batch(input, 1)?;
        self.backward_batch(&trace, upstream)
    }
}

/// Four independent partial sums, combined pairwise.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ac, ar) = a.split_at(a.len() & !3);
    let (bc, br) = b.split_at(ac.len());
    for (x, y) in ac.chunks_exact(4).zip(bc.chunks_exact(4)) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(sizes: &[usize], hidden: Activation, out: OutputActivation) -> MlpSpec {
        MlpSpec::new(sizes.to_vec(), hidden, out).unwrap()
    }

    fn max_rel_err(a: &ParamVec, b: &ParamVec) -> f64 {
        let scale = a.max_abs().max(b.max_abs()).max(1e-8);
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
            / scale
    }

    #[test]
    fn parameter_count_matches_formula() {
        let s = spec(&[2, 4, 1], Activation::Tanh, OutputActivation::Sigmoid);
        assert_eq!(s.parameter_count(), 17);
        assert_eq!(init_mlp(&s, 3).unwrap().params().len(), 17);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(MlpSpec::new(vec![3], Activation::Tanh, OutputActivation::Identity).is_err());
        assert!(MlpSpec::new(vec![], Activation::Tanh, OutputActivation::Identity).is_err());
        assert!(MlpSpec::new(vec![2, 0, 1], Activation::Tanh, OutputActivation::Identity).is_err());
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let s = spec(&[2, 8, 8, 1], Activation::LeakyRelu(0.2), OutputActivation::Sigmoid);
        let a = init_mlp(&s, 11).unwrap();
        let b = init_mlp(&s, 11).unwrap();
        let c = init_mlp(&s, 12).unwrap();
        assert!(a.params().bit_eq(b.params()));
        assert!(!a.params().bit_eq(c.params()));
        let layers = unflatten(&s, a.params()).unwrap();
        for (layer, (fan_in, fan_out)) in layers.iter().zip([(2, 8), (8, 8), (8, 1)]) {
            let bound = (6.0f64 / (fan_in + fan_out) as f64).sqrt();
            assert!(layer.bias.iter().all(|&b| b == 0.0));
            assert!(layer.weights.iter().flatten().all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn zero_network_with_sigmoid_outputs_half() {
        let s = spec(&[3, 5, 2], Activation::Tanh, OutputActivation::Sigmoid);
        let m = Mlp::new(s.clone(), ParamVec::zeros(s.parameter_count())).unwrap();
        assert_eq!(m.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn linear_layer_is_a_dot_product() {
        let s = spec(&[2, 1], Activation::Tanh, OutputActivation::Identity);
        let m = Mlp::new(s, ParamVec::from_vec(vec![1.0, 1.0, 0.0])).unwrap();
        assert_eq!(m.forward(&[3.0, 4.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let s = spec(&[2, 1], Activation::Tanh, OutputActivation::Identity);
        let m = init_mlp(&s, 0).unwrap();
        assert!(matches!(m.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(m.backward(&[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn scalar_linear_backward() {
        let s = spec(&[1, 1], Activation::Tanh, OutputActivation::Identity);
        let (w, b, x) = (1.7, -0.3, 2.5);
        let m = Mlp::new(s, ParamVec::from_vec(vec![w, b])).unwrap();
        let (g, gin) = m.backward(&[x], &[1.0]).unwrap();
        assert_eq!(g.as_slice(), &[x, 1.0]);
        assert_eq!(gin, vec![w]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let s = spec(&[2, 6, 3], Activation::Tanh, OutputActivation::Sigmoid);
        let m = init_mlp(&s, 5).unwrap();
        let (g, gin) = m.backward(&[0.3, -1.1], &[0.0, 0.0, 0.0]).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
        assert!(gin.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_diff_of_quadratic() {
        let p = ParamVec::from_vec(vec![1.0, 2.0]);
        let g = finite_diff_grad(|q| q.as_slice().iter().map(|v| v * v).sum(), &p, 1e-5);
        assert!((g.as_slice()[0] - 2.0).abs() < 1e-8);
        assert!((g.as_slice()[1] - 4.0).abs() < 1e-8);
        let c = finite_diff_grad(|_| 3.0, &p, 1e-5);
        assert!(c.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn axpy_examples() {
        let p = ParamVec::from_vec(vec![1.0, 1.0]);
        let g = ParamVec::from_vec(vec![2.0, -2.0]);
        assert!(axpy_update(&p, &g, 0.0).unwrap().bit_eq(&p));
        assert_eq!(axpy_update(&p, &g, 0.5).unwrap().as_slice(), &[2.0, 0.0]);
        let there = axpy_update(&p, &g, 0.37).unwrap();
        let back = axpy_update(&there, &g, -0.37).unwrap();
        assert!(max_rel_err(&back, &p) < 1e-12);
        assert!(axpy_update(&p, &ParamVec::zeros(3), 1.0).is_err());
        assert!(matches!(
            axpy_update(&p, &ParamVec::from_vec(vec![f64::MAX, 0.0]), 10.0),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences_on_2_8_8_1() {
        for seed in 0..20u64 {
            let s = spec(&[2, 8, 8, 1], Activation::Tanh, OutputActivation::Sigmoid);
            let m = init_mlp(&s, seed).unwrap();
            let input = [0.4 - seed as f64 * 0.05, 1.3];
            let (g, _) = m.backward(&input, &[1.0]).unwrap();
            let fd = finite_diff_grad(
                |p| Mlp::new(s.clone(), p.clone()).unwrap().forward(&input).unwrap()[0],
                m.params(),
                1e-5,
            );
            assert!(max_rel_err(&g, &fd) < 1e-4, "seed {seed}");
        }
    }

    fn arb_case() -> impl Strategy<Value = (MlpSpec, u64, Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(1usize..6, 2..5),
            prop_oneof![
                Just(Activation::Tanh),
                Just(Activation::LeakyRelu(DEFAULT_LEAKY_SLOPE)),
                Just(Activation::Relu)
            ],
            prop_oneof![Just(OutputActivation::Identity), Just(OutputActivation::Sigmoid)],
            any::<u64>(),
        )
            .prop_flat_map(|(sizes, h, o, seed)| {
                let inp = sizes[0];
                let out = *sizes.last().unwrap();
                (
                    Just(MlpSpec::new(sizes, h, o).unwrap()),
                    Just(seed),
                    prop::collection::vec(-2.0f64..2.0, inp),
                    prop::collection::vec(-1.0f64..1.0, out),
                )
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn backward_agrees_with_finite_differences((s, seed, input, upstream) in arb_case()) {
            let m = init_mlp(&s, seed).unwrap();
            let (g, gin) = m.backward(&input, &upstream).unwrap();
            let objective = |p: &ParamVec| -> f64 {
                let out = Mlp::new(s.clone(), p.clone()).unwrap().forward(&input).unwrap();
                out.iter().zip(&upstream).map(|(a, b)| a * b).sum()
            };
            let fd = finite_diff_grad(objective, m.params(), 1e-5);
            // relu kinks make finite differences unreliable within eps of zero
            let near_kink = !matches!(s.hidden_activation, Activation::Tanh) && {
                let trace = m.forward_batch(&input, 1).unwrap();
                trace.pre[..trace.pre.len() - 1].iter().flatten().any(|z| z.abs() < 1e-4)
            };
            if !near_kink {
                prop_assert!(max_rel_err(&g, &fd) < 1e-4);
                let fd_in = finite_diff_grad(
                    |x| {
                        let out = m.forward(x.as_slice()).unwrap();
                        out.iter().zip(&upstream).map(|(a, b)| a * b).sum()
                    },
                    &ParamVec::from_vec(input.clone()),
                    1e-5,
                );
                prop_assert!(max_rel_err(&ParamVec::from_vec(gin), &fd_in) < 1e-4);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn forward_is_finite_and_pure((s, seed, input, _u) in arb_case()) {
            let m = init_mlp(&s, seed).unwrap();
            let a = m.forward(&input).unwrap();
            let b = m.forward(&input).unwrap();
            prop_assert!(a.iter().all(|v| v.is_finite()));
            prop_assert_eq!(a.len(), s.output_dim());
            prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
            if s.output_activation == OutputActivation::Sigmoid {
                prop_assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }

        #[test]
        fn flatten_unflatten_roundtrip_bitwise(
            sizes in prop::collection::vec(1usize..7, 2..5),
            values in prop::collection::vec(-1e6f64..1e6, 0..400),
        ) {
            let s = MlpSpec::new(sizes, Activation::Tanh, OutputActivation::Identity).unwrap();
            let n = s.parameter_count();
            let mut v: Vec<f64> = values.into_iter().cycle().take(n).collect();
            v.resize(n, -0.0);
            let p = ParamVec::from_vec(v);
            let back = flatten(&unflatten(&s, &p).unwrap());
            prop_assert!(back.bit_eq(&p));
        }
    }
}
