//! Fully convolutional extractor: 3x3 same-padded ReLU convolutions and 2x2
//! max pooling, with a hand-written backward pass.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DsrError, Result};
use crate::feature_maps::FeatureMap;
use crate::scalar::Scalar;

pub const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// 3x3 convolution, stride 1, zero padding 1, followed by ReLU.
    Conv { out_channels: usize },
    /// 2x2 max pooling, stride 2 (odd trailing rows/cols are dropped).
    MaxPool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FcnConfig {
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl FcnConfig {
    pub fn new(input_channels: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let config = Self {
            input_channels,
            layers,
        };
        config.validate()?;
        Ok(config)
    }

    /// conv(8) - pool - conv(16) - pool - conv(16).
    pub fn desk(input_channels: usize) -> Self {
        use LayerSpec::*;
        Self {
            input_channels,
            layers: vec![
                Conv { out_channels: 8 },
                MaxPool,
                Conv { out_channels: 16 },
                MaxPool,
                Conv { out_channels: 16 },
            ],
        }
    }

    /// Thirteen convolutions in five pooled stages, channel widths given per stage.
    pub fn vgg_like(input_channels: usize, widths: [usize; 5]) -> Self {
        let per_stage = [2, 2, 3, 3, 3];
        let mut layers = Vec::new();
        for (stage, &n) in per_stage.iter().enumerate() {
            for _ in 0..n {
                layers.push(LayerSpec::Conv {
                    out_channels: widths[stage],
                });
            }
            layers.push(LayerSpec::MaxPool);
        }
        Self {
            input_channels,
            layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(DsrError::Config(
                "input channel count must be positive".into(),
            ));
        }
        if self.conv_count() == 0 || self.pool_count() == 0 {
            return Err(DsrError::Config(
                "network needs at least one convolution and one pooling layer".into(),
            ));
        }
        if self
            .layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Conv { out_channels: 0 }))
        {
            return Err(DsrError::Config(
                "convolution with zero output channels".into(),
            ));
        }
        Ok(())
    }

    pub fn pool_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| **l == LayerSpec::MaxPool)
            .count()
    }

    pub fn conv_count(&self) -> usize {
        self.layers.len() - self.pool_count()
    }

    pub fn output_channels(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerSpec::Conv { out_channels } => Some(*out_channels),
                LayerSpec::MaxPool => None,
            })
            .unwrap_or(self.input_channels)
    }

    /// Spatial output size for an input of `width x height`, or `None` if
    /// the pool stack would shrink it to nothing.
    pub fn output_size(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        let (mut w, mut h) = (width, height);
        for l in &self.layers {
            if *l == LayerSpec::MaxPool {
                if w < 2 || h < 2 {
                    return None;
                }
                w /= 2;
                h /= 2;
            }
        }
        Some((w, h))
    }

    /// Smallest accepted spatial side, `2^pools`.
    pub fn min_input_side(&self) -> usize {
        1 << self.pool_count()
    }
}

impl fmt::Display for FcnConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Conv { out_channels } => format!("c{out_channels}"),
                LayerSpec::MaxPool => "p".to_string(),
            })
            .collect();
        write!(f, "{}", parts.join(","))
    }
}

impl FromStr for FcnConfig {
    type Err = DsrError;

    /// Parses a layer list such as `c8,p,c16,p,c16`; input channels default to 3.
    fn from_str(s: &str) -> Result<Self> {
        let layers = s
            .split(',')
            .map(str::trim)
            .map(|tok| match tok {
                "p" | "pool" => Ok(LayerSpec::MaxPool),
                t if t.starts_with('c') => t[1..]
                    .parse()
                    .map(|out_channels| LayerSpec::Conv { out_channels })
                    .map_err(|_| DsrError::Config(format!("bad conv layer {t:?}"))),
                t => Err(DsrError::Config(format!("unknown layer {t:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(3, layers)
    }
}

/// Weights of one convolution, laid out `[out][ky][kx][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: vec![T::zero(); out_channels * KERNEL * KERNEL * in_channels],
            bias: vec![T::zero(); out_channels],
        }
    }

    #[inline]
    fn w_offset(&self, o: usize, ky: usize, kx: usize) -> usize {
        ((o * KERNEL + ky) * KERNEL + kx) * self.in_channels
    }
}

/// Parameters of every convolution, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct FcnParams<T> {
    pub convs: Vec<ConvParams<T>>,
}

impl<T: Scalar> FcnParams<T> {
    pub fn zeros(config: &FcnConfig) -> Self {
        let mut convs = Vec::new();
        let mut c = config.input_channels;
        for l in &config.layers {
            if let LayerSpec::Conv { out_channels } = *l {
                convs.push(ConvParams::zeros(c, out_channels));
                c = out_channels;
            }
        }
        Self { convs }
    }

    /// He initialization (`N(0, 2 / fan_in)`), zero biases.
    pub fn he_init(config: &FcnConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(config);
        for conv in &mut params.convs {
            let fan_in = (conv.in_channels * KERNEL * KERNEL) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            for w in &mut conv.weight {
                *w = T::of(normal.sample(&mut rng));
            }
        }
        params
    }

    pub fn matches(&self, config: &FcnConfig) -> bool {
        let expected = Self::zeros(config);
        self.convs.len() == expected.convs.len()
            && self.convs.iter().zip(&expected.convs).all(|(a, b)| {
                a.in_channels == b.in_channels
                    && a.out_channels == b.out_channels
                    && a.weight.len() == b.weight.len()
                    && a.bias.len() == b.bias.len()
            })
    }

    pub fn is_finite(&self) -> bool {
        self.convs
            .iter()
            .all(|c| c.weight.iter().chain(&c.bias).all(|v| v.is_finite()))
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &FcnParams<T>, scale: T) {
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            for (x, &y) in a.weight.iter_mut().zip(&b.weight) {
                *x += scale * y;
            }
            for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.convs
            .iter()
            .map(|c| c.weight.len() + c.bias.len())
            .sum()
    }
}

/// Intermediate values kept by a forward pass for backpropagation.
#[derive(Debug, Clone)]
enum LayerTrace<T> {
    Conv {
        input: FeatureMap<T>,
        output: FeatureMap<T>,
    },
    Pool {
        input_dims: (usize, usize, usize),
        argmax: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    layers: Vec<LayerTrace<T>>,
}

#[derive(Debug, Clone)]
pub struct Fcn<T> {
    pub config: FcnConfig,
    pub params: FcnParams<T>,
}

impl<T: Scalar> Fcn<T> {
    pub fn new(config: FcnConfig, params: FcnParams<T>) -> Result<Self> {
        config.validate()?;
        if !params.matches(&config) {
            return Err(DsrError::Config(
                "parameters do not match network layout".into(),
            ));
        }
        Ok(Self { config, params })
    }

    pub fn he_init(config: FcnConfig, seed: u64) -> Result<Self> {
        let params = FcnParams::he_init(&config, seed);
        Self::new(config, params)
    }

    pub fn forward(&self, input: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        fcn_forward(&self.config, &self.params, input)
    }

    pub fn forward_traced(
        &self,
        input: &FeatureMap<T>,
    ) -> Result<(FeatureMap<T>, ForwardTrace<T>)> {
        fcn_forward_traced(&self.config, &self.params, input)
    }

    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        grad: &FeatureMap<T>,
    ) -> Result<(FcnParams<T>, FeatureMap<T>)> {
        fcn_backward(&self.config, &self.params, trace, grad)
    }
}

/// Runs the network on an input of any spatial size at least `2^pools`.
pub fn fcn_forward<T: Scalar>(
    config: &FcnConfig,
    params: &FcnParams<T>,
    input: &FeatureMap<T>,
) -> Result<FeatureMap<T>> {
    run(config, params, input, false).map(|(out, _)| out)
}

pub fn fcn_forward_traced<T: Scalar>(
    config: &FcnConfig,
    params: &FcnParams<T>,
    input: &FeatureMap<T>,
) -> Result<(FeatureMap<T>, ForwardTrace<T>)> {
    run(config, params, input, true).map(|(out, trace)| (out, trace.expect("traced")))
}

/// Parameter gradients and input gradient for an output gradient `grad`.
pub fn fcn_backward<T: Scalar>(
    config: &FcnConfig,
    params: &FcnParams<T>,
    trace: &ForwardTrace<T>,
    grad: &FeatureMap<T>,
) -> Result<(FcnParams<T>, FeatureMap<T>)> {
    let mut grads = FcnParams::zeros(config);
    let mut g = grad.data().to_vec();
    let mut dims = (grad.width(), grad.height(), grad.channels());
    let mut conv_idx = params.convs.len();
    for layer in trace.layers.iter().rev() {
        match layer {
            LayerTrace::Pool { input_dims, argmax } => {
                if argmax.len() != g.len() {
                    return Err(DsrError::mismatch(
                        "pool gradient length",
                        argmax.len(),
                        g.len(),
                    ));
                }
                let mut gin = vec![T::zero(); input_dims.0 * input_dims.1 * input_dims.2];
                for (&src, &v) in argmax.iter().zip(&g) {
                    gin[src] += v;
                }
                g = gin;
                dims = *input_dims;
            }
            LayerTrace::Conv { input, output } => {
                conv_idx -= 1;
                if g.len() != output.data().len() {
                    return Err(DsrError::mismatch(
                        "conv gradient length",
                        output.data().len(),
                        g.len(),
                    ));
                }
                for (gv, &ov) in g.iter_mut().zip(output.data()) {
                    if ov <= T::zero() {
                        *gv = T::zero();
                    }
                }
                g = conv_backward(
                    &params.convs[conv_idx],
                    input,
                    &g,
                    &mut grads.convs[conv_idx],
                );
                dims = (input.width(), input.height(), input.channels());
            }
        }
    }
    let input_grad = FeatureMap::new(dims.0, dims.1, dims.2, g)?;
    Ok((grads, input_grad))
}

fn run<T: Scalar>(
    config: &FcnConfig,
    params: &FcnParams<T>,
    input: &FeatureMap<T>,
    keep_trace: bool,
) -> Result<(FeatureMap<T>, Option<ForwardTrace<T>>)> {
    if input.channels() != config.input_channels {
        return Err(DsrError::mismatch(
            "input channels",
            config.input_channels,
            input.channels(),
        ));
    }
    if config.output_size(input.width(), input.height()).is_none() {
        return Err(DsrError::OutOfRange(format!(
            "input {}x{} is smaller than the {}-pool minimum {}",
            input.width(),
            input.height(),
            config.pool_count(),
            config.min_input_side()
        )));
    }
    let mut trace = Vec::new();
    let mut x = input.clone();
    let mut conv_idx = 0;
    for layer in &config.layers {
        match layer {
            LayerSpec::Conv { .. } => {
                let y = conv_forward(&params.convs[conv_idx], &x)?;
                conv_idx += 1;
                if keep_trace {
                    trace.push(LayerTrace::Conv {
                        input: x,
                        output: y.clone(),
                    });
                }
                x = y;
            }
            LayerSpec::MaxPool => {
                let (y, argmax) = pool_forward(&x)?;
                if keep_trace {
                    trace.push(LayerTrace::Pool {
                        input_dims: (x.width(), x.height(), x.channels()),
                        argmax,
                    });
                }
                x = y;
            }
        }
    }
    let source = input.source_id.clone();
    Ok((
        x.with_source(source),
        keep_trace.then_some(ForwardTrace { layers: trace }),
    ))
}

fn conv_forward<T: Scalar>(p: &ConvParams<T>, input: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    let (w, h, cin) = (input.width(), input.height(), input.channels());
    debug_assert_eq!(cin, p.in_channels);
    let cout = p.out_channels;
    let mut out = vec![T::zero(); w * h * cout];
    let data = input.data();
    for r in 0..h {
        for c in 0..w {
            let acc = &mut out[(r * w + c) * cout..(r * w + c + 1) * cout];
            acc.copy_from_slice(&p.bias);
            for ky in 0..KERNEL {
                let rr = r + ky;
                if rr < 1 || rr > h {
                    continue;
                }
                for kx in 0..KERNEL {
                    let cc = c + kx;
                    if cc < 1 || cc > w {
                        continue;
                    }
                    let o_in = ((rr - 1) * w + (cc - 1)) * cin;
                    let fiber = &data[o_in..o_in + cin];
                    for (o, a) in acc.iter_mut().enumerate() {
                        let wo = p.w_offset(o, ky, kx);
                        let wk = &p.weight[wo..wo + cin];
                        let mut s = T::zero();
                        for i in 0..cin {
                            s += wk[i] * fiber[i];
                        }
                        *a += s;
                    }
                }
            }
            for a in acc.iter_mut() {
                if *a < T::zero() {
                    *a = T::zero();
                }
            }
        }
    }
    FeatureMap::new(w, h, cout, out)
}

/// Backward through one convolution given the pre-activation gradient `g`.
/// Accumulates parameter gradients into `grads`; returns the input gradient.
fn conv_backward<T: Scalar>(
    p: &ConvParams<T>,
    input: &FeatureMap<T>,
    g: &[T],
    grads: &mut ConvParams<T>,
) -> Vec<T> {
    let (w, h, cin) = (input.width(), input.height(), input.channels());
    let cout = p.out_channels;
    let data = input.data();
    let mut gin = vec![T::zero(); w * h * cin];
    for r in 0..h {
        for c in 0..w {
            let go = &g[(r * w + c) * cout..(r * w + c + 1) * cout];
            if go.iter().all(|&v| v == T::zero()) {
                continue;
            }
            for (o, &gv) in go.iter().enumerate() {
                grads.bias[o] += gv;
            }
            for ky in 0..KERNEL {
                let rr = r + ky;
                if rr < 1 || rr > h {
                    continue;
                }
                for kx in 0..KERNEL {
                    let cc = c + kx;
                    if cc < 1 || cc > w {
                        continue;
                    }
                    let o_in = ((rr - 1) * w + (cc - 1)) * cin;
                    let fiber = &data[o_in..o_in + cin];
                    for (o, &gv) in go.iter().enumerate() {
                        if gv == T::zero() {
                            continue;
                        }
                        let wo = p.w_offset(o, ky, kx);
                        let wk = &p.weight[wo..wo + cin];
                        let gw = &mut grads.weight[wo..wo + cin];
                        let gi = &mut gin[o_in..o_in + cin];
                        for i in 0..cin {
                            gw[i] += gv * fiber[i];
                            gi[i] += gv * wk[i];
                        }
                    }
                }
            }
        }
    }
    gin
}

fn pool_forward<T: Scalar>(input: &FeatureMap<T>) -> Result<(FeatureMap<T>, Vec<usize>)> {
    let (w, h, d) = (input.width(), input.height(), input.channels());
    let (ow, oh) = (w / 2, h / 2);
    let mut out = Vec::with_capacity(ow * oh * d);
    let mut argmax = Vec::with_capacity(ow * oh * d);
    for r in 0..oh {
        for c in 0..ow {
            for k in 0..d {
                let mut best_idx = input.offset(2 * c, 2 * r) + k;
                let mut best = input.data()[best_idx];
                for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = input.offset(2 * c + dc, 2 * r + dr) + k;
                    if input.data()[idx] > best {
                        best = input.data()[idx];
                        best_idx = idx;
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((FeatureMap::new(ow, oh, d, out)?, argmax))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn image(w: usize, h: usize, c: usize, seed: u64) -> FeatureMap<f64> {
        let mut s = seed;
        FeatureMap::from_fn(w, h, c, |_, _, _| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
        .unwrap()
    }

    #[test]
    fn vgg_like_gives_two_by_two_for_64() {
        let cfg = FcnConfig::vgg_like(3, [2, 2, 2, 2, 4]);
        assert_eq!(cfg.conv_count(), 13);
        assert_eq!(cfg.pool_count(), 5);
        let net = Fcn::<f64>::he_init(cfg, 1).unwrap();
        let out = net.forward(&image(64, 64, 3, 3)).unwrap();
        assert_eq!((out.width(), out.height(), out.channels()), (2, 2, 4));
    }

    #[test]
    fn desk_config_shapes() {
        let net = Fcn::<f64>::he_init(FcnConfig::desk(3), 1).unwrap();
        let out = net.forward(&image(8, 8, 3, 5)).unwrap();
        assert_eq!((out.width(), out.height(), out.channels()), (2, 2, 16));
        assert!(matches!(
            net.forward(&image(3, 8, 3, 5)),
            Err(DsrError::OutOfRange(_))
        ));
        assert!(net.forward(&image(8, 8, 2, 5)).is_err());
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_output() {
        let net = Fcn::<f64>::he_init(FcnConfig::desk(3), 9).unwrap();
        let out = net.forward(&FeatureMap::zeros(12, 10, 3).unwrap()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_parsing_and_validation() {
        let cfg: FcnConfig = "c8,p,c16,p,c16".parse().unwrap();
        assert_eq!(cfg, FcnConfig::desk(3));
        assert_eq!(cfg.to_string(), "c8,p,c16,p,c16");
        assert!("c8,c8".parse::<FcnConfig>().is_err());
        assert!("p,p".parse::<FcnConfig>().is_err());
        assert!("c0,p".parse::<FcnConfig>().is_err());
        assert!("x,p".parse::<FcnConfig>().is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cfg: FcnConfig = "c4,p,c3".parse().unwrap();
        let net = Fcn::<f64>::he_init(cfg, 11).unwrap();
        let x = image(6, 5, 3, 2);
        let (out, trace) = net.forward_traced(&x).unwrap();
        // Loss = <out, probe> for a fixed probe tensor.
        let probe = image(out.width(), out.height(), out.channels(), 77);
        let (grads, gin) = net.backward(&trace, &probe).unwrap();
        let loss = |n: &Fcn<f64>, x: &FeatureMap<f64>| {
            crate::scalar::dot(n.forward(x).unwrap().data(), probe.data())
        };

        let h = 1e-6;
        for (layer, idx) in [(0usize, 5usize), (0, 40), (1, 3), (1, 60)] {
            let mut plus = net.clone();
            plus.params.convs[layer].weight[idx] += h;
            let mut minus = net.clone();
            minus.params.convs[layer].weight[idx] -= h;
            let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
            let an = grads.convs[layer].weight[idx];
            assert!(
                (fd - an).abs() < 1e-6 * (1.0 + an.abs()),
                "w[{layer}][{idx}] fd {fd} an {an}"
            );
        }
        let mut plus = net.clone();
        plus.params.convs[1].bias[2] += h;
        let mut minus = net.clone();
        minus.params.convs[1].bias[2] -= h;
        let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
        assert!((fd - grads.convs[1].bias[2]).abs() < 1e-6);

        for idx in [0usize, 17, 44] {
            let mut xp = x.data().to_vec();
            xp[idx] += h;
            let mut xm = x.data().to_vec();
            xm[idx] -= h;
            let fd = (loss(&net, &FeatureMap::new(6, 5, 3, xp).unwrap())
                - loss(&net, &FeatureMap::new(6, 5, 3, xm).unwrap()))
                / (2.0 * h);
            assert!((fd - gin.data()[idx]).abs() < 1e-6, "input {idx}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn output_dims_follow_floor_law(w in 4usize..23, h in 4usize..23) {
            let net = Fcn::<f32>::he_init(FcnConfig::desk(1), 3).unwrap();
            let out = net.forward(&FeatureMap::zeros(w, h, 1).unwrap()).unwrap();
            prop_assert_eq!((out.width(), out.height()), (w / 4, h / 4));
        }
    }
}
