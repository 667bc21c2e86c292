//! A small fully-convolutional segmentation network with explicit
//! forward/backward passes over named parameters.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::conv::{conv2d, conv2d_backward};
use crate::nn::ops::{relu, relu_backward, softmax_pixelwise};
use crate::tensor::{ProbMap, Tensor};

/// Architecture of the segmentation network: a stack of same-size conv
/// layers with ReLU between them, the last layer emitting one logit per class.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub hidden_widths: Vec<usize>,
    /// One odd kernel size per conv layer (`hidden_widths.len() + 1` entries).
    pub kernel_sizes: Vec<usize>,
}

impl NetworkConfig {
    /// The default desk-scale network: 4 conv layers, 3x3, widths 16-16-16-K.
    pub fn default_for(in_channels: usize, num_classes: usize) -> NetworkConfig {
        NetworkConfig {
            in_channels,
            num_classes,
            hidden_widths: vec![16, 16, 16],
            kernel_sizes: vec![3, 3, 3, 3],
        }
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_widths.len() + 1
    }

    /// (in, out) channel counts for layer `i`.
    fn layer_channels(&self, i: usize) -> (usize, usize) {
        let cin = if i == 0 { self.in_channels } else { self.hidden_widths[i - 1] };
        let cout = if i == self.hidden_widths.len() {
            self.num_classes
        } else {
            self.hidden_widths[i]
        };
        (cin, cout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.num_classes < 2 {
            return Err(Error::invalid(
                "NetworkConfig",
                format!("need in_channels >= 1 and num_classes >= 2, got {} / {}", self.in_channels, self.num_classes),
            ));
        }
        if self.kernel_sizes.len() != self.num_layers() {
            return Err(Error::invalid(
                "NetworkConfig",
                format!("{} kernel sizes for {} layers", self.kernel_sizes.len(), self.num_layers()),
            ));
        }
        if self.kernel_sizes.iter().any(|&k| k % 2 == 0 || k == 0) {
            return Err(Error::invalid("NetworkConfig", "kernel sizes must be odd"));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("NetworkConfig", "layer widths must be positive"));
        }
        Ok(())
    }
}

/// Named parameter arrays, in a fixed order shared by student and teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    entries: Vec<(String, Tensor)>,
}

impl ModelParams {
    pub fn new(entries: Vec<(String, Tensor)>) -> ModelParams {
        ModelParams { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// True when both collections have identical names and shapes, in order.
    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }

    /// Same names and shapes, all values zero. Used for gradients and velocity.
    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    /// First parameter containing a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, t)| !t.all_finite())
            .map(|(n, _)| n.as_str())
    }

    /// Elementwise `self += alpha * other`; layouts must match.
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::shape("ModelParams::axpy", "parameter layouts differ"));
        }
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }
}

/// He-style fan-in initialization: kernels from N(0, 2/fan_in), biases zero.
pub fn init_params<R: Rng>(rng: &mut R, config: &NetworkConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut entries = Vec::new();
    for i in 0..config.num_layers() {
        let (cin, cout) = config.layer_channels(i);
        let k = config.kernel_sizes[i];
        let fan_in = (k * k * cin) as f64;
        let scale = (2.0 / fan_in).sqrt();
        let len = k * k * cin * cout;
        let data = (0..len)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        entries.push((format!("conv{i}.kernel"), Tensor::from_vec(&[k, k, cin, cout], data)?));
        entries.push((format!("conv{i}.bias"), Tensor::zeros(&[cout])));
    }
    Ok(ModelParams { entries })
}

/// Activations recorded during a forward pass, consumed by [`backward`].
pub struct ForwardCache {
    /// Input to each conv layer (element 0 is the image).
    layer_inputs: Vec<Tensor>,
    /// Pre-activation output of each conv layer except the last, whose
    /// output feeds softmax rather than ReLU.
    pre_activations: Vec<Tensor>,
}

fn layer_params<'p>(params: &'p ModelParams, i: usize) -> Result<(&'p Tensor, &'p Tensor)> {
    let kernel = params
        .get(&format!("conv{i}.kernel"))
        .ok_or_else(|| Error::invalid("forward", format!("missing conv{i}.kernel")))?;
    let bias = params
        .get(&format!("conv{i}.bias"))
        .ok_or_else(|| Error::invalid("forward", format!("missing conv{i}.bias")))?;
    Ok((kernel, bias))
}

fn forward_impl(
    params: &ModelParams,
    config: &NetworkConfig,
    image: &Tensor,
    mut cache: Option<&mut ForwardCache>,
) -> Result<(Tensor, ProbMap)> {
    if image.shape().len() != 3 || image.shape()[2] != config.in_channels {
        return Err(Error::shape(
            "forward",
            format!("image shape {:?}, expected [H, W, {}]", image.shape(), config.in_channels),
        ));
    }
    let mut x = image.clone();
    let layers = config.num_layers();
    let mut logits = None;
    for i in 0..layers {
        let (kernel, bias) = layer_params(params, i)?;
        let pre = conv2d(&x, kernel, bias)?;
        if i == layers - 1 {
            if let Some(c) = cache.as_deref_mut() {
                c.layer_inputs.push(x);
            }
            logits = Some(pre);
            break;
        }
        let next = relu(&pre);
        if let Some(c) = cache.as_deref_mut() {
            c.layer_inputs.push(std::mem::replace(&mut x, next));
            c.pre_activations.push(pre);
        } else {
            x = next;
        }
    }
    let logits = logits.expect("at least one layer");
    let probs = softmax_pixelwise(&logits);
    Ok((logits, probs))
}

/// Run the network on an `[H, W, Cin]` image, returning logits and the
/// softmaxed per-pixel class distribution. Spatial size is preserved.
pub fn forward(params: &ModelParams, config: &NetworkConfig, image: &Tensor) -> Result<(Tensor, ProbMap)> {
    forward_impl(params, config, image, None)
}

/// Forward pass that also records the activations needed for [`backward`].
pub fn forward_cached(
    params: &ModelParams,
    config: &NetworkConfig,
    image: &Tensor,
) -> Result<(ForwardCache, Tensor, ProbMap)> {
    let mut cache = ForwardCache {
        layer_inputs: Vec::with_capacity(config.num_layers()),
        pre_activations: Vec::with_capacity(config.num_layers()),
    };
    let (logits, probs) = forward_impl(params, config, image, Some(&mut cache))?;
    Ok((cache, logits, probs))
}

/// Backpropagate `dL/dlogits` through the cached forward pass, returning
/// gradients for every parameter (same names and shapes as `params`).
pub fn backward(
    params: &ModelParams,
    config: &NetworkConfig,
    cache: &ForwardCache,
    dlogits: &Tensor,
) -> Result<ModelParams> {
    let layers = config.num_layers();
    if cache.layer_inputs.len() != layers || cache.pre_activations.len() != layers - 1 {
        return Err(Error::invalid(
            "backward",
            "forward cache does not match network depth",
        ));
    }
    let mut grads: Vec<Option<(Tensor, Tensor)>> = (0..layers).map(|_| None).collect();
    let mut g = dlogits.clone();
    for i in (0..layers).rev() {
        let (kernel, _) = layer_params(params, i)?;
        let (dx, dk, db) = conv2d_backward(&cache.layer_inputs[i], kernel, &g, i > 0)?;
        grads[i] = Some((dk, db));
        if i > 0 {
            let dx = dx.expect("input grad requested for non-first layer");
            g = relu_backward(&cache.pre_activations[i - 1], &dx);
        }
    }
    let mut entries = Vec::with_capacity(2 * layers);
    for (i, pair) in grads.into_iter().enumerate() {
        let (dk, db) = pair.expect("every layer visited");
        entries.push((format!("conv{i}.kernel"), dk));
        entries.push((format!("conv{i}.bias"), db));
    }
    Ok(ModelParams { entries })
}
