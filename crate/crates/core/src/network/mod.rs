//! VGG-pattern network: stacks of 3x3 convolutions separated by 2x2 max
//! pools, followed by three fully-connected layers. Weighted layers are
//! numbered from 1 in forward order; at the default scale that gives the
//! familiar 16 conv + 3 fc = 19 layers.

mod checkpoint;
mod codes;
pub mod gradcheck;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, tag};
use crate::tensor::{
    conv2d, conv2d_backward, dropout_with_mask, linear, linear_backward, maxpool2,
    maxpool2_backward, relu, relu_backward, sample_cross_entropy, softmax, ArgmaxIndices,
    DropoutMask, GradientSet, LabelOneHot, LayerParams, Mode, Real, Tensor, TensorError,
};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use codes::{extract_neural_codes, codes_for_images, NeuralCodes};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid scale: {0}")]
    Scale(String),
    #[error("input side {found} does not match network input side {expected}")]
    InputSide { expected: usize, found: usize },
    #[error("k = {k} outside 1..={classes}")]
    TopK { k: usize, classes: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

/// Architecture dimensions. Everything but the class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub input_side: usize,
    pub input_channels: usize,
    /// Convolutions per pooling stage.
    pub blocks: Vec<usize>,
    /// Filters in the first stage; doubles per stage up to `width_cap`.
    pub base_width: usize,
    pub width_cap: usize,
    /// Widths of the two hidden fully-connected layers.
    pub fc_dims: [usize; 2],
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            input_side: 64,
            input_channels: 3,
            blocks: vec![2, 2, 4, 4, 4],
            base_width: 8,
            width_cap: 64,
            fc_dims: [64, 64],
        }
    }
}

impl ScaleConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(NetworkError::Scale(m));
        if self.blocks.is_empty() || self.blocks.contains(&0) {
            return err(format!("every block needs at least one convolution: {:?}", self.blocks));
        }
        if self.base_width == 0 || self.width_cap < self.base_width {
            return err(format!("widths base {} cap {}", self.base_width, self.width_cap));
        }
        if self.input_channels == 0 || self.fc_dims.contains(&0) {
            return err("zero-sized layer".into());
        }
        let divisor = 1usize << self.blocks.len();
        if self.input_side == 0 || self.input_side % divisor != 0 {
            return err(format!(
                "input side {} not divisible by {divisor} ({} pooling stages)",
                self.input_side,
                self.blocks.len()
            ));
        }
        Ok(())
    }

    pub fn stage_widths(&self) -> Vec<usize> {
        (0..self.blocks.len())
            .map(|i| (self.base_width << i.min(30)).min(self.width_cap))
            .collect()
    }

    pub fn final_side(&self) -> usize {
        self.input_side >> self.blocks.len()
    }

    pub fn flat_dim(&self) -> usize {
        let side = self.final_side();
        self.stage_widths().last().copied().unwrap_or(0) * side * side
    }

    pub fn weighted_layers(&self) -> usize {
        self.blocks.iter().sum::<usize>() + 3
    }

    /// Layer shapes in forward order.
    pub fn layout(&self, num_classes: usize) -> Vec<LayerKind> {
        let mut out = Vec::new();
        let mut channels = self.input_channels;
        for (stage, (&count, width)) in self.blocks.iter().zip(self.stage_widths()).enumerate() {
            for _ in 0..count {
                out.push(LayerKind::Conv {
                    stage,
                    in_channels: channels,
                    out_channels: width,
                });
                channels = width;
            }
        }
        let dims = [self.flat_dim(), self.fc_dims[0], self.fc_dims[1], num_classes];
        for w in dims.windows(2) {
            out.push(LayerKind::Dense {
                d_in: w[0],
                d_out: w[1],
            });
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        stage: usize,
        in_channels: usize,
        out_channels: usize,
    },
    Dense {
        d_in: usize,
        d_out: usize,
    },
}

impl LayerKind {
    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            Self::Conv {
                in_channels,
                out_channels,
                ..
            } => vec![out_channels, in_channels, 3, 3],
            Self::Dense { d_in, d_out } => vec![d_out, d_in],
        }
    }

    pub fn bias_len(&self) -> usize {
        match *self {
            Self::Conv { out_channels, .. } => out_channels,
            Self::Dense { d_out, .. } => d_out,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Self::Conv { in_channels, .. } => in_channels * 9,
            Self::Dense { d_in, .. } => d_in,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, Self::Conv { .. })
    }
}

/// Fan-in scaled Gaussian weights, zero biases. `feeds_relu` selects
/// variance 2/fan_in, otherwise 1/fan_in.
pub(crate) fn init_layer(kind: &LayerKind, feeds_relu: bool, seed: u64, path: &[u64]) -> LayerParams<f32> {
    let gain = if feeds_relu { 2.0 } else { 1.0 };
    let std = (gain / kind.fan_in() as f64).sqrt() as f32;
    let normal = Normal::new(0.0f32, std).expect("finite std");
    let mut r = rng::stream(seed, path);
    let shape = kind.weight_shape();
    LayerParams {
        weight: Tensor::from_fn(&shape, |_| normal.sample(&mut r)),
        bias: Tensor::zeros(&[kind.bias_len()]),
    }
}

/// A VGG-pattern network with its parameters and preprocessing statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Real = f32> {
    pub scale: ScaleConfig,
    pub class_names: Vec<String>,
    /// Per-channel training mean on the [0,1] pixel scale.
    pub mean_rgb: Vec<f32>,
    pub kinds: Vec<LayerKind>,
    pub params: Vec<LayerParams<T>>,
}

/// Builds a freshly initialized network.
pub fn build_network(scale: &ScaleConfig, class_names: &[String], seed: u64) -> Result<Network> {
    scale.validate()?;
    if class_names.len() < 2 {
        return Err(NetworkError::Scale(format!(
            "need at least 2 classes, got {}",
            class_names.len()
        )));
    }
    let kinds = scale.layout(class_names.len());
    let last = kinds.len();
    let params = kinds
        .iter()
        .enumerate()
        .map(|(i, k)| init_layer(k, i + 1 != last, seed, &[tag::INIT, (i + 1) as u64]))
        .collect();
    Ok(Network {
        scale: scale.clone(),
        class_names: class_names.to_vec(),
        mean_rgb: vec![0.0; scale.input_channels],
        kinds,
        params,
    })
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Real> {
    conv_inputs: Vec<Tensor<T>>,
    /// Post-ReLU output of each convolution.
    conv_outputs: Vec<Tensor<T>>,
    pools: Vec<ArgmaxIndices>,
    flat: Tensor<T>,
    /// Post-ReLU outputs of fc1 and fc2, before dropout.
    hidden: [Tensor<T>; 2],
    masks: [Option<DropoutMask<T>>; 2],
    logits: Tensor<T>,
}

impl<T: Real> ForwardCache<T> {
    /// fc2 activation after its ReLU: the neural code.
    pub fn fc2_activation(&self) -> &Tensor<T> {
        &self.hidden[1]
    }

    pub fn logits(&self) -> &Tensor<T> {
        &self.logits
    }

    /// Post-ReLU output of conv layer `layer` (1-based).
    pub fn conv_activation(&self, layer: usize) -> Option<&Tensor<T>> {
        self.conv_outputs.get(layer.checked_sub(1)?)
    }
}

/// Forward-pass options. Dropout draws from `rng` in train mode.
pub struct Pass<'a> {
    pub mode: Mode,
    pub dropout_p: f32,
    pub rng: Option<&'a mut rng::Rng>,
}

impl Pass<'_> {
    pub fn eval() -> Self {
        Pass {
            mode: Mode::Eval,
            dropout_p: 0.0,
            rng: None,
        }
    }
}

impl<'a> Pass<'a> {
    pub fn train(dropout_p: f32, rng: &'a mut rng::Rng) -> Self {
        Pass {
            mode: Mode::Train,
            dropout_p,
            rng: Some(rng),
        }
    }
}

impl<T: Real> Network<T> {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn weighted_layers(&self) -> usize {
        self.params.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(LayerParams::len).sum()
    }

    pub fn codes_dim(&self) -> usize {
        self.scale.fc_dims[1]
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            scale: self.scale.clone(),
            class_names: self.class_names.clone(),
            mean_rgb: self.mean_rgb.clone(),
            kinds: self.kinds.clone(),
            params: self.params.iter().map(LayerParams::cast).collect(),
        }
    }

    fn check_input(&self, image: &Tensor<T>) -> Result<()> {
        let s = self.scale.input_side;
        let expected = [self.scale.input_channels, s, s];
        if image.shape() != expected {
            if image.rank() == 3 && image.shape()[0] == expected[0] {
                return Err(NetworkError::InputSide {
                    expected: s,
                    found: image.shape()[1],
                });
            }
            return Err(TensorError::ShapeMismatch {
                op: "forward",
                expected: expected.to_vec(),
                found: image.shape().to_vec(),
            }
            .into());
        }
        Ok(())
    }

    /// Runs the network on one preprocessed image.
    pub fn forward(&self, image: &Tensor<T>, mut pass: Pass<'_>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(image)?;
        let n_conv: usize = self.scale.blocks.iter().sum();
        let mut conv_inputs = Vec::with_capacity(n_conv);
        let mut conv_outputs = Vec::with_capacity(n_conv);
        let mut pools = Vec::with_capacity(self.scale.blocks.len());
        let mut x = image.clone();
        let mut layer = 0;
        for &count in &self.scale.blocks {
            for _ in 0..count {
                let p = &self.params[layer];
                let y = relu(&conv2d(&x, &p.weight, &p.bias)?);
                conv_inputs.push(std::mem::replace(&mut x, y.clone()));
                conv_outputs.push(y);
                layer += 1;
            }
            let (pooled, idx) = maxpool2(&x)?;
            pools.push(idx);
            x = pooled;
        }
        let flat = x.reshape(&[self.scale.flat_dim()])?;

        let dense = |input: &Tensor<T>, layer: usize| -> Result<Tensor<T>> {
            let p = &self.params[layer];
            Ok(linear(input, &p.weight, &p.bias)?)
        };
        let p = pass.dropout_p;
        let mut drop = |h: &Tensor<T>| -> Result<(Tensor<T>, Option<DropoutMask<T>>)> {
            match (pass.mode, pass.rng.as_deref_mut()) {
                (Mode::Train, Some(r)) => Ok(dropout_with_mask(h, p, Mode::Train, r)?),
                (Mode::Train, None) if p > 0.0 => Err(NetworkError::Tensor(TensorError::Config(
                    "train mode with dropout needs an rng".into(),
                ))),
                _ => Ok((h.clone(), None)),
            }
        };
        let h1 = relu(&dense(&flat, layer)?);
        let (d1, m1) = drop(&h1)?;
        let h2 = relu(&dense(&d1, layer + 1)?);
        let (d2, m2) = drop(&h2)?;
        let logits = dense(&d2, layer + 2)?;
        let cache = ForwardCache {
            conv_inputs,
            conv_outputs,
            pools,
            flat,
            hidden: [h1, h2],
            masks: [m1, m2],
            logits: logits.clone(),
        };
        Ok((logits, cache))
    }

    /// Gradients of a scalar loss given its gradient at the logits.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &Tensor<T>) -> Result<GradientSet<T>> {
        let mut grads = vec![None; self.params.len()];
        let n_conv = cache.conv_outputs.len();
        let apply_mask = |m: &Option<DropoutMask<T>>, g: Tensor<T>| match m {
            Some(m) => m.apply(&g),
            None => g,
        };
        let dropped = |i: usize| match &cache.masks[i] {
            Some(m) => m.apply(&cache.hidden[i]),
            None => cache.hidden[i].clone(),
        };

        let fc3 = linear_backward(&dropped(1), &self.params[n_conv + 2].weight, grad_logits, true)?;
        grads[n_conv + 2] = Some(LayerParams {
            weight: fc3.weight,
            bias: fc3.bias,
        });
        let g = relu_backward(&cache.hidden[1], &apply_mask(&cache.masks[1], fc3.input.expect("requested")));
        let fc2 = linear_backward(&dropped(0), &self.params[n_conv + 1].weight, &g, true)?;
        grads[n_conv + 1] = Some(LayerParams {
            weight: fc2.weight,
            bias: fc2.bias,
        });
        let g = relu_backward(&cache.hidden[0], &apply_mask(&cache.masks[0], fc2.input.expect("requested")));
        let fc1 = linear_backward(&cache.flat, &self.params[n_conv].weight, &g, true)?;
        grads[n_conv] = Some(LayerParams {
            weight: fc1.weight,
            bias: fc1.bias,
        });

        let last_pool = cache.pools.last().expect("at least one stage");
        let side = self.scale.final_side();
        let channels = last_pool.input_shape[0];
        let mut g = fc1.input.expect("requested").reshape(&[channels, side, side])?;
        let mut layer = n_conv;
        for (stage, &count) in self.scale.blocks.iter().enumerate().rev() {
            g = maxpool2_backward(&g, &cache.pools[stage])?;
            for _ in 0..count {
                layer -= 1;
                let g_pre = relu_backward(&cache.conv_outputs[layer], &g);
                let cg = conv2d_backward(&cache.conv_inputs[layer], &self.params[layer].weight, &g_pre, layer > 0)?;
                grads[layer] = Some(LayerParams {
                    weight: cg.weight,
                    bias: cg.bias,
                });
                if let Some(gi) = cg.input {
                    g = gi;
                }
            }
        }
        Ok(GradientSet {
            layers: grads.into_iter().map(|g| g.expect("every layer visited")).collect(),
        })
    }

    /// Class probabilities in eval mode.
    pub fn probabilities(&self, image: &Tensor<T>) -> Result<Vec<T>> {
        let (logits, _) = self.forward(image, Pass::eval())?;
        Ok(softmax(&logits).probs().data().to_vec())
    }
}

/// Mean softmax cross-entropy of a batch and its exact gradient with
/// respect to every parameter. Weight decay is left to the optimizer.
///
/// In train mode sample `i` draws its dropout mask from
/// `stream(dropout_seed, [DROPOUT, i])`, so the result does not depend on
/// how samples are scheduled across threads.
pub fn backprop<T: Real>(
    net: &Network<T>,
    inputs: &[&Tensor<T>],
    labels: &[usize],
    mode: Mode,
    dropout_p: f32,
    dropout_seed: u64,
) -> Result<(f64, GradientSet<T>)> {
    if inputs.is_empty() {
        return Err(TensorError::EmptyBatch("backprop").into());
    }
    if inputs.len() != labels.len() {
        return Err(TensorError::ShapeMismatch {
            op: "backprop labels",
            expected: vec![inputs.len()],
            found: vec![labels.len()],
        }
        .into());
    }
    let n = inputs.len();
    let inv_n = T::lit(1.0 / n as f64);
    let per_sample: Vec<Result<(f64, GradientSet<T>)>> = inputs
        .par_iter()
        .zip(labels.par_iter())
        .enumerate()
        .map(|(i, (x, &label))| {
            let mut r = rng::stream(dropout_seed, &[tag::DROPOUT, i as u64]);
            let pass = match mode {
                Mode::Train => Pass::train(dropout_p, &mut r),
                Mode::Eval => Pass::eval(),
            };
            let (logits, cache) = net.forward(x, pass)?;
            let probs = softmax(&logits);
            let onehot = LabelOneHot::new(label, net.num_classes())?;
            let loss = sample_cross_entropy(&probs, &onehot)?;
            let grad_logits = Tensor::from_fn(&[net.num_classes()], |k| {
                let target = if k == label { T::one() } else { T::zero() };
                (probs.probs().data()[k] - target) * inv_n
            });
            Ok((loss, net.backward(&cache, &grad_logits)?))
        })
        .collect();
    let mut loss = 0.0;
    let mut total: Option<GradientSet<T>> = None;
    for r in per_sample {
        let (l, g) = r?;
        loss += l;
        match &mut total {
            Some(t) => t.add_assign(&g),
            None => total = Some(g),
        }
    }
    Ok((loss / n as f64, total.expect("non-empty batch")))
}

/// Top-`k` classes by softmax probability, descending; ties go to the
/// lower class index.
pub fn predict_topk(net: &Network, image: &Tensor, k: usize) -> Result<Vec<(String, f32)>> {
    if k == 0 || k > net.num_classes() {
        return Err(NetworkError::TopK {
            k,
            classes: net.num_classes(),
        });
    }
    let probs = net.probabilities(image)?;
    Ok(rank_desc(&probs)
        .into_iter()
        .take(k)
        .map(|i| (net.class_names[i].clone(), probs[i]))
        .collect())
}

/// Indices sorted by value descending, ties by ascending index.
pub fn rank_desc<T: PartialOrd + Copy>(values: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}
