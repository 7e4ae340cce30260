use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Real, Result, Tensor, TensorError};

/// Learning rate per weighted layer, keyed by 1-based layer index.
pub type LrMap = BTreeMap<usize, f32>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f32,
    /// L2 factor, applied to weights only.
    pub weight_decay: f32,
    pub dropout_p: f32,
    pub base_lr: f32,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            momentum: 0.9,
            weight_decay: 5e-4,
            dropout_p: 0.5,
            base_lr: 1e-2,
            max_epochs: 40,
            patience: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TensorError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0,1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0,1)");
        }
        if !(self.base_lr > 0.0) {
            return bad("base_lr must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamRole {
    Weight,
    Bias,
}

impl ParamRole {
    pub fn tag(self) -> u8 {
        match self {
            Self::Weight => 0,
            Self::Bias => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Self::Weight),
            1 => Some(Self::Bias),
            _ => None,
        }
    }
}

/// Weight and bias of one weighted layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T: Real = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> LayerParams<T> {
    pub fn get(&self, role: ParamRole) -> &Tensor<T> {
        match role {
            ParamRole::Weight => &self.weight,
            ParamRole::Bias => &self.bias,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }

    pub fn cast<U: Real>(&self) -> LayerParams<U> {
        LayerParams {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Gradients for every parameter tensor; `layers[i]` belongs to layer `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T: Real = f32> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Real> GradientSet<T> {
    pub fn zeros_like(params: &[LayerParams<T>]) -> Self {
        Self {
            layers: params.iter().map(LayerParams::zeros_like).collect(),
        }
    }

    pub fn get(&self, layer: usize, role: ParamRole) -> Option<&Tensor<T>> {
        self.layers.get(layer.checked_sub(1)?).map(|p| p.get(role))
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_assign(&b.weight);
            a.bias.add_assign(&b.bias);
        }
    }

    pub fn scale(&mut self, factor: T) {
        for l in &mut self.layers {
            l.weight.data_mut().iter_mut().for_each(|g| *g *= factor);
            l.bias.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.all_finite() && l.bias.all_finite())
    }
}

/// Momentum buffers, same layout as [`GradientSet`]. Starts at zero.
pub type Velocity<T> = GradientSet<T>;

/// One SGD step with momentum and weight decay:
/// `v <- momentum * v + grad + wd * param`, `param <- param - lr(layer) * v`.
pub fn sgd_step<T: Real>(
    params: &mut [LayerParams<T>],
    grads: &GradientSet<T>,
    lr_by_layer: &LrMap,
    cfg: &TrainConfig,
    velocity: &mut Velocity<T>,
) -> Result<()> {
    if grads.layers.len() != params.len() || velocity.layers.len() != params.len() {
        return Err(TensorError::ShapeMismatch {
            op: "sgd_step",
            expected: vec![params.len()],
            found: vec![grads.layers.len(), velocity.layers.len()],
        });
    }
    for layer in 1..=params.len() {
        if !lr_by_layer.contains_key(&layer) {
            return Err(TensorError::MissingLearningRate(layer));
        }
    }
    let momentum = T::lit(cfg.momentum as f64);
    let wd = T::lit(cfg.weight_decay as f64);
    for (i, ((p, g), v)) in params
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut velocity.layers)
        .enumerate()
    {
        let lr = T::lit(lr_by_layer[&(i + 1)] as f64);
        for (role_wd, pt, gt, vt) in [
            (wd, &mut p.weight, &g.weight, &mut v.weight),
            (T::zero(), &mut p.bias, &g.bias, &mut v.bias),
        ] {
            if pt.shape() != gt.shape() || pt.shape() != vt.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "sgd_step",
                    expected: pt.shape().to_vec(),
                    found: gt.shape().to_vec(),
                });
            }
            for ((x, &dx), vel) in pt.data_mut().iter_mut().zip(gt.data()).zip(vt.data_mut()) {
                *vel = momentum * *vel + dx + role_wd * *x;
                if lr != T::zero() {
                    *x -= lr * *vel;
                }
            }
        }
    }
    Ok(())
}
