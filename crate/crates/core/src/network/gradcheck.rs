//! Central finite-difference checks of `backprop`.
//!
//! The 64-bit check compares every parameter's analytic derivative with
//! `(L(θ+ε) − L(θ−ε)) / 2ε` elementwise. The 32-bit check does the same
//! on an `f32` network, but each loss evaluation is mirrored by its exact
//! 64-bit twin. That gives two things: the largest rounding error of the
//! 32-bit numeric derivative (used as the resolution floor of the relative
//! error), and whether the 64-bit difference quotient agrees with the 64-bit
//! gradient at the same step, i.e. whether any ReLU or max-pool kink lies
//! within ±ε of the evaluation point.

use super::{backprop, Network, Result};
use crate::tensor::{Mode, ParamRole, Real, Tensor};

/// Inputs and dropout replay for one check.
#[derive(Debug, Clone)]
pub struct FdBatch {
    pub inputs: Vec<Tensor<f64>>,
    pub labels: Vec<usize>,
    pub mode: Mode,
    pub dropout_p: f32,
    pub dropout_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub layer: usize,
    pub role: ParamRole,
    pub numeric: Vec<f64>,
    pub analytic: Vec<f64>,
}

impl ParamCheck {
    /// Largest `|n − a| / max(|n|, |a|, floor)` over the tensor.
    pub fn max_relative_error(&self, floor: f64) -> f64 {
        self.numeric
            .iter()
            .zip(&self.analytic)
            .map(|(&n, &a)| (n - a).abs() / n.abs().max(a.abs()).max(floor))
            .fold(0.0, f64::max)
    }
}

pub fn max_relative_error(checks: &[ParamCheck], floor: f64) -> f64 {
    checks.iter().map(|c| c.max_relative_error(floor)).fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct F32Check {
    pub checks: Vec<ParamCheck>,
    /// Bound on the rounding error of each 32-bit difference quotient.
    pub resolution: f64,
    /// Max relative error of the 64-bit twin at the same step.
    pub twin_error: f64,
}

impl F32Check {
    /// No kink within the step: the 64-bit twin agrees to 1e-4.
    pub fn smooth(&self) -> bool {
        self.twin_error <= 1e-4
    }

    /// Relative error with denominators floored at 100 × resolution, the
    /// magnitude below which 1% agreement is beyond 32-bit reach.
    pub fn max_relative_error(&self) -> f64 {
        max_relative_error(&self.checks, 100.0 * self.resolution)
    }
}

fn loss<T: Real>(net: &Network<T>, inputs: &[Tensor<T>], batch: &FdBatch) -> Result<f64> {
    let refs: Vec<&Tensor<T>> = inputs.iter().collect();
    Ok(backprop(net, &refs, &batch.labels, batch.mode, batch.dropout_p, batch.dropout_seed)?.0)
}

/// Copy of `net` with one parameter shifted by `d`, and the shifted value
/// as actually stored.
fn bumped<T: Real>(net: &Network<T>, layer: usize, role: ParamRole, i: usize, d: f64) -> (Network<T>, f64) {
    let mut n = net.clone();
    let p = &mut n.params[layer];
    let t = match role {
        ParamRole::Weight => &mut p.weight,
        ParamRole::Bias => &mut p.bias,
    };
    t.data_mut()[i] += T::lit(d);
    let stored = t.data()[i].to_f64().unwrap_or(f64::NAN);
    (n, stored)
}

fn analytic<T: Real>(net: &Network<T>, inputs: &[Tensor<T>], batch: &FdBatch) -> Result<Vec<Vec<f64>>> {
    let refs: Vec<&Tensor<T>> = inputs.iter().collect();
    let (_, grads) = backprop(net, &refs, &batch.labels, batch.mode, batch.dropout_p, batch.dropout_seed)?;
    Ok(grads
        .layers
        .iter()
        .flat_map(|p| [p.weight.data(), p.bias.data()])
        .map(|d| d.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
        .collect())
}

/// Parameter slots in checkpoint order: (layer index, role, length).
fn slots<T: Real>(net: &Network<T>) -> Vec<(usize, ParamRole, usize)> {
    (0..net.params.len())
        .flat_map(|l| {
            [ParamRole::Weight, ParamRole::Bias].map(|r| (l, r, net.params[l].get(r).len()))
        })
        .collect()
}

pub fn check_f64(net: &Network<f64>, batch: &FdBatch, eps: f64) -> Result<Vec<ParamCheck>> {
    let grads = analytic(net, &batch.inputs, batch)?;
    slots(net)
        .into_iter()
        .zip(grads)
        .map(|((layer, role, len), analytic)| {
            let numeric = (0..len)
                .map(|i| {
                    let plus = loss(&bumped(net, layer, role, i, eps).0, &batch.inputs, batch)?;
                    let minus = loss(&bumped(net, layer, role, i, -eps).0, &batch.inputs, batch)?;
                    Ok((plus - minus) / (2.0 * eps))
                })
                .collect::<Result<_>>()?;
            Ok(ParamCheck { layer: layer + 1, role, numeric, analytic })
        })
        .collect()
}

pub fn check_f32(net: &Network<f32>, batch: &FdBatch, eps: f64) -> Result<F32Check> {
    let twin = net.cast::<f64>();
    let inputs32: Vec<Tensor<f32>> = batch.inputs.iter().map(|x| x.cast()).collect();
    // the twin sees exactly the values the 32-bit net sees
    let inputs64: Vec<Tensor<f64>> = inputs32.iter().map(|x| x.cast()).collect();
    let grads32 = analytic(net, &inputs32, batch)?;
    let grads64 = analytic(&twin, &inputs64, batch)?;

    let mut checks = Vec::new();
    let mut twin_checks = Vec::new();
    let mut worst_rounding = 0.0f64;
    for (((layer, role, len), a32), a64) in slots(net).into_iter().zip(grads32).zip(grads64) {
        let mut n32 = Vec::with_capacity(len);
        let mut n64 = Vec::with_capacity(len);
        for i in 0..len {
            let mut evaluate = |sign: f64| -> Result<(f64, f64, f64)> {
                let (narrow, at) = bumped(net, layer, role, i, sign * eps);
                let wide = narrow.cast::<f64>();
                let (l32, l64) = (loss(&narrow, &inputs32, batch)?, loss(&wide, &inputs64, batch)?);
                worst_rounding = worst_rounding.max((l32 - l64).abs());
                Ok((l32, l64, at))
            };
            let (p32, p64, p_at) = evaluate(1.0)?;
            let (m32, m64, m_at) = evaluate(-1.0)?;
            let step = p_at - m_at;
            n32.push((p32 - m32) / step);
            n64.push((p64 - m64) / step);
        }
        checks.push(ParamCheck { layer: layer + 1, role, numeric: n32, analytic: a32 });
        twin_checks.push(ParamCheck { layer: layer + 1, role, numeric: n64, analytic: a64 });
    }
    Ok(F32Check {
        checks,
        resolution: worst_rounding / eps,
        twin_error: max_relative_error(&twin_checks, 1e-8),
    })
}
