use super::{Real, Result, Tensor, TensorError};

/// Lower bound applied to probabilities before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Class probabilities: entries in `[0, 1]` summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector<T: Real = f32> {
    probs: Tensor<T>,
}

impl<T: Real> ProbVector<T> {
    pub fn new(probs: Tensor<T>) -> Result<Self> {
        probs.expect_rank("ProbVector", 1)?;
        let sum: f64 = probs.data().iter().map(|p| p.to_f64().unwrap_or(f64::NAN)).sum();
        let in_range = probs.data().iter().all(|&p| p >= T::zero() && p <= T::one());
        if !in_range || (sum - 1.0).abs() > 1e-5 {
            return Err(TensorError::Config(format!(
                "not a probability vector (sum {sum})"
            )));
        }
        Ok(Self { probs })
    }

    pub(crate) fn from_normalized(probs: Tensor<T>) -> Self {
        Self { probs }
    }

    pub fn probs(&self) -> &Tensor<T> {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }
}

/// One-hot encoded ground-truth class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelOneHot {
    class: usize,
    classes: Tensor<f32>,
}

impl LabelOneHot {
    pub fn new(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(TensorError::Config(format!(
                "class {class} out of range for {num_classes} classes"
            )));
        }
        let classes = Tensor::from_fn(&[num_classes], |i| if i == class { 1.0 } else { 0.0 });
        Ok(Self { class, classes })
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn classes(&self) -> &Tensor<f32> {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

/// `-log S_true` with the probability clamped at [`LOG_CLAMP`].
pub fn sample_cross_entropy<T: Real>(probs: &ProbVector<T>, label: &LabelOneHot) -> Result<f64> {
    if probs.num_classes() != label.num_classes() {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            expected: vec![label.num_classes()],
            found: probs.probs().shape().to_vec(),
        });
    }
    let p = probs.probs().data()[label.class()].to_f64().unwrap_or(0.0);
    Ok(-p.max(LOG_CLAMP).ln())
}

/// Mean over the batch of the per-sample cross-entropy.
pub fn cross_entropy<T: Real>(probs: &[ProbVector<T>], labels: &[LabelOneHot]) -> Result<f64> {
    if probs.is_empty() {
        return Err(TensorError::EmptyBatch("cross_entropy"));
    }
    if probs.len() != labels.len() {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy batch",
            expected: vec![labels.len()],
            found: vec![probs.len()],
        });
    }
    let mut total = 0.0;
    for (p, l) in probs.iter().zip(labels) {
        total += sample_cross_entropy(p, l)?;
    }
    Ok(total / probs.len() as f64)
}
