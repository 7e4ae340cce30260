use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::{Network, NetworkError, Pass, Result};
use crate::dataset::{DatasetManifest, Split};
use crate::tensor::{Tensor, TensorError};

/// fc2 activations (post-ReLU, eval mode), one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralCodes {
    pub matrix: Tensor,
    pub ids: Vec<String>,
}

impl NeuralCodes {
    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.matrix.data()[i * d..(i + 1) * d]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| x as f64).collect()
    }

    /// Id, then one column per dimension with 9 significant digits.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.rows() {
            out.push_str(&self.ids[i]);
            for &v in self.row(i) {
                let _ = write!(out, "\t{v:.8e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> std::result::Result<Self, String> {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let mut cols = line.split('\t');
            ids.push(cols.next().unwrap_or_default().to_string());
            let row: Vec<f32> = cols
                .map(|c| c.parse::<f32>().map_err(|e| format!("line {}: {e}", i + 1)))
                .collect::<std::result::Result<_, _>>()?;
            if *dim.get_or_insert(row.len()) != row.len() || row.is_empty() {
                return Err(format!("line {}: ragged or empty row", i + 1));
            }
            data.extend(row);
        }
        let dim = dim.ok_or("no rows")?;
        let matrix = Tensor::new(vec![ids.len(), dim], data).map_err(|e| e.to_string())?;
        Ok(Self { matrix, ids })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_tsv(&text).map_err(|e| NetworkError::Format(format!("{}: {e}", path.display())))
    }
}

/// Codes for already preprocessed images; rows follow input order.
pub fn codes_for_images(net: &Network, ids: &[String], images: &[Tensor]) -> Result<NeuralCodes> {
    if ids.len() != images.len() || ids.is_empty() {
        return Err(TensorError::ShapeMismatch {
            op: "neural codes",
            expected: vec![ids.len()],
            found: vec![images.len()],
        }
        .into());
    }
    let rows: Vec<Vec<f32>> = images
        .par_iter()
        .map(|img| {
            let (_, cache) = net.forward(img, Pass::eval())?;
            Ok(cache.fc2_activation().data().to_vec())
        })
        .collect::<Result<_>>()?;
    let dim = net.codes_dim();
    let matrix = Tensor::new(vec![rows.len(), dim], rows.concat())?;
    Ok(NeuralCodes {
        matrix,
        ids: ids.to_vec(),
    })
}

/// Loads the images of `split` (every record when `None`), preprocesses
/// them with the network's stored mean, and extracts codes.
pub fn extract_neural_codes(net: &Network, manifest: &DatasetManifest, split: Option<Split>) -> Result<NeuralCodes> {
    let set = manifest.load(split, &net.mean_rgb)?;
    codes_for_images(net, &set.ids, &set.images)
}
