//! Small random SVM problems shared by the oracle comparisons.

use illu_core::rng;
use illu_core::svm::KernelSpec;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub struct Instance {
    pub x: Vec<Vec<f32>>,
    pub y: Vec<f64>,
    pub held_out: Vec<Vec<f32>>,
    pub kernel: KernelSpec,
    pub c: f64,
}

fn point(r: &mut impl Rng, dim: usize, label: f64, shift: f32) -> Vec<f32> {
    (0..dim)
        .map(|d| {
            let z: f32 = StandardNormal.sample(r);
            z + if d == 0 { label as f32 * shift } else { 0.0 }
        })
        .collect()
}

/// Instance `i` of the fixed family: n in 6..=20, rbf on even and linear
/// on odd indices, C cycling through {0.1, 1, 10}.
pub fn instance(i: usize) -> Instance {
    let mut r = rng::stream(0x5eed, &[i as u64]);
    let n = 6 + i % 15;
    let dim = 2 + i % 3;
    let c = [0.1, 1.0, 10.0][(i / 2) % 3];
    let kernel = if i % 2 == 0 {
        KernelSpec::rbf([0.1, 0.5, 2.0][(i / 6) % 3])
    } else {
        KernelSpec::linear()
    };
    let y: Vec<f64> = (0..n).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let x = y.iter().map(|&l| point(&mut r, dim, l, 1.0)).collect();
    let held_out = (0..10)
        .map(|k| point(&mut r, dim, if k % 2 == 0 { 1.0 } else { -1.0 }, 1.0))
        .collect();
    Instance { x, y, held_out, kernel, c }
}
