//! Dense reference solver for the soft-margin SVM dual, independent of SMO.
//!
//! maximize  Σα − ½ αᵀQα,  Q_ij = y_i y_j K_ij
//! s.t.      0 ≤ α ≤ C,  yᵀα = 0
//!
//! Accelerated projected gradient with an exact projection onto the
//! feasible set, then the free block is polished by solving its KKT
//! system, which is exact once the active set is right.

use nalgebra::{DMatrix, DVector};

pub struct QpSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
    /// Largest KKT violation of the returned point.
    pub kkt_residual: f64,
}

fn q(gram: &[f64], y: &[f64], i: usize, j: usize) -> f64 {
    y[i] * y[j] * gram[i * y.len() + j]
}

pub fn objective(gram: &[f64], y: &[f64], a: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += a[i] * a[j] * q(gram, y, i, j);
        }
    }
    a.iter().sum::<f64>() - 0.5 * quad
}

/// Euclidean projection onto {0 ≤ α ≤ C, yᵀα = 0}: α_i = clip(v_i − λy_i)
/// with λ found by bisection on the monotone constraint residual.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lambda: f64| -> Vec<f64> { v.iter().zip(y).map(|(&vi, &yi)| (vi - lambda * yi).clamp(0.0, c)).collect() };
    let residual = |a: &[f64]| a.iter().zip(y).map(|(ai, yi)| ai * yi).sum::<f64>();
    let span = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    while hi - lo > 1e-15 * span {
        let mid = 0.5 * (lo + hi);
        if residual(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

fn gradient(gram: &[f64], y: &[f64], a: &[f64]) -> Vec<f64> {
    // gradient of the minimized form ½αᵀQα − Σα
    let n = y.len();
    (0..n).map(|i| (0..n).map(|j| q(gram, y, i, j) * a[j]).sum::<f64>() - 1.0).collect()
}

/// The bias interval implied by KKT at `a`, and the max violation.
fn kkt(gram: &[f64], y: &[f64], a: &[f64], c: f64) -> (f64, f64) {
    let g = gradient(gram, y, a);
    let tol = 1e-9 * c.max(1.0);
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut free = Vec::new();
    for i in 0..y.len() {
        let v = -y[i] * g[i];
        let at_lower = a[i] <= tol;
        let at_upper = a[i] >= c - tol;
        if !at_lower && !at_upper {
            free.push(v);
        } else {
            // at 0: y_i f_i ≥ 1; at C: y_i f_i ≤ 1, both expressed on b
            let lower_bound = (at_lower && y[i] > 0.0) || (at_upper && y[i] < 0.0);
            if lower_bound {
                lo = lo.max(v);
            } else {
                hi = hi.min(v);
            }
        }
    }
    let bias = if !free.is_empty() {
        free.iter().sum::<f64>() / free.len() as f64
    } else if lo.is_finite() && hi.is_finite() {
        0.5 * (lo + hi)
    } else if lo.is_finite() {
        lo
    } else {
        hi
    };
    let mut viol = free.iter().map(|v| (v - bias).abs()).fold(0.0, f64::max);
    viol = viol.max(lo - bias).max(bias - hi);
    viol = viol.max(a.iter().zip(y).map(|(ai, yi)| ai * yi).sum::<f64>().abs());
    (bias, viol)
}

fn polish(gram: &[f64], y: &[f64], a: &[f64], c: f64) -> Option<Vec<f64>> {
    let n = y.len();
    let thr = 1e-7 * c;
    let free: Vec<usize> = (0..n).filter(|&i| a[i] > thr && a[i] < c - thr).collect();
    let fixed: Vec<(usize, f64)> = (0..n)
        .filter(|i| !free.contains(i))
        .map(|i| (i, if a[i] >= c - thr { c } else { 0.0 }))
        .collect();
    let m = free.len();
    let mut out = a.to_vec();
    for &(i, v) in &fixed {
        out[i] = v;
    }
    if m == 0 {
        return Some(out);
    }
    // [Q_FF y_F; y_Fᵀ 0] [α_F; ν] = [1 − Q_FB α_B; −y_Bᵀ α_B]
    let mut lhs = DMatrix::<f64>::zeros(m + 1, m + 1);
    let mut rhs = DVector::<f64>::zeros(m + 1);
    for (r, &i) in free.iter().enumerate() {
        for (s, &j) in free.iter().enumerate() {
            lhs[(r, s)] = q(gram, y, i, j);
        }
        lhs[(r, m)] = y[i];
        lhs[(m, r)] = y[i];
        rhs[r] = 1.0 - fixed.iter().map(|&(j, v)| q(gram, y, i, j) * v).sum::<f64>();
    }
    rhs[m] = -fixed.iter().map(|&(j, v)| y[j] * v).sum::<f64>();
    let sol = lhs.svd(true, true).solve(&rhs, 1e-13).ok()?;
    for (r, &i) in free.iter().enumerate() {
        if !(sol[r] >= -1e-12 && sol[r] <= c + 1e-12) {
            return None;
        }
        out[i] = sol[r].clamp(0.0, c);
    }
    Some(out)
}

pub fn solve(gram: &[f64], y: &[f64], c: f64) -> QpSolution {
    let n = y.len();
    let lipschitz = (0..n)
        .map(|i| (0..n).map(|j| q(gram, y, i, j).abs()).sum::<f64>())
        .fold(1e-12, f64::max);
    let step = 1.0 / lipschitz;
    let mut a = vec![0.0; n];
    let mut z = a.clone();
    let mut t = 1.0f64;
    for _ in 0..50_000 {
        let g = gradient(gram, y, &z);
        let next = project(&z.iter().zip(&g).map(|(zi, gi)| zi - step * gi).collect::<Vec<_>>(), y, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        // restart when the objective would go down
        if objective(gram, y, &next) < objective(gram, y, &a) {
            t = 1.0;
            z = a.clone();
            continue;
        }
        let moved = next.iter().zip(&a).map(|(xn, xo)| (xn - xo).abs()).fold(0.0, f64::max);
        z = next.iter().zip(&a).map(|(xn, xo)| xn + momentum * (xn - xo)).collect();
        a = next;
        if moved < 1e-14 * c.max(1.0) {
            break;
        }
        t = t_next;
    }
    let candidate = polish(gram, y, &a, c)
        .filter(|p| objective(gram, y, p) >= objective(gram, y, &a) - 1e-12)
        .unwrap_or(a);
    let (bias, kkt_residual) = kkt(gram, y, &candidate, c);
    QpSolution {
        objective: objective(gram, y, &candidate),
        alpha: candidate,
        bias,
        kkt_residual,
    }
}
