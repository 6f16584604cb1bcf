//! Small dense-vector helpers shared by the encoder, index and trainer.
//!
//! Every dot product that feeds a fitness score is accumulated in `f64` and
//! split at the start/end boundary, so a score assembled from precomputed
//! half-products is bit-identical to scoring the concatenated vector.

use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · x`, one output per row.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `selfᵀ · y` accumulated into `out`.
    pub fn mul_t_vec_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += yr * w;
            }
        }
    }

    /// `self += a ⊗ b`.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        for (r, &ar) in a.iter().enumerate() {
            if ar == 0.0 {
                continue;
            }
            for (w, &bc) in self.row_mut(r).iter_mut().zip(b) {
                *w += ar * bc;
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Dot product of an `f64` query against a stored `f32` vector, accumulated in `f64`.
#[inline]
pub fn dot_f32(a: &[f64], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, &y) in a.iter().zip(b) {
        acc += x * f64::from(y);
    }
    acc
}

/// Fitness of a length-`d` vector: the two halves are summed separately and
/// then added, matching how span scores are assembled from start/end rows.
#[inline]
pub fn split_dot(q: &[f64], v: &[f64]) -> f64 {
    let h = q.len() / 2;
    dot(&q[..h], &v[..h]) + dot(&q[h..], &v[h..])
}

#[inline]
pub fn split_dot_f32(q: &[f64], v: &[f32]) -> f64 {
    let h = q.len() / 2;
    dot_f32(&q[..h], &v[..h]) + dot_f32(&q[h..], &v[h..])
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero when either side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Numerically stable `log Σ exp(xᵢ)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Ranks `scores` descending, ties by ascending index, keeping the first `k`.
pub fn top_k_desc(scores: &[f64], k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids.truncate(k);
    ids
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_dot_matches_two_halves() {
        let q = [1.0, 2.0, 3.0, 4.0];
        let v = [0.5, -1.0, 2.0, 0.25];
        assert_eq!(split_dot(&q, &v), dot(&q[..2], &v[..2]) + dot(&q[2..], &v[2..]));
        assert_eq!(split_dot(&q, &v), -1.5 + 7.0);
    }

    #[test]
    fn cosine_of_zero_vector_is_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn top_k_breaks_ties_by_index() {
        assert_eq!(top_k_desc(&[0.5, 0.9, 0.5, 0.9], 3), vec![1, 3, 0]);
        assert!(top_k_desc(&[1.0], 0).is_empty());
    }

    #[test]
    fn outer_and_transpose_products() {
        let mut m = Matrix::zeros(2, 3);
        m.add_outer(&[1.0, 2.0], &[1.0, 0.0, -1.0]);
        assert_eq!(m.data, vec![1.0, 0.0, -1.0, 2.0, 0.0, -2.0]);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![0.0, 0.0]);
        let mut out = vec![0.0; 3];
        m.mul_t_vec_acc(&[1.0, 1.0], &mut out);
        assert_eq!(out, vec![3.0, 0.0, -3.0]);
    }
}
