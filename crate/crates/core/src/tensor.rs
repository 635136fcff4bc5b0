//! Dense row-major tensors and the small matrix kernels the layers are built on.
//!
//! Tensors are rank 1..=4, stored contiguously ([N, C, H, W] order for feature
//! maps).  The element type is generic so the same kernels can run in f32 for
//! the pipeline and in f64 for numerical gradient checks; everything outside
//! test code uses the `f32` default.

use num_traits::Float;
use std::fmt;

/// Scalar element for tensors: f32 in production, f64 in numerical checks.
pub trait Elem: Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Elem for f32 {
    fn from_f64(x: f64) -> f32 {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Elem for f64 {
    fn from_f64(x: f64) -> f64 {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

pub const MAX_RANK: usize = 4;

#[derive(Clone, PartialEq)]
pub struct Tensor<E: Elem = f32> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Elem> Tensor<E> {
    /// Build a tensor from a shape and matching data buffer.
    ///
    /// Panics on rank 0, rank > 4, zero extents, or a length mismatch —
    /// these are programming errors, not runtime conditions.
    pub fn new(shape: &[usize], data: Vec<E>) -> Tensor<E> {
        assert!(
            !shape.is_empty() && shape.len() <= MAX_RANK,
            "tensor rank must be 1..=4, got {}",
            shape.len()
        );
        assert!(
            shape.iter().all(|&e| e >= 1),
            "tensor extents must all be >= 1, got {:?}",
            shape
        );
        let n: usize = shape.iter().product();
        assert_eq!(
            n,
            data.len(),
            "shape {:?} wants {} elements, data has {}",
            shape,
            n,
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Tensor<E> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![E::zero(); n])
    }

    pub fn full(shape: &[usize], value: E) -> Tensor<E> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Same data, new shape (element count must match).
    pub fn reshape(mut self, shape: &[usize]) -> Tensor<E> {
        let n: usize = shape.iter().product();
        assert_eq!(
            n,
            self.data.len(),
            "reshape {:?} -> {:?}",
            self.shape,
            shape
        );
        assert!(!shape.is_empty() && shape.len() <= MAX_RANK);
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Tensor<E> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// self += alpha * other, shapes must match.
    pub fn add_scaled(&mut self, other: &Tensor<E>, alpha: E) {
        assert_eq!(self.shape, other.shape, "add_scaled shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: E) {
        for a in self.data.iter_mut() {
            *a = *a * alpha;
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, E> {
        self.data.iter()
    }

    /// Cast every element through f64 into another element type.
    pub fn cast<F: Elem>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| F::from_f64(x.to_f64())).collect(),
        }
    }
}

impl<E: Elem> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor{{shape={:?}, len={}}}",
            self.shape,
            self.data.len()
        )
    }
}

// ─── matrix kernels ─────────────────────────────────────────────────────────
//
// All heavy layers reduce to C = A·B on contiguous row-major slices.  The
// k-middle loop order keeps the inner loop a saxpy over independent output
// columns, which the compiler vectorizes, while the accumulation order per
// output element stays fixed (ascending k) so results are bit-reproducible.

/// out[m×n] += a[m×k] · b[k×n]
pub fn mm_nn<E: Elem>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    assert_eq!(a.len(), m * k, "mm_nn: lhs length");
    assert_eq!(b.len(), k * n, "mm_nn: rhs length");
    assert_eq!(out.len(), m * n, "mm_nn: out length");
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (c, &bv) in c_row.iter_mut().zip(b_row) {
                *c = *c + av * bv;
            }
        }
    }
}

/// Row-major transpose of a `rows×cols` slice.
pub fn transpose<E: Elem>(a: &[E], rows: usize, cols: usize) -> Vec<E> {
    assert_eq!(a.len(), rows * cols, "transpose: length");
    let mut out = vec![E::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construct_and_reshape() {
        let t: Tensor = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.len(), 6);
        let t = t.reshape(&[3, 2]);
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data()[4], 5.0);
    }

    #[test]
    #[should_panic]
    fn rejects_length_mismatch() {
        let _t: Tensor = Tensor::new(&[2, 2], vec![1.0]);
    }

    #[test]
    #[should_panic]
    fn rejects_rank_5() {
        let _t: Tensor = Tensor::new(&[1, 1, 1, 1, 1], vec![1.0]);
    }

    #[test]
    #[should_panic]
    fn rejects_zero_extent() {
        let _t: Tensor = Tensor::new(&[2, 0], vec![]);
    }

    #[test]
    fn mm_small() {
        // [[1,2],[3,4]] · [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = vec![1.0f32, 2.0, 3.0, 4.0];
        let b = vec![5.0f32, 6.0, 7.0, 8.0];
        let mut c = vec![0.0f32; 4];
        mm_nn(&a, &b, 2, 2, 2, &mut c);
        assert_eq!(c, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transpose_round_trip() {
        let a: Vec<f32> = (0..12).map(|x| x as f32).collect();
        let t = transpose(&a, 3, 4);
        let back = transpose(&t, 4, 3);
        assert_eq!(a, back);
        assert_eq!(t[0], 0.0);
        assert_eq!(t[1], 4.0); // column 0 of the original
    }

    #[test]
    fn add_scaled_accumulates() {
        let mut a: Tensor = Tensor::zeros(&[4]);
        let b: Tensor = Tensor::full(&[4], 2.0);
        a.add_scaled(&b, 0.5);
        assert_eq!(a.data(), &[1.0, 1.0, 1.0, 1.0]);
    }
}
