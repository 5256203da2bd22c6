//! Dense row-major `f64` tensor.
//!
//! The single numeric container used everywhere: images are `[H, W, C]`,
//! conv kernels `[kh, kw, c_in, c_out]`, dense weights `[in, out]`, scalars
//! `[1]`. All math is 64-bit; 8-bit image formats are converted on load.

/// Dense tensor with explicit shape; `data.len() == shape.iter().product()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build from a shape and flat row-major data. Panics when the element
    /// count does not match the shape or an extent is zero.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert!(
            shape.iter().all(|&e| e > 0),
            "zero extent in shape {shape:?}"
        );
        let want: usize = shape.iter().product();
        assert_eq!(
            want,
            data.len(),
            "shape {shape:?} needs {want} elements, got {}",
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn filled(shape: &[usize], v: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![v; n])
    }

    /// Rank-1 single element; the shape used for losses.
    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(&[1], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // extents are positive by construction
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same data, new shape (element counts must agree).
    pub fn reshaped(&self, shape: &[usize]) -> Tensor {
        Tensor::new(shape, self.data.clone())
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (i, (&ix, &ext)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(ix < ext, "index {ix} out of bounds for axis {i} ({ext})");
            off = off * ext + ix;
        }
        off
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let off = self.offset(idx);
        self.data[off] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(
            self.shape, other.shape,
            "zip_map shape mismatch {:?} vs {:?}",
            self.shape, other.shape
        );
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self += c * other`, in place.
    pub fn add_scaled(&mut self, other: &Tensor, c: f64) {
        assert_eq!(
            self.shape, other.shape,
            "add_scaled shape mismatch {:?} vs {:?}",
            self.shape, other.shape
        );
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    /// L2 norm over all entries (Frobenius for matrices).
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn linf_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(
            self.shape, other.shape,
            "max_abs_diff shape mismatch {:?} vs {:?}",
            self.shape, other.shape
        );
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Exact bit-level equality, including shape.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[should_panic(expected = "needs 6 elements")]
    fn element_count_must_match_shape() {
        Tensor::new(&[2, 3], vec![0.0; 5]);
    }

    #[test]
    #[should_panic(expected = "zero extent")]
    fn zero_extent_rejected() {
        Tensor::new(&[2, 0], vec![]);
    }

    #[test]
    fn row_major_offsets() {
        let t = Tensor::new(&[2, 3, 2], (0..12).map(|i| i as f64).collect());
        assert_eq!(t.at(&[0, 0, 0]), 0.0);
        assert_eq!(t.at(&[0, 0, 1]), 1.0);
        assert_eq!(t.at(&[0, 2, 1]), 5.0);
        assert_eq!(t.at(&[1, 0, 0]), 6.0);
        assert_eq!(t.at(&[1, 2, 1]), 11.0);
    }

    #[test]
    fn norms() {
        let t = Tensor::new(&[2, 2], vec![3.0, -4.0, 0.0, 0.0]);
        assert_eq!(t.frobenius_norm(), 5.0);
        assert_eq!(t.l1_norm(), 7.0);
        assert_eq!(t.linf_norm(), 4.0);
        assert_eq!(t.sum(), -1.0);
    }

    #[test]
    fn add_scaled_in_place() {
        let mut a = Tensor::new(&[3], vec![1.0, 2.0, 3.0]);
        let b = Tensor::new(&[3], vec![10.0, 20.0, 30.0]);
        a.add_scaled(&b, 0.5);
        assert_eq!(a.data(), &[6.0, 12.0, 18.0]);
    }

    #[test]
    fn bit_eq_distinguishes_negative_zero() {
        let a = Tensor::new(&[1], vec![0.0]);
        let b = Tensor::new(&[1], vec![-0.0]);
        assert_eq!(a, b); // numeric equality
        assert!(!a.bit_eq(&b)); // bitwise difference
    }

    #[test]
    fn reshape_keeps_data() {
        let t = Tensor::new(&[2, 3], (0..6).map(|i| i as f64).collect());
        let r = t.reshaped(&[6]);
        assert_eq!(r.shape(), &[6]);
        assert_eq!(r.data(), t.data());
    }
}
