//! Dense row-major tensors.

use crate::scalar::Scalar;

/// Dense n-dimensional array. `data.len()` always equals the product of
/// `shape`; gradients produced for a tensor have the same element count.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn from_f32_slice(shape: Vec<usize>, values: &[f32]) -> Self {
        let data = values.iter().map(|&v| T::from_f32(v)).collect();
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Same data under a different shape; element counts must agree.
    pub fn reshaped(&self, shape: Vec<usize>) -> Self {
        Tensor::new(shape, self.data.clone())
    }

    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn map_to<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_data_agree() {
        let t = Tensor::<f32>::zeros(vec![2, 3]);
        assert_eq!(t.len(), 6);
        assert_eq!(t.shape(), &[2, 3]);
    }

    #[test]
    #[should_panic]
    fn mismatched_shape_panics() {
        let _ = Tensor::<f32>::new(vec![2, 2], vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn precision_conversion_round_trips_exactly_for_f32_values() {
        let t = Tensor::<f32>::new(vec![3], vec![0.1, -2.5, 7.0]);
        let up: Tensor<f64> = t.map_to();
        let down: Tensor<f32> = up.map_to();
        assert_eq!(t, down);
    }
}
