//! Dense 4-D tensors in (batch, channels, height, width) row-major layout.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub type Shape = [usize; 4];

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

pub fn numel(shape: &Shape) -> usize {
    shape.iter().product()
}

pub fn format_shape(shape: &Shape) -> String {
    format!("({},{},{},{})", shape[0], shape[1], shape[2], shape[3])
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; numel(&shape)],
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != numel(&shape) {
            return Err(Error::Dimension(format!(
                "shape {} needs {} values, got {}",
                format_shape(&shape),
                numel(&shape),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at flat index {i}")));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    /// Row vector of length `len`, stored as (1, len, 1, 1).
    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let len = data.len();
        Self::from_vec([1, len, 1, 1], data)
    }

    /// Zero-mean normal entries with variance `2 / fan_in`.
    pub fn he_normal<R: Rng + ?Sized>(shape: Shape, fan_in: usize, rng: &mut R) -> Self {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..numel(&shape)).map(|_| normal.sample(rng)).collect();
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }
    pub fn channels(&self) -> usize {
        self.shape[1]
    }
    pub fn height(&self) -> usize {
        self.shape[2]
    }
    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub(crate) fn grad_mut_or_zero(&mut self) -> &mut Vec<f64> {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub(crate) fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((n * cs + c) * hs + y) * ws + x
    }

    /// Values of one batch item, length C*H*W.
    pub fn item(&self, n: usize) -> &[f64] {
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * per..(n + 1) * per]
    }

    /// New tensor made of the given batch items, in order.
    pub fn select_items(&self, indices: &[usize]) -> Tensor {
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            data.extend_from_slice(self.item(i));
        }
        Tensor {
            shape: [indices.len(), self.shape[1], self.shape[2], self.shape[3]],
            data,
            grad: None,
        }
    }

    /// Same values under a different shape with equal element count.
    pub fn reshape(mut self, shape: Shape) -> Result<Tensor> {
        if numel(&shape) != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {} into {}",
                format_shape(&self.shape),
                format_shape(&shape)
            )));
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(data.len(), numel(&shape));
        Tensor {
            shape,
            data,
            grad: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn from_vec_checks_length_and_finiteness() {
        assert!(Tensor::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
        assert!(matches!(
            Tensor::from_vec([1, 1, 1, 1], vec![f64::NAN]),
            Err(Error::Numeric(_))
        ));
        let t = Tensor::from_vec([1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.get(0, 1, 0, 0), 3.0);
    }

    #[test]
    fn select_items_keeps_order() {
        let t = Tensor::from_vec([3, 1, 1, 2], (0..6).map(f64::from).collect()).unwrap();
        let s = t.select_items(&[2, 0]);
        assert_eq!(s.data(), &[4.0, 5.0, 0.0, 1.0]);
    }

    #[test]
    fn he_normal_is_seeded() {
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        assert_eq!(
            Tensor::he_normal([2, 3, 3, 3], 27, &mut a),
            Tensor::he_normal([2, 3, 3, 3], 27, &mut b)
        );
    }
}
