use super::{EngineError, Scalar};

/// Dense row-major array. Activations are laid out NHWC.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, EngineError> {
        let want: usize = shape.iter().product();
        if want != data.len() {
            return Err(EngineError::ShapeMismatch(format!(
                "shape {shape:?} needs {want} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the leading (batch) axis.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self, EngineError> {
        let want: usize = shape.iter().product();
        if want != self.data.len() {
            return Err(EngineError::ShapeMismatch(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    /// Rows of the leading axis selected by `indices`, in that order.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor<T> {
        let row = if self.shape.is_empty() {
            0
        } else {
            self.data.len() / self.shape[0].max(1)
        };
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&self.data[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape.clone();
        if let Some(s) = shape.first_mut() {
            *s = indices.len();
        }
        Tensor { shape, data }
    }

    /// Casting gather, used to move f32 datasets into the model's precision.
    pub fn gather_rows_as<U: Scalar>(&self, indices: &[usize]) -> Tensor<U> {
        let row = self.data.len() / self.shape[0].max(1);
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend(
                self.data[i * row..(i + 1) * row]
                    .iter()
                    .map(|v| U::from_f64_lossy(v.to_f64_lossy())),
            );
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor { shape, data }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
