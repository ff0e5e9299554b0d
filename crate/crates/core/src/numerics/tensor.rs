use crate::error::{Error, Result};
use crate::numerics::Real;

/// Dense row-major array.
///
/// `dims` are all positive and their product equals `data.len()`. Kernels
/// treat tensors as immutable inputs and allocate fresh outputs; the only
/// in-place mutation in the crate is the optimizer step on weight tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

/// Product of `dims`, or `None` on overflow or a zero extent.
pub fn checked_numel(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| if d == 0 { None } else { acc.checked_mul(d) })
}

impl<T: Real> Tensor<T> {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let dims = dims.into();
        let numel = checked_numel(&dims)
            .ok_or_else(|| Error::Shape(format!("invalid dims {dims:?}")))?;
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: T) -> Self {
        let dims = dims.into();
        let numel = checked_numel(&dims).expect("dims must be positive and fit in usize");
        Tensor { dims, data: vec![value; numel] }
    }

    pub fn from_fn(dims: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let dims = dims.into();
        let numel = checked_numel(&dims).expect("dims must be positive and fit in usize");
        Tensor { dims, data: (0..numel).map(&mut f).collect() }
    }

    /// 1-D tensor over `data`.
    pub fn vector(data: Vec<T>) -> Self {
        assert!(!data.is_empty(), "empty vector tensor");
        Tensor { dims: vec![data.len()], data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn reshape(self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!("{what}[{i}] = {}", self.data[i]))),
        }
    }

    pub fn ensure_dims(&self, expected: &[usize], what: &str) -> Result<()> {
        if self.dims != expected {
            return Err(Error::Shape(format!("{what}: expected {expected:?}, got {:?}", self.dims)));
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        assert_eq!(self.dims, other.dims, "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    /// `self += scale * other`, element-wise.
    pub fn axpy(&mut self, scale: T, other: &Tensor<T>) {
        assert_eq!(self.dims, other.dims, "axpy on mismatched shapes");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + scale * b;
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }
}

impl<T: Real> std::ops::Index<usize> for Tensor<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.data[i]
    }
}

impl<T: Real> std::ops::IndexMut<usize> for Tensor<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.data[i]
    }
}
