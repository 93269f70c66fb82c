use std::fmt;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor of rank 1 to 4.
///
/// Feature maps use NHWC order: `[batch, height, width, channels]`.
#[derive(Clone, PartialEq)]
pub struct Tensor<S> {
    dims: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(dims: &[usize], data: Vec<S>) -> Result<Self> {
        Self::check_dims(dims)?;
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(shape_err(
                "tensor construction",
                format!("{len} elements for dims {dims:?}"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.is_empty() || dims.len() > 4 || dims.contains(&0) {
            return Err(shape_err(
                "tensor dims",
                "rank 1..=4 with every dim >= 1",
                format!("{dims:?}"),
            ));
        }
        Ok(())
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, S::zero())
    }

    pub fn full(dims: &[usize], value: S) -> Self {
        Self::check_dims(dims).expect("invalid tensor dims");
        Self {
            dims: dims.to_vec(),
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        Self::check_dims(dims).expect("invalid tensor dims");
        let len = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn scalar(v: S) -> Self {
        Self {
            dims: vec![1],
            data: vec![v],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// `(n, h, w, c)` of a rank-4 tensor.
    pub fn nhwc(&self) -> Result<(usize, usize, usize, usize)> {
        match self.dims[..] {
            [n, h, w, c] => Ok((n, h, w, c)),
            _ => Err(shape_err(
                "feature map",
                "rank-4 NHWC tensor",
                format!("{:?}", self.dims),
            )),
        }
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        Self::check_dims(dims)?;
        if dims.iter().product::<usize>() != self.data.len() {
            return Err(shape_err(
                "reshape",
                format!("{} elements", self.data.len()),
                format!("{dims:?}"),
            ));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.expect_same_dims(other, "elementwise op")?;
        Ok(Self {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_dims(other, "accumulate")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: S) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn expect_same_dims(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.dims != other.dims {
            return Err(shape_err(
                context,
                format!("{:?}", self.dims),
                format!("{:?}", other.dims),
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }

    /// Element of a rank-4 tensor.
    pub fn at4(&self, n: usize, y: usize, x: usize, c: usize) -> S {
        let (_, h, w, ch) = (self.dims[0], self.dims[1], self.dims[2], self.dims[3]);
        self.data[((n * h + y) * w + x) * ch + c]
    }

    /// Splits the leading (batch) axis.
    pub fn unstack(&self) -> Vec<Tensor<S>> {
        let n = self.dims[0];
        let inner: Vec<usize> = if self.dims.len() == 1 {
            vec![1]
        } else {
            self.dims[1..].to_vec()
        };
        let step = self.data.len() / n;
        self.data
            .chunks(step)
            .map(|chunk| Tensor {
                dims: inner.clone(),
                data: chunk.to_vec(),
            })
            .collect()
    }

    /// Joins equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<S>]) -> Result<Self> {
        let first = items.first().ok_or(Error::Empty("tensor stack"))?;
        if first.rank() >= 4 {
            return Err(shape_err("stack", "rank <= 3 items", format!("{:?}", first.dims)));
        }
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            first.expect_same_dims(t, "stack")?;
            data.extend_from_slice(&t.data);
        }
        let mut dims = vec![items.len()];
        dims.extend_from_slice(&first.dims);
        Ok(Self { dims, data })
    }
}

impl<S: fmt::Debug> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<&S> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("dims", &self.dims)
            .field("head", &preview)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_count_must_match_dims() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::new(&[1, 1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::<f32>::new(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn stack_unstack() {
        let a = Tensor::<f64>::from_fn(&[2, 2, 1], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[2, 2, 1], |i| 10.0 + i as f64);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.dims(), &[2, 2, 2, 1]);
        assert_eq!(s.at4(1, 0, 1, 0), 11.0);
        assert_eq!(s.unstack(), vec![a, b]);
    }
}
