use std::cell::{Ref, RefCell, RefMut};
use std::rc::Rc;

use super::Scalar;
use crate::error::{Error, Result};

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                expected: shape,
                got: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Builds a `rows.len() × width` matrix. Every row must have the same width.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            let r = r.as_ref();
            if r.len() != width {
                return Err(Error::Shape {
                    op: "from_rows",
                    expected: vec![width],
                    got: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            shape: vec![rows.len(), width],
            data,
        })
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

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Size of the last dimension.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(0)
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Row-wise argmax; ties resolve to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows())
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Numerically stable row softmax of a 2-D tensor.
    pub fn softmax_rows(&self) -> Self {
        let c = self.cols();
        let mut out = self.data.clone();
        for row in out.chunks_mut(c.max(1)) {
            softmax_in_place(row);
        }
        Self {
            shape: self.shape.clone(),
            data: out,
        }
    }

    /// Sum of squares of all elements.
    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// `a[m×k] · b[k×n]` into a fresh buffer.
pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

#[derive(Debug)]
pub(crate) struct ParamInner<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) grad: Vec<T>,
}

/// Trainable tensor with an attached gradient buffer.
///
/// Cloning a `Param` shares storage; use [`Param::deep_copy`] for an
/// independent copy.
#[derive(Debug, Clone)]
pub struct Param<T = f64>(Rc<RefCell<ParamInner<T>>>);

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = vec![T::zero(); value.len()];
        Self(Rc::new(RefCell::new(ParamInner { value, grad })))
    }

    pub fn value(&self) -> Ref<'_, Tensor<T>> {
        Ref::map(self.0.borrow(), |p| &p.value)
    }

    pub fn value_mut(&self) -> RefMut<'_, Tensor<T>> {
        RefMut::map(self.0.borrow_mut(), |p| &mut p.value)
    }

    pub fn grad(&self) -> Ref<'_, [T]> {
        Ref::map(self.0.borrow(), |p| p.grad.as_slice())
    }

    pub fn grad_mut(&self) -> RefMut<'_, [T]> {
        RefMut::map(self.0.borrow_mut(), |p| p.grad.as_mut_slice())
    }

    pub fn zero_grad(&self) {
        self.grad_mut().iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn numel(&self) -> usize {
        self.0.borrow().value.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().value.shape().to_vec()
    }

    /// Replaces the values, keeping the shape.
    pub fn set_data(&self, data: &[T]) -> Result<()> {
        let mut inner = self.0.borrow_mut();
        if inner.value.len() != data.len() {
            return Err(Error::Shape {
                op: "set_data",
                expected: inner.value.shape().to_vec(),
                got: vec![data.len()],
            });
        }
        inner.value.data_mut().copy_from_slice(data);
        Ok(())
    }

    pub fn deep_copy(&self) -> Self {
        let inner = self.0.borrow();
        Self(Rc::new(RefCell::new(ParamInner {
            value: inner.value.clone(),
            grad: inner.grad.clone(),
        })))
    }

    pub(crate) fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as *const () as usize
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut inner = self.0.borrow_mut();
        for (a, &b) in inner.grad.iter_mut().zip(g) {
            *a = *a + b;
        }
    }

    pub fn same_storage(&self, other: &Self) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }
}
