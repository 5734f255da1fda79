//! A small operation vocabulary shared by the taped and the plain forward
//! passes, so both run the exact same kernels in the same order.

use std::rc::Rc;

use super::matrix::{sigmoid, Matrix};
use super::tape::{Tape, Value};

pub trait Ops {
    type V: Clone;

    fn constant(&mut self, m: Matrix) -> Self::V;
    fn data<'a>(&'a self, v: &'a Self::V) -> &'a Matrix;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn add_row(&mut self, m: &Self::V, row: &Self::V) -> Self::V;
    fn sigmoid(&mut self, a: &Self::V) -> Self::V;
    fn tanh(&mut self, a: &Self::V) -> Self::V;
    fn scale(&mut self, a: &Self::V, k: f64) -> Self::V;
    fn concat(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn slice(&mut self, a: &Self::V, start: usize, len: usize) -> Self::V;
}

impl Ops for Tape {
    type V = Value;

    fn constant(&mut self, m: Matrix) -> Value {
        Tape::constant(self, m)
    }
    fn data<'a>(&'a self, v: &'a Value) -> &'a Matrix {
        Tape::data(self, *v)
    }
    fn add(&mut self, a: &Value, b: &Value) -> Value {
        Tape::add(self, *a, *b)
    }
    fn sub(&mut self, a: &Value, b: &Value) -> Value {
        Tape::sub(self, *a, *b)
    }
    fn mul(&mut self, a: &Value, b: &Value) -> Value {
        Tape::mul(self, *a, *b)
    }
    fn matmul(&mut self, a: &Value, b: &Value) -> Value {
        Tape::matmul(self, *a, *b)
    }
    fn add_row(&mut self, m: &Value, row: &Value) -> Value {
        Tape::add_row(self, *m, *row)
    }
    fn sigmoid(&mut self, a: &Value) -> Value {
        Tape::sigmoid(self, *a)
    }
    fn tanh(&mut self, a: &Value) -> Value {
        Tape::tanh(self, *a)
    }
    fn scale(&mut self, a: &Value, k: f64) -> Value {
        Tape::scale(self, *a, k)
    }
    fn concat(&mut self, a: &Value, b: &Value) -> Value {
        Tape::concat(self, *a, *b)
    }
    fn slice(&mut self, a: &Value, start: usize, len: usize) -> Value {
        Tape::slice(self, *a, start, len)
    }
}

/// Plain evaluation with no recording.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Ops for Eager {
    type V = Rc<Matrix>;

    fn constant(&mut self, m: Matrix) -> Rc<Matrix> {
        Rc::new(m)
    }
    fn data<'a>(&'a self, v: &'a Rc<Matrix>) -> &'a Matrix {
        v
    }
    fn add(&mut self, a: &Rc<Matrix>, b: &Rc<Matrix>) -> Rc<Matrix> {
        Rc::new(a.add(b))
    }
    fn sub(&mut self, a: &Rc<Matrix>, b: &Rc<Matrix>) -> Rc<Matrix> {
        Rc::new(a.sub(b))
    }
    fn mul(&mut self, a: &Rc<Matrix>, b: &Rc<Matrix>) -> Rc<Matrix> {
        Rc::new(a.mul(b))
    }
    fn matmul(&mut self, a: &Rc<Matrix>, b: &Rc<Matrix>) -> Rc<Matrix> {
        Rc::new(a.matmul(b))
    }
    fn add_row(&mut self, m: &Rc<Matrix>, row: &Rc<Matrix>) -> Rc<Matrix> {
        Rc::new(m.add_row(row))
    }
    fn sigmoid(&mut self, a: &Rc<Matrix>) -> Rc<Matrix> {
        Rc::new(a.map(sigmoid))
    }
    fn tanh(&mut self, a: &Rc<Matrix>) -> Rc<Matrix> {
        Rc::new(a.map(f64::tanh))
    }
    fn scale(&mut self, a: &Rc<Matrix>, k: f64) -> Rc<Matrix> {
        Rc::new(a.scale(k))
    }
    fn concat(&mut self, a: &Rc<Matrix>, b: &Rc<Matrix>) -> Rc<Matrix> {
        Rc::new(a.concat_cols(b))
    }
    fn slice(&mut self, a: &Rc<Matrix>, start: usize, len: usize) -> Rc<Matrix> {
        Rc::new(a.slice_cols(start, len))
    }
}
