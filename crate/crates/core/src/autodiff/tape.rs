//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records primitive operations in insertion order; insertion
//! order is a valid topological order, so [`Tape::backward`] simply walks
//! the node list in reverse. Values are small `Copy` handles into the tape
//! they were created on.
//!
//! ```
//! use l2o::autodiff::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Matrix::column(vec![1.0, 2.0]));
//! let sq = tape.square(x);
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
//! ```

use std::sync::atomic::{AtomicU64, Ordering};

use super::matrix::{sigmoid, Matrix};
use crate::error::AutodiffError;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Value {
    tape: u64,
    id: usize,
}

impl Value {
    pub fn id(&self) -> usize {
        self.id
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    /// Trainable leaf.
    Param,
    /// Non-trainable leaf.
    Constant,
    /// Copy of another node's data that blocks gradient flow.
    Detach(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    AddRow(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Square(usize),
    Sum(usize),
    Scale(usize, f64),
    Concat(usize, usize),
    Slice(usize, usize, usize),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    data: Matrix,
}

/// Gradients of a scalar root with respect to every node that reaches it.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// `None` when the node does not influence the root.
    pub fn get(&self, v: Value) -> Option<&Matrix> {
        assert_eq!(v.tape, self.tape, "value from a different tape");
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient materialized as zeros when the node does not reach the root.
    pub fn get_or_zeros(&self, v: Value, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, data: Matrix) -> Value {
        self.nodes.push(Node { op, data });
        Value {
            tape: self.id,
            id: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Value) -> usize {
        assert_eq!(
            v.tape, self.id,
            "cross-tape operation: value belongs to tape {}, not {}",
            v.tape, self.id
        );
        v.id
    }

    fn node(&self, v: Value) -> &Matrix {
        &self.nodes[self.idx(v)].data
    }

    pub fn contains(&self, v: Value) -> bool {
        v.tape == self.id && v.id < self.nodes.len()
    }

    pub fn data(&self, v: Value) -> &Matrix {
        self.node(v)
    }

    /// A trainable leaf.
    pub fn param(&mut self, data: Matrix) -> Value {
        self.push(Op::Param, data)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, data: Matrix) -> Value {
        self.push(Op::Constant, data)
    }

    pub fn detach(&mut self, v: Value) -> Value {
        let i = self.idx(v);
        let data = self.nodes[i].data.clone();
        self.push(Op::Detach(i), data)
    }

    pub fn add(&mut self, a: Value, b: Value) -> Value {
        let data = self.node(a).add(self.node(b));
        let (a, b) = (self.idx(a), self.idx(b));
        self.push(Op::Add(a, b), data)
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Value {
        let data = self.node(a).sub(self.node(b));
        let (a, b) = (self.idx(a), self.idx(b));
        self.push(Op::Sub(a, b), data)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Value, b: Value) -> Value {
        let data = self.node(a).mul(self.node(b));
        let (a, b) = (self.idx(a), self.idx(b));
        self.push(Op::Mul(a, b), data)
    }

    pub fn matmul(&mut self, a: Value, b: Value) -> Value {
        let data = self.node(a).matmul(self.node(b));
        let (a, b) = (self.idx(a), self.idx(b));
        self.push(Op::MatMul(a, b), data)
    }

    /// Broadcast-adds the `1 x cols` row `row` to each row of `m`.
    pub fn add_row(&mut self, m: Value, row: Value) -> Value {
        let data = self.node(m).add_row(self.node(row));
        let (m, row) = (self.idx(m), self.idx(row));
        self.push(Op::AddRow(m, row), data)
    }

    pub fn sigmoid(&mut self, a: Value) -> Value {
        let data = self.node(a).map(sigmoid);
        let a = self.idx(a);
        self.push(Op::Sigmoid(a), data)
    }

    pub fn tanh(&mut self, a: Value) -> Value {
        let data = self.node(a).map(f64::tanh);
        let a = self.idx(a);
        self.push(Op::Tanh(a), data)
    }

    pub fn square(&mut self, a: Value) -> Value {
        let data = self.node(a).map(|x| x * x);
        let a = self.idx(a);
        self.push(Op::Square(a), data)
    }

    /// Sum of all entries, as a `1 x 1` value.
    pub fn sum(&mut self, a: Value) -> Value {
        let data = Matrix::scalar(self.node(a).sum());
        let a = self.idx(a);
        self.push(Op::Sum(a), data)
    }

    pub fn scale(&mut self, a: Value, k: f64) -> Value {
        let data = self.node(a).scale(k);
        let a = self.idx(a);
        self.push(Op::Scale(a, k), data)
    }

    /// Horizontal concatenation `[a | b]`.
    pub fn concat(&mut self, a: Value, b: Value) -> Value {
        let data = self.node(a).concat_cols(self.node(b));
        let (a, b) = (self.idx(a), self.idx(b));
        self.push(Op::Concat(a, b), data)
    }

    /// Columns `start..start + len`.
    pub fn slice(&mut self, a: Value, start: usize, len: usize) -> Value {
        let data = self.node(a).slice_cols(start, len);
        let a = self.idx(a);
        self.push(Op::Slice(a, start, len), data)
    }

    fn forward_op(&self, op: Op, vals: &[Matrix]) -> Option<Matrix> {
        Some(match op {
            Op::Param | Op::Constant => return None,
            Op::Detach(a) => vals[a].clone(),
            Op::Add(a, b) => vals[a].add(&vals[b]),
            Op::Sub(a, b) => vals[a].sub(&vals[b]),
            Op::Mul(a, b) => vals[a].mul(&vals[b]),
            Op::MatMul(a, b) => vals[a].matmul(&vals[b]),
            Op::AddRow(a, b) => vals[a].add_row(&vals[b]),
            Op::Sigmoid(a) => vals[a].map(sigmoid),
            Op::Tanh(a) => vals[a].map(f64::tanh),
            Op::Square(a) => vals[a].map(|x| x * x),
            Op::Sum(a) => Matrix::scalar(vals[a].sum()),
            Op::Scale(a, k) => vals[a].scale(k),
            Op::Concat(a, b) => vals[a].concat_cols(&vals[b]),
            Op::Slice(a, s, l) => vals[a].slice_cols(s, l),
        })
    }

    /// Recomputes every node from the leaves in insertion order.
    pub fn replay(&self) -> Vec<Matrix> {
        let mut vals: Vec<Matrix> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = self
                .forward_op(node.op, &vals)
                .unwrap_or_else(|| node.data.clone());
            vals.push(v);
        }
        vals
    }

    /// True when [`Tape::replay`] reproduces every stored array bit for bit.
    pub fn replay_matches(&self) -> bool {
        self.replay()
            .iter()
            .zip(&self.nodes)
            .all(|(a, n)| a.shape() == n.data.shape() && bits_eq(a.data(), n.data.data()))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Value) -> Result<Gradients, AutodiffError> {
        if !self.contains(root) {
            return Err(AutodiffError::ForeignRoot);
        }
        let r = root.id;
        let shape = self.nodes[r].data.shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarRoot {
                rows: shape.0,
                cols: shape.1,
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; r + 1];
        grads[r] = Some(Matrix::scalar(1.0));
        for i in (0..=r).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match node.op {
                Op::Param | Op::Constant | Op::Detach(_) => {}
                Op::Add(a, b) => {
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, b, g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let ga = g.mul(&self.nodes[b].data);
                    let gb = g.mul(&self.nodes[a].data);
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_transpose_rhs(&self.nodes[b].data);
                    let gb = self.nodes[a].data.transpose_lhs_matmul(&g);
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
                Op::AddRow(a, b) => {
                    acc(&mut grads, b, g.sum_rows());
                    acc(&mut grads, a, g.clone());
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.data, |gi, y| gi * y * (1.0 - y));
                    acc(&mut grads, a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.data, |gi, y| gi * (1.0 - y * y));
                    acc(&mut grads, a, ga);
                }
                Op::Square(a) => {
                    let ga = g.zip_map(&self.nodes[a].data, |gi, x| 2.0 * x * gi);
                    acc(&mut grads, a, ga);
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.nodes[a].data.shape();
                    acc(&mut grads, a, Matrix::filled(rows, cols, g.get(0, 0)));
                }
                Op::Scale(a, k) => acc(&mut grads, a, g.scale(k)),
                Op::Concat(a, b) => {
                    let ca = self.nodes[a].data.cols();
                    let cb = self.nodes[b].data.cols();
                    acc(&mut grads, a, g.slice_cols(0, ca));
                    acc(&mut grads, b, g.slice_cols(ca, cb));
                }
                Op::Slice(a, start, len) => {
                    let (rows, cols) = self.nodes[a].data.shape();
                    let mut ga = Matrix::zeros(rows, cols);
                    for rr in 0..rows {
                        for c in 0..len {
                            ga.set(rr, start + c, g.get(rr, c));
                        }
                    }
                    acc(&mut grads, a, ga);
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

fn acc(grads: &mut [Option<Matrix>], i: usize, g: Matrix) {
    match &mut grads[i] {
        Some(existing) => existing.accumulate(&g),
        slot @ None => *slot = Some(g),
    }
}

fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let mut t = Tape::new();
        let x = t.param(Matrix::column(vec![1.0, 2.0]));
        let s = t.square(x);
        let l = t.sum(s);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn detach_blocks_flow() {
        let mut t = Tape::new();
        let x = t.param(Matrix::scalar(3.0));
        let y = t.square(x);
        let d = t.detach(y);
        let l = t.scale(d, 1.0);
        let g = t.backward(l).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(t.data(d), t.data(y));
    }

    #[test]
    fn detach_plus_identity_counts_one_path() {
        let mut t = Tape::new();
        let x = t.param(Matrix::column(vec![0.5, -1.5]));
        let d = t.detach(x);
        let s = t.add(d, x);
        let l = t.sum(s);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let mut t = Tape::new();
        let w = t.param(Matrix::scalar(0.0));
        let x = t.constant(Matrix::scalar(3.0));
        let wx = t.matmul(w, x);
        let l = t.sigmoid(wx);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(w).unwrap().get(0, 0), 0.75);
        assert!(g.get(x).is_some());
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut t = Tape::new();
        let x = t.param(Matrix::column(vec![1.0, 2.0]));
        assert!(matches!(
            t.backward(x),
            Err(AutodiffError::NonScalarRoot { rows: 2, cols: 1 })
        ));
    }

    #[test]
    fn root_from_other_tape_rejected() {
        let mut a = Tape::new();
        let b = Tape::new();
        let x = a.param(Matrix::scalar(1.0));
        assert!(matches!(b.backward(x), Err(AutodiffError::ForeignRoot)));
    }

    #[test]
    #[should_panic(expected = "cross-tape")]
    fn cross_tape_op_panics() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.param(Matrix::scalar(1.0));
        let y = b.param(Matrix::scalar(1.0));
        b.add(x, y);
    }

    #[test]
    fn replay_is_bit_identical_and_backward_deterministic() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_vec(2, 2, vec![0.3, -0.7, 1.1, 0.2]));
        let w = t.param(Matrix::from_vec(2, 3, vec![0.1, 0.2, -0.3, 0.4, -0.5, 0.6]));
        let b = t.param(Matrix::from_vec(1, 3, vec![0.01, -0.02, 0.03]));
        let h = t.matmul(x, w);
        let h = t.add_row(h, b);
        let s = t.sigmoid(h);
        let th = t.tanh(h);
        let p = t.mul(s, th);
        let c = t.concat(p, x);
        let sl = t.slice(c, 1, 3);
        let q = t.square(sl);
        let l = t.sum(q);
        assert!(t.replay_matches());
        let g1 = t.backward(l).unwrap();
        let g2 = t.backward(l).unwrap();
        for v in [x, w, b] {
            assert!(bits_eq(
                g1.get(v).unwrap().data(),
                g2.get(v).unwrap().data()
            ));
        }
    }
}
