//! The learned optimizer: a coordinate-wise two-layer LSTM over
//! log/sign-preprocessed gradients with a scaled linear read-out.
//!
//! Every optimizee coordinate is a row of the batch the LSTM runs on, and
//! all rows share the same weights, so the parameter count does not depend
//! on the optimizee dimension.

mod checkpoint;

pub use checkpoint::{decode, encode, load, save, MAGIC};

use rand::Rng as _;

use crate::autodiff::{Eager, Matrix, Ops};
use crate::error::DimensionMismatch;
use crate::seed;

pub const NUM_TENSORS: usize = 6;

/// Fixed tensor order, used by flattening and the checkpoint format.
pub const TENSOR_NAMES: [&str; NUM_TENSORS] = [
    "lstm1.weight",
    "lstm1.bias",
    "lstm2.weight",
    "lstm2.bias",
    "proj.weight",
    "proj.bias",
];

/// Width of the preprocessed gradient features.
pub const INPUT_FEATURES: usize = 2;

pub fn tensor_shapes(hidden: usize) -> [(usize, usize); NUM_TENSORS] {
    let gates = 4 * hidden;
    [
        (INPUT_FEATURES + hidden, gates),
        (1, gates),
        (2 * hidden, gates),
        (1, gates),
        (hidden, 1),
        (1, 1),
    ]
}

/// `(tensor index, expected shape, actual shape)` reported by [`L2OParams::from_tensors`].
pub type ShapeMismatch = (usize, (usize, usize), (usize, usize));

#[derive(Debug, Clone, PartialEq)]
pub struct L2OParams {
    hidden: usize,
    pub preprocess_p: f64,
    pub output_scale: f64,
    tensors: [Matrix; NUM_TENSORS],
}

impl L2OParams {
    pub fn zeros(hidden: usize) -> Self {
        assert!(hidden >= 1, "hidden size must be ≥ 1");
        Self {
            hidden,
            preprocess_p: 10.0,
            output_scale: 0.01,
            tensors: tensor_shapes(hidden).map(|(r, c)| Matrix::zeros(r, c)),
        }
    }

    /// Fails with the first tensor whose shape differs from the expected one.
    pub fn from_tensors(
        hidden: usize,
        preprocess_p: f64,
        output_scale: f64,
        tensors: [Matrix; NUM_TENSORS],
    ) -> Result<Self, ShapeMismatch> {
        for (i, (t, s)) in tensors.iter().zip(tensor_shapes(hidden)).enumerate() {
            if t.shape() != s {
                return Err((i, s, t.shape()));
            }
        }
        Ok(Self {
            hidden,
            preprocess_p,
            output_scale,
            tensors,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn tensors(&self) -> &[Matrix; NUM_TENSORS] {
        &self.tensors
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.tensors[i]
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for t in &self.tensors {
            v.extend_from_slice(t.data());
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut at = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
    }

    pub fn with_flat(&self, flat: &[f64]) -> Self {
        let mut p = self.clone();
        p.set_flat(flat);
        p
    }
}

/// Uniform(−1/√fan_in, 1/√fan_in) LSTM weights, forget-gate biases at 1,
/// and a zero read-out so the initial policy emits no update.
pub fn init_l2o(seed: u64, hidden: usize) -> L2OParams {
    let mut phi = L2OParams::zeros(hidden);
    let mut rng = seed::derived_rng(seed, "l2o-init", 0);
    for layer in [0, 2] {
        let fan_in = phi.tensors[layer].rows() as f64;
        let s = 1.0 / fan_in.sqrt();
        for w in phi.tensors[layer].data_mut() {
            *w = rng.random_range(-s..s);
        }
        let bias = &mut phi.tensors[layer + 1];
        for c in hidden..2 * hidden {
            bias.set(0, c, 1.0);
        }
    }
    phi
}

/// Per-coordinate recurrent state, one row per optimizee coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<V> {
    pub h1: V,
    pub c1: V,
    pub h2: V,
    pub c2: V,
}

pub type L2OState = LstmState<Matrix>;

impl L2OState {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        let z = Matrix::zeros(dim, hidden);
        Self {
            h1: z.clone(),
            c1: z.clone(),
            h2: z.clone(),
            c2: z,
        }
    }

    pub fn dim(&self) -> usize {
        self.h1.rows()
    }

    pub fn permute(&self, perm: &[usize]) -> Self {
        Self {
            h1: self.h1.permute_rows(perm),
            c1: self.c1.permute_rows(perm),
            h2: self.h2.permute_rows(perm),
            c2: self.c2.permute_rows(perm),
        }
    }
}

impl<V> LstmState<V> {
    pub fn map<W>(&self, mut f: impl FnMut(&V) -> W) -> LstmState<W> {
        LstmState {
            h1: f(&self.h1),
            c1: f(&self.c1),
            h2: f(&self.h2),
            c2: f(&self.c2),
        }
    }
}

/// Log/sign gradient features: `(ln|g|/p, sign g)` when `|g| ≥ e^{−p}`,
/// otherwise `(−1, e^p g)`.
pub fn preprocess(g: &[f64], p: f64) -> Matrix {
    assert!(p > 0.0, "preprocess constant must be positive");
    let threshold = (-p).exp();
    let scale = p.exp();
    let mut out = Vec::with_capacity(2 * g.len());
    for &gi in g {
        if gi.abs() >= threshold {
            out.push(gi.abs().ln() / p);
            out.push(if gi > 0.0 { 1.0 } else { -1.0 });
        } else {
            out.push(-1.0);
            out.push(scale * gi);
        }
    }
    Matrix::from_vec(g.len(), 2, out)
}

fn lstm_cell<O: Ops>(
    ops: &mut O,
    x: &O::V,
    h: &O::V,
    c: &O::V,
    w: &O::V,
    b: &O::V,
    hidden: usize,
) -> (O::V, O::V) {
    let xh = ops.concat(x, h);
    let z = ops.matmul(&xh, w);
    let z = ops.add_row(&z, b);
    let zi = ops.slice(&z, 0, hidden);
    let zf = ops.slice(&z, hidden, hidden);
    let zg = ops.slice(&z, 2 * hidden, hidden);
    let zo = ops.slice(&z, 3 * hidden, hidden);
    let i = ops.sigmoid(&zi);
    let f = ops.sigmoid(&zf);
    let g = ops.tanh(&zg);
    let o = ops.sigmoid(&zo);
    let fc = ops.mul(&f, c);
    let ig = ops.mul(&i, &g);
    let c_new = ops.add(&fc, &ig);
    let tc = ops.tanh(&c_new);
    let h_new = ops.mul(&o, &tc);
    (h_new, c_new)
}

/// One optimizer step on any backend. `params` are the six tensors in
/// [`TENSOR_NAMES`] order, `features` the preprocessed gradient.
/// Returns the `d x 1` update and the next state.
pub fn forward<O: Ops>(
    ops: &mut O,
    params: &[O::V; NUM_TENSORS],
    hidden: usize,
    output_scale: f64,
    state: &LstmState<O::V>,
    features: &O::V,
) -> (O::V, LstmState<O::V>) {
    let (h1, c1) = lstm_cell(
        ops, features, &state.h1, &state.c1, &params[0], &params[1], hidden,
    );
    let (h2, c2) = lstm_cell(
        ops, &h1, &state.h2, &state.c2, &params[2], &params[3], hidden,
    );
    let out = ops.matmul(&h2, &params[4]);
    let out = ops.add_row(&out, &params[5]);
    let update = ops.scale(&out, output_scale);
    (update, LstmState { h1, c1, h2, c2 })
}

/// Plain (untaped) optimizer over a run of steps; holds the weights once.
pub struct EagerL2O {
    ops: Eager,
    params: [std::rc::Rc<Matrix>; NUM_TENSORS],
    hidden: usize,
    preprocess_p: f64,
    output_scale: f64,
    state: LstmState<std::rc::Rc<Matrix>>,
}

impl EagerL2O {
    pub fn new(phi: &L2OParams, state: &L2OState) -> Self {
        let mut ops = Eager;
        let params = phi.tensors.clone().map(|t| ops.constant(t));
        Self {
            ops,
            params,
            hidden: phi.hidden,
            preprocess_p: phi.preprocess_p,
            output_scale: phi.output_scale,
            state: state.map(|m| std::rc::Rc::new(m.clone())),
        }
    }

    pub fn step(&mut self, g: &[f64]) -> Result<Vec<f64>, DimensionMismatch> {
        let dim = self.state.h1.rows();
        if g.len() != dim {
            return Err(DimensionMismatch::Mismatch {
                expected: dim,
                got: g.len(),
            });
        }
        let x = self.ops.constant(preprocess(g, self.preprocess_p));
        let (u, next) = forward(
            &mut self.ops,
            &self.params,
            self.hidden,
            self.output_scale,
            &self.state,
            &x,
        );
        self.state = next;
        Ok(u.data().to_vec())
    }

    pub fn state(&self) -> L2OState {
        self.state.map(|m| (**m).clone())
    }
}

/// One step of the learned optimizer without recording a tape.
pub fn l2o_step(
    phi: &L2OParams,
    state: &L2OState,
    g: &[f64],
) -> Result<(Vec<f64>, L2OState), DimensionMismatch> {
    let mut opt = EagerL2O::new(phi, state);
    let u = opt.step(g)?;
    Ok((u, opt.state()))
}
