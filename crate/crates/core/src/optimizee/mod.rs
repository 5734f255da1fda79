//! Problem families ("optimizees") the learned optimizer trains and is
//! evaluated on.
//!
//! An [`OptimizeeInstance`] is a frozen problem (quadratic coefficients or a
//! labelled dataset) plus a seeded mini-batch stream. Loss evaluation is pure;
//! only [`OptimizeeInstance::next_batch`] advances state.

pub mod idx;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::autodiff::{sigmoid, Matrix};
use crate::error::OptimizeeError;
use crate::seed::{self, Rng};

/// Environment variable naming the directory with MNIST IDX files.
pub const DATA_ROOT_ENV: &str = "L2O_DATA_ROOT";
pub const MNIST_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_LABELS: &str = "train-labels-idx1-ubyte";

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// `f(θ) = ‖Wθ − y‖² / n` with Gaussian `W` (`n x dim`) and `y`.
    Quadratic { dim: usize, rows: usize },
    /// Linear logistic regression on two Gaussian blobs.
    LogisticBlobs { input_dim: usize, points: usize },
    /// One sigmoid hidden layer, softmax cross-entropy, two Gaussian blobs.
    TinyMlp {
        input_dim: usize,
        hidden: usize,
        points: usize,
    },
    /// One sigmoid hidden layer on MNIST (10 classes).
    MnistMlp {
        hidden: usize,
        root: Option<PathBuf>,
        limit: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeeSpec {
    pub family: Family,
    pub batch_size: usize,
    pub init_std: f64,
}

impl OptimizeeSpec {
    pub fn quadratic(dim: usize) -> Self {
        Self {
            family: Family::Quadratic { dim, rows: dim },
            batch_size: 128,
            init_std: 0.01,
        }
    }

    pub fn logistic_blobs() -> Self {
        Self {
            family: Family::LogisticBlobs {
                input_dim: 2,
                points: 512,
            },
            batch_size: 128,
            init_std: 0.01,
        }
    }

    /// Desk-scale default meta-training family: 2-d blobs, 8 sigmoid units.
    pub fn tiny_mlp() -> Self {
        Self {
            family: Family::TinyMlp {
                input_dim: 2,
                hidden: 8,
                points: 512,
            },
            batch_size: 128,
            init_std: 0.01,
        }
    }

    pub fn mnist_mlp(root: Option<PathBuf>) -> Self {
        Self {
            family: Family::MnistMlp {
                hidden: 20,
                root,
                limit: None,
            },
            batch_size: 128,
            init_std: 0.01,
        }
    }

    pub fn validate(&self) -> Result<(), OptimizeeError> {
        if self.batch_size == 0 {
            return Err(OptimizeeError::InvalidSpec("batch size must be ≥ 1".into()));
        }
        if !(self.init_std > 0.0) {
            return Err(OptimizeeError::InvalidSpec("init std must be > 0".into()));
        }
        let ok = match &self.family {
            Family::Quadratic { dim, rows } => *dim > 0 && *rows > 0,
            Family::LogisticBlobs { input_dim, points } => *input_dim > 0 && *points > 0,
            Family::TinyMlp {
                input_dim,
                hidden,
                points,
            } => *input_dim > 0 && *hidden > 0 && *points > 0,
            Family::MnistMlp { hidden, .. } => *hidden > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(OptimizeeError::InvalidSpec("sizes must be ≥ 1".into()))
        }
    }

    pub fn name(&self) -> &'static str {
        match self.family {
            Family::Quadratic { .. } => "quadratic",
            Family::LogisticBlobs { .. } => "logistic",
            Family::TinyMlp { .. } => "tiny-mlp",
            Family::MnistMlp { .. } => "mnist-mlp",
        }
    }
}

/// Labelled data shared between instances of a dataset-backed family.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Problem {
    Quadratic { w: Matrix, y: Vec<f64> },
    Logistic { data: Arc<Dataset> },
    Mlp { data: Arc<Dataset>, hidden: usize },
}

/// Which examples a loss evaluation sees.
#[derive(Debug, Clone, PartialEq)]
pub enum Batch {
    Full,
    Indices(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct OptimizeeInstance {
    spec: OptimizeeSpec,
    problem: Problem,
    batch_rng: Rng,
    order: Vec<usize>,
    cursor: usize,
}

fn blobs(input_dim: usize, points: usize, rng: &mut Rng) -> Dataset {
    let centers: Vec<Vec<f64>> = (0..2)
        .map(|_| {
            (0..input_dim)
                .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut inputs = Vec::with_capacity(points * input_dim);
    let mut labels = Vec::with_capacity(points);
    for p in 0..points {
        let class = p % 2;
        for &c in &centers[class] {
            inputs.push(c + rng.sample::<f64, _>(StandardNormal));
        }
        labels.push(class);
    }
    Dataset {
        inputs: Matrix::from_vec(points, input_dim, inputs),
        labels,
        classes: 2,
    }
}

fn mnist_cache() -> &'static Mutex<HashMap<PathBuf, Arc<Dataset>>> {
    static CACHE: OnceLock<Mutex<HashMap<PathBuf, Arc<Dataset>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn load_mnist(root: &Path, limit: Option<usize>) -> Result<Arc<Dataset>, OptimizeeError> {
    let key = root.join(format!("limit-{limit:?}"));
    if let Some(d) = mnist_cache()
        .lock()
        .expect("mnist cache poisoned")
        .get(&key)
    {
        return Ok(d.clone());
    }
    let img_path = root.join(MNIST_IMAGES);
    let lab_path = root.join(MNIST_LABELS);
    if !img_path.exists() || !lab_path.exists() {
        return Err(OptimizeeError::DatasetMissing(format!(
            "expected {} and {} under {}",
            MNIST_IMAGES,
            MNIST_LABELS,
            root.display()
        )));
    }
    let images = idx::read_images(&img_path)?;
    let labels = idx::read_labels(&lab_path)?;
    if labels.len() != images.count {
        return Err(OptimizeeError::Idx {
            path: lab_path,
            reason: "label count differs from image count".into(),
        });
    }
    let n = limit.map_or(images.count, |l| l.min(images.count));
    let width = images.rows * images.cols;
    let data = Arc::new(Dataset {
        inputs: Matrix::from_vec(n, width, images.pixels[..n * width].to_vec()),
        labels: labels[..n].iter().map(|&l| usize::from(l)).collect(),
        classes: 10,
    });
    mnist_cache()
        .lock()
        .expect("mnist cache poisoned")
        .insert(key, data.clone());
    Ok(data)
}

/// Draws a problem instance; a pure function of `(spec, seed)`.
pub fn sample_instance(
    spec: &OptimizeeSpec,
    seed: u64,
) -> Result<OptimizeeInstance, OptimizeeError> {
    spec.validate()?;
    let mut rng = seed::derived_rng(seed, "problem", 0);
    let problem = match &spec.family {
        Family::Quadratic { dim, rows } => {
            let w: Vec<f64> = (0..rows * dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let y: Vec<f64> = (0..*rows).map(|_| rng.sample(StandardNormal)).collect();
            Problem::Quadratic {
                w: Matrix::from_vec(*rows, *dim, w),
                y,
            }
        }
        Family::LogisticBlobs { input_dim, points } => Problem::Logistic {
            data: Arc::new(blobs(*input_dim, *points, &mut rng)),
        },
        Family::TinyMlp {
            input_dim,
            hidden,
            points,
        } => Problem::Mlp {
            data: Arc::new(blobs(*input_dim, *points, &mut rng)),
            hidden: *hidden,
        },
        Family::MnistMlp {
            hidden,
            root,
            limit,
        } => {
            let root = match root {
                Some(r) => r.clone(),
                None => std::env::var_os(DATA_ROOT_ENV)
                    .map(PathBuf::from)
                    .ok_or_else(|| {
                        OptimizeeError::DatasetMissing(format!(
                            "set {DATA_ROOT_ENV} to a directory holding MNIST IDX files"
                        ))
                    })?,
            };
            Problem::Mlp {
                data: load_mnist(&root, *limit)?,
                hidden: *hidden,
            }
        }
    };
    Ok(OptimizeeInstance::new(spec.clone(), problem, seed))
}

impl OptimizeeInstance {
    fn new(spec: OptimizeeSpec, problem: Problem, seed: u64) -> Self {
        let mut inst = Self {
            spec,
            problem,
            batch_rng: seed::derived_rng(seed, "batches", 0),
            order: Vec::new(),
            cursor: 0,
        };
        inst.order = (0..inst.examples()).collect();
        inst.cursor = inst.order.len();
        inst
    }

    /// Quadratic `‖Wθ − y‖² / n` with caller-supplied coefficients.
    pub fn quadratic_fixture(w: Matrix, y: Vec<f64>) -> Self {
        assert_eq!(w.rows(), y.len());
        let spec = OptimizeeSpec {
            family: Family::Quadratic {
                dim: w.cols(),
                rows: w.rows(),
            },
            batch_size: w.rows(),
            init_std: 0.01,
        };
        Self::new(spec, Problem::Quadratic { w, y }, 0)
    }

    /// Logistic regression on caller-supplied points with 0/1 labels.
    pub fn logistic_fixture(inputs: Matrix, labels: Vec<usize>, batch_size: usize) -> Self {
        let spec = OptimizeeSpec {
            family: Family::LogisticBlobs {
                input_dim: inputs.cols(),
                points: inputs.rows(),
            },
            batch_size,
            init_std: 0.01,
        };
        let data = Arc::new(Dataset {
            inputs,
            labels,
            classes: 2,
        });
        Self::new(spec, Problem::Logistic { data }, 0)
    }

    pub fn spec(&self) -> &OptimizeeSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        match &self.problem {
            Problem::Quadratic { w, .. } => w.cols(),
            Problem::Logistic { data } => data.inputs.cols() + 1,
            Problem::Mlp { data, hidden } => {
                let (i, h, c) = (data.inputs.cols(), *hidden, data.classes);
                i * h + h + h * c + c
            }
        }
    }

    /// Number of examples a full batch covers (rows for quadratics).
    pub fn examples(&self) -> usize {
        match &self.problem {
            Problem::Quadratic { y, .. } => y.len(),
            Problem::Logistic { data } | Problem::Mlp { data, .. } => data.labels.len(),
        }
    }

    pub fn quadratic_coefficients(&self) -> Option<(&Matrix, &[f64])> {
        match &self.problem {
            Problem::Quadratic { w, y } => Some((w, y)),
            _ => None,
        }
    }

    pub fn dataset(&self) -> Option<&Dataset> {
        match &self.problem {
            Problem::Quadratic { .. } => None,
            Problem::Logistic { data } | Problem::Mlp { data, .. } => Some(data),
        }
    }

    /// Reseeds the batch stream and starts a fresh shuffled cycle.
    pub fn reseed_batches(&mut self, seed: u64) {
        self.batch_rng = seed::rng(seed);
        self.cursor = self.order.len();
    }

    /// The next mini-batch. Quadratics are full-batch and always get
    /// [`Batch::Full`]; datasets cycle through a reshuffled partition.
    pub fn next_batch(&mut self) -> Batch {
        if matches!(self.problem, Problem::Quadratic { .. }) {
            return Batch::Full;
        }
        let n = self.order.len();
        if self.cursor >= n {
            self.order.shuffle(&mut self.batch_rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.spec.batch_size).min(n);
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        Batch::Indices(batch)
    }

    /// Loss and gradient at `theta` on `batch`. Never mutates the instance.
    pub fn loss_and_grad(&self, theta: &[f64], batch: &Batch) -> (f64, Vec<f64>) {
        assert_eq!(theta.len(), self.dim(), "parameter dimension mismatch");
        match &self.problem {
            Problem::Quadratic { w, y } => quadratic_loss_grad(w, y, theta),
            Problem::Logistic { data } => {
                let (x, labels) = gather(data, batch);
                logistic_loss_grad(&x, &labels, theta)
            }
            Problem::Mlp { data, hidden } => {
                let (x, labels) = gather(data, batch);
                mlp_loss_grad(&x, &labels, data.classes, *hidden, theta)
            }
        }
    }

    pub fn loss(&self, theta: &[f64], batch: &Batch) -> f64 {
        self.loss_and_grad(theta, batch).0
    }
}

/// `θ ~ N(0, init_std²)` i.i.d.; deterministic in `seed`.
pub fn init_params(inst: &OptimizeeInstance, seed: u64) -> Vec<f64> {
    let mut rng = seed::derived_rng(seed, "init", 0);
    let normal = Normal::new(0.0, inst.spec.init_std).expect("init std validated positive");
    (0..inst.dim()).map(|_| normal.sample(&mut rng)).collect()
}

fn gather(data: &Dataset, batch: &Batch) -> (Matrix, Vec<usize>) {
    match batch {
        Batch::Full => (data.inputs.clone(), data.labels.clone()),
        Batch::Indices(idx) => {
            let cols = data.inputs.cols();
            let mut x = Vec::with_capacity(idx.len() * cols);
            for &i in idx {
                x.extend_from_slice(data.inputs.row(i));
            }
            (
                Matrix::from_vec(idx.len(), cols, x),
                idx.iter().map(|&i| data.labels[i]).collect(),
            )
        }
    }
}

fn quadratic_loss_grad(w: &Matrix, y: &[f64], theta: &[f64]) -> (f64, Vec<f64>) {
    let n = y.len() as f64;
    let wt = w.matmul(&Matrix::column(theta.to_vec()));
    let resid: Vec<f64> = wt.data().iter().zip(y).map(|(a, b)| a - b).collect();
    let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;
    let grad = w
        .transpose_lhs_matmul(&Matrix::column(resid))
        .into_vec()
        .into_iter()
        .map(|g| 2.0 * g / n)
        .collect();
    (loss, grad)
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic_loss_grad(x: &Matrix, labels: &[usize], theta: &[f64]) -> (f64, Vec<f64>) {
    let d = x.cols();
    let (w, b) = (&theta[..d], theta[d]);
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for (r, &label) in labels.iter().enumerate() {
        let row = x.row(r);
        let z = row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
        let sign = if label == 1 { 1.0 } else { -1.0 };
        loss += softplus(-sign * z);
        // d/dz softplus(-s z) = -s σ(-s z)
        let dz = -sign * sigmoid(-sign * z) / n;
        for (g, a) in grad[..d].iter_mut().zip(row) {
            *g += dz * a;
        }
        grad[d] += dz;
    }
    (loss / n, grad)
}

fn mlp_loss_grad(
    x: &Matrix,
    labels: &[usize],
    classes: usize,
    hidden: usize,
    theta: &[f64],
) -> (f64, Vec<f64>) {
    let i = x.cols();
    let (h, c) = (hidden, classes);
    let (o_w1, o_b1, o_w2, o_b2) = (0, i * h, i * h + h, i * h + h + h * c);
    let w1 = Matrix::from_vec(i, h, theta[o_w1..o_b1].to_vec());
    let b1 = Matrix::from_vec(1, h, theta[o_b1..o_w2].to_vec());
    let w2 = Matrix::from_vec(h, c, theta[o_w2..o_b2].to_vec());
    let b2 = Matrix::from_vec(1, c, theta[o_b2..].to_vec());

    let act = x.matmul(&w1).add_row(&b1).map(sigmoid);
    let logits = act.matmul(&w2).add_row(&b2);
    let n = labels.len() as f64;

    let mut loss = 0.0;
    let mut dlogits = Matrix::zeros(labels.len(), c);
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        for (k, &z) in row.iter().enumerate() {
            let p = (z - lse).exp();
            let target = if k == label { 1.0 } else { 0.0 };
            dlogits.set(r, k, (p - target) / n);
        }
    }
    let dw2 = act.transpose_lhs_matmul(&dlogits);
    let db2 = dlogits.sum_rows();
    let dact = dlogits.matmul_transpose_rhs(&w2);
    let dpre = dact.zip_map(&act, |g, a| g * a * (1.0 - a));
    let dw1 = x.transpose_lhs_matmul(&dpre);
    let db1 = dpre.sum_rows();

    let mut grad = Vec::with_capacity(theta.len());
    grad.extend_from_slice(dw1.data());
    grad.extend_from_slice(db1.data());
    grad.extend_from_slice(dw2.data());
    grad.extend_from_slice(db2.data());
    (loss / n, grad)
}
