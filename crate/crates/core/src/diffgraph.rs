//! Minimal reverse-mode automatic differentiation over dense rank-≤2
//! tensors.
//!
//! A [`Graph`] is an append-only arena of nodes; node ids strictly increase
//! in creation order, so reverse id order is a valid topological order and
//! `backward` visits each node exactly once. Gradients accumulate across
//! `backward` calls until [`Graph::zero_grads`].
//!
//! The op set is exactly what the model and losses need: linear layers,
//! relu, uniform graph mixing, mean pooling, softmax, cross entropy, the
//! gradient reversal layer, weighted scalar combination, and the logic
//! penalty (whose backward rule comes from the analytic formula-loss
//! gradients).

use std::path::Path;
use std::sync::Arc;

use crate::formula::{ConstraintSet, LogicError};
use crate::loss::{logic_loss, logic_loss_grad};
use crate::scalar::Scalar;
use crate::semantics::{Semantics, TruthAssignment};
use thiserror::Error;

const LOG_CLAMP_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("backward requires a scalar loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn shape_err(op: &'static str, details: String) -> GraphError {
    GraphError::ShapeMismatch { op, details }
}

/// Dense row-major matrix; vectors are 1×k, scalars 1×1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Tensor { rows, cols, data }
    }

    pub fn scalar(x: T) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![x] }
    }

    pub fn row(data: Vec<T>) -> Self {
        Tensor { rows: 1, cols: data.len(), data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, x: T) {
        self.data[r * self.cols + c] = x;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn item(&self) -> T {
        assert!(self.is_scalar(), "item() on non-scalar tensor");
        self.data[0]
    }

    fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// self += alpha * other
    pub fn axpy(&mut self, alpha: T, other: &Tensor<T>) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    fn fill_zero(&mut self) {
        for x in &mut self.data {
            *x = T::zero();
        }
    }
}

fn mat_mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(a.cols, b.rows);
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == T::zero() {
                continue;
            }
            for j in 0..b.cols {
                out.data[i * b.cols + j] += aik * b.data[k * b.cols + j];
            }
        }
    }
    out
}

/// aᵀ · b
fn mat_mul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(a.rows, b.rows);
    let mut out = Tensor::zeros(a.cols, b.cols);
    for r in 0..a.rows {
        for i in 0..a.cols {
            let ari = a.data[r * a.cols + i];
            if ari == T::zero() {
                continue;
            }
            for j in 0..b.cols {
                out.data[i * b.cols + j] += ari * b.data[r * b.cols + j];
            }
        }
    }
    out
}

/// a · bᵀ
fn mat_mul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(a.cols, b.cols);
    let mut out = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        for j in 0..b.rows {
            let mut acc = T::zero();
            for k in 0..a.cols {
                acc += a.data[i * a.cols + k] * b.data[j * b.cols + k];
            }
            out.data[i * b.rows + j] = acc;
        }
    }
    out
}

/// Node handle. Ids strictly increase in creation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Value(usize);

impl Value {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Linear { x: Value, w: Value, b: Value },
    MatMul { x: Value, w: Value },
    Relu { x: Value },
    RowMeanBroadcast { x: Value },
    MeanPool { x: Value },
    Softmax { x: Value },
    CrossEntropy { probs: Value, label: usize },
    Grl { x: Value, lambda: T },
    Combine { terms: Vec<(T, Value)> },
    LogicPenalty { verb: Value, noun: Value, set: Arc<ConstraintSet>, sem: Semantics },
}

struct Node<T> {
    data: Tensor<T>,
    grad: Tensor<T>,
    op: Op<T>,
}

/// Append-only computation graph. Single-threaded during construction and
/// backward; distinct graphs are independent.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Tensor<T>, op: Op<T>) -> Value {
        let grad = Tensor::zeros(data.rows, data.cols);
        self.nodes.push(Node { data, grad, op });
        Value(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, data: Tensor<T>) -> Value {
        self.push(data, Op::Leaf)
    }

    pub fn data(&self, v: Value) -> &Tensor<T> {
        &self.nodes[v.0].data
    }

    pub fn grad(&self, v: Value) -> &Tensor<T> {
        &self.nodes[v.0].grad
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad.fill_zero();
        }
    }

    /// y = x·w + bias (bias broadcast over rows).
    pub fn linear(&mut self, x: Value, w: Value, bias: Value) -> Result<Value, GraphError> {
        let (xd, wd, bd) = (&self.nodes[x.0].data, &self.nodes[w.0].data, &self.nodes[bias.0].data);
        if xd.cols != wd.rows {
            return Err(shape_err("linear", format!("x is {:?}, w is {:?}", xd.shape(), wd.shape())));
        }
        if bd.rows != 1 || bd.cols != wd.cols {
            return Err(shape_err("linear", format!("bias is {:?}, expected (1, {})", bd.shape(), wd.cols)));
        }
        let mut out = mat_mul(xd, wd);
        for r in 0..out.rows {
            for c in 0..out.cols {
                let b = bd.data[c];
                out.data[r * out.cols + c] += b;
            }
        }
        Ok(self.push(out, Op::Linear { x, w, b: bias }))
    }

    /// y = x·w (no bias).
    pub fn matmul(&mut self, x: Value, w: Value) -> Result<Value, GraphError> {
        let (xd, wd) = (&self.nodes[x.0].data, &self.nodes[w.0].data);
        if xd.cols != wd.rows {
            return Err(shape_err("matmul", format!("x is {:?}, w is {:?}", xd.shape(), wd.shape())));
        }
        let out = mat_mul(xd, wd);
        Ok(self.push(out, Op::MatMul { x, w }))
    }

    pub fn relu(&mut self, x: Value) -> Value {
        let xd = &self.nodes[x.0].data;
        let data = xd.data.iter().map(|&v| v.max(T::zero())).collect();
        let out = Tensor::from_vec(xd.rows, xd.cols, data);
        self.push(out, Op::Relu { x })
    }

    /// Every output row is the mean of the input rows: the uniform
    /// fully-connected adjacency A (all entries 1/T) applied to x.
    pub fn row_mean_broadcast(&mut self, x: Value) -> Value {
        let xd = &self.nodes[x.0].data;
        let mean = column_means(xd);
        let mut out = Tensor::zeros(xd.rows, xd.cols);
        for r in 0..xd.rows {
            out.data[r * xd.cols..(r + 1) * xd.cols].copy_from_slice(&mean);
        }
        self.push(out, Op::RowMeanBroadcast { x })
    }

    /// [T×d] → [1×d] column means.
    pub fn mean_pool(&mut self, x: Value) -> Value {
        let xd = &self.nodes[x.0].data;
        let mean = column_means(xd);
        let out = Tensor::row(mean);
        self.push(out, Op::MeanPool { x })
    }

    /// Row-wise stable softmax.
    pub fn softmax(&mut self, x: Value) -> Value {
        let xd = &self.nodes[x.0].data;
        let mut out = Tensor::zeros(xd.rows, xd.cols);
        for r in 0..xd.rows {
            let row = &xd.data[r * xd.cols..(r + 1) * xd.cols];
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut denom = T::zero();
            for (c, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                out.data[r * xd.cols + c] = e;
                denom += e;
            }
            for c in 0..xd.cols {
                out.data[r * xd.cols + c] = out.data[r * xd.cols + c] / denom;
            }
        }
        self.push(out, Op::Softmax { x })
    }

    /// -log(max(probs[label], 1e-12)) for a 1×k probability row.
    pub fn cross_entropy(&mut self, probs: Value, label: usize) -> Result<Value, GraphError> {
        let pd = &self.nodes[probs.0].data;
        if pd.rows != 1 {
            return Err(shape_err("cross_entropy", format!("probs is {:?}, expected a 1×k row", pd.shape())));
        }
        if label >= pd.cols {
            return Err(shape_err("cross_entropy", format!("label {label} out of range for {} classes", pd.cols)));
        }
        let eps = T::from_f64_lossy(LOG_CLAMP_EPS);
        let loss = -(pd.data[label].max(eps).ln());
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { probs, label }))
    }

    /// Gradient reversal: identity forward, gradient scaled by -lambda.
    pub fn grl(&mut self, x: Value, lambda: T) -> Value {
        let out = self.nodes[x.0].data.clone();
        self.push(out, Op::Grl { x, lambda })
    }

    /// Weighted sum of scalar values.
    pub fn scalar_combine(&mut self, terms: &[(T, Value)]) -> Result<Value, GraphError> {
        if terms.is_empty() {
            return Err(shape_err("scalar_combine", "no terms".into()));
        }
        let mut acc = T::zero();
        for &(w, v) in terms {
            let d = &self.nodes[v.0].data;
            if !d.is_scalar() {
                return Err(shape_err("scalar_combine", format!("term {} is {:?}, expected 1×1", v.0, d.shape())));
            }
            acc += w * d.data[0];
        }
        Ok(self.push(Tensor::scalar(acc), Op::Combine { terms: terms.to_vec() }))
    }

    /// Logic loss of a constraint set on (verb, noun) probability rows.
    /// Backward uses the analytic formula-loss gradients.
    pub fn logic_penalty(
        &mut self,
        verb: Value,
        noun: Value,
        set: Arc<ConstraintSet>,
        sem: Semantics,
    ) -> Result<Value, GraphError> {
        let t = self.assignment_from(verb, noun)?;
        let loss = logic_loss(&set, &t, &sem)?;
        Ok(self.push(Tensor::scalar(loss), Op::LogicPenalty { verb, noun, set, sem }))
    }

    fn assignment_from(&self, verb: Value, noun: Value) -> Result<TruthAssignment<T>, GraphError> {
        let vd = &self.nodes[verb.0].data;
        let nd = &self.nodes[noun.0].data;
        if vd.rows != 1 || nd.rows != 1 {
            return Err(shape_err(
                "logic_penalty",
                format!("verb is {:?}, noun is {:?}, expected 1×k rows", vd.shape(), nd.shape()),
            ));
        }
        Ok(TruthAssignment::new(vd.data.clone(), nd.data.clone()))
    }

    /// Reverse pass from a scalar loss. Adjoints are computed in a scratch
    /// buffer and then added into the persistent grads, so repeated calls
    /// accumulate.
    pub fn backward(&mut self, loss: Value) -> Result<(), GraphError> {
        let ld = &self.nodes[loss.0].data;
        if !ld.is_scalar() {
            return Err(GraphError::NonScalarLoss { rows: ld.rows, cols: ld.cols });
        }
        let n = loss.0 + 1;
        let mut adj: Vec<Tensor<T>> = (0..n)
            .map(|i| Tensor::zeros(self.nodes[i].data.rows, self.nodes[i].data.cols))
            .collect();
        let mut touched = vec![false; n];
        adj[loss.0].data[0] = T::one();
        touched[loss.0] = true;

        for id in (0..n).rev() {
            if !touched[id] {
                continue;
            }
            let a = std::mem::replace(&mut adj[id], Tensor::zeros(0, 0));
            self.nodes[id].grad.add_assign(&a);
            self.propagate(id, &a, &mut adj, &mut touched)?;
        }
        Ok(())
    }

    fn propagate(
        &self,
        id: usize,
        a: &Tensor<T>,
        adj: &mut [Tensor<T>],
        touched: &mut [bool],
    ) -> Result<(), GraphError> {
        let add = |v: Value, contribution: Tensor<T>, adj: &mut [Tensor<T>], touched: &mut [bool]| {
            adj[v.0].add_assign(&contribution);
            touched[v.0] = true;
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xd = &self.nodes[x.0].data;
                let wd = &self.nodes[w.0].data;
                add(*x, mat_mul_nt(a, wd), adj, touched);
                add(*w, mat_mul_tn(xd, a), adj, touched);
                let mut db = Tensor::zeros(1, a.cols);
                for r in 0..a.rows {
                    for c in 0..a.cols {
                        db.data[c] += a.data[r * a.cols + c];
                    }
                }
                add(*b, db, adj, touched);
            }
            Op::MatMul { x, w } => {
                let xd = &self.nodes[x.0].data;
                let wd = &self.nodes[w.0].data;
                add(*x, mat_mul_nt(a, wd), adj, touched);
                add(*w, mat_mul_tn(xd, a), adj, touched);
            }
            Op::Relu { x } => {
                let xd = &self.nodes[x.0].data;
                let mut dx = Tensor::zeros(xd.rows, xd.cols);
                for (i, &v) in xd.data.iter().enumerate() {
                    if v > T::zero() {
                        dx.data[i] = a.data[i];
                    }
                }
                add(*x, dx, adj, touched);
            }
            Op::RowMeanBroadcast { x } => {
                let xd = &self.nodes[x.0].data;
                let t = T::from_f64_lossy(xd.rows as f64);
                let mut colsum = vec![T::zero(); xd.cols];
                for r in 0..a.rows {
                    for c in 0..a.cols {
                        colsum[c] += a.data[r * a.cols + c];
                    }
                }
                let mut dx = Tensor::zeros(xd.rows, xd.cols);
                for r in 0..xd.rows {
                    for c in 0..xd.cols {
                        dx.data[r * xd.cols + c] = colsum[c] / t;
                    }
                }
                add(*x, dx, adj, touched);
            }
            Op::MeanPool { x } => {
                let xd = &self.nodes[x.0].data;
                let t = T::from_f64_lossy(xd.rows as f64);
                let mut dx = Tensor::zeros(xd.rows, xd.cols);
                for r in 0..xd.rows {
                    for c in 0..xd.cols {
                        dx.data[r * xd.cols + c] = a.data[c] / t;
                    }
                }
                add(*x, dx, adj, touched);
            }
            Op::Softmax { x } => {
                let pd = &self.nodes[id].data;
                let mut dx = Tensor::zeros(pd.rows, pd.cols);
                for r in 0..pd.rows {
                    let mut dot = T::zero();
                    for c in 0..pd.cols {
                        dot += a.data[r * pd.cols + c] * pd.data[r * pd.cols + c];
                    }
                    for c in 0..pd.cols {
                        let p = pd.data[r * pd.cols + c];
                        dx.data[r * pd.cols + c] = p * (a.data[r * pd.cols + c] - dot);
                    }
                }
                add(*x, dx, adj, touched);
            }
            Op::CrossEntropy { probs, label } => {
                let pd = &self.nodes[probs.0].data;
                let eps = T::from_f64_lossy(LOG_CLAMP_EPS);
                let mut dp = Tensor::zeros(pd.rows, pd.cols);
                let p = pd.data[*label];
                if p > eps {
                    dp.data[*label] = -a.data[0] / p;
                }
                add(*probs, dp, adj, touched);
            }
            Op::Grl { x, lambda } => {
                let mut dx = a.clone();
                for v in &mut dx.data {
                    *v = -*lambda * *v;
                }
                add(*x, dx, adj, touched);
            }
            Op::Combine { terms } => {
                for &(w, v) in terms {
                    add(v, Tensor::scalar(w * a.data[0]), adj, touched);
                }
            }
            Op::LogicPenalty { verb, noun, set, sem } => {
                let t = self.assignment_from(*verb, *noun)?;
                let (dv, dn) = logic_loss_grad(set, &t, sem)?;
                let scale = a.data[0];
                let dverb = Tensor::row(dv.into_iter().map(|g| g * scale).collect());
                let dnoun = Tensor::row(dn.into_iter().map(|g| g * scale).collect());
                add(*verb, dverb, adj, touched);
                add(*noun, dnoun, adj, touched);
            }
        }
        Ok(())
    }
}

fn column_means<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let t = T::from_f64_lossy(x.rows as f64);
    let mut mean = vec![T::zero(); x.cols];
    for r in 0..x.rows {
        for c in 0..x.cols {
            mean[c] += x.data[r * x.cols + c];
        }
    }
    for m in &mut mean {
        *m = *m / t;
    }
    mean
}

/// Named tensor with a trainable flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

/// Ordered collection of uniquely named parameters; the checkpoint unit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn push(&mut self, name: &str, tensor: Tensor<T>, trainable: bool) -> Result<(), GraphError> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(GraphError::DuplicateParam(name.to_string()));
        }
        self.params.push(Parameter { name: name.to_string(), tensor, trainable });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Checkpoint JSON: map name → {shape, row-major data}. Keys are
    /// sorted, floats use shortest round-trip formatting, so save → load →
    /// save is byte-identical and values are bit-exact.
    pub fn to_json_string(&self) -> String {
        let mut map = serde_json::Map::new();
        for p in &self.params {
            let data: Vec<serde_json::Value> = p
                .tensor
                .data()
                .iter()
                .map(|&x| serde_json::json!(x.to_f64_lossy()))
                .collect();
            map.insert(
                p.name.clone(),
                serde_json::json!({
                    "shape": [p.tensor.rows(), p.tensor.cols()],
                    "data": data,
                }),
            );
        }
        serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("checkpoint serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self, GraphError> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| GraphError::Checkpoint(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| GraphError::Checkpoint("expected a JSON object".into()))?;
        let mut set = ParamSet::new();
        for (name, entry) in obj {
            let shape = entry
                .get("shape")
                .and_then(|s| s.as_array())
                .ok_or_else(|| GraphError::Checkpoint(format!("`{name}` missing shape")))?;
            if shape.len() != 2 {
                return Err(GraphError::Checkpoint(format!("`{name}` shape must be [rows, cols]")));
            }
            let rows = shape[0].as_u64().ok_or_else(|| GraphError::Checkpoint(format!("`{name}` bad rows")))? as usize;
            let cols = shape[1].as_u64().ok_or_else(|| GraphError::Checkpoint(format!("`{name}` bad cols")))? as usize;
            let data = entry
                .get("data")
                .and_then(|d| d.as_array())
                .ok_or_else(|| GraphError::Checkpoint(format!("`{name}` missing data")))?;
            if data.len() != rows * cols {
                return Err(GraphError::Checkpoint(format!(
                    "`{name}` expects {} values, found {}",
                    rows * cols,
                    data.len()
                )));
            }
            let mut values = Vec::with_capacity(data.len());
            for v in data {
                let f = v
                    .as_f64()
                    .ok_or_else(|| GraphError::Checkpoint(format!("`{name}` non-numeric entry")))?;
                values.push(T::from_f64_lossy(f));
            }
            set.push(name, Tensor::from_vec(rows, cols, values), true)?;
        }
        Ok(set)
    }

    pub fn save_json(&self, path: &Path) -> Result<(), GraphError> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, GraphError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}
