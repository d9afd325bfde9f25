//! Reverse-mode differentiation over a fixed primitive set.
//!
//! The tape records matrix-valued nodes (vectors are single-column matrices,
//! scalars are 1x1) with eagerly computed forward values, and is rebuilt for
//! every batch. Parameters live in a flat vector with a named slice index;
//! leaves reference slices, and the backward sweep accumulates adjoints into
//! a gradient of the full vector, zeroing frozen slices.
//!
//! Baseline components participate through a dedicated primitive whose
//! adjoint applies the component's analytic Jacobians, so the same component
//! serves both plain evaluation and training.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::model::Baseline;

/// One named slice of the flat parameter vector.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }
}

/// Flat parameter vector with a name -> (offset, shape, trainable) index.
/// Slices are disjoint and cover the vector exactly.
#[derive(Debug, Clone, Default)]
pub struct ParamVector {
    pub data: Vec<f64>,
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, usize>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a matrix-shaped slice (row-major).
    pub fn push_matrix(&mut self, name: &str, value: &Array2<f64>, trainable: bool) {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter slice {name}"
        );
        let offset = self.data.len();
        self.data.extend(value.iter().copied());
        self.by_name.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            offset,
            rows: value.nrows(),
            cols: value.ncols(),
            trainable,
        });
    }

    /// Appends a vector-shaped slice (stored as a single column).
    pub fn push_vector(&mut self, name: &str, value: &Array1<f64>, trainable: bool) {
        let m = value.view().insert_axis(Axis(1)).to_owned();
        self.push_matrix(name, &m, trainable);
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry> {
        self.by_name
            .get(name)
            .map(|i| &self.entries[*i])
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Materializes a named slice as a matrix.
    pub fn matrix(&self, name: &str) -> Result<Array2<f64>> {
        let e = self.entry(name)?;
        Ok(Array2::from_shape_vec(
            (e.rows, e.cols),
            self.data[e.offset..e.offset + e.len()].to_vec(),
        )
        .expect("entry shape"))
    }

    /// Materializes a named slice as a vector (column layout).
    pub fn vector(&self, name: &str) -> Result<Array1<f64>> {
        let e = self.entry(name)?;
        Ok(Array1::from(
            self.data[e.offset..e.offset + e.len()].to_vec(),
        ))
    }

    pub fn set_slice(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let e = self.entry(name)?.clone();
        assert_eq!(values.len(), e.len(), "slice length for {name}");
        self.data[e.offset..e.offset + e.len()].copy_from_slice(values);
        Ok(())
    }

    pub fn set_trainable(&mut self, name: &str, flag: bool) -> Result<()> {
        let idx = *self
            .by_name
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        self.entries[idx].trainable = flag;
        Ok(())
    }

    /// Per-coordinate trainability mask.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.data.len()];
        for e in &self.entries {
            if e.trainable {
                for m in mask.iter_mut().skip(e.offset).take(e.len()) {
                    *m = true;
                }
            }
        }
        mask
    }

    /// Zeroes the coordinates of frozen slices in `grad`.
    pub fn zero_frozen(&self, grad: &mut [f64]) {
        for e in &self.entries {
            if !e.trainable {
                for g in grad.iter_mut().skip(e.offset).take(e.len()) {
                    *g = 0.0;
                }
            }
        }
    }
}

pub type NodeId = usize;

enum Op {
    Constant,
    Leaf { entry: usize },
    Add(NodeId, NodeId),
    /// matrix + column vector broadcast over columns
    AddBroadcast(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Neg(NodeId),
    MulElem(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Dot(NodeId, NodeId),
    Tanh(NodeId),
    Powi(NodeId, i32),
    Recip(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SqNorm(NodeId),
    Scale(NodeId, f64),
    SliceRows(NodeId, usize, usize),
    ConcatRows(Vec<NodeId>),
    BaselineEval {
        map: Arc<dyn Baseline>,
        z: NodeId,
        theta: NodeId,
    },
}

struct Node {
    op: Op,
    value: Array2<f64>,
}

/// Recording tape bound to one parameter vector.
pub struct Tape<'p> {
    params: &'p ParamVector,
    nodes: Vec<Node>,
    poisoned: Option<(usize, String)>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamVector) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            poisoned: None,
        }
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        assert_eq!(self.nodes[id].value.dim(), (1, 1), "scalar node");
        self.nodes[id].value[[0, 0]]
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> NodeId {
        let id = self.nodes.len();
        if self.poisoned.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.poisoned = Some((id, "non-finite forward value".into()));
        }
        self.nodes.push(Node { op, value });
        id
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn constant_vec(&mut self, value: &Array1<f64>) -> NodeId {
        self.constant(value.view().insert_axis(Axis(1)).to_owned())
    }

    pub fn constant_scalar(&mut self, value: f64) -> NodeId {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// Leaf node over a named parameter slice.
    pub fn leaf(&mut self, name: &str) -> Result<NodeId> {
        let e = self.params.entry(name)?;
        let idx = self
            .params
            .entries()
            .iter()
            .position(|p| p.name == e.name)
            .unwrap();
        let value = self.params.matrix(name)?;
        Ok(self.push(Op::Leaf { entry: idx }, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (da, db) = (self.nodes[a].value.dim(), self.nodes[b].value.dim());
        if da == db {
            let value = &self.nodes[a].value + &self.nodes[b].value;
            self.push(Op::Add(a, b), value)
        } else {
            assert_eq!(da.0, db.0, "broadcast add row count");
            assert_eq!(db.1, 1, "broadcast add needs a column vector");
            let mut value = self.nodes[a].value.clone();
            let col = self.nodes[b].value.column(0).to_owned();
            for mut c in value.columns_mut() {
                c += &col;
            }
            self.push(Op::AddBroadcast(a, b), value)
        }
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a].value - &self.nodes[b].value;
        self.push(Op::Sub(a, b), value)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.mapv(|v| -v);
        self.push(Op::Neg(a), value)
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a].value * &self.nodes[b].value;
        self.push(Op::MulElem(a, b), value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a].value.dot(&self.nodes[b].value);
        self.push(Op::MatMul(a, b), value)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let vb = &self.nodes[b].value;
        assert_eq!(va.dim(), vb.dim(), "dot shapes");
        let value = Array2::from_elem((1, 1), va.iter().zip(vb.iter()).map(|(x, y)| x * y).sum());
        self.push(Op::Dot(a, b), value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.mapv(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn powi(&mut self, a: NodeId, p: i32) -> NodeId {
        let value = self.nodes[a].value.mapv(|v| v.powi(p));
        self.push(Op::Powi(a, p), value)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.mapv(|v| 1.0 / v);
        self.push(Op::Recip(a), value)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Array2::from_elem((1, 1), self.nodes[a].value.sum());
        self.push(Op::Sum(a), value)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let len = self.nodes[a].value.len() as f64;
        let value = Array2::from_elem((1, 1), self.nodes[a].value.sum() / len);
        self.push(Op::Mean(a), value)
    }

    /// Sum of squared entries.
    pub fn sq_norm(&mut self, a: NodeId) -> NodeId {
        let value = Array2::from_elem((1, 1), self.nodes[a].value.iter().map(|v| v * v).sum());
        self.push(Op::SqNorm(a), value)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.nodes[a].value.mapv(|v| c * v);
        self.push(Op::Scale(a, c), value)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let value = self.nodes[a].value.slice(s![start..start + len, ..]).to_owned();
        self.push(Op::SliceRows(a, start, len), value)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.nodes[parts[0]].value.ncols();
        let rows: usize = parts.iter().map(|p| self.nodes[*p].value.nrows()).sum();
        let mut value = Array2::zeros((rows, cols));
        let mut r = 0;
        for p in parts {
            let v = &self.nodes[*p].value;
            value.slice_mut(s![r..r + v.nrows(), ..]).assign(v);
            r += v.nrows();
        }
        self.push(Op::ConcatRows(parts.to_vec()), value)
    }

    /// Batched baseline evaluation: columns of `z` are samples, `theta` is a
    /// single-column parameter node. The adjoint routes through the
    /// component's analytic Jacobians.
    pub fn baseline_eval(&mut self, map: Arc<dyn Baseline>, theta: NodeId, z: NodeId) -> NodeId {
        let theta_vals: Vec<f64> = self.nodes[theta].value.iter().copied().collect();
        let value = map.eval_batch(&theta_vals, &self.nodes[z].value);
        self.push(Op::BaselineEval { map, z, theta }, value)
    }

    /// Reverse sweep from a scalar loss node; returns the gradient over the
    /// full parameter vector with frozen slices zeroed.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<f64>> {
        if let Some((node, message)) = &self.poisoned {
            return Err(Error::Tape {
                node: *node,
                message: message.clone(),
            });
        }
        assert_eq!(self.nodes[loss].value.dim(), (1, 1), "loss must be scalar");
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        adj[loss] = Some(Array2::from_elem((1, 1), 1.0));
        let mut grad = vec![0.0; self.params.len()];

        for id in (0..=loss).rev() {
            let g = match adj[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Constant => {}
                Op::Leaf { entry } => {
                    let e = &self.params.entries()[*entry];
                    for (k, gv) in g.iter().enumerate() {
                        grad[e.offset + k] += gv;
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, &g);
                    accumulate(&mut adj, *b, &g);
                }
                Op::AddBroadcast(a, b) => {
                    accumulate(&mut adj, *a, &g);
                    let col = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    accumulate(&mut adj, *b, &col);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *a, &g);
                    let neg = g.mapv(|v| -v);
                    accumulate(&mut adj, *b, &neg);
                }
                Op::Neg(a) => {
                    let neg = g.mapv(|v| -v);
                    accumulate(&mut adj, *a, &neg);
                }
                Op::MulElem(a, b) => {
                    let ga = &g * &self.nodes[*b].value;
                    let gb = &g * &self.nodes[*a].value;
                    accumulate(&mut adj, *a, &ga);
                    accumulate(&mut adj, *b, &gb);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[*b].value.t());
                    let gb = self.nodes[*a].value.t().dot(&g);
                    accumulate(&mut adj, *a, &ga);
                    accumulate(&mut adj, *b, &gb);
                }
                Op::Dot(a, b) => {
                    let s = g[[0, 0]];
                    let ga = self.nodes[*b].value.mapv(|v| s * v);
                    let gb = self.nodes[*a].value.mapv(|v| s * v);
                    accumulate(&mut adj, *a, &ga);
                    accumulate(&mut adj, *b, &gb);
                }
                Op::Tanh(a) => {
                    // adjoint uses the cached forward value for consistency
                    let y = &self.nodes[id].value;
                    let ga = &g * &y.mapv(|v| 1.0 - v * v);
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Powi(a, p) => {
                    let base = &self.nodes[*a].value;
                    let ga = &g * &base.mapv(|v| *p as f64 * v.powi(p - 1));
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Recip(a) => {
                    let y = &self.nodes[id].value;
                    let ga = &g * &y.mapv(|v| -v * v);
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Sum(a) => {
                    let s = g[[0, 0]];
                    let ga = Array2::from_elem(self.nodes[*a].value.dim(), s);
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Mean(a) => {
                    let len = self.nodes[*a].value.len() as f64;
                    let s = g[[0, 0]] / len;
                    let ga = Array2::from_elem(self.nodes[*a].value.dim(), s);
                    accumulate(&mut adj, *a, &ga);
                }
                Op::SqNorm(a) => {
                    let s = 2.0 * g[[0, 0]];
                    let ga = self.nodes[*a].value.mapv(|v| s * v);
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Scale(a, c) => {
                    let ga = g.mapv(|v| c * v);
                    accumulate(&mut adj, *a, &ga);
                }
                Op::SliceRows(a, start, len) => {
                    let mut ga = Array2::zeros(self.nodes[*a].value.dim());
                    ga.slice_mut(s![*start..start + len, ..]).assign(&g);
                    accumulate(&mut adj, *a, &ga);
                }
                Op::ConcatRows(parts) => {
                    let mut r = 0;
                    for p in parts {
                        let rows = self.nodes[*p].value.nrows();
                        let gp = g.slice(s![r..r + rows, ..]).to_owned();
                        accumulate(&mut adj, *p, &gp);
                        r += rows;
                    }
                }
                Op::BaselineEval { map, z, theta } => {
                    let theta_vals: Vec<f64> =
                        self.nodes[*theta].value.iter().copied().collect();
                    let z_val = &self.nodes[*z].value;
                    let gz = map.vjp_z_batch(&theta_vals, z_val, &g);
                    accumulate(&mut adj, *z, &gz);
                    let gt = map
                        .vjp_theta_batch(&theta_vals, z_val, &g)
                        .insert_axis(Axis(1));
                    accumulate(&mut adj, *theta, &gt);
                }
            }
        }
        self.params.zero_frozen(&mut grad);
        Ok(grad)
    }
}

fn accumulate(adj: &mut [Option<Array2<f64>>], id: NodeId, g: &Array2<f64>) {
    match &mut adj[id] {
        Some(existing) => *existing += g,
        slot => *slot = Some(g.clone()),
    }
}

/// Builds the loss on a fresh tape and returns its value with the gradient
/// over the full parameter vector. Frozen slices receive zeros.
pub fn grad<F>(loss_builder: F, params: &ParamVector) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape) -> Result<NodeId>,
{
    let mut tape = Tape::new(params);
    let loss = loss_builder(&mut tape)?;
    if let Some((node, message)) = &tape.poisoned {
        return Err(Error::Tape {
            node: *node,
            message: message.clone(),
        });
    }
    let value = tape.scalar(loss);
    let g = tape.backward(loss)?;
    Ok((value, g))
}

/// Forward-only loss evaluation.
pub fn loss_value<F>(loss_builder: F, params: &ParamVector) -> Result<f64>
where
    F: FnOnce(&mut Tape) -> Result<NodeId>,
{
    let mut tape = Tape::new(params);
    let loss = loss_builder(&mut tape)?;
    if let Some((node, message)) = &tape.poisoned {
        return Err(Error::Tape {
            node: *node,
            message: message.clone(),
        });
    }
    Ok(tape.scalar(loss))
}

/// Central-difference comparison of the analytic gradient on the given
/// coordinates. Returns the worst relative error with denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn check_grad<F>(
    loss_builder: F,
    params: &ParamVector,
    coords: &[usize],
    step: f64,
) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<NodeId>,
{
    assert!(step > 0.0, "step must be positive");
    let (_, analytic) = grad(&loss_builder, params)?;
    let mut worst = 0.0f64;
    for &c in coords {
        assert!(c < params.len(), "coordinate out of range");
        let mut up = params.clone();
        up.data[c] += step;
        let vu = loss_value(&loss_builder, &up)?;
        let mut dn = params.clone();
        dn.data[c] -= step;
        let vd = loss_value(&loss_builder, &dn)?;
        let numeric = (vu - vd) / (2.0 * step);
        let denom = analytic[c].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[c] - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn theta_params(values: &[f64]) -> ParamVector {
        let mut p = ParamVector::new();
        p.push_vector("theta", &Array1::from(values.to_vec()), true);
        p
    }

    #[test]
    fn gradient_of_squared_norm_is_two_theta() {
        let params = theta_params(&[0.5, -1.5, 2.0]);
        let (val, g) = grad(
            |t| {
                let th = t.leaf("theta")?;
                Ok(t.sq_norm(th))
            },
            &params,
        )
        .unwrap();
        assert!((val - (0.25 + 2.25 + 4.0)).abs() < 1e-14);
        for (gi, ti) in g.iter().zip(params.data.iter()) {
            assert!((gi - 2.0 * ti).abs() < 1e-14);
        }
    }

    #[test]
    fn tanh_product_matches_finite_differences() {
        let params = theta_params(&[0.3, 0.5]);
        let builder = |t: &mut Tape| -> Result<NodeId> {
            let th = t.leaf("theta")?;
            let a = t.slice_rows(th, 0, 1);
            let b = t.slice_rows(th, 1, 1);
            let prod = t.mul_elem(a, b);
            let th_out = t.tanh(prod);
            Ok(t.sum(th_out))
        };
        let err = check_grad(builder, &params, &[0, 1], 1e-6).unwrap();
        assert!(err < 1e-7, "relative error {err}");
    }

    #[test]
    fn frozen_slices_get_zero_gradient() {
        let mut params = ParamVector::new();
        params.push_vector("a", &array![1.0, 2.0], true);
        params.push_vector("b", &array![3.0], false);
        let (_, g) = grad(
            |t| {
                let a = t.leaf("a")?;
                let b = t.leaf("b")?;
                let joined = t.concat_rows(&[a, b]);
                Ok(t.sq_norm(joined))
            },
            &params,
        )
        .unwrap();
        assert!(g[0] != 0.0 && g[1] != 0.0);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn gradient_is_linear_in_the_loss() {
        let params = theta_params(&[0.7, -0.2, 1.1]);
        let l1 = |t: &mut Tape| -> Result<NodeId> {
            let th = t.leaf("theta")?;
            Ok(t.sq_norm(th))
        };
        let l2 = |t: &mut Tape| -> Result<NodeId> {
            let th = t.leaf("theta")?;
            Ok(t.sum(th))
        };
        let combined = |t: &mut Tape| -> Result<NodeId> {
            let th = t.leaf("theta")?;
            let a = t.sq_norm(th);
            let b = t.sum(th);
            Ok(t.add(a, b))
        };
        let (_, g1) = grad(l1, &params).unwrap();
        let (_, g2) = grad(l2, &params).unwrap();
        let (_, gc) = grad(combined, &params).unwrap();
        for i in 0..3 {
            assert!((gc[i] - (g1[i] + g2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn replay_reproduces_loss_bit_exactly() {
        let params = theta_params(&[0.9, 0.1, -0.4, 0.8]);
        let builder = |t: &mut Tape| -> Result<NodeId> {
            let th = t.leaf("theta")?;
            let h = t.tanh(th);
            let p = t.powi(h, 3);
            let r = t.recip(p);
            let m = t.mean(r);
            Ok(t.sq_norm(m))
        };
        let v1 = loss_value(builder, &params).unwrap();
        let v2 = loss_value(builder, &params).unwrap();
        assert_eq!(v1.to_bits(), v2.to_bits());
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut params = ParamVector::new();
        params.push_matrix("w", &array![[0.2, -0.5], [0.7, 0.3]], true);
        params.push_vector("x", &array![1.5, -2.0], true);
        let builder = |t: &mut Tape| -> Result<NodeId> {
            let w = t.leaf("w")?;
            let x = t.leaf("x")?;
            let y = t.matmul(w, x);
            let ty = t.tanh(y);
            Ok(t.sq_norm(ty))
        };
        let coords: Vec<usize> = (0..params.len()).collect();
        let err = check_grad(builder, &params, &coords, 1e-6).unwrap();
        assert!(err < 1e-7, "relative error {err}");
    }

    #[test]
    fn non_finite_forward_is_reported_with_node_id() {
        let params = theta_params(&[0.0]);
        let res = grad(
            |t| {
                let th = t.leaf("theta")?;
                let r = t.recip(th); // 1/0
                Ok(t.sum(r))
            },
            &params,
        );
        match res {
            Err(Error::Tape { node, .. }) => assert!(node > 0),
            other => panic!("expected tape error, got {other:?}"),
        }
    }
}
