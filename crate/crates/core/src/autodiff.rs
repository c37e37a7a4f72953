//! Reverse-mode automatic differentiation over dense 2-D f64 tensors.
//!
//! A [`Tape`] records every operation in construction order; [`Tape::backward`]
//! walks it once in reverse, accumulating gradients for every node. Shapes are
//! validated eagerly: any mismatch panics, the only broadcast is the row-bias
//! add. Each tape is confined to one thread; independent tapes may run
//! concurrently.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense row-major matrix of f64.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Tensor { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Tensor { rows, cols, data }
    }

    pub fn scalar_value(value: f64) -> Self {
        Tensor::from_vec(1, 1, vec![value])
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

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Value of a 1x1 tensor.
    pub fn scalar(&self) -> f64 {
        assert_eq!((self.rows, self.cols), (1, 1), "expected scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(
            self.cols, other.rows,
            "matmul inner dimension mismatch: {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let mut out = Tensor::zeros(self.rows, other.cols);
        // i-l-j loop order keeps both operands streaming row-major.
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self.data[i * self.cols + l];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[l * other.cols..(l + 1) * other.cols];
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    fn transpose(&self) -> Tensor {
        Tensor::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    fn scale(&self, c: f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    fn hadamard(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "hadamard shape mismatch");
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }
}

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// A plus a 1xN bias broadcast over rows.
    AddRowBias(Var, Var),
    /// A divided by a 1x1 tensor; the divisor is a differentiable input.
    ScalarDiv(Var, Var),
    Relu(Var),
    SoftmaxRows(Var),
    /// Column-wise max over rows, KxN -> 1xN; ties go to the lowest row.
    MaxRows(Var),
    ConcatCols(Vec<Var>),
    Transpose(Var),
    /// A times a fixed (non-differentiable) constant.
    ScalarMul(Var, f64),
    L2NormalizeRow(Var),
    Cross3(Var, Var),
    Norm2(Var),
    ExpScalar(Var),
    Sum(Var),
    Hadamard(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient of the root with respect to every tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// Same-shape addition, or a row-broadcast when `b` is 1xN.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let mut value = ta.clone();
            value.add_assign(tb);
            self.push(value, Op::Add(a, b))
        } else if tb.rows == 1 && tb.cols == ta.cols {
            let value = Tensor::from_fn(ta.rows, ta.cols, |i, j| ta.get(i, j) + tb.get(0, j));
            self.push(value, Op::AddRowBias(a, b))
        } else {
            panic!(
                "add shape mismatch: {:?} + {:?}",
                ta.shape(),
                tb.shape()
            );
        }
    }

    pub fn scalar_div(&mut self, a: Var, s: Var) -> Var {
        let s_val = self.value(s).scalar();
        let value = self.value(a).scale(1.0 / s_val);
        self.push(value, Op::ScalarDiv(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let value = Tensor {
            rows: ta.rows,
            cols: ta.cols,
            data: ta.data.iter().map(|&v| v.max(0.0)).collect(),
        };
        self.push(value, Op::Relu(a))
    }

    /// Row-wise softmax with row-max subtraction; exact and overflow-safe.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut value = Tensor::zeros(ta.rows, ta.cols);
        for i in 0..ta.rows {
            let row = ta.row(i);
            let m = row.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
            let mut denom = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                value.set(i, j, e);
                denom += e;
            }
            for j in 0..ta.cols {
                value.set(i, j, value.get(i, j) / denom);
            }
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn max_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        assert!(ta.rows >= 1, "max_rows needs at least one row");
        let value = Tensor::from_fn(1, ta.cols, |_, j| {
            let mut best = ta.get(0, j);
            for i in 1..ta.rows {
                let v = ta.get(i, j);
                if v > best {
                    best = v;
                }
            }
            best
        });
        self.push(value, Op::MaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let rows = self.value(parts[0]).rows;
        let total: usize = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.value(p).rows, rows, "concat_cols row mismatch");
                self.value(p).cols
            })
            .sum();
        let mut value = Tensor::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let tp = self.value(p);
            for i in 0..rows {
                for j in 0..tp.cols {
                    value.set(i, off + j, tp.get(i, j));
                }
            }
            off += tp.cols;
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.push(value, Op::ScalarMul(a, c))
    }

    pub fn l2_normalize_row(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        assert_eq!(ta.rows, 1, "l2_normalize_row expects a row vector");
        let n = ta.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        let value = ta.scale(1.0 / n);
        self.push(value, Op::L2NormalizeRow(a))
    }

    pub fn cross3(&mut self, u: Var, v: Var) -> Var {
        let (tu, tv) = (self.value(u), self.value(v));
        assert_eq!((tu.rows, tu.cols), (1, 3), "cross3 expects 1x3");
        assert_eq!((tv.rows, tv.cols), (1, 3), "cross3 expects 1x3");
        let value = Tensor::from_vec(1, 3, cross(tu.data(), tv.data()).to_vec());
        self.push(value, Op::Cross3(u, v))
    }

    pub fn norm2(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        assert_eq!(ta.rows, 1, "norm2 expects a row vector");
        let n = ta.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.push(Tensor::scalar_value(n), Op::Norm2(a))
    }

    pub fn exp_scalar(&mut self, a: Var) -> Var {
        let v = self.value(a).scalar();
        self.push(Tensor::scalar_value(v.exp()), Op::ExpScalar(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data.iter().sum();
        self.push(Tensor::scalar_value(total), Op::Sum(a))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).hadamard(self.value(b));
        self.push(value, Op::Hadamard(a, b))
    }

    /// Reverse accumulation from a scalar root down to every node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.shape() != (1, 1) {
            return Err(Error::NonScalarRoot {
                rows: rv.rows,
                cols: rv.cols,
            });
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Tensor::scalar_value(1.0));
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.accumulate_parents(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate_parents(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |slot: &mut Option<Tensor>, delta: Tensor| match slot {
            Some(t) => t.add_assign(&delta),
            None => *slot = Some(delta),
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(&mut grads[a.0], g.matmul(&tb.transpose()));
                acc(&mut grads[b.0], ta.transpose().matmul(g));
            }
            Op::Add(a, b) => {
                acc(&mut grads[a.0], g.clone());
                acc(&mut grads[b.0], g.clone());
            }
            Op::AddRowBias(a, b) => {
                acc(&mut grads[a.0], g.clone());
                let bias_grad = Tensor::from_fn(1, g.cols, |_, j| {
                    (0..g.rows).map(|i| g.get(i, j)).sum()
                });
                acc(&mut grads[b.0], bias_grad);
            }
            Op::ScalarDiv(a, s) => {
                let s_val = self.value(*s).scalar();
                acc(&mut grads[a.0], g.scale(1.0 / s_val));
                // d(A/s)/ds = -A/s^2, contracted against the upstream grad.
                let ta = self.value(*a);
                let dot: f64 = g.data.iter().zip(&ta.data).map(|(x, y)| x * y).sum();
                acc(&mut grads[s.0], Tensor::scalar_value(-dot / (s_val * s_val)));
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                let masked = Tensor {
                    rows: g.rows,
                    cols: g.cols,
                    data: g
                        .data
                        .iter()
                        .zip(&ta.data)
                        .map(|(&gv, &av)| if av > 0.0 { gv } else { 0.0 })
                        .collect(),
                };
                acc(&mut grads[a.0], masked);
            }
            Op::SoftmaxRows(a) => {
                let s = &self.nodes[id].value;
                let mut da = Tensor::zeros(g.rows, g.cols);
                for i in 0..g.rows {
                    let dot: f64 = (0..g.cols).map(|j| g.get(i, j) * s.get(i, j)).sum();
                    for j in 0..g.cols {
                        da.set(i, j, s.get(i, j) * (g.get(i, j) - dot));
                    }
                }
                acc(&mut grads[a.0], da);
            }
            Op::MaxRows(a) => {
                let ta = self.value(*a);
                let mut da = Tensor::zeros(ta.rows, ta.cols);
                for j in 0..ta.cols {
                    let mut winner = 0;
                    let mut best = ta.get(0, j);
                    for i in 1..ta.rows {
                        let v = ta.get(i, j);
                        if v > best {
                            best = v;
                            winner = i;
                        }
                    }
                    da.set(winner, j, g.get(0, j));
                }
                acc(&mut grads[a.0], da);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols;
                    let part_grad =
                        Tensor::from_fn(g.rows, w, |i, j| g.get(i, off + j));
                    acc(&mut grads[p.0], part_grad);
                    off += w;
                }
            }
            Op::Transpose(a) => {
                acc(&mut grads[a.0], g.transpose());
            }
            Op::ScalarMul(a, c) => {
                acc(&mut grads[a.0], g.scale(*c));
            }
            Op::L2NormalizeRow(a) => {
                let ta = self.value(*a);
                let out = &self.nodes[id].value;
                let n = ta.data.iter().map(|v| v * v).sum::<f64>().sqrt();
                let dot: f64 = g.data.iter().zip(&out.data).map(|(x, y)| x * y).sum();
                let da = Tensor::from_fn(1, ta.cols, |_, j| {
                    (g.get(0, j) - dot * out.get(0, j)) / n
                });
                acc(&mut grads[a.0], da);
            }
            Op::Cross3(u, v) => {
                let (tu, tv) = (self.value(*u), self.value(*v));
                let du = cross(tv.data(), g.data());
                let dv = cross(g.data(), tu.data());
                acc(&mut grads[u.0], Tensor::from_vec(1, 3, du.to_vec()));
                acc(&mut grads[v.0], Tensor::from_vec(1, 3, dv.to_vec()));
            }
            Op::Norm2(a) => {
                let ta = self.value(*a);
                let n = self.nodes[id].value.scalar();
                let g0 = g.scalar();
                acc(&mut grads[a.0], ta.scale(g0 / n));
            }
            Op::ExpScalar(a) => {
                let out = self.nodes[id].value.scalar();
                acc(&mut grads[a.0], Tensor::scalar_value(g.scalar() * out));
            }
            Op::Sum(a) => {
                let ta = self.value(*a);
                let g0 = g.scalar();
                acc(
                    &mut grads[a.0],
                    Tensor::from_vec(ta.rows, ta.cols, vec![g0; ta.data.len()]),
                );
            }
            Op::Hadamard(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(&mut grads[a.0], g.hadamard(tb));
                acc(&mut grads[b.0], g.hadamard(ta));
            }
        }
    }
}

fn cross(u: &[f64], v: &[f64]) -> [f64; 3] {
    [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ]
}

/// Central-difference noise floor: differencing two O(1) forward passes
/// cancels to ~1e-10 absolute at eps = 1e-6; deviations an order above that
/// carry signal.
pub const FD_NOISE_FLOOR: f64 = 1e-9;

/// Worst finite-difference disagreement over every leaf entry.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    pub max_rel_error: f64,
    /// Max of |analytic - numeric|.
    pub max_abs_deviation: f64,
    /// Relative error restricted to entries whose absolute deviation exceeds
    /// FD_NOISE_FLOOR. Gradient entries below ~1e-6 cannot be resolved to
    /// fine relative precision by differencing (the quotient is roundoff
    /// noise over a tiny denominator), so conditioning artifacts are gated
    /// out while any real rule error - which moves the gradient at the scale
    /// of the entry itself - still registers.
    pub max_resolved_rel_error: f64,
}

/// Compares reverse-mode gradients against central finite differences.
///
/// `build` must deterministically construct the same scalar-rooted graph from
/// the given leaves. Returns the worst relative error over every leaf entry,
/// with denominator max(|analytic|, |numeric|, 1e-8).
pub fn grad_check<F>(build: F, leaves: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    Ok(grad_check_detailed(build, leaves, eps)?.max_rel_error)
}

/// As grad_check, but also reports the worst absolute deviation.
pub fn grad_check_detailed<F>(build: F, leaves: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |ls: &[Tensor]| -> (Tape, Var, Vec<Var>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ls.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = build(&mut tape, &vars);
        (tape, root, vars)
    };

    let (tape, root, vars) = eval(leaves);
    let grads = tape.backward(root)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_deviation: 0.0,
        max_resolved_rel_error: 0.0,
    };
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads
            .get(vars[li])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(leaf.rows, leaf.cols));
        for e in 0..leaf.data.len() {
            let mut plus = leaves.to_vec();
            plus[li].data[e] += eps;
            let (tp, rp, _) = eval(&plus);
            let lp = tp.value(rp).scalar();

            let mut minus = leaves.to_vec();
            minus[li].data[e] -= eps;
            let (tm, rm, _) = eval(&minus);
            let lm = tm.value(rm).scalar();

            let numeric = (lp - lm) / (2.0 * eps);
            let abs = (analytic.data[e] - numeric).abs();
            let denom = analytic.data[e].abs().max(numeric.abs()).max(1e-8);
            report.max_rel_error = report.max_rel_error.max(abs / denom);
            report.max_abs_deviation = report.max_abs_deviation.max(abs);
            if abs > FD_NOISE_FLOOR {
                report.max_resolved_rel_error = report.max_resolved_rel_error.max(abs / denom);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_tensor(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Random entries with magnitude bounded away from zero, avoiding relu
    /// kinks.
    fn random_tensor_off_kink(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| {
            let mag: f64 = rng.random_range(0.2..1.0);
            let sign = if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
            mag * sign
        })
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(2, 2, vec![1.0, -2.0, 3.0, 4.0]));
        let s = tape.sum(a);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn linear_matmul_gradient_exact() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(1, 3, vec![2.0, -1.0, 0.5]));
        let w = tape.leaf(Tensor::from_vec(3, 1, vec![1.0, 2.0, 3.0]));
        let y = tape.matmul(x, w);
        let s = tape.sum(y);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[2.0, -1.0, 0.5]);
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let err = tape.backward(a).unwrap_err();
        assert_eq!(err.to_string(), "backward requires scalar root, got 2x3");
    }

    #[test]
    fn relu_backward_masks_exactly() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(1, 4, vec![-1.0, 2.0, 0.0, 3.0]));
        let r = tape.relu(a);
        let s = tape.sum(r);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn max_rows_tie_routes_to_lowest_row() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(3, 2, vec![5.0, 1.0, 5.0, 2.0, 0.0, 2.0]));
        let m = tape.max_rows(a);
        let s = tape.sum(m);
        let grads = tape.backward(s).unwrap();
        // Column 0 ties rows 0 and 1 at 5.0; row 0 wins. Column 1 ties rows 1
        // and 2 at 2.0; row 1 wins.
        assert_eq!(
            grads.get(a).unwrap().data(),
            &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn softmax_rows_are_stochastic_and_shift_invariant() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = random_tensor(&mut rng, 4, 6);
            let mut shifted = a.clone();
            let c: f64 = rng.random_range(-100.0..100.0);
            for i in 0..4 {
                for j in 0..6 {
                    shifted.set(i, j, shifted.get(i, j) + c);
                }
            }
            let mut tape = Tape::new();
            let va = tape.leaf(a);
            let vs = tape.leaf(shifted);
            let sa = tape.softmax_rows(va);
            let ss = tape.softmax_rows(vs);
            for i in 0..4 {
                let row_sum: f64 = tape.value(sa).row(i).iter().sum();
                assert!((row_sum - 1.0).abs() < 1e-12);
                for j in 0..6 {
                    let v = tape.value(sa).get(i, j);
                    assert!(v > 0.0 && v < 1.0);
                    assert!((v - tape.value(ss).get(i, j)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);

        // matmul composed into a sum of squares.
        for _ in 0..10 {
            let a = random_tensor(&mut rng, 3, 4);
            let b = random_tensor(&mut rng, 4, 2);
            let err = grad_check(
                |t, vs| {
                    let m = t.matmul(vs[0], vs[1]);
                    let sq = t.hadamard(m, m);
                    t.sum(sq)
                },
                &[a, b],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "matmul err {}", err);
        }

        // add with row bias.
        for _ in 0..10 {
            let a = random_tensor(&mut rng, 5, 3);
            let b = random_tensor(&mut rng, 1, 3);
            let err = grad_check(
                |t, vs| {
                    let m = t.add(vs[0], vs[1]);
                    let sq = t.hadamard(m, m);
                    t.sum(sq)
                },
                &[a, b],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "bias err {}", err);
        }

        // relu away from kinks.
        for _ in 0..10 {
            let a = random_tensor_off_kink(&mut rng, 4, 4);
            let err = grad_check(
                |t, vs| {
                    let r = t.relu(vs[0]);
                    let sq = t.hadamard(r, r);
                    t.sum(sq)
                },
                &[a],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "relu err {}", err);
        }

        // softmax into sum of squares.
        for _ in 0..10 {
            let a = random_tensor(&mut rng, 3, 5);
            let err = grad_check(
                |t, vs| {
                    let s = t.softmax_rows(vs[0]);
                    let sq = t.hadamard(s, s);
                    t.sum(sq)
                },
                &[a],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "softmax err {}", err);
        }

        // scalar_div: gradient flows to both the matrix and the divisor.
        for _ in 0..10 {
            let a = random_tensor(&mut rng, 3, 3);
            let s = Tensor::scalar_value(rng.random_range(0.5..2.0));
            let err = grad_check(
                |t, vs| {
                    let d = t.scalar_div(vs[0], vs[1]);
                    let sq = t.hadamard(d, d);
                    t.sum(sq)
                },
                &[a, s],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "scalar_div err {}", err);
        }

        // max_rows with distinct entries.
        for _ in 0..10 {
            let a = Tensor::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.37
                + rng.random_range(-0.1..0.1));
            let err = grad_check(
                |t, vs| {
                    let m = t.max_rows(vs[0]);
                    let sq = t.hadamard(m, m);
                    t.sum(sq)
                },
                &[a],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "max_rows err {}", err);
        }

        // concat + transpose + scalar_mul chain.
        for _ in 0..10 {
            let a = random_tensor(&mut rng, 2, 3);
            let b = random_tensor(&mut rng, 2, 2);
            let err = grad_check(
                |t, vs| {
                    let c = t.concat_cols(&[vs[0], vs[1]]);
                    let tr = t.transpose(c);
                    let sc = t.scalar_mul(tr, 1.7);
                    let sq = t.hadamard(sc, sc);
                    t.sum(sq)
                },
                &[a, b],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "concat err {}", err);
        }

        // vector chain: normalize, cross, norm.
        for _ in 0..10 {
            let u = random_tensor_off_kink(&mut rng, 1, 3);
            let v = random_tensor_off_kink(&mut rng, 1, 3);
            let err = grad_check(
                |t, vs| {
                    let nu = t.l2_normalize_row(vs[0]);
                    let c = t.cross3(nu, vs[1]);
                    t.norm2(c)
                },
                &[u, v],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "vector chain err {}", err);
        }

        // exp_scalar through scalar_div: the temperature path in isolation.
        for _ in 0..10 {
            let a = random_tensor(&mut rng, 3, 3);
            let theta = Tensor::scalar_value(rng.random_range(-0.5..0.5));
            let err = grad_check(
                |t, vs| {
                    let temp = t.exp_scalar(vs[1]);
                    let d = t.scalar_div(vs[0], temp);
                    let sq = t.hadamard(d, d);
                    t.sum(sq)
                },
                &[a, theta],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "exp/div err {}", err);
        }
    }

    #[test]
    fn linear_graph_grad_check_is_tight() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = random_tensor(&mut rng, 4, 4);
        let err = grad_check(|t, vs| t.sum(vs[0]), &[a], 1e-6).unwrap();
        assert!(err < 1e-9, "linear err {}", err);
    }

    #[test]
    fn five_op_graph_grad_check() {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        for _ in 0..20 {
            let x = random_tensor(&mut rng, 4, 3);
            let w = random_tensor(&mut rng, 3, 5);
            let b = random_tensor(&mut rng, 1, 5);
            let err = grad_check(
                |t, vs| {
                    let m = t.matmul(vs[0], vs[1]);
                    let h = t.add(m, vs[2]);
                    let s = t.softmax_rows(h);
                    let sq = t.hadamard(s, s);
                    t.sum(sq)
                },
                &[x, w, b],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "five-op err {}", err);
        }
    }

    #[test]
    fn gradient_accumulates_on_reuse() {
        // y = a*a (via hadamard with itself): dy/da = 2a.
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(1, 2, vec![3.0, -2.0]));
        let sq = tape.hadamard(a, a);
        let s = tape.sum(sq);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[6.0, -4.0]);
    }
}
