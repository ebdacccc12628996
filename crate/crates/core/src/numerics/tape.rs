//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] is built fresh for every forward pass. Each operation pushes
//! a node holding its value and the ids of its parents; [`Tape::backward`]
//! walks the nodes in reverse creation order, which is a valid reverse
//! topological order because parents are always created before children.

use super::matrix::{sigmoid_scalar, softmax_slice, Matrix};
use crate::error::{Error, Result};

/// Log clamp applied inside the cross-entropy ops.
pub const LOG_EPS: f64 = 1e-12;

/// `ln(max(p, LOG_EPS))`, except that NaN stays NaN.
pub fn clamped_ln(p: f64) -> f64 {
    if p < LOG_EPS {
        LOG_EPS.ln()
    } else {
        p.ln()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a loss op reduces over rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// Sum over every entry.
    Sum,
    /// Sum within each row, then average over rows.
    MeanRows,
}

impl Reduction {
    fn divisor(self, rows: usize) -> f64 {
        match self {
            Reduction::Sum => 1.0,
            Reduction::MeanRows => rows.max(1) as f64,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    HConcat(Var, Var),
    StackRows(Vec<Var>),
    ColumnMax(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    SquaredNorm(Var),
    CrossEntropy {
        probs: Var,
        targets: Matrix,
        reduction: Reduction,
    },
    BinaryCrossEntropy {
        probs: Var,
        targets: Matrix,
        reduction: Reduction,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of the tape it was
/// computed on.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Matrix>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> &Matrix {
        &self.grads[v.0]
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        std::mem::replace(&mut self.grads[v.0], Matrix::zeros(0, 0))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    fn check_row(&self, op: &'static str, a: Var, row: Var) -> Result<()> {
        let (ar, ac) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != ac {
            return Err(Error::shape(op, (ar, ac), (rr, rc)));
        }
        Ok(())
    }

    /// Adds a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("add_row", a, row)?;
        let r = self.value(row).as_slice().to_vec();
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            for (x, b) in value.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    /// Multiplies every row of an `m×n` matrix elementwise by a `1×n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("mul_row", a, row)?;
        let r = self.value(row).as_slice().to_vec();
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            for (x, b) in value.row_mut(i).iter_mut().zip(&r) {
                *x *= b;
            }
        }
        Ok(self.push(value, Op::MulRow(a, row)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x < 0.0 { 0.0 } else { x });
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid_scalar);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut value = src.clone();
        for i in 0..src.rows() {
            let s = softmax_slice(src.row(i));
            value.row_mut(i).copy_from_slice(&s);
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn hconcat(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hconcat(self.value(b))?;
        Ok(self.push(value, Op::HConcat(a, b)))
    }

    /// Stacks `1×n` rows into an `k×n` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let cols = rows.first().map_or(0, |&r| self.shape(r).1);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            let v = self.value(r);
            if v.shape() != (1, cols) {
                return Err(Error::shape("stack_rows", (1, cols), v.shape()));
            }
            data.extend_from_slice(v.as_slice());
        }
        let value = Matrix::from_vec(rows.len(), cols, data)?;
        Ok(self.push(value, Op::StackRows(rows.to_vec())))
    }

    /// Maximum over the rows of each column, giving a `1×n` row.
    ///
    /// Ties resolve to the lowest row index; the gradient is routed to that
    /// entry only.
    pub fn column_max(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        if src.rows() == 0 {
            return Err(Error::Contract(
                "column_max over an empty set of rows".into(),
            ));
        }
        let mut arg = vec![0usize; src.cols()];
        let mut out = Matrix::zeros(1, src.cols());
        for j in 0..src.cols() {
            let mut best = src.get(0, j);
            for i in 1..src.rows() {
                let v = src.get(i, j);
                if v > best {
                    best = v;
                    arg[j] = i;
                }
            }
            out.set(0, j, best);
        }
        Ok(self.push(out, Op::ColumnMax(a, arg)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Matrix::filled(1, 1, m.sum() / m.len().max(1) as f64);
        self.push(value, Op::Mean(a))
    }

    /// `½‖a‖²`.
    pub fn half_squared_norm(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).as_slice().iter().map(|x| x * x).sum();
        self.push(Matrix::filled(1, 1, 0.5 * s), Op::SquaredNorm(a))
    }

    /// `-Σ t·log(max(p, ε))`, reduced per `reduction`.
    ///
    /// Probabilities below [`LOG_EPS`] are clamped rather than rejected.
    pub fn cross_entropy(
        &mut self,
        probs: Var,
        targets: &Matrix,
        reduction: Reduction,
    ) -> Result<Var> {
        let p = self.value(probs);
        if p.shape() != targets.shape() {
            return Err(Error::shape("cross_entropy", p.shape(), targets.shape()));
        }
        let mut total = 0.0;
        for (&pv, &t) in p.as_slice().iter().zip(targets.as_slice()) {
            if t != 0.0 {
                total -= t * clamped_ln(pv);
            }
        }
        let value = Matrix::filled(1, 1, total / reduction.divisor(p.rows()));
        Ok(self.push(
            value,
            Op::CrossEntropy {
                probs,
                targets: targets.clone(),
                reduction,
            },
        ))
    }

    /// `-Σ [t·log p + (1-t)·log(1-p)]` with both logs clamped at [`LOG_EPS`].
    pub fn binary_cross_entropy(
        &mut self,
        probs: Var,
        targets: &Matrix,
        reduction: Reduction,
    ) -> Result<Var> {
        let p = self.value(probs);
        if p.shape() != targets.shape() {
            return Err(Error::shape(
                "binary_cross_entropy",
                p.shape(),
                targets.shape(),
            ));
        }
        let mut total = 0.0;
        for (&pv, &t) in p.as_slice().iter().zip(targets.as_slice()) {
            total -= t * clamped_ln(pv) + (1.0 - t) * clamped_ln(1.0 - pv);
        }
        let value = Matrix::filled(1, 1, total / reduction.divisor(p.rows()));
        Ok(self.push(
            value,
            Op::BinaryCrossEntropy {
                probs,
                targets: targets.clone(),
                reduction,
            },
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {shape:?}"
            )));
        }
        let mut grads: Vec<Matrix> = self
            .nodes
            .iter()
            .map(|n| Matrix::zeros(n.value.rows(), n.value.cols()))
            .collect();
        grads[loss.0].set(0, 0, 1.0);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let g = std::mem::replace(&mut grads[idx], Matrix::zeros(0, 0));
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = g;
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Matrix]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = g.matmul(&self.value(*b).transpose())?;
                let db = self.value(*a).transpose().matmul(g)?;
                grads[a.0].axpy(1.0, &da)?;
                grads[b.0].axpy(1.0, &db)?;
            }
            Op::Transpose(a) => {
                grads[a.0].axpy(1.0, &g.transpose())?;
            }
            Op::Add(a, b) => {
                grads[a.0].axpy(1.0, g)?;
                grads[b.0].axpy(1.0, g)?;
            }
            Op::Sub(a, b) => {
                grads[a.0].axpy(1.0, g)?;
                grads[b.0].axpy(-1.0, g)?;
            }
            Op::Mul(a, b) => {
                let da = g.zip_map(self.value(*b), |x, y| x * y)?;
                let db = g.zip_map(self.value(*a), |x, y| x * y)?;
                grads[a.0].axpy(1.0, &da)?;
                grads[b.0].axpy(1.0, &db)?;
            }
            Op::Scale(a, s) => {
                grads[a.0].axpy(*s, g)?;
            }
            Op::AddRow(a, row) => {
                grads[a.0].axpy(1.0, g)?;
                let gr = grads[row.0].as_mut_slice();
                for i in 0..g.rows() {
                    for (acc, &x) in gr.iter_mut().zip(g.row(i)) {
                        *acc += x;
                    }
                }
            }
            Op::MulRow(a, row) => {
                let r = self.value(*row).as_slice();
                let av = self.value(*a);
                let ga = grads[a.0].as_mut_slice();
                let cols = g.cols();
                for i in 0..g.rows() {
                    for j in 0..cols {
                        ga[i * cols + j] += g.get(i, j) * r[j];
                    }
                }
                let gr = grads[row.0].as_mut_slice();
                for i in 0..g.rows() {
                    for j in 0..cols {
                        gr[j] += g.get(i, j) * av.get(i, j);
                    }
                }
            }
            Op::Relu(a) => {
                let d = g.zip_map(self.value(*a), |x, v| if v > 0.0 { x } else { 0.0 })?;
                grads[a.0].axpy(1.0, &d)?;
            }
            Op::Sigmoid(a) => {
                let d = g.zip_map(&node.value, |x, s| x * s * (1.0 - s))?;
                grads[a.0].axpy(1.0, &d)?;
            }
            Op::SoftmaxRows(a) => {
                let s = &node.value;
                let ga = grads[a.0].as_mut_slice();
                let cols = s.cols();
                for i in 0..s.rows() {
                    let dot: f64 = g.row(i).iter().zip(s.row(i)).map(|(x, y)| x * y).sum();
                    for j in 0..cols {
                        ga[i * cols + j] += s.get(i, j) * (g.get(i, j) - dot);
                    }
                }
            }
            Op::HConcat(a, b) => {
                let ac = self.value(*a).cols();
                let bc = self.value(*b).cols();
                for i in 0..g.rows() {
                    let row = g.row(i);
                    for (acc, &x) in grads[a.0].row_mut(i).iter_mut().zip(&row[..ac]) {
                        *acc += x;
                    }
                    for (acc, &x) in grads[b.0].row_mut(i).iter_mut().zip(&row[ac..ac + bc]) {
                        *acc += x;
                    }
                }
            }
            Op::StackRows(rows) => {
                for (i, r) in rows.iter().enumerate() {
                    for (acc, &x) in grads[r.0].as_mut_slice().iter_mut().zip(g.row(i)) {
                        *acc += x;
                    }
                }
            }
            Op::ColumnMax(a, arg) => {
                let ga = &mut grads[a.0];
                for (j, &i) in arg.iter().enumerate() {
                    let cur = ga.get(i, j);
                    ga.set(i, j, cur + g.get(0, j));
                }
            }
            Op::Sum(a) => {
                let s = g.get(0, 0);
                for x in grads[a.0].as_mut_slice() {
                    *x += s;
                }
            }
            Op::Mean(a) => {
                let ga = grads[a.0].as_mut_slice();
                let s = g.get(0, 0) / ga.len().max(1) as f64;
                for x in ga {
                    *x += s;
                }
            }
            Op::SquaredNorm(a) => {
                let s = g.get(0, 0);
                grads[a.0].axpy(s, self.value(*a))?;
            }
            Op::CrossEntropy {
                probs,
                targets,
                reduction,
            } => {
                let p = self.value(*probs);
                let s = g.get(0, 0) / reduction.divisor(p.rows());
                let gp = grads[probs.0].as_mut_slice();
                for ((acc, &pv), &t) in gp.iter_mut().zip(p.as_slice()).zip(targets.as_slice()) {
                    if t != 0.0 && pv > LOG_EPS {
                        *acc -= s * t / pv;
                    }
                }
            }
            Op::BinaryCrossEntropy {
                probs,
                targets,
                reduction,
            } => {
                let p = self.value(*probs);
                let s = g.get(0, 0) / reduction.divisor(p.rows());
                let gp = grads[probs.0].as_mut_slice();
                for ((acc, &pv), &t) in gp.iter_mut().zip(p.as_slice()).zip(targets.as_slice()) {
                    let mut d = 0.0;
                    if pv > LOG_EPS {
                        d -= t / pv;
                    }
                    if 1.0 - pv > LOG_EPS {
                        d += (1.0 - t) / (1.0 - pv);
                    }
                    *acc += s * d;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let m = t.leaf(Matrix::from_fn(3, 4, |i, j| i as f64 - j as f64));
        let s = t.sum(m);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(m), &Matrix::filled(3, 4, 1.0));
    }

    #[test]
    fn half_squared_norm_gradient_is_input() {
        let mut t = Tape::new();
        let value = Matrix::from_fn(2, 3, |i, j| 0.3 * i as f64 - 0.7 * j as f64);
        let m = t.leaf(value.clone());
        let l = t.half_squared_norm(m);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(m), &value);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let m = t.leaf(Matrix::zeros(2, 2));
        assert!(matches!(t.backward(m), Err(Error::Contract(_))));
    }

    #[test]
    fn cross_entropy_values() {
        let mut t = Tape::new();
        let p = t.leaf(Matrix::row_vector(&[1.0, 0.0, 0.0]));
        let l = t.cross_entropy(p, &Matrix::row_vector(&[1.0, 0.0, 0.0]), Reduction::Sum).unwrap();
        assert_eq!(t.value(l).get(0, 0), 0.0);

        let p = t.leaf(Matrix::row_vector(&[0.25; 4]));
        let l = t.cross_entropy(p, &Matrix::row_vector(&[0.0, 1.0, 0.0, 0.0]), Reduction::Sum).unwrap();
        assert!((t.value(l).get(0, 0) - 4f64.ln()).abs() < 1e-15);

        let p = t.leaf(Matrix::row_vector(&[0.5, 0.25, 0.25]));
        let l = t.cross_entropy(p, &Matrix::row_vector(&[1.0, 1.0, 0.0]), Reduction::Sum).unwrap();
        let expected = -(0.5f64.ln() + 0.25f64.ln());
        assert!((t.value(l).get(0, 0) - expected).abs() < 1e-15);
        assert!((expected - 2.0794).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let mut t = Tape::new();
        let p = t.leaf(Matrix::row_vector(&[0.0, 1.0]));
        let l = t.cross_entropy(p, &Matrix::row_vector(&[1.0, 0.0]), Reduction::Sum).unwrap();
        let v = t.value(l).get(0, 0);
        assert!((v + LOG_EPS.ln()).abs() < 1e-12);
        let g = t.backward(l).unwrap();
        assert!(g.get(p).is_finite());
    }

    #[test]
    fn column_max_routes_gradient_to_argmax() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_rows(&[&[1.0, 5.0], &[3.0, 5.0], &[2.0, 0.0]]).unwrap());
        let m = t.column_max(x).unwrap();
        assert_eq!(t.value(m).as_slice(), &[3.0, 5.0]);
        let s = t.sum(m);
        let g = t.backward(s).unwrap();
        assert_eq!(
            g.get(x),
            &Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0], &[0.0, 0.0]]).unwrap()
        );
    }

    #[test]
    fn shared_input_accumulates() {
        // d/dx (x ⊙ x) summed = 2x
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(&[1.5, -2.0]));
        let y = t.mul(x, x).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).as_slice(), &[3.0, -4.0]);
    }
}
