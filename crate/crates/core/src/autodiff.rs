//! Reverse-mode differentiation over a tape of dense matrices.
//!
//! Values are `batch x features` matrices ([`Tensor`]). Every op appends one
//! node; [`Tape::backward`] walks the tape in reverse and accumulates adjoints
//! only for nodes that depend on a leaf created with `requires_grad`.
//! [`Tape::detach`] cuts that dependency, which is how the decoder probe is
//! kept from training the encoder.

use ndarray::{concatenate, s, Array2, Axis};

use crate::error::{Error, Result};

/// Row-major dense matrix carried by the tape.
pub type Tensor = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    ConcatCols(Var, Var),
    MeanSquaredError(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    MeanPoolRows(Var, usize),
    Detach,
}

impl Op {
    fn name(self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Relu(_) => "relu",
            Op::ConcatCols(..) => "concat_cols",
            Op::MeanSquaredError(..) => "mean_squared_error",
            Op::Add(..) => "add",
            Op::Scale(..) => "scale",
            Op::MeanPoolRows(..) => "mean_pool_rows",
            Op::Detach => "detach",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    first_non_finite: Option<&'static str>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        if self.first_non_finite.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.first_non_finite = Some(op.name());
        }
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Errors if any op so far produced NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite {
            Some(op) => Err(Error::NonFinite(op.to_string())),
            None => Ok(()),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(value, Op::MatMul(a, b), tracked)
    }

    /// `x + 1 * row`, broadcasting a `1 x d` row over the batch.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let value = self.value(x) + self.value(row);
        let tracked = self.tracked(x) || self.tracked(row);
        self.push(value, Op::AddRow(x, row), tracked)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v.max(0.0));
        let tracked = self.tracked(x);
        self.push(value, Op::Relu(x), tracked)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let value = concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts match");
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(value, Op::ConcatCols(a, b), tracked)
    }

    /// Mean over all entries of `(a - b)²`, as a `1 x 1` tensor.
    pub fn mean_squared_error(&mut self, a: Var, b: Var) -> Var {
        let diff = self.value(a) - self.value(b);
        let mse = diff.mapv(|d| d * d).sum() / diff.len() as f64;
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Array2::from_elem((1, 1), mse), Op::MeanSquaredError(a, b), tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(value, Op::Add(a, b), tracked)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x) * c;
        let tracked = self.tracked(x);
        self.push(value, Op::Scale(x, c), tracked)
    }

    /// Averages each run of `group` consecutive rows into one row.
    pub fn mean_pool_rows(&mut self, x: Var, group: usize) -> Var {
        let value = mean_pool_rows(self.value(x), group);
        let tracked = self.tracked(x);
        self.push(value, Op::MeanPoolRows(x, group), tracked)
    }

    /// Same value, no gradient flows back through it.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::Detach, false)
    }

    /// Adjoints of `output` (a `1 x 1` node) with respect to every tracked
    /// node.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.tracked(output) {
            return Gradients { grads };
        }
        grads[output.0] = Some(Array2::ones(self.value(output).raw_dim()));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf | Op::Detach => {}
                Op::MatMul(a, b) => {
                    if self.tracked(a) {
                        accumulate(&mut grads, a, g.dot(&self.value(b).t()));
                    }
                    if self.tracked(b) {
                        accumulate(&mut grads, b, self.value(a).t().dot(&g));
                    }
                }
                Op::AddRow(x, row) => {
                    if self.tracked(row) {
                        accumulate(&mut grads, row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.tracked(x) {
                        accumulate(&mut grads, x, g.clone());
                    }
                }
                Op::Relu(x) => {
                    let mut gx = g.clone();
                    gx.zip_mut_with(&node.value, |d, &y| {
                        if y <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    accumulate(&mut grads, x, gx);
                }
                Op::ConcatCols(a, b) => {
                    let split = self.value(a).ncols();
                    if self.tracked(a) {
                        accumulate(&mut grads, a, g.slice(s![.., ..split]).to_owned());
                    }
                    if self.tracked(b) {
                        accumulate(&mut grads, b, g.slice(s![.., split..]).to_owned());
                    }
                }
                Op::MeanSquaredError(a, b) => {
                    let diff = self.value(a) - self.value(b);
                    let k = 2.0 * g[[0, 0]] / diff.len() as f64;
                    if self.tracked(a) {
                        accumulate(&mut grads, a, &diff * k);
                    }
                    if self.tracked(b) {
                        accumulate(&mut grads, b, &diff * -k);
                    }
                }
                Op::Add(a, b) => {
                    if self.tracked(a) {
                        accumulate(&mut grads, a, g.clone());
                    }
                    if self.tracked(b) {
                        accumulate(&mut grads, b, g.clone());
                    }
                }
                Op::Scale(x, c) => accumulate(&mut grads, x, &g * c),
                Op::MeanPoolRows(x, group) => {
                    let scale = 1.0 / group as f64;
                    let gx = Tensor::from_shape_fn(self.value(x).raw_dim(), |(r, c)| {
                        g[[r / group, c]] * scale
                    });
                    accumulate(&mut grads, x, gx);
                }
            }
            // Leaves keep their adjoint for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Gradients { grads }
    }
}

/// `(n * group) x d` to `n x d` by averaging row groups.
pub fn mean_pool_rows(x: &Tensor, group: usize) -> Tensor {
    assert!(group > 0 && x.nrows().is_multiple_of(group), "rows must split into groups");
    let mut out = Tensor::zeros((x.nrows() / group, x.ncols()));
    for (r, row) in x.rows().into_iter().enumerate() {
        let mut dst = out.row_mut(r / group);
        dst += &row;
    }
    out / group as f64
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of a leaf; `None` when no tracked path reaches it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn central_difference(f: impl Fn(&Tensor) -> f64, at: &Tensor, h: f64) -> Tensor {
        let mut out = Tensor::zeros(at.raw_dim());
        for idx in 0..at.len() {
            let (r, c) = (idx / at.ncols(), idx % at.ncols());
            let mut plus = at.clone();
            plus[[r, c]] += h;
            let mut minus = at.clone();
            minus[[r, c]] -= h;
            out[[r, c]] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        out
    }

    fn small_net(x: &Tensor, w: &Tensor, b: &Tensor, y: &Tensor) -> (Tape, Var, Var) {
        let mut t = Tape::new();
        let xv = t.input(x.clone());
        let wv = t.param(w.clone());
        let bv = t.param(b.clone());
        let yv = t.input(y.clone());
        let h = t.matmul(xv, wv);
        let h = t.add_row(h, bv);
        let h = t.relu(h);
        let pooled = t.mean_pool_rows(h, 3);
        let h = t.add_row(h, pooled);
        let cat = t.concat_cols(h, xv);
        let loss = t.mean_squared_error(cat, yv);
        let loss = t.scale(loss, 1.5);
        (t, wv, loss)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = array![[0.3, -1.2], [0.8, 0.4], [-0.5, 0.9]];
        let w = array![[0.7, -0.2, 0.5], [0.1, 0.9, -0.6]];
        let b = array![[0.05, -0.1, 0.2]];
        let y = array![
            [0.1, 0.2, 0.3, 0.0, 0.0],
            [0.5, -0.4, 0.2, 1.0, 0.0],
            [0.0, 0.3, -0.2, 0.0, 1.0]
        ];
        let (t, wv, loss) = small_net(&x, &w, &b, &y);
        let grads = t.backward(loss);
        let fd = central_difference(
            |w| {
                let (t, _, l) = small_net(&x, w, &b, &y);
                t.scalar(l)
            },
            &w,
            1e-6,
        );
        let g = grads.get(wv).unwrap();
        for (a, e) in g.iter().zip(fd.iter()) {
            assert!((a - e).abs() < 1e-8, "{a} vs {e}");
        }
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut t = Tape::new();
        let w = t.param(array![[2.0]]);
        let x = t.input(array![[3.0]]);
        let h = t.matmul(x, w);
        let d = t.detach(h);
        let target = t.input(array![[0.0]]);
        let loss = t.mean_squared_error(d, target);
        assert_eq!(t.scalar(loss), 36.0);
        assert!(t.backward(loss).get(w).is_none());
    }

    #[test]
    fn shared_leaf_accumulates() {
        let mut t = Tape::new();
        let w = t.param(array![[1.5]]);
        let sum = t.add(w, w);
        let zero = t.input(array![[0.0]]);
        let loss = t.mean_squared_error(sum, zero);
        // d/dw (2w)^2 = 8w
        assert_eq!(t.backward(loss).get(w).unwrap()[[0, 0]], 12.0);
    }

    #[test]
    fn non_finite_values_are_reported() {
        let mut t = Tape::new();
        let a = t.input(array![[f64::MAX]]);
        let _ = t.scale(a, 10.0);
        assert!(matches!(t.check_finite(), Err(Error::NonFinite(op)) if op == "scale"));
    }
}
