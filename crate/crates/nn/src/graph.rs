//! Tape-based reverse-mode differentiation over row-major `f64` matrices.
//!
//! A [`Graph`] records every operation applied during one forward pass.
//! Calling [`Graph::backward`] on a scalar (1×1) node walks the tape in
//! reverse and returns the gradient of that scalar with respect to every
//! parameter touched during the pass.

use ndarray::{s, Array1, Array2, Axis, Zip};

use crate::params::{ParamId, ParamStore};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Array2<f64>),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Array2<f64>,
        count: usize,
    },
    Sum(Vec<Var>),
}

struct Node {
    value: Value,
    op: Op,
}

/// Gradients for every parameter of a [`ParamStore`], aligned by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.grads.get(id.index()).and_then(|g| g.as_ref())
    }

    pub(crate) fn slot(&self, index: usize) -> Option<&Array2<f64>> {
        self.grads.get(index).and_then(|g| g.as_ref())
    }

    fn accumulate(&mut self, id: ParamId, grad: &Array2<f64>) {
        match &mut self.grads[id.index()] {
            Some(acc) => *acc += grad,
            slot @ None => *slot = Some(grad.clone()),
        }
    }

    /// Adds another gradient set into this one (mini-batch accumulation).
    pub fn merge(&mut self, other: Gradients) {
        for (acc, g) in self.grads.iter_mut().zip(other.grads) {
            if let Some(g) = g {
                match acc {
                    Some(a) => *a += &g,
                    None => *acc = Some(g),
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|v| v * factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// One forward pass worth of recorded operations.
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// Row-wise softmax. Rows may contain `-inf` entries as long as at least one
/// entry per row is finite.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
    out
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        match &self.nodes[v.0].value {
            Value::Owned(a) => a,
            Value::Param(id) => self.store.value(*id),
        }
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    /// Adds a 1×n row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) + self.value(row);
        self.push(out, Op::AddRow(a, row))
    }

    /// Adds a constant matrix (typically an attention mask); no gradient
    /// flows into the constant.
    pub fn add_const(&mut self, a: Var, c: &Array2<f64>) -> Var {
        let out = self.value(a) + c;
        self.push(out, Op::AddConst(a))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        self.push(out, Op::Scale(a, factor))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::Softmax(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let mut xhat = Array2::zeros((rows, cols));
        let mut inv_std = Array1::zeros(rows);
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[i] = istd;
            for (j, v) in row.iter().enumerate() {
                xhat[[i, j]] = (v - mean) * istd;
            }
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes row `i` of the output.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Array2::zeros((ids.len(), t.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).assign(&t.row(id));
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let xv = self.value(x);
        let mut out = Array2::zeros((rows.len(), xv.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).assign(&xv.row(r));
        }
        self.push(out, Op::SelectRows { x, rows: rows.to_vec() })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("column counts must agree");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    /// Mean cross-entropy over rows with a target; rows whose target is
    /// `None` are ignored. Produces a 1×1 node. With no targets at all the
    /// loss is zero.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len(), "one target slot per row");
        let probs = softmax_rows(lv);
        let mut loss = 0.0;
        let mut count = 0;
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                loss -= probs[[i, *t]].max(f64::MIN_POSITIVE).ln();
                count += 1;
            }
        }
        if count > 0 {
            loss /= count as f64;
        }
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
        )
    }

    /// Sum of 1×1 nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let total: f64 = parts.iter().map(|&p| self.scalar(p)).sum();
        self.push(Array2::from_elem((1, 1), total), Op::Sum(parts.to_vec()))
    }

    /// Back-propagates from the 1×1 node `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::from_elem((1, 1), 1.0));
        let mut out = Gradients::zeros_like(self.store);

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(a) => *a += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    // y = a bᵀ ; dA = g b ; dB = gᵀ a
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::AddConst(a) => acc(&mut grads, *a, g),
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, f) => acc(&mut grads, *a, g * *f),
                Op::Gelu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|gi, &x| *gi *= gelu_grad(x));
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let y = self.value(Var(idx));
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|gi, &t| *gi *= 1.0 - t * t);
                    acc(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = self.value(Var(idx));
                    let mut ga = Array2::zeros(y.dim());
                    for ((gy, yy), mut out_row) in g.rows().into_iter().zip(y.rows()).zip(ga.rows_mut()) {
                        let dot: f64 = gy.iter().zip(yy.iter()).map(|(a, b)| a * b).sum();
                        for ((o, &gi), &yi) in out_row.iter_mut().zip(gy.iter()).zip(yy.iter()) {
                            *o = yi * (gi - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gamma_v = self.value(*gamma);
                    let gbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ggamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gxhat = &g * gamma_v;
                    let n = xhat.ncols() as f64;
                    let mut gx = Array2::zeros(xhat.dim());
                    for i in 0..xhat.nrows() {
                        let gr = gxhat.row(i);
                        let xr = xhat.row(i);
                        let mean_g = gr.sum() / n;
                        let mean_gx: f64 = gr.iter().zip(xr.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                        for j in 0..xhat.ncols() {
                            gx[[i, j]] = inv_std[i] * (gr[j] - mean_g - xr[j] * mean_gx);
                        }
                    }
                    acc(&mut grads, *gamma, ggamma);
                    acc(&mut grads, *beta, gbeta);
                    acc(&mut grads, *x, gx);
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut gt = Array2::zeros(t.dim());
                    for (i, &id) in ids.iter().enumerate() {
                        let mut row = gt.row_mut(id);
                        row += &g.row(i);
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::SelectRows { x, rows } => {
                    let xv = self.value(*x);
                    let mut gx = Array2::zeros(xv.dim());
                    for (i, &r) in rows.iter().enumerate() {
                        let mut row = gx.row_mut(r);
                        row += &g.row(i);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut gx = Array2::zeros(xv.dim());
                    gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        let gp = g.slice(s![.., offset..offset + w]).to_owned();
                        offset += w;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        let gp = g.slice(s![offset..offset + h, ..]).to_owned();
                        offset += h;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    let mut gl = Array2::zeros(probs.dim());
                    if *count > 0 {
                        let scale = g[[0, 0]] / *count as f64;
                        for (i, t) in targets.iter().enumerate() {
                            if let Some(t) = t {
                                for j in 0..probs.ncols() {
                                    gl[[i, j]] = probs[[i, j]] * scale;
                                }
                                gl[[i, *t]] -= scale;
                            }
                        }
                    }
                    acc(&mut grads, *logits, gl);
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        acc(&mut grads, p, g.clone());
                    }
                }
            }
        }
        out
    }
}
