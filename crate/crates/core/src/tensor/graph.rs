//! Reverse-mode autodiff over a linear tape.
//!
//! A [`Graph`] borrows a frozen [`ParamStore`], records every op with the
//! data its backward pass needs, and hands back per-parameter
//! [`Gradients`]. Graphs are cheap and single-use: one per sample or per
//! decoding call. Several graphs may share a store across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, ConvGeom, Padding, Padding2d};
use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Result, ScanError};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Constant,
    Param(ParamId),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Residual { a: Var, b: Var, scale: T },
    Sum(Var),
    Relu(Var),
    Glu(Var),
    Dropout { x: Var, mask: Vec<T> },
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom, cols: Vec<T> },
    MaxPool { x: Var, argmax: Vec<u32> },
    Linear { x: Var, w: Var, b: Var, rows: usize, din: usize, dout: usize },
    MatMul { a: Var, b: Var, trans_b: bool, m: usize, k: usize, n: usize },
    Softmax(Var),
    Gather { table: Var, idx: Vec<usize> },
    Reshape(Var),
    Nll { logits: Var, targets: Vec<Option<usize>>, probs: Vec<T> },
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    tracked: bool,
}

/// Per-parameter gradients produced by [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn empty(params: usize) -> Self {
        Gradients {
            grads: vec![None; params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads[id.0].as_deref()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    fn add_slot(&mut self, i: usize, delta: Vec<T>) {
        match &mut self.grads[i] {
            Some(g) => g.iter_mut().zip(&delta).for_each(|(g, &d)| *g += d),
            slot @ None => *slot = Some(delta),
        }
    }

    /// Elementwise sum, used to reduce per-sample gradients in a fixed order.
    pub fn merge(&mut self, other: Gradients<T>) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (i, g) in other.grads.into_iter().enumerate() {
            if let Some(g) = g {
                self.add_slot(i, g);
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        self.grads
            .iter_mut()
            .flatten()
            .for_each(|g| g.iter_mut().for_each(|v| *v *= s));
    }

    /// Add into the parameters' gradient buffers.
    pub fn accumulate_into(&self, params: &mut ParamStore<T>) {
        assert_eq!(self.grads.len(), params.len());
        for (p, g) in params.iter_mut().zip(&self.grads) {
            if let Some(g) = g {
                p.tensor.accumulate_grad(g);
            }
        }
    }
}

pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    rng: Option<ChaCha8Rng>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// Evaluation graph: dropout is the identity.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            rng: None,
        }
    }

    /// Training graph: dropout masks are drawn from a generator seeded by `seed`.
    pub fn training(params: &'p ParamStore<T>, seed: u64) -> Self {
        let mut g = Self::new(params);
        g.rng = Some(ChaCha8Rng::seed_from_u64(seed));
        g
    }

    /// Switch this graph to training mode for the ops recorded from now on.
    pub fn enable_dropout(&mut self, seed: u64) {
        self.rng = Some(ChaCha8Rng::seed_from_u64(seed));
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.tensor(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool, name: &'static str) -> Result<Var> {
        let value = value.ensure_finite(name)?;
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            tracked,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Constant, false, "constant")
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            tracked: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(ScanError::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_map(a, b, |x, y| x + y);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(t, Op::Add(a, b), tracked, "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_map(a, b, |x, y| x * y);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(t, Op::Mul(a, b), tracked, "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::of(s);
        let x = self.value(a);
        let t = Tensor::new(x.shape(), x.data().iter().map(|&v| v * s).collect())?;
        let tracked = self.tracked(a);
        self.push(t, Op::Scale(a, s), tracked, "scale")
    }

    /// `(a + b) * scale`.
    pub fn residual(&mut self, a: Var, b: Var, scale: f64) -> Result<Var> {
        self.same_shape("residual", a, b)?;
        let s = T::of(scale);
        let t = self.zip_map(a, b, |x, y| (x + y) * s);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(t, Op::Residual { a, b, scale: s }, tracked, "residual")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().copied().sum();
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Sum(a), tracked, "sum")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = kernels::relu(self.value(a));
        let tracked = self.tracked(a);
        self.push(t, Op::Relu(a), tracked, "relu")
    }

    pub fn glu(&mut self, a: Var) -> Result<Var> {
        let t = kernels::glu(self.value(a))?;
        let tracked = self.tracked(a);
        self.push(t, Op::Glu(a), tracked, "glu")
    }

    /// Inverted dropout in training graphs; identity otherwise.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        kernels::check_dropout_p(p)?;
        if p == 0.0 {
            return Ok(x);
        }
        let len = self.value(x).len();
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        let mask: Vec<T> = kernels::dropout_mask(len, p, rng);
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor::new(xv.shape(), data)?;
        let tracked = self.tracked(x);
        self.push(t, Op::Dropout { x, mask }, tracked, "dropout")
    }

    fn conv(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom, shape: Vec<usize>, name: &'static str) -> Result<Var> {
        let (y, cols) = kernels::conv_forward(&geom, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let t = Tensor::new(&shape, y)?;
        let tracked = self.tracked(x) || self.tracked(w) || self.tracked(b);
        self.push(t, Op::Conv { x, w, b, geom, cols }, tracked, name)
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, pad: Padding) -> Result<Var> {
        let geom = kernels::conv1d_geom(self.shape(x), self.shape(w), self.shape(b), pad)?;
        self.conv(x, w, b, geom, vec![geom.ow, geom.cout], "conv1d")
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: Padding2d) -> Result<Var> {
        let (geom, batched) = kernels::conv2d_geom(self.shape(x), self.shape(w), self.shape(b), pad)?;
        self.conv(x, w, b, geom, geom.out_shape(batched), "conv2d")
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (shape, out, argmax) = kernels::maxpool2_forward(self.shape(x), self.value(x).data())?;
        let t = Tensor::new(&shape, out)?;
        let tracked = self.tracked(x);
        self.push(t, Op::MaxPool { x, argmax }, tracked, "maxpool2")
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (rows, din, dout) = kernels::linear_check(self.shape(x), self.shape(w), self.shape(b))?;
        let y = kernels::linear_forward(rows, din, dout, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = dout;
        let t = Tensor::new(&shape, y)?;
        let tracked = self.tracked(x) || self.tracked(w) || self.tracked(b);
        self.push(t, Op::Linear { x, w, b, rows, din, dout }, tracked, "linear")
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || ScanError::shape("matmul", format!("{sa:?} x {sb:?} (trans_b={trans_b})"));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(bad());
        }
        let (m, k) = (sa[0], sa[1]);
        let n = if trans_b { sb[0] } else { sb[1] };
        let kb = if trans_b { sb[1] } else { sb[0] };
        if k != kb {
            return Err(bad());
        }
        let mut c = vec![T::zero(); m * n];
        kernels::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), trans_b, &mut c, false);
        let t = Tensor::new(&[m, n], c)?;
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(t, Op::MatMul { a, b, trans_b, m, k, n }, tracked, "matmul")
    }

    /// `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `[m, k] x [n, k]^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = kernels::softmax(self.value(x))?;
        let tracked = self.tracked(x);
        self.push(t, Op::Softmax(x), tracked, "softmax")
    }

    /// Rows `idx` of a `[R, d]` table.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 || idx.is_empty() {
            return Err(ScanError::shape("gather", format!("table {:?}", tv.shape())));
        }
        let (r, d) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            if i >= r {
                return Err(ScanError::TooLong { len: i + 1, max: r });
            }
            data.extend_from_slice(tv.row(i));
        }
        let t = Tensor::new(&[idx.len(), d], data)?;
        let tracked = self.tracked(table);
        self.push(t, Op::Gather { table, idx: idx.to_vec() }, tracked, "gather")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let tracked = self.tracked(x);
        self.push(t, Op::Reshape(x), tracked, "reshape")
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax of
    /// `logits` `[n, V]`; `None` rows are ignored.
    pub fn nll(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != targets.len() {
            return Err(ScanError::shape(
                "nll",
                format!("logits {:?} for {} targets", lv.shape(), targets.len()),
            ));
        }
        let v = lv.shape()[1];
        let mut loss = T::zero();
        let mut probs = Vec::with_capacity(lv.len());
        for (i, t) in targets.iter().enumerate() {
            let logp = kernels::log_softmax_row(lv.row(i));
            if let Some(t) = *t {
                if t >= v {
                    return Err(ScanError::UnknownToken(t));
                }
                loss -= logp[t];
            }
            probs.extend(logp.into_iter().map(|l| l.exp()));
        }
        let tracked = self.tracked(logits);
        self.push(
            Tensor::scalar(loss),
            Op::Nll {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            tracked,
            "nll",
        )
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(ScanError::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut out = Gradients::empty(self.params.len());
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let mut send = |v: Var, delta: Vec<T>| -> Result<()> {
                if v.0 >= i {
                    return Err(ScanError::Internal(format!("edge {i} -> {} is not backward", v.0)));
                }
                if !self.nodes[v.0].tracked {
                    return Ok(());
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, &d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
                Ok(())
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.add_slot(id.0, g),
                Op::Add(a, b) => {
                    send(*a, g.clone())?;
                    send(*b, g)?;
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    send(*a, g.iter().zip(bv).map(|(&g, &y)| g * y).collect())?;
                    send(*b, g.iter().zip(av).map(|(&g, &x)| g * x).collect())?;
                }
                Op::Scale(a, s) => send(*a, g.iter().map(|&g| g * *s).collect())?,
                Op::Residual { a, b, scale } => {
                    let d: Vec<T> = g.iter().map(|&g| g * *scale).collect();
                    send(*a, d.clone())?;
                    send(*b, d)?;
                }
                Op::Sum(a) => send(*a, vec![g[0]; self.value(*a).len()])?,
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    send(*a, g.iter().zip(x).map(|(&g, &x)| if x > T::zero() { g } else { T::zero() }).collect())?;
                }
                Op::Glu(a) => {
                    let x = self.value(*a);
                    let cols = x.cols();
                    let half = cols / 2;
                    let mut dx = vec![T::zero(); x.len()];
                    for (r, (row, drow)) in x.data().chunks(cols).zip(dx.chunks_mut(cols)).enumerate() {
                        for c in 0..half {
                            let (av, bv) = (row[c], row[half + c]);
                            let s = kernels::sigmoid(bv);
                            let go = g[r * half + c];
                            drow[c] = go * s;
                            drow[half + c] = go * av * s * (T::one() - s);
                        }
                    }
                    send(*a, dx)?;
                }
                Op::Dropout { x, mask } => send(*x, g.iter().zip(mask).map(|(&g, &m)| g * m).collect())?,
                Op::Conv { x, w, b, geom, cols } => {
                    let wv = self.value(*w).data();
                    let mut dw = vec![T::zero(); wv.len()];
                    let mut db = vec![T::zero(); geom.cout];
                    let want_dx = self.tracked(*x);
                    let dx = kernels::conv_backward(geom, cols, wv, &g, Some(&mut dw), Some(&mut db), want_dx);
                    send(*w, dw)?;
                    send(*b, db)?;
                    if let Some(dx) = dx {
                        send(*x, dx)?;
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let mut dx = vec![T::zero(); self.value(*x).len()];
                    for (&j, &gv) in argmax.iter().zip(&g) {
                        dx[j as usize] += gv;
                    }
                    send(*x, dx)?;
                }
                Op::Linear { x, w, b, rows, din, dout } => {
                    let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                    if self.tracked(*x) {
                        let mut dx = vec![T::zero(); rows * din];
                        kernels::gemm(*rows, *dout, *din, &g, false, wv, false, &mut dx, false);
                        send(*x, dx)?;
                    }
                    let mut dw = vec![T::zero(); dout * din];
                    kernels::gemm(*dout, *rows, *din, &g, true, xv, false, &mut dw, false);
                    send(*w, dw)?;
                    let mut db = vec![T::zero(); *dout];
                    for row in g.chunks(*dout) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                    send(*b, db)?;
                }
                Op::MatMul { a, b, trans_b, m, k, n } => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    if self.tracked(*a) {
                        let mut da = vec![T::zero(); m * k];
                        kernels::gemm(*m, *n, *k, &g, false, bv, !*trans_b, &mut da, false);
                        send(*a, da)?;
                    }
                    if self.tracked(*b) {
                        let mut db = vec![T::zero(); k * n];
                        if *trans_b {
                            kernels::gemm(*n, *m, *k, &g, true, av, false, &mut db, false);
                        } else {
                            kernels::gemm(*k, *m, *n, av, true, &g, false, &mut db, false);
                        }
                        send(*b, db)?;
                    }
                }
                Op::Softmax(x) => {
                    let y = self.value(Var(i));
                    let cols = y.cols();
                    let mut dx = Vec::with_capacity(y.len());
                    for (yr, gr) in y.data().chunks(cols).zip(g.chunks(cols)) {
                        let dot: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                        dx.extend(yr.iter().zip(gr).map(|(&y, &g)| y * (g - dot)));
                    }
                    send(*x, dx)?;
                }
                Op::Gather { table, idx } => {
                    let tv = self.value(*table);
                    let d = tv.cols();
                    let mut dt = vec![T::zero(); tv.len()];
                    for (r, &row) in idx.iter().enumerate() {
                        for c in 0..d {
                            dt[row * d + c] += g[r * d + c];
                        }
                    }
                    send(*table, dt)?;
                }
                Op::Reshape(x) => send(*x, g)?,
                Op::Nll { logits, targets, probs } => {
                    let v = self.value(*logits).cols();
                    let mut dl = vec![T::zero(); probs.len()];
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for c in 0..v {
                            dl[r * v + c] = probs[r * v + c] * g[0];
                        }
                        dl[r * v + t] -= g[0];
                    }
                    send(*logits, dl)?;
                }
            }
        }
        Ok(out)
    }
}
