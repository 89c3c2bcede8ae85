use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvGeometry};
use super::{check_finite, Tensor, TensorError};

/// Lower clamp applied to a probability before taking its log.
pub const LOG_CLAMP: f64 = 1e-12;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(0);

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine {
        x: usize,
        w: usize,
        b: usize,
        rows: usize,
        cols: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        geom: ConvGeometry,
    },
    Relu {
        x: usize,
    },
    Softmax {
        z: usize,
    },
    CrossEntropy {
        p: usize,
        target: usize,
    },
    SoftmaxCrossEntropy {
        z: usize,
        target: usize,
        probs: Vec<f64>,
    },
    Sum {
        x: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    AddN {
        xs: Vec<usize>,
    },
    Scale {
        x: usize,
        factor: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// Leaf flag for leaves; for op nodes, whether any operand needs a gradient.
    needs_grad: bool,
}

/// Records a forward computation so it can be differentiated.
///
/// A tape is meant to live for one forward/backward pass. Ops validate their
/// operand shapes and reject non-finite results. Nodes are appended in
/// execution order, so an operand always precedes the node that uses it.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[self.index(var).expect("variable from another tape")].value
    }

    /// Gradient of the last [`backward`](Self::backward) root with respect to
    /// a `requires_grad` leaf. `None` for leaves the root does not reach.
    pub fn grad(&self, var: Var) -> Option<&Tensor> {
        let i = self.index(var).ok()?;
        self.grads.get(i).and_then(Option::as_ref)
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let (xi, wi, bi) = (self.index(x)?, self.index(w)?, self.index(b)?);
        let (xv, wv, bv) = (&self.nodes[xi].value, &self.nodes[wi].value, &self.nodes[bi].value);
        if wv.shape().len() != 2 {
            return Err(mismatch("affine", "rank-2 weight", wv.shape()));
        }
        let (rows, cols) = (wv.shape()[0], wv.shape()[1]);
        if xv.shape() != [cols] {
            return Err(mismatch("affine", format!("input [{cols}]"), xv.shape()));
        }
        if bv.shape() != [rows] {
            return Err(mismatch("affine", format!("bias [{rows}]"), bv.shape()));
        }
        let out = kernels::affine(xv.data(), wv.data(), bv.data(), rows, cols);
        self.push_op(
            "affine",
            vec![rows],
            out,
            Op::Affine {
                x: xi,
                w: wi,
                b: bi,
                rows,
                cols,
            },
        )
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Result<Var, TensorError> {
        let (xi, wi, bi) = (self.index(x)?, self.index(w)?, self.index(b)?);
        let (xv, wv, bv) = (&self.nodes[xi].value, &self.nodes[wi].value, &self.nodes[bi].value);
        if xv.len() != geom.input_len() {
            return Err(mismatch(
                "conv2d",
                format!("input of {} values", geom.input_len()),
                xv.shape(),
            ));
        }
        if wv.len() != geom.weight_len() {
            return Err(mismatch(
                "conv2d",
                format!("weight of {} values", geom.weight_len()),
                wv.shape(),
            ));
        }
        if bv.len() != geom.out_channels {
            return Err(mismatch("conv2d", format!("bias [{}]", geom.out_channels), bv.shape()));
        }
        let out = kernels::conv2d(xv.data(), wv.data(), bv.data(), &geom);
        self.push_op(
            "conv2d",
            vec![geom.output_len()],
            out,
            Op::Conv2d {
                x: xi,
                w: wi,
                b: bi,
                geom,
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let xi = self.index(x)?;
        let value = &self.nodes[xi].value;
        let shape = value.shape().to_vec();
        let out = kernels::relu(value.data());
        self.push_op("relu", shape, out, Op::Relu { x: xi })
    }

    pub fn softmax(&mut self, z: Var) -> Result<Var, TensorError> {
        let zi = self.index(z)?;
        let value = &self.nodes[zi].value;
        if value.shape().len() != 1 {
            return Err(mismatch("softmax", "vector", value.shape()));
        }
        if value.len() < 2 {
            return Err(TensorError::TooFewLogits(value.len()));
        }
        let out = kernels::softmax(value.data());
        self.push_op("softmax", vec![out.len()], out, Op::Softmax { z: zi })
    }

    /// `-ln(max(p[target], LOG_CLAMP))` for a probability vector `p`.
    pub fn cross_entropy(&mut self, p: Var, target: usize) -> Result<Var, TensorError> {
        let pi = self.index(p)?;
        let value = &self.nodes[pi].value;
        if value.shape().len() != 1 {
            return Err(mismatch("cross_entropy", "vector", value.shape()));
        }
        if target >= value.len() {
            return Err(TensorError::TargetOutOfRange {
                target,
                classes: value.len(),
            });
        }
        let loss = -value.data()[target].max(LOG_CLAMP).ln();
        self.push_op("cross_entropy", vec![], vec![loss], Op::CrossEntropy { p: pi, target })
    }

    /// Softmax followed by cross-entropy, computed from the logits as
    /// `logsumexp(z) - z[target]`. The gradient is `softmax(z) - onehot`,
    /// which stays accurate when the prediction is saturated.
    pub fn softmax_cross_entropy(&mut self, z: Var, target: usize) -> Result<Var, TensorError> {
        let zi = self.index(z)?;
        let value = &self.nodes[zi].value;
        if value.shape().len() != 1 {
            return Err(mismatch("softmax_cross_entropy", "vector", value.shape()));
        }
        if value.len() < 2 {
            return Err(TensorError::TooFewLogits(value.len()));
        }
        if target >= value.len() {
            return Err(TensorError::TargetOutOfRange {
                target,
                classes: value.len(),
            });
        }
        let loss = kernels::log_sum_exp(value.data()) - value.data()[target];
        let probs = kernels::softmax(value.data());
        self.push_op(
            "softmax_cross_entropy",
            vec![],
            vec![loss],
            Op::SoftmaxCrossEntropy { z: zi, target, probs },
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let xi = self.index(x)?;
        let total = self.nodes[xi].value.data().iter().sum();
        self.push_op("sum", vec![], vec![total], Op::Sum { x: xi })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if av.shape() != bv.shape() {
            return Err(mismatch("add", format!("{:?}", av.shape()), bv.shape()));
        }
        let shape = av.shape().to_vec();
        let out = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        self.push_op("add", shape, out, Op::Add { a: ai, b: bi })
    }

    /// Sum of same-shaped operands, accumulated left to right.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        let indices = xs.iter().map(|&v| self.index(v)).collect::<Result<Vec<_>, _>>()?;
        let first = indices
            .first()
            .ok_or_else(|| mismatch("add_n", "at least one operand", &[]))?;
        let shape = self.nodes[*first].value.shape().to_vec();
        let mut out = vec![0.0; self.nodes[*first].value.len()];
        for &i in &indices {
            let v = &self.nodes[i].value;
            if v.shape() != shape.as_slice() {
                return Err(mismatch("add_n", format!("{shape:?}"), v.shape()));
            }
            out.iter_mut().zip(v.data()).for_each(|(o, x)| *o += x);
        }
        self.push_op("add_n", shape, out, Op::AddN { xs: indices })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, TensorError> {
        let xi = self.index(x)?;
        let value = &self.nodes[xi].value;
        let shape = value.shape().to_vec();
        let out = value.data().iter().map(|v| v * factor).collect();
        self.push_op("scale", shape, out, Op::Scale { x: xi, factor })
    }

    /// Back-propagates from a scalar `root`, replacing any gradients left by
    /// an earlier call. A leaf used several times receives the sum of the
    /// contributions of each use.
    pub fn backward(&mut self, root: Var) -> Result<(), TensorError> {
        let root = self.index(root)?;
        if !self.nodes[root].value.is_scalar() {
            return Err(TensorError::NotScalar(self.nodes[root].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        grads[root] = Some(vec![1.0]);

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let nodes = &self.nodes;
            let wants = |j: usize| nodes[j].needs_grad;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                &Op::Affine { x, w, b, rows, cols } => {
                    if wants(x) {
                        let wv = nodes[w].value.data();
                        let gx = slot(&mut grads, x, cols);
                        for (r, gr) in g.iter().enumerate() {
                            let row = &wv[r * cols..(r + 1) * cols];
                            gx.iter_mut().zip(row).for_each(|(a, wij)| *a += gr * wij);
                        }
                    }
                    if wants(w) {
                        let xv = nodes[x].value.data();
                        let gw = slot(&mut grads, w, rows * cols);
                        for (r, gr) in g.iter().enumerate() {
                            let row = &mut gw[r * cols..(r + 1) * cols];
                            row.iter_mut().zip(xv).for_each(|(a, xj)| *a += gr * xj);
                        }
                    }
                    if wants(b) {
                        let gb = slot(&mut grads, b, rows);
                        gb.iter_mut().zip(&g).for_each(|(a, gr)| *a += gr);
                    }
                }
                &Op::Conv2d { x, w, b, geom } => {
                    let (xv, wv) = (nodes[x].value.data(), nodes[w].value.data());
                    // Operands are distinct nodes; take each buffer out to
                    // hold three disjoint mutable borrows.
                    let mut gx = wants(x).then(|| take_slot(&mut grads, x, geom.input_len()));
                    let mut gw = wants(w).then(|| take_slot(&mut grads, w, geom.weight_len()));
                    let mut gb = wants(b).then(|| take_slot(&mut grads, b, geom.out_channels));
                    kernels::conv2d_backward(
                        xv,
                        wv,
                        &g,
                        &geom,
                        gx.as_deref_mut(),
                        gw.as_deref_mut(),
                        gb.as_deref_mut(),
                    );
                    for (j, buf) in [(x, gx), (w, gw), (b, gb)] {
                        if let Some(buf) = buf {
                            grads[j] = Some(buf);
                        }
                    }
                }
                &Op::Relu { x } => {
                    let xv = nodes[x].value.data();
                    let gx = slot(&mut grads, x, xv.len());
                    for ((a, gi), xi) in gx.iter_mut().zip(&g).zip(xv) {
                        if *xi > 0.0 {
                            *a += gi;
                        }
                    }
                }
                &Op::Softmax { z } => {
                    let p = node.value.data();
                    let dot: f64 = p.iter().zip(&g).map(|(pi, gi)| pi * gi).sum();
                    let gz = slot(&mut grads, z, p.len());
                    for ((a, pi), gi) in gz.iter_mut().zip(p).zip(&g) {
                        *a += pi * (gi - dot);
                    }
                }
                &Op::CrossEntropy { p, target } => {
                    let pv = nodes[p].value.data();
                    let gp = slot(&mut grads, p, pv.len());
                    gp[target] -= g[0] / pv[target].max(LOG_CLAMP);
                }
                Op::SoftmaxCrossEntropy { z, target, probs } => {
                    let gz = slot(&mut grads, *z, probs.len());
                    for (l, (a, pl)) in gz.iter_mut().zip(probs).enumerate() {
                        let y = if l == *target { 1.0 } else { 0.0 };
                        *a += g[0] * (pl - y);
                    }
                }
                &Op::Sum { x } => {
                    let n = nodes[x].value.len();
                    slot(&mut grads, x, n).iter_mut().for_each(|a| *a += g[0]);
                }
                &Op::Add { a, b } => {
                    for j in [a, b] {
                        if wants(j) {
                            let gj = slot(&mut grads, j, g.len());
                            gj.iter_mut().zip(&g).for_each(|(acc, gi)| *acc += gi);
                        }
                    }
                }
                Op::AddN { xs } => {
                    for &j in xs {
                        if wants(j) {
                            let gj = slot(&mut grads, j, g.len());
                            gj.iter_mut().zip(&g).for_each(|(acc, gi)| *acc += gi);
                        }
                    }
                }
                &Op::Scale { x, factor } => {
                    let gx = slot(&mut grads, x, g.len());
                    gx.iter_mut().zip(&g).for_each(|(acc, gi)| *acc += factor * gi);
                }
            }
        }

        let mut stored = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let grad = match (&node.op, grads.get_mut(i).and_then(Option::take)) {
                (Op::Leaf, Some(g)) if node.needs_grad => {
                    check_finite("backward", &g)?;
                    Some(Tensor::new(node.value.shape().to_vec(), g)?)
                }
                _ => None,
            };
            stored.push(grad);
        }
        self.grads = stored;
        Ok(())
    }

    fn index(&self, var: Var) -> Result<usize, TensorError> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(TensorError::ForeignVar);
        }
        Ok(var.index)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn push_op(&mut self, name: &'static str, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<Var, TensorError> {
        check_finite(name, &data)?;
        let value = Tensor::new(shape, data)?;
        let needs_grad = operands(&op).iter().any(|&j| self.nodes[j].needs_grad);
        Ok(self.push(value, op, needs_grad))
    }
}

fn operands(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf => vec![],
        Op::Affine { x, w, b, .. } | Op::Conv2d { x, w, b, .. } => vec![*x, *w, *b],
        Op::Relu { x } | Op::Sum { x } | Op::Scale { x, .. } => vec![*x],
        Op::Softmax { z } | Op::SoftmaxCrossEntropy { z, .. } => vec![*z],
        Op::CrossEntropy { p, .. } => vec![*p],
        Op::Add { a, b } => vec![*a, *b],
        Op::AddN { xs } => xs.clone(),
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut Vec<f64> {
    grads[i].get_or_insert_with(|| vec![0.0; len])
}

fn take_slot(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> Vec<f64> {
    grads[i].take().unwrap_or_else(|| vec![0.0; len])
}

fn mismatch(op: &'static str, expected: impl Into<String>, got: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        expected: expected.into(),
        got: format!("{got:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_leaf(tape: &mut Tape, data: &[f64]) -> Var {
        tape.leaf(Tensor::vector(data.to_vec()).unwrap(), true)
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[3.0, -4.0]);
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn diamond_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.5).unwrap(), true);
        let y = tape.add(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), Some(2.0));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0]);
        assert!(matches!(tape.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn only_requires_grad_leaves_get_grads() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0]);
        let c = tape.constant(Tensor::vector(vec![5.0, 5.0]).unwrap());
        let unused = vec_leaf(&mut tape, &[0.0]);
        let y = tape.add(x, c).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(x).is_some());
        assert!(tape.grad(c).is_none());
        assert!(tape.grad(unused).is_none());
        assert!(tape.grad(y).is_none());
    }

    #[test]
    fn affine_input_grad_is_column_sums() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[0.5, -1.0]);
        let w = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true);
        let b = tape.leaf(Tensor::vector(vec![0.0, 0.0]).unwrap(), true);
        let y = tape.affine(x, w, b).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(tape.grad(w).unwrap().data(), &[0.5, -1.0, 0.5, -1.0]);
        assert_eq!(tape.grad(b).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn affine_shape_errors() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0, 3.0]);
        let w = tape.constant(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::vector(vec![0.0]).unwrap());
        assert!(matches!(tape.affine(x, w, b), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn cross_entropy_values() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::vector(vec![1.0, 0.0]).unwrap());
        let l = tape.cross_entropy(p, 0).unwrap();
        assert_eq!(tape.value(l).item(), Some(0.0));
        let half = tape.constant(Tensor::vector(vec![0.5, 0.5]).unwrap());
        for t in 0..2 {
            let l = tape.cross_entropy(half, t).unwrap();
            assert!((tape.value(l).item().unwrap() - 2f64.ln()).abs() < 1e-15);
        }
        // Clamped rather than infinite.
        let l = tape.cross_entropy(p, 1).unwrap();
        assert!((tape.value(l).item().unwrap() + LOG_CLAMP.ln()).abs() < 1e-12);
        assert!(tape.cross_entropy(p, 2).is_err());
    }

    #[test]
    fn linear_softmax_input_gradient() {
        // logits = W x with W = [[1, 0], [-1, 0]] at x = 0, target 0:
        // dL/dx = W^T (p - y) = W^T (-0.5, 0.5) = (-1, 0).
        for fused in [false, true] {
            let mut tape = Tape::new();
            let x = vec_leaf(&mut tape, &[0.0, 0.0]);
            let w = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap());
            let b = tape.constant(Tensor::vector(vec![0.0, 0.0]).unwrap());
            let z = tape.affine(x, w, b).unwrap();
            let loss = if fused {
                tape.softmax_cross_entropy(z, 0).unwrap()
            } else {
                let p = tape.softmax(z).unwrap();
                tape.cross_entropy(p, 0).unwrap()
            };
            tape.backward(loss).unwrap();
            let g = tape.grad(x).unwrap().data();
            assert!((g[0] + 1.0).abs() < 1e-15 && g[1].abs() < 1e-15, "{g:?}");
        }
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[-1.0, 0.0, 2.0]);
        let r = tape.relu(x).unwrap();
        let s = tape.sum(r).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn foreign_var_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.leaf(Tensor::scalar(1.0).unwrap(), true);
        b.leaf(Tensor::scalar(1.0).unwrap(), true);
        assert_eq!(b.relu(x), Err(TensorError::ForeignVar));
    }

    #[test]
    fn overflow_is_reported() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1e308, 1e308]).unwrap(), true);
        assert_eq!(tape.sum(x), Err(TensorError::NonFinite { op: "sum" }));
    }
}
