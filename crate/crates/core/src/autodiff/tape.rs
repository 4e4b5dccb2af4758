use std::cell::RefCell;

use super::kernels::{self, HeadKernel};
use super::tensor::Tensor;
use super::AutodiffError;

/// Evaluation precision applied to every node value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F64,
    F32,
}

// Some payload fields exist only for Debug output (backward does not need
// them); dead-code analysis flags those.
#[derive(Debug)]
#[allow(dead_code)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MinElem(usize, usize),
    Scale(usize, f64),
    AddScalar(usize, f64),
    Exp(usize),
    Ln(usize),
    Tanh(usize),
    Clamp {
        arg: usize,
        lo: Option<f64>,
        hi: Option<f64>,
    },
    MatVec {
        w: usize,
        x: usize,
    },
    VecMat {
        x: usize,
        w: usize,
    },
    Outer(usize, usize),
    Dot(usize, usize),
    RmsNorm(usize),
    Softmax(usize),
    LogSoftmax(usize),
    SumAll(usize),
    Component {
        arg: usize,
        index: usize,
    },
    Slice {
        arg: usize,
        offset: usize,
        len: usize,
    },
    Concat(Vec<usize>),
    AttnMix {
        weights: usize,
        values: Vec<usize>,
    },
    Row {
        matrix: usize,
        index: usize,
    },
    HeadMatVec {
        w: usize,
        x: usize,
        mode: HeadKernel,
    },
    StopGrad(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MinElem(..) => "min_elem",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Tanh(..) => "tanh",
            Op::Clamp { .. } => "clamp",
            Op::MatVec { .. } => "matvec",
            Op::VecMat { .. } => "vecmat",
            Op::Outer(..) => "outer",
            Op::Dot(..) => "dot",
            Op::RmsNorm(..) => "rms_norm",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::SumAll(..) => "sum",
            Op::Component { .. } => "component",
            Op::Slice { .. } => "slice",
            Op::Concat(..) => "concat",
            Op::AttnMix { .. } => "attn_mix",
            Op::Row { .. } => "row",
            Op::HeadMatVec { .. } => "head_matvec",
            Op::StopGrad(..) => "stop_gradient",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Eagerly-traced computation graph.
///
/// Operations evaluate at construction time (the forward pass) and record
/// enough structure for [`Tape::backward`]. Shape mismatches are programmer
/// errors and panic; a non-finite value produced anywhere marks the tape
/// faulted, and `backward` (or an explicit [`Tape::check_finite`]) reports it
/// as an error rather than letting NaN/Inf propagate silently.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    precision: Precision,
    fault: RefCell<Option<String>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to one node of a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients of a scalar output with respect to tape nodes.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, if any flowed to it.
    pub fn wrt(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, or zeros of the given shape if none reached it.
    pub fn wrt_or_zeros(&self, var: Var<'_>, shape: &[usize]) -> Tensor {
        match self.wrt(var) {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_precision(Precision::F64)
    }

    /// Tape whose node values are all rounded to the given precision.
    pub fn with_precision(precision: Precision) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            precision,
            fault: RefCell::new(None),
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First non-finite fault recorded on this tape, if any.
    pub fn fault(&self) -> Option<String> {
        self.fault.borrow().clone()
    }

    /// Err if any op so far produced a non-finite value.
    pub fn check_finite(&self) -> Result<(), AutodiffError> {
        match self.fault() {
            Some(f) => Err(AutodiffError::NonFinite(f)),
            None => Ok(()),
        }
    }

    /// Differentiable leaf (a parameter).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, true)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, false)
    }

    pub fn constant_scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, op: Op, mut value: Tensor, requires_grad: bool) -> Var<'_> {
        if self.precision == Precision::F32 {
            for v in value.data_mut() {
                *v = f64::from(*v as f32);
            }
        }
        if !value.all_finite() && self.fault.borrow().is_none() {
            *self.fault.borrow_mut() = Some(format!(
                "op '{}' at node {}",
                op.name(),
                self.nodes.borrow().len()
            ));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn with_node<R>(&self, id: usize, f: impl FnOnce(&Node) -> R) -> R {
        let nodes = self.nodes.borrow();
        f(&nodes[id])
    }

    fn binary_elementwise(
        &self,
        a: Var<'_>,
        b: Var<'_>,
        op: fn(usize, usize) -> Op,
        f: fn(f64, f64) -> f64,
    ) -> Var<'_> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.id], &nodes[b.id]);
            assert_eq!(
                na.value.shape(),
                nb.value.shape(),
                "elementwise op on mismatched shapes"
            );
            let data = na
                .value
                .data()
                .iter()
                .zip(nb.value.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            (
                Tensor::new(na.value.shape().to_vec(), data),
                na.requires_grad || nb.requires_grad,
            )
        };
        self.push(op(a.id, b.id), value, rg)
    }

    fn unary_map(&self, a: Var<'_>, op: Op, f: impl Fn(f64) -> f64) -> Var<'_> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.id];
            let data = na.value.data().iter().map(|&x| f(x)).collect();
            (
                Tensor::new(na.value.shape().to_vec(), data),
                na.requires_grad,
            )
        };
        self.push(op, value, rg)
    }

    /// Concatenate vectors (and scalars) into one vector.
    pub fn concat(&self, parts: &[Var<'_>]) -> Var<'_> {
        assert!(!parts.is_empty(), "concat of zero vars");
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let mut data = Vec::new();
            let mut rg = false;
            for p in parts {
                let n = &nodes[p.id];
                assert!(
                    n.value.shape().len() <= 1,
                    "concat expects scalars or vectors"
                );
                data.extend_from_slice(n.value.data());
                rg |= n.requires_grad;
            }
            (Tensor::vector(data), rg)
        };
        self.push(Op::Concat(parts.iter().map(|p| p.id).collect()), value, rg)
    }

    /// Weighted mixture sum_j weights[j] * values[j] of equal-length vectors.
    pub fn attn_mix(&self, weights: Var<'_>, values: &[Var<'_>]) -> Var<'_> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let wn = &nodes[weights.id];
            assert_eq!(wn.value.shape().len(), 1, "attn_mix weights must be a vector");
            assert_eq!(wn.value.len(), values.len(), "attn_mix arity mismatch");
            assert!(!values.is_empty(), "attn_mix over zero values");
            let dim = nodes[values[0].id].value.len();
            let mut rg = wn.requires_grad;
            let mut slices = Vec::with_capacity(values.len());
            for v in values {
                let vn = &nodes[v.id];
                assert_eq!(vn.value.len(), dim, "attn_mix value length mismatch");
                slices.push(vn.value.data());
                rg |= vn.requires_grad;
            }
            let mut out = vec![0.0; dim];
            kernels::attn_mix(wn.value.data(), &slices, &mut out);
            (Tensor::vector(out), rg)
        };
        self.push(
            Op::AttnMix {
                weights: weights.id,
                values: values.iter().map(|v| v.id).collect(),
            },
            value,
            rg,
        )
    }

    /// Reverse accumulation from a scalar output to every reachable node.
    ///
    /// Accumulation visits nodes in fixed reverse creation order, so the
    /// result is independent of how the graph was scheduled.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients, AutodiffError> {
        self.check_finite()?;
        let nodes = self.nodes.borrow();
        let out_node = &nodes[output.id];
        if !out_node.value.is_scalar() {
            return Err(AutodiffError::NonScalarOutput(
                out_node.value.shape().to_vec(),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.id + 1];
        if !out_node.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[output.id] = Some(Tensor::scalar(1.0));

        for id in (0..=output.id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let g = grad.data();
            let mut send = |parent: usize, contribution: Tensor| {
                if !nodes[parent].requires_grad {
                    return;
                }
                match &mut grads[parent] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(contribution.data()) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(contribution),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(grad);
                    continue;
                }
                Op::Add(a, b) => {
                    send(*a, grad.clone());
                    send(*b, grad.clone());
                }
                Op::Sub(a, b) => {
                    send(*a, grad.clone());
                    let neg =
                        Tensor::new(grad.shape().to_vec(), g.iter().map(|v| -v).collect());
                    send(*b, neg);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    send(
                        *a,
                        Tensor::new(
                            grad.shape().to_vec(),
                            g.iter().zip(vb.data()).map(|(x, y)| x * y).collect(),
                        ),
                    );
                    send(
                        *b,
                        Tensor::new(
                            grad.shape().to_vec(),
                            g.iter().zip(va.data()).map(|(x, y)| x * y).collect(),
                        ),
                    );
                }
                Op::MinElem(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    let to_a: Vec<f64> = g
                        .iter()
                        .zip(va.data().iter().zip(vb.data()))
                        .map(|(gv, (x, y))| if x <= y { *gv } else { 0.0 })
                        .collect();
                    let to_b: Vec<f64> = g
                        .iter()
                        .zip(va.data().iter().zip(vb.data()))
                        .map(|(gv, (x, y))| if x <= y { 0.0 } else { *gv })
                        .collect();
                    send(*a, Tensor::new(grad.shape().to_vec(), to_a));
                    send(*b, Tensor::new(grad.shape().to_vec(), to_b));
                }
                Op::Scale(a, c) => {
                    send(
                        *a,
                        Tensor::new(grad.shape().to_vec(), g.iter().map(|v| v * c).collect()),
                    );
                }
                Op::AddScalar(a, _) => send(*a, grad.clone()),
                Op::Exp(a) => {
                    send(
                        *a,
                        Tensor::new(
                            grad.shape().to_vec(),
                            g.iter()
                                .zip(node.value.data())
                                .map(|(gv, out)| gv * out)
                                .collect(),
                        ),
                    );
                }
                Op::Ln(a) => {
                    let va = &nodes[*a].value;
                    send(
                        *a,
                        Tensor::new(
                            grad.shape().to_vec(),
                            g.iter().zip(va.data()).map(|(gv, x)| gv / x).collect(),
                        ),
                    );
                }
                Op::Tanh(a) => {
                    send(
                        *a,
                        Tensor::new(
                            grad.shape().to_vec(),
                            g.iter()
                                .zip(node.value.data())
                                .map(|(gv, y)| gv * (1.0 - y * y))
                                .collect(),
                        ),
                    );
                }
                Op::Clamp { arg, lo, hi } => {
                    let va = &nodes[*arg].value;
                    let passed: Vec<f64> = g
                        .iter()
                        .zip(va.data())
                        .map(|(gv, &x)| {
                            let below = lo.map_or(false, |l| x < l);
                            let above = hi.map_or(false, |h| x > h);
                            if below || above {
                                0.0
                            } else {
                                *gv
                            }
                        })
                        .collect();
                    send(*arg, Tensor::new(grad.shape().to_vec(), passed));
                }
                Op::MatVec { w, x } | Op::HeadMatVec { w, x, .. } => {
                    let (vw, vx) = (&nodes[*w].value, &nodes[*x].value);
                    let (rows, cols) = (vw.rows(), vw.cols());
                    let mut dw = vec![0.0; rows * cols];
                    kernels::outer(g, vx.data(), &mut dw);
                    send(*w, Tensor::new(vec![rows, cols], dw));
                    let mut dx = vec![0.0; cols];
                    kernels::vecmat(g, vw.data(), rows, cols, &mut dx);
                    send(*x, Tensor::vector(dx));
                }
                Op::VecMat { x, w } => {
                    let (vx, vw) = (&nodes[*x].value, &nodes[*w].value);
                    let (rows, cols) = (vw.rows(), vw.cols());
                    let mut dx = vec![0.0; rows];
                    kernels::matvec(vw.data(), rows, cols, g, &mut dx);
                    send(*x, Tensor::vector(dx));
                    let mut dw = vec![0.0; rows * cols];
                    kernels::outer(vx.data(), g, &mut dw);
                    send(*w, Tensor::new(vec![rows, cols], dw));
                }
                Op::Outer(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    let (m, n) = (va.len(), vb.len());
                    let mut da = vec![0.0; m];
                    kernels::matvec(g, m, n, vb.data(), &mut da);
                    send(*a, Tensor::vector(da));
                    let mut db = vec![0.0; n];
                    kernels::vecmat(va.data(), g, m, n, &mut db);
                    send(*b, Tensor::vector(db));
                }
                Op::Dot(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    let gv = g[0];
                    send(
                        *a,
                        Tensor::vector(vb.data().iter().map(|x| gv * x).collect()),
                    );
                    send(
                        *b,
                        Tensor::vector(va.data().iter().map(|x| gv * x).collect()),
                    );
                }
                Op::RmsNorm(a) => {
                    let va = &nodes[*a].value;
                    let x = va.data();
                    let n = x.len() as f64;
                    let s = kernels::rms_scale(x);
                    let gx = kernels::dot(g, x);
                    let coef = gx / (n * s * s * s);
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(x)
                        .map(|(gv, xv)| gv / s - coef * xv)
                        .collect();
                    send(*a, Tensor::vector(dx));
                }
                Op::Softmax(a) => {
                    let p = node.value.data();
                    let gp = kernels::dot(g, p);
                    let dx: Vec<f64> = g.iter().zip(p).map(|(gv, pv)| pv * (gv - gp)).collect();
                    send(*a, Tensor::vector(dx));
                }
                Op::LogSoftmax(a) => {
                    let gsum: f64 = g.iter().sum();
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(gv, lp)| gv - lp.exp() * gsum)
                        .collect();
                    send(*a, Tensor::vector(dx));
                }
                Op::SumAll(a) => {
                    let va = &nodes[*a].value;
                    let gv = g[0];
                    send(
                        *a,
                        Tensor::new(va.shape().to_vec(), vec![gv; va.len()]),
                    );
                }
                Op::Component { arg, index } => {
                    let va = &nodes[*arg].value;
                    let mut dx = vec![0.0; va.len()];
                    dx[*index] = g[0];
                    send(*arg, Tensor::new(va.shape().to_vec(), dx));
                }
                Op::Slice { arg, offset, len } => {
                    let va = &nodes[*arg].value;
                    let mut dx = vec![0.0; va.len()];
                    dx[*offset..offset + len].copy_from_slice(g);
                    send(*arg, Tensor::new(va.shape().to_vec(), dx));
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let plen = nodes[*p].value.len();
                        let piece = Tensor::new(
                            nodes[*p].value.shape().to_vec(),
                            g[offset..offset + plen].to_vec(),
                        );
                        send(*p, piece);
                        offset += plen;
                    }
                }
                Op::AttnMix { weights, values } => {
                    let wv = &nodes[*weights].value;
                    let mut dw = vec![0.0; values.len()];
                    for (j, v) in values.iter().enumerate() {
                        let vv = &nodes[*v].value;
                        dw[j] = kernels::dot(g, vv.data());
                        let wj = wv.data()[j];
                        send(
                            *v,
                            Tensor::vector(g.iter().map(|gv| gv * wj).collect()),
                        );
                    }
                    send(*weights, Tensor::vector(dw));
                }
                Op::Row { matrix, index } => {
                    let vm = &nodes[*matrix].value;
                    let (rows, cols) = (vm.rows(), vm.cols());
                    let mut dm = vec![0.0; rows * cols];
                    dm[index * cols..(index + 1) * cols].copy_from_slice(g);
                    send(*matrix, Tensor::new(vec![rows, cols], dm));
                }
                Op::StopGrad(_) => {}
            }
        }

        for g in grads.iter().flatten() {
            if !g.all_finite() {
                return Err(AutodiffError::NonFiniteGradient);
            }
        }
        Ok(Gradients { grads })
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Clone of this node's value.
    pub fn value(&self) -> Tensor {
        self.tape.with_node(self.id, |n| n.value.clone())
    }

    pub fn scalar_value(&self) -> f64 {
        self.tape.with_node(self.id, |n| n.value.scalar_value())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_node(self.id, |n| n.value.shape().to_vec())
    }

    pub fn len(&self) -> usize {
        self.tape.with_node(self.id, |n| n.value.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.with_node(self.id, |n| n.requires_grad)
    }

    /// Apply a closure to the node value without cloning it.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        self.tape.with_node(self.id, |n| f(&n.value))
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.tape
            .binary_elementwise(self, other, Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.tape
            .binary_elementwise(self, other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.tape
            .binary_elementwise(self, other, Op::Mul, |a, b| a * b)
    }

    /// Elementwise minimum; gradient follows the smaller argument
    /// (ties route to `self`).
    pub fn min_elem(self, other: Var<'t>) -> Var<'t> {
        self.tape
            .binary_elementwise(self, other, Op::MinElem, f64::min)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape.unary_map(self, Op::Scale(self.id, c), |x| x * c)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.tape
            .unary_map(self, Op::AddScalar(self.id, c), |x| x + c)
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary_map(self, Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.tape.unary_map(self, Op::Ln(self.id), f64::ln)
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.unary_map(self, Op::Tanh(self.id), f64::tanh)
    }

    /// Clamp with constant bounds; either side may be absent.
    pub fn clamp_const(self, lo: Option<f64>, hi: Option<f64>) -> Var<'t> {
        let op = Op::Clamp {
            arg: self.id,
            lo,
            hi,
        };
        self.tape.unary_map(self, op, |x| {
            let mut v = x;
            if let Some(l) = lo {
                v = v.max(l);
            }
            if let Some(h) = hi {
                v = v.min(h);
            }
            v
        })
    }

    /// `self` is a matrix [m, n]; returns `self * x` of length m.
    pub fn matvec(self, x: Var<'t>) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (nw, nx) = (&nodes[self.id], &nodes[x.id]);
            let (rows, cols) = (nw.value.rows(), nw.value.cols());
            assert_eq!(nx.value.len(), cols, "matvec dimension mismatch");
            let mut out = vec![0.0; rows];
            kernels::matvec(nw.value.data(), rows, cols, nx.value.data(), &mut out);
            (Tensor::vector(out), nw.requires_grad || nx.requires_grad)
        };
        self.tape
            .push(Op::MatVec { w: self.id, x: x.id }, value, rg)
    }

    /// `self` is a vector of length m; returns `self^T w` for `w` [m, n].
    pub fn vecmat(self, w: Var<'t>) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (nx, nw) = (&nodes[self.id], &nodes[w.id]);
            let (rows, cols) = (nw.value.rows(), nw.value.cols());
            assert_eq!(nx.value.len(), rows, "vecmat dimension mismatch");
            let mut out = vec![0.0; cols];
            kernels::vecmat(nx.value.data(), nw.value.data(), rows, cols, &mut out);
            (Tensor::vector(out), nx.requires_grad || nw.requires_grad)
        };
        self.tape
            .push(Op::VecMat { x: self.id, w: w.id }, value, rg)
    }

    pub fn outer(self, other: Var<'t>) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (na, nb) = (&nodes[self.id], &nodes[other.id]);
            let (m, n) = (na.value.len(), nb.value.len());
            let mut out = vec![0.0; m * n];
            kernels::outer(na.value.data(), nb.value.data(), &mut out);
            (
                Tensor::new(vec![m, n], out),
                na.requires_grad || nb.requires_grad,
            )
        };
        self.tape.push(Op::Outer(self.id, other.id), value, rg)
    }

    pub fn dot(self, other: Var<'t>) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (na, nb) = (&nodes[self.id], &nodes[other.id]);
            assert_eq!(na.value.len(), nb.value.len(), "dot length mismatch");
            (
                Tensor::scalar(kernels::dot(na.value.data(), nb.value.data())),
                na.requires_grad || nb.requires_grad,
            )
        };
        self.tape.push(Op::Dot(self.id, other.id), value, rg)
    }

    pub fn rms_norm(self) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let na = &nodes[self.id];
            let mut out = vec![0.0; na.value.len()];
            kernels::rms_norm(na.value.data(), &mut out);
            (Tensor::vector(out), na.requires_grad)
        };
        self.tape.push(Op::RmsNorm(self.id), value, rg)
    }

    pub fn softmax(self) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let na = &nodes[self.id];
            let mut out = vec![0.0; na.value.len()];
            kernels::softmax(na.value.data(), &mut out);
            (Tensor::vector(out), na.requires_grad)
        };
        self.tape.push(Op::Softmax(self.id), value, rg)
    }

    pub fn log_softmax(self) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let na = &nodes[self.id];
            let mut out = vec![0.0; na.value.len()];
            kernels::log_softmax(na.value.data(), &mut out);
            (Tensor::vector(out), na.requires_grad)
        };
        self.tape.push(Op::LogSoftmax(self.id), value, rg)
    }

    pub fn sum(self) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let na = &nodes[self.id];
            let mut acc = 0.0;
            for v in na.value.data() {
                acc += v;
            }
            (Tensor::scalar(acc), na.requires_grad)
        };
        self.tape.push(Op::SumAll(self.id), value, rg)
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.len() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn component(self, index: usize) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let na = &nodes[self.id];
            assert!(index < na.value.len(), "component index out of range");
            (
                Tensor::scalar(na.value.data()[index]),
                na.requires_grad,
            )
        };
        self.tape.push(
            Op::Component {
                arg: self.id,
                index,
            },
            value,
            rg,
        )
    }

    pub fn slice(self, offset: usize, len: usize) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let na = &nodes[self.id];
            assert!(offset + len <= na.value.len(), "slice out of range");
            (
                Tensor::vector(na.value.data()[offset..offset + len].to_vec()),
                na.requires_grad,
            )
        };
        self.tape.push(
            Op::Slice {
                arg: self.id,
                offset,
                len,
            },
            value,
            rg,
        )
    }

    /// Row of a matrix node (embedding lookup).
    pub fn row(self, index: usize) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let na = &nodes[self.id];
            assert!(index < na.value.rows(), "row index out of range");
            (Tensor::vector(na.value.row(index).to_vec()), na.requires_grad)
        };
        self.tape.push(
            Op::Row {
                matrix: self.id,
                index,
            },
            value,
            rg,
        )
    }

    /// Output-head projection with explicit precision handling. `self` is the
    /// weight matrix. Gradients are straight-through: computed from the
    /// full-precision operand values regardless of the forward mode.
    pub fn head_matvec(self, x: Var<'t>, mode: HeadKernel) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (nw, nx) = (&nodes[self.id], &nodes[x.id]);
            let (rows, cols) = (nw.value.rows(), nw.value.cols());
            assert_eq!(nx.value.len(), cols, "head_matvec dimension mismatch");
            let mut out = vec![0.0; rows];
            kernels::head_matvec(nw.value.data(), rows, cols, nx.value.data(), mode, &mut out);
            (Tensor::vector(out), nw.requires_grad || nx.requires_grad)
        };
        self.tape.push(
            Op::HeadMatVec {
                w: self.id,
                x: x.id,
                mode,
            },
            value,
            rg,
        )
    }

    /// Identity whose gradient is zero: blocks all flow to ancestors.
    pub fn stop_gradient(self) -> Var<'t> {
        let value = self.value();
        self.tape.push(Op::StopGrad(self.id), value, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_forward_and_backward() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x.mul(x);
        assert_eq!(y.scalar_value(), 9.0);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap().scalar_value(), 6.0);
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.leaf(Tensor::scalar(5.0));
        let z = x.stop_gradient().mul(y);
        assert_eq!(z.scalar_value(), 10.0);
        let grads = tape.backward(z).unwrap();
        assert!(grads.wrt(x).is_none());
        assert_eq!(grads.wrt(y).unwrap().scalar_value(), 2.0);
    }

    #[test]
    fn backward_rejects_vector_output() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = x.scale(2.0);
        match tape.backward(y) {
            Err(AutodiffError::NonScalarOutput(shape)) => assert_eq!(shape, vec![2]),
            other => panic!("expected NonScalarOutput, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_forward_is_reported() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(-1.0));
        let y = x.ln();
        assert!(tape.fault().is_some());
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn f32_tape_rounds_values() {
        let tape = Tape::with_precision(Precision::F32);
        let x = tape.constant(Tensor::scalar(0.1));
        assert_eq!(x.scalar_value(), f64::from(0.1f32));
    }

    #[test]
    fn gradient_accumulates_across_uses() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        // f = sum(x) + dot(x, x) -> df/dx = 1 + 2x
        let f = x.sum().add(x.dot(x));
        let grads = tape.backward(f).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[3.0, 5.0]);
    }

    #[test]
    fn concat_and_slice_roundtrip_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.leaf(Tensor::vector(vec![3.0]));
        let joined = tape.concat(&[a, b]);
        let loss = joined.slice(1, 2).sum();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(a).unwrap().data(), &[0.0, 1.0]);
        assert_eq!(grads.wrt(b).unwrap().data(), &[1.0]);
    }

    #[test]
    fn min_elem_routes_gradient_to_smaller_side() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 5.0]));
        let b = tape.leaf(Tensor::vector(vec![2.0, 4.0]));
        let loss = a.min_elem(b).sum();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(a).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(grads.wrt(b).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn clamp_passes_gradient_only_inside_bounds() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.5, 1.5, 3.0]));
        let y = x.clamp_const(Some(1.0), Some(2.0));
        assert_eq!(y.value().data(), &[1.0, 1.5, 2.0]);
        let grads = tape.backward(y.sum()).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn clamp_without_lower_bound_keeps_small_values() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.3, 2.5]));
        let y = x.clamp_const(None, Some(1.2));
        assert_eq!(y.value().data(), &[0.3, 1.2]);
    }
}
