use rand::Rng;

use super::DenseArray;
use crate::error::{Error, Result};
use crate::rng::Stream;

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `a [m,k] · b [k,n]`
    MatMul,
    /// `a [m,k] · b[n,k]ᵀ`
    MatMulNT,
    /// Same-shape element-wise binary.
    Elementwise(BinKind),
    /// `[m,n]` combined with a length-`n` vector broadcast over rows.
    /// `vector_is_right` records which input is the vector.
    BroadcastRows { kind: BinKind, vector_is_right: bool },
    Relu,
    Logistic,
    Clamp { lo: f64, hi: f64 },
    Log,
    Scale { factor: f64 },
    OneMinus,
    SoftmaxRows,
    MeanAll,
    /// Per row `r`, select column `cols[r]` → `[m,1]`.
    PickPerRow { cols: Vec<usize> },
    /// Stack the rows of two matrices; `split` is the first input's row count.
    ConcatRows { split: usize },
    /// Identity forward; backward multiplies the upstream gradient by `-scale`.
    GradReverse { scale: f64 },
    /// Element-wise multiplier mask, entries `0` or `1/(1-rate)`.
    Dropout { mask: Vec<f64> },
    /// Row-wise flattened outer product `f ⊗ p`, feature index major.
    Multilinear,
}

struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: DenseArray,
}

/// A recorded computation: append-only, so node order is topological and the
/// backward sweep is a single reverse iteration. Gradients are accumulated for
/// every node reachable from the backward root, which lets callers inspect
/// gradients at interior nodes (used by the weighting-route checks) as well as
/// at parameter leaves.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    pub fn value(&self, id: NodeId) -> &DenseArray {
        &self.nodes[id.0].value
    }

    /// Value of a scalar-shaped node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert!(self.nodes[id.0].value.is_scalar());
        self.nodes[id.0].value.values()[0]
    }

    /// Gradient accumulated at `id` by the last [`Tape::backward`] call.
    /// Nodes the root does not depend on get a zero gradient.
    pub fn grad(&self, id: NodeId) -> DenseArray {
        let shape = self.nodes[id.0].value.shape();
        match &self.grads[id.0] {
            Some(g) => DenseArray::new(shape.to_vec(), g.clone())
                .expect("gradient shape mirrors value shape"),
            None => DenseArray::zeros(shape),
        }
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, value: DenseArray) -> NodeId {
        self.nodes.push(Node { op, inputs, value });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: DenseArray) -> NodeId {
        self.push(Op::Leaf, vec![], value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.cols() != vb.rows() {
            return Err(Error::Dimension {
                context: "matmul",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = va.values()[i * k + p];
                for j in 0..n {
                    out[i * n + j] += aip * vb.values()[p * n + j];
                }
            }
        }
        let value = DenseArray::new(vec![m, n], out)?;
        Ok(self.push(Op::MatMul, vec![a.0, b.0], value))
    }

    /// `a · bᵀ` for `a [m,k]`, `b [n,k]`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.cols() != vb.cols() {
            return Err(Error::Dimension {
                context: "matmul_nt",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let (m, k, n) = (va.rows(), va.cols(), vb.rows());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += va.values()[i * k + p] * vb.values()[j * k + p];
                }
                out[i * n + j] = s;
            }
        }
        let value = DenseArray::new(vec![m, n], out)?;
        Ok(self.push(Op::MatMulNT, vec![a.0, b.0], value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, BinKind::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, BinKind::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, BinKind::Mul)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, kind: BinKind) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let apply = |x: f64, y: f64| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
        };
        if va.shape() == vb.shape() {
            let out: Vec<f64> = va
                .values()
                .iter()
                .zip(vb.values())
                .map(|(&x, &y)| apply(x, y))
                .collect();
            let value = DenseArray::new(va.shape().to_vec(), out)?;
            return Ok(self.push(Op::Elementwise(kind), vec![a.0, b.0], value));
        }
        // Vector broadcast over matrix rows: [m,n] ∘ [n] in either order.
        let (mat, vec_, vector_is_right) = if va.shape().len() == 2
            && vb.shape().len() == 1
            && va.cols() == vb.numel()
        {
            (va, vb, true)
        } else if vb.shape().len() == 2 && va.shape().len() == 1 && vb.cols() == va.numel() {
            (vb, va, false)
        } else {
            return Err(Error::Dimension {
                context: "elementwise",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        };
        let (m, n) = (mat.rows(), mat.cols());
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                let mv = mat.values()[r * n + c];
                let vv = vec_.values()[c];
                out[r * n + c] = if vector_is_right {
                    apply(mv, vv)
                } else {
                    apply(vv, mv)
                };
            }
        }
        let value = DenseArray::new(vec![m, n], out)?;
        Ok(self.push(
            Op::BroadcastRows {
                kind,
                vector_is_right,
            },
            vec![a.0, b.0],
            value,
        ))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .values()
            .iter()
            .map(|&x| x.max(0.0))
            .collect();
        let value = DenseArray::new(self.nodes[a.0].value.shape().to_vec(), out)
            .expect("relu preserves shape and finiteness");
        self.push(Op::Relu, vec![a.0], value)
    }

    pub fn logistic(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .values()
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let value = DenseArray::new(self.nodes[a.0].value.shape().to_vec(), out)
            .expect("logistic preserves shape and finiteness");
        self.push(Op::Logistic, vec![a.0], value)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .values()
            .iter()
            .map(|&x| x.clamp(lo, hi))
            .collect();
        let value = DenseArray::new(self.nodes[a.0].value.shape().to_vec(), out)
            .expect("clamp preserves shape and finiteness");
        self.push(Op::Clamp { lo, hi }, vec![a.0], value)
    }

    /// Natural log. Callers clamp inputs away from zero first; see
    /// [`super::LOG_CLAMP_LO`].
    pub fn log(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .values()
            .iter()
            .map(|&x| x.ln())
            .collect();
        let value = DenseArray::new(self.nodes[a.0].value.shape().to_vec(), out)
            .expect("log of clamped positive input is finite");
        self.push(Op::Log, vec![a.0], value)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .values()
            .iter()
            .map(|&x| x * factor)
            .collect();
        let value = DenseArray::new(self.nodes[a.0].value.shape().to_vec(), out)
            .expect("scale by finite factor preserves shape and finiteness");
        self.push(Op::Scale { factor }, vec![a.0], value)
    }

    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .values()
            .iter()
            .map(|&x| 1.0 - x)
            .collect();
        let value = DenseArray::new(self.nodes[a.0].value.shape().to_vec(), out)
            .expect("one_minus preserves shape and finiteness");
        self.push(Op::OneMinus, vec![a.0], value)
    }

    /// Row-wise softmax with max subtraction for stability.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let (m, n) = (v.rows(), v.cols());
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &v.values()[r * n..(r + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..n {
                let e = (row[c] - max).exp();
                out[r * n + c] = e;
                sum += e;
            }
            for c in 0..n {
                out[r * n + c] /= sum;
            }
        }
        let value = DenseArray::new(v.shape().to_vec(), out)
            .expect("softmax preserves shape and finiteness");
        self.push(Op::SoftmaxRows, vec![a.0], value)
    }

    /// Mean over all entries → scalar.
    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let mean = v.values().iter().sum::<f64>() / v.numel() as f64;
        let value = DenseArray::scalar(mean).expect("mean of finite values is finite");
        self.push(Op::MeanAll, vec![a.0], value)
    }

    /// Select one column per row: `out[r] = a[r, cols[r]]` → `[m,1]`.
    pub fn pick_per_row(&mut self, a: NodeId, cols: &[usize]) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        let (m, n) = (v.rows(), v.cols());
        if cols.len() != m {
            return Err(Error::Dimension {
                context: "pick_per_row",
                left: vec![m],
                right: vec![cols.len()],
            });
        }
        let mut out = vec![0.0; m];
        for r in 0..m {
            if cols[r] >= n {
                return Err(Error::Data(format!(
                    "pick_per_row: column {} out of range 0..{n} at row {r}",
                    cols[r]
                )));
            }
            out[r] = v.values()[r * n + cols[r]];
        }
        let value = DenseArray::new(vec![m, 1], out)?;
        Ok(self.push(
            Op::PickPerRow {
                cols: cols.to_vec(),
            },
            vec![a.0],
            value,
        ))
    }

    /// Stack the rows of `a` on top of the rows of `b`.
    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.cols() != vb.cols() {
            return Err(Error::Dimension {
                context: "concat_rows",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let split = va.rows();
        let mut out = Vec::with_capacity(va.numel() + vb.numel());
        out.extend_from_slice(va.values());
        out.extend_from_slice(vb.values());
        let value = DenseArray::new(vec![split + vb.rows(), va.cols()], out)?;
        Ok(self.push(Op::ConcatRows { split }, vec![a.0, b.0], value))
    }

    /// Identity forward; backward multiplies the upstream gradient by
    /// `-scale`. `scale` must be nonnegative.
    pub fn grad_reverse(&mut self, a: NodeId, scale: f64) -> Result<NodeId> {
        if !(scale >= 0.0) {
            return Err(Error::Parameter(format!(
                "grad_reverse scale must be nonnegative, got {scale}"
            )));
        }
        let value = self.nodes[a.0].value.clone();
        Ok(self.push(Op::GradReverse { scale }, vec![a.0], value))
    }

    /// Inverted dropout: keeps each entry with probability `1-rate`, scaling
    /// kept entries by `1/(1-rate)`. Only meaningful during training; callers
    /// skip the node entirely in inference mode.
    pub fn dropout(&mut self, a: NodeId, rate: f64, rng: &mut Stream) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!(
                "dropout rate must be in [0,1), got {rate}"
            )));
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let v = &self.nodes[a.0].value;
        let mask: Vec<f64> = (0..v.numel())
            .map(|_| {
                if rng.gen::<f64>() >= rate {
                    keep_scale
                } else {
                    0.0
                }
            })
            .collect();
        let out: Vec<f64> = v.values().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = DenseArray::new(v.shape().to_vec(), out)?;
        Ok(self.push(Op::Dropout { mask }, vec![a.0], value))
    }

    /// Row-wise flattened outer product: for `f [m,l]` and `p [m,c]`, entry
    /// `out[r, k*c + i] = f[r,k] * p[r,i]` (feature index major).
    pub fn multilinear(&mut self, f: NodeId, p: NodeId) -> Result<NodeId> {
        let (vf, vp) = (&self.nodes[f.0].value, &self.nodes[p.0].value);
        if vf.shape().len() != 2 || vp.shape().len() != 2 || vf.rows() != vp.rows() {
            return Err(Error::Dimension {
                context: "multilinear",
                left: vf.shape().to_vec(),
                right: vp.shape().to_vec(),
            });
        }
        let (m, l, c) = (vf.rows(), vf.cols(), vp.cols());
        let mut out = vec![0.0; m * l * c];
        for r in 0..m {
            for k in 0..l {
                let fv = vf.values()[r * l + k];
                for i in 0..c {
                    out[r * l * c + k * c + i] = fv * vp.values()[r * c + i];
                }
            }
        }
        let value = DenseArray::new(vec![m, l * c], out)?;
        Ok(self.push(Op::Multilinear, vec![f.0, p.0], value))
    }

    /// Reverse sweep from a scalar root. Deterministic: same graph, same
    /// gradients, bit for bit.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be scalar-shaped, got {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, node: usize, contribution: &[f64]) {
        let slot = self.grads[node]
            .get_or_insert_with(|| vec![0.0; self.nodes[node].value.numel()]);
        for (s, &c) in slot.iter_mut().zip(contribution) {
            *s += c;
        }
    }

    fn accumulate_at(&mut self, node: usize, index: usize, contribution: f64) {
        let slot = self.grads[node]
            .get_or_insert_with(|| vec![0.0; self.nodes[node].value.numel()]);
        slot[index] += contribution;
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let op = self.nodes[i].op.clone();
        let inputs = self.nodes[i].inputs.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                let (m, k) = (self.nodes[a].value.rows(), self.nodes[a].value.cols());
                let n = self.nodes[b].value.cols();
                let av = self.nodes[a].value.values().to_vec();
                let bv = self.nodes[b].value.values().to_vec();
                // da = g · bᵀ
                let mut da = vec![0.0; m * k];
                for r in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[r * n + j] * bv[p * n + j];
                        }
                        da[r * k + p] = s;
                    }
                }
                self.accumulate(a, &da);
                // db = aᵀ · g
                let mut db = vec![0.0; k * n];
                for p in 0..k {
                    for r in 0..m {
                        let arp = av[r * k + p];
                        for j in 0..n {
                            db[p * n + j] += arp * g[r * n + j];
                        }
                    }
                }
                self.accumulate(b, &db);
            }
            Op::MatMulNT => {
                let (a, b) = (inputs[0], inputs[1]);
                let (m, k) = (self.nodes[a].value.rows(), self.nodes[a].value.cols());
                let n = self.nodes[b].value.rows();
                let av = self.nodes[a].value.values().to_vec();
                let bv = self.nodes[b].value.values().to_vec();
                // da = g · b
                let mut da = vec![0.0; m * k];
                for r in 0..m {
                    for j in 0..n {
                        let grj = g[r * n + j];
                        for p in 0..k {
                            da[r * k + p] += grj * bv[j * k + p];
                        }
                    }
                }
                self.accumulate(a, &da);
                // db = gᵀ · a
                let mut db = vec![0.0; n * k];
                for j in 0..n {
                    for r in 0..m {
                        let grj = g[r * n + j];
                        for p in 0..k {
                            db[j * k + p] += grj * av[r * k + p];
                        }
                    }
                }
                self.accumulate(b, &db);
            }
            Op::Elementwise(kind) => {
                let (a, b) = (inputs[0], inputs[1]);
                match kind {
                    BinKind::Add => {
                        self.accumulate(a, g);
                        self.accumulate(b, g);
                    }
                    BinKind::Sub => {
                        self.accumulate(a, g);
                        let neg: Vec<f64> = g.iter().map(|&x| -x).collect();
                        self.accumulate(b, &neg);
                    }
                    BinKind::Mul => {
                        let bv = self.nodes[b].value.values().to_vec();
                        let da: Vec<f64> = g.iter().zip(&bv).map(|(&x, &y)| x * y).collect();
                        self.accumulate(a, &da);
                        let av = self.nodes[a].value.values().to_vec();
                        let db: Vec<f64> = g.iter().zip(&av).map(|(&x, &y)| x * y).collect();
                        self.accumulate(b, &db);
                    }
                }
            }
            Op::BroadcastRows {
                kind,
                vector_is_right,
            } => {
                let (mat, vec_) = if vector_is_right {
                    (inputs[0], inputs[1])
                } else {
                    (inputs[1], inputs[0])
                };
                let (m, n) = (self.nodes[mat].value.rows(), self.nodes[mat].value.cols());
                match kind {
                    BinKind::Add => {
                        self.accumulate(mat, g);
                        let mut dv = vec![0.0; n];
                        for r in 0..m {
                            for c in 0..n {
                                dv[c] += g[r * n + c];
                            }
                        }
                        self.accumulate(vec_, &dv);
                    }
                    BinKind::Sub => {
                        // matrix − vector or vector − matrix
                        let mat_sign = if vector_is_right { 1.0 } else { -1.0 };
                        let dm: Vec<f64> = g.iter().map(|&x| x * mat_sign).collect();
                        self.accumulate(mat, &dm);
                        let mut dv = vec![0.0; n];
                        for r in 0..m {
                            for c in 0..n {
                                dv[c] -= mat_sign * g[r * n + c];
                            }
                        }
                        self.accumulate(vec_, &dv);
                    }
                    BinKind::Mul => {
                        let vv = self.nodes[vec_].value.values().to_vec();
                        let mv = self.nodes[mat].value.values().to_vec();
                        let mut dm = vec![0.0; m * n];
                        let mut dv = vec![0.0; n];
                        for r in 0..m {
                            for c in 0..n {
                                dm[r * n + c] = g[r * n + c] * vv[c];
                                dv[c] += g[r * n + c] * mv[r * n + c];
                            }
                        }
                        self.accumulate(mat, &dm);
                        self.accumulate(vec_, &dv);
                    }
                }
            }
            Op::Relu => {
                let a = inputs[0];
                let xv = self.nodes[a].value.values().to_vec();
                let da: Vec<f64> = g
                    .iter()
                    .zip(&xv)
                    .map(|(&gi, &x)| if x > 0.0 { gi } else { 0.0 })
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Logistic => {
                let a = inputs[0];
                let sv = self.nodes[i].value.values().to_vec();
                let da: Vec<f64> = g
                    .iter()
                    .zip(&sv)
                    .map(|(&gi, &s)| gi * s * (1.0 - s))
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Clamp { lo, hi } => {
                let a = inputs[0];
                let xv = self.nodes[a].value.values().to_vec();
                let da: Vec<f64> = g
                    .iter()
                    .zip(&xv)
                    .map(|(&gi, &x)| if x > lo && x < hi { gi } else { 0.0 })
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Log => {
                let a = inputs[0];
                let xv = self.nodes[a].value.values().to_vec();
                let da: Vec<f64> = g.iter().zip(&xv).map(|(&gi, &x)| gi / x).collect();
                self.accumulate(a, &da);
            }
            Op::Scale { factor } => {
                let a = inputs[0];
                let da: Vec<f64> = g.iter().map(|&x| x * factor).collect();
                self.accumulate(a, &da);
            }
            Op::OneMinus => {
                let a = inputs[0];
                let da: Vec<f64> = g.iter().map(|&x| -x).collect();
                self.accumulate(a, &da);
            }
            Op::SoftmaxRows => {
                let a = inputs[0];
                let sv = self.nodes[i].value.values().to_vec();
                let (m, n) = (self.nodes[i].value.rows(), self.nodes[i].value.cols());
                let mut da = vec![0.0; m * n];
                for r in 0..m {
                    let mut dot = 0.0;
                    for c in 0..n {
                        dot += g[r * n + c] * sv[r * n + c];
                    }
                    for c in 0..n {
                        da[r * n + c] = sv[r * n + c] * (g[r * n + c] - dot);
                    }
                }
                self.accumulate(a, &da);
            }
            Op::MeanAll => {
                let a = inputs[0];
                let n = self.nodes[a].value.numel();
                let per = g[0] / n as f64;
                let da = vec![per; n];
                self.accumulate(a, &da);
            }
            Op::PickPerRow { cols } => {
                let a = inputs[0];
                let n = self.nodes[a].value.cols();
                for (r, &c) in cols.iter().enumerate() {
                    self.accumulate_at(a, r * n + c, g[r]);
                }
            }
            Op::ConcatRows { split } => {
                let (a, b) = (inputs[0], inputs[1]);
                let n = self.nodes[a].value.cols();
                self.accumulate(a, &g[..split * n]);
                self.accumulate(b, &g[split * n..]);
            }
            Op::GradReverse { scale } => {
                let a = inputs[0];
                let da: Vec<f64> = g.iter().map(|&x| -scale * x).collect();
                self.accumulate(a, &da);
            }
            Op::Dropout { mask } => {
                let a = inputs[0];
                let da: Vec<f64> = g.iter().zip(&mask).map(|(&gi, &m)| gi * m).collect();
                self.accumulate(a, &da);
            }
            Op::Multilinear => {
                let (f, p) = (inputs[0], inputs[1]);
                let (m, l) = (self.nodes[f].value.rows(), self.nodes[f].value.cols());
                let c = self.nodes[p].value.cols();
                let fv = self.nodes[f].value.values().to_vec();
                let pv = self.nodes[p].value.values().to_vec();
                let mut df = vec![0.0; m * l];
                let mut dp = vec![0.0; m * c];
                for r in 0..m {
                    for k in 0..l {
                        for ci in 0..c {
                            let gi = g[r * l * c + k * c + ci];
                            df[r * l + k] += gi * pv[r * c + ci];
                            dp[r * c + ci] += gi * fv[r * l + k];
                        }
                    }
                }
                self.accumulate(f, &df);
                self.accumulate(p, &dp);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn mat(rows: usize, cols: usize, v: &[f64]) -> DenseArray {
        DenseArray::matrix(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let eye = t.leaf(mat(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let m = t.leaf(mat(2, 2, &[3.0, -1.0, 2.0, 5.0]));
        let out = t.matmul(eye, m).unwrap();
        assert_eq!(t.value(out).values(), &[3.0, -1.0, 2.0, 5.0]);
    }

    #[test]
    fn matmul_1x2_by_2x1() {
        let mut t = Tape::new();
        let a = t.leaf(mat(1, 2, &[1.0, 2.0]));
        let b = t.leaf(mat(2, 1, &[3.0, 4.0]));
        let out = t.matmul(a, b).unwrap();
        assert_eq!(t.value(out).values(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(mat(2, 3, &[0.0; 6]));
        let b = t.leaf(mat(2, 2, &[0.0; 4]));
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn softmax_symmetric_row() {
        let mut t = Tape::new();
        let x = t.leaf(mat(1, 2, &[0.0, 0.0]));
        let s = t.softmax_rows(x);
        assert_eq!(t.value(s).values(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_constant_row_is_uniform() {
        let mut t = Tape::new();
        let x = t.leaf(mat(1, 3, &[7.3, 7.3, 7.3]));
        let s = t.softmax_rows(x);
        for &v in t.value(s).values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_two_logits() {
        let mut t = Tape::new();
        let x = t.leaf(mat(1, 2, &[2.0, 0.0]));
        let s = t.softmax_rows(x);
        let e2 = 2.0f64.exp();
        assert!((t.value(s).values()[0] - e2 / (e2 + 1.0)).abs() < 1e-15);
        assert!((t.value(s).values()[1] - 1.0 / (e2 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn elementwise_mul_identity() {
        let mut t = Tape::new();
        let a = t.leaf(mat(2, 2, &[1.5, -2.0, 0.0, 3.0]));
        let ones = t.leaf(mat(2, 2, &[1.0; 4]));
        let out = t.mul(a, ones).unwrap();
        assert_eq!(t.value(out).values(), t.value(a).values());
    }

    #[test]
    fn broadcast_vector_over_rows() {
        let mut t = Tape::new();
        let m = t.leaf(mat(2, 2, &[1.0, 1.0, 1.0, 1.0]));
        let v = t.leaf(DenseArray::vector(vec![2.0, 3.0]).unwrap());
        let out = t.mul(m, v).unwrap();
        assert_eq!(t.value(out).values(), &[2.0, 3.0, 2.0, 3.0]);
    }

    #[test]
    fn incompatible_broadcast_rejected() {
        let mut t = Tape::new();
        let m = t.leaf(mat(2, 2, &[1.0; 4]));
        let v = t.leaf(DenseArray::vector(vec![1.0, 2.0, 3.0]).unwrap());
        assert!(t.mul(m, v).is_err());
    }

    #[test]
    fn grad_of_sum_of_product_is_other_factor() {
        let mut t = Tape::new();
        let a = t.leaf(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = t.leaf(mat(2, 2, &[5.0, 6.0, 7.0, 8.0]));
        let prod = t.mul(a, b).unwrap();
        let mean = t.mean_all(prod);
        let sum = t.scale(mean, 4.0); // sum == mean · numel
        t.backward(sum).unwrap();
        assert_eq!(t.grad(a).values(), t.value(b).values());
        assert_eq!(t.grad(b).values(), t.value(a).values());
    }

    #[test]
    fn grad_reverse_forward_identity() {
        let mut t = Tape::new();
        let x = t.leaf(mat(1, 3, &[1.0, 2.0, 3.0]));
        let r = t.grad_reverse(x, 1.0).unwrap();
        assert_eq!(t.value(r).values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn grad_reverse_negates_and_scales() {
        let mut t = Tape::new();
        let x = t.leaf(mat(1, 2, &[1.0, 1.0]));
        let r = t.grad_reverse(x, 0.5).unwrap();
        let m = t.mean_all(r);
        let s = t.scale(m, 2.0); // upstream gradient 1 at each entry
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).values(), &[-0.5, -0.5]);
    }

    #[test]
    fn grad_reverse_zero_scale_annihilates() {
        let mut t = Tape::new();
        let x = t.leaf(mat(1, 2, &[1.0, 1.0]));
        let r = t.grad_reverse(x, 0.0).unwrap();
        let m = t.mean_all(r);
        t.backward(m).unwrap();
        assert_eq!(t.grad(x).values(), &[0.0, 0.0]);
    }

    #[test]
    fn grad_reverse_rejects_negative_scale() {
        let mut t = Tape::new();
        let x = t.leaf(mat(1, 1, &[1.0]));
        assert!(matches!(
            t.grad_reverse(x, -1.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn grad_reverse_is_exact_negation_of_plain_gradient() {
        // Same graph with and without the reversal node: the reversed gradient
        // must equal -λ times the plain one, element-wise, exactly.
        let build = |reversed: Option<f64>| {
            let mut t = Tape::new();
            let x = t.leaf(mat(1, 3, &[0.3, -1.2, 2.0]));
            let h = match reversed {
                Some(scale) => t.grad_reverse(x, scale).unwrap(),
                None => x,
            };
            let sq = t.mul(h, h).unwrap();
            let root = t.mean_all(sq);
            t.backward(root).unwrap();
            t.grad(x).values().to_vec()
        };
        let plain = build(None);
        let reversed = build(Some(0.75));
        for (p, r) in plain.iter().zip(&reversed) {
            assert_eq!(r.to_bits(), (-0.75 * p).to_bits());
        }
    }

    #[test]
    fn backward_square() {
        let mut t = Tape::new();
        let x = t.leaf(mat(1, 1, &[3.0]));
        let sq = t.mul(x, x).unwrap();
        let root = t.mean_all(sq);
        t.backward(root).unwrap();
        assert_eq!(t.grad(x).values(), &[6.0]);
    }

    #[test]
    fn backward_log_softmax_hand_chain() {
        // root = log(softmax(x))[0] at x = [0,0] → grad [0.5, -0.5]
        let mut t = Tape::new();
        let x = t.leaf(mat(1, 2, &[0.0, 0.0]));
        let s = t.softmax_rows(x);
        let l = t.log(s);
        let root = t.pick_per_row(l, &[0]).unwrap();
        t.backward(root).unwrap();
        let g = t.grad(x);
        assert!((g.values()[0] - 0.5).abs() < 1e-15);
        assert!((g.values()[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn disconnected_parameter_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(mat(1, 1, &[3.0]));
        let unused = t.leaf(mat(2, 2, &[1.0; 4]));
        let sq = t.mul(x, x).unwrap();
        let root = t.mean_all(sq);
        t.backward(root).unwrap();
        assert_eq!(t.grad(unused).values(), &[0.0; 4]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(mat(2, 2, &[1.0; 4]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut t = Tape::new();
            let a = t.leaf(mat(2, 3, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
            let b = t.leaf(mat(3, 2, &[-0.3, 0.7, 0.9, -0.1, 0.2, 0.4]));
            let p = t.matmul(a, b).unwrap();
            let s = t.softmax_rows(p);
            let c = t.clamp(s, 1e-7, 1.0 - 1e-7);
            let l = t.log(c);
            let root = t.mean_all(l);
            t.backward(root).unwrap();
            (a, b, t)
        };
        let (a1, b1, t1) = run();
        let (a2, b2, t2) = run();
        let bits = |x: &DenseArray| x.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&t1.grad(a1)), bits(&t2.grad(a2)));
        assert_eq!(bits(&t1.grad(b1)), bits(&t2.grad(b2)));
    }

    #[test]
    fn concat_rows_routes_gradients_to_both_parts() {
        let mut t = Tape::new();
        let a = t.leaf(mat(1, 2, &[1.0, 2.0]));
        let b = t.leaf(mat(2, 2, &[3.0, 4.0, 5.0, 6.0]));
        let cat = t.concat_rows(a, b).unwrap();
        assert_eq!(t.value(cat).shape(), &[3, 2]);
        let sq = t.mul(cat, cat).unwrap();
        let m = t.mean_all(sq);
        let root = t.scale(m, 6.0); // sum of squares
        t.backward(root).unwrap();
        assert_eq!(t.grad(a).values(), &[2.0, 4.0]);
        assert_eq!(t.grad(b).values(), &[6.0, 8.0, 10.0, 12.0]);
    }

    #[test]
    fn multilinear_one_hot_copies_features() {
        let mut t = Tape::new();
        let f = t.leaf(mat(1, 2, &[1.0, 2.0]));
        let p = t.leaf(mat(1, 2, &[1.0, 0.0]));
        let e = t.multilinear(f, p).unwrap();
        assert_eq!(t.value(e).values(), &[1.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn multilinear_uniform_probabilities() {
        let mut t = Tape::new();
        let f = t.leaf(mat(1, 2, &[1.0, 2.0]));
        let p = t.leaf(mat(1, 2, &[0.5, 0.5]));
        let e = t.multilinear(f, p).unwrap();
        assert_eq!(t.value(e).values(), &[0.5, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn multilinear_zero_features_annihilate() {
        let mut t = Tape::new();
        let f = t.leaf(mat(1, 2, &[0.0, 0.0]));
        let p = t.leaf(mat(1, 2, &[0.3, 0.7]));
        let e = t.multilinear(f, p).unwrap();
        assert_eq!(t.value(e).values(), &[0.0; 4]);
    }

    #[test]
    fn dropout_eval_vs_train() {
        let mut rng = stream(9, Purpose::DropoutDisc1);
        let mut t = Tape::new();
        let x = t.leaf(mat(4, 4, &[1.0; 16]));
        let d = t.dropout(x, 0.5, &mut rng).unwrap();
        let vals = t.value(d).values();
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        // rate 0 keeps everything
        let mut t2 = Tape::new();
        let x2 = t2.leaf(mat(2, 2, &[1.0; 4]));
        let d2 = t2.dropout(x2, 0.0, &mut rng).unwrap();
        assert_eq!(t2.value(d2).values(), &[1.0; 4]);
    }

    #[test]
    fn clamp_bounds_and_gradient_gate() {
        let mut t = Tape::new();
        let x = t.leaf(mat(1, 3, &[-5.0, 0.5, 5.0]));
        let c = t.clamp(x, 0.0, 1.0);
        assert_eq!(t.value(c).values(), &[0.0, 0.5, 1.0]);
        let m = t.mean_all(c);
        let root = t.scale(m, 3.0);
        t.backward(root).unwrap();
        assert_eq!(t.grad(x).values(), &[0.0, 1.0, 0.0]);
    }
}
