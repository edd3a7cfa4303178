use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Broadcast {
    Same,
    LhsScalar,
    RhsScalar,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize, Broadcast),
    Sub(usize, usize, Broadcast),
    Mul(usize, usize, Broadcast),
    Div(usize, usize, Broadcast),
    Max2(usize, usize, Broadcast),
    Matmul(usize, usize),
    Transpose(usize),
    Neg(usize),
    Scale(usize, f64),
    Shift(usize),
    Sum(usize),
    Mean(usize),
    RowSums(usize),
    ColSums(usize),
    RowDot(usize, usize),
    RowNorm(usize),
    RowNormalize(usize),
    Sqrt(usize),
    Tanh(usize),
    Atanh(usize),
    Exp(usize),
    Log(usize),
    Relu(usize),
    Clamp(usize, f64, f64),
    Concat(Vec<usize>),
    SelectRows(usize, Vec<usize>),
    ScaleRows(usize, usize),
    AddRow(usize, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward is a single reverse sweep.
///
/// Kinked primitives (`relu`, `max2`, `clamp`, `arctanh`, norms at zero)
/// append one branch code per element to a signature; two evaluations with
/// equal signatures lie on the same smooth piece.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    branches: Vec<u8>,
}

/// Gradients of a scalar root with respect to every tape node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` is not on a path to the root.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => {
                let n = shape.iter().product();
                Tensor::new(shape, vec![0.0; n]).expect("gradient shape")
            }
        }
    }
}

/// Arctanh input clamp, shared by forward and backward.
pub const ATANH_CLAMP: f64 = 1.0 - 1e-15;

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

    pub fn branch_signature(&self) -> &[u8] {
        &self.branches
    }

    /// Records data-dependent decisions made outside the tape (such as
    /// mined pair masks) so finite-difference checks can detect them.
    pub fn record_branches(&mut self, bits: impl IntoIterator<Item = u8>) {
        self.branches.extend(bits);
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar_const(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize, Broadcast)> {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        let (ra, ca) = (ta.rows(), ta.cols());
        let (rb, cb) = (tb.rows(), tb.cols());
        if (ra, ca) == (rb, cb) {
            Ok((ra, ca, Broadcast::Same))
        } else if ta.is_scalar() {
            Ok((rb, cb, Broadcast::LhsScalar))
        } else if tb.is_scalar() {
            Ok((ra, ca, Broadcast::RhsScalar))
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: vec![ra, ca],
                rhs: vec![rb, cb],
            })
        }
    }

    fn zip_map(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, Broadcast)> {
        let (r, c, bc) = self.broadcast(op, a, b)?;
        let da = self.nodes[a.0].value.data();
        let db = self.nodes[b.0].value.data();
        let data: Vec<f64> = match bc {
            Broadcast::Same => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::LhsScalar => db.iter().map(|&y| f(da[0], y)).collect(),
            Broadcast::RhsScalar => da.iter().map(|&x| f(x, db[0])).collect(),
        };
        Ok((Tensor::matrix(r, c, data)?, bc))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = &self.nodes[a.0].value;
        let data = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::matrix(t.rows(), t.cols(), data).expect("unary shape");
        let rg = self.rg(&[a.0]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bc) = self.zip_map("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(t, Op::Add(a.0, b.0, bc), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bc) = self.zip_map("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(t, Op::Sub(a.0, b.0, bc), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bc) = self.zip_map("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(t, Op::Mul(a.0, b.0, bc), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bc) = self.zip_map("div", a, b, |x, y| x / y)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(t, Op::Div(a.0, b.0, bc), rg))
    }

    /// Elementwise maximum; ties select the first argument.
    pub fn max2(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bc) = self.zip_map("max2", a, b, |x, y| if x >= y { x } else { y })?;
        // signature: which side won
        let (r, c, _) = self.broadcast("max2", a, b)?;
        for idx in 0..r * c {
            let x = self.elem(a, idx);
            let y = self.elem(b, idx);
            self.branches.push((x >= y) as u8);
        }
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(t, Op::Max2(a.0, b.0, bc), rg))
    }

    fn elem(&self, v: Var, idx: usize) -> f64 {
        let d = self.nodes[v.0].value.data();
        if d.len() == 1 {
            d[0]
        } else {
            d[idx]
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::Matmul(a.0, b.0), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let d = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let rg = self.rg(&[a.0]);
        self.push(
            Tensor::matrix(c, r, out).expect("transpose"),
            Op::Transpose(a.0),
            rg,
        )
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a.0), |x| -x)
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a.0, k), |x| k * x)
    }

    /// Adds a constant.
    pub fn shift(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Shift(a.0), |x| x + k)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(&[a.0]);
        self.push(Tensor::scalar(s), Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let d = self.value(a).data();
        if d.is_empty() {
            return Err(Error::invalid("mean of an empty tensor"));
        }
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.rg(&[a.0]);
        Ok(self.push(Tensor::scalar(m), Op::Mean(a.0), rg))
    }

    /// `n×d → n×1`, summing each row.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out: Vec<f64> = (0..t.rows()).map(|i| t.row(i).iter().sum()).collect();
        let rg = self.rg(&[a.0]);
        self.push(Tensor::column(out), Op::RowSums(a.0), rg)
    }

    /// `n×d → 1×d`, summing each column.
    pub fn col_sums(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = vec![0.0; t.cols()];
        for i in 0..t.rows() {
            for (o, x) in out.iter_mut().zip(t.row(i)) {
                *o += x;
            }
        }
        let rg = self.rg(&[a.0]);
        self.push(Tensor::row_vector(out), Op::ColSums(a.0), rg)
    }

    /// Row-wise inner product: `(n×d, n×d) → n×1`.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if (ra, ca) != (rb, cb) {
            return Err(Error::ShapeMismatch {
                op: "dot",
                lhs: vec![ra, ca],
                rhs: vec![rb, cb],
            });
        }
        let ta = self.value(a);
        let tb = self.value(b);
        let out = (0..ra)
            .map(|i| ta.row(i).iter().zip(tb.row(i)).map(|(x, y)| x * y).sum())
            .collect();
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(Tensor::column(out), Op::RowDot(a.0, b.0), rg))
    }

    /// Row-wise Euclidean norm: `n×d → n×1`. The subgradient at zero is zero.
    pub fn norm2(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out: Vec<f64> = (0..t.rows())
            .map(|i| t.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        self.branches.extend(out.iter().map(|&n| (n == 0.0) as u8));
        let rg = self.rg(&[a.0]);
        self.push(Tensor::column(out), Op::RowNorm(a.0), rg)
    }

    /// Row-wise `x / ‖x‖`; zero rows stay zero.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(r * c);
        let mut flags = Vec::with_capacity(r);
        for i in 0..r {
            let row = t.row(i);
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            flags.push((n == 0.0) as u8);
            if n == 0.0 {
                out.extend(std::iter::repeat_n(0.0, c));
            } else {
                out.extend(row.iter().map(|x| x / n));
            }
        }
        self.branches.extend(flags);
        let rg = self.rg(&[a.0]);
        self.push(
            Tensor::matrix(r, c, out).expect("normalize"),
            Op::RowNormalize(a.0),
            rg,
        )
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a.0), f64::sqrt)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a.0), f64::tanh)
    }

    /// `artanh` with the input clamped to `±ATANH_CLAMP`.
    pub fn arctanh(&mut self, a: Var) -> Var {
        let flags: Vec<u8> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| (x.abs() > ATANH_CLAMP) as u8)
            .collect();
        self.branches.extend(flags);
        self.unary(a, Op::Atanh(a.0), |x| {
            x.clamp(-ATANH_CLAMP, ATANH_CLAMP).atanh()
        })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a.0), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a.0), f64::ln)
    }

    /// Hinge `[x]₊`; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, a: Var) -> Var {
        let flags: Vec<u8> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| (x > 0.0) as u8)
            .collect();
        self.branches.extend(flags);
        self.unary(a, Op::Relu(a.0), |x| if x > 0.0 { x } else { 0.0 })
    }

    /// Clamps into `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let flags: Vec<u8> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| {
                if x <= lo {
                    0
                } else if x >= hi {
                    2
                } else {
                    1
                }
            })
            .collect();
        self.branches.extend(flags);
        self.unary(a, Op::Clamp(a.0, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Stacks tensors with equal column counts vertically.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::invalid("concat of zero tensors"));
        };
        let c = self.dims(*first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            let (r, pc) = self.dims(*p);
            if pc != c {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: vec![rows, c],
                    rhs: vec![r, pc],
                });
            }
            rows += r;
            out.extend_from_slice(self.value(*p).data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(Tensor::matrix(rows, c, out)?, Op::Concat(ids), rg))
    }

    /// Gathers rows by index (repeats allowed).
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::invalid(format!(
                "row index {bad} out of range for {r} rows"
            )));
        }
        let t = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(t.row(i));
        }
        let rg = self.rg(&[a.0]);
        Ok(self.push(
            Tensor::matrix(idx.len(), c, out)?,
            Op::SelectRows(a.0, idx.to_vec()),
            rg,
        ))
    }

    /// Multiplies row `i` of `a` (`n×d`) by `s[i]` (`s` is `n×1`).
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let (rs, cs) = self.dims(s);
        if rs != r || cs != 1 {
            return Err(Error::ShapeMismatch {
                op: "scale_rows",
                lhs: vec![r, c],
                rhs: vec![rs, cs],
            });
        }
        let ta = self.value(a);
        let ts = self.value(s).data();
        let mut out = Vec::with_capacity(r * c);
        for (i, &k) in ts.iter().enumerate() {
            out.extend(ta.row(i).iter().map(|x| x * k));
        }
        let rg = self.rg(&[a.0, s.0]);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::ScaleRows(a.0, s.0), rg))
    }

    /// Adds the row vector `b` (`1×d`) to every row of `a` (`n×d`).
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if rb != 1 || cb != c {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: vec![r, c],
                rhs: vec![rb, cb],
            });
        }
        let ta = self.value(a);
        let tb = self.value(b).data();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            out.extend(ta.row(i).iter().zip(tb).map(|(x, y)| x + y));
        }
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::AddRow(a.0, b.0), rg))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = &self.nodes[root.0].value;
        if !rv.is_scalar() {
            return Err(Error::invalid(format!(
                "backward root must be scalar, got shape {:?}",
                rv.shape()
            )));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for id in (0..n).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let y = node.value.data();
        let val = |i: usize| self.nodes[i].value.data();
        let wants = |i: usize| self.nodes[i].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b, bc) => {
                accumulate_bc(grads, *a, *b, *bc, g, wants, |gi, _| (gi, gi));
            }
            Op::Sub(a, b, bc) => {
                accumulate_bc(grads, *a, *b, *bc, g, wants, |gi, _| (gi, -gi));
            }
            Op::Mul(a, b, bc) => {
                let (da, db) = (val(*a), val(*b));
                accumulate_bc(grads, *a, *b, *bc, g, wants, |gi, k| {
                    let (x, y) = pick(da, db, *bc, k);
                    (gi * y, gi * x)
                });
            }
            Op::Div(a, b, bc) => {
                let (da, db) = (val(*a), val(*b));
                accumulate_bc(grads, *a, *b, *bc, g, wants, |gi, k| {
                    let (x, y) = pick(da, db, *bc, k);
                    (gi / y, -gi * x / (y * y))
                });
            }
            Op::Max2(a, b, bc) => {
                let (da, db) = (val(*a), val(*b));
                accumulate_bc(grads, *a, *b, *bc, g, wants, |gi, k| {
                    let (x, y) = pick(da, db, *bc, k);
                    if x >= y {
                        (gi, 0.0)
                    } else {
                        (0.0, gi)
                    }
                });
            }
            Op::Matmul(a, b) => {
                let ta = &self.nodes[*a].value;
                let tb = &self.nodes[*b].value;
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.cols();
                if wants(*a) {
                    // dA = G Bᵀ
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * tb.data()[p * n + j];
                            }
                            ga[i * k + p] = s;
                        }
                    }
                    add_into(grads, *a, &ga);
                }
                if wants(*b) {
                    // dB = Aᵀ G
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let x = ta.data()[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += x * g[i * n + j];
                            }
                        }
                    }
                    add_into(grads, *b, &gb);
                }
            }
            Op::Transpose(a) => {
                let t = &self.nodes[*a].value;
                let (r, c) = (t.rows(), t.cols());
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[j * r + i];
                    }
                }
                add_into(grads, *a, &ga);
            }
            Op::Neg(a) => map_into(grads, *a, g, |gi, _| -gi),
            Op::Scale(a, k) => map_into(grads, *a, g, |gi, _| gi * k),
            Op::Shift(a) => map_into(grads, *a, g, |gi, _| gi),
            Op::Sum(a) => {
                let n = val(*a).len();
                add_into(grads, *a, &vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = val(*a).len();
                add_into(grads, *a, &vec![g[0] / n as f64; n]);
            }
            Op::RowSums(a) => {
                let t = &self.nodes[*a].value;
                let c = t.cols();
                let ga: Vec<f64> = (0..t.len()).map(|k| g[k / c]).collect();
                add_into(grads, *a, &ga);
            }
            Op::ColSums(a) => {
                let t = &self.nodes[*a].value;
                let c = t.cols();
                let ga: Vec<f64> = (0..t.len()).map(|k| g[k % c]).collect();
                add_into(grads, *a, &ga);
            }
            Op::RowDot(a, b) => {
                let ta = &self.nodes[*a].value;
                let tb = &self.nodes[*b].value;
                let c = ta.cols();
                if wants(*a) {
                    let ga: Vec<f64> = (0..ta.len()).map(|k| g[k / c] * tb.data()[k]).collect();
                    add_into(grads, *a, &ga);
                }
                if wants(*b) {
                    let gb: Vec<f64> = (0..tb.len()).map(|k| g[k / c] * ta.data()[k]).collect();
                    add_into(grads, *b, &gb);
                }
            }
            Op::RowNorm(a) => {
                let ta = &self.nodes[*a].value;
                let c = ta.cols();
                let ga: Vec<f64> = (0..ta.len())
                    .map(|k| {
                        let n = y[k / c];
                        if n == 0.0 {
                            0.0
                        } else {
                            g[k / c] * ta.data()[k] / n
                        }
                    })
                    .collect();
                add_into(grads, *a, &ga);
            }
            Op::RowNormalize(a) => {
                let ta = &self.nodes[*a].value;
                let (r, c) = (ta.rows(), ta.cols());
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let x = ta.row(i);
                    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n == 0.0 {
                        continue;
                    }
                    let yr = &y[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let yg: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        ga[i * c + j] = (gr[j] - yr[j] * yg) / n;
                    }
                }
                add_into(grads, *a, &ga);
            }
            Op::Sqrt(a) => map_into(grads, *a, g, |gi, k| {
                if y[k] == 0.0 {
                    0.0
                } else {
                    gi * 0.5 / y[k]
                }
            }),
            Op::Tanh(a) => map_into(grads, *a, g, |gi, k| gi * (1.0 - y[k] * y[k])),
            Op::Atanh(a) => {
                let x = val(*a);
                map_into(grads, *a, g, |gi, k| {
                    let xc = x[k].clamp(-ATANH_CLAMP, ATANH_CLAMP);
                    gi / (1.0 - xc * xc)
                })
            }
            Op::Exp(a) => map_into(grads, *a, g, |gi, k| gi * y[k]),
            Op::Log(a) => {
                let x = val(*a);
                map_into(grads, *a, g, |gi, k| gi / x[k])
            }
            Op::Relu(a) => {
                let x = val(*a);
                map_into(grads, *a, g, |gi, k| if x[k] > 0.0 { gi } else { 0.0 })
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a);
                map_into(grads, *a, g, |gi, k| {
                    if x[k] > *lo && x[k] < *hi {
                        gi
                    } else {
                        0.0
                    }
                })
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    if wants(p) {
                        add_into(grads, p, &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::SelectRows(a, idx) => {
                let t = &self.nodes[*a].value;
                let c = t.cols();
                let mut ga = vec![0.0; t.len()];
                for (out_row, &src) in idx.iter().enumerate() {
                    for j in 0..c {
                        ga[src * c + j] += g[out_row * c + j];
                    }
                }
                add_into(grads, *a, &ga);
            }
            Op::ScaleRows(a, s) => {
                let ta = &self.nodes[*a].value;
                let ts = val(*s);
                let c = ta.cols();
                if wants(*a) {
                    let ga: Vec<f64> = (0..ta.len()).map(|k| g[k] * ts[k / c]).collect();
                    add_into(grads, *a, &ga);
                }
                if wants(*s) {
                    let gs: Vec<f64> = (0..ta.rows())
                        .map(|i| {
                            ta.row(i)
                                .iter()
                                .zip(&g[i * c..(i + 1) * c])
                                .map(|(x, gi)| x * gi)
                                .sum()
                        })
                        .collect();
                    add_into(grads, *s, &gs);
                }
            }
            Op::AddRow(a, b) => {
                if wants(*a) {
                    add_into(grads, *a, g);
                }
                if wants(*b) {
                    let c = val(*b).len();
                    let mut gb = vec![0.0; c];
                    for (k, gi) in g.iter().enumerate() {
                        gb[k % c] += gi;
                    }
                    add_into(grads, *b, &gb);
                }
            }
        }
    }
}

fn pick(da: &[f64], db: &[f64], bc: Broadcast, k: usize) -> (f64, f64) {
    match bc {
        Broadcast::Same => (da[k], db[k]),
        Broadcast::LhsScalar => (da[0], db[k]),
        Broadcast::RhsScalar => (da[k], db[0]),
    }
}

fn add_into(grads: &mut [Option<Vec<f64>>], id: usize, g: &[f64]) {
    match &mut grads[id] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn map_into(grads: &mut [Option<Vec<f64>>], id: usize, g: &[f64], f: impl Fn(f64, usize) -> f64) {
    let ga: Vec<f64> = g.iter().enumerate().map(|(k, &gi)| f(gi, k)).collect();
    add_into(grads, id, &ga);
}

/// Accumulates into both operands of a broadcasting binary op; a scalar
/// operand receives the sum of its per-element contributions.
fn accumulate_bc(
    grads: &mut [Option<Vec<f64>>],
    a: usize,
    b: usize,
    bc: Broadcast,
    g: &[f64],
    wants: impl Fn(usize) -> bool,
    f: impl Fn(f64, usize) -> (f64, f64),
) {
    let pairs: Vec<(f64, f64)> = g.iter().enumerate().map(|(k, &gi)| f(gi, k)).collect();
    let collect = |side: fn(&(f64, f64)) -> f64, scalar: bool| -> Vec<f64> {
        if scalar {
            vec![pairs.iter().map(side).sum()]
        } else {
            pairs.iter().map(side).collect()
        }
    };
    let ga = wants(a).then(|| collect(|p| p.0, matches!(bc, Broadcast::LhsScalar)));
    let gb = wants(b).then(|| collect(|p| p.1, matches!(bc, Broadcast::RhsScalar)));
    if let Some(ga) = ga {
        add_into(grads, a, &ga);
    }
    if let Some(gb) = gb {
        add_into(grads, b, &gb);
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, y) in orow.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    out
}
