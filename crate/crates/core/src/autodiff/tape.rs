//! Reverse-mode tape over dense 2-D arrays.
//!
//! Every value is an `Array2<f64>`; vectors are `1 × n` rows or `n × 1`
//! columns and batches run along the first axis. Nodes are appended in
//! evaluation order, so the node list is already topologically sorted and
//! the backward pass is a single reverse sweep.

use std::cell::{Ref, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;

use ndarray::{concatenate, s, Array2, Axis};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Row-wise negative sets for the fused InfoNCE node. Row `i` of the
/// prediction is scored against `candidates[positive[i]]`,
/// `candidates[local[i][..]]` and `bank[bank_rows[i][..]]`.
#[derive(Clone, Debug, Default)]
pub struct ContrastiveIndex {
    pub positive: Vec<usize>,
    pub local: Vec<Vec<usize>>,
    pub bank_rows: Vec<Vec<usize>>,
}

#[derive(Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Abs(usize),
    Square(usize),
    Transpose(usize),
    Sum(usize),
    SumRows(usize),
    SumCols(usize),
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows(usize, Rc<Vec<usize>>),
    InfoNce {
        pred: usize,
        cand: usize,
        index: Rc<ContrastiveIndex>,
        bank: Rc<Array2<f64>>,
        tau: f64,
        /// Softmax weights per row, entry 0 being the positive.
        weights: Rc<Vec<Vec<f64>>>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::Offset(_) => "offset",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Sqrt(_) => "sqrt",
            Op::Abs(_) => "abs",
            Op::Square(_) => "square",
            Op::Transpose(_) => "transpose",
            Op::Sum(_) => "sum",
            Op::SumRows(_) => "sum_rows",
            Op::SumCols(_) => "sum_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::InfoNce { .. } => "infonce",
        }
    }
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Recorded computation. Cheap to create; drop it after `backward`.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Result of a backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient with respect to the leaf or parameter `v`; zeros if `v` did
    /// not influence the output. Interior gradients are not retained.
    pub fn wrt(&self, v: Var<'_>) -> Array2<f64> {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => Array2::zeros(v.shape()),
        }
    }
}

fn sum_to_shape(g: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<f64>, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub fn constant(&self, value: Array2<f64>) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, x: f64) -> Var<'_> {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Row vector `1 × n`.
    pub fn row(&self, xs: &[f64]) -> Var<'_> {
        self.constant(Array2::from_shape_vec((1, xs.len()), xs.to_vec()).expect("row shape"))
    }

    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    fn value_ref(&self, id: usize) -> Ref<'_, Array2<f64>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn unary(&self, a: Var<'_>, op: Op, f: impl Fn(f64) -> f64) -> Var<'_> {
        let v = self.value_ref(a.id).mapv(f);
        self.push(v, op)
    }

    /// Fused InfoNCE: mean over rows of `logsumexp(l) − l₀` where
    /// `l₀ = −‖pred − positive‖²/τ` and the rest score the negatives.
    pub fn infonce<'t>(
        &'t self,
        pred: Var<'t>,
        cand: Var<'t>,
        index: Rc<ContrastiveIndex>,
        bank: Rc<Array2<f64>>,
        tau: f64,
    ) -> Result<Var<'t>> {
        let (b, d) = pred.shape();
        if cand.shape().1 != d || (bank.nrows() > 0 && bank.ncols() != d) {
            return Err(Error::Shape("infonce latent widths differ".into()));
        }
        if index.positive.len() != b || index.local.len() != b || index.bank_rows.len() != b {
            return Err(Error::Shape("infonce index does not cover every row".into()));
        }
        let weights;
        let mean;
        {
            let p = self.value_ref(pred.id);
            let c = self.value_ref(cand.id);
            let sqdist = |i: usize, other: ndarray::ArrayView1<f64>| -> f64 {
                p.row(i).iter().zip(other.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
            };
            let mut total = 0.0;
            let mut w_all = Vec::with_capacity(b);
            for i in 0..b {
                let mut logits = Vec::with_capacity(1 + index.local[i].len() + index.bank_rows[i].len());
                logits.push(-sqdist(i, c.row(index.positive[i])) / tau);
                for &j in &index.local[i] {
                    logits.push(-sqdist(i, c.row(j)) / tau);
                }
                for &j in &index.bank_rows[i] {
                    logits.push(-sqdist(i, bank.row(j)) / tau);
                }
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                let lse = m + z.ln();
                total += lse - logits[0];
                w_all.push(logits.iter().map(|l| (l - lse).exp()).collect());
            }
            weights = Rc::new(w_all);
            mean = total / b as f64;
        }
        Ok(self.push(
            Array2::from_elem((1, 1), mean),
            Op::InfoNce { pred: pred.id, cand: cand.id, index, bank, tau, weights },
        ))
    }

    /// Reverse sweep from a scalar output.
    pub fn gradients(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[output.id].value.dim() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, got {:?}",
                nodes[output.id].value.dim()
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; output.id + 1];
        grads[output.id] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], id: usize, g: Array2<f64>) {
            match &mut grads[id] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient at node {id} ({})", nodes[id].op.name())));
            }
            let out = &nodes[id].value;
            let val = |k: usize| &nodes[k].value;
            match &nodes[id].op {
                Op::Leaf | Op::Param(_) => {
                    // Keep leaf gradients; interior ones are freed as we go.
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.dot(&val(*b).t()));
                    acc(&mut grads, *b, val(*a).t().dot(&g));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, sum_to_shape(g.clone(), val(*a).dim()));
                    acc(&mut grads, *b, sum_to_shape(g.clone(), val(*b).dim()));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, sum_to_shape(g.clone(), val(*a).dim()));
                    acc(&mut grads, *b, sum_to_shape(-&g, val(*b).dim()));
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, sum_to_shape(&g * val(*b), val(*a).dim()));
                    acc(&mut grads, *b, sum_to_shape(&g * val(*a), val(*b).dim()));
                }
                Op::Div(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    acc(&mut grads, *a, sum_to_shape(&g / vb, va.dim()));
                    let gb = -(&g * out) / vb;
                    acc(&mut grads, *b, sum_to_shape(gb, vb.dim()));
                }
                Op::Neg(a) => acc(&mut grads, *a, -&g),
                Op::Scale(a, c) => acc(&mut grads, *a, &g * *c),
                Op::Offset(a) => acc(&mut grads, *a, g.clone()),
                Op::Tanh(a) => acc(&mut grads, *a, &g * &out.mapv(|y| 1.0 - y * y)),
                Op::Sigmoid(a) => acc(&mut grads, *a, &g * &out.mapv(|y| y * (1.0 - y))),
                Op::Exp(a) => acc(&mut grads, *a, &g * out),
                Op::Ln(a) => acc(&mut grads, *a, &g / val(*a)),
                Op::Sqrt(a) => acc(&mut grads, *a, &g / &out.mapv(|y| 2.0 * y)),
                Op::Abs(a) => {
                    let sign = val(*a).mapv(|x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, *a, &g * &sign)
                }
                Op::Square(a) => acc(&mut grads, *a, &g * &val(*a).mapv(|x| 2.0 * x)),
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Sum(a) => acc(&mut grads, *a, Array2::from_elem(val(*a).dim(), g[[0, 0]])),
                Op::SumRows(a) => {
                    let full = g.broadcast(val(*a).dim()).expect("column broadcast").to_owned();
                    acc(&mut grads, *a, full)
                }
                Op::SumCols(a) => {
                    let full = g.broadcast(val(*a).dim()).expect("row broadcast").to_owned();
                    acc(&mut grads, *a, full)
                }
                Op::SliceCols(a, start) => {
                    let mut full = Array2::zeros(val(*a).dim());
                    full.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, full);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = val(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = val(p).nrows();
                        acc(&mut grads, p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::GatherRows(a, rows) => {
                    let mut full = Array2::zeros(val(*a).dim());
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = full.row_mut(r);
                        dst += &g.row(i);
                    }
                    acc(&mut grads, *a, full);
                }
                Op::InfoNce { pred, cand, index, bank, tau, weights } => {
                    let scale = g[[0, 0]] / index.positive.len() as f64;
                    let p = val(*pred);
                    let c = val(*cand);
                    let mut gp = Array2::<f64>::zeros(p.dim());
                    let mut gc = Array2::<f64>::zeros(c.dim());
                    let d = p.ncols();
                    for i in 0..p.nrows() {
                        let w = &weights[i];
                        let pi = p.row(i);
                        // dL/dl_k = w_k − [k = 0]; dl_k/dp = −2(p − n_k)/τ.
                        let mut push =
                            |coef: f64, other: ndarray::ArrayView1<f64>, dst: Option<usize>, gc: &mut Array2<f64>| {
                                let f = scale * coef * 2.0 / tau;
                                for k in 0..d {
                                    let diff = pi[k] - other[k];
                                    gp[[i, k]] -= f * diff;
                                    if let Some(j) = dst {
                                        gc[[j, k]] += f * diff;
                                    }
                                }
                            };
                        let pos = index.positive[i];
                        push(w[0] - 1.0, c.row(pos), Some(pos), &mut gc);
                        let mut k = 1;
                        for &j in &index.local[i] {
                            push(w[k], c.row(j), Some(j), &mut gc);
                            k += 1;
                        }
                        for &j in &index.bank_rows[i] {
                            push(w[k], bank.row(j), None, &mut gc);
                            k += 1;
                        }
                    }
                    acc(&mut grads, *pred, gp);
                    acc(&mut grads, *cand, gc);
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Backward from `output`, accumulating parameter gradients into `store`.
    pub fn backward(&self, output: Var<'_>, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(output)?;
        let nodes = self.nodes.borrow();
        for (id, g) in grads.grads.iter().enumerate() {
            if let (Op::Param(pid), Some(g)) = (&nodes[id].op, g) {
                store.accumulate_grad(*pid, g)?;
            }
        }
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.value_ref(self.id).dim()
    }

    pub fn value(&self) -> Array2<f64> {
        self.tape.value_ref(self.id).clone()
    }

    /// First element; handy for scalar outputs.
    pub fn item(&self) -> f64 {
        self.tape.value_ref(self.id)[[0, 0]]
    }

    fn binary(
        self,
        rhs: Var<'t>,
        op: fn(usize, usize) -> Op,
        f: impl Fn(&Array2<f64>, &Array2<f64>) -> Array2<f64>,
    ) -> Var<'t> {
        let v = {
            let a = self.tape.value_ref(self.id);
            let b = self.tape.value_ref(rhs.id);
            f(&a, &b)
        };
        self.tape.push(v, op(self.id, rhs.id))
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::MatMul, |a, b| a.dot(b))
    }

    pub fn t(self) -> Var<'t> {
        let v = self.tape.value_ref(self.id).t().to_owned();
        self.tape.push(v, Op::Transpose(self.id))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape.unary(self, Op::Scale(self.id, c), |x| x * c)
    }

    pub fn offset(self, c: f64) -> Var<'t> {
        self.tape.unary(self, Op::Offset(self.id), |x| x + c)
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.unary(self, Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.tape.unary(self, Op::Sigmoid(self.id), sigmoid)
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self, Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.tape.unary(self, Op::Ln(self.id), f64::ln)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.tape.unary(self, Op::Sqrt(self.id), f64::sqrt)
    }

    pub fn abs(self) -> Var<'t> {
        self.tape.unary(self, Op::Abs(self.id), f64::abs)
    }

    pub fn square(self) -> Var<'t> {
        self.tape.unary(self, Op::Square(self.id), |x| x * x)
    }

    /// Sum of every element, `1 × 1`.
    pub fn sum(self) -> Var<'t> {
        let v = self.tape.value_ref(self.id).sum();
        self.tape.push(Array2::from_elem((1, 1), v), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let (r, c) = self.shape();
        self.sum().scale(1.0 / (r * c) as f64)
    }

    /// Per-row sum, `n × 1`.
    pub fn sum_rows(self) -> Var<'t> {
        let v = self.tape.value_ref(self.id).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.tape.push(v, Op::SumRows(self.id))
    }

    /// Per-column sum, `1 × m`.
    pub fn sum_cols(self) -> Var<'t> {
        let v = self.tape.value_ref(self.id).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.tape.push(v, Op::SumCols(self.id))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        let v = self.tape.value_ref(self.id).slice(s![.., start..end]).to_owned();
        self.tape.push(v, Op::SliceCols(self.id, start))
    }

    pub fn gather_rows(self, rows: Rc<Vec<usize>>) -> Var<'t> {
        let v = self.tape.value_ref(self.id).select(Axis(0), &rows);
        self.tape.push(v, Op::GatherRows(self.id, rows))
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Var<'t> {
        let tape = parts[0].tape;
        let v = {
            let refs: Vec<_> = parts.iter().map(|p| tape.value_ref(p.id)).collect();
            let views: Vec<_> = refs.iter().map(|r| r.view()).collect();
            concatenate(Axis(1), &views).expect("row counts agree")
        };
        tape.push(v, Op::ConcatCols(parts.iter().map(|p| p.id).collect()))
    }

    pub fn concat_rows(parts: &[Var<'t>]) -> Var<'t> {
        let tape = parts[0].tape;
        let v = {
            let refs: Vec<_> = parts.iter().map(|p| tape.value_ref(p.id)).collect();
            let views: Vec<_> = refs.iter().map(|r| r.view()).collect();
            concatenate(Axis(0), &views).expect("column counts agree")
        };
        tape.push(v, Op::ConcatRows(parts.iter().map(|p| p.id).collect()))
    }
}

macro_rules! binop {
    ($tr:ident, $method:ident, $variant:ident, $sym:tt) => {
        impl<'t> $tr for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.binary(rhs, Op::$variant, |a, b| a $sym b)
            }
        }
    };
}

binop!(Add, add, Add, +);
binop!(Sub, sub, Sub, -);
binop!(Mul, mul, Mul, *);
binop!(Div, div, Div, /);

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.unary(self, Op::Neg(self.id), |x| -x)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.offset(c)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.offset(-c)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.scale(c)
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, v: Var<'t>) -> Var<'t> {
        (-v).offset(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn square_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", array![[3.0]]).unwrap();
        let tape = Tape::new();
        let y = tape.param(&store, w).square().sum();
        tape.backward(y, &mut store).unwrap();
        assert_eq!(store.grad(w)[[0, 0]], 6.0);
    }

    #[test]
    fn constant_output_gives_zero_grad() {
        let mut store = ParamStore::new();
        let w = store.add("w", array![[3.0]]).unwrap();
        let tape = Tape::new();
        let _unused = tape.param(&store, w);
        let y = tape.scalar(5.0);
        tape.backward(y, &mut store).unwrap();
        assert_eq!(store.grad(w)[[0, 0]], 0.0);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let tape = Tape::new();
        let x = tape.row(&[1.0, 2.0]);
        assert!(tape.gradients(x).is_err());
    }

    #[test]
    fn nan_partial_is_reported_with_node() {
        let tape = Tape::new();
        let x = tape.row(&[0.0]);
        let y = x.sqrt().sum();
        let err = tape.gradients(y).err().unwrap().to_string();
        assert!(err.contains("sqrt") || err.contains("node"), "{err}");
    }

    #[test]
    fn broadcast_add_sums_back() {
        let tape = Tape::new();
        let a = tape.constant(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let b = tape.row(&[10.0, 20.0]);
        let c = tape.constant(array![[1.0], [2.0], [3.0]]);
        let y = ((a + b) * c).sum();
        let g = tape.gradients(y).unwrap();
        assert_eq!(g.wrt(b), array![[6.0, 6.0]]);
        assert_eq!(g.wrt(c), array![[33.0], [37.0], [41.0]]);
    }

    #[test]
    fn gather_accumulates_duplicates() {
        let tape = Tape::new();
        let a = tape.constant(array![[1.0], [2.0]]);
        let g = a.gather_rows(Rc::new(vec![1, 1, 0])).sum();
        assert_eq!(g.item(), 5.0);
        assert_eq!(tape.gradients(g).unwrap().wrt(a), array![[1.0], [2.0]]);
    }
}
