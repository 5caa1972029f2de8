//! Reverse-mode differentiation over batched matrix operations.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding
//! its value. [`Tape::backward`] walks the nodes in reverse, propagating
//! adjoints, and adds the adjoints of parameter leaves into a
//! [`ParamStore`]. Tapes are single use: build one per forward pass.
//!
//! Operations panic on shape mismatches; layer-level entry points validate
//! their inputs and return errors before touching the tape.

use std::sync::Arc;

use super::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Row index lists shared between steps of an unrolled computation.
pub type Segments = Arc<Vec<Vec<usize>>>;

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Column(Var, usize),
    Gather(Var, Arc<Vec<usize>>),
    SegmentSum(Var, Segments),
    SegmentProd(Var, Segments),
    Clamp(Var, f64, f64),
    Min(Var, Var),
    Softmax(Var),
    LogFloor(Var, f64),
    Sum(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) {
    assert!(a.shape() == b.shape(), "{op}: shape {:?} vs {:?}", a.shape(), b.shape());
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on non-scalar");
        m.get(0, 0)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a + row` with `row` (1 x cols) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(row));
        assert!(
            bv.rows() == 1 && bv.cols() == av.cols(),
            "add_row: {:?} + {:?}",
            av.shape(),
            bv.shape()
        );
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape("add", self.value(a), self.value(b));
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape("sub", self.value(a), self.value(b));
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape("mul", self.value(a), self.value(b));
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push(v, Op::Affine(a, scale))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows(), rows, "concat: row count mismatch");
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
                offset += pv.cols();
            }
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    pub fn column(&mut self, a: Var, c: usize) -> Var {
        let av = self.value(a);
        let v = Matrix::column((0..av.rows()).map(|r| av.get(r, c)).collect());
        self.push(v, Op::Column(a, c))
    }

    /// Row `r` of the output is row `index[r]` of `a`.
    pub fn gather(&mut self, a: Var, index: Arc<Vec<usize>>) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(index.len(), av.cols());
        for (r, &src) in index.iter().enumerate() {
            out.row_mut(r).copy_from_slice(av.row(src));
        }
        self.push(out, Op::Gather(a, index))
    }

    /// Row `r` of the output is the sum of rows `segments[r]` of `a`; an
    /// empty segment yields a zero row.
    pub fn segment_sum(&mut self, a: Var, segments: Segments) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(segments.len(), av.cols());
        for (r, seg) in segments.iter().enumerate() {
            let row = out.row_mut(r);
            for &m in seg {
                for (o, &x) in row.iter_mut().zip(av.row(m)) {
                    *o += x;
                }
            }
        }
        self.push(out, Op::SegmentSum(a, segments))
    }

    /// For a column vector `a`, entry `r` of the output is the product of
    /// entries `segments[r]`; an empty segment yields 1.
    pub fn segment_prod(&mut self, a: Var, segments: Segments) -> Var {
        let av = self.value(a);
        assert_eq!(av.cols(), 1, "segment_prod expects a column vector");
        let v = segments
            .iter()
            .map(|seg| seg.iter().map(|&m| av.get(m, 0)).product())
            .collect();
        self.push(Matrix::column(v), Op::SegmentProd(a, segments))
    }

    /// Elementwise clamp into `[lo, hi]`; the gradient passes only where
    /// the input already lies inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Elementwise minimum; the gradient goes to the selected argument
    /// (`a` on ties).
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        same_shape("min", self.value(a), self.value(b));
        let v = self.value(a).zip_map(self.value(b), f64::min);
        self.push(v, Op::Min(a, b))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::Softmax(a))
    }

    /// `ln(max(a, floor))`.
    pub fn log_floor(&mut self, a: Var, floor: f64) -> Var {
        let v = self.value(a).map(|x| x.max(floor).ln());
        self.push(v, Op::LogFloor(a, floor))
    }

    /// Sum of all entries as a 1 x 1 value.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(a))
    }

    /// Adjoints of every recorded node with respect to the scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Vec<Option<Matrix>>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::NoForward("a variable that was not recorded on this tape"));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::NoForward("a non-scalar value"));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    /// Accumulates `d loss / d param` into `store` for every parameter leaf.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                store.accumulate_grad(*id, &g);
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let da = g.matmul_nt(self.value(*b));
                let db = self.value(*a).matmul_tn(g);
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::AddRow(a, row) => {
                let mut db = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, &x) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
                accumulate(grads, *a, g.clone());
                accumulate(grads, *row, db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::Affine(a, scale) => {
                let s = *scale;
                accumulate(grads, *a, g.map(|x| s * x));
            }
            Op::Relu(a) => {
                accumulate(grads, *a, g.zip_map(out, |x, y| if y > 0.0 { x } else { 0.0 }));
            }
            Op::Sigmoid(a) => {
                accumulate(grads, *a, g.zip_map(out, |x, y| x * y * (1.0 - y)));
            }
            Op::Tanh(a) => {
                accumulate(grads, *a, g.zip_map(out, |x, y| x * (1.0 - y * y)));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    let mut dp = Matrix::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    offset += cols;
                    accumulate(grads, p, dp);
                }
            }
            Op::Column(a, c) => {
                let (rows, cols) = self.shape(*a);
                let mut da = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    da.set(r, *c, g.get(r, 0));
                }
                accumulate(grads, *a, da);
            }
            Op::Gather(a, index) => {
                let (rows, cols) = self.shape(*a);
                let mut da = Matrix::zeros(rows, cols);
                for (r, &src) in index.iter().enumerate() {
                    for (d, &x) in da.row_mut(src).iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::SegmentSum(a, segments) => {
                let (rows, cols) = self.shape(*a);
                let mut da = Matrix::zeros(rows, cols);
                for (r, seg) in segments.iter().enumerate() {
                    for &m in seg {
                        for (d, &x) in da.row_mut(m).iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::SegmentProd(a, segments) => {
                let av = self.value(*a);
                let mut da = Matrix::zeros(av.rows(), 1);
                let mut prefix = Vec::new();
                for (r, seg) in segments.iter().enumerate() {
                    let gr = g.get(r, 0);
                    if gr == 0.0 {
                        continue;
                    }
                    prefix.clear();
                    prefix.push(1.0);
                    for &m in seg {
                        let last = *prefix.last().unwrap();
                        prefix.push(last * av.get(m, 0));
                    }
                    let mut suffix = 1.0;
                    for k in (0..seg.len()).rev() {
                        let m = seg[k];
                        let d = da.get(m, 0) + gr * prefix[k] * suffix;
                        da.set(m, 0, d);
                        suffix *= av.get(m, 0);
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let da = g.zip_map(self.value(*a), |x, v| if v >= lo && v <= hi { x } else { 0.0 });
                accumulate(grads, *a, da);
            }
            Op::Min(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = Matrix::zeros(av.rows(), av.cols());
                let mut db = Matrix::zeros(av.rows(), av.cols());
                for k in 0..g.data().len() {
                    if av.data()[k] <= bv.data()[k] {
                        da.data_mut()[k] = g.data()[k];
                    } else {
                        db.data_mut()[k] = g.data()[k];
                    }
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Softmax(a) => {
                let mut da = Matrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let inner: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (k, d) in da.row_mut(r).iter_mut().enumerate() {
                        *d = y[k] * (gr[k] - inner);
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::LogFloor(a, floor) => {
                let f = *floor;
                let da = g.zip_map(self.value(*a), |x, v| if v > f { x / v } else { 0.0 });
                accumulate(grads, *a, da);
            }
            Op::Sum(a) => {
                let (rows, cols) = self.shape(*a);
                accumulate(grads, *a, Matrix::filled(rows, cols, g.get(0, 0)));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central-difference check of `f` with respect to every entry of the
    /// parameters in `store`.
    fn check(store: &mut ParamStore, f: impl Fn(&mut Tape, &ParamStore) -> Var) {
        store.zero_grads();
        let mut tape = Tape::new();
        let loss = f(&mut tape, store);
        tape.backward(loss, store).unwrap();
        let h = 1e-6;
        for id in store.ids().collect::<Vec<_>>() {
            for k in 0..store.value(id).data().len() {
                let orig = store.value(id).data()[k];
                store.value_mut(id).data_mut()[k] = orig + h;
                let mut t = Tape::new();
                let v = f(&mut t, store);
                let up = t.scalar(v);
                store.value_mut(id).data_mut()[k] = orig - h;
                let mut t = Tape::new();
                let v = f(&mut t, store);
                let down = t.scalar(v);
                store.value_mut(id).data_mut()[k] = orig;
                let fd = (up - down) / (2.0 * h);
                let ad = store.grad(id).data()[k];
                assert!(
                    (fd - ad).abs() <= 1e-8 + 1e-5 * fd.abs(),
                    "{}[{k}]: analytic {ad} vs numeric {fd}",
                    store.name(id)
                );
            }
        }
    }

    #[test]
    fn square_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::filled(1, 1, 3.0));
        let mut tape = Tape::new();
        let x = tape.param(&store, w);
        let y = tape.mul(x, x);
        tape.backward(y, &mut store).unwrap();
        assert_eq!(store.grad(w).get(0, 0), 6.0);
        // Repeated backward sums.
        tape.backward(y, &mut store).unwrap();
        assert_eq!(store.grad(w).get(0, 0), 12.0);
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        let logits = vec![0.3, -1.2, 2.0];
        let onehot = [0.0, 1.0, 0.0];
        let mut store = ParamStore::new();
        let w = store.add("logits", Matrix::from_vec(1, 3, logits.clone()).unwrap());
        let mut tape = Tape::new();
        let x = tape.param(&store, w);
        let p = tape.softmax(x);
        let lp = tape.log_floor(p, 1e-12);
        let q = tape.constant(Matrix::from_vec(1, 3, onehot.to_vec()).unwrap());
        let prod = tape.mul(lp, q);
        let s = tape.sum(prod);
        let loss = tape.affine(s, -1.0, 0.0);
        tape.backward(loss, &mut store).unwrap();
        let sm = softmax_rows(&Matrix::from_vec(1, 3, logits).unwrap());
        for k in 0..3 {
            assert!((store.grad(w).data()[k] - (sm.data()[k] - onehot[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_requires_recorded_scalar() {
        let mut store = ParamStore::new();
        let tape = Tape::new();
        assert!(matches!(tape.backward(Var(0), &mut store), Err(Error::NoForward(_))));
        let mut tape = Tape::new();
        let v = tape.constant(Matrix::zeros(2, 2));
        assert!(tape.backward(v, &mut store).is_err());
    }

    #[test]
    fn dense_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let x = store.add("x", random(4, 3, &mut rng));
        let w = store.add("w", random(3, 5, &mut rng));
        let b = store.add("b", random(1, 5, &mut rng));
        let c = store.add("c", random(4, 2, &mut rng));
        check(&mut store, |t, s| {
            let (x, w, b, c) = (t.param(s, x), t.param(s, w), t.param(s, b), t.param(s, c));
            let h = t.matmul(x, w);
            let h = t.add_row(h, b);
            let r = t.relu(h);
            let sg = t.sigmoid(h);
            let th = t.tanh(h);
            let a = t.mul(r, sg);
            let a = t.sub(a, th);
            let a = t.add(a, sg);
            let a = t.affine(a, 0.7, 0.1);
            let cat = t.concat(&[a, c]);
            let col = t.column(cat, 6);
            let sm = t.softmax(cat);
            let lg = t.log_floor(sm, 1e-12);
            let s1 = t.sum(lg);
            let s2 = t.sum(col);
            t.add(s1, s2)
        });
    }

    #[test]
    fn index_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let x = store.add("x", random(5, 3, &mut rng));
        let v = store.add("v", Matrix::column((0..5).map(|_| rng.gen_range(0.1..1.0)).collect()));
        let u = store.add("u", Matrix::column((0..4).map(|_| rng.gen_range(0.1..1.0)).collect()));
        let segs: Segments = Arc::new(vec![vec![0, 2], vec![], vec![1, 3, 4], vec![4, 0, 1]]);
        let index = Arc::new(vec![4, 4, 0, 2, 1]);
        check(&mut store, |t, s| {
            let (x, v, u) = (t.param(s, x), t.param(s, v), t.param(s, u));
            let g = t.gather(x, index.clone());
            let ss = t.segment_sum(g, segs.clone());
            let sp = t.segment_prod(v, segs.clone());
            let m = t.min(sp, u);
            let cl = t.clamp(ss, -0.5, 0.5);
            let a = t.sum(cl);
            let sq = t.mul(m, m);
            let b = t.sum(sq);
            t.add(a, b)
        });
    }

    #[test]
    fn segment_prod_with_zero_entry() {
        let mut store = ParamStore::new();
        let v = store.add("v", Matrix::column(vec![0.0, 2.0, 3.0]));
        let mut tape = Tape::new();
        let x = tape.param(&store, v);
        let p = tape.segment_prod(x, Arc::new(vec![vec![0, 1, 2]]));
        assert_eq!(tape.scalar(p), 0.0);
        tape.backward(p, &mut store).unwrap();
        assert_eq!(store.grad(v).data(), &[6.0, 0.0, 0.0]);
    }

    #[test]
    fn clamp_and_min_route_gradients() {
        let mut store = ParamStore::new();
        let a = store.add("a", Matrix::column(vec![-0.5, 0.5, 1.5]));
        let b = store.add("b", Matrix::column(vec![0.0, 0.7, 0.2]));
        let mut tape = Tape::new();
        let (av, bv) = (tape.param(&store, a), tape.param(&store, b));
        let c = tape.clamp(av, 0.0, 1.0);
        let m = tape.min(c, bv);
        let s = tape.sum(m);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(tape.value(m).data(), &[0.0, 0.5, 0.2]);
        // First entry: clamp outside its range stops the gradient even
        // though `a` wins the tie in `min`.
        assert_eq!(store.grad(a).data(), &[0.0, 1.0, 0.0]);
        assert_eq!(store.grad(b).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0, 0.0], vec![1000.0, -1000.0, 3.0]]).unwrap();
        let s = softmax_rows(&m);
        for k in 0..3 {
            assert!((s.get(0, k) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((s.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
