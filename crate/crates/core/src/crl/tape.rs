//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and returns the gradient of a scalar output with
//! respect to every recorded node. Parameters enter as leaves tagged with
//! their index in the owning parameter list.

use nalgebra::DMatrix;

pub type Mat = DMatrix<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `n x m` plus a `1 x m` row broadcast over rows.
    AddRow(Var, Var),
    /// `n x m` times a `1 x m` row broadcast over rows.
    MulRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LeakyTanh(Var),
    Exp(Var),
    Ln(Var),
    Abs(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Cols(Var, usize),
    Rows(Var, usize),
    HCat(Vec<Var>),
    Sum(Var),
    /// Column means, `1 x m`.
    MeanRows(Var),
    /// Row sums, `n x 1`.
    SumCols(Var),
}

struct Node {
    value: Mat,
    op: Op,
    param: Option<usize>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, index: usize, value: Mat) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].param = Some(index);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row).clone();
        let mut v = self.value(a).clone();
        for mut x in v.row_iter_mut() {
            x += &r;
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row).clone();
        let mut v = self.value(a).clone();
        for mut x in v.row_iter_mut() {
            x.component_mul_assign(&r);
        }
        self.push(v, Op::MulRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).component_mul(self.value(b));
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).add_scalar(c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn leaky_tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh() + 0.1 * x);
        self.push(v, Op::LeakyTanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).abs();
        self.push(v, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Elementwise clamp; the gradient is zero where the input is clipped.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).columns(start, len).into_owned();
        self.push(v, Op::Cols(a, start))
    }

    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).rows(start, len).into_owned();
        self.push(v, Op::Rows(a, start))
    }

    pub fn hcat(&mut self, parts: &[Var]) -> Var {
        let n = self.value(parts[0]).nrows();
        let total: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut v = Mat::zeros(n, total);
        let mut c = 0;
        for &p in parts {
            let m = self.value(p);
            v.columns_mut(c, m.ncols()).copy_from(m);
            c += m.ncols();
        }
        self.push(v, Op::HCat(parts.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_element(1, 1, self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let n = m.nrows() as f64;
        let v = Mat::from_fn(1, m.ncols(), |_, j| m.column(j).sum() / n);
        self.push(v, Op::MeanRows(a))
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = Mat::from_fn(m.nrows(), 1, |i, _| m.row(i).sum());
        self.push(v, Op::SumCols(a))
    }

    /// Gradient of the scalar `out` with respect to every parameter leaf,
    /// accumulated into `grads[param_index]`.
    pub fn backward(&self, out: Var, grads: &mut [Mat]) {
        let mut adj: Vec<Option<Mat>> = vec![None; out.0 + 1];
        adj[out.0] = Some(Mat::from_element(1, 1, 1.0));

        fn acc(adj: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut adj[v.0] {
                Some(a) => *a += g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=out.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    if let Some(p) = node.param {
                        grads[p] += &g;
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = &g * self.value(*b).transpose();
                    let gb = self.value(*a).transpose() * &g;
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::AddRow(a, r) => {
                    let gr = Mat::from_fn(1, g.ncols(), |_, j| g.column(j).sum());
                    acc(&mut adj, *r, gr);
                    acc(&mut adj, *a, g);
                }
                Op::MulRow(a, r) => {
                    let av = self.value(*a);
                    let rv = self.value(*r);
                    let gr = Mat::from_fn(1, g.ncols(), |_, j| g.column(j).dot(&av.column(j)));
                    let mut ga = g;
                    for mut x in ga.row_iter_mut() {
                        x.component_mul_assign(rv);
                    }
                    acc(&mut adj, *r, gr);
                    acc(&mut adj, *a, ga);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *b, g.clone());
                    acc(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *b, -g.clone());
                    acc(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.component_mul(self.value(*b));
                    let gb = g.component_mul(self.value(*a));
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Scale(a, c) => acc(&mut adj, *a, g * *c),
                Op::AddScalar(a) => acc(&mut adj, *a, g),
                Op::LeakyTanh(a) => {
                    let d = self.value(*a).map(|x| {
                        let t = x.tanh();
                        1.0 - t * t + 0.1
                    });
                    acc(&mut adj, *a, g.component_mul(&d));
                }
                Op::Exp(a) => acc(&mut adj, *a, g.component_mul(&node.value)),
                Op::Ln(a) => acc(&mut adj, *a, g.component_div(self.value(*a))),
                Op::Abs(a) => {
                    let s = self.value(*a).map(|x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    acc(&mut adj, *a, g.component_mul(&s));
                }
                Op::Square(a) => acc(&mut adj, *a, g.component_mul(self.value(*a)) * 2.0),
                Op::Clamp(a, lo, hi) => {
                    let mask = self
                        .value(*a)
                        .map(|x| if x < *lo || x > *hi { 0.0 } else { 1.0 });
                    acc(&mut adj, *a, g.component_mul(&mask));
                }
                Op::Cols(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Mat::zeros(src.nrows(), src.ncols());
                    ga.columns_mut(*start, g.ncols()).copy_from(&g);
                    acc(&mut adj, *a, ga);
                }
                Op::Rows(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Mat::zeros(src.nrows(), src.ncols());
                    ga.rows_mut(*start, g.nrows()).copy_from(&g);
                    acc(&mut adj, *a, ga);
                }
                Op::HCat(parts) => {
                    let mut c = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut adj, p, g.columns(c, w).into_owned());
                        c += w;
                    }
                }
                Op::Sum(a) => {
                    let s = self.value(*a);
                    acc(&mut adj, *a, Mat::from_element(s.nrows(), s.ncols(), g[(0, 0)]));
                }
                Op::MeanRows(a) => {
                    let s = self.value(*a);
                    let n = s.nrows() as f64;
                    acc(&mut adj, *a, Mat::from_fn(s.nrows(), s.ncols(), |_, j| g[(0, j)] / n));
                }
                Op::SumCols(a) => {
                    let s = self.value(*a);
                    acc(&mut adj, *a, Mat::from_fn(s.nrows(), s.ncols(), |i, _| g[(i, 0)]));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central differences of `f` at `x` against the tape gradient.
    fn check(x: Mat, f: impl Fn(&mut Tape, Var) -> Var) {
        let mut t = Tape::new();
        let v = t.param(0, x.clone());
        let out = f(&mut t, v);
        let mut g = vec![Mat::zeros(x.nrows(), x.ncols())];
        t.backward(out, &mut g);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let eval = |m: Mat| {
                let mut t = Tape::new();
                let v = t.constant(m);
                let o = f(&mut t, v);
                t.scalar(o)
            };
            let fd = (eval(xp) - eval(xm)) / (2.0 * h);
            assert!((fd - g[0][i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[0][i]);
        }
    }

    fn x() -> Mat {
        Mat::from_row_slice(3, 2, &[0.3, -1.2, 0.8, 0.5, -0.4, 2.0])
    }

    #[test]
    fn elementwise_ops() {
        check(x(), |t, v| {
            let a = t.leaky_tanh(v);
            let b = t.exp(a);
            let c = t.square(b);
            let d = t.abs(v);
            let e = t.mul(c, d);
            let f = t.scale(e, 0.7);
            let g = t.add_scalar(f, 2.0);
            let h = t.ln(g);
            t.sum(h)
        });
    }

    #[test]
    fn structural_ops() {
        let w = Mat::from_row_slice(2, 4, &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8]);
        check(x(), move |t, v| {
            let wv = t.constant(w.clone());
            let m = t.matmul(v, wv);
            let r = t.cols(m, 1, 2);
            let top = t.rows(m, 0, 1);
            let top = t.cols(top, 0, 2);
            let r = t.mul_row(r, top);
            let row = t.mean_rows(v);
            let s = t.add_row(r, row);
            let p = t.mul_row(s, row);
            let cat = t.hcat(&[p, v]);
            let sc = t.sum_cols(cat);
            let sq = t.square(sc);
            let diff = t.sub(sq, sc);
            let both = t.add(diff, sc);
            let cl = t.clamp(both, -100.0, 100.0);
            t.sum(cl)
        });
    }

    #[test]
    fn clamp_blocks_gradient_outside() {
        let mut t = Tape::new();
        let v = t.param(0, Mat::from_row_slice(1, 3, &[-20.0, 0.0, 20.0]));
        let c = t.clamp(v, -10.0, 10.0);
        let s = t.sum(c);
        let mut g = vec![Mat::zeros(1, 3)];
        t.backward(s, &mut g);
        assert_eq!(g[0].as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        let mut t = Tape::new();
        let v = t.param(0, Mat::from_element(1, 1, 3.0));
        let a = t.mul(v, v);
        let b = t.add(a, v);
        let s = t.sum(b);
        let mut g = vec![Mat::zeros(1, 1)];
        t.backward(s, &mut g);
        assert_eq!(g[0][(0, 0)], 7.0);
    }
}
