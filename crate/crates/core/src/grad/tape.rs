//! Eager reverse-mode tape.
//!
//! The tape records one operation per node and evaluates values as it
//! records, so the forward value of any node is available immediately.
//! Builders exploit this to branch on intermediate values (logsumexp max
//! subtraction, degenerate covariance detection) without losing gradient
//! correctness. Besides scalar operations, the tape has fused dot-product
//! ops over contiguous node ranges that keep the node count close to the
//! output count for inner linear algebra (conditioner mat-vecs, GP
//! conditioning maps) rather than the flop count.

/// Handle of a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node(pub(crate) u32);

/// A contiguous block of nodes.
#[derive(Debug, Clone, Copy)]
pub struct NodeRange {
    pub start: u32,
    pub len: u32,
}

impl NodeRange {
    pub fn at(&self, i: usize) -> Node {
        debug_assert!((i as u32) < self.len);
        Node(self.start + i as u32)
    }

    pub fn iter(&self) -> impl Iterator<Item = Node> {
        let s = self.start;
        (0..self.len).map(move |i| Node(s + i))
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Clone, Copy)]
enum Op {
    Input,
    Const,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    Exp(u32),
    Ln(u32),
    Ln1p(u32),
    Expm1(u32),
    Sqrt(u32),
    Tanh(u32),
    Sigmoid(u32),
    Abs(u32),
    AddC(u32),
    MulC(u32, f64),
    /// Dot of a constant-pool slice with `n` consecutive nodes.
    DotConst { w: u32, x: u32, n: u32 },
    /// Dot of two blocks of `n` consecutive nodes.
    DotNodes { a: u32, b: u32, n: u32 },
    /// Sum of `n` consecutive nodes.
    Sum { x: u32, n: u32 },
}

/// Eager reverse-mode tape.
pub struct Tape {
    ops: Vec<Op>,
    vals: Vec<f64>,
    adj: Vec<f64>,
    pool: Vec<f64>,
}

/// Offset of a slice stored in the tape's constant pool.
#[derive(Debug, Clone, Copy)]
pub struct PoolSlice {
    off: u32,
    len: u32,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            ops: Vec::new(),
            vals: Vec::new(),
            adj: Vec::new(),
            pool: Vec::new(),
        }
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Tape {
            ops: Vec::with_capacity(nodes),
            vals: Vec::with_capacity(nodes),
            adj: Vec::new(),
            pool: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    #[inline]
    pub fn val(&self, n: Node) -> f64 {
        self.vals[n.0 as usize]
    }

    pub fn vals(&self, r: NodeRange) -> &[f64] {
        &self.vals[r.start as usize..(r.start + r.len) as usize]
    }

    #[inline]
    fn push(&mut self, op: Op, v: f64) -> Node {
        let id = self.vals.len() as u32;
        self.ops.push(op);
        self.vals.push(v);
        Node(id)
    }

    pub fn input(&mut self, v: f64) -> Node {
        self.push(Op::Input, v)
    }

    /// Push a contiguous block of inputs.
    pub fn inputs(&mut self, vs: &[f64]) -> NodeRange {
        let start = self.vals.len() as u32;
        for &v in vs {
            self.push(Op::Input, v);
        }
        NodeRange {
            start,
            len: vs.len() as u32,
        }
    }

    pub fn constant(&mut self, v: f64) -> Node {
        self.push(Op::Const, v)
    }

    /// Push a contiguous block of constants.
    pub fn constants(&mut self, vs: &[f64]) -> NodeRange {
        let start = self.vals.len() as u32;
        for &v in vs {
            self.push(Op::Const, v);
        }
        NodeRange {
            start,
            len: vs.len() as u32,
        }
    }

    pub fn add(&mut self, a: Node, b: Node) -> Node {
        let v = self.vals[a.0 as usize] + self.vals[b.0 as usize];
        self.push(Op::Add(a.0, b.0), v)
    }

    pub fn sub(&mut self, a: Node, b: Node) -> Node {
        let v = self.vals[a.0 as usize] - self.vals[b.0 as usize];
        self.push(Op::Sub(a.0, b.0), v)
    }

    pub fn mul(&mut self, a: Node, b: Node) -> Node {
        let v = self.vals[a.0 as usize] * self.vals[b.0 as usize];
        self.push(Op::Mul(a.0, b.0), v)
    }

    pub fn div(&mut self, a: Node, b: Node) -> Node {
        let v = self.vals[a.0 as usize] / self.vals[b.0 as usize];
        self.push(Op::Div(a.0, b.0), v)
    }

    pub fn neg(&mut self, a: Node) -> Node {
        let v = -self.vals[a.0 as usize];
        self.push(Op::Neg(a.0), v)
    }

    pub fn exp(&mut self, a: Node) -> Node {
        let v = self.vals[a.0 as usize].exp();
        self.push(Op::Exp(a.0), v)
    }

    pub fn ln(&mut self, a: Node) -> Node {
        let v = self.vals[a.0 as usize].ln();
        self.push(Op::Ln(a.0), v)
    }

    pub fn ln_1p(&mut self, a: Node) -> Node {
        let v = self.vals[a.0 as usize].ln_1p();
        self.push(Op::Ln1p(a.0), v)
    }

    pub fn exp_m1(&mut self, a: Node) -> Node {
        let v = self.vals[a.0 as usize].exp_m1();
        self.push(Op::Expm1(a.0), v)
    }

    pub fn sqrt(&mut self, a: Node) -> Node {
        let v = self.vals[a.0 as usize].sqrt();
        self.push(Op::Sqrt(a.0), v)
    }

    pub fn tanh(&mut self, a: Node) -> Node {
        let v = self.vals[a.0 as usize].tanh();
        self.push(Op::Tanh(a.0), v)
    }

    pub fn sigmoid(&mut self, a: Node) -> Node {
        let x = self.vals[a.0 as usize];
        let v = if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        };
        self.push(Op::Sigmoid(a.0), v)
    }

    pub fn abs(&mut self, a: Node) -> Node {
        let v = self.vals[a.0 as usize].abs();
        self.push(Op::Abs(a.0), v)
    }

    pub fn add_c(&mut self, a: Node, c: f64) -> Node {
        let v = self.vals[a.0 as usize] + c;
        self.push(Op::AddC(a.0), v)
    }

    pub fn mul_c(&mut self, a: Node, c: f64) -> Node {
        let v = self.vals[a.0 as usize] * c;
        self.push(Op::MulC(a.0, c), v)
    }

    /// Store a weight vector in the constant pool for reuse across dots.
    pub fn pool(&mut self, w: &[f64]) -> PoolSlice {
        let off = self.pool.len() as u32;
        self.pool.extend_from_slice(w);
        PoolSlice {
            off,
            len: w.len() as u32,
        }
    }

    /// Dot product of a pooled constant vector with `n` consecutive nodes
    /// starting at `x`.
    pub fn dot_pooled(&mut self, w: PoolSlice, x: Node, n: usize) -> Node {
        debug_assert!(n as u32 <= w.len);
        let mut acc = 0.0;
        let xs = &self.vals[x.0 as usize..x.0 as usize + n];
        let ws = &self.pool[w.off as usize..w.off as usize + n];
        for i in 0..n {
            acc += ws[i] * xs[i];
        }
        self.push(
            Op::DotConst {
                w: w.off,
                x: x.0,
                n: n as u32,
            },
            acc,
        )
    }

    /// Dot product of a constant vector with `n` consecutive nodes.
    pub fn dot_const(&mut self, w: &[f64], x: Node, n: usize) -> Node {
        let ws = self.pool(&w[..n]);
        self.dot_pooled(ws, x, n)
    }

    /// Dot product of two blocks of `n` consecutive nodes.
    pub fn dot_nodes(&mut self, a: Node, b: Node, n: usize) -> Node {
        let mut acc = 0.0;
        for i in 0..n {
            acc += self.vals[a.0 as usize + i] * self.vals[b.0 as usize + i];
        }
        self.push(
            Op::DotNodes {
                a: a.0,
                b: b.0,
                n: n as u32,
            },
            acc,
        )
    }

    /// Sum of `n` consecutive nodes.
    pub fn sum_range(&mut self, x: Node, n: usize) -> Node {
        let mut acc = 0.0;
        for i in 0..n {
            acc += self.vals[x.0 as usize + i];
        }
        self.push(Op::Sum { x: x.0, n: n as u32 }, acc)
    }

    /// Sum of an arbitrary node list (chained adds).
    pub fn sum_nodes(&mut self, nodes: &[Node]) -> Node {
        match nodes.len() {
            0 => self.constant(0.0),
            1 => nodes[0],
            _ => {
                let mut acc = self.add(nodes[0], nodes[1]);
                for &n in &nodes[2..] {
                    acc = self.add(acc, n);
                }
                acc
            }
        }
    }

    /// Copy nodes into a fresh contiguous block (for fused ops that need
    /// contiguity).
    pub fn gather(&mut self, nodes: &[Node]) -> NodeRange {
        let start = self.vals.len() as u32;
        for &n in nodes {
            let v = self.vals[n.0 as usize];
            self.push(Op::AddC(n.0), v);
        }
        NodeRange {
            start,
            len: nodes.len() as u32,
        }
    }

    /// logsumexp over a contiguous block, with the max detached (the value
    /// and gradient are both exact; detaching the max only affects how the
    /// expression is recorded).
    pub fn logsumexp_range(&mut self, x: NodeRange) -> Node {
        let m = self
            .vals(x)
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let m = if m.is_finite() { m } else { 0.0 };
        let sh_start = self.vals.len() as u32;
        for n in x.iter() {
            self.add_c(n, -m);
        }
        let ex_start = self.vals.len() as u32;
        for i in 0..x.len() {
            self.exp(Node(sh_start + i as u32));
        }
        let s = self.sum_range(Node(ex_start), x.len());
        let l = self.ln(s);
        self.add_c(l, m)
    }

    /// Run the reverse sweep from `out` and expose adjoints via `grad`.
    pub fn backward(&mut self, out: Node) {
        self.adj.clear();
        self.adj.resize(self.vals.len(), 0.0);
        self.adj[out.0 as usize] = 1.0;
        for idx in (0..self.ops.len()).rev() {
            let go = self.adj[idx];
            if go == 0.0 {
                continue;
            }
            match self.ops[idx] {
                Op::Input | Op::Const => {}
                Op::Add(a, b) => {
                    self.adj[a as usize] += go;
                    self.adj[b as usize] += go;
                }
                Op::Sub(a, b) => {
                    self.adj[a as usize] += go;
                    self.adj[b as usize] -= go;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.vals[a as usize], self.vals[b as usize]);
                    self.adj[a as usize] += go * vb;
                    self.adj[b as usize] += go * va;
                }
                Op::Div(a, b) => {
                    let (va, vb) = (self.vals[a as usize], self.vals[b as usize]);
                    self.adj[a as usize] += go / vb;
                    self.adj[b as usize] -= go * va / (vb * vb);
                }
                Op::Neg(a) => self.adj[a as usize] -= go,
                Op::Exp(a) => {
                    let out_v = self.vals[idx];
                    self.adj[a as usize] += go * out_v;
                }
                Op::Ln(a) => {
                    let va = self.vals[a as usize];
                    self.adj[a as usize] += go / va;
                }
                Op::Ln1p(a) => {
                    let va = self.vals[a as usize];
                    self.adj[a as usize] += go / (1.0 + va);
                }
                Op::Expm1(a) => {
                    let va = self.vals[a as usize];
                    self.adj[a as usize] += go * va.exp();
                }
                Op::Sqrt(a) => {
                    let out_v = self.vals[idx];
                    self.adj[a as usize] += go / (2.0 * out_v);
                }
                Op::Tanh(a) => {
                    let out_v = self.vals[idx];
                    self.adj[a as usize] += go * (1.0 - out_v * out_v);
                }
                Op::Sigmoid(a) => {
                    let out_v = self.vals[idx];
                    self.adj[a as usize] += go * out_v * (1.0 - out_v);
                }
                Op::Abs(a) => {
                    let va = self.vals[a as usize];
                    let s = if va > 0.0 {
                        1.0
                    } else if va < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    self.adj[a as usize] += go * s;
                }
                Op::AddC(a) => self.adj[a as usize] += go,
                Op::MulC(a, c) => self.adj[a as usize] += go * c,
                Op::DotConst { w, x, n } => {
                    let w0 = w as usize;
                    let x0 = x as usize;
                    for i in 0..n as usize {
                        self.adj[x0 + i] += go * self.pool[w0 + i];
                    }
                }
                Op::DotNodes { a, b, n } => {
                    let a0 = a as usize;
                    let b0 = b as usize;
                    for i in 0..n as usize {
                        self.adj[a0 + i] += go * self.vals[b0 + i];
                    }
                    for i in 0..n as usize {
                        self.adj[b0 + i] += go * self.vals[a0 + i];
                    }
                }
                Op::Sum { x, n } => {
                    let x0 = x as usize;
                    for i in 0..n as usize {
                        self.adj[x0 + i] += go;
                    }
                }
            }
        }
    }

    /// Adjoint of a node after [`Tape::backward`].
    pub fn grad(&self, n: Node) -> f64 {
        self.adj[n.0 as usize]
    }

    /// Adjoints of a contiguous block after [`Tape::backward`].
    pub fn grads(&self, r: NodeRange) -> &[f64] {
        &self.adj[r.start as usize..(r.start + r.len) as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        // f(x) = -0.5 * |x|^2, grad = -x
        let mut t = Tape::new();
        let x = t.inputs(&[0.3, -1.2, 2.0]);
        let d = t.dot_nodes(Node(x.start), Node(x.start), 3);
        let f = t.mul_c(d, -0.5);
        t.backward(f);
        assert!((t.val(f) - (-0.5 * (0.09 + 1.44 + 4.0))).abs() < 1e-14);
        let g = t.grads(x);
        assert!((g[0] - -0.3).abs() < 1e-14);
        assert!((g[1] - 1.2).abs() < 1e-14);
        assert!((g[2] - -2.0).abs() < 1e-14);
    }

    #[test]
    fn fanout_and_chain() {
        // f(x) = exp(x) * x + ln(x) at x = 1.5
        let mut t = Tape::new();
        let x = t.input(1.5);
        let e = t.exp(x);
        let p = t.mul(e, x);
        let l = t.ln(x);
        let f = t.add(p, l);
        t.backward(f);
        let ex = 1.5f64.exp();
        assert!((t.val(f) - (ex * 1.5 + 1.5f64.ln())).abs() < 1e-12);
        // d/dx = exp(x)(1 + x) + 1/x
        let expect = ex * 2.5 + 1.0 / 1.5;
        assert!((t.grad(x) - expect).abs() < 1e-12);
    }

    #[test]
    fn dot_const_gradient() {
        let mut t = Tape::new();
        let x = t.inputs(&[1.0, 2.0, 3.0]);
        let d = t.dot_const(&[0.5, -1.0, 2.0], Node(x.start), 3);
        t.backward(d);
        assert!((t.val(d) - (0.5 - 2.0 + 6.0)).abs() < 1e-14);
        assert_eq!(t.grads(x), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn logsumexp_matches_direct() {
        let xs = [0.3, -2.0, 5.0, 1.1];
        let mut t = Tape::new();
        let r = t.inputs(&xs);
        let l = t.logsumexp_range(r);
        let direct = xs.iter().map(|v| v.exp()).sum::<f64>().ln();
        assert!((t.val(l) - direct).abs() < 1e-12);
        t.backward(l);
        let denom: f64 = xs.iter().map(|v| v.exp()).sum();
        for (i, &x) in xs.iter().enumerate() {
            assert!((t.grads(r)[i] - x.exp() / denom).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_stable_and_correct() {
        let mut t = Tape::new();
        let big = t.input(800.0);
        let s1 = t.sigmoid(big);
        assert_eq!(t.val(s1), 1.0);
        let small = t.input(-800.0);
        let s2 = t.sigmoid(small);
        assert_eq!(t.val(s2), 0.0);
        let x = t.input(0.3);
        let s = t.sigmoid(x);
        t.backward(s);
        let sv = 1.0 / (1.0 + (-0.3f64).exp());
        assert!((t.val(s) - sv).abs() < 1e-15);
        assert!((t.grad(x) - sv * (1.0 - sv)).abs() < 1e-15);
    }
}
