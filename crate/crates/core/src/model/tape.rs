//! Reverse-mode differentiation over dense row-major f64 matrices. A
//! [`Graph`] records one forward pass; [`Graph::backward`] walks it in
//! reverse and returns gradients for every parameter leaf.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn same_shape(&self) -> Mat {
        Mat::zeros(self.rows, self.cols)
    }
}

/// `a · b`
pub fn mm(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows, "matmul shape");
    let mut c = Mat::zeros(a.rows, b.cols);
    mm_acc(a, b, &mut c);
    c
}

fn mm_acc(a: &Mat, b: &Mat, c: &mut Mat) {
    let n = b.cols;
    for i in 0..a.rows {
        let crow = &mut c.data[i * n..(i + 1) * n];
        for (k, &av) in a.row(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (cv, bv) in crow.iter_mut().zip(b.row(k)) {
                *cv += av * bv;
            }
        }
    }
}

/// `a · bᵀ`
pub fn mm_bt(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.cols, "matmul-bt shape");
    let mut c = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            c.data[i * b.rows + j] = ar.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    c
}

// c += aᵀ · b
fn mm_at_acc(a: &Mat, b: &Mat, c: &mut Mat) {
    debug_assert_eq!(a.rows, b.rows);
    let n = b.cols;
    for r in 0..a.rows {
        let br = b.row(r);
        for (i, &av) in a.row(r).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (cv, bv) in c.data[i * n..(i + 1) * n].iter_mut().zip(br) {
                *cv += av * bv;
            }
        }
    }
}

pub type NodeId = usize;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Mat, inv_std: Vec<f64> },
    SoftmaxRows(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id].value
    }

    /// Constant input (no gradient is reported for it).
    pub fn input(&mut self, m: Mat) -> NodeId {
        self.push(m, Op::Leaf)
    }

    /// Trainable leaf bound to parameter slot `index`.
    pub fn param(&mut self, index: usize, m: &Mat) -> NodeId {
        self.push(m.clone(), Op::Param(index))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = mm(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = mm_bt(self.value(a), self.value(b));
        self.push(v, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "add shape");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let v = Mat::from_vec(x.rows, x.cols, data);
        self.push(v, Op::Add(a, b))
    }

    /// Broadcast a `1 × cols` row over every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (x, b) = (self.value(a), self.value(bias));
        assert_eq!((b.rows, b.cols), (1, x.cols), "bias shape");
        let mut v = x.clone();
        for i in 0..v.rows {
            for (e, bv) in v.row_mut(i).iter_mut().zip(&b.data) {
                *e += bv;
            }
        }
        self.push(v, Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let x = self.value(a);
        let v = Mat::from_vec(x.rows, x.cols, x.data.iter().map(|e| e * s).collect());
        self.push(v, Op::Scale(a, s))
    }

    /// Row-wise layer normalization with `1 × cols` gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let n = xv.cols as f64;
        let mut xhat = xv.same_shape();
        let mut inv_std = Vec::with_capacity(xv.rows);
        let mut out = xv.same_shape();
        for i in 0..xv.rows {
            let r = xv.row(i);
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for j in 0..xv.cols {
                let h = (r[j] - mean) * is;
                xhat.data[i * xv.cols + j] = h;
                out.data[i * xv.cols + j] = g.data[j] * h + b.data[j];
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let mut v = x.clone();
        for i in 0..v.rows {
            let r = v.row_mut(i);
            let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for e in r.iter_mut() {
                *e = (*e - max).exp();
                s += *e;
            }
            for e in r.iter_mut() {
                *e /= s;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let v = Mat::from_vec(x.rows, x.cols, x.data.iter().map(|&e| e.max(0.0)).collect());
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let v = Mat::from_vec(x.rows, x.cols, x.data.iter().map(|&e| sigmoid(e)).collect());
        self.push(v, Op::Sigmoid(a))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let x = self.value(a);
        assert!(start + len <= x.cols, "slice bounds");
        let mut v = Mat::zeros(x.rows, len);
        for i in 0..x.rows {
            v.row_mut(i).copy_from_slice(&x.row(i)[start..start + len]);
        }
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.rows, rows, "concat rows");
            for i in 0..rows {
                v.data[i * cols + off..i * cols + off + x.cols].copy_from_slice(x.row(i));
            }
            off += x.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Back-propagate the given output seeds. Returns `(param slot, gradient)`
    /// for every parameter leaf reached, in leaf creation order.
    pub fn backward(&self, seeds: &[(NodeId, Mat)]) -> Vec<(usize, Mat)> {
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        for (id, g) in seeds {
            accumulate(&mut grads, *id, g.clone());
        }
        let mut out = Vec::new();
        for id in (0..self.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Param(slot) => out.push((*slot, g)),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, mm_bt(&g, bv));
                    let mut gb = bv.same_shape();
                    mm_at_acc(av, &g, &mut gb);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulBt(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, mm(&g, bv));
                    let mut gb = bv.same_shape();
                    mm_at_acc(&g, av, &mut gb);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let mut gb = Mat::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for (s, v) in gb.data.iter_mut().zip(g.row(i)) {
                            *s += v;
                        }
                    }
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => {
                    let d = g.data.iter().map(|e| e * s).collect();
                    accumulate(&mut grads, *a, Mat::from_vec(g.rows, g.cols, d));
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gam = self.value(*gamma);
                    let n = g.cols as f64;
                    let mut gg = Mat::zeros(1, g.cols);
                    let mut gbeta = Mat::zeros(1, g.cols);
                    let mut gx = g.same_shape();
                    for i in 0..g.rows {
                        let (gr, hr) = (g.row(i), xhat.row(i));
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for j in 0..g.cols {
                            gg.data[j] += gr[j] * hr[j];
                            gbeta.data[j] += gr[j];
                            let d = gr[j] * gam.data[j];
                            mean_d += d;
                            mean_dh += d * hr[j];
                        }
                        mean_d /= n;
                        mean_dh /= n;
                        for j in 0..g.cols {
                            let d = gr[j] * gam.data[j];
                            gx.data[i * g.cols + j] = inv_std[i] * (d - mean_d - hr[j] * mean_dh);
                        }
                    }
                    accumulate(&mut grads, *gamma, gg);
                    accumulate(&mut grads, *beta, gbeta);
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(a) => {
                    let p = &node.value;
                    let mut gx = g.same_shape();
                    for i in 0..g.rows {
                        let (pr, gr) = (p.row(i), g.row(i));
                        let dot: f64 = pr.iter().zip(gr).map(|(x, y)| x * y).sum();
                        for j in 0..g.cols {
                            gx.data[i * g.cols + j] = pr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let d = g.data.iter().zip(&x.data).map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 }).collect();
                    accumulate(&mut grads, *a, Mat::from_vec(g.rows, g.cols, d));
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let d = g.data.iter().zip(&y.data).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect();
                    accumulate(&mut grads, *a, Mat::from_vec(g.rows, g.cols, d));
                }
                Op::SliceCols(a, start) => {
                    let x = self.value(*a);
                    let mut gx = x.same_shape();
                    for i in 0..g.rows {
                        gx.data[i * x.cols + start..i * x.cols + start + g.cols].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut gp = Mat::zeros(g.rows, w);
                        for i in 0..g.rows {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + w]);
                        }
                        accumulate(&mut grads, p, gp);
                        off += w;
                    }
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Mat>], id: NodeId, g: Mat) {
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::central_difference;

    fn m(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Mat::from_vec(rows, cols, data)
    }

    // scalar = Σ w ⊙ f(params)
    fn run(params: &[Mat], weights: &Mat, build: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId) -> (f64, Vec<Mat>) {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = params.iter().enumerate().map(|(i, p)| g.param(i, p)).collect();
        let out = build(&mut g, &ids);
        let v = g.value(out);
        let f = v.data.iter().zip(&weights.data).map(|(a, b)| a * b).sum();
        let mut grads: Vec<Mat> = params.iter().map(|p| p.same_shape()).collect();
        for (slot, gm) in g.backward(&[(out, weights.clone())]) {
            grads[slot].add_assign(&gm);
        }
        (f, grads)
    }

    fn check(params: Vec<Mat>, out_shape: (usize, usize), build: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId) {
        let w = m(out_shape.0, out_shape.1, 99);
        let (_, grads) = run(&params, &w, build);
        for (pi, p) in params.iter().enumerate() {
            for k in 0..p.data.len() {
                let num = central_difference(&p.data, k, 1e-6, |x| {
                    let mut ps = params.clone();
                    ps[pi].data.copy_from_slice(x);
                    run(&ps, &w, build).0
                });
                let ana = grads[pi].data[k];
                assert!((num - ana).abs() < 1e-7 * (1.0 + ana.abs()), "param {pi}[{k}]: {ana} vs {num}");
            }
        }
    }

    #[test]
    fn matmul_family() {
        check(vec![m(3, 4, 1), m(4, 2, 2)], (3, 2), &|g, p| g.matmul(p[0], p[1]));
        check(vec![m(3, 4, 1), m(5, 4, 2)], (3, 5), &|g, p| g.matmul_bt(p[0], p[1]));
    }

    #[test]
    fn elementwise_and_rows() {
        check(vec![m(3, 4, 1), m(3, 4, 2)], (3, 4), &|g, p| {
            let s = g.add(p[0], p[1]);
            let t = g.scale(s, 0.7);
            g.sigmoid(t)
        });
        check(vec![m(3, 4, 3), m(1, 4, 4)], (3, 4), &|g, p| {
            let a = g.add_row(p[0], p[1]);
            g.relu(a)
        });
        check(vec![m(3, 5, 5)], (3, 5), &|g, p| g.softmax_rows(p[0]));
        check(vec![m(4, 6, 6), m(1, 6, 7), m(1, 6, 8)], (4, 6), &|g, p| g.layer_norm(p[0], p[1], p[2]));
        check(vec![m(3, 6, 9), m(3, 2, 10)], (3, 5), &|g, p| {
            let a = g.slice_cols(p[0], 1, 3);
            g.concat_cols(&[a, p[1]])
        });
    }

    #[test]
    fn reused_node_accumulates() {
        check(vec![m(3, 3, 11)], (3, 3), &|g, p| g.matmul(p[0], p[0]));
    }
}
