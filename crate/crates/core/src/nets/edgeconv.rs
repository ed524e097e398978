use rand::Rng;
use rayon::prelude::*;

use super::mlp::{Activation, Linear};
use crate::autodiff::{CustomOp, Tape, Var};
use crate::error::{Result, TuvfError};
use crate::geometry::KnnIndex;
use crate::params::ParamStore;

/// `k` nearest rows of `values: [n, dim]` for every row, excluding the row
/// itself. Ties go to the lower index. Returns a flat `[n * k]` index list.
pub fn knn_graph(values: &[f64], n: usize, dim: usize, k: usize) -> Result<Vec<usize>> {
    if values.len() != n * dim {
        return Err(TuvfError::shape("knn_graph", format!("{} values for [{n}, {dim}]", values.len())));
    }
    if n <= k {
        return Err(TuvfError::invalid(format!("knn_graph needs more than k={k} points, got {n}")));
    }
    if dim == 3 {
        let pts: Vec<[f64; 3]> = values.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        let index = KnnIndex::new(&pts);
        let rows: Vec<Vec<usize>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let found = index.knn(pts[i], k + 1).expect("index is non-empty");
                found.into_iter().map(|(j, _)| j).filter(|&j| j != i).take(k).collect()
            })
            .collect();
        return Ok(rows.concat());
    }
    // squared distances via |a|^2 + |b|^2 - 2 a.b, a block of rows at a time
    let norms: Vec<f64> = values.chunks(dim).map(|r| r.iter().map(|x| x * x).sum()).collect();
    let vt = crate::autodiff::kernels::transpose(values, n, dim);
    let mut graph = Vec::with_capacity(n * k);
    for start in (0..n).step_by(256) {
        let rows = 256.min(n - start);
        let gram = crate::autodiff::kernels::matmul(&values[start * dim..(start + rows) * dim], &vt, rows, dim, n);
        let block: Vec<Vec<usize>> = gram
            .par_chunks(n)
            .enumerate()
            .map(|(r, g)| {
                let i = start + r;
                let mut d: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (norms[i] + norms[j] - 2.0 * g[j], j)).collect();
                d.select_nth_unstable_by(k - 1, |x, y| x.partial_cmp(y).unwrap());
                d.truncate(k);
                d.sort_by(|x, y| x.partial_cmp(y).unwrap());
                d.into_iter().map(|(_, j)| j).collect()
            })
            .collect();
        graph.extend(block.concat());
    }
    Ok(graph)
}

/// Graph layer over edge features `[h_i, h_j - h_i]`, shared MLP, then a
/// max over the `k` neighbours of each point.
///
/// With `attention` set, a linear score over each edge's hidden feature is
/// softmaxed across the neighbours, and the hidden features are reweighted by
/// `k * softmax` before the max.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConv {
    pub prefix: String,
    pub in_dim: usize,
    pub widths: Vec<usize>,
    pub k: usize,
    pub activation: Activation,
    pub attention: bool,
    /// Use the single-pass kernel when the edge MLP has one piecewise-linear layer.
    pub fused: bool,
}

impl EdgeConv {
    pub fn new(prefix: impl Into<String>, in_dim: usize, widths: &[usize], k: usize, activation: Activation) -> Self {
        EdgeConv {
            prefix: prefix.into(),
            in_dim,
            widths: widths.to_vec(),
            k,
            activation,
            attention: false,
            fused: true,
        }
    }

    pub fn with_attention(mut self) -> Self {
        self.attention = true;
        self
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().expect("at least one width")
    }

    pub fn layers(&self) -> Vec<Linear> {
        let mut dims = vec![2 * self.in_dim];
        dims.extend(&self.widths);
        dims.windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(format!("{}.l{i}", self.prefix), w[0], w[1]))
            .collect()
    }

    pub fn attention_layer(&self) -> Linear {
        Linear::new(format!("{}.att", self.prefix), self.out_dim(), 1)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for l in self.layers() {
            l.init(store, rng);
        }
        if self.attention {
            self.attention_layer().init(store, rng);
        }
    }

    /// Neighbours in the space of `h`'s current values.
    pub fn feature_neighbors(&self, tape: &Tape, h: Var) -> Result<Vec<usize>> {
        let s = tape.shape(h);
        if s.len() != 2 {
            return Err(TuvfError::shape("edgeconv", format!("expected [n, f], got {s:?}")));
        }
        knn_graph(tape.value(h), s[0], s[1], self.k)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let nb = self.feature_neighbors(tape, h)?;
        self.forward_with_neighbors(tape, store, h, &nb)
    }

    /// Forward with a precomputed flat `[n * k]` neighbour list.
    pub fn forward_with_neighbors(&self, tape: &mut Tape, store: &ParamStore, h: Var, neighbors: &[usize]) -> Result<Var> {
        let s = tape.shape(h).to_vec();
        if s.len() != 2 || s[1] != self.in_dim {
            return Err(TuvfError::shape(
                "edgeconv",
                format!("{} expects [n, {}], got {s:?}", self.prefix, self.in_dim),
            ));
        }
        let (n, k) = (s[0], self.k);
        if n <= k {
            return Err(TuvfError::invalid(format!("edgeconv needs more than k={k} points, got {n}")));
        }
        if neighbors.len() != n * k {
            return Err(TuvfError::shape("edgeconv", format!("{} neighbours for {n} points", neighbors.len())));
        }
        let layers = self.layers();
        // First layer split as h_i W_a + (h_j - h_i) W_b = h_i (W_a - W_b) + h_j W_b.
        let w = tape.param(store, &layers[0].weight_name())?;
        let b = tape.param(store, &layers[0].bias_name())?;
        let wa = tape.slice(w, 0, 0, self.in_dim)?;
        let wb = tape.slice(w, 0, self.in_dim, 2 * self.in_dim)?;
        let p = tape.matmul(h, wa)?;
        let q = tape.matmul(h, wb)?;
        let base = tape.sub(p, q)?;
        let base = tape.add(base, b)?;
        if self.fused {
            if let (1, Some(slope)) = (layers.len(), piecewise_slope(self.activation)) {
                return self.fused_edge_max(tape, store, base, q, neighbors, slope);
            }
        }
        let centre: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
        let bi = tape.gather_rows(base, &centre)?;
        let qj = tape.gather_rows(q, neighbors)?;
        let pre = tape.add(bi, qj)?;
        let mut e = self.activation.apply(tape, pre)?;
        for l in &layers[1..] {
            let a = l.forward(tape, store, e)?;
            e = self.activation.apply(tape, a)?;
        }
        let out = self.out_dim();
        if self.attention {
            let score = self.attention_layer().forward(tape, store, e)?;
            let score = tape.reshape(score, &[n, k])?;
            let att = tape.softmax(score)?;
            let att = tape.scale(att, k as f64)?;
            let att = tape.reshape(att, &[n * k, 1])?;
            e = tape.mul(e, att)?;
        }
        let e = tape.reshape(e, &[n, k, out])?;
        tape.max_axis(e, 1)
    }

    fn fused_edge_max(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        base: Var,
        q: Var,
        neighbors: &[usize],
        slope: f64,
    ) -> Result<Var> {
        let mut inputs = vec![base, q];
        if self.attention {
            let att = self.attention_layer();
            inputs.push(tape.param(store, &att.weight_name())?);
            inputs.push(tape.param(store, &att.bias_name())?);
        }
        let op = EdgeMaxOp {
            n: tape.shape(base)[0],
            h: self.out_dim(),
            k: self.k,
            neighbors: neighbors.to_vec(),
            slope,
            attention: self.attention,
            argmax: Vec::new(),
        };
        let vals: Vec<&[f64]> = inputs.iter().map(|&v| tape.value(v)).collect();
        let (out, argmax) = op.forward(&vals);
        let op = EdgeMaxOp { argmax, ..op };
        tape.custom(&inputs, vec![op.n, op.h], out, Box::new(op))
    }
}

fn piecewise_slope(a: Activation) -> Option<f64> {
    match a {
        Activation::Relu => Some(0.0),
        Activation::LeakyRelu(s) => Some(s),
        Activation::Identity => Some(1.0),
        _ => None,
    }
}

/// Single-layer edge MLP, optional attention and neighbour max in one pass,
/// so the `[n * k, h]` edge tensor is never materialised.
struct EdgeMaxOp {
    n: usize,
    h: usize,
    k: usize,
    neighbors: Vec<usize>,
    slope: f64,
    attention: bool,
    /// Winning neighbour slot per output element.
    argmax: Vec<u32>,
}

impl EdgeMaxOp {
    fn act(&self, x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            self.slope * x
        }
    }

    /// Edge activations `[k, h]` of point `i` and their multipliers `[k]`.
    fn edges(&self, inputs: &[&[f64]], i: usize, a: &mut [f64], m: &mut [f64], p: &mut [f64]) {
        let (h, k) = (self.h, self.k);
        let bi = &inputs[0][i * h..(i + 1) * h];
        for j in 0..k {
            let nb = self.neighbors[i * k + j];
            let qj = &inputs[1][nb * h..(nb + 1) * h];
            for c in 0..h {
                a[j * h + c] = self.act(bi[c] + qj[c]);
            }
        }
        if self.attention {
            let (w, b) = (inputs[2], inputs[3][0]);
            for j in 0..k {
                p[j] = b + a[j * h..(j + 1) * h].iter().zip(w).map(|(x, y)| x * y).sum::<f64>();
            }
            let mx = p[..k].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for pj in p[..k].iter_mut() {
                *pj = (*pj - mx).exp();
                s += *pj;
            }
            for j in 0..k {
                p[j] /= s;
                m[j] = k as f64 * p[j];
            }
        } else {
            m[..k].iter_mut().for_each(|x| *x = 1.0);
        }
    }

    fn forward(&self, inputs: &[&[f64]]) -> (Vec<f64>, Vec<u32>) {
        let (n, h, k) = (self.n, self.h, self.k);
        let mut out = vec![f64::NEG_INFINITY; n * h];
        let mut arg = vec![0u32; n * h];
        let (mut a, mut m, mut p) = (vec![0.0; k * h], vec![0.0; k], vec![0.0; k]);
        for i in 0..n {
            self.edges(inputs, i, &mut a, &mut m, &mut p);
            let o = &mut out[i * h..(i + 1) * h];
            let ar = &mut arg[i * h..(i + 1) * h];
            for j in 0..k {
                for c in 0..h {
                    let e = m[j] * a[j * h + c];
                    if e > o[c] {
                        o[c] = e;
                        ar[c] = j as u32;
                    }
                }
            }
        }
        (out, arg)
    }
}

impl CustomOp for EdgeMaxOp {
    fn name(&self) -> &'static str {
        "edge_max"
    }

    fn backward(&self, inputs: &[&[f64]], _output: &[f64], g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (n, h, k) = (self.n, self.h, self.k);
        let mut gbase = vec![0.0; n * h];
        let mut gq = vec![0.0; n * h];
        let mut gw = vec![0.0; if self.attention { h } else { 0 }];
        let mut gb = 0.0;
        let (mut a, mut m, mut p) = (vec![0.0; k * h], vec![0.0; k], vec![0.0; k]);
        let mut da = vec![0.0; k * h];
        let mut dm = vec![0.0; k];
        for i in 0..n {
            self.edges(inputs, i, &mut a, &mut m, &mut p);
            da.iter_mut().for_each(|x| *x = 0.0);
            dm.iter_mut().for_each(|x| *x = 0.0);
            for c in 0..h {
                let j = self.argmax[i * h + c] as usize;
                let gi = g[i * h + c];
                da[j * h + c] += gi * m[j];
                dm[j] += gi * a[j * h + c];
            }
            if self.attention {
                let w = inputs[2];
                let mean: f64 = (0..k).map(|l| dm[l] * p[l]).sum();
                for j in 0..k {
                    let ds = k as f64 * p[j] * (dm[j] - mean);
                    gb += ds;
                    for c in 0..h {
                        da[j * h + c] += ds * w[c];
                        gw[c] += ds * a[j * h + c];
                    }
                }
            }
            for j in 0..k {
                let nb = self.neighbors[i * k + j];
                for c in 0..h {
                    // a > 0 exactly when the pre-activation is positive
                    let d = if a[j * h + c] > 0.0 { da[j * h + c] } else { da[j * h + c] * self.slope };
                    gbase[i * h + c] += d;
                    gq[nb * h + c] += d;
                }
            }
        }
        let mut out = vec![needs[0].then_some(gbase), needs[1].then_some(gq)];
        if self.attention {
            out.push(needs[2].then_some(gw));
            out.push(needs[3].then_some(vec![gb]));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::kdtree::brute_force_knn;
    use crate::Tensor;

    fn setup(attention: bool) -> (EdgeConv, ParamStore) {
        let mut conv = EdgeConv::new("e", 3, &[5, 4], 3, Activation::leaky());
        if attention {
            conv = conv.with_attention();
        }
        let mut s = ParamStore::new();
        conv.init(&mut s, &mut crate::rng(2));
        (conv, s)
    }

    fn naive(conv: &EdgeConv, s: &ParamStore, h: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let act = |v: f64| if v > 0.0 { v } else { 0.2 * v };
        let dense = |name: &str, x: &[f64]| -> Vec<f64> {
            let w = s.get(&format!("{name}.w")).unwrap();
            let b = s.get(&format!("{name}.b")).unwrap();
            let out = w.shape()[1];
            (0..out)
                .map(|o| b.data()[o] + x.iter().enumerate().map(|(i, xi)| xi * w.data()[i * out + o]).sum::<f64>())
                .collect()
        };
        let pts: Vec<[f64; 3]> = h.iter().map(|r| [r[0], r[1], r[2]]).collect();
        h.iter()
            .enumerate()
            .map(|(i, hi)| {
                let nb: Vec<usize> = brute_force_knn(&pts, pts[i], conv.k + 1)
                    .into_iter()
                    .map(|x| x.0)
                    .filter(|&j| j != i)
                    .take(conv.k)
                    .collect();
                let mut best = vec![f64::NEG_INFINITY; conv.out_dim()];
                for j in nb {
                    let mut edge = hi.clone();
                    edge.extend(h[j].iter().zip(hi).map(|(a, b)| a - b));
                    let e1: Vec<f64> = dense("e.l0", &edge).into_iter().map(act).collect();
                    let e2: Vec<f64> = dense("e.l1", &e1).into_iter().map(act).collect();
                    for (b, v) in best.iter_mut().zip(e2) {
                        *b = b.max(v);
                    }
                }
                best
            })
            .collect()
    }

    fn cloud(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = crate::rng(seed);
        (0..n).map(|_| Tensor::uniform(&[3], 0.5, &mut rng).into_data()).collect()
    }

    fn run(conv: &EdgeConv, s: &ParamStore, h: &[Vec<f64>]) -> Vec<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(&[h.len(), 3], h.concat()).unwrap();
        let y = conv.forward(&mut tape, s, x).unwrap();
        tape.value(y).to_vec()
    }

    #[test]
    fn matches_naive_loop() {
        let (conv, s) = setup(false);
        let h = cloud(8, 3);
        let got = run(&conv, &s, &h);
        for (a, b) in got.iter().zip(naive(&conv, &s, &h).concat()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_points_drop_edge_term() {
        let (conv, s) = setup(false);
        let h = vec![vec![0.1, -0.2, 0.3]; 6];
        let got = run(&conv, &s, &h);
        let mut edge = h[0].clone();
        edge.extend([0.0; 3]);
        let mut tape = Tape::new();
        let x = tape.constant(&[1, 6], edge).unwrap();
        let mut e = x;
        for l in conv.layers() {
            let a = l.forward(&mut tape, &s, e).unwrap();
            e = tape.leaky_relu(a, 0.2).unwrap();
        }
        let expect = tape.value(e).to_vec();
        for row in got.chunks(4) {
            for (a, b) in row.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permutation_equivariant() {
        for attention in [false, true] {
            let (conv, s) = setup(attention);
            let h = cloud(20, 4);
            let base = run(&conv, &s, &h);
            let perm: Vec<usize> = (0..20).map(|i| (i * 7 + 3) % 20).collect();
            let hp: Vec<Vec<f64>> = perm.iter().map(|&i| h[i].clone()).collect();
            let got = run(&conv, &s, &hp);
            for (r, &i) in perm.iter().enumerate() {
                for c in 0..4 {
                    assert!((got[r * 4 + c] - base[i * 4 + c]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn too_few_points() {
        let (conv, s) = setup(false);
        let mut tape = Tape::new();
        let x = tape.constant(&[3, 3], vec![0.0; 9]).unwrap();
        assert!(conv.forward(&mut tape, &s, x).is_err());
    }

    #[test]
    fn high_dim_graph_matches_brute_force() {
        let mut rng = crate::rng(8);
        let v = Tensor::uniform(&[30, 5], 1.0, &mut rng).into_data();
        let g = knn_graph(&v, 30, 5, 4).unwrap();
        for i in 0..30 {
            let mut d: Vec<(f64, usize)> = (0..30)
                .filter(|&j| j != i)
                .map(|j| ((0..5).map(|c| (v[i * 5 + c] - v[j * 5 + c]).powi(2)).sum(), j))
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expect: Vec<usize> = d[..4].iter().map(|x| x.1).collect();
            assert_eq!(&g[i * 4..i * 4 + 4], &expect[..]);
        }
    }

    #[test]
    fn fused_kernel_matches_generic_graph() {
        for (attention, act) in [(false, Activation::leaky()), (true, Activation::leaky()), (true, Activation::Relu)] {
            let mut conv = EdgeConv::new("f", 3, &[6], 4, act);
            if attention {
                conv = conv.with_attention();
            }
            let mut s = ParamStore::new();
            conv.init(&mut s, &mut crate::rng(5));
            let h = cloud(16, 6).concat();
            let eval = |fused: bool| {
                let conv = EdgeConv { fused, ..conv.clone() };
                let mut st = s.clone();
                let mut tape = Tape::new();
                let x = tape.leaf(&Tensor::new(vec![16, 3], h.clone()).unwrap().with_grad()).unwrap();
                let y = conv.forward(&mut tape, &st, x).unwrap();
                let sq = tape.square(y).unwrap();
                let loss = tape.sum(sq).unwrap();
                let out = tape.value(y).to_vec();
                let g = tape.backward_into(loss, &mut st).unwrap();
                let mut grads: Vec<f64> = st.iter().flat_map(|(_, t)| t.grad.clone().unwrap()).collect();
                grads.extend(g.wrt(x).unwrap());
                (out, grads)
            };
            let (a, ga) = eval(true);
            let (b, gb) = eval(false);
            for (x, y) in a.iter().zip(&b).chain(ga.iter().zip(&gb)) {
                assert!((x - y).abs() < 1e-10 * (1.0 + y.abs()), "{x} vs {y}");
            }
        }
    }
}
