//! Minimal reverse-mode differentiation over a tape of vector nodes.
//!
//! The neural taggers build one [`Graph`] per sentence. Leaves are either
//! constant inputs or references into a [`ParamStore`] (embedding rows, weight
//! matrices); every intermediate node is a plain f64 vector, and losses are
//! length-1 nodes. [`Graph::backward`] replays the tape in reverse and
//! accumulates parameter gradients into the store, so gradients from several
//! graphs (a mini-batch) sum naturally.
//!
//! The op set is exactly what the tagger architectures need; matrices only
//! ever appear as parameters, which keeps every node one-dimensional.

use crate::error::{Error, Result};
use crate::lattice::{self, Lattice, TagPath};
use crate::tensor::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    /// Constant leaf; no gradient flows out.
    Input,
    /// Row of an embedding-table parameter.
    Lookup { param: ParamId, row: usize },
    /// `W x` for a 2-D parameter `W`.
    MatVec { param: ParamId, x: NodeId },
    /// `x + b` for a 1-D parameter `b`.
    AddBias { x: NodeId, param: ParamId },
    Add { a: NodeId, b: NodeId },
    Hadamard { a: NodeId, b: NodeId },
    Concat { parts: Vec<NodeId> },
    Slice { x: NodeId, start: usize },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    Relu { x: NodeId },
    /// Elementwise product with a constant mask (inverted dropout).
    MulMask { x: NodeId, mask: Vec<f64> },
    /// Elementwise max across same-length vectors; winners cached.
    MaxPool { xs: Vec<NodeId>, argmax: Vec<usize> },
    /// Sum of scalar nodes.
    SumScalars { xs: Vec<NodeId> },
    Scale { x: NodeId, c: f64 },
    /// Cross-entropy of softmax(logits) against one gold index.
    SoftmaxCe {
        logits: NodeId,
        gold: usize,
        softmax: Vec<f64>,
    },
    /// Negative log-likelihood of a gold path in a linear chain whose state
    /// scores are graph nodes and whose transition/boundary scores are
    /// parameters. Node and edge posteriors are cached at forward time.
    CrfNll {
        states: Vec<NodeId>,
        trans: ParamId,
        start: ParamId,
        end: ParamId,
        gold: Vec<usize>,
        node_marg: Vec<f64>,
        edge_marg: Vec<f64>,
        k: usize,
    },
}

struct Node {
    value: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

impl Node {
    fn new(value: Vec<f64>, op: Op) -> Self {
        let grad = vec![0.0; value.len()];
        Node { value, grad, op }
    }
}

/// Forward tape; see module docs.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(Node::new(value, Op::Input))
    }

    pub fn lookup(&mut self, params: &ParamStore, param: ParamId, row: usize) -> NodeId {
        let value = params.get(param).row(row).to_vec();
        self.push(Node::new(value, Op::Lookup { param, row }))
    }

    pub fn matvec(&mut self, params: &ParamStore, param: ParamId, x: NodeId) -> NodeId {
        let w = params.get(param);
        let (rows, cols) = (w.rows(), w.cols());
        let xv = &self.nodes[x.0].value;
        debug_assert_eq!(xv.len(), cols);
        let wd = w.data();
        let mut out = vec![0.0; rows];
        for (r, slot) in out.iter_mut().enumerate() {
            let row = &wd[r * cols..(r + 1) * cols];
            *slot = row.iter().zip(xv).map(|(w, x)| w * x).sum();
        }
        self.push(Node::new(out, Op::MatVec { param, x }))
    }

    pub fn add_bias(&mut self, params: &ParamStore, x: NodeId, param: ParamId) -> NodeId {
        let b = params.get(param).data();
        let value: Vec<f64> = self.nodes[x.0].value.iter().zip(b).map(|(x, b)| x + b).collect();
        self.push(Node::new(value, Op::AddBias { x, param }))
    }

    /// `W x + b` in one call.
    pub fn affine(
        &mut self,
        params: &ParamStore,
        w: ParamId,
        b: ParamId,
        x: NodeId,
    ) -> NodeId {
        let wx = self.matvec(params, w, x);
        self.add_bias(params, wx, b)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(a, b)| a + b)
            .collect();
        self.push(Node::new(value, Op::Add { a, b }))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(a, b)| a * b)
            .collect();
        self.push(Node::new(value, Op::Hadamard { a, b }))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut value = Vec::new();
        for &p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(Node::new(value, Op::Concat { parts: parts.to_vec() }))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let value = self.nodes[x.0].value[start..start + len].to_vec();
        self.push(Node::new(value, Op::Slice { x, start }))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push(Node::new(value, Op::Tanh { x }))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        self.push(Node::new(value, Op::Sigmoid { x }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.max(0.0)).collect();
        self.push(Node::new(value, Op::Relu { x }))
    }

    pub fn mul_mask(&mut self, x: NodeId, mask: Vec<f64>) -> NodeId {
        let value: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        self.push(Node::new(value, Op::MulMask { x, mask }))
    }

    /// Coordinate-wise max over same-length vectors; ties keep the earliest.
    pub fn max_pool(&mut self, xs: &[NodeId]) -> NodeId {
        debug_assert!(!xs.is_empty());
        let len = self.nodes[xs[0].0].value.len();
        let mut value = self.nodes[xs[0].0].value.clone();
        let mut argmax = vec![0usize; len];
        for (i, &x) in xs.iter().enumerate().skip(1) {
            for (k, &v) in self.nodes[x.0].value.iter().enumerate() {
                if v > value[k] {
                    value[k] = v;
                    argmax[k] = i;
                }
            }
        }
        self.push(Node::new(
            value,
            Op::MaxPool {
                xs: xs.to_vec(),
                argmax,
            },
        ))
    }

    pub fn sum_scalars(&mut self, xs: &[NodeId]) -> NodeId {
        let value = xs.iter().map(|&x| self.nodes[x.0].value[0]).sum();
        self.push(Node::new(vec![value], Op::SumScalars { xs: xs.to_vec() }))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v * c).collect();
        self.push(Node::new(value, Op::Scale { x, c }))
    }

    /// Softmax of a scalar-node vector of logits (probabilities, not a node).
    pub fn softmax_values(&self, logits: NodeId) -> Vec<f64> {
        softmax(&self.nodes[logits.0].value)
    }

    pub fn softmax_ce(&mut self, logits: NodeId, gold: usize) -> NodeId {
        let p = softmax(&self.nodes[logits.0].value);
        let loss = -p[gold].ln();
        self.push(Node::new(
            vec![loss],
            Op::SoftmaxCe {
                logits,
                gold,
                softmax: p,
            },
        ))
    }

    /// `logZ - score(gold)` for a chain over per-position state nodes with
    /// parameter transition/start/end scores.
    pub fn crf_nll(
        &mut self,
        params: &ParamStore,
        states: &[NodeId],
        trans: ParamId,
        start: ParamId,
        end: ParamId,
        gold: &[usize],
    ) -> Result<NodeId> {
        let n = states.len();
        let k = self.nodes[states[0].0].value.len();
        if gold.len() != n {
            return Err(Error::InvalidInput(format!(
                "gold path length {} does not match {} positions",
                gold.len(),
                n
            )));
        }
        let mut state = Vec::with_capacity(n * k);
        for &s in states {
            state.extend_from_slice(&self.nodes[s.0].value);
        }
        let lat = Lattice::from_parts(
            n,
            k,
            state,
            params.get(trans).data().to_vec(),
            params.get(start).data().to_vec(),
            params.get(end).data().to_vec(),
        )?;
        let marg = lattice::marginals(&lat);
        let gold_score = lattice::path_score(&lat, &TagPath::new(gold.to_vec()))?;
        let loss = marg.log_z - gold_score;

        let mut node_marg = Vec::with_capacity(n * k);
        for t in 0..n {
            node_marg.extend_from_slice(marg.node_row(t));
        }
        let mut edge_marg = Vec::with_capacity(n.saturating_sub(1) * k * k);
        for t in 0..n.saturating_sub(1) {
            for i in 0..k {
                for j in 0..k {
                    edge_marg.push(marg.edge(t, i, j));
                }
            }
        }
        Ok(self.push(Node::new(
            vec![loss],
            Op::CrfNll {
                states: states.to_vec(),
                trans,
                start,
                end,
                gold: gold.to_vec(),
                node_marg,
                edge_marg,
                k,
            },
        )))
    }

    /// Accumulate d(loss)/d(param) into the store's gradient buffers.
    /// Each graph can run backward once.
    pub fn backward(&mut self, params: &mut ParamStore, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::InvalidInput(
                "backward already ran on this graph; build a new graph per forward pass".into(),
            ));
        }
        self.backward_done = true;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::InvalidInput("loss node must be a scalar".into()));
        }
        self.nodes[loss.0].grad[0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if node.grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = &node.grad;
            match &node.op {
                Op::Input => {}
                Op::Lookup { param, row } => {
                    let t = params.get_mut(*param);
                    let cols = t.cols();
                    let grad = t.grad_mut();
                    for (k, gv) in g.iter().enumerate() {
                        grad[row * cols + k] += gv;
                    }
                }
                Op::MatVec { param, x } => {
                    let (rows, cols) = {
                        let t = params.get(*param);
                        (t.rows(), t.cols())
                    };
                    // dx += W^T g
                    {
                        let wd = params.get(*param).data();
                        let xg = &mut before[x.0].grad;
                        for r in 0..rows {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            let row = &wd[r * cols..(r + 1) * cols];
                            for (c, w) in row.iter().enumerate() {
                                xg[c] += w * gr;
                            }
                        }
                    }
                    // dW += g x^T
                    {
                        let xv = &before[x.0].value;
                        let wg = params.get_mut(*param).grad_mut();
                        for (r, gr) in g.iter().enumerate() {
                            if *gr == 0.0 {
                                continue;
                            }
                            let row = &mut wg[r * cols..(r + 1) * cols];
                            for (c, xvc) in xv.iter().enumerate() {
                                row[c] += gr * xvc;
                            }
                        }
                    }
                }
                Op::AddBias { x, param } => {
                    for (k, gv) in g.iter().enumerate() {
                        before[x.0].grad[k] += gv;
                    }
                    let bg = params.get_mut(*param).grad_mut();
                    for (k, gv) in g.iter().enumerate() {
                        bg[k] += gv;
                    }
                }
                Op::Add { a, b } => {
                    let g = g.to_vec();
                    for (k, gv) in g.iter().enumerate() {
                        before[a.0].grad[k] += gv;
                    }
                    for (k, gv) in g.iter().enumerate() {
                        before[b.0].grad[k] += gv;
                    }
                }
                Op::Hadamard { a, b } => {
                    let g = g.to_vec();
                    let av = before[a.0].value.clone();
                    let bv = before[b.0].value.clone();
                    for (k, gv) in g.iter().enumerate() {
                        before[a.0].grad[k] += gv * bv[k];
                    }
                    for (k, gv) in g.iter().enumerate() {
                        before[b.0].grad[k] += gv * av[k];
                    }
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    let g = g.to_vec();
                    for &p in parts {
                        let len = before[p.0].value.len();
                        for k in 0..len {
                            before[p.0].grad[k] += g[off + k];
                        }
                        off += len;
                    }
                }
                Op::Slice { x, start } => {
                    for (k, gv) in g.iter().enumerate() {
                        before[x.0].grad[start + k] += gv;
                    }
                }
                Op::Tanh { x } => {
                    let y = node.value.clone();
                    for (k, gv) in g.iter().enumerate() {
                        before[x.0].grad[k] += gv * (1.0 - y[k] * y[k]);
                    }
                }
                Op::Sigmoid { x } => {
                    let y = node.value.clone();
                    for (k, gv) in g.iter().enumerate() {
                        before[x.0].grad[k] += gv * y[k] * (1.0 - y[k]);
                    }
                }
                Op::Relu { x } => {
                    let y = node.value.clone();
                    for (k, gv) in g.iter().enumerate() {
                        if y[k] > 0.0 {
                            before[x.0].grad[k] += gv;
                        }
                    }
                }
                Op::MulMask { x, mask } => {
                    for (k, gv) in g.iter().enumerate() {
                        before[x.0].grad[k] += gv * mask[k];
                    }
                }
                Op::MaxPool { xs, argmax } => {
                    for (k, gv) in g.iter().enumerate() {
                        before[xs[argmax[k]].0].grad[k] += gv;
                    }
                }
                Op::SumScalars { xs } => {
                    let gv = g[0];
                    for &x in xs {
                        before[x.0].grad[0] += gv;
                    }
                }
                Op::Scale { x, c } => {
                    let c = *c;
                    for (k, gv) in g.iter().enumerate() {
                        before[x.0].grad[k] += gv * c;
                    }
                }
                Op::SoftmaxCe {
                    logits,
                    gold,
                    softmax,
                } => {
                    let gv = g[0];
                    let lg = &mut before[logits.0].grad;
                    for (j, &p) in softmax.iter().enumerate() {
                        lg[j] += gv * (p - f64::from(u8::from(j == *gold)));
                    }
                }
                Op::CrfNll {
                    states,
                    trans,
                    start,
                    end,
                    gold,
                    node_marg,
                    edge_marg,
                    k,
                } => {
                    let gv = g[0];
                    let k = *k;
                    let n = states.len();
                    for (t, &s) in states.iter().enumerate() {
                        let sg = &mut before[s.0].grad;
                        for j in 0..k {
                            let ind = f64::from(u8::from(gold[t] == j));
                            sg[j] += gv * (node_marg[t * k + j] - ind);
                        }
                    }
                    {
                        let tg = params.get_mut(*trans).grad_mut();
                        for t in 0..n.saturating_sub(1) {
                            for i in 0..k {
                                for j in 0..k {
                                    let ind =
                                        f64::from(u8::from(gold[t] == i && gold[t + 1] == j));
                                    tg[i * k + j] +=
                                        gv * (edge_marg[(t * k + i) * k + j] - ind);
                                }
                            }
                        }
                    }
                    {
                        let sg = params.get_mut(*start).grad_mut();
                        for j in 0..k {
                            let ind = f64::from(u8::from(gold[0] == j));
                            sg[j] += gv * (node_marg[j] - ind);
                        }
                    }
                    {
                        let eg = params.get_mut(*end).grad_mut();
                        for j in 0..k {
                            let ind = f64::from(u8::from(gold[n - 1] == j));
                            eg[j] += gv * (node_marg[(n - 1) * k + j] - ind);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
