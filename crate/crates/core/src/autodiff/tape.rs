//! A reverse-mode Wengert tape over flat f64 buffers.
//!
//! Every node owns a span of a single value arena; recording an operation
//! eagerly computes its value and pushes one op entry. `backward` seeds the
//! scalar loss with adjoint 1 and replays the ops in reverse, accumulating
//! adjoints in a second arena with the same layout. Because a node's span is
//! always allocated after its parents' spans, the reverse sweep can split the
//! adjoint arena at the node's offset and write parent adjoints without
//! copies.
//!
//! The op set is small and tailored to this crate: elementwise arithmetic,
//! dense affine maps, tanh/relu, concatenation, and the two truncated tensor
//! algebra operations (segment exponential and product) that make path
//! signatures differentiable end to end.
//!
//! Shape rules (matching operand lengths, scalar losses) are programming
//! errors here and panic; user-facing validation happens in the layers above.

use crate::error::{Error, Result};
use crate::tensor_algebra::algebra_len;

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) u32);

/// Deepest signature truncation the tape ops accept. Six levels is already
/// past what training configurations use.
pub const MAX_DEPTH: usize = 8;

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    Dot(NodeId, NodeId),
    /// out = M v with M row-major (out_len rows, len(v) columns).
    MatVec { m: NodeId, v: NodeId },
    /// out = W x + b with W row-major (len(b) rows, len(x) columns).
    Affine { w: NodeId, b: NodeId, x: NodeId },
    Tanh(NodeId),
    Relu(NodeId),
    Concat2(NodeId, NodeId),
    /// Truncated tensor exponential of a level-1 increment.
    TensorExp { increment: NodeId, depth: u32 },
    /// Truncated tensor product of two algebra elements.
    TensorMul { a: NodeId, b: NodeId, dim: u32, depth: u32 },
    /// Euclidean norm of the full operand. Gradient is 0 at the origin.
    L2Norm(NodeId),
}

/// Level offsets and sizes for dim/depth, on the stack.
fn layout(dim: usize, depth: usize) -> ([usize; MAX_DEPTH + 1], [usize; MAX_DEPTH + 1]) {
    assert!(depth <= MAX_DEPTH, "depth {depth} exceeds MAX_DEPTH");
    let mut offs = [0usize; MAX_DEPTH + 1];
    let mut pows = [0usize; MAX_DEPTH + 1];
    let mut off = 0usize;
    let mut pow = 1usize;
    for k in 0..=depth {
        offs[k] = off;
        pows[k] = pow;
        off += pow;
        pow *= dim;
    }
    (offs, pows)
}

/// The tape. Reuse one instance across loss evaluations via [`Tape::clear`]
/// to keep its arenas warm.
#[derive(Default)]
pub struct Tape {
    ops: Vec<Op>,
    spans: Vec<(usize, usize)>,
    vals: Vec<f64>,
    adj: Vec<f64>,
    has_grads: bool,
    scratch: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops all nodes but keeps allocated capacity. Old NodeIds become
    /// invalid.
    pub fn clear(&mut self) {
        self.ops.clear();
        self.spans.clear();
        self.vals.clear();
        self.adj.clear();
        self.has_grads = false;
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn span(&self, id: NodeId) -> (usize, usize) {
        self.spans[id.0 as usize]
    }

    /// The forward value of a node.
    pub fn value(&self, id: NodeId) -> &[f64] {
        let (o, l) = self.span(id);
        &self.vals[o..o + l]
    }

    /// The adjoint of a node. Errors until [`Tape::backward`] has run.
    pub fn grad(&self, id: NodeId) -> Result<&[f64]> {
        if !self.has_grads {
            return Err(Error::Invalid(
                "gradient read before backward() ran on this tape".into(),
            ));
        }
        let (o, l) = self.span(id);
        Ok(&self.adj[o..o + l])
    }

    /// Allocates a node and returns its id plus the value span to fill.
    fn alloc(&mut self, op: Op, len: usize) -> NodeId {
        let ofs = self.vals.len();
        self.vals.resize(ofs + len, 0.0);
        self.ops.push(op);
        self.spans.push((ofs, len));
        self.has_grads = false;
        NodeId((self.ops.len() - 1) as u32)
    }

    /// A leaf holding a copy of `data`. Inputs, parameters, and constants all
    /// enter the tape this way; `grad` works on any of them after backward.
    pub fn leaf(&mut self, data: &[f64]) -> NodeId {
        let id = self.alloc(Op::Leaf, data.len());
        let (o, l) = self.span(id);
        self.vals[o..o + l].copy_from_slice(data);
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ao, al) = self.span(a);
        let (bo, bl) = self.span(b);
        assert_eq!(al, bl, "add: operand lengths {al} vs {bl}");
        let id = self.alloc(Op::Add(a, b), al);
        let (head, out) = self.vals.split_at_mut(self.spans[id.0 as usize].0);
        for j in 0..al {
            out[j] = head[ao + j] + head[bo + j];
        }
        id
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ao, al) = self.span(a);
        let (bo, bl) = self.span(b);
        assert_eq!(al, bl, "sub: operand lengths {al} vs {bl}");
        let id = self.alloc(Op::Sub(a, b), al);
        let (head, out) = self.vals.split_at_mut(self.spans[id.0 as usize].0);
        for j in 0..al {
            out[j] = head[ao + j] - head[bo + j];
        }
        id
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ao, al) = self.span(a);
        let (bo, bl) = self.span(b);
        assert_eq!(al, bl, "mul: operand lengths {al} vs {bl}");
        let id = self.alloc(Op::Mul(a, b), al);
        let (head, out) = self.vals.split_at_mut(self.spans[id.0 as usize].0);
        for j in 0..al {
            out[j] = head[ao + j] * head[bo + j];
        }
        id
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let (ao, al) = self.span(a);
        let id = self.alloc(Op::Scale(a, c), al);
        let (head, out) = self.vals.split_at_mut(self.spans[id.0 as usize].0);
        for j in 0..al {
            out[j] = c * head[ao + j];
        }
        id
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let (ao, al) = self.span(a);
        let id = self.alloc(Op::Sum(a), 1);
        let (head, out) = self.vals.split_at_mut(self.spans[id.0 as usize].0);
        out[0] = head[ao..ao + al].iter().sum();
        id
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ao, al) = self.span(a);
        let (bo, bl) = self.span(b);
        assert_eq!(al, bl, "dot: operand lengths {al} vs {bl}");
        let id = self.alloc(Op::Dot(a, b), 1);
        let (head, out) = self.vals.split_at_mut(self.spans[id.0 as usize].0);
        out[0] = (0..al).map(|j| head[ao + j] * head[bo + j]).sum();
        id
    }

    /// Matrix-vector product; `m` holds a row-major matrix whose length is a
    /// multiple of len(v).
    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> NodeId {
        let (mo, ml) = self.span(m);
        let (vo, vl) = self.span(v);
        assert!(vl > 0 && ml % vl == 0, "matvec: {ml} weights vs {vl} inputs");
        let rows = ml / vl;
        let id = self.alloc(Op::MatVec { m, v }, rows);
        let (head, out) = self.vals.split_at_mut(self.spans[id.0 as usize].0);
        for r in 0..rows {
            let row = &head[mo + r * vl..mo + (r + 1) * vl];
            out[r] = row.iter().zip(&head[vo..vo + vl]).map(|(w, x)| w * x).sum();
        }
        id
    }

    /// Dense affine map W x + b.
    pub fn affine(&mut self, w: NodeId, b: NodeId, x: NodeId) -> NodeId {
        let (wo, wl) = self.span(w);
        let (bo, bl) = self.span(b);
        let (xo, xl) = self.span(x);
        assert!(xl > 0 && wl == bl * xl, "affine: {wl} weights vs {bl} rows x {xl} cols");
        let id = self.alloc(Op::Affine { w, b, x }, bl);
        let (head, out) = self.vals.split_at_mut(self.spans[id.0 as usize].0);
        for r in 0..bl {
            let row = &head[wo + r * xl..wo + (r + 1) * xl];
            let dot: f64 = row.iter().zip(&head[xo..xo + xl]).map(|(w, x)| w * x).sum();
            out[r] = dot + head[bo + r];
        }
        id
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let (ao, al) = self.span(a);
        let id = self.alloc(Op::Tanh(a), al);
        let (head, out) = self.vals.split_at_mut(self.spans[id.0 as usize].0);
        for j in 0..al {
            out[j] = head[ao + j].tanh();
        }
        id
    }

    /// Rectifier. The subgradient at exactly 0 is taken to be 0.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let (ao, al) = self.span(a);
        let id = self.alloc(Op::Relu(a), al);
        let (head, out) = self.vals.split_at_mut(self.spans[id.0 as usize].0);
        for j in 0..al {
            out[j] = head[ao + j].max(0.0);
        }
        id
    }

    pub fn concat2(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ao, al) = self.span(a);
        let (bo, bl) = self.span(b);
        let id = self.alloc(Op::Concat2(a, b), al + bl);
        let (head, out) = self.vals.split_at_mut(self.spans[id.0 as usize].0);
        out[..al].copy_from_slice(&head[ao..ao + al]);
        out[al..].copy_from_slice(&head[bo..bo + bl]);
        id
    }

    /// Truncated tensor exponential of a level-1 increment (see
    /// [`crate::tensor_algebra::TruncatedTensor::exp`]).
    pub fn tensor_exp(&mut self, increment: NodeId, depth: usize) -> NodeId {
        let (io, d) = self.span(increment);
        assert!(d >= 1, "tensor_exp: empty increment");
        let len = algebra_len(d, depth);
        let id = self.alloc(Op::TensorExp { increment, depth: depth as u32 }, len);
        let (head, out) = self.vals.split_at_mut(self.spans[id.0 as usize].0);
        let inc = &head[io..io + d];
        out[0] = 1.0;
        let mut off_prev = 0usize;
        let mut len_prev = 1usize;
        for n in 1..=depth {
            let off = off_prev + len_prev;
            let inv = 1.0 / n as f64;
            for u in 0..len_prev {
                let a = out[off_prev + u] * inv;
                for (i, &dx) in inc.iter().enumerate() {
                    out[off + u * d + i] = a * dx;
                }
            }
            off_prev = off;
            len_prev *= d;
        }
        id
    }

    /// Truncated tensor product (see
    /// [`crate::tensor_algebra::TruncatedTensor::tensor_mul`]).
    pub fn tensor_mul(&mut self, a: NodeId, b: NodeId, dim: usize, depth: usize) -> NodeId {
        let (ao, al) = self.span(a);
        let (bo, bl) = self.span(b);
        let len = algebra_len(dim, depth);
        assert!(al == len && bl == len, "tensor_mul: operands {al}/{bl}, want {len}");
        let (offs, pows) = layout(dim, depth);
        let id = self.alloc(Op::TensorMul { a, b, dim: dim as u32, depth: depth as u32 }, len);
        let (head, out) = self.vals.split_at_mut(self.spans[id.0 as usize].0);
        let va = &head[ao..ao + len];
        let vb = &head[bo..bo + len];
        for n in 0..=depth {
            for k in 0..=n {
                let (off_a, len_a) = (offs[k], pows[k]);
                let (off_b, len_b) = (offs[n - k], pows[n - k]);
                for u in 0..len_a {
                    let x = va[off_a + u];
                    let base = offs[n] + u * len_b;
                    for v in 0..len_b {
                        out[base + v] += x * vb[off_b + v];
                    }
                }
            }
        }
        id
    }

    pub fn l2_norm(&mut self, a: NodeId) -> NodeId {
        let (ao, al) = self.span(a);
        let id = self.alloc(Op::L2Norm(a), 1);
        let (head, out) = self.vals.split_at_mut(self.spans[id.0 as usize].0);
        out[0] = head[ao..ao + al].iter().map(|v| v * v).sum::<f64>().sqrt();
        id
    }

    /// Reverse sweep from a scalar loss node. Fills every node's adjoint;
    /// call [`Tape::grad`] afterwards.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let (lo, ll) = self.span(loss);
        if ll != 1 {
            return Err(Error::Invalid(format!(
                "backward needs a scalar loss, node has length {ll}"
            )));
        }
        self.adj.clear();
        self.adj.resize(self.vals.len(), 0.0);
        self.adj[lo] = 1.0;

        let Tape { ops, spans, vals, adj, scratch, .. } = self;

        for i in (0..ops.len()).rev() {
            let (ofs, len) = spans[i];
            // Parents were allocated strictly before this node, so their
            // spans live below `ofs` and the split is safe.
            let (pa, ga) = adj.split_at_mut(ofs);
            let g = &ga[..len];
            match ops[i] {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    let (ao, _) = spans[a.0 as usize];
                    let (bo, _) = spans[b.0 as usize];
                    for j in 0..len {
                        pa[ao + j] += g[j];
                    }
                    for j in 0..len {
                        pa[bo + j] += g[j];
                    }
                }
                Op::Sub(a, b) => {
                    let (ao, _) = spans[a.0 as usize];
                    let (bo, _) = spans[b.0 as usize];
                    for j in 0..len {
                        pa[ao + j] += g[j];
                    }
                    for j in 0..len {
                        pa[bo + j] -= g[j];
                    }
                }
                Op::Mul(a, b) => {
                    let (ao, _) = spans[a.0 as usize];
                    let (bo, _) = spans[b.0 as usize];
                    for j in 0..len {
                        pa[ao + j] += g[j] * vals[bo + j];
                        pa[bo + j] += g[j] * vals[ao + j];
                    }
                }
                Op::Scale(a, c) => {
                    let (ao, _) = spans[a.0 as usize];
                    for j in 0..len {
                        pa[ao + j] += c * g[j];
                    }
                }
                Op::Sum(a) => {
                    let (ao, al) = spans[a.0 as usize];
                    for j in 0..al {
                        pa[ao + j] += g[0];
                    }
                }
                Op::Dot(a, b) => {
                    let (ao, al) = spans[a.0 as usize];
                    let (bo, _) = spans[b.0 as usize];
                    for j in 0..al {
                        pa[ao + j] += g[0] * vals[bo + j];
                        pa[bo + j] += g[0] * vals[ao + j];
                    }
                }
                Op::MatVec { m, v } => {
                    let (mo, _) = spans[m.0 as usize];
                    let (vo, vl) = spans[v.0 as usize];
                    for (r, &gr) in g.iter().enumerate() {
                        let row_o = mo + r * vl;
                        for c in 0..vl {
                            pa[row_o + c] += gr * vals[vo + c];
                            pa[vo + c] += vals[row_o + c] * gr;
                        }
                    }
                }
                Op::Affine { w, b, x } => {
                    let (wo, _) = spans[w.0 as usize];
                    let (bo, _) = spans[b.0 as usize];
                    let (xo, xl) = spans[x.0 as usize];
                    for r in 0..len {
                        let gr = g[r];
                        pa[bo + r] += gr;
                        let row_o = wo + r * xl;
                        for c in 0..xl {
                            pa[row_o + c] += gr * vals[xo + c];
                            pa[xo + c] += vals[row_o + c] * gr;
                        }
                    }
                }
                Op::Tanh(a) => {
                    let (ao, _) = spans[a.0 as usize];
                    for j in 0..len {
                        let y = vals[ofs + j];
                        pa[ao + j] += g[j] * (1.0 - y * y);
                    }
                }
                Op::Relu(a) => {
                    let (ao, _) = spans[a.0 as usize];
                    for j in 0..len {
                        if vals[ao + j] > 0.0 {
                            pa[ao + j] += g[j];
                        }
                    }
                }
                Op::Concat2(a, b) => {
                    let (ao, al) = spans[a.0 as usize];
                    let (bo, bl) = spans[b.0 as usize];
                    for j in 0..al {
                        pa[ao + j] += g[j];
                    }
                    for j in 0..bl {
                        pa[bo + j] += g[al + j];
                    }
                }
                Op::TensorExp { increment, depth } => {
                    let (io, d) = spans[increment.0 as usize];
                    let depth = depth as usize;
                    let (offs, pows) = layout(d, depth);
                    if depth == 0 {
                        continue;
                    }
                    // carry holds the full adjoint of the current level,
                    // upstream plus contributions from higher levels. Two
                    // ping-pong halves sized by the largest level.
                    let top = pows[depth];
                    scratch.resize(2 * top, 0.0);
                    let (carry, carry_prev) = scratch.split_at_mut(top);
                    let mut carry = &mut carry[..];
                    let mut carry_prev = &mut carry_prev[..];
                    carry[..top].copy_from_slice(&g[offs[depth]..offs[depth] + top]);
                    for n in (1..=depth).rev() {
                        let prev_len = pows[n - 1];
                        let inv = 1.0 / n as f64;
                        carry_prev[..prev_len].fill(0.0);
                        for u in 0..prev_len {
                            let prev_val = vals[ofs + offs[n - 1] + u];
                            let mut acc = 0.0;
                            for i in 0..d {
                                let c = carry[u * d + i] * inv;
                                pa[io + i] += c * prev_val;
                                acc += c * vals[io + i];
                            }
                            carry_prev[u] = acc;
                        }
                        if n >= 2 {
                            for u in 0..prev_len {
                                carry_prev[u] += g[offs[n - 1] + u];
                            }
                        }
                        std::mem::swap(&mut carry, &mut carry_prev);
                    }
                }
                Op::TensorMul { a, b, dim, depth } => {
                    let (ao, _) = spans[a.0 as usize];
                    let (bo, _) = spans[b.0 as usize];
                    let (offs, pows) = layout(dim as usize, depth as usize);
                    for n in 0..=depth as usize {
                        for k in 0..=n {
                            let (off_a, len_a) = (offs[k], pows[k]);
                            let (off_b, len_b) = (offs[n - k], pows[n - k]);
                            for u in 0..len_a {
                                let base = offs[n] + u * len_b;
                                let mut acc = 0.0;
                                for v in 0..len_b {
                                    let gv = g[base + v];
                                    acc += gv * vals[bo + off_b + v];
                                    pa[bo + off_b + v] += gv * vals[ao + off_a + u];
                                }
                                pa[ao + off_a + u] += acc;
                            }
                        }
                    }
                }
                Op::L2Norm(a) => {
                    let (ao, al) = spans[a.0 as usize];
                    let y = vals[ofs];
                    if y > 0.0 {
                        let s = g[0] / y;
                        for j in 0..al {
                            pa[ao + j] += s * vals[ao + j];
                        }
                    }
                }
            }
        }
        self.has_grads = true;
        Ok(())
    }
}
