//! Offsets of each parameter tensor inside the flat parameter vector.
//!
//! Order: token embeddings `[V x d]`, position embeddings `[T x d]`, then per
//! layer `ln1 [d]`, `wq`, `wk`, `wv`, `wo [d x d]`, `ln2 [d]`, `w1 [d x F]`,
//! `b1 [F]`, `w2 [F x d]`, `b2 [d]`, then `ln_f [d]`, `w_out [d x V]`,
//! `b_out [V]`. All matrices are row-major.

use super::ModelDims;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerOffsets {
    pub ln1: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ln2: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub tok: usize,
    pub pos: usize,
    pub layers: Vec<LayerOffsets>,
    pub lnf: usize,
    pub w_out: usize,
    pub b_out: usize,
    pub total: usize,
}

/// Kind of tensor a parameter belongs to; drives initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Role {
    Embedding,
    Gain,
    Weight,
    Bias,
}

impl Layout {
    pub fn new(dims: &ModelDims) -> Self {
        let (v, d, f, t) = (dims.vocab, dims.embed, dims.ff, dims.context);
        let mut at = 0;
        let mut take = |len: usize| {
            let start = at;
            at += len;
            start
        };
        let tok = take(v * d);
        let pos = take(t * d);
        let layers = (0..dims.layers)
            .map(|_| LayerOffsets {
                ln1: take(d),
                wq: take(d * d),
                wk: take(d * d),
                wv: take(d * d),
                wo: take(d * d),
                ln2: take(d),
                w1: take(d * f),
                b1: take(f),
                w2: take(f * d),
                b2: take(d),
            })
            .collect();
        let lnf = take(d);
        let w_out = take(d * v);
        let b_out = take(v);
        Layout {
            tok,
            pos,
            layers,
            lnf,
            w_out,
            b_out,
            total: at,
        }
    }

    /// `(start, len, fan_in, role)` for every tensor in storage order.
    pub fn tensors(&self, dims: &ModelDims) -> Vec<(usize, usize, usize, Role)> {
        let (v, d, f, t) = (dims.vocab, dims.embed, dims.ff, dims.context);
        let mut out = vec![
            (self.tok, v * d, 1, Role::Embedding),
            (self.pos, t * d, 1, Role::Embedding),
        ];
        for l in &self.layers {
            out.extend([
                (l.ln1, d, 1, Role::Gain),
                (l.wq, d * d, d, Role::Weight),
                (l.wk, d * d, d, Role::Weight),
                (l.wv, d * d, d, Role::Weight),
                (l.wo, d * d, d, Role::Weight),
                (l.ln2, d, 1, Role::Gain),
                (l.w1, d * f, d, Role::Weight),
                (l.b1, f, 1, Role::Bias),
                (l.w2, f * d, f, Role::Weight),
                (l.b2, d, 1, Role::Bias),
            ]);
        }
        out.extend([
            (self.lnf, d, 1, Role::Gain),
            (self.w_out, d * v, d, Role::Weight),
            (self.b_out, v, 1, Role::Bias),
        ]);
        out
    }
}
