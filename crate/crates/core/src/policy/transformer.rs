//! Forward and backward passes of the decoder-only transformer.
//!
//! Pre-norm blocks: `h = x + Attn(RMSNorm(x))`, `x' = h + MLP(RMSNorm(h))`,
//! followed by a final RMSNorm and a biased output projection. The MLP uses
//! the tanh GELU so every path is smooth for finite-difference checks.

use super::layout::Layout;
use super::ModelDims;

const RMS_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// `out (n x m) += a (n x k) * b (k x m)`
fn matmul_acc(out: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += aip * bv;
            }
        }
    }
}

/// `out (n x k) += a (n x m) * b^T` where `b` is `k x m`.
fn matmul_bt_acc(out: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for j in 0..k {
            let brow = &b[j * m..(j + 1) * m];
            out[i * k + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out (k x m) += a^T * b` where `a` is `n x k` and `b` is `n x m`.
fn matmul_at_acc(out: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in out[p * m..(p + 1) * m].iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// Row-wise RMSNorm of `x (n x d)`; returns the normalized output and each row's rms.
fn rms_forward(x: &[f64], gain: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; n * d];
    let mut rms = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let r = (row.iter().map(|v| v * v).sum::<f64>() / d as f64 + RMS_EPS).sqrt();
        rms[i] = r;
        for j in 0..d {
            y[i * d + j] = gain[j] * row[j] / r;
        }
    }
    (y, rms)
}

/// Accumulates `dgain` and `dx` for `y = gain * x / rms(x)`.
#[allow(clippy::too_many_arguments)]
fn rms_backward(
    dy: &[f64],
    x: &[f64],
    rms: &[f64],
    gain: &[f64],
    dgain: &mut [f64],
    dx: &mut [f64],
    rows: std::ops::Range<usize>,
    d: usize,
) {
    let mut dxhat = vec![0.0; d];
    for i in rows {
        let r = rms[i];
        let mut dot = 0.0;
        for j in 0..d {
            let xhat = x[i * d + j] / r;
            let g = dy[i * d + j];
            dgain[j] += g * xhat;
            dxhat[j] = g * gain[j];
            dot += dxhat[j] * xhat;
        }
        let mean = dot / d as f64;
        for j in 0..d {
            let xhat = x[i * d + j] / r;
            dx[i * d + j] += (dxhat[j] - xhat * mean) / r;
        }
    }
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

struct LayerCache {
    x: Vec<f64>,
    rms1: Vec<f64>,
    n1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Per head, row-major `n x n`; only the lower triangle is populated.
    att: Vec<Vec<f64>>,
    o: Vec<f64>,
    h: Vec<f64>,
    rms2: Vec<f64>,
    n2: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

/// Activations kept from a forward pass over `n` positions.
pub(crate) struct Forward {
    n: usize,
    /// First position whose logits were computed.
    first_out: usize,
    layers: Vec<LayerCache>,
    x_final: Vec<f64>,
    rms_f: Vec<f64>,
    nf: Vec<f64>,
    /// `(n - first_out) x vocab` logits.
    pub logits: Vec<f64>,
}

pub(crate) fn forward(dims: &ModelDims, layout: &Layout, params: &[f64], tokens: &[u32], first_out: usize) -> Forward {
    let (d, f, nh) = (dims.embed, dims.ff, dims.heads);
    let dh = d / nh;
    let scale = 1.0 / (dh as f64).sqrt();
    let n = tokens.len();

    let mut x = vec![0.0; n * d];
    for (t, &tok) in tokens.iter().enumerate() {
        let te = &params[layout.tok + tok as usize * d..][..d];
        let pe = &params[layout.pos + t * d..][..d];
        for j in 0..d {
            x[t * d + j] = te[j] + pe[j];
        }
    }

    let mut layers = Vec::with_capacity(layout.layers.len());
    for lo in &layout.layers {
        let (n1, rms1) = rms_forward(&x, &params[lo.ln1..][..d], n, d);
        let mut q = vec![0.0; n * d];
        let mut k = vec![0.0; n * d];
        let mut v = vec![0.0; n * d];
        matmul_acc(&mut q, &n1, &params[lo.wq..][..d * d], n, d, d);
        matmul_acc(&mut k, &n1, &params[lo.wk..][..d * d], n, d, d);
        matmul_acc(&mut v, &n1, &params[lo.wv..][..d * d], n, d, d);

        let mut o = vec![0.0; n * d];
        let mut att = Vec::with_capacity(nh);
        for head in 0..nh {
            let off = head * dh;
            let mut a = vec![0.0; n * n];
            for t in 0..n {
                let qt = &q[t * d + off..][..dh];
                let row = &mut a[t * n..t * n + t + 1];
                let mut max = f64::NEG_INFINITY;
                for (s, slot) in row.iter_mut().enumerate() {
                    let ks = &k[s * d + off..][..dh];
                    *slot = qt.iter().zip(ks).map(|(x, y)| x * y).sum::<f64>() * scale;
                    max = max.max(*slot);
                }
                let mut z = 0.0;
                for slot in row.iter_mut() {
                    *slot = (*slot - max).exp();
                    z += *slot;
                }
                for (s, slot) in row.iter_mut().enumerate() {
                    *slot /= z;
                    let vs = &v[s * d + off..][..dh];
                    for (oj, vj) in o[t * d + off..][..dh].iter_mut().zip(vs) {
                        *oj += *slot * vj;
                    }
                }
            }
            att.push(a);
        }

        let mut h = x.clone();
        matmul_acc(&mut h, &o, &params[lo.wo..][..d * d], n, d, d);

        let (n2, rms2) = rms_forward(&h, &params[lo.ln2..][..d], n, d);
        let mut u = vec![0.0; n * f];
        for t in 0..n {
            u[t * f..(t + 1) * f].copy_from_slice(&params[lo.b1..][..f]);
        }
        matmul_acc(&mut u, &n2, &params[lo.w1..][..d * f], n, d, f);
        let g: Vec<f64> = u.iter().map(|&z| gelu(z)).collect();
        let mut out = h.clone();
        for t in 0..n {
            for (oj, bj) in out[t * d..(t + 1) * d].iter_mut().zip(&params[lo.b2..][..d]) {
                *oj += bj;
            }
        }
        matmul_acc(&mut out, &g, &params[lo.w2..][..f * d], n, f, d);

        layers.push(LayerCache {
            x: std::mem::replace(&mut x, out),
            rms1,
            n1,
            q,
            k,
            v,
            att,
            o,
            h,
            rms2,
            n2,
            u,
            g,
        });
    }

    let rows = n - first_out;
    let (nf, rms_f) = rms_forward(&x[first_out * d..], &params[layout.lnf..][..d], rows, d);
    let vocab = dims.vocab;
    let mut logits = vec![0.0; rows * vocab];
    for r in 0..rows {
        logits[r * vocab..(r + 1) * vocab].copy_from_slice(&params[layout.b_out..][..vocab]);
    }
    matmul_acc(&mut logits, &nf, &params[layout.w_out..][..d * vocab], rows, d, vocab);

    Forward {
        n,
        first_out,
        layers,
        x_final: x,
        rms_f,
        nf,
        logits,
    }
}

/// In-place log-softmax of each `width`-sized row.
pub(crate) fn log_softmax_rows(values: &mut [f64], width: usize) {
    for row in values.chunks_mut(width) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
}

/// Backpropagates `dlogits` (gradient of the objective with respect to the
/// computed logits) and accumulates parameter gradients into `grad`.
pub(crate) fn backward(
    dims: &ModelDims,
    layout: &Layout,
    params: &[f64],
    tokens: &[u32],
    fwd: &Forward,
    dlogits: &[f64],
    grad: &mut [f64],
) {
    let (d, f, nh, vocab) = (dims.embed, dims.ff, dims.heads, dims.vocab);
    let dh = d / nh;
    let scale = 1.0 / (dh as f64).sqrt();
    let n = fwd.n;
    let rows = n - fwd.first_out;

    // Output projection.
    matmul_at_acc(&mut grad[layout.w_out..][..d * vocab], &fwd.nf, dlogits, rows, d, vocab);
    for r in 0..rows {
        for (g, dl) in grad[layout.b_out..][..vocab]
            .iter_mut()
            .zip(&dlogits[r * vocab..(r + 1) * vocab])
        {
            *g += dl;
        }
    }
    let mut dnf = vec![0.0; rows * d];
    matmul_bt_acc(&mut dnf, dlogits, &params[layout.w_out..][..d * vocab], rows, d, vocab);

    let mut dx = vec![0.0; n * d];
    {
        let (gain, dgain) = (&params[layout.lnf..][..d], layout.lnf);
        let mut dg = vec![0.0; d];
        rms_backward(
            &dnf,
            &fwd.x_final[fwd.first_out * d..],
            &fwd.rms_f,
            gain,
            &mut dg,
            &mut dx[fwd.first_out * d..],
            0..rows,
            d,
        );
        for (a, b) in grad[dgain..][..d].iter_mut().zip(dg) {
            *a += b;
        }
    }

    for (lo, c) in layout.layers.iter().zip(&fwd.layers).rev() {
        // MLP branch: out = h + gelu(n2 W1 + b1) W2 + b2.
        let dm = &dx;
        for t in 0..n {
            for (g, v) in grad[lo.b2..][..d].iter_mut().zip(&dm[t * d..(t + 1) * d]) {
                *g += v;
            }
        }
        matmul_at_acc(&mut grad[lo.w2..][..f * d], &c.g, dm, n, f, d);
        let mut du = vec![0.0; n * f];
        matmul_bt_acc(&mut du, dm, &params[lo.w2..][..f * d], n, f, d);
        for (dv, &uv) in du.iter_mut().zip(&c.u) {
            *dv *= gelu_grad(uv);
        }
        for t in 0..n {
            for (g, v) in grad[lo.b1..][..f].iter_mut().zip(&du[t * f..(t + 1) * f]) {
                *g += v;
            }
        }
        matmul_at_acc(&mut grad[lo.w1..][..d * f], &c.n2, &du, n, d, f);
        let mut dn2 = vec![0.0; n * d];
        matmul_bt_acc(&mut dn2, &du, &params[lo.w1..][..d * f], n, d, f);
        let mut dh_ = dx.clone();
        {
            let mut dg = vec![0.0; d];
            rms_backward(&dn2, &c.h, &c.rms2, &params[lo.ln2..][..d], &mut dg, &mut dh_, 0..n, d);
            for (a, b) in grad[lo.ln2..][..d].iter_mut().zip(dg) {
                *a += b;
            }
        }

        // Attention branch: h = x + o Wo.
        matmul_at_acc(&mut grad[lo.wo..][..d * d], &c.o, &dh_, n, d, d);
        let mut d_o = vec![0.0; n * d];
        matmul_bt_acc(&mut d_o, &dh_, &params[lo.wo..][..d * d], n, d, d);

        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut da = vec![0.0; n];
        for (head, a) in c.att.iter().enumerate() {
            let off = head * dh;
            for t in 0..n {
                let dot_row = &d_o[t * d + off..][..dh];
                let arow = &a[t * n..t * n + t + 1];
                let mut weighted = 0.0;
                for s in 0..=t {
                    let vs = &c.v[s * d + off..][..dh];
                    da[s] = dot_row.iter().zip(vs).map(|(x, y)| x * y).sum();
                    weighted += arow[s] * da[s];
                    for (dvj, doj) in dv[s * d + off..][..dh].iter_mut().zip(dot_row) {
                        *dvj += arow[s] * doj;
                    }
                }
                for s in 0..=t {
                    let ds = arow[s] * (da[s] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for j in 0..dh {
                        dq[t * d + off + j] += ds * c.k[s * d + off + j];
                        dk[s * d + off + j] += ds * c.q[t * d + off + j];
                    }
                }
            }
        }
        matmul_at_acc(&mut grad[lo.wq..][..d * d], &c.n1, &dq, n, d, d);
        matmul_at_acc(&mut grad[lo.wk..][..d * d], &c.n1, &dk, n, d, d);
        matmul_at_acc(&mut grad[lo.wv..][..d * d], &c.n1, &dv, n, d, d);
        let mut dn1 = vec![0.0; n * d];
        matmul_bt_acc(&mut dn1, &dq, &params[lo.wq..][..d * d], n, d, d);
        matmul_bt_acc(&mut dn1, &dk, &params[lo.wk..][..d * d], n, d, d);
        matmul_bt_acc(&mut dn1, &dv, &params[lo.wv..][..d * d], n, d, d);
        let mut dx_in = dh_;
        {
            let mut dg = vec![0.0; d];
            rms_backward(
                &dn1,
                &c.x,
                &c.rms1,
                &params[lo.ln1..][..d],
                &mut dg,
                &mut dx_in,
                0..n,
                d,
            );
            for (a, b) in grad[lo.ln1..][..d].iter_mut().zip(dg) {
                *a += b;
            }
        }
        dx = dx_in;
    }

    for (t, &tok) in tokens.iter().enumerate() {
        let row = &dx[t * d..(t + 1) * d];
        for (g, v) in grad[layout.tok + tok as usize * d..][..d].iter_mut().zip(row) {
            *g += v;
        }
        for (g, v) in grad[layout.pos + t * d..][..d].iter_mut().zip(row) {
            *g += v;
        }
    }
}
