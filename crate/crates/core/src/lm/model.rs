//! Pre-norm decoder-only transformer with hand-written backward pass.
//!
//! Each block is `x + attn(ln1(x))` followed by `x + mlp(ln2(x))` with a
//! tanh-GELU MLP of width `4d`. Logits are only produced at positions that
//! predict output tokens; the prompt is context, never a target.

use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use super::params::{Arch, Layout, ModelParams, Scalar};
use super::tokenize::Tokenization;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

fn view<'a, F: Scalar>(
    data: &'a [F],
    r: &Range<usize>,
    rows: usize,
    cols: usize,
) -> ArrayView2<'a, F> {
    ArrayView2::from_shape((rows, cols), &data[r.clone()]).expect("layout matches arch")
}

fn view_mut<'a, F: Scalar>(
    data: &'a mut [F],
    r: &Range<usize>,
    rows: usize,
    cols: usize,
) -> ArrayViewMut2<'a, F> {
    ArrayViewMut2::from_shape((rows, cols), &mut data[r.clone()]).expect("layout matches arch")
}

fn vec1<'a, F: Scalar>(data: &'a [F], r: &Range<usize>) -> ArrayView1<'a, F> {
    ArrayView1::from(&data[r.clone()])
}

fn vec1_mut<'a, F: Scalar>(data: &'a mut [F], r: &Range<usize>) -> ArrayViewMut1<'a, F> {
    ArrayViewMut1::from(&mut data[r.clone()])
}

/// `x · W + b` for a row-major batch `x`.
fn linear<F: Scalar>(x: &ArrayView2<F>, w: ArrayView2<F>, b: ArrayView1<F>) -> Array2<F> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

/// Accumulates weight and bias gradients of `x · W + b` and returns `dx`.
fn linear_backward<F: Scalar>(
    x: &ArrayView2<F>,
    dy: &ArrayView2<F>,
    w: ArrayView2<F>,
    dw: &mut ArrayViewMut2<F>,
    db: &mut ArrayViewMut1<F>,
) -> Array2<F> {
    general_mat_mul(F::one(), &x.t(), dy, F::one(), dw);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

struct LnCache<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

fn layernorm<F: Scalar>(
    x: &ArrayView2<F>,
    g: ArrayView1<F>,
    b: ArrayView1<F>,
) -> (Array2<F>, LnCache<F>) {
    let (rows, d) = x.dim();
    let inv_d = F::from_f64(1.0 / d as f64);
    let eps = F::from_f64(LN_EPS);
    let mut xhat = Array2::zeros((rows, d));
    let mut rstd = Array1::zeros(rows);
    for i in 0..rows {
        let row = x.row(i);
        let mean = row.sum() * inv_d;
        let var = row.fold(F::zero(), |acc, &v| acc + (v - mean) * (v - mean)) * inv_d;
        let r = (var + eps).sqrt().recip();
        rstd[i] = r;
        for (o, &v) in xhat.row_mut(i).iter_mut().zip(row.iter()) {
            *o = (v - mean) * r;
        }
    }
    let out = &xhat * &g + b;
    (out, LnCache { xhat, rstd })
}

fn layernorm_backward<F: Scalar>(
    dout: &ArrayView2<F>,
    cache: &LnCache<F>,
    g: ArrayView1<F>,
    dg: &mut ArrayViewMut1<F>,
    db: &mut ArrayViewMut1<F>,
) -> Array2<F> {
    let (rows, d) = dout.dim();
    *dg += &(dout * &cache.xhat).sum_axis(Axis(0));
    *db += &dout.sum_axis(Axis(0));
    let inv_d = F::from_f64(1.0 / d as f64);
    let mut dx = Array2::zeros((rows, d));
    for i in 0..rows {
        let xh = cache.xhat.row(i);
        let dxhat = &dout.row(i) * &g;
        let mean_dxhat = dxhat.sum() * inv_d;
        let mean_dxhat_xhat = dxhat
            .iter()
            .zip(xh.iter())
            .fold(F::zero(), |a, (&p, &q)| a + p * q)
            * inv_d;
        let r = cache.rstd[i];
        for ((o, &dh), &h) in dx.row_mut(i).iter_mut().zip(dxhat.iter()).zip(xh.iter()) {
            *o = r * (dh - mean_dxhat - h * mean_dxhat_xhat);
        }
    }
    dx
}

fn gelu<F: Scalar>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let k = F::from_f64(GELU_K);
    let half = F::from_f64(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * x * (F::one() + t)
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let k = F::from_f64(GELU_K);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + three * k * x * x)
}

struct LayerCache<F> {
    ln1_out: Array2<F>,
    ln1: LnCache<F>,
    qkv: Array2<F>,
    att: Vec<Array2<F>>,
    y: Array2<F>,
    ln2_out: Array2<F>,
    ln2: LnCache<F>,
    h_pre: Array2<F>,
    h_act: Array2<F>,
}

/// Activations of one forward pass, kept for the backward pass.
pub struct Forward<F: Scalar> {
    ids: Vec<u32>,
    first_pred: usize,
    targets: Vec<u32>,
    layers: Vec<LayerCache<F>>,
    lnf: LnCache<F>,
    lnf_out: Array2<F>,
    probs: Array2<F>,
    /// `-log P(y_k | x, y_<k)` per output token, accumulated in f64.
    pub losses: Vec<f64>,
}

impl<F: Scalar> Forward<F> {
    /// Predicted distribution (over the vocabulary) for output token `k`.
    pub fn distribution(&self, k: usize) -> Vec<f64> {
        self.probs.row(k).iter().map(|p| p.as_f64()).collect()
    }

    pub fn n_predictions(&self) -> usize {
        self.targets.len()
    }
}

/// Negative log-likelihood of `target` under softmax(`row`), accurate for
/// both confident hits (via `ln_1p`) and confident misses.
pub(crate) fn nll_from_logits<F: Scalar>(row: ArrayView1<F>, target: usize) -> f64 {
    let zy = row[target].as_f64();
    let max = row.fold(f64::NEG_INFINITY, |m, &z| m.max(z.as_f64()));
    if zy >= max {
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != target)
            .map(|(_, &z)| (z.as_f64() - zy).exp())
            .sum();
        rest.ln_1p()
    } else {
        let sum: f64 = row.iter().map(|&z| (z.as_f64() - max).exp()).sum();
        (max - zy) + sum.ln()
    }
}

fn attention<F: Scalar>(qkv: &Array2<F>, arch: &Arch) -> (Vec<Array2<F>>, Array2<F>) {
    let t = qkv.nrows();
    let d = arch.d_model;
    let hd = arch.head_dim();
    let scale = F::from_f64(1.0 / (hd as f64).sqrt());
    let mut y = Array2::zeros((t, d));
    let mut atts = Vec::with_capacity(arch.n_heads);
    for h in 0..arch.n_heads {
        let q = qkv.slice(s![.., h * hd..(h + 1) * hd]);
        let k = qkv.slice(s![.., d + h * hd..d + (h + 1) * hd]);
        let v = qkv.slice(s![.., 2 * d + h * hd..2 * d + (h + 1) * hd]);
        let mut att = q.dot(&k.t());
        for i in 0..t {
            let mut row = att.row_mut(i);
            let mut max = F::neg_infinity();
            for j in 0..=i {
                row[j] *= scale;
                max = max.max(row[j]);
            }
            let mut sum = F::zero();
            for j in 0..=i {
                let e = (row[j] - max).exp();
                row[j] = e;
                sum += e;
            }
            let inv = sum.recip();
            for j in 0..t {
                row[j] = if j <= i { row[j] * inv } else { F::zero() };
            }
        }
        y.slice_mut(s![.., h * hd..(h + 1) * hd])
            .assign(&att.dot(&v));
        atts.push(att);
    }
    (atts, y)
}

fn attention_backward<F: Scalar>(cache: &LayerCache<F>, dy: &Array2<F>, arch: &Arch) -> Array2<F> {
    let t = dy.nrows();
    let d = arch.d_model;
    let hd = arch.head_dim();
    let scale = F::from_f64(1.0 / (hd as f64).sqrt());
    let mut dqkv = Array2::zeros((t, 3 * d));
    for h in 0..arch.n_heads {
        let att = &cache.att[h];
        let q = cache.qkv.slice(s![.., h * hd..(h + 1) * hd]);
        let k = cache.qkv.slice(s![.., d + h * hd..d + (h + 1) * hd]);
        let v = cache
            .qkv
            .slice(s![.., 2 * d + h * hd..2 * d + (h + 1) * hd]);
        let dy_h = dy.slice(s![.., h * hd..(h + 1) * hd]);

        let datt = dy_h.dot(&v.t());
        general_mat_mul(
            F::one(),
            &att.t(),
            &dy_h,
            F::zero(),
            &mut dqkv.slice_mut(s![.., 2 * d + h * hd..2 * d + (h + 1) * hd]),
        );
        let mut dscore = Array2::zeros((t, t));
        for i in 0..t {
            let a = att.row(i);
            let da = datt.row(i);
            let dot = (0..=i).fold(F::zero(), |acc, j| acc + a[j] * da[j]);
            let mut out = dscore.row_mut(i);
            for j in 0..=i {
                out[j] = a[j] * (da[j] - dot) * scale;
            }
        }
        general_mat_mul(
            F::one(),
            &dscore,
            &k,
            F::zero(),
            &mut dqkv.slice_mut(s![.., h * hd..(h + 1) * hd]),
        );
        general_mat_mul(
            F::one(),
            &dscore.t(),
            &q,
            F::zero(),
            &mut dqkv.slice_mut(s![.., d + h * hd..d + (h + 1) * hd]),
        );
    }
    dqkv
}

/// Runs the model over `input SEP output` and scores every output token.
///
/// Panics if the sequence exceeds the context or has no separator slot;
/// callers tokenize with `max_len <= context` first.
pub fn forward<F: Scalar>(params: &ModelParams<F>, tok: &Tokenization) -> Forward<F> {
    let arch = params.arch;
    let layout: Layout = params.layout();
    let data = &params.data;
    let t = tok.ids.len();
    let d = arch.d_model;
    assert!(
        t <= arch.context,
        "sequence of {t} tokens exceeds context {}",
        arch.context
    );
    assert!(tok.boundary >= 1, "tokenization lacks a separator");

    let wte = view(data, &layout.wte, arch.vocab_size, d);
    let wpe = view(data, &layout.wpe, arch.context, d);
    let mut x = Array2::zeros((t, d));
    for (i, &id) in tok.ids.iter().enumerate() {
        let mut row = x.row_mut(i);
        row.assign(&wte.row(id as usize));
        row += &wpe.row(i);
    }

    let mut layers = Vec::with_capacity(arch.n_layers);
    for l in &layout.layers {
        let (ln1_out, ln1) = layernorm(&x.view(), vec1(data, &l.ln1_g), vec1(data, &l.ln1_b));
        let qkv = linear(
            &ln1_out.view(),
            view(data, &l.w_qkv, d, 3 * d),
            vec1(data, &l.b_qkv),
        );
        let (att, y) = attention(&qkv, &arch);
        x += &linear(&y.view(), view(data, &l.w_o, d, d), vec1(data, &l.b_o));
        let (ln2_out, ln2) = layernorm(&x.view(), vec1(data, &l.ln2_g), vec1(data, &l.ln2_b));
        let h_pre = linear(
            &ln2_out.view(),
            view(data, &l.w_fc, d, 4 * d),
            vec1(data, &l.b_fc),
        );
        let h_act = h_pre.mapv(gelu);
        x += &linear(
            &h_act.view(),
            view(data, &l.w_proj, 4 * d, d),
            vec1(data, &l.b_proj),
        );
        layers.push(LayerCache {
            ln1_out,
            ln1,
            qkv,
            att,
            y,
            ln2_out,
            ln2,
            h_pre,
            h_act,
        });
    }

    let first_pred = tok.boundary - 1;
    let targets: Vec<u32> = tok.ids[tok.boundary..].to_vec();
    let n_pred = targets.len();
    let x_pred = x.slice(s![first_pred..first_pred + n_pred, ..]);
    let (lnf_out, lnf) = layernorm(
        &x_pred,
        vec1(data, &layout.lnf_g),
        vec1(data, &layout.lnf_b),
    );
    let mut probs = linear(
        &lnf_out.view(),
        view(data, &layout.head_w, d, arch.vocab_size),
        vec1(data, &layout.head_b),
    );
    let mut losses = Vec::with_capacity(n_pred);
    for (k, mut row) in probs.rows_mut().into_iter().enumerate() {
        losses.push(nll_from_logits(row.view(), targets[k] as usize));
        let max = row.fold(F::neg_infinity(), |m, &z| m.max(z));
        row.mapv_inplace(|z| (z - max).exp());
        let inv = row.sum().recip();
        row.mapv_inplace(|p| p * inv);
    }

    Forward {
        ids: tok.ids.clone(),
        first_pred,
        targets,
        layers,
        lnf,
        lnf_out,
        probs,
        losses,
    }
}

/// Accumulates into `grads` the gradient of `sum_k coeffs[k] * loss_k`.
pub fn backward<F: Scalar>(
    params: &ModelParams<F>,
    fwd: &Forward<F>,
    coeffs: &[F],
    grads: &mut [F],
) {
    let arch = params.arch;
    let layout = params.layout();
    let data = &params.data;
    let d = arch.d_model;
    let v = arch.vocab_size;
    let t = fwd.ids.len();
    let n_pred = fwd.targets.len();
    assert_eq!(coeffs.len(), n_pred, "one coefficient per output token");
    assert_eq!(grads.len(), data.len());

    // d loss / d logits = c_k (p - onehot)
    let mut dlogits = fwd.probs.clone();
    for (k, mut row) in dlogits.rows_mut().into_iter().enumerate() {
        row[fwd.targets[k] as usize] -= F::one();
        row *= coeffs[k];
    }

    let dlnf_out = {
        let (gw, rest) = grads.split_at_mut(layout.head_b.start);
        let mut dw = view_mut(gw, &layout.head_w, d, v);
        let mut db = ArrayViewMut1::from(&mut rest[..v]);
        linear_backward(
            &fwd.lnf_out.view(),
            &dlogits.view(),
            view(data, &layout.head_w, d, v),
            &mut dw,
            &mut db,
        )
    };
    let mut dx = Array2::zeros((t, d));
    {
        let (gg, gb) = grads.split_at_mut(layout.lnf_b.start);
        let dx_pred = layernorm_backward(
            &dlnf_out.view(),
            &fwd.lnf,
            vec1(data, &layout.lnf_g),
            &mut vec1_mut(gg, &layout.lnf_g),
            &mut ArrayViewMut1::from(&mut gb[..d]),
        );
        dx.slice_mut(s![fwd.first_pred..fwd.first_pred + n_pred, ..])
            .assign(&dx_pred);
    }

    for (l, cache) in layout.layers.iter().zip(&fwd.layers).rev() {
        // MLP branch
        let mut dh = {
            let (lo, hi) = grads.split_at_mut(l.b_proj.start);
            linear_backward(
                &cache.h_act.view(),
                &dx.view(),
                view(data, &l.w_proj, 4 * d, d),
                &mut view_mut(lo, &l.w_proj, 4 * d, d),
                &mut ArrayViewMut1::from(&mut hi[..d]),
            )
        };
        dh.zip_mut_with(&cache.h_pre, |g, &x| *g *= gelu_grad(x));
        let dln2 = {
            let (lo, hi) = grads.split_at_mut(l.b_fc.start);
            linear_backward(
                &cache.ln2_out.view(),
                &dh.view(),
                view(data, &l.w_fc, d, 4 * d),
                &mut view_mut(lo, &l.w_fc, d, 4 * d),
                &mut ArrayViewMut1::from(&mut hi[..4 * d]),
            )
        };
        {
            let (lo, hi) = grads.split_at_mut(l.ln2_b.start);
            dx += &layernorm_backward(
                &dln2.view(),
                &cache.ln2,
                vec1(data, &l.ln2_g),
                &mut vec1_mut(lo, &l.ln2_g),
                &mut ArrayViewMut1::from(&mut hi[..d]),
            );
        }

        // attention branch
        let dy = {
            let (lo, hi) = grads.split_at_mut(l.b_o.start);
            linear_backward(
                &cache.y.view(),
                &dx.view(),
                view(data, &l.w_o, d, d),
                &mut view_mut(lo, &l.w_o, d, d),
                &mut ArrayViewMut1::from(&mut hi[..d]),
            )
        };
        let dqkv = attention_backward(cache, &dy, &arch);
        let dln1 = {
            let (lo, hi) = grads.split_at_mut(l.b_qkv.start);
            linear_backward(
                &cache.ln1_out.view(),
                &dqkv.view(),
                view(data, &l.w_qkv, d, 3 * d),
                &mut view_mut(lo, &l.w_qkv, d, 3 * d),
                &mut ArrayViewMut1::from(&mut hi[..3 * d]),
            )
        };
        {
            let (lo, hi) = grads.split_at_mut(l.ln1_b.start);
            dx += &layernorm_backward(
                &dln1.view(),
                &cache.ln1,
                vec1(data, &l.ln1_g),
                &mut vec1_mut(lo, &l.ln1_g),
                &mut ArrayViewMut1::from(&mut hi[..d]),
            );
        }
    }

    let (gte, gpe) = grads.split_at_mut(layout.wpe.start);
    for (i, &id) in fwd.ids.iter().enumerate() {
        let row = dx.row(i);
        let te = id as usize * d;
        for (g, &x) in gte[te..te + d].iter_mut().zip(row.iter()) {
            *g += x;
        }
        let pe = i * d;
        for (g, &x) in gpe[pe..pe + d].iter_mut().zip(row.iter()) {
            *g += x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn nll_matches_direct_formula() {
        let row = array![1.0f64, 2.0, 0.5];
        let lse = (1.0f64.exp() + 2.0f64.exp() + 0.5f64.exp()).ln();
        for y in 0..3 {
            assert!((nll_from_logits(row.view(), y) - (lse - row[y])).abs() < 1e-14);
        }
    }

    #[test]
    fn nll_keeps_precision_for_confident_hits() {
        let row = array![40.0f32, 0.0, 0.0];
        let loss = nll_from_logits(row.view(), 0);
        let expected = (2.0 * (-40.0f64).exp()).ln_1p();
        assert!(loss > 0.0);
        assert!((loss - expected).abs() / expected < 1e-6);
    }

    #[test]
    fn gelu_derivative_matches_difference_quotient() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }
}
