//! Additive (tanh-scored) attention and multi-head scaled dot-product
//! self-attention, each with a hand-written backward pass.

use rand::Rng;

use super::gemm::gemm;
use super::loss::softmax;
use super::Tensor;
use crate::error::{Error, Result};

/// Intermediates of one additive-attention read.
#[derive(Debug, Clone)]
pub struct AttendCache {
    pub weights: Vec<f64>,
    /// `tanh(kp_j + qp + b)` per position, `n x A`.
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct AttendGrads {
    pub dq_proj: Vec<f64>,
    pub dk_proj: Vec<f64>,
    pub dvalues: Vec<f64>,
    pub db: Vec<f64>,
    pub dv: Vec<f64>,
}

/// Additive attention over already-projected query and keys:
/// `e_j = v · tanh(kp_j + qp + b)`, `α = softmax(e)`, `ctx = Σ α_j values_j`.
///
/// `kp` is `n x A`, `values` is `n x dv`. Returns `(ctx, cache)`.
pub fn attend_projected(
    qp: &[f64],
    kp: &[f64],
    b: &[f64],
    v: &[f64],
    values: &[f64],
    dv: usize,
) -> (Vec<f64>, AttendCache) {
    let a = qp.len();
    let n = kp.len() / a;
    debug_assert_eq!(values.len(), n * dv);
    let mut u = vec![0.0; n * a];
    let mut scores = vec![0.0; n];
    for j in 0..n {
        let row = &mut u[j * a..(j + 1) * a];
        let mut e = 0.0;
        for d in 0..a {
            let t = (kp[j * a + d] + qp[d] + b[d]).tanh();
            row[d] = t;
            e += v[d] * t;
        }
        scores[j] = e;
    }
    let weights = softmax(&scores);
    let mut ctx = vec![0.0; dv];
    for j in 0..n {
        let w = weights[j];
        for (c, x) in ctx.iter_mut().zip(&values[j * dv..(j + 1) * dv]) {
            *c += w * x;
        }
    }
    (ctx, AttendCache { weights, u })
}

/// Backward of [`attend_projected`]. Gradients are accumulated into `g`,
/// which must already be sized (`dq_proj: A`, `dk_proj: n x A`,
/// `dvalues: n x dv`, `db: A`, `dv: A`).
pub fn attend_projected_backward(
    cache: &AttendCache,
    v: &[f64],
    values: &[f64],
    dv: usize,
    dctx: &[f64],
    g: &mut AttendGrads,
) {
    let a = v.len();
    let n = cache.weights.len();
    let mut dalpha = vec![0.0; n];
    for j in 0..n {
        let vals = &values[j * dv..(j + 1) * dv];
        dalpha[j] = vals.iter().zip(dctx).map(|(x, d)| x * d).sum();
        let w = cache.weights[j];
        for (gv, d) in g.dvalues[j * dv..(j + 1) * dv].iter_mut().zip(dctx) {
            *gv += w * d;
        }
    }
    let dot: f64 = cache.weights.iter().zip(&dalpha).map(|(w, d)| w * d).sum();
    for j in 0..n {
        let de = cache.weights[j] * (dalpha[j] - dot);
        let row = &cache.u[j * a..(j + 1) * a];
        for d in 0..a {
            let t = row[d];
            g.dv[d] += de * t;
            let dpre = de * v[d] * (1.0 - t * t);
            g.dk_proj[j * a + d] += dpre;
            g.dq_proj[d] += dpre;
            g.db[d] += dpre;
        }
    }
}

/// Parameters of an additive attention block: `Wq: dq x A`, `Wk: dk x A`,
/// bias `b: A` and score vector `v: A`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveAttention {
    pub wq: Tensor,
    pub wk: Tensor,
    pub b: Tensor,
    pub v: Tensor,
}

impl AdditiveAttention {
    pub fn random(dq: usize, dk: usize, attn: usize, rng: &mut impl Rng) -> Self {
        let mut init = |shape: &[usize], fan: usize| {
            let s = 1.0 / (fan as f64).sqrt();
            let len = shape.iter().product();
            Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-s..s)).collect()).expect("shape")
        };
        AdditiveAttention {
            wq: init(&[dq, attn], dq),
            wk: init(&[dk, attn], dk),
            b: Tensor::zeros(&[attn]),
            v: init(&[attn], attn),
        }
    }

    pub fn attn_dim(&self) -> usize {
        self.v.len()
    }
}

/// `query: [dq]`, `keys: [n, dk]`, `values: [n, dv]` -> `(context [dv], weights [n])`.
pub fn additive_attention(
    query: &Tensor,
    keys: &Tensor,
    values: &Tensor,
    params: &AdditiveAttention,
) -> Result<(Tensor, Tensor)> {
    let a = params.attn_dim();
    let dq = params.wq.shape()[0];
    let dk = params.wk.shape()[0];
    let (n, kd) = match keys.shape() {
        [n, d] => (*n, *d),
        s => return Err(Error::shape("additive_attention", format!("keys shape {s:?}"))),
    };
    let (nv, dv) = match values.shape() {
        [n, d] => (*n, *d),
        s => return Err(Error::shape("additive_attention", format!("values shape {s:?}"))),
    };
    if n == 0 || n != nv || kd != dk || query.len() != dq {
        return Err(Error::shape(
            "additive_attention",
            format!("query {:?}, keys {:?}, values {:?}", query.shape(), keys.shape(), values.shape()),
        ));
    }
    let mut qp = vec![0.0; a];
    gemm(1, dq, a, 1.0, query.data(), false, params.wq.data(), false, 0.0, &mut qp);
    let mut kp = vec![0.0; n * a];
    gemm(n, dk, a, 1.0, keys.data(), false, params.wk.data(), false, 0.0, &mut kp);
    let (ctx, cache) = attend_projected(&qp, &kp, params.b.data(), params.v.data(), values.data(), dv);
    Ok((Tensor::from_vec(&[dv], ctx)?, Tensor::from_vec(&[n], cache.weights)?))
}

/// Multi-head scaled dot-product self-attention with output projection.
/// All four projections are `D x D`, no biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadSelfAttention {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub n_heads: usize,
}

#[derive(Debug, Clone)]
pub struct MhsaCache {
    pub t: usize,
    pub x: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Per head, `T x T` row-stochastic weights.
    pub weights: Vec<Vec<f64>>,
    /// Concatenated head outputs before `Wo`, `T x D`.
    pub heads: Vec<f64>,
}

/// Borrowed projections for [`mhsa_forward`] / [`mhsa_backward`].
#[derive(Debug, Clone, Copy)]
pub struct MhsaView<'a> {
    pub wq: &'a [f64],
    pub wk: &'a [f64],
    pub wv: &'a [f64],
    pub wo: &'a [f64],
    pub dim: usize,
    pub n_heads: usize,
}

pub fn mhsa_forward(w: MhsaView<'_>, x: &[f64], t: usize) -> (Vec<f64>, MhsaCache) {
    let d = w.dim;
    let dh = d / w.n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let proj = |m: &[f64]| {
        let mut out = vec![0.0; t * d];
        gemm(t, d, d, 1.0, x, false, m, false, 0.0, &mut out);
        out
    };
    let (q, k, v) = (proj(w.wq), proj(w.wk), proj(w.wv));
    let mut heads = vec![0.0; t * d];
    let mut weights = Vec::with_capacity(w.n_heads);
    for hh in 0..w.n_heads {
        let off = hh * dh;
        let mut wts = vec![0.0; t * t];
        for i in 0..t {
            let scores: Vec<f64> = (0..t)
                .map(|j| (0..dh).map(|e| q[i * d + off + e] * k[j * d + off + e]).sum::<f64>() * scale)
                .collect();
            let p = softmax(&scores);
            for j in 0..t {
                wts[i * t + j] = p[j];
                for e in 0..dh {
                    heads[i * d + off + e] += p[j] * v[j * d + off + e];
                }
            }
        }
        weights.push(wts);
    }
    let mut out = vec![0.0; t * d];
    gemm(t, d, d, 1.0, &heads, false, w.wo, false, 0.0, &mut out);
    (out, MhsaCache { t, x: x.to_vec(), q, k, v, weights, heads })
}

/// Returns `dx`; accumulates projection gradients into `(gq, gk, gv, go)`.
pub fn mhsa_backward(
    w: MhsaView<'_>,
    cache: &MhsaCache,
    dout: &[f64],
    gq: &mut [f64],
    gk: &mut [f64],
    gv: &mut [f64],
    go: &mut [f64],
) -> Vec<f64> {
    let d = w.dim;
    let t = cache.t;
    let dh = d / w.n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    gemm(d, t, d, 1.0, &cache.heads, true, dout, false, 1.0, go);
    let mut dheads = vec![0.0; t * d];
    gemm(t, d, d, 1.0, dout, false, w.wo, true, 0.0, &mut dheads);

    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    for hh in 0..w.n_heads {
        let off = hh * dh;
        let wts = &cache.weights[hh];
        for i in 0..t {
            let dp: Vec<f64> = (0..t)
                .map(|j| (0..dh).map(|e| dheads[i * d + off + e] * cache.v[j * d + off + e]).sum())
                .collect();
            for j in 0..t {
                for e in 0..dh {
                    dv[j * d + off + e] += wts[i * t + j] * dheads[i * d + off + e];
                }
            }
            let dot: f64 = (0..t).map(|j| wts[i * t + j] * dp[j]).sum();
            for j in 0..t {
                let ds = wts[i * t + j] * (dp[j] - dot) * scale;
                for e in 0..dh {
                    dq[i * d + off + e] += ds * cache.k[j * d + off + e];
                    dk[j * d + off + e] += ds * cache.q[i * d + off + e];
                }
            }
        }
    }
    let mut dx = vec![0.0; t * d];
    for (dm, m, g) in [(&dq, w.wq, &mut *gq), (&dk, w.wk, &mut *gk), (&dv, w.wv, &mut *gv)] {
        gemm(d, t, d, 1.0, &cache.x, true, dm, false, 1.0, g);
        gemm(t, d, d, 1.0, dm, false, m, true, 1.0, &mut dx);
    }
    dx
}

impl MultiHeadSelfAttention {
    pub fn random(dim: usize, n_heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if n_heads == 0 || dim % n_heads != 0 {
            return Err(Error::shape("multihead_self_attention", format!("dim {dim} not divisible by {n_heads} heads")));
        }
        let s = 1.0 / (dim as f64).sqrt();
        let mut init = || {
            Tensor::from_vec(&[dim, dim], (0..dim * dim).map(|_| rng.gen_range(-s..s)).collect()).expect("shape")
        };
        Ok(MultiHeadSelfAttention { wq: init(), wk: init(), wv: init(), wo: init(), n_heads })
    }

    pub fn dim(&self) -> usize {
        self.wq.shape()[0]
    }

    fn view(&self) -> Result<MhsaView<'_>> {
        let d = self.dim();
        if self.n_heads == 0 || d % self.n_heads != 0 {
            return Err(Error::shape("multihead_self_attention", format!("dim {d} not divisible by {} heads", self.n_heads)));
        }
        Ok(MhsaView {
            wq: self.wq.data(),
            wk: self.wk.data(),
            wv: self.wv.data(),
            wo: self.wo.data(),
            dim: d,
            n_heads: self.n_heads,
        })
    }

    /// `inputs: [T, D]` -> outputs `[T, D]`.
    pub fn forward(&self, inputs: &Tensor) -> Result<(Tensor, MhsaCache)> {
        let w = self.view()?;
        let t = match inputs.shape() {
            [t, d] if *d == w.dim && *t > 0 => *t,
            s => return Err(Error::shape("multihead_self_attention", format!("inputs {s:?} vs dim {}", w.dim))),
        };
        let (out, cache) = mhsa_forward(w, inputs.data(), t);
        Ok((Tensor::from_vec(inputs.shape(), out)?, cache))
    }

    /// Returns `(dx, [dWq, dWk, dWv, dWo])`.
    pub fn backward(&self, cache: &MhsaCache, dout: &Tensor) -> Result<(Tensor, [Tensor; 4])> {
        let w = self.view()?;
        let d = w.dim;
        if dout.len() != cache.t * d {
            return Err(Error::shape("multihead_self_attention_backward", "dout does not match cache"));
        }
        let mut g: [Tensor; 4] = std::array::from_fn(|_| Tensor::zeros(&[d, d]));
        let [g0, g1, g2, g3] = &mut g;
        let dx = mhsa_backward(w, cache, dout.data(), g0.data_mut(), g1.data_mut(), g2.data_mut(), g3.data_mut());
        Ok((Tensor::from_vec(&[cache.t, d], dx)?, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{finite_diff_check, ParamStore};
    use crate::par::Exec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_key_gets_all_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = AdditiveAttention::random(3, 3, 5, &mut rng);
        let q = rand_t(&[3], &mut rng);
        let k = rand_t(&[1, 3], &mut rng);
        let v = rand_t(&[1, 4], &mut rng);
        let (ctx, w) = additive_attention(&q, &k, &v, &p).unwrap();
        assert_eq!(w.data(), &[1.0]);
        assert_eq!(ctx.data(), v.data());
    }

    #[test]
    fn identical_keys_split_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = AdditiveAttention::random(3, 2, 4, &mut rng);
        let q = rand_t(&[3], &mut rng);
        let k = Tensor::from_vec(&[2, 2], vec![0.4, -0.9, 0.4, -0.9]).unwrap();
        let v = rand_t(&[2, 3], &mut rng);
        let (_, w) = additive_attention(&q, &k, &v, &p).unwrap();
        assert_eq!(w.data(), &[0.5, 0.5]);
    }

    #[test]
    fn mismatched_counts_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = AdditiveAttention::random(2, 2, 2, &mut rng);
        let q = rand_t(&[2], &mut rng);
        assert!(additive_attention(&q, &rand_t(&[3, 2], &mut rng), &rand_t(&[2, 2], &mut rng), &p).is_err());
        assert!(MultiHeadSelfAttention::random(6, 4, &mut rng).is_err());
    }

    #[test]
    fn additive_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, n, dv) = (4, 5, 3);
        let mut store = ParamStore::new();
        let iq = store.insert("qp", rand_t(&[a], &mut rng)).unwrap();
        let ik = store.insert("kp", rand_t(&[n, a], &mut rng)).unwrap();
        let ib = store.insert("b", rand_t(&[a], &mut rng)).unwrap();
        let iv = store.insert("v", rand_t(&[a], &mut rng)).unwrap();
        let ivals = store.insert("values", rand_t(&[n, dv], &mut rng)).unwrap();
        let wout = rand_t(&[dv], &mut rng);
        let loss = |p: &ParamStore| {
            let (ctx, _) = attend_projected(
                p.value(iq).data(),
                p.value(ik).data(),
                p.value(ib).data(),
                p.value(iv).data(),
                p.value(ivals).data(),
                dv,
            );
            ctx.iter().zip(wout.data()).map(|(c, w)| c * w).sum::<f64>()
        };
        let (_, cache) = attend_projected(
            store.value(iq).data(),
            store.value(ik).data(),
            store.value(ib).data(),
            store.value(iv).data(),
            store.value(ivals).data(),
            dv,
        );
        let mut g = AttendGrads {
            dq_proj: vec![0.0; a],
            dk_proj: vec![0.0; n * a],
            dvalues: vec![0.0; n * dv],
            db: vec![0.0; a],
            dv: vec![0.0; a],
        };
        attend_projected_backward(&cache, store.value(iv).data(), store.value(ivals).data(), dv, wout.data(), &mut g);
        for (id, src) in [(iq, &g.dq_proj), (ik, &g.dk_proj), (ib, &g.db), (iv, &g.dv), (ivals, &g.dvalues)] {
            store.grad_mut(id).data_mut().copy_from_slice(src);
        }
        let r = finite_diff_check(&store, loss, 10_000, 5, Exec::Sequential).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn mhsa_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (t, d, heads) = (3, 4, 2);
        let m = MultiHeadSelfAttention::random(d, heads, &mut rng).unwrap();
        let mut store = ParamStore::new();
        let ix = store.insert("x", rand_t(&[t, d], &mut rng)).unwrap();
        let iq = store.insert("wq", m.wq.clone()).unwrap();
        let ik = store.insert("wk", m.wk.clone()).unwrap();
        let iv = store.insert("wv", m.wv.clone()).unwrap();
        let io = store.insert("wo", m.wo.clone()).unwrap();
        let wout = rand_t(&[t, d], &mut rng);
        let build = |p: &ParamStore| MultiHeadSelfAttention {
            wq: p.value(iq).clone(),
            wk: p.value(ik).clone(),
            wv: p.value(iv).clone(),
            wo: p.value(io).clone(),
            n_heads: heads,
        };
        let loss = |p: &ParamStore| {
            let (out, _) = build(p).forward(p.value(ix)).unwrap();
            out.mul(&wout).unwrap().data().iter().sum::<f64>()
        };
        let (out, cache) = m.forward(store.value(ix)).unwrap();
        assert_eq!(out.shape(), &[t, d]);
        for w in &cache.weights {
            for i in 0..t {
                let s: f64 = w[i * t..(i + 1) * t].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        let (dx, gs) = m.backward(&cache, &wout).unwrap();
        store.grad_mut(ix).data_mut().copy_from_slice(dx.data());
        for (id, g) in [iq, ik, iv, io].into_iter().zip(gs.iter()) {
            store.grad_mut(id).data_mut().copy_from_slice(g.data());
        }
        let r = finite_diff_check(&store, loss, 10_000, 6, Exec::Sequential).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
