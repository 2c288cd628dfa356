//! Double-double re-evaluation of the training loss.
//!
//! Written sample by sample with no shared code from the batched path, so it
//! doubles as an independent oracle for the forward pass. Finite differences
//! of this loss are free of `f64` rounding noise.

use super::model::{positional_encoding, Layout};
use super::Sample;
use crate::domain::ENV_FEATURES;
use crate::numkit::dd::{dd, exp, ln, sigmoid, tanh, Dd};
use crate::numkit::ParamStore;

struct Lstm {
    wx: Vec<Dd>,
    wh: Vec<Dd>,
    b: Vec<Dd>,
}

struct Weights {
    enc: Vec<Lstm>,
    dec: Vec<Lstm>,
    day: [Vec<Dd>; 4],
    start: Vec<Dd>,
    wq: Vec<Dd>,
    wk: Vec<Dd>,
    ab: Vec<Dd>,
    av: Vec<Dd>,
    out_w: Vec<Dd>,
    out_b: Vec<Dd>,
}

fn lift(p: &ParamStore, id: usize) -> Vec<Dd> {
    p.value(id).data().iter().map(|&x| dd(x)).collect()
}

/// `x · W` for `W` stored row-major with `x.len()` rows.
fn vecmat(x: &[Dd], w: &[Dd]) -> Vec<Dd> {
    let cols = w.len() / x.len();
    let mut out = vec![dd(0.0); cols];
    for (i, &xi) in x.iter().enumerate() {
        for (o, &wij) in out.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
            *o += xi * wij;
        }
    }
    out
}

fn softmax(x: &[Dd]) -> Vec<Dd> {
    let m = x.iter().map(|v| v.hi()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<Dd> = x.iter().map(|&v| exp(v - m)).collect();
    let s: Dd = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn argmax(x: &[Dd]) -> usize {
    let mut best = 0;
    for i in 1..x.len() {
        if (x[i] - x[best]).hi() > 0.0 {
            best = i;
        }
    }
    best
}

fn lstm_step(w: &Lstm, x: &[Dd], h: &mut [Dd], c: &mut [Dd]) {
    let hd = h.len();
    let xg = vecmat(x, &w.wx);
    let hg = vecmat(h, &w.wh);
    for j in 0..hd {
        let z = |k: usize| xg[k * hd + j] + hg[k * hd + j] + w.b[k * hd + j];
        let (i, f, g, o) = (sigmoid(z(0)), sigmoid(z(1)), tanh(z(2)), sigmoid(z(3)));
        c[j] = f * c[j] + i * g;
        h[j] = o * tanh(c[j]);
    }
}

fn run_stack(layers: &[Lstm], x: Vec<Dd>, hs: &mut [Vec<Dd>], cs: &mut [Vec<Dd>]) -> Vec<Dd> {
    let mut x = x;
    for (l, w) in layers.iter().enumerate() {
        lstm_step(w, &x, &mut hs[l], &mut cs[l]);
        x = hs[l].clone();
    }
    x
}

fn sample_loss(lay: &Layout, w: &Weights, s: &Sample, coins: &[bool]) -> Dd {
    let (hd, na, hist, hours) = (lay.hidden, lay.n_actions, lay.history, lay.hours);
    let d_in = lay.enc_input();
    let zeros = |layers: usize| vec![vec![dd(0.0); hd]; layers];

    let mut states = Vec::with_capacity(hist * hours);
    let mut emb = Vec::with_capacity(hist);
    for d in 0..hist {
        let (mut hs, mut cs) = (zeros(w.enc.len()), zeros(w.enc.len()));
        let mut top = Vec::new();
        for t in 0..hours {
            let off = (d * hours + t) * d_in;
            let x = s.history[off..off + d_in].iter().map(|&v| dd(v)).collect();
            top = run_stack(&w.enc, x, &mut hs, &mut cs);
            states.push(top.clone());
        }
        let pe = positional_encoding(d, hd);
        emb.push(top.iter().zip(pe).map(|(&a, b)| a + b).collect::<Vec<Dd>>());
    }

    let dh = hd / lay.n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q: Vec<Vec<Dd>> = emb.iter().map(|x| vecmat(x, &w.day[0])).collect();
    let k: Vec<Vec<Dd>> = emb.iter().map(|x| vecmat(x, &w.day[1])).collect();
    let v: Vec<Vec<Dd>> = emb.iter().map(|x| vecmat(x, &w.day[2])).collect();
    let mut attended = Vec::with_capacity(hist);
    for i in 0..hist {
        let mut heads = vec![dd(0.0); hd];
        for h in 0..lay.n_heads {
            let r = h * dh..(h + 1) * dh;
            let scores: Vec<Dd> = (0..hist)
                .map(|j| q[i][r.clone()].iter().zip(&k[j][r.clone()]).map(|(&a, &b)| a * b).sum::<Dd>() * scale)
                .collect();
            for (j, p) in softmax(&scores).into_iter().enumerate() {
                for e in r.clone() {
                    heads[e] += p * v[j][e];
                }
            }
        }
        attended.push(vecmat(&heads, &w.day[3]));
    }

    let memory: Vec<Vec<Dd>> = states
        .iter()
        .enumerate()
        .map(|(m, st)| st.iter().zip(&attended[m / hours]).map(|(&a, &b)| a + b).collect())
        .collect();
    let keys: Vec<Vec<Dd>> = memory.iter().map(|m| vecmat(m, &w.wk)).collect();

    let (mut hs, mut cs) = (zeros(w.dec.len()), zeros(w.dec.len()));
    let mut total = dd(0.0);
    let mut prev = 0;
    for t in 0..hours {
        let qp = vecmat(&hs[w.dec.len() - 1], &w.wq);
        let scores: Vec<Dd> = keys
            .iter()
            .map(|key| (0..hd).map(|e| w.av[e] * tanh(key[e] + qp[e] + w.ab[e])).sum())
            .collect();
        let alpha = softmax(&scores);
        let mut ctx = vec![dd(0.0); hd];
        for (a, m) in alpha.iter().zip(&memory) {
            for (c, &x) in ctx.iter_mut().zip(m) {
                *c += *a * x;
            }
        }
        let mut x = vec![dd(0.0); na];
        if t == 0 {
            x.copy_from_slice(&w.start);
        } else {
            x[if coins[t] { s.target[t - 1] } else { prev }] = dd(1.0);
        }
        x.extend(s.env[t * ENV_FEATURES..(t + 1) * ENV_FEATURES].iter().map(|&v| dd(v)));
        x.extend(ctx);
        let top = run_stack(&w.dec, x, &mut hs, &mut cs);
        let logits: Vec<Dd> = vecmat(&top, &w.out_w).into_iter().zip(&w.out_b).map(|(a, &b)| a + b).collect();
        let m = logits.iter().map(|v| v.hi()).fold(f64::NEG_INFINITY, f64::max);
        let lse = ln(logits.iter().map(|&z| exp(z - m)).sum()) + m;
        total += lse - logits[s.target[t]];
        prev = argmax(&logits);
    }
    total
}

/// Mean cross-entropy over `samples` with the given teacher coins, evaluated
/// in double-double precision.
pub(crate) fn loss_dd(lay: &Layout, p: &ParamStore, samples: &[Sample], coins: &[Vec<bool>]) -> Dd {
    let layer = |ids: &[super::model::LayerIds]| -> Vec<Lstm> {
        ids.iter().map(|l| Lstm { wx: lift(p, l.wx), wh: lift(p, l.wh), b: lift(p, l.b) }).collect()
    };
    let w = Weights {
        enc: layer(&lay.enc),
        dec: layer(&lay.dec),
        day: lay.day.map(|id| lift(p, id)),
        start: lift(p, lay.start),
        wq: lift(p, lay.attn_wq),
        wk: lift(p, lay.attn_wk),
        ab: lift(p, lay.attn_b),
        av: lift(p, lay.attn_v),
        out_w: lift(p, lay.out_w),
        out_b: lift(p, lay.out_b),
    };
    let total: Dd = samples.iter().zip(coins).map(|(s, c)| sample_loss(lay, &w, s, c)).sum();
    total / (samples.len() * lay.hours) as f64
}
