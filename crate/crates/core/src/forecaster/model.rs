//! Parameter layout plus the batched forward and backward passes.
//!
//! A chunk of `B` samples runs together: the encoder sees `B·H` day rows per
//! step, the decoder sees `B` rows per step. Row `b·H + d` of the encoder is
//! history day `d` of sample `b`.

use rand::Rng;

use super::{ForecasterConfig, Sample};
use crate::domain::ENV_FEATURES;
use crate::error::Result;
use crate::numkit::{
    attend_projected, attend_projected_backward, gemm, lstm_step_backward, lstm_step_forward, mhsa_backward,
    mhsa_forward, log_softmax, softmax, AttendCache, AttendGrads, LstmStepCache, LstmView, MhsaCache, MhsaView, ParamStore,
    Tensor, FORGET_BIAS_INIT,
};
use crate::rng::{stream, Purpose};

/// Parameter ids of one recurrent layer: `(wx, wh, b)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerIds {
    pub wx: usize,
    pub wh: usize,
    pub b: usize,
    pub input: usize,
}

/// Resolved parameter ids for a config.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub hidden: usize,
    pub n_actions: usize,
    pub n_heads: usize,
    pub history: usize,
    pub hours: usize,
    pub(crate) enc: Vec<LayerIds>,
    pub(crate) day: [usize; 4],
    pub(crate) start: usize,
    pub(crate) dec: Vec<LayerIds>,
    pub(crate) attn_wq: usize,
    pub(crate) attn_wk: usize,
    pub(crate) attn_b: usize,
    pub(crate) attn_v: usize,
    pub(crate) out_w: usize,
    pub(crate) out_b: usize,
}

fn uniform(shape: &[usize], scale: f64, rng: &mut impl Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-scale..scale)).collect()).expect("shape")
}

impl Layout {
    pub fn enc_input(&self) -> usize {
        self.n_actions + ENV_FEATURES
    }

    pub fn dec_input(&self) -> usize {
        self.n_actions + ENV_FEATURES + self.hidden
    }

    /// Builds freshly initialized parameters. Every tensor draws from its own
    /// substream so that adding a tensor does not reshuffle the others.
    pub fn init(cfg: &ForecasterConfig) -> Result<(Layout, ParamStore)> {
        cfg.validate()?;
        let hd = cfg.hidden_dim;
        let na = cfg.n_actions;
        let s = 1.0 / (hd as f64).sqrt();
        let mut p = ParamStore::new();
        let mut k = 0u64;
        let mut add = |p: &mut ParamStore, name: String, shape: &[usize], scale: f64| -> Result<usize> {
            let mut rng = stream(cfg.seed, Purpose::Init, k, 0);
            k += 1;
            let t = if scale == 0.0 { Tensor::zeros(shape) } else { uniform(shape, scale, &mut rng) };
            p.insert(name, t)
        };
        let layer = |p: &mut ParamStore,
                         add: &mut dyn FnMut(&mut ParamStore, String, &[usize], f64) -> Result<usize>,
                         prefix: &str,
                         l: usize,
                         input: usize|
         -> Result<LayerIds> {
            let wx = add(p, format!("{prefix}.l{l}.wx"), &[input, 4 * hd], s)?;
            let wh = add(p, format!("{prefix}.l{l}.wh"), &[hd, 4 * hd], s)?;
            let b = add(p, format!("{prefix}.l{l}.b"), &[4 * hd], 0.0)?;
            p.value_mut(b).data_mut()[hd..2 * hd].iter_mut().for_each(|x| *x = FORGET_BIAS_INIT);
            Ok(LayerIds { wx, wh, b, input })
        };
        let mut enc = Vec::new();
        for l in 0..cfg.encoder_layers {
            let input = if l == 0 { na + ENV_FEATURES } else { hd };
            enc.push(layer(&mut p, &mut add, "enc", l, input)?);
        }
        let day = [
            add(&mut p, "day_attn.wq".into(), &[hd, hd], s)?,
            add(&mut p, "day_attn.wk".into(), &[hd, hd], s)?,
            add(&mut p, "day_attn.wv".into(), &[hd, hd], s)?,
            add(&mut p, "day_attn.wo".into(), &[hd, hd], s)?,
        ];
        let start = add(&mut p, "dec.start".into(), &[na], 0.1)?;
        let mut dec = Vec::new();
        for l in 0..cfg.encoder_layers {
            let input = if l == 0 { na + ENV_FEATURES + hd } else { hd };
            dec.push(layer(&mut p, &mut add, "dec", l, input)?);
        }
        let attn_wq = add(&mut p, "attn.wq".into(), &[hd, hd], s)?;
        let attn_wk = add(&mut p, "attn.wk".into(), &[hd, hd], s)?;
        let attn_b = add(&mut p, "attn.b".into(), &[hd], 1.0)?;
        let attn_v = add(&mut p, "attn.v".into(), &[hd], s)?;
        let out_w = add(&mut p, "out.w".into(), &[hd, na], s)?;
        let out_b = add(&mut p, "out.b".into(), &[na], 0.0)?;
        let layout = Layout {
            hidden: hd,
            n_actions: na,
            n_heads: cfg.n_heads,
            history: cfg.history_days,
            hours: cfg.hours_per_day,
            enc,
            day,
            start,
            dec,
            attn_wq,
            attn_wk,
            attn_b,
            attn_v,
            out_w,
            out_b,
        };
        Ok((layout, p))
    }

    fn lstm<'a>(&self, p: &'a ParamStore, ids: LayerIds) -> LstmView<'a> {
        LstmView::new(p.value(ids.wx).data(), p.value(ids.wh).data(), p.value(ids.b).data(), ids.input, self.hidden)
            .expect("layout shapes")
    }

    fn mhsa<'a>(&self, p: &'a ParamStore) -> MhsaView<'a> {
        MhsaView {
            wq: p.value(self.day[0]).data(),
            wk: p.value(self.day[1]).data(),
            wv: p.value(self.day[2]).data(),
            wo: p.value(self.day[3]).data(),
            dim: self.hidden,
            n_heads: self.n_heads,
        }
    }
}

/// Sinusoidal encoding for slot `pos`: `sin` on even, `cos` on odd columns.
pub fn positional_encoding(pos: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| {
            let i = (j / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * i / dim as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// How each decoder step picks the action fed to the next step.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Feed<'a> {
    /// Ground truth where `coins[b][t]` is true, the model's argmax otherwise.
    Teacher { coins: &'a [Vec<bool>] },
    Greedy,
    /// Truncated ancestral sampling with one uniform per sample and hour.
    Draw { uniforms: &'a [Vec<f64>], min_prob: f64 },
}

/// Inverse-CDF draw over the classes with `p >= min_prob` (the argmax always
/// qualifies), renormalized.
pub(crate) fn truncated_draw(p: &[f64], u: f64, min_prob: f64) -> usize {
    let top = argmax(p);
    let keep = |i: usize| i == top || p[i] >= min_prob;
    let mass: f64 = (0..p.len()).filter(|&i| keep(i)).map(|i| p[i]).sum();
    let mut acc = 0.0;
    let mut last = top;
    for (i, &x) in p.iter().enumerate() {
        if !keep(i) {
            continue;
        }
        acc += x / mass;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

pub(crate) struct EncoderOut {
    /// `[t][layer]` caches over `B·H` rows.
    pub caches: Vec<Vec<LstmStepCache>>,
    /// Top-layer hidden states per step, `B·H x hidden`.
    pub top: Vec<Vec<f64>>,
}

pub(crate) struct DaysOut {
    pub mhsa: Vec<MhsaCache>,
    /// Self-attention outputs per sample, `H x hidden`.
    pub attended: Vec<Vec<f64>>,
    /// Decoder memory per sample, `H·T x hidden`.
    pub memory: Vec<Vec<f64>>,
    /// Projected keys per sample, `H·T x hidden`.
    pub keys: Vec<Vec<f64>>,
}

pub(crate) struct DecoderOut {
    pub caches: Vec<Vec<LstmStepCache>>,
    /// Top hidden state entering each step (the attention query).
    pub queries: Vec<Vec<f64>>,
    pub attend: Vec<Vec<AttendCache>>,
    /// Softmax outputs, `[t]` of `B x A`.
    pub probs: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    /// Action fed into each step (`None` = start token), `[b][t]`.
    pub fed: Vec<Vec<Option<usize>>>,
    /// Action emitted at each hour, `[b][t]`.
    pub emitted: Vec<Vec<usize>>,
}

pub(crate) fn encoder_forward(lay: &Layout, p: &ParamStore, samples: &[&Sample]) -> EncoderOut {
    let (hd, h, t_len, d_in) = (lay.hidden, lay.history, lay.hours, lay.enc_input());
    let n = samples.len() * h;
    let mut hs = vec![vec![0.0; n * hd]; lay.enc.len()];
    let mut cs = hs.clone();
    let mut caches = Vec::with_capacity(t_len);
    let mut top = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut x = Vec::with_capacity(n * d_in);
        for s in samples {
            for d in 0..h {
                let off = (d * t_len + t) * d_in;
                x.extend_from_slice(&s.history[off..off + d_in]);
            }
        }
        let mut step = Vec::with_capacity(lay.enc.len());
        for (l, ids) in lay.enc.iter().enumerate() {
            let (hn, cn, cache) = lstm_step_forward(lay.lstm(p, *ids), &x, &hs[l], &cs[l], n);
            x = hn.clone();
            hs[l] = hn;
            cs[l] = cn;
            step.push(cache);
        }
        caches.push(step);
        top.push(x);
    }
    EncoderOut { caches, top }
}

pub(crate) fn days_forward(lay: &Layout, p: &ParamStore, enc: &EncoderOut, n_samples: usize) -> DaysOut {
    let (hd, h, t_len) = (lay.hidden, lay.history, lay.hours);
    let last = &enc.top[t_len - 1];
    let pe: Vec<Vec<f64>> = (0..h).map(|d| positional_encoding(d, hd)).collect();
    let mut out = DaysOut { mhsa: vec![], attended: vec![], memory: vec![], keys: vec![] };
    for b in 0..n_samples {
        let mut x = last[b * h * hd..(b + 1) * h * hd].to_vec();
        for d in 0..h {
            for (xv, pv) in x[d * hd..(d + 1) * hd].iter_mut().zip(&pe[d]) {
                *xv += pv;
            }
        }
        let (att, cache) = mhsa_forward(lay.mhsa(p), &x, h);
        let mut mem = vec![0.0; h * t_len * hd];
        for d in 0..h {
            for t in 0..t_len {
                let src = &enc.top[t][(b * h + d) * hd..(b * h + d + 1) * hd];
                let dst = &mut mem[(d * t_len + t) * hd..(d * t_len + t + 1) * hd];
                for ((m, s), a) in dst.iter_mut().zip(src).zip(&att[d * hd..(d + 1) * hd]) {
                    *m = s + a;
                }
            }
        }
        let mut keys = vec![0.0; h * t_len * hd];
        gemm(h * t_len, hd, hd, 1.0, &mem, false, p.value(lay.attn_wk).data(), false, 0.0, &mut keys);
        out.mhsa.push(cache);
        out.attended.push(att);
        out.memory.push(mem);
        out.keys.push(keys);
    }
    out
}

/// Runs the decoder over `memory`/`keys` for every sample in the chunk.
/// `env[b]` is `T x 8`; `targets[b]` is required by [`Feed::Teacher`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn decoder_forward(
    lay: &Layout,
    p: &ParamStore,
    memory: &[Vec<f64>],
    keys: &[Vec<f64>],
    env: &[&[f64]],
    targets: &[&[usize]],
    feed: Feed<'_>,
) -> DecoderOut {
    let (hd, na, t_len, d_in) = (lay.hidden, lay.n_actions, lay.hours, lay.dec_input());
    let n = memory.len();
    let mut hs = vec![vec![0.0; n * hd]; lay.dec.len()];
    let mut cs = hs.clone();
    let start = p.value(lay.start).data();
    let (ab, av) = (p.value(lay.attn_b).data(), p.value(lay.attn_v).data());
    let mut out = DecoderOut {
        caches: Vec::with_capacity(t_len),
        queries: Vec::with_capacity(t_len),
        attend: Vec::with_capacity(t_len),
        probs: Vec::with_capacity(t_len),
        logits: Vec::with_capacity(t_len),
        fed: vec![Vec::with_capacity(t_len); n],
        emitted: vec![Vec::with_capacity(t_len); n],
    };
    for t in 0..t_len {
        let query = hs[lay.dec.len() - 1].clone();
        let mut qp = vec![0.0; n * hd];
        gemm(n, hd, hd, 1.0, &query, false, p.value(lay.attn_wq).data(), false, 0.0, &mut qp);
        let mut x = vec![0.0; n * d_in];
        let mut step_attend = Vec::with_capacity(n);
        for b in 0..n {
            let row = &mut x[b * d_in..(b + 1) * d_in];
            let fed = if t == 0 {
                row[..na].copy_from_slice(start);
                None
            } else {
                let a = match feed {
                    Feed::Teacher { coins } if coins[b][t] => targets[b][t - 1],
                    _ => out.emitted[b][t - 1],
                };
                row[a] = 1.0;
                Some(a)
            };
            out.fed[b].push(fed);
            row[na..na + ENV_FEATURES].copy_from_slice(&env[b][t * ENV_FEATURES..(t + 1) * ENV_FEATURES]);
            let (ctx, cache) = attend_projected(&qp[b * hd..(b + 1) * hd], &keys[b], ab, av, &memory[b], hd);
            row[na + ENV_FEATURES..].copy_from_slice(&ctx);
            step_attend.push(cache);
        }
        let mut step = Vec::with_capacity(lay.dec.len());
        for (l, ids) in lay.dec.iter().enumerate() {
            let (hn, cn, cache) = lstm_step_forward(lay.lstm(p, *ids), &x, &hs[l], &cs[l], n);
            x = hn.clone();
            hs[l] = hn;
            cs[l] = cn;
            step.push(cache);
        }
        let mut logits = Vec::with_capacity(n * na);
        for _ in 0..n {
            logits.extend_from_slice(p.value(lay.out_b).data());
        }
        gemm(n, hd, na, 1.0, &x, false, p.value(lay.out_w).data(), false, 1.0, &mut logits);
        let mut probs = Vec::with_capacity(n * na);
        for b in 0..n {
            let pr = softmax(&logits[b * na..(b + 1) * na]);
            let a = match feed {
                Feed::Draw { uniforms, min_prob } => truncated_draw(&pr, uniforms[b][t], min_prob),
                _ => argmax(&pr),
            };
            out.emitted[b].push(a);
            probs.extend(pr);
        }
        out.caches.push(step);
        out.queries.push(query);
        out.attend.push(step_attend);
        out.probs.push(probs);
        out.logits.push(logits);
    }
    out
}

/// Forward pass of a whole chunk.
pub(crate) struct ChunkForward {
    pub enc: EncoderOut,
    pub days: DaysOut,
    pub dec: DecoderOut,
}

pub(crate) fn chunk_forward(lay: &Layout, p: &ParamStore, samples: &[&Sample], feed: Feed<'_>) -> ChunkForward {
    let enc = encoder_forward(lay, p, samples);
    let days = days_forward(lay, p, &enc, samples.len());
    let env: Vec<&[f64]> = samples.iter().map(|s| s.env.as_slice()).collect();
    let targets: Vec<&[usize]> = samples.iter().map(|s| s.target.as_slice()).collect();
    let dec = decoder_forward(lay, p, &days.memory, &days.keys, &env, &targets, feed);
    ChunkForward { enc, days, dec }
}

/// Cross-entropy of every (sample, hour) against its target, sample-major.
pub(crate) fn chunk_losses(lay: &Layout, fwd: &ChunkForward, samples: &[&Sample]) -> Vec<f64> {
    let na = lay.n_actions;
    let mut out = Vec::with_capacity(samples.len() * lay.hours);
    for (b, s) in samples.iter().enumerate() {
        for (t, &y) in s.target.iter().enumerate() {
            out.push(-log_softmax(&fwd.dec.logits[t][b * na..(b + 1) * na])[y]);
        }
    }
    out
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradient of `scale · Σ CE` for the chunk, one buffer per parameter.
pub(crate) fn chunk_backward(
    lay: &Layout,
    p: &ParamStore,
    fwd: &ChunkForward,
    samples: &[&Sample],
    scale: f64,
) -> Vec<Vec<f64>> {
    let (hd, na, h, t_len) = (lay.hidden, lay.n_actions, lay.history, lay.hours);
    let n = samples.len();
    let ht = h * t_len;
    let top = lay.dec.len() - 1;
    let mut g = p.zero_buffers();

    // Decoder, newest step first.
    let mut dh = vec![vec![0.0; n * hd]; lay.dec.len()];
    let mut dc = dh.clone();
    let mut ag: Vec<AttendGrads> = (0..n)
        .map(|_| AttendGrads {
            dq_proj: vec![0.0; hd],
            dk_proj: vec![0.0; ht * hd],
            dvalues: vec![0.0; ht * hd],
            db: vec![0.0; hd],
            dv: vec![0.0; hd],
        })
        .collect();
    let av = p.value(lay.attn_v).data();
    for t in (0..t_len).rev() {
        let mut dlogits = fwd.dec.probs[t].clone();
        for (b, s) in samples.iter().enumerate() {
            dlogits[b * na + s.target[t]] -= 1.0;
        }
        dlogits.iter_mut().for_each(|x| *x *= scale);
        let h_top = top_hidden(fwd, t, lay);
        gemm(hd, n, na, 1.0, &h_top, true, &dlogits, false, 1.0, &mut g[lay.out_w]);
        for b in 0..n {
            add_into(&mut g[lay.out_b], &dlogits[b * na..(b + 1) * na]);
        }
        gemm(n, na, hd, 1.0, &dlogits, false, p.value(lay.out_w).data(), true, 1.0, &mut dh[top]);

        let mut dx = Vec::new();
        for l in (0..lay.dec.len()).rev() {
            let ids = lay.dec[l];
            let (gwx, rest) = split3(&mut g, ids);
            let (dxl, dhp, dcp) =
                lstm_step_backward(lay.lstm(p, ids), &fwd.dec.caches[t][l], &dh[l], &dc[l], gwx, rest.0, rest.1);
            dh[l] = dhp;
            dc[l] = dcp;
            if l > 0 {
                add_into(&mut dh[l - 1], &dxl);
            } else {
                dx = dxl;
            }
        }
        let d_in = lay.dec_input();
        let mut dqp = vec![0.0; n * hd];
        for b in 0..n {
            let row = &dx[b * d_in..(b + 1) * d_in];
            if t == 0 {
                add_into(&mut g[lay.start], &row[..na]);
            }
            let gb = &mut ag[b];
            gb.dq_proj.iter_mut().for_each(|x| *x = 0.0);
            attend_projected_backward(
                &fwd.dec.attend[t][b],
                av,
                &fwd.days.memory[b],
                hd,
                &row[na + ENV_FEATURES..],
                gb,
            );
            dqp[b * hd..(b + 1) * hd].copy_from_slice(&gb.dq_proj);
        }
        if t > 0 {
            gemm(hd, n, hd, 1.0, &fwd.dec.queries[t], true, &dqp, false, 1.0, &mut g[lay.attn_wq]);
            gemm(n, hd, hd, 1.0, &dqp, false, p.value(lay.attn_wq).data(), true, 1.0, &mut dh[top]);
        }
    }

    // Keys, memory residual and day-level self-attention.
    let mut d_top: Vec<Vec<f64>> = vec![vec![0.0; n * h * hd]; t_len];
    let wk = p.value(lay.attn_wk).data();
    for b in 0..n {
        let gb = &ag[b];
        add_into(&mut g[lay.attn_b], &gb.db);
        add_into(&mut g[lay.attn_v], &gb.dv);
        gemm(hd, ht, hd, 1.0, &fwd.days.memory[b], true, &gb.dk_proj, false, 1.0, &mut g[lay.attn_wk]);
        let mut dmem = gb.dvalues.clone();
        gemm(ht, hd, hd, 1.0, &gb.dk_proj, false, wk, true, 1.0, &mut dmem);
        let mut datt = vec![0.0; h * hd];
        for d in 0..h {
            for t in 0..t_len {
                let src = &dmem[(d * t_len + t) * hd..(d * t_len + t + 1) * hd];
                add_into(&mut d_top[t][(b * h + d) * hd..(b * h + d + 1) * hd], src);
                add_into(&mut datt[d * hd..(d + 1) * hd], src);
            }
        }
        let [iq, ik, iv, io] = lay.day;
        let (mut gq, mut gk, mut gv, mut go) =
            (std::mem::take(&mut g[iq]), std::mem::take(&mut g[ik]), std::mem::take(&mut g[iv]), std::mem::take(&mut g[io]));
        let dx = mhsa_backward(lay.mhsa(p), &fwd.days.mhsa[b], &datt, &mut gq, &mut gk, &mut gv, &mut go);
        g[iq] = gq;
        g[ik] = gk;
        g[iv] = gv;
        g[io] = go;
        add_into(&mut d_top[t_len - 1][b * h * hd..(b + 1) * h * hd], &dx);
    }

    // Encoder.
    let rows = n * h;
    let mut dh = vec![vec![0.0; rows * hd]; lay.enc.len()];
    let mut dc = dh.clone();
    let etop = lay.enc.len() - 1;
    for t in (0..t_len).rev() {
        add_into(&mut dh[etop], &d_top[t]);
        for l in (0..lay.enc.len()).rev() {
            let ids = lay.enc[l];
            let (gwx, rest) = split3(&mut g, ids);
            let (dxl, dhp, dcp) =
                lstm_step_backward(lay.lstm(p, ids), &fwd.enc.caches[t][l], &dh[l], &dc[l], gwx, rest.0, rest.1);
            dh[l] = dhp;
            dc[l] = dcp;
            if l > 0 {
                add_into(&mut dh[l - 1], &dxl);
            }
        }
    }
    g
}

fn top_hidden(fwd: &ChunkForward, t: usize, lay: &Layout) -> Vec<f64> {
    // The next step's query is this step's top hidden state; the last step
    // has no successor, so recompute it from its cache.
    if t + 1 < fwd.dec.queries.len() {
        fwd.dec.queries[t + 1].clone()
    } else {
        let c = &fwd.dec.caches[t][lay.dec.len() - 1];
        let hd = lay.hidden;
        let g4 = 4 * hd;
        let mut out = vec![0.0; c.n * hd];
        for r in 0..c.n {
            for j in 0..hd {
                out[r * hd + j] = c.gates[r * g4 + 3 * hd + j] * c.tanh_c[r * hd + j];
            }
        }
        out
    }
}

/// Disjoint mutable borrows of one layer's three gradient buffers.
fn split3(g: &mut [Vec<f64>], ids: LayerIds) -> (&mut [f64], (&mut [f64], &mut [f64])) {
    debug_assert!(ids.wx + 1 == ids.wh && ids.wh + 1 == ids.b);
    let (a, rest) = g[ids.wx..=ids.b].split_at_mut(1);
    let (b, c) = rest.split_at_mut(1);
    (&mut a[0], (&mut b[0], &mut c[0]))
}
