//! Batched LSTM step.
//!
//! Gate columns are laid out `[input | forget | candidate | output]`, each
//! `hidden` wide. Pre-activations are `x·Wx + h·Wh + b` with `Wx: in x 4H`,
//! `Wh: H x 4H`, `b: 4H`. Input, forget and output gates use the logistic
//! sigmoid; the candidate uses tanh. `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.

use rand::Rng;

use super::gemm::gemm;
use super::{sigmoid, Tensor};
use crate::error::{Error, Result};

/// Initial forget-gate bias.
pub const FORGET_BIAS_INIT: f64 = 1.0;

/// Borrowed view of one LSTM layer's weights.
#[derive(Debug, Clone, Copy)]
pub struct LstmView<'a> {
    pub wx: &'a [f64],
    pub wh: &'a [f64],
    pub b: &'a [f64],
    pub input: usize,
    pub hidden: usize,
}

impl<'a> LstmView<'a> {
    pub fn new(wx: &'a [f64], wh: &'a [f64], b: &'a [f64], input: usize, hidden: usize) -> Result<Self> {
        let g = 4 * hidden;
        if wx.len() != input * g || wh.len() != hidden * g || b.len() != g {
            return Err(Error::shape(
                "lstm",
                format!(
                    "weights {}/{}/{} do not match input {input}, hidden {hidden}",
                    wx.len(),
                    wh.len(),
                    b.len()
                ),
            ));
        }
        Ok(LstmView { wx, wh, b, input, hidden })
    }
}

/// Intermediates kept for the backward pass of one step over `n` rows.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    pub n: usize,
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Activated gates, `n x 4H`.
    pub gates: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// One step for `n` independent rows. Returns `(h', c', cache)`.
pub fn lstm_step_forward(
    w: LstmView<'_>,
    x: &[f64],
    h: &[f64],
    c: &[f64],
    n: usize,
) -> (Vec<f64>, Vec<f64>, LstmStepCache) {
    let hd = w.hidden;
    let g4 = 4 * hd;
    assert_eq!(x.len(), n * w.input, "lstm: input rows");
    assert_eq!(h.len(), n * hd, "lstm: hidden rows");
    assert_eq!(c.len(), n * hd, "lstm: cell rows");
    let mut gates = Vec::with_capacity(n * g4);
    for _ in 0..n {
        gates.extend_from_slice(w.b);
    }
    gemm(n, w.input, g4, 1.0, x, false, w.wx, false, 1.0, &mut gates);
    gemm(n, hd, g4, 1.0, h, false, w.wh, false, 1.0, &mut gates);

    let mut c_new = vec![0.0; n * hd];
    let mut h_new = vec![0.0; n * hd];
    let mut tanh_c = vec![0.0; n * hd];
    for r in 0..n {
        let row = &mut gates[r * g4..(r + 1) * g4];
        for j in 0..hd {
            row[j] = sigmoid(row[j]);
            row[hd + j] = sigmoid(row[hd + j]);
            row[2 * hd + j] = row[2 * hd + j].tanh();
            row[3 * hd + j] = sigmoid(row[3 * hd + j]);
            let k = r * hd + j;
            let cn = row[hd + j] * c[k] + row[j] * row[2 * hd + j];
            let tc = cn.tanh();
            c_new[k] = cn;
            tanh_c[k] = tc;
            h_new[k] = row[3 * hd + j] * tc;
        }
    }
    let cache = LstmStepCache {
        n,
        x: x.to_vec(),
        h_prev: h.to_vec(),
        c_prev: c.to_vec(),
        gates,
        tanh_c,
    };
    (h_new, c_new, cache)
}

/// Backward of [`lstm_step_forward`]. Accumulates weight gradients into
/// `(gwx, gwh, gb)` and returns `(dx, dh_prev, dc_prev)`.
pub fn lstm_step_backward(
    w: LstmView<'_>,
    cache: &LstmStepCache,
    dh: &[f64],
    dc: &[f64],
    gwx: &mut [f64],
    gwh: &mut [f64],
    gb: &mut [f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hd = w.hidden;
    let g4 = 4 * hd;
    let n = cache.n;
    let mut dpre = vec![0.0; n * g4];
    let mut dc_prev = vec![0.0; n * hd];
    for r in 0..n {
        let gr = &cache.gates[r * g4..(r + 1) * g4];
        let dr = &mut dpre[r * g4..(r + 1) * g4];
        for j in 0..hd {
            let k = r * hd + j;
            let (i, f, g, o) = (gr[j], gr[hd + j], gr[2 * hd + j], gr[3 * hd + j]);
            let tc = cache.tanh_c[k];
            let d_o = dh[k] * tc;
            let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
            dr[j] = dct * g * i * (1.0 - i);
            dr[hd + j] = dct * cache.c_prev[k] * f * (1.0 - f);
            dr[2 * hd + j] = dct * i * (1.0 - g * g);
            dr[3 * hd + j] = d_o * o * (1.0 - o);
            dc_prev[k] = dct * f;
        }
    }
    gemm(w.input, n, g4, 1.0, &cache.x, true, &dpre, false, 1.0, gwx);
    gemm(hd, n, g4, 1.0, &cache.h_prev, true, &dpre, false, 1.0, gwh);
    for r in 0..n {
        for (b, d) in gb.iter_mut().zip(&dpre[r * g4..(r + 1) * g4]) {
            *b += d;
        }
    }
    let mut dx = vec![0.0; n * w.input];
    gemm(n, g4, w.input, 1.0, &dpre, false, w.wx, true, 0.0, &mut dx);
    let mut dh_prev = vec![0.0; n * hd];
    gemm(n, g4, hd, 1.0, &dpre, false, w.wh, true, 0.0, &mut dh_prev);
    (dx, dh_prev, dc_prev)
}

/// Owned single-layer cell with a tensor-level interface.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub wx: Tensor,
    pub wh: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellGrads {
    pub dx: Tensor,
    pub dh: Tensor,
    pub dc: Tensor,
    pub dwx: Tensor,
    pub dwh: Tensor,
    pub db: Tensor,
}

impl LstmCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmCell {
            wx: Tensor::zeros(&[input, 4 * hidden]),
            wh: Tensor::zeros(&[hidden, 4 * hidden]),
            b: Tensor::zeros(&[4 * hidden]),
        }
    }

    /// Uniform(-1/√H, 1/√H) weights with the forget bias set to 1.
    pub fn random(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut cell = Self::zeros(input, hidden);
        let s = 1.0 / (hidden as f64).sqrt();
        for t in [&mut cell.wx, &mut cell.wh] {
            t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-s..s));
        }
        cell.b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|x| *x = FORGET_BIAS_INIT);
        cell
    }

    pub fn input(&self) -> usize {
        self.wx.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.wh.shape()[0]
    }

    fn view(&self) -> Result<LstmView<'_>> {
        LstmView::new(self.wx.data(), self.wh.data(), self.b.data(), self.input(), self.hidden())
    }

    /// `x: [n, in]` (or `[in]`), `h, c: [n, H]` (or `[H]`).
    pub fn forward(&self, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor, LstmStepCache)> {
        let w = self.view()?;
        let n = x.len() / w.input.max(1);
        if x.len() != n * w.input || h.len() != n * w.hidden || c.len() != n * w.hidden {
            return Err(Error::shape(
                "recurrent_cell",
                format!("x {:?}, h {:?}, c {:?} vs input {} hidden {}", x.shape(), h.shape(), c.shape(), w.input, w.hidden),
            ));
        }
        let (hn, cn, cache) = lstm_step_forward(w, x.data(), h.data(), c.data(), n);
        Ok((Tensor::from_vec(h.shape(), hn)?, Tensor::from_vec(c.shape(), cn)?, cache))
    }

    pub fn backward(&self, cache: &LstmStepCache, dh: &Tensor, dc: &Tensor) -> Result<LstmCellGrads> {
        let w = self.view()?;
        if dh.len() != cache.n * w.hidden || dc.len() != cache.n * w.hidden {
            return Err(Error::shape("recurrent_cell_backward", "gradient rows do not match cache"));
        }
        let mut dwx = Tensor::zeros(self.wx.shape());
        let mut dwh = Tensor::zeros(self.wh.shape());
        let mut db = Tensor::zeros(self.b.shape());
        let (dx, dhp, dcp) =
            lstm_step_backward(w, cache, dh.data(), dc.data(), dwx.data_mut(), dwh.data_mut(), db.data_mut());
        let xshape = if cache.n == 1 { vec![w.input] } else { vec![cache.n, w.input] };
        Ok(LstmCellGrads {
            dx: Tensor::from_vec(&xshape, dx)?,
            dh: Tensor::from_vec(dh.shape(), dhp)?,
            dc: Tensor::from_vec(dc.shape(), dcp)?,
            dwx,
            dwh,
            db,
        })
    }
}
