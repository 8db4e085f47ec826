//! Forward and backward passes of the building blocks: two-layer tanh MLPs,
//! a GRU cell, and the diagonal-Gaussian head.

use alloc::vec;
use alloc::vec::Vec;

use super::params::{Layout, Tensor, WorldModelParams, LOGSTD_MAX, LOGSTD_MIN};
use crate::linalg::{gemv_acc, gemv_t_acc, outer_acc};
use crate::math;

#[derive(Debug, Clone, Copy)]
pub(crate) struct MlpTensors {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

pub(crate) const ENCODER: MlpTensors = MlpTensors {
    w1: Tensor::EncW1,
    b1: Tensor::EncB1,
    w2: Tensor::EncW2,
    b2: Tensor::EncB2,
};
pub(crate) const PRIOR: MlpTensors = MlpTensors {
    w1: Tensor::PriorW1,
    b1: Tensor::PriorB1,
    w2: Tensor::PriorW2,
    b2: Tensor::PriorB2,
};
pub(crate) const DECODER: MlpTensors = MlpTensors {
    w1: Tensor::DecW1,
    b1: Tensor::DecB1,
    w2: Tensor::DecW2,
    b2: Tensor::DecB2,
};

#[derive(Debug, Clone)]
pub(crate) struct MlpCache {
    pub x: Vec<f64>,
    pub hid: Vec<f64>,
    pub out: Vec<f64>,
}

pub(crate) fn mlp_forward(p: &WorldModelParams, m: MlpTensors, x: Vec<f64>) -> MlpCache {
    let d = &p.dims;
    let (h_rows, h_cols) = m.w1.shape(d);
    let (o_rows, _) = m.w2.shape(d);
    let mut hid = p.tensor(m.b1).to_vec();
    gemv_acc(p.tensor(m.w1), h_rows, h_cols, &x, &mut hid);
    for v in hid.iter_mut() {
        *v = math::tanh(*v);
    }
    let mut out = p.tensor(m.b2).to_vec();
    gemv_acc(p.tensor(m.w2), o_rows, h_rows, &hid, &mut out);
    MlpCache { x, hid, out }
}

/// Accumulate parameter gradients into `grads` and input gradients into `dx`.
pub(crate) fn mlp_backward(
    p: &WorldModelParams,
    grads: &mut [f64],
    m: MlpTensors,
    cache: &MlpCache,
    dout: &[f64],
    dx: &mut [f64],
) {
    let d = &p.dims;
    let layout: &Layout = p.layout();
    let (h_rows, h_cols) = m.w1.shape(d);
    let (o_rows, _) = m.w2.shape(d);
    outer_acc(&mut grads[layout.range(m.w2)], o_rows, h_rows, dout, &cache.hid);
    for (g, v) in grads[layout.range(m.b2)].iter_mut().zip(dout) {
        *g += v;
    }
    let mut dhid = vec![0.0; h_rows];
    gemv_t_acc(p.tensor(m.w2), o_rows, h_rows, dout, &mut dhid);
    for (dh, h) in dhid.iter_mut().zip(&cache.hid) {
        *dh *= 1.0 - h * h;
    }
    outer_acc(&mut grads[layout.range(m.w1)], h_rows, h_cols, &dhid, &cache.x);
    for (g, v) in grads[layout.range(m.b1)].iter_mut().zip(&dhid) {
        *g += v;
    }
    gemv_t_acc(p.tensor(m.w1), h_rows, h_cols, &dhid, dx);
}

#[derive(Debug, Clone)]
pub(crate) struct GruCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub n: Vec<f64>,
    /// `U_n h + b_hn`, the hidden contribution to the candidate before gating.
    pub gh_n: Vec<f64>,
    pub h: Vec<f64>,
}

/// `r = σ(..)`, `u = σ(..)`, `n = tanh(Wx_n x + b_xn + r ⊙ (U_n h + b_hn))`,
/// `h' = (1 - u) ⊙ n + u ⊙ h`.
pub(crate) fn gru_forward(p: &WorldModelParams, h_prev: &[f64], x: Vec<f64>) -> GruCache {
    let d = &p.dims;
    let nh = d.hidden;
    let nx = x.len();
    let mut gx = p.tensor(Tensor::GruBx).to_vec();
    gemv_acc(p.tensor(Tensor::GruWx), 3 * nh, nx, &x, &mut gx);
    let mut gh = p.tensor(Tensor::GruBh).to_vec();
    gemv_acc(p.tensor(Tensor::GruWh), 3 * nh, nh, h_prev, &mut gh);
    let mut r = vec![0.0; nh];
    let mut u = vec![0.0; nh];
    let mut n = vec![0.0; nh];
    let mut h = vec![0.0; nh];
    for i in 0..nh {
        r[i] = math::sigmoid(gx[i] + gh[i]);
        u[i] = math::sigmoid(gx[nh + i] + gh[nh + i]);
        n[i] = math::tanh(gx[2 * nh + i] + r[i] * gh[2 * nh + i]);
        h[i] = (1.0 - u[i]) * n[i] + u[i] * h_prev[i];
    }
    GruCache {
        x,
        h_prev: h_prev.to_vec(),
        r,
        u,
        n,
        gh_n: gh[2 * nh..].to_vec(),
        h,
    }
}

pub(crate) fn gru_backward(
    p: &WorldModelParams,
    grads: &mut [f64],
    c: &GruCache,
    dh: &[f64],
    dh_prev: &mut [f64],
    dx: &mut [f64],
) {
    let nh = p.dims.hidden;
    let nx = c.x.len();
    let layout = p.layout();
    let mut dgx = vec![0.0; 3 * nh];
    let mut dgh = vec![0.0; 3 * nh];
    for i in 0..nh {
        let dn = dh[i] * (1.0 - c.u[i]);
        let du = dh[i] * (c.h_prev[i] - c.n[i]);
        dh_prev[i] += dh[i] * c.u[i];
        let dn_pre = dn * (1.0 - c.n[i] * c.n[i]);
        let dr = dn_pre * c.gh_n[i];
        let du_pre = du * c.u[i] * (1.0 - c.u[i]);
        let dr_pre = dr * c.r[i] * (1.0 - c.r[i]);
        dgx[i] = dr_pre;
        dgx[nh + i] = du_pre;
        dgx[2 * nh + i] = dn_pre;
        dgh[i] = dr_pre;
        dgh[nh + i] = du_pre;
        dgh[2 * nh + i] = dn_pre * c.r[i];
    }
    outer_acc(&mut grads[layout.range(Tensor::GruWx)], 3 * nh, nx, &dgx, &c.x);
    for (g, v) in grads[layout.range(Tensor::GruBx)].iter_mut().zip(&dgx) {
        *g += v;
    }
    outer_acc(&mut grads[layout.range(Tensor::GruWh)], 3 * nh, nh, &dgh, &c.h_prev);
    for (g, v) in grads[layout.range(Tensor::GruBh)].iter_mut().zip(&dgh) {
        *g += v;
    }
    gemv_t_acc(p.tensor(Tensor::GruWx), 3 * nh, nx, &dgx, dx);
    gemv_t_acc(p.tensor(Tensor::GruWh), 3 * nh, nh, &dgh, dh_prev);
}

/// Smooth clamp of a raw head output into `[LOGSTD_MIN, LOGSTD_MAX]`.
#[inline]
pub(crate) fn squash_logstd(raw: f64) -> f64 {
    LOGSTD_MIN + (LOGSTD_MAX - LOGSTD_MIN) * math::sigmoid(raw)
}

#[inline]
pub(crate) fn squash_logstd_grad(raw: f64) -> f64 {
    let s = math::sigmoid(raw);
    (LOGSTD_MAX - LOGSTD_MIN) * s * (1.0 - s)
}

/// Split a head output `[mean, raw]` into mean and squashed log-std.
pub(crate) fn gaussian_head(out: &[f64], nz: usize) -> (Vec<f64>, Vec<f64>) {
    let mean = out[..nz].to_vec();
    let logstd = out[nz..2 * nz].iter().map(|&r| squash_logstd(r)).collect();
    (mean, logstd)
}

/// KL(q || p) between diagonal Gaussians given means and log-stds.
pub(crate) fn gaussian_kl(qm: &[f64], qls: &[f64], pm: &[f64], pls: &[f64]) -> f64 {
    let mut kl = 0.0;
    for i in 0..qm.len() {
        let qv = math::exp(2.0 * qls[i]);
        let pv = math::exp(2.0 * pls[i]);
        let dm = qm[i] - pm[i];
        kl += pls[i] - qls[i] + (qv + dm * dm) / (2.0 * pv) - 0.5;
    }
    kl
}
