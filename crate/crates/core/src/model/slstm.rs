//! Scalar LSTM: exponential input/forget gates, a normalizer state, and a
//! running max-stabilizer in log space so the exponentials never overflow.
//!
//! The stabilizer drops out of the hidden state algebraically
//! (`c` and `n` carry the same `e^{-m}` factor), so the backward pass
//! treats `m` as a constant.

use super::params::SlstmLayerParams;
use super::ModelError;
use ndarray::{Array1, Array2};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct StepCache {
    x: Array1<f64>,
    h_prev: Array1<f64>,
    c_prev: Array1<f64>,
    n_prev: Array1<f64>,
    z: Array1<f64>,
    o: Array1<f64>,
    i_exp: Array1<f64>,
    f_exp: Array1<f64>,
    c: Array1<f64>,
    n: Array1<f64>,
}

pub(crate) struct SlstmLayerCache {
    steps: Vec<StepCache>,
}

pub(crate) struct SlstmCache {
    layers: Vec<SlstmLayerCache>,
}

/// Runs the stacked recurrence over a (features × time) input; returns the
/// top layer's hidden sequence (hidden × time), its final hidden state, and
/// the backward cache.
pub(crate) fn slstm_fwd(
    layers: &[SlstmLayerParams],
    x: &Array2<f64>,
) -> Result<(Array2<f64>, Array1<f64>, SlstmCache), ModelError> {
    let t_len = x.ncols();
    let mut layer_caches = Vec::with_capacity(layers.len());
    let mut hidden_seqs = Vec::with_capacity(layers.len());
    let mut input = x.clone();
    for (li, p) in layers.iter().enumerate() {
        let hidden = p.r.ncols();
        let mut steps = Vec::with_capacity(t_len);
        let mut h: Array1<f64> = Array1::zeros(hidden);
        let mut c: Array1<f64> = Array1::zeros(hidden);
        let mut n: Array1<f64> = Array1::zeros(hidden);
        let mut m: Array1<f64> = Array1::zeros(hidden);
        let mut h_seq = Array2::zeros((hidden, t_len));
        for t in 0..t_len {
            let x_t = input.column(t).to_owned();
            let mut gates = p.w.dot(&x_t);
            gates += &p.r.dot(&h);
            gates += &p.b;
            let mut z = Array1::zeros(hidden);
            let mut o = Array1::zeros(hidden);
            let mut i_exp = Array1::zeros(hidden);
            let mut f_exp = Array1::zeros(hidden);
            let mut c_new = Array1::zeros(hidden);
            let mut n_new = Array1::zeros(hidden);
            let mut h_new = Array1::zeros(hidden);
            for j in 0..hidden {
                let z_pre = gates[j];
                let i_pre = gates[hidden + j];
                let f_pre = gates[2 * hidden + j];
                let o_pre = gates[3 * hidden + j];
                let m_new = (f_pre + m[j]).max(i_pre);
                let ie = (i_pre - m_new).exp();
                let fe = (f_pre + m[j] - m_new).exp();
                let zt = z_pre.tanh();
                let ot = sigmoid(o_pre);
                let ct = fe * c[j] + ie * zt;
                let nt = fe * n[j] + ie;
                let ht = ot * ct / nt;
                if !ht.is_finite() {
                    return Err(ModelError::Numeric {
                        location: format!("slstm layer {li} step {t}"),
                        message: "non-finite hidden state".into(),
                    });
                }
                z[j] = zt;
                o[j] = ot;
                i_exp[j] = ie;
                f_exp[j] = fe;
                c_new[j] = ct;
                n_new[j] = nt;
                h_new[j] = ht;
                m[j] = m_new;
            }
            steps.push(StepCache {
                x: x_t,
                h_prev: h.clone(),
                c_prev: c.clone(),
                n_prev: n.clone(),
                z,
                o,
                i_exp,
                f_exp,
                c: c_new.clone(),
                n: n_new.clone(),
            });
            h = h_new;
            c = c_new;
            n = n_new;
            for j in 0..hidden {
                h_seq[[j, t]] = h[j];
            }
        }
        layer_caches.push(SlstmLayerCache { steps });
        hidden_seqs.push(h_seq.clone());
        input = h_seq;
    }
    let top = hidden_seqs.pop().unwrap();
    let h_last = top.column(t_len - 1).to_owned();
    Ok((
        top,
        h_last,
        SlstmCache {
            layers: layer_caches,
        },
    ))
}

/// Backward through the stack. `d_hseq` is the gradient w.r.t. the top
/// layer's full hidden sequence (may be zero), `d_hlast` the extra gradient
/// on its final state. Fills `grads` and returns the input gradient.
pub(crate) fn slstm_bwd(
    layers: &[SlstmLayerParams],
    grads: &mut [SlstmLayerParams],
    cache: &SlstmCache,
    d_hseq: &Array2<f64>,
    d_hlast: &Array1<f64>,
) -> Array2<f64> {
    let t_len = d_hseq.ncols();
    let mut d_seq = d_hseq.clone();
    for j in 0..d_hlast.len() {
        d_seq[[j, t_len - 1]] += d_hlast[j];
    }
    for li in (0..layers.len()).rev() {
        let p = &layers[li];
        let g = &mut grads[li];
        let lc = &cache.layers[li];
        let hidden = p.r.ncols();
        let in_dim = p.w.ncols();
        let mut d_input = Array2::zeros((in_dim, t_len));
        let mut d_h_carry = Array1::zeros(hidden);
        let mut d_c_carry: Array1<f64> = Array1::zeros(hidden);
        let mut d_n_carry: Array1<f64> = Array1::zeros(hidden);
        for t in (0..t_len).rev() {
            let s = &lc.steps[t];
            let mut d_gates = Array1::zeros(4 * hidden);
            for j in 0..hidden {
                let dh = d_seq[[j, t]] + d_h_carry[j];
                let (c, n, o) = (s.c[j], s.n[j], s.o[j]);
                let d_o = dh * c / n;
                let d_c = d_c_carry[j] + dh * o / n;
                let d_n = d_n_carry[j] - dh * o * c / (n * n);
                let d_fe = d_c * s.c_prev[j] + d_n * s.n_prev[j];
                let d_ie = d_c * s.z[j] + d_n;
                let d_z = d_c * s.i_exp[j];
                d_c_carry[j] = d_c * s.f_exp[j];
                d_n_carry[j] = d_n * s.f_exp[j];
                d_gates[j] = d_z * (1.0 - s.z[j] * s.z[j]);
                d_gates[hidden + j] = d_ie * s.i_exp[j];
                d_gates[2 * hidden + j] = d_fe * s.f_exp[j];
                d_gates[3 * hidden + j] = d_o * o * (1.0 - o);
            }
            for (row, &dg) in d_gates.iter().enumerate() {
                g.b[row] += dg;
                for (col, &xv) in s.x.iter().enumerate() {
                    g.w[[row, col]] += dg * xv;
                }
                for (col, &hv) in s.h_prev.iter().enumerate() {
                    g.r[[row, col]] += dg * hv;
                }
            }
            d_h_carry = p.r.t().dot(&d_gates);
            let d_x = p.w.t().dot(&d_gates);
            for j in 0..in_dim {
                d_input[[j, t]] += d_x[j];
            }
        }
        if li > 0 {
            d_seq = d_input;
        } else {
            return d_input;
        }
    }
    unreachable!("loop returns at layer 0")
}
